#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "daml/policy.hpp"
#include "daml/tensor.hpp"

namespace testutil {

inline daml::Tensor random_tensor(daml::Shape shape, std::mt19937_64& rng, double lo = -1.0,
                                  double hi = 1.0, bool requires_grad = false) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(daml::shape_numel(shape));
  for (auto& x : v) x = u(rng);
  return daml::Tensor::from_data(std::move(shape), std::move(v), requires_grad);
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

// 8x8 images, one conv layer of 4 channels, two small FC layers.
inline daml::policy::PolicyConfig tiny_policy() {
  daml::policy::PolicyConfig c;
  c.image_size = 8;
  c.conv_filters = {4};
  c.conv_strides = {1};
  c.conv_kernel = 3;
  c.fc_layers = 2;
  c.fc_width = 8;
  c.num_modes = 2;
  c.bias_transform_dim = 2;
  return c;
}

}  // namespace testutil
