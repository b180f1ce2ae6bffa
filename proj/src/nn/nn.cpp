#include "daml/nn.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <mutex>
#include <numbers>

namespace daml::nn {

namespace {

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

// [N x H x W x C] -> [N*C x H*W]
IndexMap channel_rows_index(std::int64_t n, std::int64_t hw, std::int64_t c) {
  static std::mutex mu;
  static std::map<std::tuple<std::int64_t, std::int64_t, std::int64_t>, IndexMap> cache;
  std::lock_guard lock(mu);
  auto key = std::make_tuple(n, hw, c);
  if (auto it = cache.find(key); it != cache.end()) return it->second;
  std::vector<std::int32_t> idx(static_cast<std::size_t>(n * hw * c));
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (std::int64_t p = 0; p < hw; ++p)
        idx[(b * c + ch) * hw + p] = static_cast<std::int32_t>((b * hw + p) * c + ch);
  auto map = std::make_shared<const std::vector<std::int32_t>>(std::move(idx));
  cache.emplace(key, map);
  return map;
}

double axis_coord(std::int64_t i, std::int64_t size) {
  return size == 1 ? 0.0 : -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(size - 1);
}

// Repeats each row's A-vector M times: [N x A] -> [N x M*A].
Tensor tile_actions(const Tensor& actions, std::int64_t modes) {
  const auto n = actions.dim(0), a = actions.dim(1);
  std::vector<std::int32_t> idx(static_cast<std::size_t>(n * modes * a));
  for (std::int64_t r = 0; r < n; ++r)
    for (std::int64_t m = 0; m < modes; ++m)
      for (std::int64_t k = 0; k < a; ++k)
        idx[(r * modes + m) * a + k] = static_cast<std::int32_t>(r * a + k);
  return gather(actions, std::make_shared<const std::vector<std::int32_t>>(std::move(idx)),
                {n, modes * a});
}

}  // namespace

MdnParams MdnParams::row(std::int64_t n) const {
  return {slice_rows(logits, n, 1), slice_rows(means, n, 1), slice_rows(log_sigmas, n, 1),
          action_dim};
}

MdnParams split_mdn_head(const Tensor& raw, std::int64_t num_modes, std::int64_t action_dim) {
  if (raw.ndim() != 2 || raw.dim(1) != num_modes * (action_dim + 2)) {
    throw std::invalid_argument("split_mdn_head: head width " + shape_str(raw.shape()) +
                                " does not match modes/action_dim");
  }
  return {slice_cols(raw, 0, num_modes), slice_cols(raw, num_modes, num_modes * action_dim),
          slice_cols(raw, num_modes * (action_dim + 1), num_modes), action_dim};
}

Tensor spatial_soft_argmax(const Tensor& activations) {
  if (activations.ndim() != 4) {
    throw std::invalid_argument("spatial_soft_argmax: expected [N x H x W x C], got " +
                                shape_str(activations.shape()));
  }
  const auto n = activations.dim(0), h = activations.dim(1), w = activations.dim(2),
             c = activations.dim(3);
  std::vector<double> grid(static_cast<std::size_t>(h * w * 2));
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x) {
      grid[(y * w + x) * 2] = axis_coord(x, w);
      grid[(y * w + x) * 2 + 1] = axis_coord(y, h);
    }
  auto per_channel = gather(activations, channel_rows_index(n, h * w, c), {n * c, h * w});
  auto weights = softmax_rows(per_channel);
  auto points = matmul(weights, Tensor::from_data({h * w, 2}, std::move(grid)));
  return reshape(points, {n, 2 * c});
}

Tensor mdn_nll_rows(const MdnParams& p, const Tensor& actions) {
  const auto n = p.rows(), m = p.num_modes(), a = p.action_dim;
  if (actions.ndim() != 2 || actions.dim(0) != n || actions.dim(1) != a) {
    throw std::invalid_argument("mdn_nll: actions " + shape_str(actions.shape()) +
                                " do not match mixture");
  }
  auto diff = sub(p.means, tile_actions(actions, m));
  auto sq = sum_col_groups(mul(diff, diff), a);                 // [N x M]
  auto inv_var = exp(scale(p.log_sigmas, -2.0));                // [N x M]
  auto log_comp = sub(scale(p.log_sigmas, -static_cast<double>(a)), scale(mul(sq, inv_var), 0.5));
  log_comp = add_scalar(log_comp, -0.5 * static_cast<double>(a) * kLog2Pi);
  auto joint = add(log_softmax_rows(p.logits), log_comp);
  return neg(logsumexp_rows(joint));
}

Tensor mdn_nll(const MdnParams& params, const Tensor& actions) {
  return sum(mdn_nll_rows(params, actions));
}

double mdn_log_density(const MdnParams& p, std::span<const double> action) {
  const auto m = p.num_modes(), a = p.action_dim;
  auto logits = p.logits.data();
  auto means = p.means.data();
  auto ls = p.log_sigmas.data();
  double mx = -std::numeric_limits<double>::infinity();
  for (std::int64_t k = 0; k < m; ++k) mx = std::max(mx, logits[k]);
  double z = 0.0;
  for (std::int64_t k = 0; k < m; ++k) z += std::exp(logits[k] - mx);
  const double log_z = mx + std::log(z);
  std::vector<double> terms(static_cast<std::size_t>(m));
  double best = -std::numeric_limits<double>::infinity();
  for (std::int64_t k = 0; k < m; ++k) {
    double sq = 0.0;
    for (std::int64_t j = 0; j < a; ++j) {
      const double d = action[j] - means[k * a + j];
      sq += d * d;
    }
    terms[k] = logits[k] - log_z - a * ls[k] - 0.5 * a * kLog2Pi - 0.5 * sq * std::exp(-2.0 * ls[k]);
    best = std::max(best, terms[k]);
  }
  double s = 0.0;
  for (double t : terms) s += std::exp(t - best);
  return best + std::log(s);
}

std::vector<double> mdn_select_action(const MdnParams& p, std::mt19937_64& rng, int num_samples) {
  const auto m = p.num_modes(), a = p.action_dim;
  auto logits = p.logits.data();
  auto means = p.means.data();
  auto ls = p.log_sigmas.data();
  std::vector<double> weights(static_cast<std::size_t>(m));
  const double mx = *std::max_element(logits.begin(), logits.begin() + m);
  for (std::int64_t k = 0; k < m; ++k) weights[k] = std::exp(logits[k] - mx);
  std::discrete_distribution<std::int64_t> pick(weights.begin(), weights.end());
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::vector<double> best, sample(static_cast<std::size_t>(a));
  double best_density = -std::numeric_limits<double>::infinity();
  for (int s = 0; s < num_samples; ++s) {
    const auto k = pick(rng);
    const double sigma = std::exp(ls[k]);
    for (std::int64_t j = 0; j < a; ++j) sample[j] = means[k * a + j] + sigma * gauss(rng);
    const double d = mdn_log_density(p, sample);
    if (best.empty() || d > best_density) {
      best_density = d;
      best = sample;
    }
  }
  return best;
}

Tensor gripper_ce(const Tensor& logits, const Tensor& labels) {
  if (logits.shape() != labels.shape()) throw std::invalid_argument("gripper_ce: shape mismatch");
  return sum(sub(softplus(logits), mul(labels, logits)));
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  return add_bias(matmul(x, weight), bias);
}

void add_linear(ParameterVector& params, const std::string& prefix, std::int64_t in,
                std::int64_t out, std::mt19937_64& rng, bool zero) {
  params.add(prefix + ".w", zero ? Tensor::zeros({in, out}) : fan_in_uniform({in, out}, in, rng));
  params.add(prefix + ".b", Tensor::zeros({out}));
}

}  // namespace daml::nn
