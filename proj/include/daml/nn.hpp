#pragma once

#include <random>
#include <vector>

#include "daml/parameters.hpp"
#include "daml/tensor.hpp"

namespace daml::nn {

/// Mixture-of-isotropic-Gaussians action head, batched over rows.
///   logits      [N x M]
///   means       [N x M*A]  (mode-major: means[n, m*A + a])
///   log_sigmas  [N x M]
struct MdnParams {
  Tensor logits;
  Tensor means;
  Tensor log_sigmas;
  std::int64_t action_dim = 0;

  std::int64_t rows() const { return logits.dim(0); }
  std::int64_t num_modes() const { return logits.dim(1); }
  /// Row `n` as a single-row MdnParams.
  MdnParams row(std::int64_t n) const;
};

/// Splits a raw head output [N x M*(A+2)] into mixture parameters.
MdnParams split_mdn_head(const Tensor& raw, std::int64_t num_modes, std::int64_t action_dim);

/// Per-channel softmax over all pixels followed by the expected (x, y)
/// position. activations [N x H x W x C] -> [N x 2C] laid out (x0, y0, x1, y1, ...).
/// Coordinates run -1 -> 1 left to right and top to bottom; a single pixel
/// axis maps to 0.
Tensor spatial_soft_argmax(const Tensor& activations);

/// -log p(action) per row; actions [N x A] -> [N].
Tensor mdn_nll_rows(const MdnParams& params, const Tensor& actions);
/// Sum of mdn_nll_rows.
Tensor mdn_nll(const MdnParams& params, const Tensor& actions);

/// log p(action) for a single-row mixture, evaluated without the graph.
double mdn_log_density(const MdnParams& params, std::span<const double> action);

/// Draws `num_samples` actions from row 0 of the mixture and returns the one
/// with the highest mixture density.
std::vector<double> mdn_select_action(const MdnParams& params, std::mt19937_64& rng,
                                      int num_samples = 100);

/// Binary cross-entropy on sigmoid(logit), summed; logits and labels are [N].
Tensor gripper_ce(const Tensor& logits, const Tensor& labels);

/// x [N x in] * W [in x out] + b [out]
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// Adds "<prefix>.w" / "<prefix>.b" for a dense layer; zero-initialized when
/// `zero` is set, fan-in uniform otherwise.
void add_linear(ParameterVector& params, const std::string& prefix, std::int64_t in,
                std::int64_t out, std::mt19937_64& rng, bool zero = false);

}  // namespace daml::nn
