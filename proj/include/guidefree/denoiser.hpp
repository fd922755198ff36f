#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "guidefree/rng.hpp"
#include "guidefree/tensor.hpp"

namespace guidefree {

/// Class index used for the unconditional channel; maps to the extra
/// embedding row after the real classes.
inline constexpr int kNullClass = -1;

/// log(sigma) is encoded with this many (cos, sin) pairs.
inline constexpr int kFourierPairs = 8;

struct DenoiserConfig {
  int data_dim = 2;
  int hidden_layers = 3;
  int width = 128;
  int num_classes = 2;
  int embed_dim = 16;

  int input_dim() const { return data_dim + 2 * kFourierPairs + embed_dim; }
  bool operator==(const DenoiserConfig&) const = default;
};

/// Location of one parameter block inside the flat parameter buffer.
/// Weight blocks are stored row-major as (fan_in, fan_out).
struct ParamBlock {
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t size() const { return rows * cols; }
};

/// Feedforward denoiser D(x_t; sigma, c).
///
/// Input block: x_t / sqrt(sigma^2 + 1), Fourier features of log sigma and
/// the class embedding row. Hidden layers use SiLU; the output head is
/// linear with no skip connection, so an all-zero network returns its
/// output bias.
///
/// Parameter order in the flat buffer (also the checkpoint order):
/// embedding table ((num_classes + 1) x embed_dim, null row last), then for
/// each hidden layer its weight then bias, then the output weight and bias.
class DenoiserModel {
 public:
  /// He-initialized weights, N(0, 1) embeddings, zero biases.
  DenoiserModel(const DenoiserConfig& config, Rng& rng);

  static DenoiserModel zeros(const DenoiserConfig& config);
  static std::size_t parameter_count(const DenoiserConfig& config);

  const DenoiserConfig& config() const { return config_; }
  std::size_t parameter_count() const { return params_.size(); }
  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }

  const ParamBlock& embedding() const { return embedding_; }
  /// Layer l in [0, hidden_layers]; l == hidden_layers is the output head.
  const ParamBlock& weight(int layer) const { return weights_[layer]; }
  const ParamBlock& bias(int layer) const { return biases_[layer]; }
  int layer_count() const { return static_cast<int>(weights_.size()); }

  /// Embedding row for a class id (kNullClass maps to the last row).
  int embedding_row(int class_id) const;

  bool operator==(const DenoiserModel& other) const {
    return config_ == other.config_ && params_ == other.params_;
  }

 private:
  explicit DenoiserModel(const DenoiserConfig& config);

  DenoiserConfig config_;
  std::vector<double> params_;
  ParamBlock embedding_;
  std::vector<ParamBlock> weights_;
  std::vector<ParamBlock> biases_;
};

/// Intermediate values kept by forward() for backward().
struct ForwardCache {
  Tensor input;
  std::vector<Tensor> pre;
  std::vector<Tensor> act;
  std::vector<int> embed_rows;
  std::vector<double> input_scale;
};

/// Fourier encoding of log(sigma) used by the input block.
std::vector<double> sigma_features(double sigma);

/// Batched D(x_t; sigma_i, c_i). sigma and class_id have one entry per row.
Tensor forward(const DenoiserModel& model, const Tensor& x_t, std::span<const double> sigma,
               std::span<const int> class_id, ForwardCache* cache = nullptr);

/// Reverse pass. Adds dL/dtheta into param_grad (sized like the parameters)
/// and, when input_grad is given, writes dL/dx_t into it.
void backward(const DenoiserModel& model, const ForwardCache& cache, const Tensor& upstream_grad,
              std::span<double> param_grad, Tensor* input_grad = nullptr);

}  // namespace guidefree
