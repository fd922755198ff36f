#include "guidefree/denoiser.hpp"

#include <Eigen/Core>
#include <cmath>
#include <stdexcept>

namespace guidefree {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using ConstVecMap = Eigen::Map<const Eigen::RowVectorXd>;

ConstMatMap block_map(std::span<const double> params, const ParamBlock& b) {
  return ConstMatMap(params.data() + b.offset, static_cast<Eigen::Index>(b.rows),
                     static_cast<Eigen::Index>(b.cols));
}

MatMap block_map(std::span<double> params, const ParamBlock& b) {
  return MatMap(params.data() + b.offset, static_cast<Eigen::Index>(b.rows),
                static_cast<Eigen::Index>(b.cols));
}

MatMap tensor_map(Tensor& t) {
  return MatMap(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

ConstMatMap tensor_map(const Tensor& t) {
  return ConstMatMap(t.data(), static_cast<Eigen::Index>(t.rows()),
                     static_cast<Eigen::Index>(t.cols()));
}

double sigmoid(double a) { return 1.0 / (1.0 + std::exp(-a)); }

}  // namespace

DenoiserModel::DenoiserModel(const DenoiserConfig& config) : config_(config) {
  if (config.data_dim < 1 || config.hidden_layers < 1 || config.width < 1 ||
      config.num_classes < 1 || config.embed_dim < 1) {
    throw std::invalid_argument("denoiser config: all sizes must be positive");
  }
  std::size_t offset = 0;
  auto take = [&offset](std::size_t rows, std::size_t cols) {
    ParamBlock b{offset, rows, cols};
    offset += rows * cols;
    return b;
  };
  embedding_ = take(static_cast<std::size_t>(config.num_classes) + 1, config.embed_dim);
  std::size_t fan_in = config.input_dim();
  for (int l = 0; l < config.hidden_layers; ++l) {
    weights_.push_back(take(fan_in, config.width));
    biases_.push_back(take(1, config.width));
    fan_in = config.width;
  }
  weights_.push_back(take(fan_in, config.data_dim));
  biases_.push_back(take(1, config.data_dim));
  params_.assign(offset, 0.0);
}

DenoiserModel::DenoiserModel(const DenoiserConfig& config, Rng& rng) : DenoiserModel(config) {
  for (std::size_t i = 0; i < embedding_.size(); ++i) params_[embedding_.offset + i] = rng.normal();
  for (const ParamBlock& w : weights_) {
    const double scale = std::sqrt(2.0 / static_cast<double>(w.rows));
    for (std::size_t i = 0; i < w.size(); ++i) params_[w.offset + i] = scale * rng.normal();
  }
}

DenoiserModel DenoiserModel::zeros(const DenoiserConfig& config) { return DenoiserModel(config); }

std::size_t DenoiserModel::parameter_count(const DenoiserConfig& config) {
  return zeros(config).parameter_count();
}

int DenoiserModel::embedding_row(int class_id) const {
  if (class_id == kNullClass) return config_.num_classes;
  if (class_id < 0 || class_id >= config_.num_classes) {
    throw std::out_of_range("class id out of range");
  }
  return class_id;
}

std::vector<double> sigma_features(double sigma) {
  const double log_sigma = std::log(sigma);
  std::vector<double> out(2 * kFourierPairs);
  for (int k = 0; k < kFourierPairs; ++k) {
    const double freq = 0.25 * std::pow(std::sqrt(2.0), k);
    out[2 * k] = std::cos(freq * log_sigma);
    out[2 * k + 1] = std::sin(freq * log_sigma);
  }
  return out;
}

Tensor forward(const DenoiserModel& model, const Tensor& x_t, std::span<const double> sigma,
               std::span<const int> class_id, ForwardCache* cache) {
  const DenoiserConfig& cfg = model.config();
  const std::size_t batch = x_t.rows();
  if (x_t.rank() != 2 || x_t.cols() != static_cast<std::size_t>(cfg.data_dim)) {
    throw ShapeError("forward: x_t must be (batch, data_dim)");
  }
  if (sigma.size() != batch || class_id.size() != batch) {
    throw ShapeError("forward: sigma and class_id need one entry per row");
  }

  ForwardCache local;
  ForwardCache& c = cache ? *cache : local;
  c.input = Tensor::matrix(batch, cfg.input_dim());
  c.embed_rows.resize(batch);
  c.input_scale.resize(batch);

  const auto params = model.params();
  const ParamBlock& emb = model.embedding();
  const int feat_off = cfg.data_dim;
  const int emb_off = cfg.data_dim + 2 * kFourierPairs;
  double cached_sigma = -1.0;
  std::vector<double> feats;
  for (std::size_t i = 0; i < batch; ++i) {
    if (!(sigma[i] > 0.0)) throw std::invalid_argument("forward: sigma must be positive");
    if (sigma[i] != cached_sigma) {
      feats = sigma_features(sigma[i]);
      cached_sigma = sigma[i];
    }
    const double scale = 1.0 / std::sqrt(sigma[i] * sigma[i] + 1.0);
    c.input_scale[i] = scale;
    auto in_row = c.input.row(i);
    for (int j = 0; j < cfg.data_dim; ++j) in_row[j] = x_t(i, j) * scale;
    for (int j = 0; j < 2 * kFourierPairs; ++j) in_row[feat_off + j] = feats[j];
    const int er = model.embedding_row(class_id[i]);
    c.embed_rows[i] = er;
    const double* e = params.data() + emb.offset + static_cast<std::size_t>(er) * emb.cols;
    for (int j = 0; j < cfg.embed_dim; ++j) in_row[emb_off + j] = e[j];
  }

  const int hidden = cfg.hidden_layers;
  c.pre.resize(hidden);
  c.act.resize(hidden);
  const Tensor* prev = &c.input;
  for (int l = 0; l < hidden; ++l) {
    const ParamBlock& w = model.weight(l);
    const ParamBlock& b = model.bias(l);
    c.pre[l] = Tensor::matrix(batch, w.cols);
    auto pre = tensor_map(c.pre[l]);
    pre.noalias() = tensor_map(*prev) * block_map(params, w);
    pre.rowwise() += ConstVecMap(params.data() + b.offset, static_cast<Eigen::Index>(b.cols));
    c.act[l] = Tensor::matrix(batch, w.cols);
    const double* p = c.pre[l].data();
    double* a = c.act[l].data();
    for (std::size_t k = 0; k < c.pre[l].size(); ++k) a[k] = p[k] * sigmoid(p[k]);
    prev = &c.act[l];
  }

  const ParamBlock& w_out = model.weight(hidden);
  const ParamBlock& b_out = model.bias(hidden);
  Tensor out = Tensor::matrix(batch, cfg.data_dim);
  auto o = tensor_map(out);
  o.noalias() = tensor_map(*prev) * block_map(params, w_out);
  o.rowwise() += ConstVecMap(params.data() + b_out.offset, static_cast<Eigen::Index>(b_out.cols));
  return out;
}

void backward(const DenoiserModel& model, const ForwardCache& cache, const Tensor& upstream_grad,
              std::span<double> param_grad, Tensor* input_grad) {
  const DenoiserConfig& cfg = model.config();
  const std::size_t batch = cache.input.rows();
  if (upstream_grad.rank() != 2 || upstream_grad.rows() != batch ||
      upstream_grad.cols() != static_cast<std::size_t>(cfg.data_dim)) {
    throw ShapeError("backward: upstream_grad must match the forward output");
  }
  if (param_grad.size() != model.parameter_count()) {
    throw ShapeError("backward: param_grad must match the parameter count");
  }
  const auto params = model.params();
  const int hidden = cfg.hidden_layers;

  // Output head.
  auto g = tensor_map(upstream_grad);
  block_map(param_grad, model.weight(hidden)).noalias() += tensor_map(cache.act[hidden - 1]).transpose() * g;
  block_map(param_grad, model.bias(hidden)) += g.colwise().sum();
  RowMat delta = g * block_map(params, model.weight(hidden)).transpose();

  for (int l = hidden - 1; l >= 0; --l) {
    // Through SiLU: d/da [a * s(a)] = s(a) * (1 + a * (1 - s(a))).
    const double* p = cache.pre[l].data();
    double* d = delta.data();
    for (std::size_t k = 0; k < cache.pre[l].size(); ++k) {
      const double s = sigmoid(p[k]);
      d[k] *= s * (1.0 + p[k] * (1.0 - s));
    }
    const Tensor& below = l == 0 ? cache.input : cache.act[l - 1];
    block_map(param_grad, model.weight(l)).noalias() += tensor_map(below).transpose() * delta;
    block_map(param_grad, model.bias(l)) += delta.colwise().sum();
    RowMat next = delta * block_map(params, model.weight(l)).transpose();
    delta = std::move(next);
  }

  // delta now holds dL/d(input block).
  const ParamBlock& emb = model.embedding();
  const int emb_off = cfg.data_dim + 2 * kFourierPairs;
  for (std::size_t i = 0; i < batch; ++i) {
    double* ge = param_grad.data() + emb.offset + static_cast<std::size_t>(cache.embed_rows[i]) * emb.cols;
    for (int j = 0; j < cfg.embed_dim; ++j) ge[j] += delta(static_cast<Eigen::Index>(i), emb_off + j);
  }
  if (input_grad) {
    *input_grad = Tensor::matrix(batch, cfg.data_dim);
    for (std::size_t i = 0; i < batch; ++i) {
      for (int j = 0; j < cfg.data_dim; ++j) {
        (*input_grad)(i, j) = delta(static_cast<Eigen::Index>(i), j) * cache.input_scale[i];
      }
    }
  }
}

}  // namespace guidefree
