#include "odml/embedding_model.hpp"

#include <cmath>
#include <fstream>
#include <random>

#include "odml/binary_io.hpp"

namespace odml {

namespace {

void check_layer_chain(const std::vector<DenseLayer>& layers) {
  if (layers.empty()) throw Error("model needs at least one layer");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& layer = layers[l];
    if (layer.weight.rows() <= 0 || layer.weight.cols() <= 0) {
      throw Error("layer " + std::to_string(l) + " has an empty weight");
    }
    if (layer.bias.size() != layer.weight.rows()) {
      throw Error("layer " + std::to_string(l) + " bias size mismatch");
    }
    if (l > 0 && layer.weight.cols() != layers[l - 1].weight.rows()) {
      throw Error("layer " + std::to_string(l) + " input size mismatch");
    }
  }
}

}  // namespace

bool ModelGradients::all_finite() const {
  for (const auto& layer : layers) {
    if (!odml::all_finite(layer.weight) || !odml::all_finite(layer.bias)) {
      return false;
    }
  }
  return true;
}

EmbeddingModel EmbeddingModel::init(const std::vector<Index>& layer_dims,
                                    std::uint64_t seed) {
  if (layer_dims.size() < 2) throw Error("init: need at least 2 layer dims");
  for (Index d : layer_dims) {
    if (d <= 0) throw Error("init: layer dims must be positive");
  }
  std::mt19937_64 rng(seed);
  std::vector<DenseLayer> layers;
  for (std::size_t l = 0; l + 1 < layer_dims.size(); ++l) {
    const Index fan_in = layer_dims[l];
    const Index fan_out = layer_dims[l + 1];
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    DenseLayer layer{Matrix(fan_out, fan_in), Vector::Zero(fan_out)};
    for (Index r = 0; r < fan_out; ++r) {
      for (Index c = 0; c < fan_in; ++c) layer.weight(r, c) = dist(rng);
    }
    layers.push_back(std::move(layer));
  }
  return from_layers(std::move(layers));
}

EmbeddingModel EmbeddingModel::from_layers(std::vector<DenseLayer> layers) {
  check_layer_chain(layers);
  EmbeddingModel model;
  model.dims_.push_back(layers.front().weight.cols());
  for (const auto& layer : layers) model.dims_.push_back(layer.weight.rows());
  model.layers_ = std::move(layers);
  return model;
}

Matrix EmbeddingModel::forward(const Matrix& batch, ForwardCache* cache) const {
  if (layers_.empty()) throw Error("forward: uninitialized model");
  if (batch.cols() != input_dim()) {
    throw Error("forward: batch has " + std::to_string(batch.cols()) +
                " columns, model expects " + std::to_string(input_dim()));
  }
  if (cache) {
    cache->input = batch;
    cache->activations.clear();
  }
  Matrix act = batch;
  const std::size_t last = layers_.size() - 1;
  for (std::size_t l = 0; l < last; ++l) {
    Matrix z = act * layers_[l].weight.transpose();
    z.rowwise() += layers_[l].bias.transpose();
    act = z.array().tanh().matrix();
    if (cache) cache->activations.push_back(act);
  }
  Matrix raw = act * layers_[last].weight.transpose();
  raw.rowwise() += layers_[last].bias.transpose();

  Vector norms = raw.rowwise().norm();
  for (Index r = 0; r < norms.size(); ++r) {
    if (norms(r) < kNormEps) norms(r) += kNormEps;
  }
  Matrix out = raw.array().colwise() / norms.array();
  if (cache) {
    cache->raw_output = std::move(raw);
    cache->norms = std::move(norms);
    cache->output = out;
  }
  return out;
}

ModelGradients EmbeddingModel::backward(const ForwardCache& cache,
                                        const Matrix& grad_embeddings) const {
  if (grad_embeddings.rows() != cache.output.rows() ||
      grad_embeddings.cols() != cache.output.cols()) {
    throw Error("backward: gradient shape does not match embeddings");
  }
  if (cache.activations.size() + 1 != layers_.size()) {
    throw Error("backward: cache does not belong to this model");
  }
  // Normalization Jacobian per row: (I - e e^T) / |z|.
  const Matrix& e = cache.output;
  const Vector proj = (grad_embeddings.array() * e.array()).rowwise().sum();
  Matrix dz = grad_embeddings - e.cwiseProduct(proj.replicate(1, e.cols()));
  dz.array().colwise() /= cache.norms.array();

  ModelGradients grads;
  grads.layers.resize(layers_.size());
  for (std::size_t l = layers_.size(); l-- > 0;) {
    const Matrix& prev = l == 0 ? cache.input : cache.activations[l - 1];
    grads.layers[l].weight = dz.transpose() * prev;
    grads.layers[l].bias = dz.colwise().sum().transpose();
    if (l > 0) {
      Matrix da = dz * layers_[l].weight;
      dz = da.array() * (1.0 - prev.array().square());
    }
  }
  return grads;
}

ModelGradients EmbeddingModel::zero_gradients() const {
  ModelGradients grads;
  for (const auto& layer : layers_) {
    grads.layers.push_back({Matrix::Zero(layer.weight.rows(), layer.weight.cols()),
                            Vector::Zero(layer.bias.size())});
  }
  return grads;
}

AdamState::AdamState(const EmbeddingModel& model, AdamConfig config)
    : config_(config) {
  m_ = model.zero_gradients().layers;
  v_ = m_;
}

void AdamState::step(EmbeddingModel& model, const ModelGradients& grads) {
  auto& layers = model.layers();
  if (grads.layers.size() != layers.size() || m_.size() != layers.size()) {
    throw Error("adam_step: gradient/state layer count mismatch");
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (grads.layers[l].weight.rows() != layers[l].weight.rows() ||
        grads.layers[l].weight.cols() != layers[l].weight.cols() ||
        grads.layers[l].bias.size() != layers[l].bias.size()) {
      throw Error("adam_step: gradient shape mismatch at layer " +
                  std::to_string(l));
    }
  }
  if (!grads.all_finite()) {
    throw DivergenceError("adam_step: non-finite gradient (training diverged)");
  }

  ++step_;
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  auto update = [&](auto& param, auto& m, auto& v, const auto& g) {
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
    param.array() -= config_.lr * (m.array() / c1) /
                     ((v.array() / c2).sqrt() + config_.eps);
  };
  for (std::size_t l = 0; l < layers.size(); ++l) {
    update(layers[l].weight, m_[l].weight, v_[l].weight, grads.layers[l].weight);
    update(layers[l].bias, m_[l].bias, v_[l].bias, grads.layers[l].bias);
  }
}

void save_model(const EmbeddingModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  io::write_magic(out, "ODML");
  io::write_u32(out, kModelFormatVersion);
  io::write_u32(out, static_cast<std::uint32_t>(model.layer_dims().size()));
  for (Index d : model.layer_dims()) io::write_u32(out, static_cast<std::uint32_t>(d));
  for (const auto& layer : model.layers()) {
    for (Index r = 0; r < layer.weight.rows(); ++r) {
      for (Index c = 0; c < layer.weight.cols(); ++c) {
        io::write_f64(out, layer.weight(r, c));
      }
    }
    for (Index i = 0; i < layer.bias.size(); ++i) io::write_f64(out, layer.bias(i));
  }
  if (!out) throw Error("write failed for " + path.string());
}

EmbeddingModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open model file " + path.string());
  io::expect_magic(in, "ODML");
  const auto version = io::read_u32(in, "format version");
  if (version != kModelFormatVersion) {
    throw FormatError("unsupported model format version " +
                      std::to_string(version));
  }
  const auto count = io::read_u32(in, "layer count");
  if (count < 2 || count > 1024) {
    throw FormatError("implausible layer count " + std::to_string(count));
  }
  std::vector<Index> dims;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto d = io::read_u32(in, "layer dims");
    if (d == 0 || d > (1u << 20)) {
      throw FormatError("implausible layer dim " + std::to_string(d));
    }
    dims.push_back(d);
  }
  std::vector<DenseLayer> layers;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    DenseLayer layer{Matrix(dims[l + 1], dims[l]), Vector(dims[l + 1])};
    for (Index r = 0; r < layer.weight.rows(); ++r) {
      for (Index c = 0; c < layer.weight.cols(); ++c) {
        layer.weight(r, c) = io::read_f64(in, "weights");
      }
    }
    for (Index i = 0; i < layer.bias.size(); ++i) {
      layer.bias(i) = io::read_f64(in, "biases");
    }
    if (!all_finite(layer.weight) || !all_finite(layer.bias)) {
      throw FormatError("non-finite parameter in layer " + std::to_string(l));
    }
    layers.push_back(std::move(layer));
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw FormatError("trailing bytes after model parameters");
  }
  return EmbeddingModel::from_layers(std::move(layers));
}

}  // namespace odml
