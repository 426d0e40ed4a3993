#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "odml/tensor_math.hpp"

namespace odml {

/// One affine layer. `weight` is out x in, so a batch maps as X W^T + b^T.
struct DenseLayer {
  Matrix weight;
  Vector bias;

  bool operator==(const DenseLayer& other) const {
    return weight == other.weight && bias == other.bias;
  }
};

/// Everything backward() needs from one forward() call.
struct ForwardCache {
  Matrix input;
  std::vector<Matrix> activations;  // post-tanh outputs of hidden layers
  Matrix raw_output;                // final linear layer, pre-normalization
  Vector norms;                     // row norms of raw_output (guarded)
  Matrix output;                    // unit-norm embeddings
};

/// Parameter gradients laid out exactly like the model's layers.
struct ModelGradients {
  std::vector<DenseLayer> layers;

  bool all_finite() const;
};

/// MLP embedding network: tanh hidden layers, linear last layer, L2-normalized
/// output rows.
class EmbeddingModel {
 public:
  EmbeddingModel() = default;

  /// Glorot-uniform weights, zero biases. Deterministic for a given seed.
  static EmbeddingModel init(const std::vector<Index>& layer_dims,
                             std::uint64_t seed);

  /// Builds a model from explicit layers. Shapes must chain.
  static EmbeddingModel from_layers(std::vector<DenseLayer> layers);

  const std::vector<Index>& layer_dims() const { return dims_; }
  Index input_dim() const { return dims_.front(); }
  Index embedding_dim() const { return dims_.back(); }

  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::vector<DenseLayer>& layers() { return layers_; }

  /// Embeds each row of `batch`. When `cache` is non-null it is filled for
  /// a subsequent backward() call.
  Matrix forward(const Matrix& batch, ForwardCache* cache = nullptr) const;

  /// Gradients of sum(grad_embeddings .* embeddings) w.r.t. all parameters,
  /// including the Jacobian of the output normalization.
  ModelGradients backward(const ForwardCache& cache,
                          const Matrix& grad_embeddings) const;

  ModelGradients zero_gradients() const;

  bool operator==(const EmbeddingModel& other) const {
    return dims_ == other.dims_ && layers_ == other.layers_;
  }

 private:
  std::vector<Index> dims_;
  std::vector<DenseLayer> layers_;
};

/// Deep copy. Models are values, so this is the copy constructor spelled out.
inline EmbeddingModel clone_weights(const EmbeddingModel& src) { return src; }

struct AdamConfig {
  double lr = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment estimates for one model.
class AdamState {
 public:
  AdamState() = default;
  AdamState(const EmbeddingModel& model, AdamConfig config);

  /// Applies one bias-corrected Adam update in place. Throws
  /// DivergenceError on non-finite gradients, leaving model and state as-is.
  void step(EmbeddingModel& model, const ModelGradients& grads);

  std::uint64_t steps() const { return step_; }
  const AdamConfig& config() const { return config_; }

 private:
  AdamConfig config_;
  std::uint64_t step_ = 0;
  std::vector<DenseLayer> m_;
  std::vector<DenseLayer> v_;
};

/// Binary model file: "ODML", u32 version, u32 dim count, u32 dims...,
/// then per layer the row-major weight followed by the bias, all f64 LE.
void save_model(const EmbeddingModel& model, const std::filesystem::path& path);
EmbeddingModel load_model(const std::filesystem::path& path);

inline constexpr std::uint32_t kModelFormatVersion = 1;

}  // namespace odml
