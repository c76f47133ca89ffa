#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "numkit.hpp"
#include "rng.hpp"

namespace fkb::models {

using numkit::Batch;
using numkit::GradVector;
using numkit::Matrix;
using numkit::ParamVector;

enum class ModelKind { Kan, Mlp };

const char* to_string(ModelKind kind);

struct ModelSpec {
  ModelKind kind = ModelKind::Kan;
  int input_dim = 0;
  std::vector<int> hidden_widths;
  int output_dim = 0;
  int grid_size = 5;
  double grid_min = -2.0;
  double grid_max = 2.0;
  std::string preset;  // informational only

  void validate() const;
  bool operator==(const ModelSpec&) const = default;
};

// Gaussian RBF centers spread uniformly over [lo, hi].
struct RbfGrid {
  std::vector<double> centers;
  double bandwidth = 1.0;

  static RbfGrid uniform(int size, double lo, double hi);
};

// component k = exp(-((u - c_k) / bandwidth)^2)
std::vector<double> rbf_expand(double u, const RbfGrid& grid);

inline constexpr double kLayerNormEps = 1e-5;

// Zero-mean, unit-variance normalization without affine terms.
std::vector<double> layer_norm(std::span<const double> x);
// Gradient of layer_norm at x given the upstream gradient dy.
std::vector<double> layer_norm_backward(std::span<const double> x, std::span<const double> dy);

// Hidden widths for a named preset; `mlp_width` sets the MLP hidden size.
struct Preset {
  ModelKind kind;
  std::vector<int> hidden_widths;
};
std::optional<Preset> find_preset(const std::string& name, int mlp_width = 64);
const std::vector<std::string>& preset_names();

ModelSpec spec_from_preset(const std::string& name, int input_dim, int output_dim, int grid_size = 5,
                           int mlp_width = 64);

struct LayerShape {
  int fan_in;   // m
  int fan_out;  // p
  bool kan;
};

class Model {
 public:
  Model() = default;
  Model(ModelSpec spec, ParamVector params);

  const ModelSpec& spec() const { return spec_; }
  const ParamVector& params() const { return params_; }
  const std::vector<LayerShape>& layers() const { return layers_; }
  const RbfGrid& grid() const { return grid_; }
  std::uint64_t version() const { return version_; }

  // Replace parameters; layout must match.
  void set_params(const ParamVector& params);
  void set_params(ParamVector&& params);

 private:
  ModelSpec spec_;
  ParamVector params_;
  std::vector<LayerShape> layers_;
  RbfGrid grid_;
  std::uint64_t version_ = 0;
};

std::shared_ptr<const numkit::Layout> make_layout(const ModelSpec& spec);
std::size_t parameter_count(const ModelSpec& spec);

Model build_model(const ModelSpec& spec, Rng& rng);

struct LayerCache {
  Matrix input;       // a, n x m
  Matrix normalized;  // KAN: layer-normed input
  Matrix features;    // KAN: RBF expansion, n x (m*g)
  Matrix pre;         // pre-activation, n x p
};

struct ForwardCache {
  std::uint64_t model_version = 0;
  const numkit::Layout* layout = nullptr;
  std::size_t rows = 0;
  std::vector<LayerCache> layers;
};

struct ForwardResult {
  Matrix logits;
  ForwardCache cache;
};

ForwardResult forward(const Model& model, const Matrix& features);
inline ForwardResult forward(const Model& model, const Batch& batch) {
  return forward(model, batch.features);
}

GradVector backward(const Model& model, const ForwardCache& cache, const Matrix& dlogits);

// Logits without keeping activations, processed in row chunks.
Matrix predict(const Model& model, const Matrix& features, std::size_t chunk = 256);

struct LossAndGrad {
  double loss;
  GradVector grad;
};

// Mean cross-entropy on a batch and its parameter gradient.
LossAndGrad loss_and_gradient(const Model& model, const Batch& batch);
double loss(const Model& model, const Batch& batch);

}  // namespace fkb::models
