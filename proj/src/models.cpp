#include "models.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace fkb::models {

const char* to_string(ModelKind kind) { return kind == ModelKind::Kan ? "kan" : "mlp"; }

void ModelSpec::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorKind::Spec, "model spec: " + msg); };
  if (input_dim < 1) fail("input_dim must be positive");
  if (output_dim < 1) fail("output_dim must be positive");
  for (int w : hidden_widths) {
    if (w < 1) fail("hidden widths must be positive");
  }
  if (kind == ModelKind::Kan) {
    if (grid_size < 2) fail("grid_size must be at least 2 for KAN");
    if (!(grid_max > grid_min)) fail("grid range must be non-empty");
  }
}

RbfGrid RbfGrid::uniform(int size, double lo, double hi) {
  if (size < 2 || !(hi > lo)) throw Error(ErrorKind::Spec, "invalid RBF grid");
  RbfGrid g;
  g.bandwidth = (hi - lo) / static_cast<double>(size - 1);
  g.centers.resize(static_cast<std::size_t>(size));
  for (int k = 0; k < size; ++k) g.centers[k] = lo + g.bandwidth * k;
  g.centers.back() = hi;
  return g;
}

std::vector<double> rbf_expand(double u, const RbfGrid& grid) {
  std::vector<double> out(grid.centers.size());
  for (std::size_t k = 0; k < out.size(); ++k) {
    const double t = (u - grid.centers[k]) / grid.bandwidth;
    out[k] = std::exp(-t * t);
  }
  return out;
}

namespace {

// Writes layer-normed x into y; returns 1/sigma.
double layer_norm_row(std::span<const double> x, std::span<double> y) {
  const double m = static_cast<double>(x.size());
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= m;
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= m;
  const double inv_sigma = 1.0 / std::sqrt(var + kLayerNormEps);
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = (x[i] - mean) * inv_sigma;
  return inv_sigma;
}

// dx = inv_sigma * (dy - mean(dy) - y * mean(dy * y))
void layer_norm_row_backward(std::span<const double> y, double inv_sigma, std::span<const double> dy,
                             std::span<double> dx) {
  const double m = static_cast<double>(y.size());
  double mean_dy = 0.0, mean_dyy = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    mean_dy += dy[i];
    mean_dyy += dy[i] * y[i];
  }
  mean_dy /= m;
  mean_dyy /= m;
  for (std::size_t i = 0; i < y.size(); ++i) dx[i] = inv_sigma * (dy[i] - mean_dy - y[i] * mean_dyy);
}

double inv_sigma_of(std::span<const double> x) {
  const double m = static_cast<double>(x.size());
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= m;
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  return 1.0 / std::sqrt(var / m + kLayerNormEps);
}

}  // namespace

std::vector<double> layer_norm(std::span<const double> x) {
  if (x.empty()) throw Error(ErrorKind::Shape, "layer_norm: empty input");
  std::vector<double> y(x.size());
  layer_norm_row(x, y);
  return y;
}

std::vector<double> layer_norm_backward(std::span<const double> x, std::span<const double> dy) {
  if (x.empty() || dy.size() != x.size()) throw Error(ErrorKind::Shape, "layer_norm_backward: shape");
  std::vector<double> y(x.size()), dx(x.size());
  const double inv_sigma = layer_norm_row(x, y);
  layer_norm_row_backward(y, inv_sigma, dy, dx);
  return dx;
}

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = {"kan-d1", "kan-d3", "kan-d5", "kan-w1", "kan-w3",
                                                 "kan-w5", "kan-1",  "mlp-1",  "mlp-2",  "mlp-3"};
  return names;
}

std::optional<Preset> find_preset(const std::string& name, int mlp_width) {
  static const std::map<std::string, std::vector<int>> kan = {
      {"kan-d1", {5}},         {"kan-d3", {5, 5, 5}}, {"kan-d5", {5, 5, 5, 5, 5}},
      {"kan-w1", {5}},         {"kan-w3", {125}},     {"kan-w5", {3125}},
      {"kan-1", {5}},
  };
  if (auto it = kan.find(name); it != kan.end()) return Preset{ModelKind::Kan, it->second};
  // mlp-k has k linear layers, i.e. k-1 hidden layers.
  if (name == "mlp-1") return Preset{ModelKind::Mlp, {}};
  if (name == "mlp-2") return Preset{ModelKind::Mlp, {mlp_width}};
  if (name == "mlp-3") return Preset{ModelKind::Mlp, {mlp_width, mlp_width}};
  return std::nullopt;
}

ModelSpec spec_from_preset(const std::string& name, int input_dim, int output_dim, int grid_size,
                           int mlp_width) {
  auto preset = find_preset(name, mlp_width);
  if (!preset) throw Error(ErrorKind::Spec, "unknown model preset '" + name + "'");
  ModelSpec spec;
  spec.kind = preset->kind;
  spec.hidden_widths = preset->hidden_widths;
  spec.input_dim = input_dim;
  spec.output_dim = output_dim;
  spec.grid_size = grid_size;
  spec.preset = name;
  spec.validate();
  return spec;
}

namespace {

std::vector<LayerShape> layer_shapes(const ModelSpec& spec) {
  std::vector<int> dims;
  dims.push_back(spec.input_dim);
  dims.insert(dims.end(), spec.hidden_widths.begin(), spec.hidden_widths.end());
  dims.push_back(spec.output_dim);
  std::vector<LayerShape> out;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    out.push_back({dims[i], dims[i + 1], spec.kind == ModelKind::Kan});
  }
  return out;
}

int weight_cols(const LayerShape& l, int grid) { return l.kan ? l.fan_in * grid : l.fan_in; }

}  // namespace

std::shared_ptr<const numkit::Layout> make_layout(const ModelSpec& spec) {
  spec.validate();
  auto layout = std::make_shared<numkit::Layout>();
  const auto shapes = layer_shapes(spec);
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    const auto& l = shapes[i];
    const std::string prefix = "layers." + std::to_string(i);
    layout->push_back({prefix + ".weight",
                       {static_cast<std::size_t>(l.fan_out),
                        static_cast<std::size_t>(weight_cols(l, spec.grid_size))}});
    layout->push_back({prefix + ".bias", {static_cast<std::size_t>(l.fan_out)}});
  }
  return layout;
}

std::size_t parameter_count(const ModelSpec& spec) { return numkit::layout_size(*make_layout(spec)); }

Model::Model(ModelSpec spec, ParamVector params)
    : spec_(std::move(spec)), params_(std::move(params)), layers_(layer_shapes(spec_)) {
  spec_.validate();
  if (spec_.kind == ModelKind::Kan) grid_ = RbfGrid::uniform(spec_.grid_size, spec_.grid_min, spec_.grid_max);
  if (params_.layout() != *make_layout(spec_)) {
    throw Error(ErrorKind::Layout, "parameters do not match the model layout");
  }
}

void Model::set_params(const ParamVector& params) {
  if (!params.compatible(params_)) throw Error(ErrorKind::Layout, "set_params: layout mismatch");
  params_ = params;
  ++version_;
}

void Model::set_params(ParamVector&& params) {
  if (!params.compatible(params_)) throw Error(ErrorKind::Layout, "set_params: layout mismatch");
  params_ = std::move(params);
  ++version_;
}

Model build_model(const ModelSpec& spec, Rng& rng) {
  auto layout = make_layout(spec);
  auto params = ParamVector::zeros(layout);
  const auto shapes = layer_shapes(spec);
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    const int cols = weight_cols(shapes[i], spec.grid_size);
    const double limit = std::sqrt(6.0 / static_cast<double>(cols + shapes[i].fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (double& w : params.segment(2 * i)) w = dist(rng);
  }
  return Model(spec, std::move(params));
}

namespace {

// out[r][j] = b[j] + sum_k in[r][k] * W[j][k]
void affine(const Matrix& in, std::span<const double> w, std::span<const double> b, Matrix& out) {
  const std::size_t p = b.size();
  const std::size_t cols = in.cols;
  out = Matrix(in.rows, p);
  for (std::size_t r = 0; r < in.rows; ++r) {
    const double* x = in.data.data() + r * cols;
    double* o = out.data.data() + r * p;
    for (std::size_t j = 0; j < p; ++j) {
      const double* wj = w.data() + j * cols;
      double s = 0.0;
      for (std::size_t k = 0; k < cols; ++k) s += x[k] * wj[k];
      o[j] = s + b[j];
    }
  }
}

void expand_features(const Matrix& normalized, const RbfGrid& grid, Matrix& features) {
  const std::size_t g = grid.centers.size();
  features = Matrix(normalized.rows, normalized.cols * g);
  const double inv_h = 1.0 / grid.bandwidth;
  for (std::size_t r = 0; r < normalized.rows; ++r) {
    for (std::size_t i = 0; i < normalized.cols; ++i) {
      const double u = normalized(r, i);
      double* f = features.data.data() + r * features.cols + i * g;
      for (std::size_t k = 0; k < g; ++k) {
        const double t = (u - grid.centers[k]) * inv_h;
        f[k] = std::exp(-t * t);
      }
    }
  }
}

Matrix run_layers(const Model& model, const Matrix& x, ForwardCache* cache) {
  const auto& params = model.params();
  Matrix a = x;
  const auto& layers = model.layers();
  for (std::size_t li = 0; li < layers.size(); ++li) {
    const auto& l = layers[li];
    const auto w = params.segment(2 * li);
    const auto b = params.segment(2 * li + 1);
    LayerCache lc;
    Matrix pre;
    if (l.kan) {
      Matrix normalized(a.rows, a.cols);
      for (std::size_t r = 0; r < a.rows; ++r) layer_norm_row(a.row(r), normalized.row(r));
      Matrix features;
      expand_features(normalized, model.grid(), features);
      affine(features, w, b, pre);
      if (cache) {
        lc.normalized = std::move(normalized);
        lc.features = std::move(features);
      }
    } else {
      affine(a, w, b, pre);
    }
    Matrix next = pre;
    const bool last = li + 1 == layers.size();
    if (!l.kan && !last) {
      for (double& v : next.data) v = v > 0.0 ? v : 0.0;
    }
    if (cache) {
      lc.input = std::move(a);
      lc.pre = std::move(pre);
      cache->layers.push_back(std::move(lc));
    }
    a = std::move(next);
  }
  return a;
}

}  // namespace

ForwardResult forward(const Model& model, const Matrix& features) {
  if (features.cols != static_cast<std::size_t>(model.spec().input_dim)) {
    throw Error(ErrorKind::Shape, "forward: feature width " + std::to_string(features.cols) +
                                      " does not match input_dim " +
                                      std::to_string(model.spec().input_dim));
  }
  ForwardResult out;
  out.cache.model_version = model.version();
  out.cache.layout = &model.params().layout();
  out.cache.rows = features.rows;
  out.logits = run_layers(model, features, &out.cache);
  return out;
}

Matrix predict(const Model& model, const Matrix& features, std::size_t chunk) {
  if (features.cols != static_cast<std::size_t>(model.spec().input_dim)) {
    throw Error(ErrorKind::Shape, "predict: feature width does not match input_dim");
  }
  const std::size_t c = static_cast<std::size_t>(model.spec().output_dim);
  Matrix logits(features.rows, c);
  for (std::size_t start = 0; start < features.rows; start += chunk) {
    const std::size_t rows = std::min(chunk, features.rows - start);
    Matrix part(rows, features.cols);
    std::copy_n(features.data.begin() + start * features.cols, rows * features.cols, part.data.begin());
    Matrix out = run_layers(model, part, nullptr);
    std::copy(out.data.begin(), out.data.end(), logits.data.begin() + start * c);
  }
  return logits;
}

GradVector backward(const Model& model, const ForwardCache& cache, const Matrix& dlogits) {
  const auto& layers = model.layers();
  if (cache.model_version != model.version() || cache.layout != &model.params().layout() ||
      cache.layers.size() != layers.size() || dlogits.rows != cache.rows ||
      dlogits.cols != static_cast<std::size_t>(model.spec().output_dim)) {
    throw Error(ErrorKind::Cache, "backward: cache does not match model or dlogits");
  }
  const auto& params = model.params();
  GradVector grad = GradVector::zeros(params.shared_layout());
  const std::size_t n = cache.rows;

  Matrix dout = dlogits;  // gradient w.r.t. current layer's output
  for (std::size_t li = layers.size(); li-- > 0;) {
    const auto& l = layers[li];
    const auto& lc = cache.layers[li];
    const bool last = li + 1 == layers.size();
    const std::size_t p = static_cast<std::size_t>(l.fan_out);

    Matrix dpre = std::move(dout);
    if (!l.kan && !last) {
      for (std::size_t k = 0; k < dpre.data.size(); ++k) {
        if (!(lc.pre.data[k] > 0.0)) dpre.data[k] = 0.0;
      }
    }

    const Matrix& x = l.kan ? lc.features : lc.input;
    const std::size_t cols = x.cols;
    auto dw = grad.segment(2 * li);
    auto db = grad.segment(2 * li + 1);
    const auto w = params.segment(2 * li);
    for (std::size_t r = 0; r < n; ++r) {
      const double* xr = x.data.data() + r * cols;
      for (std::size_t j = 0; j < p; ++j) {
        const double d = dpre(r, j);
        if (d == 0.0) continue;
        db[j] += d;
        double* dwj = dw.data() + j * cols;
        for (std::size_t k = 0; k < cols; ++k) dwj[k] += d * xr[k];
      }
    }
    if (li == 0) break;

    Matrix dx(n, cols);
    for (std::size_t r = 0; r < n; ++r) {
      double* dxr = dx.data.data() + r * cols;
      for (std::size_t j = 0; j < p; ++j) {
        const double d = dpre(r, j);
        if (d == 0.0) continue;
        const double* wj = w.data() + j * cols;
        for (std::size_t k = 0; k < cols; ++k) dxr[k] += d * wj[k];
      }
    }

    if (!l.kan) {
      dout = std::move(dx);
      continue;
    }

    // Through the RBF expansion, then the layer norm.
    const auto& grid = model.grid();
    const std::size_t g = grid.centers.size();
    const std::size_t m = static_cast<std::size_t>(l.fan_in);
    const double scale = -2.0 / (grid.bandwidth * grid.bandwidth);
    Matrix du(n, m);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t i = 0; i < m; ++i) {
        const double u = lc.normalized(r, i);
        const double* f = lc.features.data.data() + r * lc.features.cols + i * g;
        const double* df = dx.data.data() + r * cols + i * g;
        double s = 0.0;
        for (std::size_t k = 0; k < g; ++k) s += df[k] * f[k] * scale * (u - grid.centers[k]);
        du(r, i) = s;
      }
    }
    dout = Matrix(n, m);
    for (std::size_t r = 0; r < n; ++r) {
      layer_norm_row_backward(lc.normalized.row(r), inv_sigma_of(lc.input.row(r)), du.row(r),
                              dout.row(r));
    }
  }
  return grad;
}

LossAndGrad loss_and_gradient(const Model& model, const Batch& batch) {
  auto fwd = forward(model, batch.features);
  auto lg = numkit::softmax_cross_entropy(fwd.logits, batch.labels);
  return {lg.loss, backward(model, fwd.cache, lg.dlogits)};
}

double loss(const Model& model, const Batch& batch) {
  return numkit::softmax_cross_entropy(predict(model, batch.features), batch.labels).loss;
}

}  // namespace fkb::models
