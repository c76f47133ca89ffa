#include "numkit.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fkb::numkit {

std::size_t TensorSpec::size() const {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::size_t layout_size(const Layout& layout) {
  std::size_t n = 0;
  for (const auto& t : layout) n += t.size();
  return n;
}

template <class Tag>
LayoutVector<Tag>::LayoutVector(std::shared_ptr<const Layout> layout, std::vector<double> values)
    : layout_(std::move(layout)), values_(std::move(values)) {
  if (!layout_) throw Error(ErrorKind::Layout, "null layout");
  if (layout_size(*layout_) != values_.size()) {
    throw Error(ErrorKind::Layout, "value count " + std::to_string(values_.size()) +
                                       " does not match layout size " +
                                       std::to_string(layout_size(*layout_)));
  }
}

template <class Tag>
LayoutVector<Tag> LayoutVector<Tag>::zeros(std::shared_ptr<const Layout> layout) {
  const std::size_t n = layout_size(*layout);
  return LayoutVector(std::move(layout), std::vector<double>(n, 0.0));
}

template <class Tag>
std::size_t LayoutVector<Tag>::offset(std::size_t i) const {
  std::size_t off = 0;
  for (std::size_t k = 0; k < i; ++k) off += (*layout_)[k].size();
  return off;
}

template <class Tag>
std::span<const double> LayoutVector<Tag>::segment(std::size_t i) const {
  return std::span<const double>(values_).subspan(offset(i), (*layout_).at(i).size());
}

template <class Tag>
std::span<double> LayoutVector<Tag>::segment(std::size_t i) {
  return std::span<double>(values_).subspan(offset(i), (*layout_).at(i).size());
}

template <class Tag>
double LayoutVector<Tag>::norm() const {
  double s = 0.0;
  for (double v : values_) s += v * v;
  return std::sqrt(s);
}

template class LayoutVector<ParamTag>;
template class LayoutVector<GradTag>;

ParamVector flatten(const std::vector<Tensor>& tensors) {
  auto layout = std::make_shared<Layout>();
  for (const auto& t : tensors) layout->push_back({t.name, t.shape});
  return flatten(tensors, std::move(layout));
}

ParamVector flatten(const std::vector<Tensor>& tensors, std::shared_ptr<const Layout> layout) {
  if (tensors.empty()) throw Error(ErrorKind::Layout, "flatten: empty tensor list");
  if (tensors.size() != layout->size()) {
    throw Error(ErrorKind::Layout, "flatten: tensor count does not match layout");
  }
  std::vector<double> values;
  values.reserve(layout_size(*layout));
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& t = tensors[i];
    const auto& spec = (*layout)[i];
    if (t.name != spec.name || t.shape != spec.shape || t.values.size() != spec.size()) {
      throw Error(ErrorKind::Layout, "flatten: tensor '" + t.name + "' does not match layout entry '" +
                                         spec.name + "'");
    }
    values.insert(values.end(), t.values.begin(), t.values.end());
  }
  return ParamVector(std::move(layout), std::move(values));
}

std::vector<Tensor> unflatten(const ParamVector& params) {
  std::vector<Tensor> out;
  out.reserve(params.layout().size());
  std::size_t off = 0;
  const auto values = params.values();
  for (const auto& spec : params.layout()) {
    const std::size_t n = spec.size();
    out.push_back({spec.name, spec.shape, {values.begin() + off, values.begin() + off + n}});
    off += n;
  }
  return out;
}

void Batch::validate(int num_classes) const {
  if (features.rows != labels.size()) {
    throw Error(ErrorKind::Shape, "batch has " + std::to_string(features.rows) + " rows but " +
                                      std::to_string(labels.size()) + " labels");
  }
  for (int y : labels) {
    if (y < 0 || y >= num_classes) {
      throw Error(ErrorKind::Shape, "label " + std::to_string(y) + " outside [0, " +
                                        std::to_string(num_classes) + ")");
    }
  }
}

LossGrad softmax_cross_entropy(const Matrix& logits, std::span<const int> labels) {
  const std::size_t n = logits.rows;
  const std::size_t c = logits.cols;
  if (n == 0 || c == 0) throw Error(ErrorKind::Shape, "softmax_cross_entropy: empty logits");
  if (labels.size() != n) throw Error(ErrorKind::Shape, "softmax_cross_entropy: label count mismatch");

  LossGrad out{0.0, Matrix(n, c)};
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t r = 0; r < n; ++r) {
    const int y = labels[r];
    if (y < 0 || static_cast<std::size_t>(y) >= c) {
      throw Error(ErrorKind::Shape, "softmax_cross_entropy: label out of range");
    }
    const auto z = logits.row(r);
    const double zmax = *std::max_element(z.begin(), z.end());
    double denom = 0.0;
    for (double v : z) denom += std::exp(v - zmax);
    const double log_denom = std::log(denom);
    out.loss += -(z[y] - zmax - log_denom);
    auto g = out.dlogits.row(r);
    for (std::size_t k = 0; k < c; ++k) {
      g[k] = std::exp(z[k] - zmax - log_denom) * inv_n;
    }
    g[y] -= inv_n;
  }
  out.loss *= inv_n;
  return out;
}

namespace {

double central_difference(const ScalarFn& f, ParamVector& probe, std::size_t k, double h) {
  const double saved = probe[k];
  probe[k] = saved + h;
  const double fp = f(probe);
  probe[k] = saved - h;
  const double fm = f(probe);
  probe[k] = saved;
  if (!std::isfinite(fp) || !std::isfinite(fm)) {
    throw Error(ErrorKind::Numeric, "finite difference: non-finite evaluation at coordinate " +
                                        std::to_string(k));
  }
  return (fp - fm) / (2.0 * h);
}

}  // namespace

GradVector finite_difference_gradient(const ScalarFn& f, const ParamVector& theta, double h) {
  if (!(h > 0.0)) throw Error(ErrorKind::Numeric, "finite difference step must be positive");
  ParamVector probe = theta;
  GradVector grad = GradVector::zeros(theta.shared_layout());
  for (std::size_t k = 0; k < theta.size(); ++k) grad[k] = central_difference(f, probe, k, h);
  return grad;
}

std::vector<double> finite_difference_gradient(const ScalarFn& f, const ParamVector& theta,
                                               std::span<const std::size_t> coords, double h) {
  if (!(h > 0.0)) throw Error(ErrorKind::Numeric, "finite difference step must be positive");
  ParamVector probe = theta;
  std::vector<double> out;
  out.reserve(coords.size());
  for (std::size_t k : coords) {
    if (k >= theta.size()) throw Error(ErrorKind::Layout, "finite difference: coordinate out of range");
    out.push_back(central_difference(f, probe, k, h));
  }
  return out;
}

std::vector<double> extrapolated_difference_gradient(const ScalarFn& f, const ParamVector& theta,
                                                     std::span<const std::size_t> coords, double h) {
  const auto coarse = finite_difference_gradient(f, theta, coords, h);
  auto fine = finite_difference_gradient(f, theta, coords, h / 2.0);
  for (std::size_t i = 0; i < fine.size(); ++i) fine[i] = (4.0 * fine[i] - coarse[i]) / 3.0;
  return fine;
}

double relative_error(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(ErrorKind::Layout, "relative_error: size mismatch");
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double scale = std::sqrt(std::max(na, nb));
  if (scale == 0.0) return 0.0;
  return std::sqrt(diff) / scale;
}

}  // namespace fkb::numkit
