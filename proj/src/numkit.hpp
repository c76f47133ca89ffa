#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"

namespace fkb::numkit {

struct TensorSpec {
  std::string name;
  std::vector<std::size_t> shape;

  std::size_t size() const;
  bool operator==(const TensorSpec&) const = default;
};

using Layout = std::vector<TensorSpec>;

struct Tensor {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> values;  // row-major
};

struct ParamTag {};
struct GradTag {};

// Flat real array plus the layout describing which segment belongs to which
// model tensor. Aggregation is positional, so two vectors are only
// compatible when their layouts are identical.
template <class Tag>
class LayoutVector {
 public:
  LayoutVector() : layout_(std::make_shared<const Layout>()) {}

  LayoutVector(std::shared_ptr<const Layout> layout, std::vector<double> values);

  static LayoutVector zeros(std::shared_ptr<const Layout> layout);

  const Layout& layout() const { return *layout_; }
  const std::shared_ptr<const Layout>& shared_layout() const { return layout_; }

  std::size_t size() const { return values_.size(); }
  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  // Segment of the i-th tensor in layout order.
  std::span<const double> segment(std::size_t i) const;
  std::span<double> segment(std::size_t i);
  std::size_t offset(std::size_t i) const;

  template <class Other>
  bool compatible(const LayoutVector<Other>& other) const {
    return size() == other.size() &&
           (layout_ == other.shared_layout() || layout() == other.layout());
  }

  // Reinterpret as a vector of a different role with the same layout.
  template <class Other>
  LayoutVector<Other> as() const {
    return LayoutVector<Other>(layout_, values_);
  }

  double norm() const;

 private:
  std::shared_ptr<const Layout> layout_;
  std::vector<double> values_;
};

using ParamVector = LayoutVector<ParamTag>;
using GradVector = LayoutVector<GradTag>;

extern template class LayoutVector<ParamTag>;
extern template class LayoutVector<GradTag>;

std::size_t layout_size(const Layout& layout);

ParamVector flatten(const std::vector<Tensor>& tensors);
ParamVector flatten(const std::vector<Tensor>& tensors, std::shared_ptr<const Layout> layout);
std::vector<Tensor> unflatten(const ParamVector& params);

// a*x + y; operands are left untouched.
template <class X, class Y>
LayoutVector<Y> axpy(double a, const LayoutVector<X>& x, const LayoutVector<Y>& y) {
  if (!x.compatible(y)) throw Error(ErrorKind::Layout, "axpy: layout mismatch");
  LayoutVector<Y> out = y;
  auto dst = out.values();
  auto src = x.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = a * src[i] + dst[i];
  return out;
}

// In-place y += a*x, same arithmetic as axpy.
template <class X, class Y>
void axpy_inplace(double a, const LayoutVector<X>& x, LayoutVector<Y>& y) {
  if (!x.compatible(y)) throw Error(ErrorKind::Layout, "axpy: layout mismatch");
  auto dst = y.values();
  auto src = x.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = a * src[i] + dst[i];
}

// Row-major dense matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
};

struct Batch {
  Matrix features;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  void validate(int num_classes) const;
};

struct LossGrad {
  double loss = 0.0;
  Matrix dlogits;
};

// Mean softmax cross-entropy and its gradient with respect to the logits.
LossGrad softmax_cross_entropy(const Matrix& logits, std::span<const int> labels);

using ScalarFn = std::function<double(const ParamVector&)>;

inline constexpr double kDefaultFdStep = 1e-4;

// Central differences over every coordinate.
GradVector finite_difference_gradient(const ScalarFn& f, const ParamVector& theta,
                                      double h = kDefaultFdStep);

// Central differences over a subset of coordinates; result[i] pairs with coords[i].
std::vector<double> finite_difference_gradient(const ScalarFn& f, const ParamVector& theta,
                                               std::span<const std::size_t> coords,
                                               double h = kDefaultFdStep);

// Richardson-extrapolated central differences: (4 D(h/2) - D(h)) / 3.
// Cancels the h^2 truncation term that dominates for sharply curved losses.
std::vector<double> extrapolated_difference_gradient(const ScalarFn& f, const ParamVector& theta,
                                                     std::span<const std::size_t> coords,
                                                     double h = kDefaultFdStep);

// ||a - b|| / max(||a||, ||b||), 0 when both are zero.
double relative_error(std::span<const double> a, std::span<const double> b);

}  // namespace fkb::numkit
