#pragma once

#include <cmath>
#include <cstddef>
#include <memory>
#include <numeric>
#include <sstream>
#include <utility>
#include <vector>

#include "flowcast/common.hpp"

namespace flowcast {

/// Allocator pinning every buffer to one alignment class. Vectorized kernels
/// (Eigen) choose summation groupings by pointer alignment; uniform alignment
/// keeps results bit-identical across allocations and across runs.
template <typename T, std::size_t Align>
struct AlignedAllocator {
  using value_type = T;
  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U, Align>&) {}

  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t(Align)));
  }
  void deallocate(T* p, std::size_t n) {
    ::operator delete(p, n * sizeof(T), std::align_val_t(Align));
  }
  // Default (argument-free) construction leaves elements uninitialized so
  // buffers that are fully overwritten skip the fill pass; fill and copy
  // construction behave as usual.
  template <class U>
  void construct(U* p) noexcept {
    ::new (static_cast<void*>(p)) U;
  }
  bool operator==(const AlignedAllocator&) const { return true; }
  bool operator!=(const AlignedAllocator&) const { return false; }
  template <class U>
  struct rebind {
    using other = AlignedAllocator<U, Align>;
  };
};

using AlignedDoubles = std::vector<double, AlignedAllocator<double, 64>>;

/// Dense row-major tensor of 64-bit floats. Storage is shared copy-on-write,
/// so reshapes and value-semantic copies are cheap; mutation detaches.
class Tensor {
 public:
  Tensor() : data_(std::make_shared<AlignedDoubles>()) {}

  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0)
      : shape_(std::move(shape)),
        data_(std::make_shared<AlignedDoubles>(count(shape_), fill)) {}

  static Tensor from(std::vector<std::size_t> shape, const std::vector<double>& values) {
    if (count(shape) != values.size()) {
      throw ShapeError("Tensor::from: shape " + shape_string(shape) + " expects " +
                       std::to_string(count(shape)) + " values, got " +
                       std::to_string(values.size()));
    }
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::make_shared<AlignedDoubles>(values.begin(), values.end());
    return t;
  }

  /// Storage for outputs that every element of gets written; skips the zero
  /// fill. Reading before writing is undefined.
  static Tensor uninitialized(std::vector<std::size_t> shape) {
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::make_shared<AlignedDoubles>(count(t.shape_));
    return t;
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_->size(); }
  bool empty() const { return data_->empty(); }

  const double* data() const { return data_->data(); }

  double* mutable_data() {
    detach();
    return data_->data();
  }

  double operator[](std::size_t i) const { return (*data_)[i]; }

  double operator()(std::size_t i) const { return (*data_)[i]; }
  double operator()(std::size_t i, std::size_t j) const { return (*data_)[i * shape_[1] + j]; }
  double operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return (*data_)[(i * shape_[1] + j) * shape_[2] + k];
  }
  double operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
    return (*data_)[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }

  // Mutable element access for cold paths; hot loops should grab
  // mutable_data() once.
  double& at(std::size_t i) { return (*detached())[i]; }
  double& at(std::size_t i, std::size_t j) { return (*detached())[i * shape_[1] + j]; }
  double& at(std::size_t i, std::size_t j, std::size_t k) {
    return (*detached())[(i * shape_[1] + j) * shape_[2] + k];
  }
  double& at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
    return (*detached())[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }

  /// Same data, new shape. Shares storage.
  Tensor reshaped(std::vector<std::size_t> shape) const {
    if (count(shape) != size()) {
      throw ShapeError("reshape: cannot view " + shape_string(shape_) + " as " +
                       shape_string(shape));
    }
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = data_;
    return t;
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (double v : *data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  static std::size_t count(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return shape.empty() ? 0 : n;
  }

  static std::string shape_string(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (i) os << 'x';
      os << shape[i];
    }
    os << ']';
    return os.str();
  }

 private:
  void detach() {
    if (data_.use_count() > 1) data_ = std::make_shared<AlignedDoubles>(*data_);
  }
  AlignedDoubles* detached() {
    detach();
    return data_.get();
  }

  std::vector<std::size_t> shape_;
  std::shared_ptr<AlignedDoubles> data_;
};

inline std::string shape_string(const Tensor& t) { return Tensor::shape_string(t.shape()); }

inline bool approx_equal(const Tensor& a, const Tensor& b, double tol) {
  if (!a.same_shape(b)) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::abs(a[i] - b[i]) > tol) return false;
  }
  return true;
}

inline bool exactly_equal(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] != b[i]) return false;
  }
  return true;
}

}  // namespace flowcast
