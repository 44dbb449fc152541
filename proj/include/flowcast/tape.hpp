#pragma once

#include <Eigen/Dense>
#include <functional>
#include <utility>
#include <vector>

#include "flowcast/tensor.hpp"

namespace flowcast {

using ValueId = std::size_t;

namespace detail {
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

inline ConstMatMap as_matrix(const Tensor& t, std::size_t rows, std::size_t cols) {
  return ConstMatMap(t.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
inline MatMap as_matrix(Tensor& t, std::size_t rows, std::size_t cols) {
  return MatMap(t.mutable_data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

// Unfolds [M, T, C] into [(M*T2), (k*C)] so a valid temporal convolution
// becomes a single GEMM against the [k*C, Cout] kernel matrix.
inline RowMat im2col(const Tensor& x, std::size_t k) {
  const std::size_t m = x.dim(0), t = x.dim(1), c = x.dim(2);
  const std::size_t t2 = t - k + 1;
  RowMat out(m * t2, k * c);
  const double* src = x.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < t2; ++j) {
      double* row = out.data() + (i * t2 + j) * k * c;
      const double* base = src + (i * t + j) * c;
      std::copy(base, base + k * c, row);
    }
  }
  return out;
}
}  // namespace detail

/// Reverse-mode tape over a fixed set of primitives. A tape owns every
/// intermediate value of one forward pass; backward() replays the recorded
/// primitives in exact reverse order, accumulating one gradient slot per
/// value. Tapes are rebuilt per forward pass and never reused after
/// backward().
class Tape {
 public:
  Tape() { tune_allocator_once(); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Registers an input value. Parameters keep needs_grad = true; data and
  /// adjacency constants pass false so backward skips their gradient GEMMs.
  ValueId leaf(Tensor t, bool needs_grad = true) { return push(std::move(t), needs_grad); }
  ValueId constant(Tensor t) { return push(std::move(t), false); }

  const Tensor& value(ValueId id) const { return slots_.at(id).value; }

  /// Gradient of the last backward() root w.r.t. value `id`. Zeros if the
  /// value did not influence the root.
  const Tensor& grad(ValueId id) {
    Slot& s = slots_.at(id);
    if (!s.grad_live) {
      s.grad = Tensor(s.value.shape());
      s.grad_live = true;
    }
    return s.grad;
  }

  /// C[m,n] = A[m,k] * B[k,n].
  ValueId matmul(ValueId a, ValueId b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (ta.rank() != 2 || tb.rank() != 2 || ta.dim(1) != tb.dim(0)) {
      throw ShapeError("matmul: incompatible shapes " + shape_string(ta) + " x " + shape_string(tb));
    }
    const std::size_t m = ta.dim(0), k = ta.dim(1), n = tb.dim(1);
    Tensor out = Tensor::uninitialized({m, n});
    detail::as_matrix(out, m, n).noalias() = detail::as_matrix(ta, m, k) * detail::as_matrix(tb, k, n);
    ValueId id = push(std::move(out), needs(a) || needs(b));
    record([this, a, b, id, m, k, n] {
      const Tensor* g = grad_if_live(id);
      if (!g) return;
      auto gm = detail::as_matrix(*g, m, n);
      if (needs(a)) {
        detail::as_matrix(grad_buf(a), m, k).noalias() += gm * detail::as_matrix(value(b), k, n).transpose();
      }
      if (needs(b)) {
        detail::as_matrix(grad_buf(b), k, n).noalias() += detail::as_matrix(value(a), m, k).transpose() * gm;
      }
    });
    return id;
  }

  /// Valid (no padding) temporal convolution, applied independently per
  /// leading row: x[M, T, Cin] * kernel[k, Cin, Cout] + bias[Cout]
  /// -> [M, T-k+1, Cout].
  ValueId conv1d_time(ValueId x, ValueId kernel, ValueId bias) {
    const Tensor& tx = value(x);
    const Tensor& tk = value(kernel);
    const Tensor& tb = value(bias);
    if (tx.rank() != 3 || tk.rank() != 3 || tb.rank() != 1) {
      throw ShapeError("conv1d_time: expected x[MxTxC], kernel[kxCxC'], bias[C'], got " +
                       shape_string(tx) + ", " + shape_string(tk) + ", " + shape_string(tb));
    }
    const std::size_t m = tx.dim(0), t = tx.dim(1), cin = tx.dim(2);
    const std::size_t k = tk.dim(0), cout = tk.dim(2);
    if (k < 1 || tk.dim(1) != cin || tb.dim(0) != cout) {
      throw ShapeError("conv1d_time: kernel " + shape_string(tk) + " does not match input " +
                       shape_string(tx) + " and bias " + shape_string(tb));
    }
    if (t < k) {
      throw ShapeError("conv1d_time: time length " + std::to_string(t) +
                       " shorter than kernel length " + std::to_string(k));
    }
    const std::size_t t2 = t - k + 1;
    detail::RowMat cols = detail::im2col(tx, k);
    Tensor out = Tensor::uninitialized({m, t2, cout});
    auto om = detail::as_matrix(out, m * t2, cout);
    om.noalias() = cols * detail::as_matrix(tk, k * cin, cout);
    om.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(tb.data(), static_cast<Eigen::Index>(cout));
    ValueId id = push(std::move(out), needs(x) || needs(kernel) || needs(bias));
    record([this, x, kernel, bias, id, m, t, t2, k, cin, cout, cols = std::move(cols)] {
      const Tensor* g = grad_if_live(id);
      if (!g) return;
      auto gm = detail::as_matrix(*g, m * t2, cout);
      if (needs(bias)) {
        Eigen::Map<Eigen::RowVectorXd>(grad_buf(bias).mutable_data(), static_cast<Eigen::Index>(cout)) +=
            gm.colwise().sum();
      }
      if (needs(kernel)) {
        detail::as_matrix(grad_buf(kernel), k * cin, cout).noalias() += cols.transpose() * gm;
      }
      if (needs(x)) {
        detail::RowMat dcols = gm * detail::as_matrix(value(kernel), k * cin, cout).transpose();
        double* gx = grad_buf(x).mutable_data();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < t2; ++j) {
            const double* row = dcols.data() + (i * t2 + j) * k * cin;
            double* dst = gx + (i * t + j) * cin;
            for (std::size_t q = 0; q < k * cin; ++q) dst[q] += row[q];
          }
        }
      }
    });
    return id;
  }

  /// Elementwise max(0, x); subgradient 0 at exactly 0.
  ValueId relu(ValueId x) {
    const Tensor& tx = value(x);
    Tensor out = Tensor::uninitialized(tx.shape());
    double* o = out.mutable_data();
    const double* in = tx.data();
    for (std::size_t i = 0; i < tx.size(); ++i) o[i] = in[i] > 0.0 ? in[i] : 0.0;
    ValueId id = push(std::move(out), needs(x));
    record([this, x, id] {
      const Tensor* g = grad_if_live(id);
      if (!g || !needs(x)) return;
      const double* in = value(x).data();
      const double* gv = g->data();
      double* gx = grad_buf(x).mutable_data();
      for (std::size_t i = 0; i < g->size(); ++i) {
        if (in[i] > 0.0) gx[i] += gv[i];
      }
    });
    return id;
  }

  /// Affine map on the last axis: x[..., d] * w[d, K] + b[K].
  ValueId linear(ValueId x, ValueId w, ValueId b) {
    const Tensor& tx = value(x);
    const Tensor& tw = value(w);
    const Tensor& tb = value(b);
    if (tx.rank() < 2 || tw.rank() != 2 || tb.rank() != 1 || tx.shape().back() != tw.dim(0) ||
        tw.dim(1) != tb.dim(0)) {
      throw ShapeError("linear: incompatible shapes x" + shape_string(tx) + ", w" + shape_string(tw) +
                       ", b" + shape_string(tb));
    }
    const std::size_t d = tw.dim(0), kk = tw.dim(1);
    const std::size_t rows = tx.size() / d;
    std::vector<std::size_t> out_shape(tx.shape());
    out_shape.back() = kk;
    Tensor out = Tensor::uninitialized(out_shape);
    auto om = detail::as_matrix(out, rows, kk);
    om.noalias() = detail::as_matrix(tx, rows, d) * detail::as_matrix(tw, d, kk);
    om.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(tb.data(), static_cast<Eigen::Index>(kk));
    ValueId id = push(std::move(out), needs(x) || needs(w) || needs(b));
    record([this, x, w, b, id, rows, d, kk] {
      const Tensor* g = grad_if_live(id);
      if (!g) return;
      auto gm = detail::as_matrix(*g, rows, kk);
      if (needs(w)) {
        detail::as_matrix(grad_buf(w), d, kk).noalias() +=
            detail::as_matrix(value(x), rows, d).transpose() * gm;
      }
      if (needs(b)) {
        Eigen::Map<Eigen::RowVectorXd>(grad_buf(b).mutable_data(), static_cast<Eigen::Index>(kk)) +=
            gm.colwise().sum();
      }
      if (needs(x)) {
        detail::as_matrix(grad_buf(x), rows, d).noalias() +=
            gm * detail::as_matrix(value(w), d, kk).transpose();
      }
    });
    return id;
  }

  /// Mean of squared differences against a constant target.
  ValueId l2_loss(ValueId pred, Tensor target) {
    const Tensor& tp = value(pred);
    if (!tp.same_shape(target)) {
      throw ShapeError("l2_loss: prediction " + shape_string(tp) + " vs target " +
                       shape_string(target));
    }
    const std::size_t n = tp.size();
    if (n == 0) throw ShapeError("l2_loss: empty tensors");
    double acc = 0.0;
    const double* p = tp.data();
    const double* t = target.data();
    for (std::size_t i = 0; i < n; ++i) {
      const double d = p[i] - t[i];
      acc += d * d;
    }
    Tensor out = Tensor::from({1}, {acc / static_cast<double>(n)});
    ValueId id = push(std::move(out), needs(pred));
    record([this, pred, id, target = std::move(target), n] {
      const Tensor* g = grad_if_live(id);
      if (!g || !needs(pred)) return;
      const double scale = 2.0 * (*g)[0] / static_cast<double>(n);
      const double* p = value(pred).data();
      const double* t = target.data();
      double* gp = grad_buf(pred).mutable_data();
      for (std::size_t i = 0; i < n; ++i) gp[i] += scale * (p[i] - t[i]);
    });
    return id;
  }

  ValueId add(ValueId a, ValueId b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (!ta.same_shape(tb)) {
      throw ShapeError("add: shape mismatch " + shape_string(ta) + " vs " + shape_string(tb));
    }
    Tensor out = Tensor::uninitialized(ta.shape());
    double* o = out.mutable_data();
    const double* pa = ta.data();
    const double* pb = tb.data();
    for (std::size_t i = 0; i < ta.size(); ++i) o[i] = pa[i] + pb[i];
    ValueId id = push(std::move(out), needs(a) || needs(b));
    record([this, a, b, id] {
      const Tensor* g = grad_if_live(id);
      if (!g) return;
      const double* gv = g->data();
      if (needs(a)) {
        double* ga = grad_buf(a).mutable_data();
        for (std::size_t i = 0; i < g->size(); ++i) ga[i] += gv[i];
      }
      if (needs(b)) {
        double* gb = grad_buf(b).mutable_data();
        for (std::size_t i = 0; i < g->size(); ++i) gb[i] += gv[i];
      }
    });
    return id;
  }

  /// Concatenates along the last axis; leading dims must agree.
  ValueId concat_last(ValueId a, ValueId b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (ta.rank() != tb.rank() || ta.rank() < 1) {
      throw ShapeError("concat_last: rank mismatch " + shape_string(ta) + " vs " + shape_string(tb));
    }
    for (std::size_t i = 0; i + 1 < ta.rank(); ++i) {
      if (ta.dim(i) != tb.dim(i)) {
        throw ShapeError("concat_last: leading dims differ " + shape_string(ta) + " vs " +
                         shape_string(tb));
      }
    }
    const std::size_t da = ta.shape().back(), db = tb.shape().back();
    const std::size_t rows = ta.size() / std::max<std::size_t>(da, 1);
    std::vector<std::size_t> shape(ta.shape());
    shape.back() = da + db;
    Tensor out = Tensor::uninitialized(shape);
    double* o = out.mutable_data();
    const double* pa = ta.data();
    const double* pb = tb.data();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy(pa + r * da, pa + (r + 1) * da, o + r * (da + db));
      std::copy(pb + r * db, pb + (r + 1) * db, o + r * (da + db) + da);
    }
    ValueId id = push(std::move(out), needs(a) || needs(b));
    record([this, a, b, id, rows, da, db] {
      const Tensor* g = grad_if_live(id);
      if (!g) return;
      const double* gv = g->data();
      if (needs(a)) {
        double* ga = grad_buf(a).mutable_data();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t i = 0; i < da; ++i) ga[r * da + i] += gv[r * (da + db) + i];
      }
      if (needs(b)) {
        double* gb = grad_buf(b).mutable_data();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t i = 0; i < db; ++i) gb[r * db + i] += gv[r * (da + db) + da + i];
      }
    });
    return id;
  }

  /// Same data, new shape. Shares storage with the input value.
  ValueId reshape(ValueId x, std::vector<std::size_t> shape) {
    Tensor out = value(x).reshaped(std::move(shape));
    ValueId id = push(std::move(out), needs(x));
    record([this, x, id] {
      const Tensor* g = grad_if_live(id);
      if (!g || !needs(x)) return;
      const double* gv = g->data();
      double* gx = grad_buf(x).mutable_data();
      for (std::size_t i = 0; i < g->size(); ++i) gx[i] += gv[i];
    });
    return id;
  }

  /// Swaps the first two axes: [d0, d1, rest...] -> [d1, d0, rest...].
  ValueId swap01(ValueId x) {
    const Tensor& tx = value(x);
    if (tx.rank() < 2) throw ShapeError("swap01: needs rank >= 2, got " + shape_string(tx));
    const std::size_t d0 = tx.dim(0), d1 = tx.dim(1);
    const std::size_t rest = tx.size() / (d0 * d1);
    std::vector<std::size_t> shape(tx.shape());
    std::swap(shape[0], shape[1]);
    Tensor out = Tensor::uninitialized(shape);
    double* o = out.mutable_data();
    const double* in = tx.data();
    for (std::size_t i = 0; i < d0; ++i) {
      for (std::size_t j = 0; j < d1; ++j) {
        std::copy(in + (i * d1 + j) * rest, in + (i * d1 + j + 1) * rest, o + (j * d0 + i) * rest);
      }
    }
    ValueId id = push(std::move(out), needs(x));
    record([this, x, id, d0, d1, rest] {
      const Tensor* g = grad_if_live(id);
      if (!g || !needs(x)) return;
      const double* gv = g->data();
      double* gx = grad_buf(x).mutable_data();
      for (std::size_t j = 0; j < d1; ++j) {
        for (std::size_t i = 0; i < d0; ++i) {
          const double* src = gv + (j * d0 + i) * rest;
          double* dst = gx + (i * d1 + j) * rest;
          for (std::size_t q = 0; q < rest; ++q) dst[q] += src[q];
        }
      }
    });
    return id;
  }

  /// Sum of all elements, as a scalar value.
  ValueId sum(ValueId x) {
    const Tensor& tx = value(x);
    double acc = 0.0;
    const double* in = tx.data();
    for (std::size_t i = 0; i < tx.size(); ++i) acc += in[i];
    ValueId id = push(Tensor::from({1}, {acc}), needs(x));
    record([this, x, id] {
      const Tensor* g = grad_if_live(id);
      if (!g || !needs(x)) return;
      const double g0 = (*g)[0];
      double* gx = grad_buf(x).mutable_data();
      for (std::size_t i = 0; i < grad_buf(x).size(); ++i) gx[i] += g0;
    });
    return id;
  }

  /// Seeds d(root)/d(root) = 1 and replays recorded primitives in reverse
  /// application order. Forward values are never mutated.
  void backward(ValueId root) {
    if (ran_backward_) throw ValidationError("Tape::backward: tape already consumed");
    const Tensor& r = value(root);
    if (r.size() != 1) {
      throw ShapeError("Tape::backward: root must be scalar, got " + shape_string(r));
    }
    ran_backward_ = true;
    grad_buf(root).at(0) = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Slot {
    Tensor value;
    Tensor grad;
    bool needs_grad = false;
    bool grad_live = false;
  };

  bool needs(ValueId id) const { return slots_[id].needs_grad; }

  Tensor& grad_buf(ValueId id) {
    Slot& s = slots_[id];
    if (!s.grad_live) {
      s.grad = Tensor(s.value.shape());
      s.grad_live = true;
    }
    return s.grad;
  }

  const Tensor* grad_if_live(ValueId id) const {
    const Slot& s = slots_[id];
    return s.grad_live ? &s.grad : nullptr;
  }

  ValueId push(Tensor v, bool needs_grad) {
    slots_.push_back(Slot{std::move(v), Tensor(), needs_grad, false});
    return slots_.size() - 1;
  }

  template <typename F>
  void record(F&& f) {
    nodes_.emplace_back(std::forward<F>(f));
  }

  std::vector<Slot> slots_;
  std::vector<std::function<void()>> nodes_;
  bool ran_backward_ = false;
};

}  // namespace flowcast
