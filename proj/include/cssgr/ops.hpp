#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <string>
#include <vector>

#include "cssgr/tensor.hpp"

// Differentiable dense-tensor ops. Every op computes its value eagerly and,
// when an active tape sees a gradient path through any input, records one
// adjoint step. Adjoints accumulate (+=) into input gradient buffers and
// clear the output buffer once it has been consumed.

namespace cssgr {

namespace detail {

inline Tape* tape_for(std::initializer_list<const Tensor*> inputs) {
  Tape* t = TapeScope::active();
  if (!t) return nullptr;
  bool any = false;
  for (const Tensor* in : inputs) {
    auto* n = in->raw();
    if (n->tape && n->tape != t)
      fail("autodiff", "tensor was produced on a different tape");
    any = any || n->grad_path;
  }
  return any ? t : nullptr;
}

inline void mark_output(Tensor& out, Tape* t) {
  out.raw()->tape = t;
  out.raw()->grad_path = true;
}

using NodePtr = std::shared_ptr<TensorNode>;

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    fail("shape",
         "matmul: incompatible shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const std::size_t p = a.dim(0), q = a.dim(1), r = b.dim(1);
  Tensor out(Shape{p, r});
  {
    const double* A = a.data().data();
    const double* B = b.data().data();
    double* C = out.data().data();
    for (std::size_t i = 0; i < p; ++i)
      for (std::size_t k = 0; k < q; ++k) {
        const double aik = A[i * q + k];
        const double* Bk = B + k * r;
        double* Ci = C + i * r;
        for (std::size_t j = 0; j < r; ++j) Ci[j] += aik * Bk[j];
      }
  }
  if (Tape* t = detail::tape_for({&a, &b})) {
    detail::mark_output(out, t);
    auto an = a.node(), bn = b.node(), on = out.node();
    t->record([an, bn, on, p, q, r] {
      if (on->grad.empty()) return;
      const double* G = on->grad.data();
      if (an->grad_path) {
        an->ensure_grad();
        const double* B = bn->data.data();
        double* dA = an->grad.data();
        // dA[i,k] += sum_j G[i,j] B[k,j]
        for (std::size_t i = 0; i < p; ++i)
          for (std::size_t k = 0; k < q; ++k) {
            const double* Gi = G + i * r;
            const double* Bk = B + k * r;
            double s = 0.0;
            for (std::size_t j = 0; j < r; ++j) s += Gi[j] * Bk[j];
            dA[i * q + k] += s;
          }
      }
      if (bn->grad_path) {
        bn->ensure_grad();
        const double* A = an->data.data();
        double* dB = bn->grad.data();
        // dB[k,j] += sum_i A[i,k] G[i,j]
        for (std::size_t i = 0; i < p; ++i)
          for (std::size_t k = 0; k < q; ++k) {
            const double aik = A[i * q + k];
            const double* Gi = G + i * r;
            double* dBk = dB + k * r;
            for (std::size_t j = 0; j < r; ++j) dBk[j] += aik * Gi[j];
          }
      }
      on->grad.clear();
    });
  }
  return out;
}

// y = A x, column convention (A is [p x q], x is [q]).
inline Tensor matvec(const Tensor& a, const Tensor& x) {
  if (a.rank() != 2 || x.rank() != 1 || a.dim(1) != x.dim(0))
    fail("shape",
         "matvec: incompatible shapes " + shape_str(a.shape()) + " x " + shape_str(x.shape()));
  const std::size_t p = a.dim(0), q = a.dim(1);
  Tensor out(Shape{p});
  {
    const double* A = a.data().data();
    const double* X = x.data().data();
    for (std::size_t i = 0; i < p; ++i) {
      const double* Ai = A + i * q;
      double s = 0.0;
      for (std::size_t k = 0; k < q; ++k) s += Ai[k] * X[k];
      out.at(i) = s;
    }
  }
  if (Tape* t = detail::tape_for({&a, &x})) {
    detail::mark_output(out, t);
    auto an = a.node(), xn = x.node(), on = out.node();
    t->record([an, xn, on, p, q] {
      if (on->grad.empty()) return;
      const double* G = on->grad.data();
      if (an->grad_path) {
        an->ensure_grad();
        double* dA = an->grad.data();
        const double* X = xn->data.data();
        for (std::size_t i = 0; i < p; ++i)
          for (std::size_t k = 0; k < q; ++k) dA[i * q + k] += G[i] * X[k];
      }
      if (xn->grad_path) {
        xn->ensure_grad();
        double* dX = xn->grad.data();
        const double* A = an->data.data();
        for (std::size_t i = 0; i < p; ++i)
          for (std::size_t k = 0; k < q; ++k) dX[k] += A[i * q + k] * G[i];
      }
      on->grad.clear();
    });
  }
  return out;
}

// y = x W, row convention (x is [q], W is [q x r]).
inline Tensor vecmat(const Tensor& x, const Tensor& w) {
  if (x.rank() != 1 || w.rank() != 2 || x.dim(0) != w.dim(0))
    fail("shape",
         "vecmat: incompatible shapes " + shape_str(x.shape()) + " x " + shape_str(w.shape()));
  const std::size_t q = w.dim(0), r = w.dim(1);
  Tensor out(Shape{r});
  {
    const double* X = x.data().data();
    const double* W = w.data().data();
    double* Y = out.data().data();
    for (std::size_t k = 0; k < q; ++k) {
      const double xk = X[k];
      const double* Wk = W + k * r;
      for (std::size_t j = 0; j < r; ++j) Y[j] += xk * Wk[j];
    }
  }
  if (Tape* t = detail::tape_for({&x, &w})) {
    detail::mark_output(out, t);
    auto xn = x.node(), wn = w.node(), on = out.node();
    t->record([xn, wn, on, q, r] {
      if (on->grad.empty()) return;
      const double* G = on->grad.data();
      if (xn->grad_path) {
        xn->ensure_grad();
        const double* W = wn->data.data();
        double* dX = xn->grad.data();
        for (std::size_t k = 0; k < q; ++k) {
          const double* Wk = W + k * r;
          double s = 0.0;
          for (std::size_t j = 0; j < r; ++j) s += Wk[j] * G[j];
          dX[k] += s;
        }
      }
      if (wn->grad_path) {
        wn->ensure_grad();
        const double* X = xn->data.data();
        double* dW = wn->grad.data();
        for (std::size_t k = 0; k < q; ++k) {
          const double xk = X[k];
          double* dWk = dW + k * r;
          for (std::size_t j = 0; j < r; ++j) dWk[j] += xk * G[j];
        }
      }
      on->grad.clear();
    });
  }
  return out;
}

inline Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) fail("shape", "transpose expects a matrix, got " + shape_str(a.shape()));
  const std::size_t p = a.dim(0), q = a.dim(1);
  Tensor out(Shape{q, p});
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < q; ++j) out.at(j, i) = a.at(i, j);
  if (Tape* t = detail::tape_for({&a})) {
    detail::mark_output(out, t);
    auto an = a.node(), on = out.node();
    t->record([an, on, p, q] {
      if (on->grad.empty()) return;
      an->ensure_grad();
      for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = 0; j < q; ++j) an->grad[i * q + j] += on->grad[j * p + i];
      on->grad.clear();
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

namespace detail {

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    fail("shape", std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                      shape_str(b.shape()));
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "add");
  Tensor out(a.shape());
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) out.at(i) = a.at(i) + b.at(i);
  if (Tape* t = detail::tape_for({&a, &b})) {
    detail::mark_output(out, t);
    auto an = a.node(), bn = b.node(), on = out.node();
    t->record([an, bn, on, n] {
      if (on->grad.empty()) return;
      if (an->grad_path) {
        an->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) an->grad[i] += on->grad[i];
      }
      if (bn->grad_path) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) bn->grad[i] += on->grad[i];
      }
      on->grad.clear();
    });
  }
  return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "sub");
  Tensor out(a.shape());
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) out.at(i) = a.at(i) - b.at(i);
  if (Tape* t = detail::tape_for({&a, &b})) {
    detail::mark_output(out, t);
    auto an = a.node(), bn = b.node(), on = out.node();
    t->record([an, bn, on, n] {
      if (on->grad.empty()) return;
      if (an->grad_path) {
        an->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) an->grad[i] += on->grad[i];
      }
      if (bn->grad_path) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) bn->grad[i] -= on->grad[i];
      }
      on->grad.clear();
    });
  }
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "mul");
  Tensor out(a.shape());
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) out.at(i) = a.at(i) * b.at(i);
  if (Tape* t = detail::tape_for({&a, &b})) {
    detail::mark_output(out, t);
    auto an = a.node(), bn = b.node(), on = out.node();
    t->record([an, bn, on, n] {
      if (on->grad.empty()) return;
      if (an->grad_path) {
        an->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) an->grad[i] += on->grad[i] * bn->data[i];
      }
      if (bn->grad_path) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) bn->grad[i] += on->grad[i] * an->data[i];
      }
      on->grad.clear();
    });
  }
  return out;
}

inline Tensor scale(const Tensor& a, double c) {
  Tensor out(a.shape());
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) out.at(i) = a.at(i) * c;
  if (Tape* t = detail::tape_for({&a})) {
    detail::mark_output(out, t);
    auto an = a.node(), on = out.node();
    t->record([an, on, n, c] {
      if (on->grad.empty()) return;
      an->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) an->grad[i] += on->grad[i] * c;
      on->grad.clear();
    });
  }
  return out;
}

// out = s * a where s is a learnable scalar tensor.
inline Tensor scale_by(const Tensor& a, const Tensor& s) {
  if (s.numel() != 1)
    fail("shape", "scale_by: scale must be a scalar tensor, got " + shape_str(s.shape()));
  Tensor out(a.shape());
  const std::size_t n = a.numel();
  const double sv = s.at(0);
  for (std::size_t i = 0; i < n; ++i) out.at(i) = a.at(i) * sv;
  if (Tape* t = detail::tape_for({&a, &s})) {
    detail::mark_output(out, t);
    auto an = a.node(), sn = s.node(), on = out.node();
    t->record([an, sn, on, n] {
      if (on->grad.empty()) return;
      const double sv = sn->data[0];
      if (an->grad_path) {
        an->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) an->grad[i] += on->grad[i] * sv;
      }
      if (sn->grad_path) {
        sn->ensure_grad();
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) acc += on->grad[i] * an->data[i];
        sn->grad[0] += acc;
      }
      on->grad.clear();
    });
  }
  return out;
}

// Optional forward-pass instrumentation: records how close the computation
// comes to non-differentiable decision points (relu kinks, similarity
// thresholds), so finite-difference verification can reject inputs whose
// derivative would be ill-defined at the probe scale.
struct NumericWatch {
  double min_relu_margin = std::numeric_limits<double>::infinity();
  double min_threshold_margin = std::numeric_limits<double>::infinity();

  static NumericWatch*& active() {
    thread_local NumericWatch* current = nullptr;
    return current;
  }

  struct Scope {
    explicit Scope(NumericWatch& w) : previous_(active()) { active() = &w; }
    ~Scope() { active() = previous_; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    NumericWatch* previous_;
  };
};

// Subgradient at exactly 0 is 0.
inline Tensor relu(const Tensor& a) {
  Tensor out(a.shape());
  const std::size_t n = a.numel();
  if (NumericWatch* w = NumericWatch::active())
    for (std::size_t i = 0; i < n; ++i)
      w->min_relu_margin = std::min(w->min_relu_margin, std::fabs(a.at(i)));
  for (std::size_t i = 0; i < n; ++i) out.at(i) = a.at(i) > 0.0 ? a.at(i) : 0.0;
  if (Tape* t = detail::tape_for({&a})) {
    detail::mark_output(out, t);
    auto an = a.node(), on = out.node();
    t->record([an, on, n] {
      if (on->grad.empty()) return;
      an->ensure_grad();
      for (std::size_t i = 0; i < n; ++i)
        if (an->data[i] > 0.0) an->grad[i] += on->grad[i];
      on->grad.clear();
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions and reshaping
// ---------------------------------------------------------------------------

inline Tensor mean(const Tensor& a, std::size_t axis) {
  if (axis >= a.rank())
    fail("shape", "mean: axis " + std::to_string(axis) + " out of range for " +
                      shape_str(a.shape()));
  if (a.rank() == 1) {
    const std::size_t n = a.dim(0);
    if (n == 0) fail("contract", "mean over an empty axis");
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += a.at(i);
    Tensor out = Tensor::scalar(s / static_cast<double>(n));
    if (Tape* t = detail::tape_for({&a})) {
      detail::mark_output(out, t);
      auto an = a.node(), on = out.node();
      t->record([an, on, n] {
        if (on->grad.empty()) return;
        an->ensure_grad();
        const double g = on->grad[0] / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) an->grad[i] += g;
        on->grad.clear();
      });
    }
    return out;
  }
  if (a.rank() != 2) fail("shape", "mean supports rank 1 and 2, got " + shape_str(a.shape()));
  const std::size_t r = a.dim(0), c = a.dim(1);
  if (a.dim(axis) == 0) fail("contract", "mean over an empty axis");
  Tensor out(axis == 0 ? Shape{c} : Shape{r});
  if (axis == 0) {
    for (std::size_t j = 0; j < c; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < r; ++i) s += a.at(i, j);
      out.at(j) = s / static_cast<double>(r);
    }
  } else {
    for (std::size_t i = 0; i < r; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < c; ++j) s += a.at(i, j);
      out.at(i) = s / static_cast<double>(c);
    }
  }
  if (Tape* t = detail::tape_for({&a})) {
    detail::mark_output(out, t);
    auto an = a.node(), on = out.node();
    t->record([an, on, r, c, axis] {
      if (on->grad.empty()) return;
      an->ensure_grad();
      if (axis == 0) {
        const double inv = 1.0 / static_cast<double>(r);
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) an->grad[i * c + j] += on->grad[j] * inv;
      } else {
        const double inv = 1.0 / static_cast<double>(c);
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) an->grad[i * c + j] += on->grad[i] * inv;
      }
      on->grad.clear();
    });
  }
  return out;
}

inline Tensor sum_all(const Tensor& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += a.at(i);
  Tensor out = Tensor::scalar(s);
  if (Tape* t = detail::tape_for({&a})) {
    detail::mark_output(out, t);
    auto an = a.node(), on = out.node();
    const std::size_t n = a.numel();
    t->record([an, on, n] {
      if (on->grad.empty()) return;
      an->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) an->grad[i] += on->grad[0];
      on->grad.clear();
    });
  }
  return out;
}

inline Tensor reshape(const Tensor& a, Shape new_shape) {
  if (shape_numel(new_shape) != a.numel())
    fail("shape", "reshape: " + shape_str(a.shape()) + " cannot become " + shape_str(new_shape));
  Tensor out(new_shape);
  out.data() = a.data();
  if (Tape* t = detail::tape_for({&a})) {
    detail::mark_output(out, t);
    auto an = a.node(), on = out.node();
    const std::size_t n = a.numel();
    t->record([an, on, n] {
      if (on->grad.empty()) return;
      an->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) an->grad[i] += on->grad[i];
      on->grad.clear();
    });
  }
  return out;
}

inline Tensor as_row(const Tensor& v) {
  if (v.rank() != 1) fail("shape", "as_row expects a vector, got " + shape_str(v.shape()));
  return reshape(v, Shape{1, v.dim(0)});
}

inline Tensor concat(const std::vector<Tensor>& xs, std::size_t axis) {
  if (xs.empty()) fail("contract", "concat of an empty list");
  const std::size_t rank = xs[0].rank();
  for (const Tensor& x : xs)
    if (x.rank() != rank) fail("shape", "concat: mixed ranks");
  if (rank == 1) {
    if (axis != 0) fail("shape", "concat: axis out of range for vectors");
    std::size_t total = 0;
    for (const Tensor& x : xs) total += x.dim(0);
    Tensor out(Shape{total});
    std::size_t off = 0;
    for (const Tensor& x : xs) {
      std::copy(x.data().begin(), x.data().end(), out.data().begin() + off);
      off += x.dim(0);
    }
    std::vector<const Tensor*> ptrs;
    for (const Tensor& x : xs) ptrs.push_back(&x);
    if (Tape* t = TapeScope::active()) {
      bool any = false;
      for (const Tensor& x : xs) any = any || x.raw()->grad_path;
      if (any) {
        detail::mark_output(out, t);
        std::vector<detail::NodePtr> ins;
        for (const Tensor& x : xs) ins.push_back(x.node());
        auto on = out.node();
        t->record([ins, on] {
          if (on->grad.empty()) return;
          std::size_t off = 0;
          for (const auto& in : ins) {
            if (in->grad_path) {
              in->ensure_grad();
              for (std::size_t i = 0; i < in->data.size(); ++i)
                in->grad[i] += on->grad[off + i];
            }
            off += in->data.size();
          }
          on->grad.clear();
        });
      }
    }
    return out;
  }
  if (rank != 2 || axis > 1) fail("shape", "concat supports rank 1 and 2, axis 0 or 1");
  if (axis == 0) {
    const std::size_t c = xs[0].dim(1);
    std::size_t total = 0;
    for (const Tensor& x : xs) {
      if (x.dim(1) != c) fail("shape", "concat axis 0: column mismatch");
      total += x.dim(0);
    }
    Tensor out(Shape{total, c});
    std::size_t off = 0;
    for (const Tensor& x : xs) {
      std::copy(x.data().begin(), x.data().end(), out.data().begin() + off * c);
      off += x.dim(0);
    }
    if (Tape* t = TapeScope::active()) {
      bool any = false;
      for (const Tensor& x : xs) any = any || x.raw()->grad_path;
      if (any) {
        detail::mark_output(out, t);
        std::vector<detail::NodePtr> ins;
        for (const Tensor& x : xs) ins.push_back(x.node());
        auto on = out.node();
        t->record([ins, on] {
          if (on->grad.empty()) return;
          std::size_t off = 0;
          for (const auto& in : ins) {
            if (in->grad_path) {
              in->ensure_grad();
              for (std::size_t i = 0; i < in->data.size(); ++i)
                in->grad[i] += on->grad[off + i];
            }
            off += in->data.size();
          }
          on->grad.clear();
        });
      }
    }
    return out;
  }
  // axis == 1: shared row count, columns appended in order.
  const std::size_t r = xs[0].dim(0);
  std::size_t total = 0;
  for (const Tensor& x : xs) {
    if (x.dim(0) != r) fail("shape", "concat axis 1: row mismatch");
    total += x.dim(1);
  }
  Tensor out(Shape{r, total});
  std::size_t coff = 0;
  for (const Tensor& x : xs) {
    const std::size_t xc = x.dim(1);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < xc; ++j) out.at(i, coff + j) = x.at(i, j);
    coff += xc;
  }
  if (Tape* t = TapeScope::active()) {
    bool any = false;
    for (const Tensor& x : xs) any = any || x.raw()->grad_path;
    if (any) {
      detail::mark_output(out, t);
      std::vector<detail::NodePtr> ins;
      std::vector<std::size_t> widths;
      for (const Tensor& x : xs) {
        ins.push_back(x.node());
        widths.push_back(x.dim(1));
      }
      auto on = out.node();
      t->record([ins, widths, on, r, total] {
        if (on->grad.empty()) return;
        std::size_t coff = 0;
        for (std::size_t k = 0; k < ins.size(); ++k) {
          const auto& in = ins[k];
          const std::size_t xc = widths[k];
          if (in->grad_path) {
            in->ensure_grad();
            for (std::size_t i = 0; i < r; ++i)
              for (std::size_t j = 0; j < xc; ++j)
                in->grad[i * xc + j] += on->grad[i * total + coff + j];
          }
          coff += xc;
        }
        on->grad.clear();
      });
    }
  }
  return out;
}

// Stacks k same-length vectors into a [k x d] matrix.
inline Tensor stack_rows(const std::vector<Tensor>& xs) {
  if (xs.empty()) fail("contract", "stack_rows of an empty list");
  const std::size_t d = xs[0].dim(0);
  for (const Tensor& x : xs)
    if (x.rank() != 1 || x.dim(0) != d) fail("shape", "stack_rows: rows must be equal-length vectors");
  Tensor out(Shape{xs.size(), d});
  for (std::size_t i = 0; i < xs.size(); ++i)
    std::copy(xs[i].data().begin(), xs[i].data().end(), out.data().begin() + i * d);
  if (Tape* t = TapeScope::active()) {
    bool any = false;
    for (const Tensor& x : xs) any = any || x.raw()->grad_path;
    if (any) {
      detail::mark_output(out, t);
      std::vector<detail::NodePtr> ins;
      for (const Tensor& x : xs) ins.push_back(x.node());
      auto on = out.node();
      t->record([ins, on, d] {
        if (on->grad.empty()) return;
        for (std::size_t i = 0; i < ins.size(); ++i) {
          if (!ins[i]->grad_path) continue;
          ins[i]->ensure_grad();
          for (std::size_t j = 0; j < d; ++j) ins[i]->grad[j] += on->grad[i * d + j];
        }
        on->grad.clear();
      });
    }
  }
  return out;
}

inline Tensor slice_rows(const Tensor& a, std::size_t start, std::size_t count) {
  if (a.rank() != 2 || start + count > a.dim(0))
    fail("shape", "slice_rows: range [" + std::to_string(start) + ", " +
                      std::to_string(start + count) + ") out of " + shape_str(a.shape()));
  const std::size_t c = a.dim(1);
  Tensor out(Shape{count, c});
  std::copy(a.data().begin() + start * c, a.data().begin() + (start + count) * c,
            out.data().begin());
  if (Tape* t = detail::tape_for({&a})) {
    detail::mark_output(out, t);
    auto an = a.node(), on = out.node();
    t->record([an, on, start, count, c] {
      if (on->grad.empty()) return;
      an->ensure_grad();
      for (std::size_t i = 0; i < count * c; ++i) an->grad[start * c + i] += on->grad[i];
      on->grad.clear();
    });
  }
  return out;
}

inline Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t count) {
  if (a.rank() != 2 || start + count > a.dim(1))
    fail("shape", "slice_cols: range [" + std::to_string(start) + ", " +
                      std::to_string(start + count) + ") out of " + shape_str(a.shape()));
  const std::size_t r = a.dim(0), c = a.dim(1);
  Tensor out(Shape{r, count});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < count; ++j) out.at(i, j) = a.at(i, start + j);
  if (Tape* t = detail::tape_for({&a})) {
    detail::mark_output(out, t);
    auto an = a.node(), on = out.node();
    t->record([an, on, r, c, start, count] {
      if (on->grad.empty()) return;
      an->ensure_grad();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < count; ++j)
          an->grad[i * c + start + j] += on->grad[i * count + j];
      on->grad.clear();
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Softmax family
// ---------------------------------------------------------------------------

namespace detail {

// One stabilized softmax row over the unmasked subset; zero elsewhere.
// mask == nullptr means everything is unmasked. Returns the unmasked count.
inline std::size_t softmax_row(const double* x, const std::uint8_t* mask, std::size_t n,
                               double* y) {
  std::size_t cnt = 0;
  double mx = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    if (mask && !mask[j]) continue;
    if (cnt == 0 || x[j] > mx) mx = x[j];
    ++cnt;
  }
  if (cnt == 0) {
    for (std::size_t j = 0; j < n; ++j) y[j] = 0.0;
    return 0;
  }
  double sum = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    if (mask && !mask[j]) {
      y[j] = 0.0;
    } else {
      y[j] = std::exp(x[j] - mx);
      sum += y[j];
    }
  }
  const double inv = 1.0 / sum;
  for (std::size_t j = 0; j < n; ++j) y[j] *= inv;
  return cnt;
}

// dx_j += y_j * (g_j - sum_k g_k y_k) over the unmasked subset.
inline void softmax_row_adjoint(const double* y, const double* g, const std::uint8_t* mask,
                                std::size_t n, double* dx) {
  double dot = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    if (mask && !mask[j]) continue;
    dot += g[j] * y[j];
  }
  for (std::size_t j = 0; j < n; ++j) {
    if (mask && !mask[j]) continue;
    dx[j] += y[j] * (g[j] - dot);
  }
}

}  // namespace detail

// Stabilized softmax. Rank 1 with axis 0, or rank 2 along axis 1 (rows).
inline Tensor softmax(const Tensor& x, std::size_t axis) {
  if (x.numel() == 0) fail("contract", "softmax over an empty axis");
  if (x.rank() == 1) {
    if (axis != 0) fail("shape", "softmax: axis out of range for " + shape_str(x.shape()));
    const std::size_t n = x.dim(0);
    Tensor out(Shape{n});
    detail::softmax_row(x.data().data(), nullptr, n, out.data().data());
    if (Tape* t = detail::tape_for({&x})) {
      detail::mark_output(out, t);
      auto xn = x.node(), on = out.node();
      t->record([xn, on, n] {
        if (on->grad.empty()) return;
        xn->ensure_grad();
        detail::softmax_row_adjoint(on->data.data(), on->grad.data(), nullptr, n,
                                    xn->grad.data());
        on->grad.clear();
      });
    }
    return out;
  }
  if (x.rank() != 2 || axis != 1)
    fail("shape", "softmax supports vectors (axis 0) and matrix rows (axis 1)");
  const std::size_t r = x.dim(0), c = x.dim(1);
  Tensor out(Shape{r, c});
  for (std::size_t i = 0; i < r; ++i)
    detail::softmax_row(x.data().data() + i * c, nullptr, c, out.data().data() + i * c);
  if (Tape* t = detail::tape_for({&x})) {
    detail::mark_output(out, t);
    auto xn = x.node(), on = out.node();
    t->record([xn, on, r, c] {
      if (on->grad.empty()) return;
      xn->ensure_grad();
      for (std::size_t i = 0; i < r; ++i)
        detail::softmax_row_adjoint(on->data.data() + i * c, on->grad.data() + i * c, nullptr,
                                    c, xn->grad.data() + i * c);
      on->grad.clear();
    });
  }
  return out;
}

// Row-wise softmax over the entries where mask is nonzero; masked-out entries
// are exactly 0 and rows with no unmasked entry come out all-zero. The mask
// is structural (no gradient flows through it).
inline Tensor masked_softmax(const Tensor& x, const std::vector<std::uint8_t>& mask) {
  if (x.rank() != 2) fail("shape", "masked_softmax expects a matrix, got " + shape_str(x.shape()));
  const std::size_t r = x.dim(0), c = x.dim(1);
  if (mask.size() != r * c) fail("shape", "masked_softmax: mask size mismatch");
  Tensor out(Shape{r, c});
  for (std::size_t i = 0; i < r; ++i)
    detail::softmax_row(x.data().data() + i * c, mask.data() + i * c, c,
                        out.data().data() + i * c);
  if (Tape* t = detail::tape_for({&x})) {
    detail::mark_output(out, t);
    auto xn = x.node(), on = out.node();
    t->record([xn, on, mask, r, c] {
      if (on->grad.empty()) return;
      xn->ensure_grad();
      for (std::size_t i = 0; i < r; ++i)
        detail::softmax_row_adjoint(on->data.data() + i * c, on->grad.data() + i * c,
                                    mask.data() + i * c, c, xn->grad.data() + i * c);
      on->grad.clear();
    });
  }
  return out;
}

// Mean over unmasked rows of -log softmax(logits)[row, target[row]].
inline Tensor nll_rows(const Tensor& logits, const std::vector<int>& targets,
                       const std::vector<std::uint8_t>& row_mask) {
  if (logits.rank() != 2) fail("shape", "nll_rows expects a logits matrix");
  const std::size_t k = logits.dim(0), v = logits.dim(1);
  if (targets.size() != k || row_mask.size() != k)
    fail("shape", "nll_rows: targets/mask length mismatch");
  std::size_t cnt = 0;
  double loss = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    if (!row_mask[i]) continue;
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= v)
      fail("contract", "nll_rows: target id " + std::to_string(targets[i]) +
                           " outside vocabulary of size " + std::to_string(v));
    const double* row = logits.data().data() + i * v;
    double mx = row[0];
    for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < v; ++j) sum += std::exp(row[j] - mx);
    loss += (mx + std::log(sum)) - row[targets[i]];
    ++cnt;
  }
  if (cnt == 0) fail("contract", "nll_rows: no unmasked positions");
  Tensor out = Tensor::scalar(loss / static_cast<double>(cnt));
  if (Tape* t = detail::tape_for({&logits})) {
    detail::mark_output(out, t);
    auto xn = logits.node(), on = out.node();
    t->record([xn, on, targets, row_mask, k, v, cnt] {
      if (on->grad.empty()) return;
      xn->ensure_grad();
      const double g = on->grad[0] / static_cast<double>(cnt);
      for (std::size_t i = 0; i < k; ++i) {
        if (!row_mask[i]) continue;
        const double* row = xn->data.data() + i * v;
        double* drow = xn->grad.data() + i * v;
        double mx = row[0];
        for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < v; ++j) sum += std::exp(row[j] - mx);
        const double inv = 1.0 / sum;
        for (std::size_t j = 0; j < v; ++j) {
          double p = std::exp(row[j] - mx) * inv;
          drow[j] += g * (p - (static_cast<std::size_t>(targets[i]) == j ? 1.0 : 0.0));
        }
      }
      on->grad.clear();
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Similarity, lookup, broadcasting, normalization
// ---------------------------------------------------------------------------

// Shared scalar kernel so graph construction and the differentiable op agree
// bit for bit. Either norm under 1e-12 yields similarity 0.
inline double cosine_raw(const double* a, const double* b, std::size_t n) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  na = std::sqrt(na);
  nb = std::sqrt(nb);
  if (na < 1e-12 || nb < 1e-12) return 0.0;
  return dot / (na * nb);
}

inline Tensor cosine(const Tensor& a, const Tensor& b) {
  if (a.rank() != 1 || b.rank() != 1 || a.dim(0) != b.dim(0))
    fail("shape",
         "cosine: length mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const std::size_t n = a.dim(0);
  double na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    na += a.at(i) * a.at(i);
    nb += b.at(i) * b.at(i);
  }
  na = std::sqrt(na);
  nb = std::sqrt(nb);
  if (na < 1e-12 || nb < 1e-12) return Tensor::scalar(0.0);  // constant, no gradient
  Tensor out = Tensor::scalar(cosine_raw(a.data().data(), b.data().data(), n));
  if (Tape* t = detail::tape_for({&a, &b})) {
    detail::mark_output(out, t);
    auto an = a.node(), bn = b.node(), on = out.node();
    t->record([an, bn, on, n, na, nb] {
      if (on->grad.empty()) return;
      const double g = on->grad[0];
      const double cos = on->data[0];
      if (an->grad_path) {
        an->ensure_grad();
        for (std::size_t i = 0; i < n; ++i)
          an->grad[i] += g * (bn->data[i] / (na * nb) - cos * an->data[i] / (na * na));
      }
      if (bn->grad_path) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < n; ++i)
          bn->grad[i] += g * (an->data[i] / (na * nb) - cos * bn->data[i] / (nb * nb));
      }
      on->grad.clear();
    });
  }
  return out;
}

// Embedding lookup: rows of `table` selected by id, gradients scatter-add back.
inline Tensor gather_rows(const Tensor& table, const std::vector<int>& ids) {
  if (table.rank() != 2) fail("shape", "gather_rows expects a matrix table");
  const std::size_t v = table.dim(0), d = table.dim(1);
  Tensor out(Shape{ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= v)
      fail("contract", "gather_rows: id " + std::to_string(ids[i]) + " outside table of " +
                           std::to_string(v) + " rows");
    std::copy(table.data().begin() + ids[i] * d, table.data().begin() + (ids[i] + 1) * d,
              out.data().begin() + i * d);
  }
  if (Tape* t = detail::tape_for({&table})) {
    detail::mark_output(out, t);
    auto tn = table.node(), on = out.node();
    t->record([tn, on, ids, d] {
      if (on->grad.empty()) return;
      tn->ensure_grad();
      for (std::size_t i = 0; i < ids.size(); ++i)
        for (std::size_t j = 0; j < d; ++j)
          tn->grad[ids[i] * d + j] += on->grad[i * d + j];
      on->grad.clear();
    });
  }
  return out;
}

// Adds vector v to every row of X.
inline Tensor add_row_broadcast(const Tensor& x, const Tensor& v) {
  if (x.rank() != 2 || v.rank() != 1 || x.dim(1) != v.dim(0))
    fail("shape", "add_row_broadcast: " + shape_str(x.shape()) + " + " + shape_str(v.shape()));
  const std::size_t r = x.dim(0), c = x.dim(1);
  Tensor out(Shape{r, c});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(i, j) = x.at(i, j) + v.at(j);
  if (Tape* t = detail::tape_for({&x, &v})) {
    detail::mark_output(out, t);
    auto xn = x.node(), vn = v.node(), on = out.node();
    t->record([xn, vn, on, r, c] {
      if (on->grad.empty()) return;
      if (xn->grad_path) {
        xn->ensure_grad();
        for (std::size_t i = 0; i < r * c; ++i) xn->grad[i] += on->grad[i];
      }
      if (vn->grad_path) {
        vn->ensure_grad();
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) vn->grad[j] += on->grad[i * c + j];
      }
      on->grad.clear();
    });
  }
  return out;
}

// Per-row layer normalization with learned gain and bias.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                         double eps = 1e-5) {
  if (x.rank() != 2 || gain.rank() != 1 || bias.rank() != 1 || gain.dim(0) != x.dim(1) ||
      bias.dim(0) != x.dim(1))
    fail("shape", "layer_norm: incompatible shapes");
  const std::size_t r = x.dim(0), c = x.dim(1);
  Tensor out(Shape{r, c});
  std::vector<double> xhat(r * c), inv_std(r);
  for (std::size_t i = 0; i < r; ++i) {
    const double* xi = x.data().data() + i * c;
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += xi[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (xi[j] - mu) * (xi[j] - mu);
    var /= static_cast<double>(c);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[i] = inv;
    for (std::size_t j = 0; j < c; ++j) {
      xhat[i * c + j] = (xi[j] - mu) * inv;
      out.at(i, j) = gain.at(j) * xhat[i * c + j] + bias.at(j);
    }
  }
  if (Tape* t = detail::tape_for({&x, &gain, &bias})) {
    detail::mark_output(out, t);
    auto xn = x.node(), gn = gain.node(), bn = bias.node(), on = out.node();
    t->record([xn, gn, bn, on, xhat = std::move(xhat), inv_std = std::move(inv_std), r, c] {
      if (on->grad.empty()) return;
      const double* G = on->grad.data();
      if (gn->grad_path) {
        gn->ensure_grad();
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) gn->grad[j] += G[i * c + j] * xhat[i * c + j];
      }
      if (bn->grad_path) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) bn->grad[j] += G[i * c + j];
      }
      if (xn->grad_path) {
        xn->ensure_grad();
        for (std::size_t i = 0; i < r; ++i) {
          double m1 = 0.0, m2 = 0.0;
          for (std::size_t j = 0; j < c; ++j) {
            const double dxh = G[i * c + j] * gn->data[j];
            m1 += dxh;
            m2 += dxh * xhat[i * c + j];
          }
          m1 /= static_cast<double>(c);
          m2 /= static_cast<double>(c);
          for (std::size_t j = 0; j < c; ++j) {
            const double dxh = G[i * c + j] * gn->data[j];
            xn->grad[i * c + j] += (dxh - m1 - xhat[i * c + j] * m2) * inv_std[i];
          }
        }
      }
      on->grad.clear();
    });
  }
  return out;
}

}  // namespace cssgr
