#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "msknet/common.hpp"

// Reverse-mode autodiff over dense double matrices. A Tape records one forward
// computation; backward() replays it in reverse, accumulating adjoints. Tapes
// are rebuilt every step: handles (Var) are plain indices into tape storage
// and never outlive their tape.
//
// Batched sequence data lives in "b-major" layout: a (B*S) x C matrix whose
// row b*S + s holds batch element b at timestep s. gather_rows() extracts one
// timestep across the batch; its backward is a scatter-add.

namespace msknet {

using Eigen::MatrixXd;

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

class Tape {
 public:
  Var input(MatrixXd value) {
    values_.push_back(std::move(value));
    backward_.emplace_back();
    return {static_cast<int>(values_.size()) - 1};
  }

  const MatrixXd& value(Var v) const { return values_[check(v)]; }
  const MatrixXd& grad(Var v) const { return grads_[check(v)]; }
  int size() const { return static_cast<int>(values_.size()); }

  // --- elementwise -------------------------------------------------------

  Var add(Var a, Var b) {
    same_shape(a, b);
    return unary2(value(a) + value(b), a, b, [](const MatrixXd& g) { return g; },
                  [](const MatrixXd& g) { return g; });
  }

  Var sub(Var a, Var b) {
    same_shape(a, b);
    return unary2(value(a) - value(b), a, b, [](const MatrixXd& g) { return g; },
                  [](const MatrixXd& g) { return (-g).eval(); });
  }

  Var mul(Var a, Var b) {
    same_shape(a, b);
    MatrixXd va = value(a), vb = value(b);
    return unary2(va.cwiseProduct(vb), a, b,
                  [vb](const MatrixXd& g) { return g.cwiseProduct(vb).eval(); },
                  [va](const MatrixXd& g) { return g.cwiseProduct(va).eval(); });
  }

  Var neg(Var a) {
    return unary(-value(a), a, [](const MatrixXd& g) { return (-g).eval(); });
  }

  Var scale(Var a, double s) {
    return unary(s * value(a), a, [s](const MatrixXd& g) { return (s * g).eval(); });
  }

  Var add_const(Var a, double c) {
    return unary(value(a).array() + c, a, [](const MatrixXd& g) { return g; });
  }

  Var square(Var a) {
    MatrixXd va = value(a);
    return unary(va.cwiseProduct(va), a,
                 [va](const MatrixXd& g) { return (2.0 * g.cwiseProduct(va)).eval(); });
  }

  Var sqrt_op(Var a) {
    MatrixXd out = value(a).cwiseSqrt();
    return unary(out, a, [out](const MatrixXd& g) {
      return (0.5 * g.cwiseQuotient(out)).eval();
    });
  }

  // Elementwise max(a, c). Subgradient at the kink is taken as 0.
  Var max_const(Var a, double c) {
    MatrixXd va = value(a);
    MatrixXd mask = (va.array() > c).cast<double>();
    return unary(va.cwiseMax(c), a,
                 [mask](const MatrixXd& g) { return g.cwiseProduct(mask).eval(); });
  }

  Var tanh_op(Var a) {
    MatrixXd out = value(a).array().tanh();
    return unary(out, a, [out](const MatrixXd& g) {
      return g.cwiseProduct((1.0 - out.array().square()).matrix()).eval();
    });
  }

  Var logistic(Var a) {
    MatrixXd out = (1.0 / (1.0 + (-value(a).array()).exp())).matrix();
    return unary(out, a, [out](const MatrixXd& g) {
      return g.cwiseProduct((out.array() * (1.0 - out.array())).matrix()).eval();
    });
  }

  Var sin_op(Var a) {
    MatrixXd va = value(a);
    return unary(va.array().sin(), a, [va](const MatrixXd& g) {
      return g.cwiseProduct(va.array().cos().matrix()).eval();
    });
  }

  Var cos_op(Var a) {
    MatrixXd va = value(a);
    return unary(va.array().cos(), a, [va](const MatrixXd& g) {
      return (-g.cwiseProduct(va.array().sin().matrix())).eval();
    });
  }

  // Exact (erf-based) GELU.
  Var gelu(Var a) {
    MatrixXd va = value(a);
    MatrixXd cdf = va.unaryExpr([](double x) { return 0.5 * (1.0 + std::erf(x / M_SQRT2)); });
    return unary(va.cwiseProduct(cdf), a, [va, cdf](const MatrixXd& g) {
      MatrixXd pdf = va.unaryExpr(
          [](double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI); });
      return g.cwiseProduct((cdf + va.cwiseProduct(pdf)).eval()).eval();
    });
  }

  // Row-wise softmax with max subtraction.
  Var softmax_rows(Var a) {
    MatrixXd va = value(a);
    MatrixXd out(va.rows(), va.cols());
    for (Eigen::Index r = 0; r < va.rows(); ++r) {
      Eigen::ArrayXd e = (va.row(r).array() - va.row(r).maxCoeff()).exp();
      out.row(r) = (e / e.sum()).matrix();
    }
    return unary(out, a, [out](const MatrixXd& g) {
      MatrixXd dx(g.rows(), g.cols());
      for (Eigen::Index r = 0; r < g.rows(); ++r) {
        double dot = g.row(r).dot(out.row(r));
        dx.row(r) = out.row(r).cwiseProduct((g.row(r).array() - dot).matrix());
      }
      return dx;
    });
  }

  // --- linear algebra ----------------------------------------------------

  Var matmul(Var a, Var b) {
    require(value(a).cols() == value(b).rows(), "matmul: inner dimensions differ");
    MatrixXd va = value(a), vb = value(b);
    return unary2(va * vb, a, b,
                  [vb](const MatrixXd& g) { return (g * vb.transpose()).eval(); },
                  [va](const MatrixXd& g) { return (va.transpose() * g).eval(); });
  }

  // a: R x C, bias: 1 x C broadcast over rows.
  Var add_rowvec(Var a, Var bias) {
    require(value(bias).rows() == 1 && value(bias).cols() == value(a).cols(),
            "add_rowvec: bias must be 1 x cols(a)");
    MatrixXd out = value(a);
    out.rowwise() += value(bias).row(0);
    return unary2(out, a, bias, [](const MatrixXd& g) { return g; },
                  [](const MatrixXd& g) { return MatrixXd(g.colwise().sum()); });
  }

  Var transpose(Var a) {
    return unary(value(a).transpose(), a,
                 [](const MatrixXd& g) { return g.transpose().eval(); });
  }

  // --- shape ops ---------------------------------------------------------

  Var concat_rows(Var a, Var b) {
    require(value(a).cols() == value(b).cols(), "concat_rows: column mismatch");
    Eigen::Index ra = value(a).rows(), rb = value(b).rows();
    MatrixXd out(ra + rb, value(a).cols());
    out.topRows(ra) = value(a);
    out.bottomRows(rb) = value(b);
    return unary2(out, a, b,
                  [ra](const MatrixXd& g) { return g.topRows(ra).eval(); },
                  [rb](const MatrixXd& g) { return g.bottomRows(rb).eval(); });
  }

  Var concat_cols(Var a, Var b) {
    require(value(a).rows() == value(b).rows(), "concat_cols: row mismatch");
    Eigen::Index ca = value(a).cols(), cb = value(b).cols();
    MatrixXd out(value(a).rows(), ca + cb);
    out.leftCols(ca) = value(a);
    out.rightCols(cb) = value(b);
    return unary2(out, a, b,
                  [ca](const MatrixXd& g) { return g.leftCols(ca).eval(); },
                  [cb](const MatrixXd& g) { return g.rightCols(cb).eval(); });
  }

  Var slice_rows(Var a, int r0, int n) {
    require(r0 >= 0 && n >= 0 && r0 + n <= value(a).rows(), "slice_rows: out of range");
    Eigen::Index rows = value(a).rows(), cols = value(a).cols();
    return unary(value(a).middleRows(r0, n), a, [r0, n, rows, cols](const MatrixXd& g) {
      MatrixXd da = MatrixXd::Zero(rows, cols);
      da.middleRows(r0, n) = g;
      return da;
    });
  }

  Var slice_cols(Var a, int c0, int n) {
    require(c0 >= 0 && n >= 0 && c0 + n <= value(a).cols(), "slice_cols: out of range");
    Eigen::Index rows = value(a).rows(), cols = value(a).cols();
    return unary(value(a).middleCols(c0, n), a, [c0, n, rows, cols](const MatrixXd& g) {
      MatrixXd da = MatrixXd::Zero(rows, cols);
      da.middleCols(c0, n) = g;
      return da;
    });
  }

  // out.row(i) = a.row(idx[i]); duplicate indices accumulate on backward.
  Var gather_rows(Var a, std::vector<int> idx) {
    Eigen::Index rows = value(a).rows(), cols = value(a).cols();
    MatrixXd out(static_cast<Eigen::Index>(idx.size()), cols);
    for (size_t i = 0; i < idx.size(); ++i) {
      require(idx[i] >= 0 && idx[i] < rows, "gather_rows: index out of range");
      out.row(static_cast<Eigen::Index>(i)) = value(a).row(idx[i]);
    }
    return unary(out, a, [idx, rows, cols](const MatrixXd& g) {
      MatrixXd da = MatrixXd::Zero(rows, cols);
      for (size_t i = 0; i < idx.size(); ++i)
        da.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
      return da;
    });
  }

  // --- reductions --------------------------------------------------------

  Var reduce_sum(Var a) {
    Eigen::Index rows = value(a).rows(), cols = value(a).cols();
    MatrixXd out(1, 1);
    out(0, 0) = value(a).sum();
    return unary(out, a, [rows, cols](const MatrixXd& g) {
      return (g(0, 0) * MatrixXd::Ones(rows, cols)).eval();
    });
  }

  Var reduce_mean(Var a) {
    double n = static_cast<double>(value(a).size());
    return scale(reduce_sum(a), 1.0 / n);
  }

  // --- reverse pass ------------------------------------------------------

  void backward(Var root) {
    require(value(root).rows() == 1 && value(root).cols() == 1,
            "backward: root must be a 1x1 scalar");
    grads_.assign(values_.size(), MatrixXd());
    for (size_t i = 0; i < values_.size(); ++i)
      grads_[i] = MatrixXd::Zero(values_[i].rows(), values_[i].cols());
    grads_[root.id](0, 0) = 1.0;
    for (int i = root.id; i >= 0; --i) {
      if (backward_[i]) backward_[i](grads_[i]);
    }
  }

 private:
  int check(Var v) const {
    require(v.valid() && v.id < size(), "invalid tape handle");
    return v.id;
  }

  void same_shape(Var a, Var b) const {
    require(value(a).rows() == value(b).rows() && value(a).cols() == value(b).cols(),
            "elementwise op: shape mismatch");
  }

  template <typename F>
  Var unary(MatrixXd out, Var a, F pull) {
    values_.push_back(std::move(out));
    int ai = check(a);
    backward_.emplace_back([this, ai, pull](const MatrixXd& g) { grads_[ai] += pull(g); });
    return {static_cast<int>(values_.size()) - 1};
  }

  template <typename Fa, typename Fb>
  Var unary2(MatrixXd out, Var a, Var b, Fa pull_a, Fb pull_b) {
    values_.push_back(std::move(out));
    int ai = check(a), bi = check(b);
    backward_.emplace_back([this, ai, bi, pull_a, pull_b](const MatrixXd& g) {
      grads_[ai] += pull_a(g);
      grads_[bi] += pull_b(g);
    });
    return {static_cast<int>(values_.size()) - 1};
  }

  std::vector<MatrixXd> values_;
  std::vector<MatrixXd> grads_;
  std::vector<std::function<void(const MatrixXd&)>> backward_;
};

}  // namespace msknet
