#include <catch2/catch_amalgamated.hpp>

#include <functional>
#include <vector>

#include "msknet/common.hpp"
#include "msknet/tape.hpp"

using namespace msknet;
using Catch::Approx;

namespace {

MatrixXd pseudo_random(int rows, int cols, uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  MatrixXd m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = rng.uniform(lo, hi);
  return m;
}

// Checks d(scalar)/d(inputs[k]) for every k against central differences.
// build() must replay the same computation on whatever tape it is given.
void gradcheck(const std::vector<MatrixXd>& inputs,
               const std::function<Var(Tape&, const std::vector<Var>&)>& build,
               double tol = 1e-6) {
  Tape tape;
  std::vector<Var> vars;
  for (const auto& m : inputs) vars.push_back(tape.input(m));
  Var out = build(tape, vars);
  REQUIRE(tape.value(out).size() == 1);
  tape.backward(out);

  double h = 1e-6;
  for (size_t k = 0; k < inputs.size(); ++k) {
    const MatrixXd& g = tape.grad(vars[k]);
    for (Eigen::Index r = 0; r < inputs[k].rows(); ++r) {
      for (Eigen::Index c = 0; c < inputs[k].cols(); ++c) {
        auto eval = [&](double x) {
          std::vector<MatrixXd> shifted = inputs;
          shifted[k](r, c) = x;
          Tape t2;
          std::vector<Var> v2;
          for (const auto& m : shifted) v2.push_back(t2.input(m));
          return t2.value(build(t2, v2))(0, 0);
        };
        double x0 = inputs[k](r, c);
        double fd = (eval(x0 + h) - eval(x0 - h)) / (2.0 * h);
        double denom = std::max({1.0, std::abs(fd), std::abs(g(r, c))});
        REQUIRE(std::abs(g(r, c) - fd) / denom < tol);
      }
    }
  }
}

// Weighted sum gives every output entry a distinct pull on the gradient.
Var weighted(Tape& t, Var x, const MatrixXd& w) { return t.reduce_sum(t.mul(x, t.input(w))); }

}  // namespace

TEST_CASE("elementwise op gradients match finite differences") {
  MatrixXd a = pseudo_random(3, 4, 11);
  MatrixXd b = pseudo_random(3, 4, 22);
  MatrixXd w = pseudo_random(3, 4, 33);

  gradcheck({a, b}, [&](Tape& t, const std::vector<Var>& v) {
    return weighted(t, t.add(v[0], v[1]), w);
  });
  gradcheck({a, b}, [&](Tape& t, const std::vector<Var>& v) {
    return weighted(t, t.sub(v[0], v[1]), w);
  });
  gradcheck({a, b}, [&](Tape& t, const std::vector<Var>& v) {
    return weighted(t, t.mul(v[0], v[1]), w);
  });
  gradcheck({a}, [&](Tape& t, const std::vector<Var>& v) {
    return weighted(t, t.neg(v[0]), w);
  });
  gradcheck({a}, [&](Tape& t, const std::vector<Var>& v) {
    return weighted(t, t.scale(v[0], -2.7), w);
  });
  gradcheck({a}, [&](Tape& t, const std::vector<Var>& v) {
    return weighted(t, t.add_const(v[0], 0.4), w);
  });
  gradcheck({a}, [&](Tape& t, const std::vector<Var>& v) {
    return weighted(t, t.square(v[0]), w);
  });
  gradcheck({a}, [&](Tape& t, const std::vector<Var>& v) {
    return weighted(t, t.tanh_op(v[0]), w);
  });
  gradcheck({a}, [&](Tape& t, const std::vector<Var>& v) {
    return weighted(t, t.logistic(v[0]), w);
  });
  gradcheck({a}, [&](Tape& t, const std::vector<Var>& v) {
    return weighted(t, t.sin_op(v[0]), w);
  });
  gradcheck({a}, [&](Tape& t, const std::vector<Var>& v) {
    return weighted(t, t.cos_op(v[0]), w);
  });
  gradcheck({a}, [&](Tape& t, const std::vector<Var>& v) {
    return weighted(t, t.gelu(v[0]), w);
  });
}

TEST_CASE("sqrt gradient on strictly positive input") {
  MatrixXd a = pseudo_random(3, 3, 44, 0.5, 2.0);
  MatrixXd w = pseudo_random(3, 3, 55);
  gradcheck({a}, [&](Tape& t, const std::vector<Var>& v) {
    return weighted(t, t.sqrt_op(v[0]), w);
  });
}

TEST_CASE("max_const gradient away from the kink, zero below") {
  MatrixXd a(2, 2);
  a << -0.8, -0.3, 0.4, 1.2;  // none near the kink at 0
  MatrixXd w = pseudo_random(2, 2, 66);
  gradcheck({a}, [&](Tape& t, const std::vector<Var>& v) {
    return weighted(t, t.max_const(v[0], 0.0), w);
  });
  // clamped entries contribute no gradient
  Tape t;
  Var x = t.input(a);
  Var out = t.reduce_sum(t.max_const(x, 0.0));
  t.backward(out);
  REQUIRE(t.grad(x)(0, 0) == 0.0);
  REQUIRE(t.grad(x)(0, 1) == 0.0);
  REQUIRE(t.grad(x)(1, 0) == 1.0);
  // exactly at the kink the subgradient is 0
  Tape t2;
  Var y = t2.input(MatrixXd::Zero(1, 1));
  Var out2 = t2.reduce_sum(t2.max_const(y, 0.0));
  t2.backward(out2);
  REQUIRE(t2.grad(y)(0, 0) == 0.0);
}

TEST_CASE("gelu value anchor") {
  Tape t;
  MatrixXd x(1, 3);
  x << 0.0, 1.0, -1.0;
  Var v = t.gelu(t.input(x));
  REQUIRE(t.value(v)(0, 0) == Approx(0.0).margin(1e-15));
  REQUIRE(t.value(v)(0, 1) == Approx(0.8413447460685429).epsilon(1e-12));
  REQUIRE(t.value(v)(0, 2) == Approx(-0.15865525393145707).epsilon(1e-12));
}

TEST_CASE("softmax rows gradient and shift invariance") {
  MatrixXd a = pseudo_random(3, 5, 77, -2.0, 2.0);
  MatrixXd w = pseudo_random(3, 5, 88);
  gradcheck({a}, [&](Tape& t, const std::vector<Var>& v) {
    return weighted(t, t.softmax_rows(v[0]), w);
  });

  Tape t;
  Var base = t.softmax_rows(t.input(a));
  MatrixXd shifted = a;
  shifted.array() += 123.5;
  Var moved = t.softmax_rows(t.input(shifted));
  REQUIRE((t.value(base) - t.value(moved)).norm() < 1e-12);
  // rows sum to one
  for (int r = 0; r < 3; ++r) REQUIRE(t.value(base).row(r).sum() == Approx(1.0).epsilon(1e-12));
}

TEST_CASE("matmul and bias broadcast gradients") {
  MatrixXd a = pseudo_random(4, 3, 101);
  MatrixXd b = pseudo_random(3, 5, 102);
  MatrixXd bias = pseudo_random(1, 5, 103);
  MatrixXd w = pseudo_random(4, 5, 104);
  gradcheck({a, b, bias}, [&](Tape& t, const std::vector<Var>& v) {
    return weighted(t, t.add_rowvec(t.matmul(v[0], v[1]), v[2]), w);
  });
}

TEST_CASE("shape op gradients") {
  MatrixXd a = pseudo_random(3, 4, 201);
  MatrixXd b = pseudo_random(2, 4, 202);
  MatrixXd c = pseudo_random(3, 2, 203);

  gradcheck({a, b}, [&](Tape& t, const std::vector<Var>& v) {
    return t.reduce_sum(t.square(t.concat_rows(v[0], v[1])));
  });
  gradcheck({a, c}, [&](Tape& t, const std::vector<Var>& v) {
    return t.reduce_sum(t.square(t.concat_cols(v[0], v[1])));
  });
  gradcheck({a}, [&](Tape& t, const std::vector<Var>& v) {
    return t.reduce_sum(t.square(t.slice_rows(v[0], 1, 2)));
  });
  gradcheck({a}, [&](Tape& t, const std::vector<Var>& v) {
    return t.reduce_sum(t.square(t.slice_cols(v[0], 1, 3)));
  });
}

TEST_CASE("transpose gradient") {
  MatrixXd a = pseudo_random(3, 5, 311);
  MatrixXd w = pseudo_random(5, 3, 312);
  gradcheck({a}, [&](Tape& t, const std::vector<Var>& v) {
    return weighted(t, t.transpose(v[0]), w);
  });
  Tape t;
  Var x = t.input(a);
  REQUIRE((t.value(t.transpose(x)) - a.transpose()).norm() == 0.0);
}

TEST_CASE("gather_rows scatters gradients, duplicates accumulate") {
  MatrixXd a = pseudo_random(5, 3, 301);
  gradcheck({a}, [&](Tape& t, const std::vector<Var>& v) {
    return t.reduce_sum(t.square(t.gather_rows(v[0], {4, 0, 2, 0})));
  });

  Tape t;
  Var x = t.input(MatrixXd::Ones(3, 2));
  Var g = t.gather_rows(x, {1, 1, 1});
  Var out = t.reduce_sum(g);
  t.backward(out);
  REQUIRE(t.grad(x)(1, 0) == 3.0);
  REQUIRE(t.grad(x)(0, 0) == 0.0);
}

TEST_CASE("reductions") {
  MatrixXd a = pseudo_random(3, 4, 401);
  gradcheck({a}, [&](Tape& t, const std::vector<Var>& v) {
    return t.reduce_sum(v[0]);
  });
  gradcheck({a}, [&](Tape& t, const std::vector<Var>& v) {
    return t.reduce_mean(t.square(v[0]));
  });
  Tape t;
  Var x = t.input(a);
  REQUIRE(t.value(t.reduce_mean(x))(0, 0) == Approx(a.mean()));
}

TEST_CASE("composite expression gradcheck") {
  // A small network-shaped computation touching most of the op set at once.
  MatrixXd x = pseudo_random(4, 3, 501);
  MatrixXd w1 = pseudo_random(3, 6, 502, -0.5, 0.5);
  MatrixXd b1 = pseudo_random(1, 6, 503, -0.1, 0.1);
  MatrixXd w2 = pseudo_random(6, 2, 504, -0.5, 0.5);
  gradcheck({x, w1, b1, w2}, [&](Tape& t, const std::vector<Var>& v) {
    Var h = t.gelu(t.add_rowvec(t.matmul(v[0], v[1]), v[2]));
    Var att = t.softmax_rows(t.matmul(h, t.input(MatrixXd::Identity(6, 6))));
    Var mix = t.matmul(t.concat_cols(h, att), t.input(pseudo_random(12, 6, 505, -0.3, 0.3)));
    Var out = t.matmul(t.tanh_op(mix), v[3]);
    return t.reduce_mean(t.square(out));
  }, 2e-6);
}

TEST_CASE("backward rejects non-scalar roots and reused handles stay valid") {
  Tape t;
  Var x = t.input(MatrixXd::Ones(2, 2));
  REQUIRE_THROWS_AS(t.backward(x), Error);
  Var y = t.reduce_sum(x);
  t.backward(y);
  REQUIRE(t.grad(x)(0, 0) == 1.0);
  // a second backward resets accumulation rather than doubling it
  t.backward(y);
  REQUIRE(t.grad(x)(0, 0) == 1.0);
}
