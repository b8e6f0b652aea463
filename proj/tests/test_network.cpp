#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "msknet/network.hpp"

using namespace msknet;
using Catch::Approx;

namespace {

NetConfig tiny_config(Backbone bb = Backbone::mjca) {
  NetConfig cfg;
  cfg.d_joint = 4;
  cfg.n_heads = 2;
  cfg.d_integrated = 6;
  cfg.d_gru = 5;
  cfg.gru_layers = 2;
  cfg.dropout = 0.1;
  cfg.head_dims = {10, 6, 10};
  cfg.backbone = bb;
  cfg.cnn_channels = {4, 5, 6};
  return cfg;
}

MatrixXd tiny_input(int batch, int steps, uint64_t seed) {
  Rng rng(seed);
  MatrixXd x(batch * steps, 9);
  for (Eigen::Index r = 0; r < x.rows(); ++r)
    for (int c = 0; c < 9; ++c) x(r, c) = rng.uniform(-1.5, 1.5);
  return x;
}

double gelu_scalar(double x) { return 0.5 * x * (1.0 + std::erf(x / M_SQRT2)); }

MatrixXd gelu_mat(MatrixXd m) {
  return m.unaryExpr([](double x) { return gelu_scalar(x); });
}

MatrixXd softmax_rows_ref(MatrixXd m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    Eigen::ArrayXd e = (m.row(r).array() - m.row(r).maxCoeff()).exp();
    m.row(r) = (e / e.sum()).matrix();
  }
  return m;
}

// Straight-line reimplementation of the forward pass in s-major per-window
// loops, shared by nothing with the tape-based version.
MatrixXd reference_forward(const Network& net, const MatrixXd& x, int batch, int steps) {
  const NetConfig& cfg = net.config();
  auto W = [&](const std::string& n) -> const MatrixXd& {
    return net.weights()[net.index_of(n)];
  };
  int dj = cfg.d_joint, dg = cfg.d_gru;
  MatrixXd out(batch, cfg.n_muscles);

  for (int b = 0; b < batch; ++b) {
    // embeddings per joint: S x dj
    std::vector<MatrixXd> e(3);
    for (int j = 0; j < 3; ++j) {
      MatrixXd xb(steps, 3);
      for (int s = 0; s < steps; ++s) xb.row(s) = x.block(b * steps + s, 3 * j, 1, 3);
      MatrixXd pre = xb * W("embed.j" + std::to_string(j) + ".w");
      pre.rowwise() += W("embed.j" + std::to_string(j) + ".b").row(0);
      e[j] = gelu_mat(pre);
    }

    MatrixXd seq;  // S x d_integrated
    if (cfg.backbone == Backbone::mjca) {
      std::vector<MatrixXd> mixed(3);
      for (int j = 0; j < 3; ++j) {
        std::string p = "attn.j" + std::to_string(j);
        MatrixXd ctx(steps, 2 * dj);
        int col = 0;
        for (int k = 0; k < 3; ++k) {
          if (k == j) continue;
          ctx.middleCols(col, dj) = e[k];
          col += dj;
        }
        MatrixXd q = e[j] * W(p + ".wq");
        MatrixXd kk = ctx * W(p + ".wk");
        MatrixXd v = ctx * W(p + ".wv");
        int dk = dj / cfg.n_heads;
        MatrixXd heads(steps, dj);
        for (int h = 0; h < cfg.n_heads; ++h) {
          MatrixXd qh = q.middleCols(h * dk, dk);
          MatrixXd kh = kk.middleCols(h * dk, dk);
          MatrixXd vh = v.middleCols(h * dk, dk);
          MatrixXd att = softmax_rows_ref(qh * kh.transpose() / std::sqrt(double(dk)));
          heads.middleCols(h * dk, dk) = att * vh;
        }
        mixed[j] = e[j] + heads * W(p + ".wo");
      }
      MatrixXd cat(steps, 3 * dj);
      cat << mixed[0], mixed[1], mixed[2];
      MatrixXd pre = cat * W("integrate.w");
      pre.rowwise() += W("integrate.b").row(0);
      seq = gelu_mat(pre);
    } else if (cfg.backbone == Backbone::bigru_only) {
      MatrixXd cat(steps, 3 * dj);
      cat << e[0], e[1], e[2];
      MatrixXd pre = cat * W("integrate.w");
      pre.rowwise() += W("integrate.b").row(0);
      seq = gelu_mat(pre);
    } else {
      MatrixXd cur(steps, 3 * dj);
      cur << e[0], e[1], e[2];
      for (size_t l = 0; l < cfg.cnn_channels.size(); ++l) {
        std::string p = "cnn.c" + std::to_string(l);
        int cout = cfg.cnn_channels[l];
        MatrixXd nxt = MatrixXd::Zero(steps, cout);
        for (int s = 0; s < steps; ++s) {
          Eigen::RowVectorXd acc = W(p + ".b").row(0);
          if (s - 1 >= 0) acc += cur.row(s - 1) * W(p + ".wm1");
          acc += cur.row(s) * W(p + ".w0");
          if (s + 1 < steps) acc += cur.row(s + 1) * W(p + ".wp1");
          nxt.row(s) = acc;
        }
        cur = gelu_mat(nxt);
      }
      seq = cur;
    }

    // stacked bidirectional GRU
    MatrixXd layer_in = seq;
    for (int l = 0; l < cfg.gru_layers; ++l) {
      std::string base = "gru.l" + std::to_string(l);
      MatrixXd outs(steps, 2 * dg);
      for (int dir = 0; dir < 2; ++dir) {
        std::string p = base + (dir == 0 ? ".fwd" : ".bwd");
        Eigen::RowVectorXd h = Eigen::RowVectorXd::Zero(dg);
        for (int i = 0; i < steps; ++i) {
          int s = dir == 0 ? i : steps - 1 - i;
          Eigen::RowVectorXd xs = layer_in.row(s);
          auto sigmoid = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
          Eigen::RowVectorXd z =
              (xs * W(p + ".wz") + h * W(p + ".uz") + W(p + ".bz")).unaryExpr(sigmoid);
          Eigen::RowVectorXd r =
              (xs * W(p + ".wr") + h * W(p + ".ur") + W(p + ".br")).unaryExpr(sigmoid);
          Eigen::RowVectorXd cand =
              (xs * W(p + ".wh") + (r.cwiseProduct(h)) * W(p + ".uh") + W(p + ".bh"))
                  .unaryExpr([](double v) { return std::tanh(v); });
          h = (1.0 - z.array()).matrix().cwiseProduct(cand) + z.cwiseProduct(h);
          outs.block(s, dir * dg, 1, dg) = h;
        }
      }
      layer_in = outs;
    }

    // head on the final timestep
    Eigen::RowVectorXd hrow = layer_in.row(steps - 1);
    int nlayers = static_cast<int>(cfg.head_dims.size()) - 1;
    for (int l = 0; l < nlayers; ++l) {
      std::string p = "head.l" + std::to_string(l);
      hrow = hrow * W(p + ".w") + W(p + ".b");
      if (l + 1 < nlayers) hrow = hrow.unaryExpr([](double v) { return gelu_scalar(v); });
    }
    out.row(b) = hrow;
  }
  return out;
}

}  // namespace

TEST_CASE("forward matches the naive reference for every backbone") {
  int batch = 2, steps = 3;
  MatrixXd x = tiny_input(batch, steps, 99);
  for (Backbone bb : {Backbone::mjca, Backbone::bigru_only, Backbone::cnn}) {
    Network net(tiny_config(bb), 1234);
    MatrixXd got = net.predict(x, batch, steps);
    MatrixXd want = reference_forward(net, x, batch, steps);
    INFO("backbone " << backbone_name(bb));
    REQUIRE(got.rows() == batch);
    REQUIRE(got.cols() == 10);
    REQUIRE((got - want).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("zeroed value and output projections reduce mjca to bigru_only") {
  NetConfig cfg = tiny_config(Backbone::mjca);
  Network mjca(cfg, 77);
  for (int j = 0; j < 3; ++j) {
    mjca.weights()[mjca.index_of("attn.j" + std::to_string(j) + ".wv")].setZero();
    mjca.weights()[mjca.index_of("attn.j" + std::to_string(j) + ".wo")].setZero();
  }
  NetConfig cfg2 = tiny_config(Backbone::bigru_only);
  Network plain(cfg2, 77);
  // share every weight the two nets have in common
  for (size_t i = 0; i < plain.names().size(); ++i)
    plain.weights()[i] = mjca.weights()[mjca.index_of(plain.names()[i])];

  int batch = 2, steps = 4;
  MatrixXd x = tiny_input(batch, steps, 5);
  MatrixXd a = mjca.predict(x, batch, steps);
  MatrixXd b = plain.predict(x, batch, steps);
  REQUIRE((a - b).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("zeroed gru and head biases give exactly zero output") {
  NetConfig cfg = tiny_config(Backbone::mjca);
  Network net(cfg, 3);
  for (size_t i = 0; i < net.names().size(); ++i) {
    const std::string& n = net.names()[i];
    if (n.rfind("gru.", 0) == 0 || n == "head.l0.b" || n == "head.l1.b") {
      net.weights()[i].setZero();
    }
  }
  MatrixXd x = tiny_input(2, 3, 8);
  MatrixXd y = net.predict(x, 2, 3);
  REQUIRE(y.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("initialization is bounded, seeded, and bias-free") {
  NetConfig cfg = tiny_config(Backbone::mjca);
  Network a(cfg, 42), b(cfg, 42), c(cfg, 43);
  for (size_t i = 0; i < a.names().size(); ++i) {
    const std::string& n = a.names()[i];
    const MatrixXd& w = a.weights()[i];
    if (n.find(".b") != std::string::npos && w.rows() == 1) {
      REQUIRE(w.cwiseAbs().maxCoeff() == 0.0);
    } else {
      double bound = std::sqrt(1.0 / double(w.rows()));
      REQUIRE(w.cwiseAbs().maxCoeff() <= bound);
      REQUIRE(w.cwiseAbs().maxCoeff() > 0.0);
    }
    REQUIRE((a.weights()[i] - b.weights()[i]).norm() == 0.0);
  }
  // different seed, different weights (check one matrix)
  REQUIRE((a.weights()[0] - c.weights()[0]).norm() > 0.0);
}

TEST_CASE("dropout perturbs training passes only and is seed-stable") {
  NetConfig cfg = tiny_config(Backbone::mjca);
  Network net(cfg, 11);
  int batch = 2, steps = 4;
  MatrixXd x = tiny_input(batch, steps, 21);

  Tape t1, t2, t3, t4;
  MatrixXd eval1 = t1.value(net.forward(t1, x, batch, steps, false, 900));
  MatrixXd eval2 = t2.value(net.forward(t2, x, batch, steps, false, 901));
  REQUIRE((eval1 - eval2).norm() == 0.0);  // eval ignores the dropout seed

  MatrixXd train1 = t3.value(net.forward(t3, x, batch, steps, true, 900));
  MatrixXd train2 = t4.value(net.forward(t4, x, batch, steps, true, 900));
  REQUIRE((train1 - train2).norm() == 0.0);  // same seed, same mask

  Tape t5;
  MatrixXd train3 = t5.value(net.forward(t5, x, batch, steps, true, 901));
  REQUIRE((train1 - train3).norm() > 0.0);  // different mask
  REQUIRE((train1 - eval1).norm() > 0.0);   // mask actually applied
}

TEST_CASE("gradients flow to every parameter") {
  // two GRU layers: layer 2 consumes all of layer 1's timesteps, so even the
  // backward direction's recurrent weights see gradient signal
  NetConfig cfg = tiny_config(Backbone::mjca);
  cfg.dropout = 0.0;
  Network net(cfg, 17);
  int batch = 2, steps = 3;
  MatrixXd x = tiny_input(batch, steps, 31);
  Tape tape;
  std::vector<Var> pv;
  Var out = net.forward(tape, x, batch, steps, false, 0, &pv);
  Var loss = tape.reduce_sum(tape.square(out));
  tape.backward(loss);
  // The head reads the final timestep, where the top layer's backward
  // direction has taken exactly one step from h = 0: its recurrent-path
  // tensors (uz, wr, ur, br, uh) cannot receive gradient there. Everything
  // else must.
  for (size_t i = 0; i < pv.size(); ++i) {
    const std::string& n = net.names()[i];
    bool structurally_dark =
        n.rfind("gru.l1.bwd", 0) == 0 &&
        (n.ends_with(".uz") || n.ends_with(".wr") || n.ends_with(".ur") ||
         n.ends_with(".br") || n.ends_with(".uh"));
    INFO(n);
    if (structurally_dark) {
      REQUIRE(tape.grad(pv[i]).cwiseAbs().maxCoeff() == 0.0);
    } else {
      REQUIRE(tape.grad(pv[i]).cwiseAbs().maxCoeff() > 0.0);
    }
  }
}

TEST_CASE("config validation rejects inconsistent settings") {
  NetConfig cfg = tiny_config();
  cfg.n_heads = 3;  // 4 % 3 != 0
  REQUIRE_THROWS_AS(cfg.validate(), Error);
  NetConfig cfg2 = tiny_config();
  cfg2.head_dims = {10, 6, 9};
  REQUIRE_THROWS_AS(cfg2.validate(), Error);
  NetConfig cfg3 = tiny_config();
  cfg3.head_dims = {12, 6, 10};
  REQUIRE_THROWS_AS(cfg3.validate(), Error);
  NetConfig cfg4 = tiny_config(Backbone::cnn);
  cfg4.cnn_channels = {4, 5};
  REQUIRE_THROWS_AS(cfg4.validate(), Error);
}
