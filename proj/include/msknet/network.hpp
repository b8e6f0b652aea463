#pragma once

#include <Eigen/Dense>
#include <map>
#include <string>
#include <vector>

#include "msknet/common.hpp"
#include "msknet/tape.hpp"

// Cross-joint attention network over sliding kinematic windows.
//
// Input layout: one (B*S) x 3*N_j matrix in b-major order (row b*S + s), with
// three channels per joint: angle, velocity, acceleration, joint-major. Each
// joint is embedded separately, mixed with the other joints through multi-head
// attention over the sequence axis, integrated, run through a stacked
// bidirectional GRU, and decoded from the final timestep into one activation
// vector per window.

namespace msknet {

enum class Backbone { mjca, bigru_only, cnn };

inline const char* backbone_name(Backbone b) {
  switch (b) {
    case Backbone::mjca: return "mjca";
    case Backbone::bigru_only: return "bigru_only";
    case Backbone::cnn: return "cnn";
  }
  return "?";
}

inline Backbone parse_backbone(const std::string& s) {
  if (s == "mjca") return Backbone::mjca;
  if (s == "bigru_only") return Backbone::bigru_only;
  if (s == "cnn") return Backbone::cnn;
  throw Error("unknown backbone: " + s);
}

struct NetConfig {
  int n_joints = 3;
  int n_muscles = 10;
  int d_joint = 64;       // per-joint embedding width
  int n_heads = 2;
  int d_integrated = 128; // post-integration width; also the GRU input width
  int d_gru = 128;        // per-direction hidden size
  int gru_layers = 2;
  double dropout = 0.1;   // between stacked GRU layers, training only
  std::vector<int> head_dims = {256, 128, 64, 10};
  Backbone backbone = Backbone::mjca;
  std::vector<int> cnn_channels = {64, 128, 128};
  double cnn_dropout = 0.05;

  void validate() const {
    require(n_joints == 3, "network: expects 3 joints");
    require(d_joint > 0 && d_joint % n_heads == 0, "network: d_joint must divide by n_heads");
    require(!head_dims.empty() && head_dims.back() == n_muscles,
            "network: head must end in n_muscles");
    require(head_dims.front() == 2 * d_gru, "network: head input must be 2*d_gru");
    require(gru_layers >= 1, "network: need at least one GRU layer");
    require(dropout >= 0.0 && dropout < 1.0, "network: dropout must be in [0,1)");
    if (backbone == Backbone::cnn) {
      require(!cnn_channels.empty() && cnn_channels.back() == d_integrated,
              "network: last conv channel count must equal the GRU input width");
    }
  }
};

class Network {
 public:
  Network(NetConfig cfg, uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(derive_seed(seed, 0x6e657477));
    int dj = cfg_.d_joint, di = cfg_.d_integrated, dg = cfg_.d_gru;
    for (int j = 0; j < cfg_.n_joints; ++j) {
      std::string p = "embed.j" + std::to_string(j);
      add_matrix(rng, p + ".w", 3, dj);
      add_bias(p + ".b", dj);
    }
    if (cfg_.backbone == Backbone::mjca) {
      for (int j = 0; j < cfg_.n_joints; ++j) {
        std::string p = "attn.j" + std::to_string(j);
        int dc = (cfg_.n_joints - 1) * dj;
        add_matrix(rng, p + ".wq", dj, dj);
        add_matrix(rng, p + ".wk", dc, dj);
        add_matrix(rng, p + ".wv", dc, dj);
        add_matrix(rng, p + ".wo", dj, dj);
      }
    }
    if (cfg_.backbone == Backbone::cnn) {
      int cin = cfg_.n_joints * dj;
      for (size_t l = 0; l < cfg_.cnn_channels.size(); ++l) {
        std::string p = "cnn.c" + std::to_string(l);
        int cout = cfg_.cnn_channels[l];
        // kernel of width 3: fan_in = 3 * cin
        double bound = std::sqrt(1.0 / (3.0 * cin));
        add_matrix_bound(rng, p + ".wm1", cin, cout, bound);
        add_matrix_bound(rng, p + ".w0", cin, cout, bound);
        add_matrix_bound(rng, p + ".wp1", cin, cout, bound);
        add_bias(p + ".b", cout);
        cin = cout;
      }
    } else {
      add_matrix(rng, "integrate.w", cfg_.n_joints * dj, di);
      add_bias("integrate.b", di);
    }
    for (int l = 0; l < cfg_.gru_layers; ++l) {
      int din = l == 0 ? di : 2 * dg;
      for (const char* dir : {"fwd", "bwd"}) {
        std::string p = "gru.l" + std::to_string(l) + "." + dir;
        for (const char* gate : {"z", "r", "h"}) {
          add_matrix(rng, p + ".w" + gate, din, dg);
          add_matrix(rng, p + ".u" + gate, dg, dg);
          add_bias(p + ".b" + gate, dg);
        }
      }
    }
    for (size_t l = 0; l + 1 < cfg_.head_dims.size(); ++l) {
      std::string p = "head.l" + std::to_string(l);
      add_matrix(rng, p + ".w", cfg_.head_dims[l], cfg_.head_dims[l + 1]);
      add_bias(p + ".b", cfg_.head_dims[l + 1]);
    }
  }

  const NetConfig& config() const { return cfg_; }
  const std::vector<std::string>& names() const { return names_; }
  std::vector<MatrixXd>& weights() { return weights_; }
  const std::vector<MatrixXd>& weights() const { return weights_; }

  long parameter_count() const {
    long n = 0;
    for (const auto& w : weights_) n += w.size();
    return n;
  }

  int index_of(const std::string& name) const {
    auto it = index_.find(name);
    require(it != index_.end(), "network: no parameter named " + name);
    return it->second;
  }

  // Records the forward pass on the tape. Returns the raw B x n_muscles
  // output; param_vars (if given) receives one handle per weight tensor in
  // weights() order, for reading gradients after backward().
  Var forward(Tape& tape, const MatrixXd& x, int batch, int steps, bool training,
              uint64_t dropout_seed, std::vector<Var>* param_vars = nullptr) const {
    require(x.rows() == static_cast<Eigen::Index>(batch) * steps,
            "network: input rows must equal batch*steps");
    require(x.cols() == 3 * cfg_.n_joints, "network: expected 3 channels per joint");
    std::vector<Var> pv;
    pv.reserve(weights_.size());
    for (const auto& w : weights_) pv.push_back(tape.input(w));
    if (param_vars) *param_vars = pv;
    auto P = [&](const std::string& name) { return pv[index_of(name)]; };

    Var xin = tape.input(x);

    // per-joint embeddings
    std::vector<Var> embed(cfg_.n_joints);
    for (int j = 0; j < cfg_.n_joints; ++j) {
      Var xj = tape.slice_cols(xin, 3 * j, 3);
      std::string p = "embed.j" + std::to_string(j);
      embed[j] = tape.gelu(tape.add_rowvec(tape.matmul(xj, P(p + ".w")), P(p + ".b")));
    }

    Var seq;  // (B*S) x d_integrated, b-major
    if (cfg_.backbone == Backbone::mjca) {
      std::vector<Var> mixed(cfg_.n_joints);
      for (int j = 0; j < cfg_.n_joints; ++j)
        mixed[j] = cross_attention(tape, P, embed, j, batch, steps);
      Var cat = tape.concat_cols(tape.concat_cols(mixed[0], mixed[1]), mixed[2]);
      seq = tape.gelu(tape.add_rowvec(tape.matmul(cat, P("integrate.w")), P("integrate.b")));
    } else if (cfg_.backbone == Backbone::bigru_only) {
      Var cat = tape.concat_cols(tape.concat_cols(embed[0], embed[1]), embed[2]);
      seq = tape.gelu(tape.add_rowvec(tape.matmul(cat, P("integrate.w")), P("integrate.b")));
    } else {
      Var cat = tape.concat_cols(tape.concat_cols(embed[0], embed[1]), embed[2]);
      seq = cnn_stack(tape, P, cat, batch, steps, training, dropout_seed);
    }

    Var gru_out = bigru(tape, P, seq, batch, steps, training, dropout_seed);

    // final timestep of each window
    std::vector<int> last(batch);
    for (int b = 0; b < batch; ++b) last[b] = b * steps + steps - 1;
    Var h = tape.gather_rows(gru_out, last);
    int nlayers = static_cast<int>(cfg_.head_dims.size()) - 1;
    for (int l = 0; l < nlayers; ++l) {
      std::string p = "head.l" + std::to_string(l);
      h = tape.add_rowvec(tape.matmul(h, P(p + ".w")), P(p + ".b"));
      if (l + 1 < nlayers) h = tape.gelu(h);
    }
    return h;
  }

  // Convenience: forward pass on a throwaway tape, returning plain values.
  MatrixXd predict(const MatrixXd& x, int batch, int steps) const {
    Tape tape;
    Var out = forward(tape, x, batch, steps, false, 0);
    return tape.value(out);
  }

 private:
  void add_matrix(Rng& rng, const std::string& name, int rows, int cols) {
    add_matrix_bound(rng, name, rows, cols, std::sqrt(1.0 / rows));
  }

  void add_matrix_bound(Rng& rng, const std::string& name, int rows, int cols, double bound) {
    MatrixXd w(rows, cols);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) w(r, c) = rng.uniform(-bound, bound);
    push(name, std::move(w));
  }

  void add_bias(const std::string& name, int cols) { push(name, MatrixXd::Zero(1, cols)); }

  void push(const std::string& name, MatrixXd w) {
    index_[name] = static_cast<int>(weights_.size());
    names_.push_back(name);
    weights_.push_back(std::move(w));
  }

  template <typename Lookup>
  Var cross_attention(Tape& tape, Lookup& P, const std::vector<Var>& embed, int j, int batch,
                      int steps) const {
    std::string p = "attn.j" + std::to_string(j);
    // context: the other joints' features, feature-axis concat
    std::vector<Var> others;
    for (int k = 0; k < cfg_.n_joints; ++k)
      if (k != j) others.push_back(embed[k]);
    Var ctx = others.size() == 1 ? others[0] : tape.concat_cols(others[0], others[1]);

    Var q = tape.matmul(embed[j], P(p + ".wq"));
    Var k = tape.matmul(ctx, P(p + ".wk"));
    Var v = tape.matmul(ctx, P(p + ".wv"));

    int dk = cfg_.d_joint / cfg_.n_heads;
    double scale = 1.0 / std::sqrt(double(dk));
    // attention runs over sequence positions independently per batch element
    std::vector<Var> rows_by_batch;
    rows_by_batch.reserve(batch);
    for (int b = 0; b < batch; ++b) {
      std::vector<Var> heads;
      heads.reserve(cfg_.n_heads);
      for (int h = 0; h < cfg_.n_heads; ++h) {
        Var qh = tape.slice_cols(tape.slice_rows(q, b * steps, steps), h * dk, dk);
        Var kh = tape.slice_cols(tape.slice_rows(k, b * steps, steps), h * dk, dk);
        Var vh = tape.slice_cols(tape.slice_rows(v, b * steps, steps), h * dk, dk);
        Var scores = tape.scale(tape.matmul(qh, tape.transpose(kh)), scale);
        Var weights = tape.softmax_rows(scores);
        heads.push_back(tape.matmul(weights, vh));
      }
      Var cat = heads[0];
      for (size_t h = 1; h < heads.size(); ++h) cat = tape.concat_cols(cat, heads[h]);
      rows_by_batch.push_back(cat);
    }
    Var attn = rows_by_batch[0];
    for (int b = 1; b < batch; ++b) attn = tape.concat_rows(attn, rows_by_batch[b]);
    Var projected = tape.matmul(attn, P(p + ".wo"));
    return tape.add(embed[j], projected);
  }

  Var dropout_mask(Tape& tape, int rows, int cols, double p, uint64_t seed) const {
    Rng rng(seed);
    MatrixXd mask(rows, cols);
    double keep = 1.0 - p;
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) mask(r, c) = rng.uniform() < keep ? 1.0 / keep : 0.0;
    return tape.input(mask);
  }

  template <typename Lookup>
  Var cnn_stack(Tape& tape, Lookup& P, Var x, int batch, int steps, bool training,
                uint64_t dropout_seed) const {
    // 1-D convolution, kernel 3, zero padding: shifted copies of the sequence
    // are built with a gather through an appended zero row.
    int rows = batch * steps;
    for (size_t l = 0; l < cfg_.cnn_channels.size(); ++l) {
      std::string p = "cnn.c" + std::to_string(l);
      int cols = static_cast<int>(tape.value(x).cols());
      Var padded = tape.concat_rows(x, tape.input(MatrixXd::Zero(1, cols)));
      std::vector<int> prev(rows), next(rows);
      for (int b = 0; b < batch; ++b)
        for (int s = 0; s < steps; ++s) {
          int r = b * steps + s;
          prev[r] = s > 0 ? r - 1 : rows;  // rows == index of the zero row
          next[r] = s + 1 < steps ? r + 1 : rows;
        }
      Var conv = tape.add(
          tape.add(tape.matmul(tape.gather_rows(padded, prev), P(p + ".wm1")),
                   tape.matmul(x, P(p + ".w0"))),
          tape.matmul(tape.gather_rows(padded, next), P(p + ".wp1")));
      x = tape.gelu(tape.add_rowvec(conv, P(p + ".b")));
      if (training && cfg_.cnn_dropout > 0.0) {
        Var mask = dropout_mask(tape, rows, cfg_.cnn_channels[l], cfg_.cnn_dropout,
                                derive_seed(dropout_seed, 0xc0, static_cast<uint64_t>(l)));
        x = tape.mul(x, mask);
      }
    }
    return x;
  }

  template <typename Lookup>
  Var gru_direction(Tape& tape, Lookup& P, Var x, const std::string& prefix, int batch, int steps,
                    bool reverse, std::vector<Var>& out_by_step) const {
    int dg = cfg_.d_gru;
    // one big input projection per gate, then per-timestep gathers
    Var xz = tape.matmul(x, P(prefix + ".wz"));
    Var xr = tape.matmul(x, P(prefix + ".wr"));
    Var xh = tape.matmul(x, P(prefix + ".wh"));
    Var h = tape.input(MatrixXd::Zero(batch, dg));
    out_by_step.assign(steps, Var{});
    for (int i = 0; i < steps; ++i) {
      int s = reverse ? steps - 1 - i : i;
      std::vector<int> idx(batch);
      for (int b = 0; b < batch; ++b) idx[b] = b * steps + s;
      Var z = tape.logistic(tape.add_rowvec(
          tape.add(tape.gather_rows(xz, idx), tape.matmul(h, P(prefix + ".uz"))),
          P(prefix + ".bz")));
      Var r = tape.logistic(tape.add_rowvec(
          tape.add(tape.gather_rows(xr, idx), tape.matmul(h, P(prefix + ".ur"))),
          P(prefix + ".br")));
      Var cand = tape.tanh_op(tape.add_rowvec(
          tape.add(tape.gather_rows(xh, idx), tape.matmul(tape.mul(r, h), P(prefix + ".uh"))),
          P(prefix + ".bh")));
      h = tape.add(tape.mul(tape.add_const(tape.neg(z), 1.0), cand), tape.mul(z, h));
      out_by_step[s] = h;
    }
    return h;
  }

  template <typename Lookup>
  Var bigru(Tape& tape, Lookup& P, Var seq, int batch, int steps, bool training,
            uint64_t dropout_seed) const {
    Var x = seq;
    for (int l = 0; l < cfg_.gru_layers; ++l) {
      std::string base = "gru.l" + std::to_string(l);
      std::vector<Var> fwd, bwd;
      gru_direction(tape, P, x, base + ".fwd", batch, steps, false, fwd);
      gru_direction(tape, P, x, base + ".bwd", batch, steps, true, bwd);
      // stack s-major, then permute back to b-major
      Var smajor;
      for (int s = 0; s < steps; ++s) {
        Var both = tape.concat_cols(fwd[s], bwd[s]);
        smajor = s == 0 ? both : tape.concat_rows(smajor, both);
      }
      std::vector<int> to_bmajor(batch * steps);
      for (int b = 0; b < batch; ++b)
        for (int s = 0; s < steps; ++s) to_bmajor[b * steps + s] = s * batch + b;
      x = tape.gather_rows(smajor, to_bmajor);
      if (training && cfg_.dropout > 0.0 && l + 1 < cfg_.gru_layers) {
        Var mask = dropout_mask(tape, batch * steps, 2 * cfg_.d_gru, cfg_.dropout,
                                derive_seed(dropout_seed, 0xd0, static_cast<uint64_t>(l)));
        x = tape.mul(x, mask);
      }
    }
    return x;
  }

  NetConfig cfg_;
  std::vector<std::string> names_;
  std::vector<MatrixXd> weights_;
  std::map<std::string, int> index_;
};

}  // namespace msknet
