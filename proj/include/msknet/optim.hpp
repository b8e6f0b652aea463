#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "msknet/common.hpp"

namespace msknet {

using Eigen::MatrixXd;

// Cosine decay from `base` to a floor of 0.1 * base over `total` steps,
// clamped at the floor beyond that.
inline double cosine_lr(long step, long total, double base) {
  require(total > 0, "cosine_lr: total steps must be > 0");
  double floor = 0.1 * base;
  if (step >= total) return floor;
  if (step < 0) step = 0;
  return floor + (base - floor) * 0.5 * (1.0 + std::cos(M_PI * double(step) / double(total)));
}

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;  // decoupled: applied directly to the weights
};

// Adam with decoupled weight decay. Moments are lazily shaped on first step.
// Non-finite gradients abort: a poisoned moment estimate cannot be walked back.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  void step(std::vector<MatrixXd>& params, const std::vector<MatrixXd>& grads, double lr,
            const std::vector<std::string>* names = nullptr) {
    require(params.size() == grads.size(), "adam: params/grads size mismatch");
    if (m_.empty()) {
      for (const auto& p : params) {
        m_.push_back(MatrixXd::Zero(p.rows(), p.cols()));
        v_.push_back(MatrixXd::Zero(p.rows(), p.cols()));
      }
    }
    require(m_.size() == params.size(), "adam: parameter count changed mid-run");
    for (size_t i = 0; i < grads.size(); ++i) {
      require(grads[i].rows() == params[i].rows() && grads[i].cols() == params[i].cols(),
              "adam: gradient shape mismatch at parameter " + std::to_string(i));
      if (!grads[i].allFinite()) {
        std::string who = names && i < names->size() ? (*names)[i] : std::to_string(i);
        throw Error("adam: non-finite gradient in parameter '" + who + "' at step " +
                    std::to_string(t_ + 1));
      }
    }
    ++t_;
    double c1 = 1.0 - std::pow(cfg_.beta1, double(t_));
    double c2 = 1.0 - std::pow(cfg_.beta2, double(t_));
    for (size_t i = 0; i < params.size(); ++i) {
      m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * grads[i];
      v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * grads[i].cwiseProduct(grads[i]);
      MatrixXd mhat = m_[i] / c1;
      MatrixXd vhat = v_[i] / c2;
      // decay couples to the pre-update weights
      MatrixXd update = (mhat.array() / (vhat.array().sqrt() + cfg_.eps)).matrix() +
                        cfg_.weight_decay * params[i];
      params[i] -= lr * update;
    }
  }

  long t() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

  // checkpoint access
  std::vector<MatrixXd>& first_moments() { return m_; }
  std::vector<MatrixXd>& second_moments() { return v_; }
  void restore(long t, std::vector<MatrixXd> m, std::vector<MatrixXd> v) {
    t_ = t;
    m_ = std::move(m);
    v_ = std::move(v);
  }

 private:
  AdamConfig cfg_;
  long t_ = 0;
  std::vector<MatrixXd> m_, v_;
};

}  // namespace msknet
