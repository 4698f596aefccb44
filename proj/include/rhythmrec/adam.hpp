#pragma once

// Adam with bias correction over a fixed list of parameter tensors.

#include <cmath>
#include <cstddef>
#include <vector>

#include "rhythmrec/tensor.hpp"

namespace rhythmrec {

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class AdamState {
 public:
  explicit AdamState(AdamConfig cfg = {}) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }
  std::size_t step_count() const { return step_; }

  // One update over all parameters; the step counter increments once per
  // call. Parameter order and shapes must stay fixed across calls.
  void step(std::vector<Tensor>& params) {
    if (moments_.empty()) {
      moments_.resize(params.size());
      for (std::size_t i = 0; i < params.size(); ++i) {
        moments_[i].m.assign(params[i].size(), 0.0);
        moments_[i].v.assign(params[i].size(), 0.0);
      }
    }
    if (moments_.size() != params.size())
      throw Error("adam: parameter count changed between steps");
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor& p = params[i];
      if (p.size() != moments_[i].m.size())
        throw Error("adam: parameter " + std::to_string(i) + " changed shape, " +
                    shape_str(p.shape()));
      if (!p.requires_grad() || !p.has_grad()) continue;
      double* w = p.data();
      const std::vector<double>& g = p.grad_ref();
      std::vector<double>& m = moments_[i].m;
      std::vector<double>& v = moments_[i].v;
      for (std::size_t j = 0; j < g.size(); ++j) {
        m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
        v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
        const double mhat = m[j] / bc1;
        const double vhat = v[j] / bc2;
        w[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.epsilon);
      }
    }
  }

 private:
  struct Moments {
    std::vector<double> m, v;
  };
  AdamConfig cfg_;
  std::vector<Moments> moments_;
  std::size_t step_ = 0;
};

}  // namespace rhythmrec
