#pragma once

// Central finite-difference verification of reverse-mode gradients. Used
// by the CLI selfcheck and the test suites; the finite-difference side
// never touches the tape and is therefore independent of the adjoint code
// it checks.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "rhythmrec/tensor.hpp"

namespace rhythmrec {

struct GradCheckResult {
  bool ok = true;
  double max_rel_err = 0.0;
  std::string worst;  // "name[i]" of the worst element
  std::size_t checked = 0;
};

// relative error with a floor so that near-zero gradient pairs compare on
// an absolute scale instead of blowing up on finite-difference noise
inline double grad_rel_err(double a, double b) {
  const double denom = std::max(std::abs(a) + std::abs(b), 1e-6);
  return std::abs(a - b) / denom;
}

// `loss` must be a pure function of the parameter values (no tape needed;
// it is invoked with no tape active). One tape-driven backward pass is run
// first, then every element of every parameter is perturbed by +/- h.
inline GradCheckResult gradcheck(std::vector<std::pair<std::string, Tensor>> params,
                                 const std::function<Tensor()>& loss,
                                 double h = 1e-5, double tol = 1e-4) {
  GradCheckResult res;

  for (auto& [name, p] : params) p.zero_grad();
  Tape tape;
  {
    Tape::Scope scope(tape);
    Tensor l = loss();
    tape.backward(l);
  }

  for (auto& [name, p] : params) {
    if (!p.requires_grad()) continue;
    std::vector<double>& w = p.values();
    const std::vector<double> ad = p.has_grad() ? p.grad_ref() : std::vector<double>(p.size(), 0.0);
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double keep = w[i];
      w[i] = keep + h;
      const double fp = loss().item();
      w[i] = keep - h;
      const double fm = loss().item();
      w[i] = keep;
      const double fd = (fp - fm) / (2.0 * h);
      const double err = grad_rel_err(ad[i], fd);
      ++res.checked;
      if (err > res.max_rel_err) {
        res.max_rel_err = err;
        res.worst = name + "[" + std::to_string(i) + "]";
      }
      if (err > tol) res.ok = false;
    }
  }
  return res;
}

}  // namespace rhythmrec
