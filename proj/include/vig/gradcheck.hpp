#pragma once

// Central-difference gradient verification. The analytic gradient comes from
// a taped backward pass; each parameter coordinate is then perturbed by ±step
// and the two side evaluations are compared. Coordinates whose perturbation
// lands within tolerance of (or crosses) a ReLU boundary or a max tie are
// excluded and reported rather than failed.

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "vig/ops.hpp"
#include "vig/tape.hpp"
#include "vig/tensor.hpp"

namespace vig {

struct KinkCoordinate {
  std::size_t param;  // index into the params list
  std::size_t coord;  // flat index inside the parameter
};

template <class T>
struct GradCheckReport {
  T max_rel_error = T(0);
  std::size_t checked = 0;
  std::size_t worst_param = 0;
  std::size_t worst_coord = 0;
  T worst_analytic = T(0);
  T worst_numeric = T(0);
  std::vector<KinkCoordinate> kinks;
};

// f evaluates the scalar objective from the current contents of `params`
// (the same tensors are perturbed in place). `coords`, when given, selects
// which flat coordinates of each parameter to test; by default every
// coordinate is tested.
template <class T>
GradCheckReport<T> finite_diff_check(const std::function<Tensor<T>()>& f,
                                     const std::vector<Tensor<T>>& params, T step,
                                     const std::vector<std::vector<std::size_t>>* coords = nullptr,
                                     double kink_tol = 1e-4) {
  if (step <= T(0)) throw Error("finite_diff_check: step must be > 0");

  // Determinism gate: two tape-free evaluations must agree bitwise.
  const std::vector<T> v1 = f().data();
  const std::vector<T> v2 = f().data();
  if (v1 != v2) throw Error("finite_diff_check: f is not deterministic");

  // Analytic gradients.
  std::vector<std::vector<T>> analytic(params.size());
  {
    for (const auto& p : params) p.impl()->grad.clear();
    Tape<T> tape;
    TapeScope<T> scope(tape);
    Tensor<T> loss = f();
    if (loss.size() != 1) throw Error("finite_diff_check: f must return a scalar");
    tape.backward(loss);
    for (std::size_t i = 0; i < params.size(); ++i) {
      analytic[i] = params[i].has_grad() ? params[i].impl()->grad
                                         : std::vector<T>(params[i].size(), T(0));
    }
    for (const auto& p : params) p.impl()->grad.clear();
  }

  GradCheckReport<T> report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    std::vector<T>& data = params[pi].impl()->value;
    std::vector<std::size_t> all;
    const std::vector<std::size_t>* idx = nullptr;
    if (coords) {
      idx = &(*coords)[pi];
    } else {
      all.resize(data.size());
      for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
      idx = &all;
    }
    for (std::size_t ci : *idx) {
      const T orig = data[ci];

      KinkLog log_plus(kink_tol);
      data[ci] = orig + step;
      T f_plus;
      {
        KinkLogScope ks(log_plus);
        f_plus = f().item();
      }

      KinkLog log_minus(kink_tol);
      data[ci] = orig - step;
      T f_minus;
      {
        KinkLogScope ks(log_minus);
        f_minus = f().item();
      }
      data[ci] = orig;

      if (!log_plus.same_decisions(log_minus) || log_plus.near_kink() ||
          log_minus.near_kink()) {
        report.kinks.push_back({pi, ci});
        continue;
      }

      const T numeric = (f_plus - f_minus) / (T(2) * step);
      const T an = analytic[pi][ci];
      const T denom = std::max(std::max(std::abs(an), std::abs(numeric)), T(1e-12));
      const T rel = std::abs(an - numeric) / denom;
      ++report.checked;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_param = pi;
        report.worst_coord = ci;
        report.worst_analytic = an;
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace vig
