#pragma once

#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "vig/error.hpp"
#include "vig/tensor.hpp"

namespace vig {

// Ordered record of the executed operations of one computation graph.
// Ops append a backward step as they execute; backward() replays the steps
// in reverse construction order, visiting each exactly once. Single-writer:
// a tape is built and differentiated on one thread.
template <class T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::function<void()> backward_step) {
    nodes_.push_back(std::move(backward_step));
  }

  std::size_t size() const { return nodes_.size(); }

  void backward(const Tensor<T>& loss) {
    if (!loss.valid() || loss.size() != 1) {
      throw TapeError("backward: loss must be a scalar tensor");
    }
    if (consumed_) {
      throw TapeError("backward: tape already differentiated; call reset() first");
    }
    consumed_ = true;
    loss.impl()->grad.assign(1, T(1));
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }

  void reset() {
    nodes_.clear();
    consumed_ = false;
  }

  bool consumed() const { return consumed_; }

  static Tape*& active() {
    thread_local Tape* current = nullptr;
    return current;
  }

 private:
  std::vector<std::function<void()>> nodes_;
  bool consumed_ = false;
};

// Makes a tape the recording target for ops executed in this scope.
template <class T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape) : prev_(Tape<T>::active()) { Tape<T>::active() = &tape; }
  ~TapeScope() { Tape<T>::active() = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* prev_;
};

// Convenience: backward through the active tape.
template <class T>
void backward(const Tensor<T>& loss) {
  Tape<T>* tape = Tape<T>::active();
  if (!tape) throw TapeError("backward: no active tape");
  tape->backward(loss);
}

// ---------------------------------------------------------------------------
// Kink log. While active it records the discrete decisions of a forward pass
// (ReLU input signs, max argmax choices) plus whether anything came within
// `tol` of a nondifferentiable point. finite_diff_check compares the logs of
// the +h and -h evaluations: a difference means the perturbation crossed a
// kink, so the coordinate is excluded instead of failed.
// ---------------------------------------------------------------------------

class KinkLog {
 public:
  explicit KinkLog(double tol = 1e-4) : tol_(tol) {}

  double tol() const { return tol_; }

  void log_sign(double x) {
    if (x > tol_) {
      events_.push_back(1);
    } else if (x < -tol_) {
      events_.push_back(-1);
    } else {
      events_.push_back(0);
      near_kink_ = true;
    }
  }

  void log_choice(std::uint32_t idx, double top_gap) {
    events_.push_back(static_cast<std::int32_t>(idx) + 2);
    if (top_gap < tol_) near_kink_ = true;
  }

  bool near_kink() const { return near_kink_; }
  const std::vector<std::int32_t>& events() const { return events_; }

  bool same_decisions(const KinkLog& other) const { return events_ == other.events_; }

  static KinkLog*& active() {
    thread_local KinkLog* current = nullptr;
    return current;
  }

 private:
  double tol_;
  bool near_kink_ = false;
  std::vector<std::int32_t> events_;
};

class KinkLogScope {
 public:
  explicit KinkLogScope(KinkLog& log) : prev_(KinkLog::active()) { KinkLog::active() = &log; }
  ~KinkLogScope() { KinkLog::active() = prev_; }
  KinkLogScope(const KinkLogScope&) = delete;
  KinkLogScope& operator=(const KinkLogScope&) = delete;

 private:
  KinkLog* prev_;
};

}  // namespace vig
