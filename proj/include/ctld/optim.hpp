#pragma once

#include <cmath>
#include <vector>

#include "ctld/params.hpp"

namespace ctld {

/// Polynomial decay: lr(t) = end + (init - end) * (1 - t/T)^power.
struct LrSchedule {
  double initial_lr = 1e-3;
  long total_steps = 1;
  double power = 0.9;
  double end_lr = 0.0;
};

inline double lr_at(const LrSchedule& s, long step) {
  if (step < 0) throw UsageError("lr_at: negative step");
  if (step >= s.total_steps) return s.end_lr;
  const double frac = 1.0 - static_cast<double>(step) / static_cast<double>(s.total_steps);
  return s.end_lr + (s.initial_lr - s.end_lr) * std::pow(frac, s.power);
}

template <typename Scalar>
struct AdamState {
  Scalar beta1 = Scalar(0.9);
  Scalar beta2 = Scalar(0.999);
  Scalar eps = Scalar(1e-8);
  long step = 0;
  std::vector<Tensor<Scalar>> m, v;  // aligned with store entry order

  static AdamState init(const ParamStore<Scalar>& store, Scalar beta1 = Scalar(0.9),
                        Scalar beta2 = Scalar(0.999), Scalar eps = Scalar(1e-8)) {
    AdamState st;
    st.beta1 = beta1;
    st.beta2 = beta2;
    st.eps = eps;
    st.m.reserve(store.count());
    st.v.reserve(store.count());
    for (std::size_t i = 0; i < store.count(); ++i) {
      st.m.emplace_back(store.entry(i).value.shape());
      st.v.emplace_back(store.entry(i).value.shape());
    }
    return st;
  }
};

/// One Adam update with bias correction. Frozen entries are untouched;
/// all gradient accumulators are cleared afterwards.
template <typename Scalar>
void adam_step(ParamStore<Scalar>& store, AdamState<Scalar>& st, Scalar lr) {
  if (st.m.size() != store.count() || st.v.size() != store.count())
    throw UsageError("adam_step: state does not match store");
  st.step += 1;
  const Scalar c1 = Scalar(1) - std::pow(st.beta1, static_cast<Scalar>(st.step));
  const Scalar c2 = Scalar(1) - std::pow(st.beta2, static_cast<Scalar>(st.step));
  for (std::size_t i = 0; i < store.count(); ++i) {
    auto& e = store.entry(i);
    if (e.grad.size() != e.value.size())
      throw UsageError("adam_step: missing gradient for " + store.names()[i]);
    if (e.trainable) {
      auto g = e.grad.array();
      auto& m = st.m[i].array();
      auto& v = st.v[i].array();
      m = st.beta1 * m + (Scalar(1) - st.beta1) * g;
      v = st.beta2 * v + (Scalar(1) - st.beta2) * g.square();
      e.value.array() -= lr * (m / c1) / ((v / c2).sqrt() + st.eps);
    }
    e.grad.set_zero();
  }
}

}  // namespace ctld
