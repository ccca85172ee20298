#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "fqbmru/models.hpp"

namespace fqbmru::test_support {

/// Worst relative error, ||analytic − numeric|| / ||numeric|| per parameter
/// tensor, between backprop and central differences of the all-timestep
/// cross-entropy of a hardware-style net.
inline double parameter_grad_check(HardwareNet& net, const Batch& batch, const ForwardOptions& opt,
                                   double step = 1e-6) {
  const std::vector<int> labels = batch.row_labels();
  auto loss = [&](bool record) {
    Tape tape(record);
    Var l = cross_entropy_rows(net.forward(tape, batch, opt), labels);
    if (record) tape.backward(l);
    return l.value().item();
  };
  for (auto* p : net.parameters()) p->zero_grad();
  loss(true);
  double worst = 0.0;
  for (auto* p : net.parameters()) {
    double diff = 0.0, norm = 0.0;
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double orig = p->value[i];
      p->value[i] = orig + step;
      const double fp = loss(false);
      p->value[i] = orig - step;
      const double fm = loss(false);
      p->value[i] = orig;
      const double numeric = (fp - fm) / (2.0 * step);
      diff += (p->grad[i] - numeric) * (p->grad[i] - numeric);
      norm += numeric * numeric;
    }
    if (norm > 1e-20) worst = std::max(worst, std::sqrt(diff / norm));
  }
  return worst;
}

}  // namespace fqbmru::test_support
