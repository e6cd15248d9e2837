#include "pendlab/tape.hpp"

namespace pendlab {

GradResult record_and_grad(const TapeFn& fn, std::span<const double> params) {
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(params.size());
  for (double p : params) leaves.push_back(tape.leaf(p));
  const Var out = fn(tape, leaves);
  tape.backward(out);
  GradResult res;
  res.value = tape.value(out);
  res.grad.resize(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) res.grad[i] = tape.grad(leaves[i]);
  return res;
}

double record_value(const TapeFn& fn, std::span<const double> params) {
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(params.size());
  for (double p : params) leaves.push_back(tape.leaf(p));
  return tape.value(fn(tape, leaves));
}

FiniteDiffReport finite_diff_check(const TapeFn& fn, std::span<const double> params,
                                   double step, double magnitude_floor) {
  if (!(step > 0)) throw std::invalid_argument("finite_diff_check: step must be positive");
  FiniteDiffReport rep;
  rep.magnitude_floor = magnitude_floor;
  rep.analytic = record_and_grad(fn, params).grad;
  rep.numeric.resize(params.size());

  std::vector<double> shifted(params.begin(), params.end());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double orig = shifted[i];
    shifted[i] = orig + step;
    const double fp = record_value(fn, shifted);
    shifted[i] = orig - step;
    const double fm = record_value(fn, shifted);
    shifted[i] = orig;
    rep.numeric[i] = (fp - fm) / (2.0 * step);

    const double abs_err = std::abs(rep.numeric[i] - rep.analytic[i]);
    rep.max_abs_error = std::max(rep.max_abs_error, abs_err);
    if (std::abs(rep.analytic[i]) > magnitude_floor) {
      const double rel = abs_err / std::abs(rep.analytic[i]);
      if (rel > rep.max_rel_error) {
        rep.max_rel_error = rel;
        rep.worst_component = static_cast<int>(i);
      }
    }
  }
  return rep;
}

}  // namespace pendlab
