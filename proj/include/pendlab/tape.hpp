// Reverse-mode derivative engine. Operations record nodes with their local
// partials onto a tape; backward() accumulates adjoints in one reverse sweep.
// Fused kernels (policy evaluation, GP queries) push a single node carrying a
// precomputed partial list, so the tape stays small even when the forward
// computation is a large batched linear-algebra expression.
//
// A tape is single-owner: concurrent rollouts each record on their own tape.
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pendlab {

class TapeError : public std::runtime_error {
 public:
  explicit TapeError(const std::string& what) : std::runtime_error(what) {}
};

class Tape;

struct Var {
  Tape* tape = nullptr;
  std::int32_t idx = -1;

  bool valid() const { return tape != nullptr && idx >= 0; }
  double value() const;
};

struct TapeStats {
  std::size_t nodes = 0;
  std::size_t fused_nodes = 0;
  std::size_t fused_entries = 0;
  std::size_t bytes = 0;
};

class Tape {
 public:
  Var leaf(double v) { return push0(v); }

  double value(Var x) const { return nodes_[x.idx].val; }

  // Seeds d(out)/d(out) = 1 and sweeps the trace in reverse. Gradients of all
  // nodes (in particular the leaves) are then available via grad().
  void backward(Var out) {
    grad_.assign(nodes_.size(), 0.0);
    grad_[out.idx] = 1.0;
    for (std::int32_t i = out.idx; i >= 0; --i) {
      const double g = grad_[i];
      if (g == 0.0) continue;
      const Node& n = nodes_[i];
      if (n.a >= 0) grad_[n.a] += g * n.da;
      if (n.b >= 0) grad_[n.b] += g * n.db;
      for (std::int32_t k = 0; k < n.spill_len; ++k) {
        const Entry& e = spill_[n.spill_ofs + k];
        grad_[e.idx] += g * e.partial;
      }
    }
  }

  double grad(Var x) const { return grad_[x.idx]; }

  std::size_t size() const { return nodes_.size(); }

  void clear() {
    nodes_.clear();
    spill_.clear();
    grad_.clear();
    fused_nodes_ = 0;
  }

  TapeStats stats() const {
    TapeStats s;
    s.nodes = nodes_.size();
    s.fused_nodes = fused_nodes_;
    s.fused_entries = spill_.size();
    s.bytes = nodes_.capacity() * sizeof(Node) + spill_.capacity() * sizeof(Entry) +
              grad_.capacity() * sizeof(double);
    return s;
  }

  Var push0(double v) {
    check_value(v, "leaf/constant");
    nodes_.push_back(Node{v, -1, -1, 0.0, 0.0, 0, 0});
    return Var{this, static_cast<std::int32_t>(nodes_.size() - 1)};
  }

  Var push1(double v, Var a, double da, const char* op = "unary") {
    check_value(v, op);
    nodes_.push_back(Node{v, a.idx, -1, da, 0.0, 0, 0});
    return Var{this, static_cast<std::int32_t>(nodes_.size() - 1)};
  }

  Var push2(double v, Var a, double da, Var b, double db, const char* op = "binary") {
    check_value(v, op);
    nodes_.push_back(Node{v, a.idx, b.idx, da, db, 0, 0});
    return Var{this, static_cast<std::int32_t>(nodes_.size() - 1)};
  }

  // One node whose output depends on many inputs through precomputed partials.
  Var push_fused(double v, std::span<const std::int32_t> idx,
                 std::span<const double> partial, const char* op = "fused") {
    check_value(v, op);
    if (idx.size() != partial.size()) throw TapeError("push_fused: size mismatch");
    const auto ofs = static_cast<std::int32_t>(spill_.size());
    for (std::size_t k = 0; k < idx.size(); ++k) {
      if (!std::isfinite(partial[k]))
        throw TapeError(std::string(op) + ": non-finite partial derivative");
      spill_.push_back(Entry{idx[k], partial[k]});
    }
    nodes_.push_back(Node{v, -1, -1, 0.0, 0.0, ofs, static_cast<std::int32_t>(idx.size())});
    ++fused_nodes_;
    return Var{this, static_cast<std::int32_t>(nodes_.size() - 1)};
  }

 private:
  struct Entry {
    std::int32_t idx;
    double partial;
  };
  struct Node {
    double val;
    std::int32_t a, b;
    double da, db;
    std::int32_t spill_ofs, spill_len;
  };

  static void check_value(double v, const char* op) {
    if (!std::isfinite(v)) throw TapeError(std::string(op) + ": produced a non-finite value");
  }

  std::vector<Node> nodes_;
  std::vector<Entry> spill_;
  std::vector<double> grad_;
  std::size_t fused_nodes_ = 0;
};

inline double Var::value() const { return tape->value(*this); }

// --- arithmetic -------------------------------------------------------------

inline Var operator+(Var a, Var b) { return a.tape->push2(a.value() + b.value(), a, 1.0, b, 1.0, "+"); }
inline Var operator-(Var a, Var b) { return a.tape->push2(a.value() - b.value(), a, 1.0, b, -1.0, "-"); }
inline Var operator*(Var a, Var b) { return a.tape->push2(a.value() * b.value(), a, b.value(), b, a.value(), "*"); }
inline Var operator/(Var a, Var b) {
  const double bv = b.value();
  if (bv == 0.0) throw TapeError("/: division by zero");
  const double v = a.value() / bv;
  return a.tape->push2(v, a, 1.0 / bv, b, -v / bv, "/");
}

inline Var operator+(Var a, double c) { return a.tape->push1(a.value() + c, a, 1.0, "+"); }
inline Var operator+(double c, Var a) { return a + c; }
inline Var operator-(Var a, double c) { return a.tape->push1(a.value() - c, a, 1.0, "-"); }
inline Var operator-(double c, Var a) { return a.tape->push1(c - a.value(), a, -1.0, "-"); }
inline Var operator*(Var a, double c) { return a.tape->push1(a.value() * c, a, c, "*"); }
inline Var operator*(double c, Var a) { return a * c; }
inline Var operator/(Var a, double c) { return a.tape->push1(a.value() / c, a, 1.0 / c, "/"); }
inline Var operator/(double c, Var a) {
  const double av = a.value();
  if (av == 0.0) throw TapeError("/: division by zero");
  return a.tape->push1(c / av, a, -c / (av * av), "/");
}
inline Var operator-(Var a) { return a.tape->push1(-a.value(), a, -1.0, "neg"); }

// --- elementary functions ----------------------------------------------------

inline Var exp(Var a) {
  const double v = std::exp(a.value());
  return a.tape->push1(v, a, v, "exp");
}
inline Var log(Var a) {
  if (!(a.value() > 0.0)) throw TapeError("log: non-positive argument");
  return a.tape->push1(std::log(a.value()), a, 1.0 / a.value(), "log");
}
inline Var tanh(Var a) {
  const double t = std::tanh(a.value());
  return a.tape->push1(t, a, 1.0 - t * t, "tanh");
}
inline Var sin(Var a) { return a.tape->push1(std::sin(a.value()), a, std::cos(a.value()), "sin"); }
inline Var cos(Var a) { return a.tape->push1(std::cos(a.value()), a, -std::sin(a.value()), "cos"); }
inline Var sqrt(Var a) {
  if (a.value() < 0.0) throw TapeError("sqrt: negative argument");
  const double v = std::sqrt(a.value());
  const double d = v > 0.0 ? 0.5 / v : 0.0;  // subgradient at 0
  return a.tape->push1(v, a, d, "sqrt");
}
inline Var abs(Var a) {
  const double v = a.value();
  return a.tape->push1(std::abs(v), a, v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0), "abs");
}
inline Var square(Var a) { return a.tape->push1(a.value() * a.value(), a, 2.0 * a.value(), "square"); }

// Shift by a multiple of 2*pi into (-pi, pi]; derivative 1 almost everywhere.
inline Var wrap_angle(Var a) {
  const double two_pi = 6.283185307179586476925286766559;
  double w = std::remainder(a.value(), two_pi);
  if (w <= -3.14159265358979323846) w += two_pi;
  return a.tape->push1(w, a, 1.0, "wrap_angle");
}

// --- recording API ------------------------------------------------------------

// A scalar objective expressed over tape variables. The same callable serves
// both recorded evaluation and finite-difference probing.
using TapeFn = std::function<Var(Tape&, std::span<const Var>)>;

struct GradResult {
  double value = 0.0;
  std::vector<double> grad;
};

// Evaluates fn at `params` under recording and returns value plus the exact
// gradient of the recorded trace.
GradResult record_and_grad(const TapeFn& fn, std::span<const double> params);

// Value-only evaluation (records and discards the trace).
double record_value(const TapeFn& fn, std::span<const double> params);

struct FiniteDiffReport {
  std::vector<double> analytic;
  std::vector<double> numeric;
  double max_rel_error = 0.0;    // over components with |analytic| > floor
  double max_abs_error = 0.0;
  int worst_component = -1;
  double magnitude_floor = 1e-6;
};

// Central differences with the given step against the recorded gradient.
FiniteDiffReport finite_diff_check(const TapeFn& fn, std::span<const double> params,
                                   double step, double magnitude_floor = 1e-6);

}  // namespace pendlab
