#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "looptune/errors.hpp"

namespace looptune {

class Tape;

/// A scalar that remembers how it was computed. Constants carry node == -1
/// and no tape; everything recorded on a tape carries its node index so a
/// single reverse sweep can recover d(output)/d(leaf) for every leaf.
struct DiffScalar {
  double value = 0.0;
  std::int32_t node = -1;
  Tape* tape = nullptr;

  DiffScalar() = default;
  DiffScalar(double v) : value(v) {}  // NOLINT: implicit constant lift
  DiffScalar(double v, std::int32_t n, Tape* t) : value(v), node(n), tape(t) {}

  bool is_constant() const { return node < 0; }
};

enum class Op : std::uint8_t {
  leaf,
  add,
  sub,
  mul,
  div,
  neg,
  tanh,
  relu,
  square,
  clamp,
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::leaf: return "leaf";
    case Op::add: return "add";
    case Op::sub: return "sub";
    case Op::mul: return "mul";
    case Op::div: return "div";
    case Op::neg: return "neg";
    case Op::tanh: return "tanh";
    case Op::relu: return "relu";
    case Op::square: return "square";
    case Op::clamp: return "clamp";
  }
  return "?";
}

class Gradients;

/// Append-only record of a scalar computation. Operand indices always point
/// at earlier nodes, so the node list is already topologically sorted and
/// backward() is a single reverse loop. A tape is single-threaded; run one
/// tape per rollout when evaluating in parallel.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  DiffScalar leaf(double v) {
    if (!std::isfinite(v)) throw NumericError("non-finite value in leaf");
    const auto id = push(Op::leaf, -1, 0.0, -1, 0.0);
    return {v, id, this};
  }

  std::size_t size() const { return nodes_.size(); }
  bool empty() const { return nodes_.empty(); }
  void reserve(std::size_t n) { nodes_.reserve(n); }

  /// Drops all nodes (capacity kept). Invalidates every DiffScalar that was
  /// recorded here.
  void clear() { nodes_.clear(); }

  Gradients backward(const DiffScalar& output) const;

  std::int32_t record(Op op, double result, std::int32_t a, double da,
                      std::int32_t b, double db) {
    if (!std::isfinite(result)) {
      throw NumericError(std::string("non-finite result in ") + op_name(op));
    }
    return push(op, a, da, b, db);
  }

 private:
  struct Node {
    Op op;
    std::int32_t a;
    std::int32_t b;
    double da;
    double db;
  };

  std::int32_t push(Op op, std::int32_t a, double da, std::int32_t b,
                    double db) {
    nodes_.push_back(Node{op, a, b, da, db});
    return static_cast<std::int32_t>(nodes_.size()) - 1;
  }

  std::vector<Node> nodes_;

  friend class Gradients;
};

/// Result of one reverse sweep: adjoints for every node at or before the
/// output. Immutable; safe to share across threads.
class Gradients {
 public:
  /// Gradient of the swept output with respect to `x`. Constants get 0.
  double wrt(const DiffScalar& x) const {
    if (x.node < 0) return 0.0;
    return at(x.node);
  }

  double at(std::int32_t node) const {
    if (node < 0 || static_cast<std::size_t>(node) >= adjoint_.size()) return 0.0;
    return adjoint_[node];
  }

 private:
  explicit Gradients(std::vector<double> adjoint) : adjoint_(std::move(adjoint)) {}
  std::vector<double> adjoint_;
  friend class Tape;
};

inline Gradients Tape::backward(const DiffScalar& output) const {
  if (output.node < 0 || output.tape != this ||
      static_cast<std::size_t>(output.node) >= nodes_.size()) {
    throw UsageError("backward: output is not recorded on this tape");
  }
  std::vector<double> adj(nodes_.size(), 0.0);
  adj[output.node] = 1.0;
  for (std::int32_t i = output.node; i >= 0; --i) {
    const double g = adj[i];
    if (g == 0.0) continue;
    const Node& n = nodes_[i];
    if (n.a >= 0) adj[n.a] += n.da * g;
    if (n.b >= 0) adj[n.b] += n.db * g;
  }
  return Gradients(std::move(adj));
}

namespace detail {

inline Tape* common_tape(const DiffScalar& x, const DiffScalar& y) {
  if (x.tape && y.tape && x.tape != y.tape) {
    throw UsageError("operands recorded on different tapes");
  }
  return x.tape ? x.tape : y.tape;
}

inline DiffScalar binary(Op op, const DiffScalar& x, const DiffScalar& y,
                         double result, double dx, double dy) {
  Tape* t = common_tape(x, y);
  if (!t) {
    if (!std::isfinite(result)) {
      throw NumericError(std::string("non-finite result in ") + op_name(op));
    }
    return {result};
  }
  const auto id = t->record(op, result, x.node, dx, y.node, dy);
  return {result, id, t};
}

inline DiffScalar unary(Op op, const DiffScalar& x, double result, double dx) {
  if (!x.tape) {
    if (!std::isfinite(result)) {
      throw NumericError(std::string("non-finite result in ") + op_name(op));
    }
    return {result};
  }
  const auto id = x.tape->record(op, result, x.node, dx, -1, 0.0);
  return {result, id, x.tape};
}

}  // namespace detail

inline DiffScalar operator+(const DiffScalar& x, const DiffScalar& y) {
  return detail::binary(Op::add, x, y, x.value + y.value, 1.0, 1.0);
}
inline DiffScalar operator-(const DiffScalar& x, const DiffScalar& y) {
  return detail::binary(Op::sub, x, y, x.value - y.value, 1.0, -1.0);
}
inline DiffScalar operator*(const DiffScalar& x, const DiffScalar& y) {
  return detail::binary(Op::mul, x, y, x.value * y.value, y.value, x.value);
}
inline DiffScalar operator/(const DiffScalar& x, const DiffScalar& y) {
  const double inv = 1.0 / y.value;
  return detail::binary(Op::div, x, y, x.value * inv, inv,
                        -x.value * inv * inv);
}
inline DiffScalar operator-(const DiffScalar& x) {
  return detail::unary(Op::neg, x, -x.value, -1.0);
}

inline DiffScalar& operator+=(DiffScalar& x, const DiffScalar& y) { return x = x + y; }
inline DiffScalar& operator-=(DiffScalar& x, const DiffScalar& y) { return x = x - y; }
inline DiffScalar& operator*=(DiffScalar& x, const DiffScalar& y) { return x = x * y; }

inline DiffScalar tanh(const DiffScalar& x) {
  const double t = std::tanh(x.value);
  return detail::unary(Op::tanh, x, t, 1.0 - t * t);
}

inline DiffScalar relu(const DiffScalar& x) {
  return detail::unary(Op::relu, x, x.value > 0.0 ? x.value : 0.0,
                       x.value > 0.0 ? 1.0 : 0.0);
}

inline DiffScalar square(const DiffScalar& x) {
  return detail::unary(Op::square, x, x.value * x.value, 2.0 * x.value);
}

/// Saturation. The subgradient at the boundaries lo and hi is 0: an actuator
/// sitting at its limit passes no sensitivity.
inline DiffScalar clamp(const DiffScalar& x, double lo, double hi) {
  if (!(lo <= hi)) throw UsageError("clamp: lo > hi");
  const double v = std::min(hi, std::max(lo, x.value));
  const double dx = (x.value > lo && x.value < hi) ? 1.0 : 0.0;
  return detail::unary(Op::clamp, x, v, dx);
}

// Plain-double twins so templated simulation code works for both scalar types.
inline double tanh(double x) { return std::tanh(x); }
inline double relu(double x) { return x > 0.0 ? x : 0.0; }
inline double square(double x) { return x * x; }
inline double clamp(double x, double lo, double hi) {
  if (!(lo <= hi)) throw UsageError("clamp: lo > hi");
  return std::min(hi, std::max(lo, x));
}

inline double primal(double x) { return x; }
inline double primal(const DiffScalar& x) { return x.value; }

/// Max over coordinates of |analytic - central difference| / max(1, |analytic|),
/// with f evaluated as a taped computation of the leaves it is handed.
/// F: DiffScalar f(Tape&, std::span<const DiffScalar> params)
template <class F>
double check_gradient(F&& f, std::span<const double> p, double step) {
  if (!(step > 0.0)) throw UsageError("check_gradient: step must be > 0");

  const auto eval = [&](std::span<const double> at) {
    Tape tape;
    std::vector<DiffScalar> leaves;
    leaves.reserve(at.size());
    for (double v : at) leaves.push_back(tape.leaf(v));
    return f(tape, std::span<const DiffScalar>(leaves)).value;
  };

  std::vector<double> analytic(p.size(), 0.0);
  {
    Tape tape;
    std::vector<DiffScalar> leaves;
    leaves.reserve(p.size());
    for (double v : p) leaves.push_back(tape.leaf(v));
    const DiffScalar out = f(tape, std::span<const DiffScalar>(leaves));
    if (!out.is_constant()) {
      const Gradients g = tape.backward(out);
      for (std::size_t i = 0; i < p.size(); ++i) analytic[i] = g.wrt(leaves[i]);
    }
  }

  double max_rel = 0.0;
  std::vector<double> probe(p.begin(), p.end());
  for (std::size_t i = 0; i < p.size(); ++i) {
    probe[i] = p[i] + step;
    const double hi = eval(probe);
    probe[i] = p[i] - step;
    const double lo = eval(probe);
    probe[i] = p[i];
    const double fd = (hi - lo) / (2.0 * step);
    const double rel =
        std::abs(analytic[i] - fd) / std::max(1.0, std::abs(analytic[i]));
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

}  // namespace looptune
