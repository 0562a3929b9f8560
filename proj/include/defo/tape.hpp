#pragma once

#include <cstring>

#include "defo/core.hpp"

namespace defo {

// ---------------------------------------------------------------------------
// Activations. Second derivatives are needed because spatial-gradient terms
// put activation-derivative nodes on the tape, and the reverse pass then
// differentiates through them.
// ---------------------------------------------------------------------------
enum class Act : uint8_t { Identity, Relu, Softplus, Tanh, Sine };

inline Act act_from_string(const std::string& s) {
  if (s == "identity") return Act::Identity;
  if (s == "relu") return Act::Relu;
  if (s == "softplus") return Act::Softplus;
  if (s == "tanh") return Act::Tanh;
  if (s == "sine") return Act::Sine;
  throw ConfigError("unknown activation: " + s);
}

inline std::string act_to_string(Act a) {
  switch (a) {
    case Act::Identity: return "identity";
    case Act::Relu: return "relu";
    case Act::Softplus: return "softplus";
    case Act::Tanh: return "tanh";
    case Act::Sine: return "sine";
  }
  return "identity";
}

inline Real act_f(Act k, Real x, Real beta) {
  switch (k) {
    case Act::Identity: return x;
    case Act::Relu: return x > 0 ? x : 0;
    case Act::Softplus:
      // stable for large |beta*x|
      return beta * x > 30 ? x : std::log1p(std::exp(beta * x)) / beta;
    case Act::Tanh: return std::tanh(x);
    case Act::Sine: return std::sin(x);
  }
  return x;
}

inline Real act_df(Act k, Real x, Real beta) {
  switch (k) {
    case Act::Identity: return 1;
    case Act::Relu: return x > 0 ? 1 : 0;
    case Act::Softplus: {
      Real t = beta * x;
      return t > 0 ? 1 / (1 + std::exp(-t)) : std::exp(t) / (1 + std::exp(t));
    }
    case Act::Tanh: {
      Real t = std::tanh(x);
      return 1 - t * t;
    }
    case Act::Sine: return std::cos(x);
  }
  return 1;
}

inline Real act_ddf(Act k, Real x, Real beta) {
  switch (k) {
    case Act::Identity: return 0;
    case Act::Relu: return 0;
    case Act::Softplus: {
      Real s = act_df(Act::Softplus, x, beta);
      return beta * s * (1 - s);
    }
    case Act::Tanh: {
      Real t = std::tanh(x);
      return -2 * t * (1 - t * t);
    }
    case Act::Sine: return -std::sin(x);
  }
  return 0;
}

// ---------------------------------------------------------------------------
// Reverse-mode tape over vector-valued nodes.
//
// Values are computed eagerly as nodes are recorded; backward() replays the
// list in reverse accumulating vector-Jacobian products. Node values and
// adjoints live in one flat arena so per-sample tapes can be reset and reused
// without reallocating. Slice nodes alias their parent's arena range, which
// makes slice/concat adjoints free.
// ---------------------------------------------------------------------------
class Tape {
  enum class Op : uint8_t {
    Leaf,
    Affine,          // out = W a + b      (w: weight node, a: input, b: bias or -1)
    Activation,      // out = f(a)
    ActPrime,        // out = f'(a)
    Add,             // out = a + b
    Sub,             // out = a - b
    Mul,             // out = a .* b
    Scale,           // out = c0 * a
    AddScaled,       // out = a + c0 * b
    Dot,             // out = <a, b>          (length 1)
    Sum,             // out = sum(a)          (length 1)
    Norm2,           // out = ||a||_2         (length 1)
    NormalizeSmooth, // out = a / sqrt(||a||^2 + c0^2)
    Abs,             // out = |a| elementwise
    Clamp,           // out = clamp(a, c0, c1)
    Concat2,         // out = [a; b]
    Slice,           // view of a[c_int .. c_int+len)
  };

  struct Node {
    Op op;
    Act act = Act::Identity;
    bool needs_grad = false;
    int a = -1, b = -1, w = -1;
    int rows = 0, cols = 0;
    uint32_t off = 0, len = 0;
    Real c0 = 0, c1 = 0;
    const Real* ext = nullptr;  // Leaf view source
  };

 public:
  Tape() { reserve(256, 1 << 14); }

  void reserve(size_t nodes, size_t arena) {
    nodes_.reserve(nodes);
    vals_.reserve(arena);
    grads_.reserve(arena);
  }

  void reset() {
    nodes_.clear();
    used_ = 0;
  }

  size_t node_count() const { return nodes_.size(); }

  std::span<const Real> val(int id) const {
    const Node& n = nodes_[size_t(id)];
    return {vals_.data() + n.off, n.len};
  }
  Real val0(int id) const { return vals_[nodes_[size_t(id)].off]; }
  std::span<const Real> grad(int id) const {
    const Node& n = nodes_[size_t(id)];
    return {grads_.data() + n.off, n.len};
  }
  int length(int id) const { return int(nodes_[size_t(id)].len); }

  // ---- leaves -------------------------------------------------------------
  int leaf(std::span<const Real> v, bool needs_grad) {
    Node n{};
    n.op = Op::Leaf;
    n.needs_grad = needs_grad;
    alloc(n, uint32_t(v.size()));
    std::memcpy(vals_.data() + n.off, v.data(), v.size() * sizeof(Real));
    return push(n);
  }

  // Borrows caller storage; values are read at record time and by replay().
  int leaf_view(const Real* p, size_t len, bool needs_grad) {
    Node n{};
    n.op = Op::Leaf;
    n.needs_grad = needs_grad;
    n.ext = p;
    alloc(n, uint32_t(len));
    std::memcpy(vals_.data() + n.off, p, len * sizeof(Real));
    return push(n);
  }

  int constant(std::span<const Real> v) { return leaf(v, false); }
  int constant3(const Vec3& v) {
    std::array<Real, 3> a = {v.x, v.y, v.z};
    return leaf(a, false);
  }
  int scalar_const(Real v) {
    std::array<Real, 1> a = {v};
    return leaf(a, false);
  }

  // ---- recorded ops -------------------------------------------------------
  int affine(int w, int a, int b, int rows, int cols) {
    const Node& wn = node(w);
    const Node& an = node(a);
    if (int(wn.len) != rows * cols || int(an.len) != cols)
      throw ConfigError("affine: shape mismatch (" + std::to_string(wn.len) +
                        " weights, " + std::to_string(an.len) + " inputs, " +
                        std::to_string(rows) + "x" + std::to_string(cols) +
                        ")");
    if (b >= 0 && int(node(b).len) != rows)
      throw ConfigError("affine: bias length mismatch");
    Node n{};
    n.op = Op::Affine;
    n.a = a;
    n.b = b;
    n.w = w;
    n.rows = rows;
    n.cols = cols;
    n.needs_grad = wn.needs_grad || an.needs_grad ||
                   (b >= 0 && node(b).needs_grad);
    alloc(n, uint32_t(rows));
    const Real* W = vals_.data() + wn.off;
    const Real* x = vals_.data() + an.off;
    Real* out = vals_.data() + n.off;
    for (int r = 0; r < rows; ++r) {
      Real acc = b >= 0 ? vals_[node(b).off + uint32_t(r)] : 0.0;
      const Real* wrow = W + size_t(r) * size_t(cols);
      for (int c = 0; c < cols; ++c) acc += wrow[c] * x[c];
      out[r] = acc;
    }
    return push(n);
  }

  int activation(int a, Act k, Real beta = 1.0) {
    if (k == Act::Identity) return a;
    Node n = unary(a, Op::Activation);
    n.act = k;
    n.c0 = beta;
    const Real* x = vals_.data() + node(a).off;
    Real* out = vals_.data() + n.off;
    for (uint32_t i = 0; i < n.len; ++i) out[i] = act_f(k, x[i], beta);
    return push(n);
  }

  int act_prime(int a, Act k, Real beta = 1.0) {
    Node n = unary(a, Op::ActPrime);
    n.act = k;
    n.c0 = beta;
    const Real* x = vals_.data() + node(a).off;
    Real* out = vals_.data() + n.off;
    for (uint32_t i = 0; i < n.len; ++i) out[i] = act_df(k, x[i], beta);
    return push(n);
  }

  int add(int a, int b) { return binary(a, b, Op::Add); }
  int sub(int a, int b) { return binary(a, b, Op::Sub); }
  int mul(int a, int b) { return binary(a, b, Op::Mul); }

  int scale(int a, Real s) {
    Node n = unary(a, Op::Scale);
    n.c0 = s;
    const Real* x = vals_.data() + node(a).off;
    Real* out = vals_.data() + n.off;
    for (uint32_t i = 0; i < n.len; ++i) out[i] = s * x[i];
    return push(n);
  }

  int add_scaled(int a, int b, Real s) {
    check_same_len(a, b, "add_scaled");
    Node n = unary(a, Op::AddScaled);
    n.b = b;
    n.c0 = s;
    n.needs_grad = node(a).needs_grad || node(b).needs_grad;
    const Real* x = vals_.data() + node(a).off;
    const Real* y = vals_.data() + node(b).off;
    Real* out = vals_.data() + n.off;
    for (uint32_t i = 0; i < n.len; ++i) out[i] = x[i] + s * y[i];
    return push(n);
  }

  int dot(int a, int b) {
    check_same_len(a, b, "dot");
    Node n{};
    n.op = Op::Dot;
    n.a = a;
    n.b = b;
    n.needs_grad = node(a).needs_grad || node(b).needs_grad;
    alloc(n, 1);
    const Real* x = vals_.data() + node(a).off;
    const Real* y = vals_.data() + node(b).off;
    Real acc = 0;
    for (uint32_t i = 0; i < node(a).len; ++i) acc += x[i] * y[i];
    vals_[n.off] = acc;
    return push(n);
  }

  int sum(int a) {
    Node n{};
    n.op = Op::Sum;
    n.a = a;
    n.needs_grad = node(a).needs_grad;
    alloc(n, 1);
    const Real* x = vals_.data() + node(a).off;
    Real acc = 0;
    for (uint32_t i = 0; i < node(a).len; ++i) acc += x[i];
    vals_[n.off] = acc;
    return push(n);
  }

  int norm2(int a) {
    Node n{};
    n.op = Op::Norm2;
    n.a = a;
    n.needs_grad = node(a).needs_grad;
    alloc(n, 1);
    const Real* x = vals_.data() + node(a).off;
    Real acc = 0;
    for (uint32_t i = 0; i < node(a).len; ++i) acc += x[i] * x[i];
    vals_[n.off] = std::sqrt(acc);
    return push(n);
  }

  int normalize_smooth(int a, Real eps) {
    Node n = unary(a, Op::NormalizeSmooth);
    n.c0 = eps;
    const Real* x = vals_.data() + node(a).off;
    Real* out = vals_.data() + n.off;
    Real s = eps * eps;
    for (uint32_t i = 0; i < n.len; ++i) s += x[i] * x[i];
    Real inv = 1.0 / std::sqrt(s);
    for (uint32_t i = 0; i < n.len; ++i) out[i] = x[i] * inv;
    return push(n);
  }

  int abs(int a) {
    Node n = unary(a, Op::Abs);
    const Real* x = vals_.data() + node(a).off;
    Real* out = vals_.data() + n.off;
    for (uint32_t i = 0; i < n.len; ++i) out[i] = std::fabs(x[i]);
    return push(n);
  }

  int clamp(int a, Real lo, Real hi) {
    Node n = unary(a, Op::Clamp);
    n.c0 = lo;
    n.c1 = hi;
    const Real* x = vals_.data() + node(a).off;
    Real* out = vals_.data() + n.off;
    for (uint32_t i = 0; i < n.len; ++i)
      out[i] = x[i] < lo ? lo : (x[i] > hi ? hi : x[i]);
    return push(n);
  }

  int concat(int a, int b) {
    Node n{};
    n.op = Op::Concat2;
    n.a = a;
    n.b = b;
    n.needs_grad = node(a).needs_grad || node(b).needs_grad;
    alloc(n, node(a).len + node(b).len);
    std::memcpy(vals_.data() + n.off, vals_.data() + node(a).off,
                node(a).len * sizeof(Real));
    std::memcpy(vals_.data() + n.off + node(a).len,
                vals_.data() + node(b).off, node(b).len * sizeof(Real));
    return push(n);
  }

  // Aliasing view; adjoints accumulate directly into the parent range.
  int slice(int a, uint32_t off, uint32_t len) {
    const Node& an = node(a);
    if (off + len > an.len) throw ConfigError("slice: out of range");
    Node n{};
    n.op = Op::Slice;
    n.a = a;
    n.needs_grad = an.needs_grad;
    n.off = an.off + off;
    n.len = len;
    return push(n);
  }

  // ---- reverse pass -------------------------------------------------------
  void backward(int out, std::span<const Real> seed) {
    const Node& on = node(out);
    if (seed.size() != on.len)
      throw ConfigError("backward: seed length mismatch");
    grads_.assign(vals_.size(), 0.0);
    for (uint32_t i = 0; i < on.len; ++i) grads_[on.off + i] = seed[i];
    run_reverse(out);
  }

  void backward_scalar(int out, Real seed) {
    std::array<Real, 1> s = {seed};
    backward(out, s);
  }

  // Seeds several output nodes at once and runs one reverse sweep. Needed
  // when adjoints of a recorded step only become known later (e.g. the
  // recursion across a dynamics window).
  void backward_multi(
      std::span<const std::pair<int, std::span<const Real>>> seeds) {
    grads_.assign(vals_.size(), 0.0);
    int top = -1;
    for (const auto& [id, seed] : seeds) {
      const Node& n = node(id);
      if (seed.size() != n.len)
        throw ConfigError("backward_multi: seed length mismatch");
      for (uint32_t i = 0; i < n.len; ++i) grads_[n.off + i] += seed[i];
      top = std::max(top, id);
    }
    if (top >= 0) run_reverse(top);
  }

  // Recompute all node values from leaves (views re-read their source).
  void replay() {
    for (size_t i = 0; i < nodes_.size(); ++i) recompute(int(i));
  }

 private:
  Node& node(int id) { return nodes_[size_t(id)]; }
  const Node& node(int id) const { return nodes_[size_t(id)]; }

  void alloc(Node& n, uint32_t len) {
    n.off = uint32_t(used_);
    n.len = len;
    used_ += len;
    if (vals_.size() < used_) vals_.resize(used_);
  }

  int push(const Node& n) {
    nodes_.push_back(n);
    return int(nodes_.size()) - 1;
  }

  Node unary(int a, Op op) {
    Node n{};
    n.op = op;
    n.a = a;
    n.needs_grad = node(a).needs_grad;
    alloc(n, node(a).len);
    return n;
  }

  int binary(int a, int b, Op op) {
    check_same_len(a, b, "elementwise op");
    Node n{};
    n.op = op;
    n.a = a;
    n.b = b;
    n.needs_grad = node(a).needs_grad || node(b).needs_grad;
    alloc(n, node(a).len);
    const Real* x = vals_.data() + node(a).off;
    const Real* y = vals_.data() + node(b).off;
    Real* out = vals_.data() + n.off;
    switch (op) {
      case Op::Add:
        for (uint32_t i = 0; i < n.len; ++i) out[i] = x[i] + y[i];
        break;
      case Op::Sub:
        for (uint32_t i = 0; i < n.len; ++i) out[i] = x[i] - y[i];
        break;
      case Op::Mul:
        for (uint32_t i = 0; i < n.len; ++i) out[i] = x[i] * y[i];
        break;
      default: break;
    }
    return push(n);
  }

  void check_same_len(int a, int b, const char* what) {
    if (node(a).len != node(b).len)
      throw ConfigError(std::string(what) + ": length mismatch (" +
                        std::to_string(node(a).len) + " vs " +
                        std::to_string(node(b).len) + ")");
  }

  void recompute(int id) {
    Node& n = node(id);
    Real* out = vals_.data() + n.off;
    const Real* x = n.a >= 0 ? vals_.data() + node(n.a).off : nullptr;
    const Real* y = n.b >= 0 ? vals_.data() + node(n.b).off : nullptr;
    switch (n.op) {
      case Op::Leaf:
        if (n.ext) std::memcpy(out, n.ext, n.len * sizeof(Real));
        break;
      case Op::Affine: {
        const Real* W = vals_.data() + node(n.w).off;
        for (int r = 0; r < n.rows; ++r) {
          Real acc = n.b >= 0 ? y[r] : 0.0;
          const Real* wrow = W + size_t(r) * size_t(n.cols);
          for (int c = 0; c < n.cols; ++c) acc += wrow[c] * x[c];
          out[r] = acc;
        }
        break;
      }
      case Op::Activation:
        for (uint32_t i = 0; i < n.len; ++i) out[i] = act_f(n.act, x[i], n.c0);
        break;
      case Op::ActPrime:
        for (uint32_t i = 0; i < n.len; ++i)
          out[i] = act_df(n.act, x[i], n.c0);
        break;
      case Op::Add:
        for (uint32_t i = 0; i < n.len; ++i) out[i] = x[i] + y[i];
        break;
      case Op::Sub:
        for (uint32_t i = 0; i < n.len; ++i) out[i] = x[i] - y[i];
        break;
      case Op::Mul:
        for (uint32_t i = 0; i < n.len; ++i) out[i] = x[i] * y[i];
        break;
      case Op::Scale:
        for (uint32_t i = 0; i < n.len; ++i) out[i] = n.c0 * x[i];
        break;
      case Op::AddScaled:
        for (uint32_t i = 0; i < n.len; ++i) out[i] = x[i] + n.c0 * y[i];
        break;
      case Op::Dot: {
        Real acc = 0;
        for (uint32_t i = 0; i < node(n.a).len; ++i) acc += x[i] * y[i];
        out[0] = acc;
        break;
      }
      case Op::Sum: {
        Real acc = 0;
        for (uint32_t i = 0; i < node(n.a).len; ++i) acc += x[i];
        out[0] = acc;
        break;
      }
      case Op::Norm2: {
        Real acc = 0;
        for (uint32_t i = 0; i < node(n.a).len; ++i) acc += x[i] * x[i];
        out[0] = std::sqrt(acc);
        break;
      }
      case Op::NormalizeSmooth: {
        Real s = n.c0 * n.c0;
        for (uint32_t i = 0; i < n.len; ++i) s += x[i] * x[i];
        Real inv = 1.0 / std::sqrt(s);
        for (uint32_t i = 0; i < n.len; ++i) out[i] = x[i] * inv;
        break;
      }
      case Op::Abs:
        for (uint32_t i = 0; i < n.len; ++i) out[i] = std::fabs(x[i]);
        break;
      case Op::Clamp:
        for (uint32_t i = 0; i < n.len; ++i)
          out[i] = x[i] < n.c0 ? n.c0 : (x[i] > n.c1 ? n.c1 : x[i]);
        break;
      case Op::Concat2:
        std::memcpy(out, x, node(n.a).len * sizeof(Real));
        std::memcpy(out + node(n.a).len, y, node(n.b).len * sizeof(Real));
        break;
      case Op::Slice: break;  // aliases parent storage
    }
  }

  void run_reverse(int out) {
    for (int id = out; id >= 0; --id) {
      const Node& n = node(id);
      if (!n.needs_grad) continue;
      const Real* g = grads_.data() + n.off;
      switch (n.op) {
        case Op::Leaf:
        case Op::Slice:
          break;
        case Op::Affine: {
          const Node& an = node(n.a);
          const Node& wn = node(n.w);
          const Real* W = vals_.data() + wn.off;
          const Real* x = vals_.data() + an.off;
          if (an.needs_grad) {
            Real* xg = grads_.data() + an.off;
            for (int r = 0; r < n.rows; ++r) {
              Real gr = g[r];
              if (gr == 0) continue;
              const Real* wrow = W + size_t(r) * size_t(n.cols);
              for (int c = 0; c < n.cols; ++c) xg[c] += gr * wrow[c];
            }
          }
          if (wn.needs_grad) {
            Real* wg = grads_.data() + wn.off;
            for (int r = 0; r < n.rows; ++r) {
              Real gr = g[r];
              if (gr == 0) continue;
              Real* wrow = wg + size_t(r) * size_t(n.cols);
              for (int c = 0; c < n.cols; ++c) wrow[c] += gr * x[c];
            }
          }
          if (n.b >= 0 && node(n.b).needs_grad) {
            Real* bg = grads_.data() + node(n.b).off;
            for (int r = 0; r < n.rows; ++r) bg[r] += g[r];
          }
          break;
        }
        case Op::Activation: {
          if (!node(n.a).needs_grad) break;
          const Real* x = vals_.data() + node(n.a).off;
          Real* xg = grads_.data() + node(n.a).off;
          for (uint32_t i = 0; i < n.len; ++i)
            xg[i] += g[i] * act_df(n.act, x[i], n.c0);
          break;
        }
        case Op::ActPrime: {
          if (!node(n.a).needs_grad) break;
          const Real* x = vals_.data() + node(n.a).off;
          Real* xg = grads_.data() + node(n.a).off;
          for (uint32_t i = 0; i < n.len; ++i)
            xg[i] += g[i] * act_ddf(n.act, x[i], n.c0);
          break;
        }
        case Op::Add: {
          accumulate(n.a, g, n.len, 1.0);
          accumulate(n.b, g, n.len, 1.0);
          break;
        }
        case Op::Sub: {
          accumulate(n.a, g, n.len, 1.0);
          accumulate(n.b, g, n.len, -1.0);
          break;
        }
        case Op::Mul: {
          if (node(n.a).needs_grad) {
            const Real* y = vals_.data() + node(n.b).off;
            Real* xg = grads_.data() + node(n.a).off;
            for (uint32_t i = 0; i < n.len; ++i) xg[i] += g[i] * y[i];
          }
          if (node(n.b).needs_grad) {
            const Real* x = vals_.data() + node(n.a).off;
            Real* yg = grads_.data() + node(n.b).off;
            for (uint32_t i = 0; i < n.len; ++i) yg[i] += g[i] * x[i];
          }
          break;
        }
        case Op::Scale:
          accumulate(n.a, g, n.len, n.c0);
          break;
        case Op::AddScaled:
          accumulate(n.a, g, n.len, 1.0);
          accumulate(n.b, g, n.len, n.c0);
          break;
        case Op::Dot: {
          Real g0 = g[0];
          if (node(n.a).needs_grad) {
            const Real* y = vals_.data() + node(n.b).off;
            Real* xg = grads_.data() + node(n.a).off;
            for (uint32_t i = 0; i < node(n.a).len; ++i) xg[i] += g0 * y[i];
          }
          if (node(n.b).needs_grad) {
            const Real* x = vals_.data() + node(n.a).off;
            Real* yg = grads_.data() + node(n.b).off;
            for (uint32_t i = 0; i < node(n.b).len; ++i) yg[i] += g0 * x[i];
          }
          break;
        }
        case Op::Sum: {
          if (!node(n.a).needs_grad) break;
          Real g0 = g[0];
          Real* xg = grads_.data() + node(n.a).off;
          for (uint32_t i = 0; i < node(n.a).len; ++i) xg[i] += g0;
          break;
        }
        case Op::Norm2: {
          if (!node(n.a).needs_grad) break;
          Real nv = vals_[n.off];
          if (nv <= 0) break;  // subgradient 0 at the origin
          Real g0 = g[0] / nv;
          const Real* x = vals_.data() + node(n.a).off;
          Real* xg = grads_.data() + node(n.a).off;
          for (uint32_t i = 0; i < node(n.a).len; ++i) xg[i] += g0 * x[i];
          break;
        }
        case Op::NormalizeSmooth: {
          if (!node(n.a).needs_grad) break;
          const Real* x = vals_.data() + node(n.a).off;
          Real s = n.c0 * n.c0;
          for (uint32_t i = 0; i < n.len; ++i) s += x[i] * x[i];
          Real inv = 1.0 / std::sqrt(s);
          Real inv3 = inv * inv * inv;
          Real xg_dot = 0;
          for (uint32_t i = 0; i < n.len; ++i) xg_dot += x[i] * g[i];
          Real* xg = grads_.data() + node(n.a).off;
          for (uint32_t i = 0; i < n.len; ++i)
            xg[i] += g[i] * inv - x[i] * xg_dot * inv3;
          break;
        }
        case Op::Abs: {
          if (!node(n.a).needs_grad) break;
          const Real* x = vals_.data() + node(n.a).off;
          Real* xg = grads_.data() + node(n.a).off;
          for (uint32_t i = 0; i < n.len; ++i)
            xg[i] += g[i] * (x[i] > 0 ? 1.0 : (x[i] < 0 ? -1.0 : 0.0));
          break;
        }
        case Op::Clamp: {
          if (!node(n.a).needs_grad) break;
          const Real* x = vals_.data() + node(n.a).off;
          Real* xg = grads_.data() + node(n.a).off;
          for (uint32_t i = 0; i < n.len; ++i)
            if (x[i] > n.c0 && x[i] < n.c1) xg[i] += g[i];
          break;
        }
        case Op::Concat2: {
          accumulate(n.a, g, node(n.a).len, 1.0);
          if (node(n.b).needs_grad) {
            Real* yg = grads_.data() + node(n.b).off;
            const Real* gb = g + node(n.a).len;
            for (uint32_t i = 0; i < node(n.b).len; ++i) yg[i] += gb[i];
          }
          break;
        }
      }
    }
  }

  void accumulate(int target, const Real* g, uint32_t len, Real s) {
    if (target < 0 || !node(target).needs_grad) return;
    Real* tg = grads_.data() + node(target).off;
    if (s == 1.0)
      for (uint32_t i = 0; i < len; ++i) tg[i] += g[i];
    else
      for (uint32_t i = 0; i < len; ++i) tg[i] += s * g[i];
  }

  std::vector<Node> nodes_;
  std::vector<Real> vals_;
  std::vector<Real> grads_;
  size_t used_ = 0;
};

}  // namespace defo
