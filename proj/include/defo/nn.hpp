#pragma once

#include <functional>
#include <numeric>
#include <utility>

#include "defo/tape.hpp"

namespace defo {

// ---------------------------------------------------------------------------
// Flat parameter storage with a named-tensor layout. Mutation bumps a version
// counter so tapes recorded against stale values can be detected.
// ---------------------------------------------------------------------------
struct TensorDesc {
  std::string name;
  std::vector<int> shape;
  size_t offset = 0;

  size_t count() const {
    size_t c = 1;
    for (int d : shape) c *= size_t(d);
    return c;
  }
};

class ParamVector {
 public:
  ParamVector() = default;
  explicit ParamVector(std::vector<TensorDesc> layout) {
    size_t off = 0;
    for (auto& d : layout) {
      d.offset = off;
      off += d.count();
    }
    layout_ = std::move(layout);
    values_.assign(off, 0.0);
  }

  size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }
  uint64_t version() const { return version_; }
  const std::vector<TensorDesc>& layout() const { return layout_; }

  std::span<const Real> values() const { return values_; }
  std::span<Real> values_mut() {
    ++version_;
    return values_;
  }

  const TensorDesc& desc(const std::string& name) const {
    for (const auto& d : layout_)
      if (d.name == name) return d;
    throw ConfigError("no parameter tensor named '" + name + "'");
  }

  std::span<const Real> view(const std::string& name) const {
    const auto& d = desc(name);
    return {values_.data() + d.offset, d.count()};
  }
  std::span<Real> view_mut(const std::string& name) {
    const auto& d = desc(name);
    ++version_;
    return {values_.data() + d.offset, d.count()};
  }

  // Name of the tensor covering a flat offset (for error messages).
  std::string name_at(size_t offset) const {
    for (const auto& d : layout_)
      if (offset >= d.offset && offset < d.offset + d.count()) return d.name;
    return "<unknown>";
  }

  bool same_layout(const ParamVector& o) const {
    if (layout_.size() != o.layout_.size()) return false;
    for (size_t i = 0; i < layout_.size(); ++i)
      if (layout_[i].name != o.layout_[i].name ||
          layout_[i].shape != o.layout_[i].shape)
        return false;
    return true;
  }

 private:
  std::vector<TensorDesc> layout_;
  std::vector<Real> values_;
  uint64_t version_ = 0;
};

// ---------------------------------------------------------------------------
// Dense MLP specs. A layer is (width, activation); the final layer is usually
// Identity so heads stay linear.
// ---------------------------------------------------------------------------
struct LayerSpec {
  int width = 0;
  Act act = Act::Identity;
  Real beta = 1.0;  // softplus sharpness; ignored elsewhere
};

struct MlpSpec {
  int input_dim = 0;
  std::vector<LayerSpec> layers;
  std::string prefix = "mlp";

  int output_dim() const { return layers.back().width; }

  int fan_in(size_t layer) const {
    return layer == 0 ? input_dim : layers[layer - 1].width;
  }

  std::vector<TensorDesc> layout() const {
    std::vector<TensorDesc> out;
    for (size_t i = 0; i < layers.size(); ++i) {
      std::string base = prefix + ".L" + std::to_string(i);
      out.push_back({base + ".W", {layers[i].width, fan_in(i)}, 0});
      out.push_back({base + ".b", {layers[i].width}, 0});
    }
    return out;
  }

  size_t param_count() const {
    size_t c = 0;
    for (size_t i = 0; i < layers.size(); ++i)
      c += size_t(layers[i].width) * size_t(fan_in(i)) + size_t(layers[i].width);
    return c;
  }
};

// Uniform MLP builder: `hidden` layers of width `h` with activation `act`,
// then a linear output layer of width `out`.
inline MlpSpec make_mlp(const std::string& prefix, int in, int h, int hidden,
                        int out, Act act, Real beta = 1.0) {
  MlpSpec s;
  s.prefix = prefix;
  s.input_dim = in;
  for (int i = 0; i < hidden; ++i) s.layers.push_back({h, act, beta});
  s.layers.push_back({out, Act::Identity, 1.0});
  return s;
}

// ---------------------------------------------------------------------------
// Tape recording of MLP evaluations.
// ---------------------------------------------------------------------------

// Per-layer (W, b) node ids on some tape.
using LayerNodes = std::vector<std::pair<int, int>>;

inline LayerNodes mlp_param_leaves(Tape& t, const MlpSpec& spec,
                                   const ParamVector& params,
                                   bool needs_grad) {
  LayerNodes nodes;
  for (size_t i = 0; i < spec.layers.size(); ++i) {
    std::string base = spec.prefix + ".L" + std::to_string(i);
    auto w = params.view(base + ".W");
    auto b = params.view(base + ".b");
    nodes.push_back({t.leaf_view(w.data(), w.size(), needs_grad),
                     t.leaf_view(b.data(), b.size(), needs_grad)});
  }
  return nodes;
}

// Slices a single decoded weight-vector node into per-layer (W, b) nodes.
inline LayerNodes mlp_sliced_leaves(Tape& t, const MlpSpec& spec,
                                    int weights_node) {
  if (uint32_t(spec.param_count()) != uint32_t(t.length(weights_node)))
    throw ConfigError("decoded weight vector length does not match spec (" +
                      std::to_string(t.length(weights_node)) + " vs " +
                      std::to_string(spec.param_count()) + ")");
  LayerNodes nodes;
  uint32_t off = 0;
  for (size_t i = 0; i < spec.layers.size(); ++i) {
    uint32_t nw = uint32_t(spec.layers[i].width) * uint32_t(spec.fan_in(i));
    uint32_t nb = uint32_t(spec.layers[i].width);
    int w = t.slice(weights_node, off, nw);
    int b = t.slice(weights_node, off + nw, nb);
    off += nw + nb;
    nodes.push_back({w, b});
  }
  return nodes;
}

inline int mlp_apply(Tape& t, const MlpSpec& spec, const LayerNodes& wb,
                     int input) {
  int h = input;
  for (size_t i = 0; i < spec.layers.size(); ++i) {
    h = t.affine(wb[i].first, h, wb[i].second, spec.layers[i].width,
                 spec.fan_in(i));
    h = t.activation(h, spec.layers[i].act, spec.layers[i].beta);
  }
  return h;
}

// Forward plus K directional derivatives of the output w.r.t. the input,
// propagated on-tape so parameter gradients of the tangents are exact.
struct MlpWithTangents {
  int value = -1;
  std::vector<int> tangents;
};

inline MlpWithTangents mlp_apply_tangent(Tape& t, const MlpSpec& spec,
                                         const LayerNodes& wb, int input,
                                         std::span<const int> tangent_inputs) {
  MlpWithTangents out;
  out.tangents.assign(tangent_inputs.begin(), tangent_inputs.end());
  int h = input;
  for (size_t i = 0; i < spec.layers.size(); ++i) {
    int rows = spec.layers[i].width;
    int cols = spec.fan_in(i);
    int pre = t.affine(wb[i].first, h, wb[i].second, rows, cols);
    for (int& tn : out.tangents)
      tn = t.affine(wb[i].first, tn, -1, rows, cols);
    if (spec.layers[i].act != Act::Identity) {
      int fp = t.act_prime(pre, spec.layers[i].act, spec.layers[i].beta);
      for (int& tn : out.tangents) tn = t.mul(fp, tn);
    }
    h = t.activation(pre, spec.layers[i].act, spec.layers[i].beta);
  }
  out.value = h;
  return out;
}

// ---------------------------------------------------------------------------
// dense_eval / backward: the standalone evaluate-then-differentiate surface.
// ---------------------------------------------------------------------------
struct DenseEval {
  Tape tape;
  MlpSpec spec;
  LayerNodes layer_nodes;
  int input_node = -1;
  int output_node = -1;
  std::vector<Real> output;
  const ParamVector* params = nullptr;
  uint64_t bound_version = 0;
};

inline DenseEval dense_eval(const ParamVector& params, const MlpSpec& spec,
                            std::span<const Real> input) {
  if (int(input.size()) != spec.input_dim)
    throw ConfigError("dense_eval: input dim mismatch");
  require_finite(input, "dense_eval input");
  DenseEval r;
  r.spec = spec;
  r.params = &params;
  r.bound_version = params.version();
  r.input_node = r.tape.leaf(input, true);
  r.layer_nodes = mlp_param_leaves(r.tape, spec, params, true);
  r.output_node = mlp_apply(r.tape, spec, r.layer_nodes, r.input_node);
  auto v = r.tape.val(r.output_node);
  r.output.assign(v.begin(), v.end());
  return r;
}

struct BackwardResult {
  std::vector<Real> param_grads;  // ParamVector layout order
  std::vector<Real> input_grads;
};

inline BackwardResult backward(DenseEval& e, std::span<const Real> output_grad) {
  if (e.params && e.params->version() != e.bound_version)
    throw StaleTapeError(
        "backward: parameters were mutated after the tape was recorded");
  e.tape.backward(e.output_node, output_grad);
  BackwardResult r;
  r.param_grads.assign(e.params->size(), 0.0);
  for (size_t i = 0; i < e.spec.layers.size(); ++i) {
    std::string base = e.spec.prefix + ".L" + std::to_string(i);
    auto wgrad = e.tape.grad(e.layer_nodes[i].first);
    auto bgrad = e.tape.grad(e.layer_nodes[i].second);
    const auto& wd = e.params->desc(base + ".W");
    const auto& bd = e.params->desc(base + ".b");
    std::copy(wgrad.begin(), wgrad.end(), r.param_grads.begin() + long(wd.offset));
    std::copy(bgrad.begin(), bgrad.end(), r.param_grads.begin() + long(bd.offset));
  }
  auto ig = e.tape.grad(e.input_node);
  r.input_grads.assign(ig.begin(), ig.end());
  return r;
}

// ---------------------------------------------------------------------------
// Seeded initialization.
// ---------------------------------------------------------------------------
struct InitScheme {
  enum Kind { KaimingUniform, Gaussian } kind = KaimingUniform;
  Real sigma = 0.0;

  static InitScheme kaiming() { return {KaimingUniform, 0.0}; }
  static InitScheme gaussian(Real sigma) { return {Gaussian, sigma}; }
};

inline ParamVector seeded_init(std::vector<TensorDesc> layout, uint64_t seed,
                               InitScheme scheme) {
  for (const auto& d : layout)
    for (int s : d.shape)
      if (s <= 0) throw ConfigError("seeded_init: nonpositive dim in " + d.name);
  ParamVector p(std::move(layout));
  Rng rng(seed);
  auto vals = p.values_mut();
  for (const auto& d : p.layout()) {
    Real* v = vals.data() + d.offset;
    size_t n = d.count();
    if (scheme.kind == InitScheme::Gaussian) {
      for (size_t i = 0; i < n; ++i) v[i] = rng.normal(0, scheme.sigma);
    } else {
      if (d.shape.size() >= 2) {
        Real bound = std::sqrt(6.0 / Real(d.shape.back()));
        for (size_t i = 0; i < n; ++i) v[i] = rng.uniform(-bound, bound);
      } else {
        for (size_t i = 0; i < n; ++i) v[i] = 0.0;  // biases
      }
    }
  }
  return p;
}

// ---------------------------------------------------------------------------
// Adam.
// ---------------------------------------------------------------------------
struct AdamState {
  std::vector<Real> m, v;
  int64_t step = 0;
  Real lr = 1e-4;
  Real beta1 = 0.9;
  Real beta2 = 0.999;
  Real eps = 1e-8;

  static AdamState make(size_t n, Real lr) {
    AdamState s;
    s.m.assign(n, 0.0);
    s.v.assign(n, 0.0);
    s.lr = lr;
    return s;
  }
};

inline void adam_step_raw(AdamState& st, std::span<Real> params,
                          std::span<const Real> grads,
                          const std::function<std::string(size_t)>& name_at) {
  if (st.m.size() != params.size() || grads.size() != params.size())
    throw ConfigError("adam_step: size mismatch");
  for (size_t i = 0; i < grads.size(); ++i)
    if (!std::isfinite(grads[i]))
      throw NumericError("adam_step: non-finite gradient in " + name_at(i));
  ++st.step;
  Real bc1 = 1.0 - std::pow(st.beta1, Real(st.step));
  Real bc2 = 1.0 - std::pow(st.beta2, Real(st.step));
  for (size_t i = 0; i < params.size(); ++i) {
    st.m[i] = st.beta1 * st.m[i] + (1 - st.beta1) * grads[i];
    st.v[i] = st.beta2 * st.v[i] + (1 - st.beta2) * grads[i] * grads[i];
    Real mhat = st.m[i] / bc1;
    Real vhat = st.v[i] / bc2;
    params[i] -= st.lr * mhat / (std::sqrt(vhat) + st.eps);
  }
}

inline void adam_step(AdamState& st, ParamVector& params,
                      std::span<const Real> grads) {
  adam_step_raw(st, params.values_mut(), grads,
                [&](size_t i) { return params.name_at(i); });
}

inline void adam_step(AdamState& st, std::span<Real> params,
                      std::span<const Real> grads,
                      const std::string& name = "params") {
  adam_step_raw(st, params, grads, [&](size_t) { return name; });
}

// Rescales a set of gradient buffers so their joint L2 norm is at most
// `max_norm`. Returns the pre-clip norm.
inline Real clip_global_norm(std::span<std::span<Real>> buffers, Real max_norm) {
  Real sq = 0;
  for (auto& b : buffers)
    for (Real g : b) sq += g * g;
  Real norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0) {
    Real s = max_norm / norm;
    for (auto& b : buffers)
      for (Real& g : b) g *= s;
  }
  return norm;
}

}  // namespace defo
