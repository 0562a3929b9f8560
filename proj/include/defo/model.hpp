#pragma once

#include <nlohmann/json.hpp>

#include "defo/geometry.hpp"
#include "defo/nn.hpp"

namespace defo {

// ---------------------------------------------------------------------------
// Model configuration. Latent sizes beyond the contact embedding are ours to
// pick; everything is overridable from the run config.
// ---------------------------------------------------------------------------
struct ModelConfig {
  int l_alpha = 8;  // object code
  int l_z = 8;      // force code
  int l_c = 6;      // contact embedding

  int hypo_hidden = 64;
  int hypo_layers = 2;
  int hyper_hidden = 64;
  int hyper_layers = 2;
  int force_hidden = 64;
  int force_layers = 2;
  int action_hidden = 64;
  int action_layers = 2;

  Act hypo_act = Act::Softplus;
  Real softplus_beta = 100.0;

  bool no_contact_embedding = false;  // ablation: F sees (f, p) only
  bool rigid = false;                 // ablation: deformation forced to zero

  void validate() const {
    if (l_alpha <= 0 || l_z <= 0 || l_c <= 0 || hypo_hidden <= 0 ||
        hyper_hidden <= 0 || force_hidden <= 0 || action_hidden <= 0)
      throw ConfigError("ModelConfig: dimensions must be positive");
  }

  MlpSpec hypo_o_spec() const {
    return make_mlp("O", 3, hypo_hidden, hypo_layers, 1, hypo_act,
                    softplus_beta);
  }
  MlpSpec hypo_d_spec() const {
    return make_mlp("D", 3, hypo_hidden, hypo_layers, 3, hypo_act,
                    softplus_beta);
  }
  int force_input_dim() const { return 6 + (no_contact_embedding ? 0 : l_c) + 6; }
  MlpSpec force_spec() const {
    return make_mlp("F", force_input_dim(), force_hidden, force_layers, l_z,
                    Act::Relu);
  }
  int action_output_dim() const {
    return 6 + (no_contact_embedding ? 0 : l_c);
  }
  MlpSpec action_spec() const {
    return make_mlp("A", l_alpha + l_z + 6, action_hidden, action_layers,
                    action_output_dim(), Act::Relu);
  }
};

// ---------------------------------------------------------------------------
// Hypernetwork: relu trunk on the conditioning code, one linear head per
// hyponetwork layer, outputs concatenated in the hyponetwork's layout order.
// ---------------------------------------------------------------------------
struct HyperSpec {
  MlpSpec trunk;  // cond -> hidden features
  MlpSpec hypo;   // layout of the network whose weights are produced

  std::vector<TensorDesc> layout() const {
    std::vector<TensorDesc> out = trunk.layout();
    int feat = trunk.output_dim();
    for (size_t i = 0; i < hypo.layers.size(); ++i) {
      int n = hypo.layers[i].width * (hypo.fan_in(i) + 1);  // W and b rows
      std::string base = trunk.prefix + ".head" + std::to_string(i);
      out.push_back({base + ".W", {n, feat}, 0});
      out.push_back({base + ".b", {n}, 0});
    }
    return out;
  }
};

inline HyperSpec make_hyper_o(const ModelConfig& c) {
  HyperSpec h;
  h.trunk = make_mlp("Ho", c.l_alpha, c.hyper_hidden, c.hyper_layers - 1,
                     c.hyper_hidden, Act::Relu);
  h.trunk.layers.back().act = Act::Relu;  // features stay nonlinear
  h.hypo = c.hypo_o_spec();
  return h;
}

inline HyperSpec make_hyper_d(const ModelConfig& c) {
  HyperSpec h;
  h.trunk = make_mlp("Hd", c.l_alpha + c.l_z, c.hyper_hidden,
                     c.hyper_layers - 1, c.hyper_hidden, Act::Relu);
  h.trunk.layers.back().act = Act::Relu;
  h.hypo = c.hypo_d_spec();
  return h;
}

// A decode recording: the produced weight-vector node plus the parameter
// leaves (with tensor names) for gradient collection.
struct DecodeTape {
  int cond = -1;
  int weights = -1;
  std::vector<std::pair<int, std::string>> param_leaves;
};

// Records trunk + heads; the head of layer i emits [W_i; b_i], which matches
// the hyponetwork's flat layout slice, so the concatenation is directly
// consumable by mlp_sliced_leaves.
inline DecodeTape tape_decode(Tape& t, const HyperSpec& hs,
                              const ParamVector& hyper, int cond_node,
                              bool hyper_needs_grad) {
  DecodeTape out;
  out.cond = cond_node;
  LayerNodes trunk_wb = mlp_param_leaves(t, hs.trunk, hyper, hyper_needs_grad);
  for (size_t i = 0; i < hs.trunk.layers.size(); ++i) {
    std::string base = hs.trunk.prefix + ".L" + std::to_string(i);
    out.param_leaves.push_back({trunk_wb[i].first, base + ".W"});
    out.param_leaves.push_back({trunk_wb[i].second, base + ".b"});
  }
  int feat = mlp_apply(t, hs.trunk, trunk_wb, cond_node);
  int acc = -1;
  for (size_t i = 0; i < hs.hypo.layers.size(); ++i) {
    std::string base = hs.trunk.prefix + ".head" + std::to_string(i);
    auto W = hyper.view(base + ".W");
    auto b = hyper.view(base + ".b");
    int rows = hs.hypo.layers[i].width * (hs.hypo.fan_in(i) + 1);
    int wn = t.leaf_view(W.data(), W.size(), hyper_needs_grad);
    int bn = t.leaf_view(b.data(), b.size(), hyper_needs_grad);
    out.param_leaves.push_back({wn, base + ".W"});
    out.param_leaves.push_back({bn, base + ".b"});
    int head = t.affine(wn, feat, bn, rows, hs.trunk.output_dim());
    acc = acc < 0 ? head : t.concat(acc, head);
  }
  out.weights = acc;
  return out;
}

// Adds a tape's parameter-leaf gradients into a flat buffer laid out like
// `params`. Call after backward.
inline void collect_param_grads(
    const Tape& t, const std::vector<std::pair<int, std::string>>& leaves,
    const ParamVector& params, std::vector<Real>& out) {
  if (out.size() != params.size()) out.assign(params.size(), 0.0);
  for (const auto& [node, name] : leaves) {
    auto g = t.grad(node);
    const auto& d = params.desc(name);
    for (size_t i = 0; i < g.size(); ++i) out[d.offset + i] += g[i];
  }
}

inline std::vector<std::pair<int, std::string>> named_leaves(
    const MlpSpec& spec, const LayerNodes& wb) {
  std::vector<std::pair<int, std::string>> out;
  for (size_t i = 0; i < spec.layers.size(); ++i) {
    std::string base = spec.prefix + ".L" + std::to_string(i);
    out.push_back({wb[i].first, base + ".W"});
    out.push_back({wb[i].second, base + ".b"});
  }
  return out;
}

// Plain (tape-free) decode for the inference fast path.
inline std::vector<Real> decode_plain(const HyperSpec& hs,
                                      const ParamVector& hyper,
                                      std::span<const Real> cond) {
  Tape t;
  int c = t.leaf(cond, false);
  DecodeTape d = tape_decode(t, hs, hyper, c, false);
  auto v = t.val(d.weights);
  return {v.begin(), v.end()};
}

// Spec surface: decode into a ParamVector with the hyponetwork's layout.
inline ParamVector decode_hypo_weights(const HyperSpec& hs,
                                       const ParamVector& hyper,
                                       std::span<const Real> cond) {
  if (int(cond.size()) != hs.trunk.input_dim)
    throw ConfigError("decode_hypo_weights: conditioning dim mismatch (" +
                      std::to_string(cond.size()) + " vs " +
                      std::to_string(hs.trunk.input_dim) + ")");
  ParamVector out(hs.hypo.layout());
  auto w = decode_plain(hs, hyper, cond);
  auto dst = out.values_mut();
  std::copy(w.begin(), w.end(), dst.begin());
  return out;
}

// ---------------------------------------------------------------------------
// Plain MLP evaluation over flat weight vectors (hyponetworks) with optional
// spatial tangents. Scratch buffers avoid per-call allocation in hot loops.
// ---------------------------------------------------------------------------
struct MlpWork {
  std::vector<Real> h0, h1;
  std::array<std::vector<Real>, 3> t0, t1;
};

inline void mlp_eval_flat(const MlpSpec& spec, std::span<const Real> weights,
                          std::span<const Real> input, std::vector<Real>& out,
                          MlpWork& work) {
  work.h0.assign(input.begin(), input.end());
  size_t off = 0;
  for (size_t i = 0; i < spec.layers.size(); ++i) {
    int rows = spec.layers[i].width, cols = spec.fan_in(i);
    const Real* W = weights.data() + off;
    const Real* b = weights.data() + off + size_t(rows) * size_t(cols);
    off += size_t(rows) * size_t(cols) + size_t(rows);
    work.h1.resize(size_t(rows));
    for (int r = 0; r < rows; ++r) {
      Real acc = b[r];
      const Real* wrow = W + size_t(r) * size_t(cols);
      for (int c = 0; c < cols; ++c) acc += wrow[c] * work.h0[size_t(c)];
      work.h1[size_t(r)] = act_f(spec.layers[i].act, acc, spec.layers[i].beta);
    }
    std::swap(work.h0, work.h1);
  }
  out = work.h0;
}

// Forward plus d(out)/d(input) in up to three directions (dual arithmetic).
inline void mlp_eval_flat_grad(const MlpSpec& spec,
                               std::span<const Real> weights,
                               std::span<const Real> input,
                               std::span<const Vec3> dirs,
                               std::vector<Real>& out,
                               std::vector<std::vector<Real>>& tangents,
                               MlpWork& work) {
  size_t K = dirs.size();
  work.h0.assign(input.begin(), input.end());
  for (size_t k = 0; k < K; ++k)
    work.t0[k] = {dirs[k].x, dirs[k].y, dirs[k].z};
  size_t off = 0;
  for (size_t i = 0; i < spec.layers.size(); ++i) {
    int rows = spec.layers[i].width, cols = spec.fan_in(i);
    const Real* W = weights.data() + off;
    const Real* b = weights.data() + off + size_t(rows) * size_t(cols);
    off += size_t(rows) * size_t(cols) + size_t(rows);
    work.h1.resize(size_t(rows));
    for (size_t k = 0; k < K; ++k) work.t1[k].assign(size_t(rows), 0.0);
    for (int r = 0; r < rows; ++r) {
      Real acc = b[r];
      const Real* wrow = W + size_t(r) * size_t(cols);
      for (int c = 0; c < cols; ++c) acc += wrow[c] * work.h0[size_t(c)];
      Real tacc[3] = {0, 0, 0};
      for (size_t k = 0; k < K; ++k) {
        Real s = 0;
        for (int c = 0; c < cols; ++c) s += wrow[c] * work.t0[k][size_t(c)];
        tacc[k] = s;
      }
      Real fp = act_df(spec.layers[i].act, acc, spec.layers[i].beta);
      work.h1[size_t(r)] = act_f(spec.layers[i].act, acc, spec.layers[i].beta);
      for (size_t k = 0; k < K; ++k) work.t1[k][size_t(r)] = fp * tacc[k];
    }
    std::swap(work.h0, work.h1);
    for (size_t k = 0; k < K; ++k) std::swap(work.t0[k], work.t1[k]);
  }
  out = work.h0;
  tangents.assign(K, {});
  for (size_t k = 0; k < K; ++k) tangents[k] = work.t0[k];
}

// A decoded field network: flat weights plus the spec to interpret them.
struct DecodedField {
  MlpSpec spec;
  std::vector<Real> weights;
};

// ---------------------------------------------------------------------------
// Channel standardization for raw 6-vector pose / wrench / action inputs.
// ---------------------------------------------------------------------------
struct ChannelStats {
  Vec6 mean = vec6_zero();
  Vec6 std = {1, 1, 1, 1, 1, 1};

  Vec6 standardize(const Vec6& v) const {
    Vec6 out;
    for (int i = 0; i < 6; ++i) out[size_t(i)] = (v[size_t(i)] - mean[size_t(i)]) / std[size_t(i)];
    return out;
  }
  Vec6 destandardize(const Vec6& v) const {
    Vec6 out;
    for (int i = 0; i < 6; ++i) out[size_t(i)] = v[size_t(i)] * std[size_t(i)] + mean[size_t(i)];
    return out;
  }
};

struct FeatureStats {
  ChannelStats pose, wrench, action;
};

// ---------------------------------------------------------------------------
// The model: hypernetworks for O and D, force and action modules, the object
// code table and input standardization stats.
// ---------------------------------------------------------------------------
struct ObjectEntry {
  std::string id;
  std::vector<Real> code;  // alpha
};

struct Model {
  ModelConfig cfg;
  ParamVector hyper_o, hyper_d, force_net, action_net;
  std::vector<ObjectEntry> objects;
  FeatureStats stats;

  static Model init(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    Model m;
    m.cfg = cfg;
    Rng rng(seed);
    m.hyper_o = seeded_init(make_hyper_o(cfg).layout(), rng.next_u64(),
                            InitScheme::kaiming());
    m.hyper_d = seeded_init(make_hyper_d(cfg).layout(), rng.next_u64(),
                            InitScheme::kaiming());
    m.force_net = seeded_init(cfg.force_spec().layout(), rng.next_u64(),
                              InitScheme::kaiming());
    m.action_net = seeded_init(cfg.action_spec().layout(), rng.next_u64(),
                               InitScheme::kaiming());
    Rng hrng(rng.next_u64());
    init_hyper_heads(m.hyper_o, make_hyper_o(cfg), hrng, false);
    init_hyper_heads(m.hyper_d, make_hyper_d(cfg), hrng, true);
    // keep initial wrench predictions close to the channel means
    scale_last_layer(m.action_net, cfg.action_spec(), 1e-2);
    return m;
  }

  // Head biases carry a kaiming-scale base hyponetwork (the decoded field is
  // healthy at init even though the conditioning signal is tiny); head weight
  // matrices start small so per-code variation grows from near zero. With
  // zero_last the decoded output layer starts at exactly zero, which makes
  // the deformation field vanish identically at initialization.
  static void init_hyper_heads(ParamVector& hyper, const HyperSpec& hs,
                               Rng& rng, bool zero_last) {
    for (size_t i = 0; i < hs.hypo.layers.size(); ++i) {
      std::string base = hs.trunk.prefix + ".head" + std::to_string(i);
      bool last = i + 1 == hs.hypo.layers.size();
      Real wscale = (zero_last && last) ? 0.0 : 1e-2;
      for (Real& v : hyper.view_mut(base + ".W")) v *= wscale;
      auto b = hyper.view_mut(base + ".b");
      size_t n_w = size_t(hs.hypo.layers[i].width) * size_t(hs.hypo.fan_in(i));
      if (zero_last && last) {
        for (Real& v : b) v = 0.0;
      } else {
        Real bound = std::sqrt(6.0 / Real(hs.hypo.fan_in(i)));
        for (size_t k = 0; k < n_w; ++k) b[k] = rng.uniform(-bound, bound);
        for (size_t k = n_w; k < b.size(); ++k) b[k] = 0.0;
      }
    }
  }

  static void scale_last_layer(ParamVector& p, const MlpSpec& spec, Real s) {
    std::string base =
        spec.prefix + ".L" + std::to_string(spec.layers.size() - 1);
    for (Real& v : p.view_mut(base + ".W")) v *= s;
  }

  int find_object(const std::string& id) const {
    for (size_t i = 0; i < objects.size(); ++i)
      if (objects[i].id == id) return int(i);
    throw ConfigError("model has no object code for '" + id + "'");
  }

  std::span<const Real> code(const std::string& id) const {
    return objects[size_t(find_object(id))].code;
  }

  // ---- decoded-field fast paths ------------------------------------------
  DecodedField decode_object(std::span<const Real> alpha) const {
    return {cfg.hypo_o_spec(), decode_plain(make_hyper_o(cfg), hyper_o, alpha)};
  }

  DecodedField decode_deformation(std::span<const Real> alpha,
                                  std::span<const Real> z) const {
    std::vector<Real> cond(alpha.begin(), alpha.end());
    cond.insert(cond.end(), z.begin(), z.end());
    return {cfg.hypo_d_spec(),
            decode_plain(make_hyper_d(cfg), hyper_d, cond)};
  }
};

inline Real field_eval(const DecodedField& f, const Vec3& x, MlpWork& work) {
  std::vector<Real> out;
  std::array<Real, 3> in = {x.x, x.y, x.z};
  mlp_eval_flat(f.spec, f.weights, in, out, work);
  return out[0];
}

inline Vec3 field_eval3(const DecodedField& f, const Vec3& x, MlpWork& work) {
  std::vector<Real> out;
  std::array<Real, 3> in = {x.x, x.y, x.z};
  mlp_eval_flat(f.spec, f.weights, in, out, work);
  return {out[0], out[1], out[2]};
}

inline std::pair<Real, Vec3> field_eval_grad(const DecodedField& f,
                                             const Vec3& x, MlpWork& work) {
  std::vector<Real> out;
  std::vector<std::vector<Real>> tang;
  std::array<Real, 3> in = {x.x, x.y, x.z};
  std::array<Vec3, 3> dirs = {Vec3{1, 0, 0}, Vec3{0, 1, 0}, Vec3{0, 0, 1}};
  mlp_eval_flat_grad(f.spec, f.weights, in, dirs, out, tang, work);
  return {out[0], Vec3{tang[0][0], tang[1][0], tang[2][0]}};
}

// ---- spec operations ------------------------------------------------------

inline std::pair<Real, Vec3> eval_nominal_sdf(const Model& m,
                                              std::span<const Real> alpha,
                                              const Vec3& x) {
  MlpWork w;
  return field_eval_grad(m.decode_object(alpha), x, w);
}

inline Vec3 eval_deformation(const Model& m, std::span<const Real> alpha,
                             std::span<const Real> z, const Vec3& x) {
  if (m.cfg.rigid) return {};
  MlpWork w;
  return field_eval3(m.decode_deformation(alpha, z), x, w);
}

// SDF(x) = O(x + D(x)): the compositional identity is structural.
inline Real eval_deformed_sdf(const Model& m, std::span<const Real> alpha,
                              std::span<const Real> z, const Vec3& x) {
  MlpWork w;
  Vec3 dx = eval_deformation(m, alpha, z, x);
  return field_eval(m.decode_object(alpha), x + dx, w);
}

inline std::vector<Real> force_encode(const Model& m, const Vec6& wrench,
                                      std::span<const Real> c,
                                      const Vec6& pose) {
  Vec6 f = m.stats.wrench.standardize(wrench);
  Vec6 p = m.stats.pose.standardize(pose);
  std::vector<Real> in(f.begin(), f.end());
  if (!m.cfg.no_contact_embedding) {
    if (int(c.size()) != m.cfg.l_c)
      throw ConfigError("force_encode: contact embedding dim mismatch");
    in.insert(in.end(), c.begin(), c.end());
  }
  in.insert(in.end(), p.begin(), p.end());
  MlpWork w;
  std::vector<Real> out;
  mlp_eval_flat(m.cfg.force_spec(), m.force_net.values(), in, out, w);
  return out;
}

struct ActionPrediction {
  Vec6 wrench;               // de-standardized
  std::vector<Real> contact; // empty in the no-contact-embedding ablation
};

inline ActionPrediction action_predict(const Model& m,
                                       std::span<const Real> alpha,
                                       std::span<const Real> z,
                                       const Vec6& action) {
  Vec6 a = m.stats.action.standardize(action);
  std::vector<Real> in(alpha.begin(), alpha.end());
  in.insert(in.end(), z.begin(), z.end());
  in.insert(in.end(), a.begin(), a.end());
  MlpWork w;
  std::vector<Real> out;
  mlp_eval_flat(m.cfg.action_spec(), m.action_net.values(), in, out, w);
  ActionPrediction pred;
  Vec6 f_std;
  std::copy_n(out.begin(), 6, f_std.begin());
  pred.wrench = m.stats.wrench.destandardize(f_std);
  if (!m.cfg.no_contact_embedding)
    pred.contact.assign(out.begin() + 6, out.end());
  return pred;
}

// ---------------------------------------------------------------------------
// JSON bindings (checkpoints, config echo).
// ---------------------------------------------------------------------------
using Json = nlohmann::json;

inline void to_json(Json& j, const ModelConfig& c) {
  j = Json{{"l_alpha", c.l_alpha},
           {"l_z", c.l_z},
           {"l_c", c.l_c},
           {"hypo_hidden", c.hypo_hidden},
           {"hypo_layers", c.hypo_layers},
           {"hyper_hidden", c.hyper_hidden},
           {"hyper_layers", c.hyper_layers},
           {"force_hidden", c.force_hidden},
           {"force_layers", c.force_layers},
           {"action_hidden", c.action_hidden},
           {"action_layers", c.action_layers},
           {"activation", act_to_string(c.hypo_act)},
           {"softplus_beta", c.softplus_beta},
           {"no_contact_embedding", c.no_contact_embedding},
           {"rigid", c.rigid}};
}

inline void from_json(const Json& j, ModelConfig& c) {
  ModelConfig d;
  c.l_alpha = j.value("l_alpha", d.l_alpha);
  c.l_z = j.value("l_z", d.l_z);
  c.l_c = j.value("l_c", d.l_c);
  c.hypo_hidden = j.value("hypo_hidden", d.hypo_hidden);
  c.hypo_layers = j.value("hypo_layers", d.hypo_layers);
  c.hyper_hidden = j.value("hyper_hidden", d.hyper_hidden);
  c.hyper_layers = j.value("hyper_layers", d.hyper_layers);
  c.force_hidden = j.value("force_hidden", d.force_hidden);
  c.force_layers = j.value("force_layers", d.force_layers);
  c.action_hidden = j.value("action_hidden", d.action_hidden);
  c.action_layers = j.value("action_layers", d.action_layers);
  c.hypo_act = act_from_string(j.value("activation", std::string("softplus")));
  c.softplus_beta = j.value("softplus_beta", d.softplus_beta);
  c.no_contact_embedding = j.value("no_contact_embedding", d.no_contact_embedding);
  c.rigid = j.value("rigid", d.rigid);
}

}  // namespace defo
