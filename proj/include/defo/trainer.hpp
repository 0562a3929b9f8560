#pragma once

#include <chrono>
#include <map>
#include <sstream>

#include "defo/losses.hpp"
#include "defo/reconstruct.hpp"
#include "defo/synthgen.hpp"

namespace defo {

// ---------------------------------------------------------------------------
// Training configuration (shared by both phases).
// ---------------------------------------------------------------------------
struct TrainConfig {
  Real lr = 1e-4;
  int epochs = 200;
  uint64_t seed = 0;
  LossWeights weights;
  Real grad_clip = 1.0;

  // pretraining batches, per object per optimizer step
  int steps_per_epoch = 8;
  int surface_batch = 96;
  int query_batch = 192;

  // dynamics batches
  int windows_per_epoch = 24;
  int dyn_surface_batch = 24;
  int dyn_query_batch = 64;
  int dyn_cloud_batch = 96;
  int dyn_field_points = 32;

  // unseen-object code inference
  int infer_steps = 400;
  Real infer_lr = 1e-2;

  bool no_contact_embedding = false;
  bool rigid = false;

  void validate() const {
    if (lr <= 0 || infer_lr <= 0) throw ConfigError("TrainConfig: lr must be positive");
    if (epochs < 1) throw ConfigError("TrainConfig: epochs must be >= 1");
    weights.validate();
  }
};

inline void to_json(Json& j, const TrainConfig& c) {
  j = Json{{"lr", c.lr},
           {"epochs", c.epochs},
           {"seed", c.seed},
           {"grad_clip", c.grad_clip},
           {"steps_per_epoch", c.steps_per_epoch},
           {"surface_batch", c.surface_batch},
           {"query_batch", c.query_batch},
           {"windows_per_epoch", c.windows_per_epoch},
           {"dyn_surface_batch", c.dyn_surface_batch},
           {"dyn_query_batch", c.dyn_query_batch},
           {"dyn_cloud_batch", c.dyn_cloud_batch},
           {"dyn_field_points", c.dyn_field_points},
           {"infer_steps", c.infer_steps},
           {"infer_lr", c.infer_lr},
           {"no_contact_embedding", c.no_contact_embedding},
           {"rigid", c.rigid},
           {"horizon", c.weights.horizon},
           {"delta", c.weights.delta}};
}

inline void from_json(const Json& j, TrainConfig& c) {
  TrainConfig d;
  c.lr = j.value("lr", d.lr);
  c.epochs = j.value("epochs", d.epochs);
  c.seed = j.value("seed", d.seed);
  c.grad_clip = j.value("grad_clip", d.grad_clip);
  c.steps_per_epoch = j.value("steps_per_epoch", d.steps_per_epoch);
  c.surface_batch = j.value("surface_batch", d.surface_batch);
  c.query_batch = j.value("query_batch", d.query_batch);
  c.windows_per_epoch = j.value("windows_per_epoch", d.windows_per_epoch);
  c.dyn_surface_batch = j.value("dyn_surface_batch", d.dyn_surface_batch);
  c.dyn_query_batch = j.value("dyn_query_batch", d.dyn_query_batch);
  c.dyn_cloud_batch = j.value("dyn_cloud_batch", d.dyn_cloud_batch);
  c.dyn_field_points = j.value("dyn_field_points", d.dyn_field_points);
  c.infer_steps = j.value("infer_steps", d.infer_steps);
  c.infer_lr = j.value("infer_lr", d.infer_lr);
  c.no_contact_embedding = j.value("no_contact_embedding", d.no_contact_embedding);
  c.rigid = j.value("rigid", d.rigid);
  c.weights.horizon = j.value("horizon", d.weights.horizon);
  c.weights.delta = j.value("delta", d.weights.delta);
}

// ---------------------------------------------------------------------------
// Checkpoints: model parameters, per-trajectory initial contact embeddings,
// config echo, metadata and optimizer state (for exact resume).
// ---------------------------------------------------------------------------
struct TrainState {
  int64_t epoch = 0;
  std::map<std::string, AdamState> adam;
};

struct Checkpoint {
  Model model;
  Json config_echo;
  Json meta;
  std::map<std::string, std::vector<Real>> traj_c0;
  TrainState state;
};

namespace ckpt_detail {
constexpr uint32_t kMagic = 0x4b434644;  // "DFCK"
constexpr uint32_t kVersion = 1;

inline void put_adam(blob::Writer& w, const std::string& p,
                     const AdamState& a) {
  w.add(p + ".m", {a.m.size()}, a.m);
  w.add(p + ".v", {a.v.size()}, a.v);
  w.add(p + ".scalars", {4},
        {Real(a.step), a.lr, a.beta1, a.beta2});
}

inline AdamState get_adam(const blob::Reader& r, const std::string& p) {
  AdamState a;
  a.m = r.get(p + ".m").data;
  a.v = r.get(p + ".v").data;
  auto s = r.get(p + ".scalars").data;
  a.step = int64_t(s.at(0));
  a.lr = s.at(1);
  a.beta1 = s.at(2);
  a.beta2 = s.at(3);
  return a;
}
}  // namespace ckpt_detail

inline void write_checkpoint(const Checkpoint& c,
                             const std::filesystem::path& path) {
  Json head;
  head["model_config"] = c.model.cfg;
  head["config_echo"] = c.config_echo;
  head["meta"] = c.meta;
  head["stats"] = {
      {"pose_mean", c.model.stats.pose.mean},
      {"pose_std", c.model.stats.pose.std},
      {"wrench_mean", c.model.stats.wrench.mean},
      {"wrench_std", c.model.stats.wrench.std},
      {"action_mean", c.model.stats.action.mean},
      {"action_std", c.model.stats.action.std},
  };
  head["epoch"] = c.state.epoch;
  Json objs = Json::array();
  for (const auto& o : c.model.objects) objs.push_back(o.id);
  head["objects"] = objs;
  Json c0s = Json::array();
  for (const auto& [id, v] : c.traj_c0) c0s.push_back(id);
  head["trajectory_c0"] = c0s;
  Json adam_names = Json::array();
  for (const auto& [name, st] : c.state.adam) adam_names.push_back(name);
  head["adam"] = adam_names;

  blob::Writer w;
  auto put_params = [&](const std::string& name, const ParamVector& p) {
    w.add(name, {p.size()}, {p.values().begin(), p.values().end()});
  };
  put_params("hyper_o", c.model.hyper_o);
  put_params("hyper_d", c.model.hyper_d);
  put_params("force", c.model.force_net);
  put_params("action", c.model.action_net);
  for (const auto& o : c.model.objects)
    w.add("code." + o.id, {o.code.size()}, o.code);
  for (const auto& [id, v] : c.traj_c0) w.add("c0." + id, {v.size()}, v);
  for (const auto& [name, st] : c.state.adam)
    ckpt_detail::put_adam(w, "adam." + name, st);

  std::string head_str = head.dump();
  std::string out;
  uint32_t magic = ckpt_detail::kMagic, version = ckpt_detail::kVersion;
  uint64_t hlen = head_str.size();
  out.append((const char*)&magic, 4);
  out.append((const char*)&version, 4);
  out.append((const char*)&hlen, 8);
  out.append(head_str);
  out.append(w.serialize());
  write_file_atomic(path, out);
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::string bytes = read_file(path);
  if (bytes.size() < 16) throw FormatError("checkpoint: truncated header");
  uint32_t magic, version;
  uint64_t hlen;
  std::memcpy(&magic, bytes.data(), 4);
  std::memcpy(&version, bytes.data() + 4, 4);
  std::memcpy(&hlen, bytes.data() + 8, 8);
  if (magic != ckpt_detail::kMagic) throw FormatError("checkpoint: bad magic");
  if (version != ckpt_detail::kVersion)
    throw FormatError("checkpoint: unsupported version");
  if (16 + hlen > bytes.size()) throw FormatError("checkpoint: truncated JSON");
  Json head;
  try {
    head = Json::parse(bytes.substr(16, hlen));
  } catch (const Json::parse_error& e) {
    throw FormatError(std::string("checkpoint: invalid header JSON: ") +
                      e.what());
  }
  blob::Reader r(bytes.substr(16 + hlen));

  Checkpoint c;
  ModelConfig cfg = head.at("model_config").get<ModelConfig>();
  c.model.cfg = cfg;
  c.config_echo = head.value("config_echo", Json::object());
  c.meta = head.value("meta", Json::object());
  c.state.epoch = head.value("epoch", int64_t(0));

  auto load_params = [&](const std::string& name,
                         std::vector<TensorDesc> layout) {
    ParamVector p(std::move(layout));
    auto src = r.get(name).data;
    if (src.size() != p.size())
      throw ConfigError("checkpoint: '" + name +
                        "' does not match the stored model config (" +
                        std::to_string(src.size()) + " vs " +
                        std::to_string(p.size()) + " values)");
    auto dst = p.values_mut();
    std::copy(src.begin(), src.end(), dst.begin());
    return p;
  };
  c.model.hyper_o = load_params("hyper_o", make_hyper_o(cfg).layout());
  c.model.hyper_d = load_params("hyper_d", make_hyper_d(cfg).layout());
  c.model.force_net = load_params("force", cfg.force_spec().layout());
  c.model.action_net = load_params("action", cfg.action_spec().layout());

  auto st = head.at("stats");
  c.model.stats.pose.mean = st.at("pose_mean").get<Vec6>();
  c.model.stats.pose.std = st.at("pose_std").get<Vec6>();
  c.model.stats.wrench.mean = st.at("wrench_mean").get<Vec6>();
  c.model.stats.wrench.std = st.at("wrench_std").get<Vec6>();
  c.model.stats.action.mean = st.at("action_mean").get<Vec6>();
  c.model.stats.action.std = st.at("action_std").get<Vec6>();

  for (const auto& id : head.value("objects", Json::array()))
    c.model.objects.push_back(
        {id.get<std::string>(), r.get("code." + id.get<std::string>()).data});
  for (const auto& id : head.value("trajectory_c0", Json::array()))
    c.traj_c0[id.get<std::string>()] =
        r.get("c0." + id.get<std::string>()).data;
  for (const auto& nm : head.value("adam", Json::array()))
    c.state.adam[nm.get<std::string>()] =
        ckpt_detail::get_adam(r, "adam." + nm.get<std::string>());
  return c;
}

// ---------------------------------------------------------------------------
// Training-log rows (streamed to CSV by callers).
// ---------------------------------------------------------------------------
struct TrainLog {
  std::string header =
      "epoch,sdf,latent,hyper,min_correction,correspondence,normal,"
      "regression,pred,reg,total,wall_ms";
  std::vector<std::string> rows;

  void add(int epoch, const LossReport& r, double wall_ms) {
    std::ostringstream os;
    os.precision(10);
    os << epoch << ',' << r.sdf << ',' << r.latent << ',' << r.hyper << ','
       << r.min_correction << ',' << r.correspondence << ',' << r.normal << ','
       << r.regression << ',' << r.pred << ',' << r.reg << ',' << r.total
       << ',' << wall_ms;
    rows.push_back(os.str());
  }

  std::string csv() const {
    std::string out = header + "\n";
    for (const auto& r : rows) out += r + "\n";
    return out;
  }
};

namespace train_detail {

struct RowSplit {
  std::vector<int> surface, off;
};

inline RowSplit split_rows(const SdfSampleSet& s) {
  RowSplit out;
  for (size_t i = 0; i < s.size(); ++i)
    (s.surface_mask[i] ? out.surface : out.off).push_back(int(i));
  return out;
}

inline std::vector<int> draw(const std::vector<int>& pool, int n, Rng& rng) {
  std::vector<int> out;
  if (pool.empty()) return out;
  if (n >= int(pool.size())) return pool;
  out.reserve(size_t(n));
  for (int i = 0; i < n; ++i)
    out.push_back(pool[size_t(rng.uniform_int(int(pool.size())))]);
  return out;
}

inline FeatureStats compute_stats(const Dataset& ds) {
  FeatureStats st;
  std::array<std::vector<Real>, 3> sums{}, sqs{};
  for (auto& s : sums) s.assign(6, 0.0);
  for (auto& s : sqs) s.assign(6, 0.0);
  int64_t n = 0;
  for (const auto& tr : ds.trajectories) {
    if (tr.split != "train") continue;
    for (const auto& step : tr.steps) {
      const std::array<const Vec6*, 3> rows = {&step.pose, &step.wrench,
                                               &step.action};
      for (int k = 0; k < 3; ++k)
        for (int i = 0; i < 6; ++i) {
          Real v = (*rows[size_t(k)])[size_t(i)];
          sums[size_t(k)][size_t(i)] += v;
          sqs[size_t(k)][size_t(i)] += v * v;
        }
      ++n;
    }
  }
  if (n == 0) return st;
  std::array<ChannelStats*, 3> outs = {&st.pose, &st.wrench, &st.action};
  for (int k = 0; k < 3; ++k)
    for (int i = 0; i < 6; ++i) {
      Real mean = sums[size_t(k)][size_t(i)] / Real(n);
      Real var = sqs[size_t(k)][size_t(i)] / Real(n) - mean * mean;
      Real sd = var > 1e-16 ? std::sqrt(var) : 1.0;
      outs[size_t(k)]->mean[size_t(i)] = mean;
      outs[size_t(k)]->std[size_t(i)] = sd;
    }
  return st;
}

}  // namespace train_detail

inline Real nominal_cd(const Model& m, std::span<const Real> alpha,
                       const PointCloud& gt_cloud, int points = 1024,
                       int base_res = 32, int refine = 1) {
  PointCloud recon = reconstruct_surface(m, alpha, {}, base_res, refine);
  PointCloud gt;
  if (int(gt_cloud.size()) > points) {
    Rng rng(12345);
    auto idx = sample_indices(gt_cloud.size(), points, rng);
    for (int i : idx) gt.points.push_back(gt_cloud.points[size_t(i)]);
  } else {
    gt.points = gt_cloud.points;
  }
  return chamfer(recon.points, gt.points);
}

// ---------------------------------------------------------------------------
// Phase 1: nominal pretraining (auto-decoder over hyper_o and object codes).
// ---------------------------------------------------------------------------
struct PretrainResult {
  Checkpoint checkpoint;
  TrainLog log;
  bool diverged = false;
};

inline PretrainResult pretrain_nominal(const Dataset& ds,
                                       const ModelConfig& model_cfg,
                                       const TrainConfig& cfg,
                                       const Checkpoint* resume = nullptr) {
  cfg.validate();
  PretrainResult out;
  Model& m = out.checkpoint.model;

  std::vector<const ObjectData*> train_objs;
  for (const auto& o : ds.objects)
    if (!o.unseen) train_objs.push_back(&o);
  if (train_objs.empty())
    throw DataError("pretrain_nominal: no training objects in the dataset");

  int64_t start_epoch = 0;
  if (resume) {
    out.checkpoint = *resume;
    start_epoch = resume->state.epoch;
  } else {
    m = Model::init(model_cfg, Rng(cfg.seed).fork(1).next_u64());
    m.stats = train_detail::compute_stats(ds);
    Rng crng = Rng(cfg.seed).fork(2);
    for (const auto* o : train_objs) {
      std::vector<Real> code(size_t(model_cfg.l_alpha));
      crng.fill_normal(code, 0.0, 0.01);
      m.objects.push_back({o->id, std::move(code)});
    }
    out.checkpoint.state.adam["hyper_o"] =
        AdamState::make(m.hyper_o.size(), cfg.lr);
    for (const auto* o : train_objs)
      out.checkpoint.state.adam["code." + o->id] =
          AdamState::make(size_t(model_cfg.l_alpha), cfg.lr);
  }

  std::vector<train_detail::RowSplit> splits;
  for (const auto* o : train_objs)
    splits.push_back(train_detail::split_rows(o->nominal_samples));

  Checkpoint last_good = out.checkpoint;
  for (int64_t epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    LossReport epoch_rep;
    Rng erng = Rng(cfg.seed).fork(100 + uint64_t(epoch));
    bool bad = false;

    for (int step = 0; step < cfg.steps_per_epoch && !bad; ++step) {
      std::vector<NominalBatch> batch;
      std::vector<std::vector<int>> row_sets(train_objs.size());
      for (size_t oi = 0; oi < train_objs.size(); ++oi) {
        auto rows = train_detail::draw(splits[oi].surface, cfg.surface_batch,
                                       erng);
        auto offr = train_detail::draw(splits[oi].off, cfg.query_batch, erng);
        rows.insert(rows.end(), offr.begin(), offr.end());
        row_sets[oi] = std::move(rows);
        batch.push_back({m.objects[oi].code, &train_objs[oi]->nominal_samples,
                         row_sets[oi]});
      }
      NominalGrads grads;
      LossReport rep = loss_nominal(m, batch, cfg.weights, &grads);
      epoch_rep += rep;
      if (!std::isfinite(rep.total)) {
        bad = true;
        break;
      }
      std::vector<std::span<Real>> bufs;
      bufs.push_back(grads.hyper_o);
      for (auto& a : grads.alpha) bufs.push_back(a);
      clip_global_norm(bufs, cfg.grad_clip);
      adam_step(out.checkpoint.state.adam.at("hyper_o"), m.hyper_o,
                grads.hyper_o);
      for (size_t oi = 0; oi < train_objs.size(); ++oi)
        adam_step(out.checkpoint.state.adam.at("code." + train_objs[oi]->id),
                  m.objects[oi].code, grads.alpha[oi],
                  "code." + train_objs[oi]->id);
    }

    double ms = std::chrono::duration<double, std::milli>(
                    std::chrono::steady_clock::now() - t0)
                    .count();
    out.log.add(int(epoch), epoch_rep, ms);
    if (bad) {
      out.diverged = true;
      out.checkpoint = last_good;  // abort with the last good state
      out.checkpoint.meta["diverged_at_epoch"] = epoch;
      break;
    }
    out.checkpoint.state.epoch = epoch + 1;
    last_good = out.checkpoint;
  }

  // final per-object nominal reconstruction quality
  Json cds = Json::object();
  for (size_t oi = 0; oi < train_objs.size(); ++oi) {
    Real cd = nominal_cd(m, m.objects[oi].code, train_objs[oi]->nominal_cloud);
    cds[train_objs[oi]->id] = cd;
  }
  out.checkpoint.meta["nominal_cd"] = cds;
  out.checkpoint.meta["phase"] = "pretrain";
  out.checkpoint.config_echo = Json(cfg);
  return out;
}

// ---------------------------------------------------------------------------
// Phase 2: dynamics training with frozen object field and codes.
// ---------------------------------------------------------------------------
struct DynamicsResult {
  Checkpoint checkpoint;
  TrainLog log;
  bool diverged = false;
};

inline DynamicsResult train_dynamics(const Dataset& ds,
                                     const Checkpoint& pretrained,
                                     const TrainConfig& cfg) {
  cfg.validate();
  DynamicsResult out;
  out.checkpoint = pretrained;
  Model& m = out.checkpoint.model;

  // ablations change module shapes; rebuild the affected nets
  if (cfg.no_contact_embedding != m.cfg.no_contact_embedding ||
      cfg.rigid != m.cfg.rigid) {
    m.cfg.no_contact_embedding = cfg.no_contact_embedding;
    m.cfg.rigid = cfg.rigid;
    Rng rng = Rng(cfg.seed).fork(3);
    m.force_net = seeded_init(m.cfg.force_spec().layout(), rng.next_u64(),
                              InitScheme::kaiming());
    m.action_net = seeded_init(m.cfg.action_spec().layout(), rng.next_u64(),
                               InitScheme::kaiming());
  }
  const bool no_ct = m.cfg.no_contact_embedding;
  const int w = cfg.weights.horizon;

  // frozen snapshots for the freeze contract
  std::vector<Real> hyper_o_before(m.hyper_o.values().begin(),
                                   m.hyper_o.values().end());

  struct Window {
    const Trajectory* traj;
    int t0;
  };
  std::vector<Window> windows;
  std::vector<const Trajectory*> train_traj;
  for (const auto& tr : ds.trajectories) {
    if (tr.split != "train") continue;
    train_traj.push_back(&tr);
    for (int t0 = 0; t0 + w < int(tr.steps.size()); ++t0)
      windows.push_back({&tr, t0});
  }
  if (windows.empty())
    throw DataError("train_dynamics: no training windows available");

  // per-trajectory learnable initial contact embeddings
  if (!no_ct) {
    Rng crng = Rng(cfg.seed).fork(4);
    for (const auto* tr : train_traj) {
      if (out.checkpoint.traj_c0.count(tr->id)) continue;
      std::vector<Real> c0(size_t(m.cfg.l_c));
      crng.fill_normal(c0, 0.0, 0.01);
      out.checkpoint.traj_c0[tr->id] = std::move(c0);
      out.checkpoint.state.adam["c0." + tr->id] =
          AdamState::make(size_t(m.cfg.l_c), cfg.lr);
    }
  }
  auto& adam = out.checkpoint.state.adam;
  if (!adam.count("hyper_d")) adam["hyper_d"] = AdamState::make(m.hyper_d.size(), cfg.lr);
  if (!adam.count("force")) adam["force"] = AdamState::make(m.force_net.size(), cfg.lr);
  if (!adam.count("action")) adam["action"] = AdamState::make(m.action_net.size(), cfg.lr);

  // cached per-object frozen fields, grids and row splits
  std::map<std::string, DecodedField> obj_fields;
  std::map<std::string, PointGrid> obj_grids;
  for (const auto& o : ds.objects) {
    if (o.unseen) continue;
    if (std::none_of(train_traj.begin(), train_traj.end(),
                     [&](const Trajectory* t) { return t->object_id == o.id; }))
      continue;
    int oi = m.find_object(o.id);
    obj_fields[o.id] = m.decode_object(m.objects[size_t(oi)].code);
    obj_grids[o.id].build(o.nominal_cloud.points);
  }
  std::map<const Trajectory*, std::vector<train_detail::RowSplit>> row_cache;
  for (const auto* tr : train_traj) {
    auto& v = row_cache[tr];
    for (const auto& st : tr->steps)
      v.push_back(train_detail::split_rows(st.samples));
  }

  int64_t start_epoch = out.checkpoint.meta.value("dynamics_epoch", int64_t(0));
  Checkpoint last_good = out.checkpoint;
  for (int64_t epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    auto t0c = std::chrono::steady_clock::now();
    Rng erng = Rng(cfg.seed).fork(5000 + uint64_t(epoch));
    // shuffled window order, truncated to the per-epoch budget
    std::vector<int> order(windows.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = int(i);
    for (size_t i = 0; i + 1 < order.size(); ++i) {
      size_t j = i + size_t(erng.uniform_int(int(order.size() - i)));
      std::swap(order[i], order[j]);
    }
    int budget = std::min<int>(cfg.windows_per_epoch, int(order.size()));

    LossReport epoch_rep;
    bool bad = false;
    for (int wi = 0; wi < budget && !bad; ++wi) {
      const Window& win = windows[size_t(order[size_t(wi)])];
      const Trajectory& tr = *win.traj;
      const ObjectData& obj = ds.object(tr.object_id);
      int oi = m.find_object(obj.id);
      std::span<const Real> alpha = m.objects[size_t(oi)].code;

      // window-start embedding: learned c0, rolled forward without grads
      std::vector<Real> c_start;
      if (!no_ct) {
        c_start = out.checkpoint.traj_c0.at(tr.id);
        for (int t = 0; t < win.t0; ++t) {
          const Transition& st = tr.steps[size_t(t)];
          auto z = force_encode(m, st.wrench, c_start, st.pose);
          c_start = action_predict(m, alpha, z, st.action).contact;
        }
      }

      // assemble the window
      std::vector<DynamicsStep> steps;
      steps.resize(size_t(w));
      std::vector<std::vector<int>> sample_rows, obs_rows;
      sample_rows.resize(size_t(w));
      obs_rows.resize(size_t(w));
      std::vector<std::vector<Vec3>> fpoints;
      fpoints.resize(size_t(w));
      for (int k = 0; k < w; ++k) {
        const Transition& st = tr.steps[size_t(win.t0 + k)];
        const Transition& nx = tr.steps[size_t(win.t0 + k + 1)];
        DynamicsStep& dst = steps[size_t(k)];
        dst.pose = st.pose;
        dst.wrench = st.wrench;
        dst.action = st.action;
        dst.wrench_next = nx.wrench;
        dst.observed = &st.partial;
        dst.samples = &st.samples;
        const auto& split = row_cache[&tr][size_t(win.t0 + k)];
        auto rows = train_detail::draw(split.surface, cfg.dyn_surface_batch,
                                       erng);
        auto offr = train_detail::draw(split.off, cfg.dyn_query_batch, erng);
        rows.insert(rows.end(), offr.begin(), offr.end());
        sample_rows[size_t(k)] = std::move(rows);
        dst.sample_rows = sample_rows[size_t(k)];
        std::vector<int> all_obs(st.partial.size());
        for (size_t i = 0; i < all_obs.size(); ++i) all_obs[i] = int(i);
        obs_rows[size_t(k)] =
            train_detail::draw(all_obs, cfg.dyn_cloud_batch, erng);
        dst.observed_rows = obs_rows[size_t(k)];
        for (int q = 0; q < cfg.dyn_field_points; ++q)
          fpoints[size_t(k)].push_back({erng.uniform(-1, 1),
                                        erng.uniform(-1, 1),
                                        erng.uniform(-1, 1)});
        dst.field_points = fpoints[size_t(k)];
      }

      DynamicsGrads grads;
      LossReport rep = loss_dynamics_total(
          m, obj_fields.at(obj.id), alpha, c_start, steps, obj.nominal_cloud,
          &obj_grids.at(obj.id), cfg.weights, &grads);
      epoch_rep += rep;
      if (!std::isfinite(rep.total)) {
        bad = true;
        break;
      }

      std::vector<std::span<Real>> bufs = {grads.hyper_d, grads.force,
                                           grads.action};
      bool update_c0 = !no_ct && win.t0 == 0;
      if (update_c0) bufs.push_back(grads.c_init);
      clip_global_norm(bufs, cfg.grad_clip);
      if (!m.cfg.rigid) adam_step(adam.at("hyper_d"), m.hyper_d, grads.hyper_d);
      adam_step(adam.at("force"), m.force_net, grads.force);
      adam_step(adam.at("action"), m.action_net, grads.action);
      if (update_c0)
        adam_step(adam.at("c0." + tr.id), out.checkpoint.traj_c0.at(tr.id),
                  grads.c_init, "c0." + tr.id);
    }

    double ms = std::chrono::duration<double, std::milli>(
                    std::chrono::steady_clock::now() - t0c)
                    .count();
    out.log.add(int(epoch), epoch_rep, ms);
    if (bad) {
      out.diverged = true;
      out.checkpoint = last_good;
      out.checkpoint.meta["diverged_at_epoch"] = epoch;
      break;
    }
    out.checkpoint.meta["dynamics_epoch"] = epoch + 1;
    last_good = out.checkpoint;
  }

  // freeze contract: the object field and codes must be untouched
  auto after = m.hyper_o.values();
  for (size_t i = 0; i < after.size(); ++i)
    if (after[i] != hyper_o_before[i])
      throw NumericError("train_dynamics: frozen hyper_o was mutated");

  out.checkpoint.meta["phase"] = "dynamics";
  out.checkpoint.config_echo = Json(cfg);
  return out;
}

// ---------------------------------------------------------------------------
// Unseen-object code inference: Adam on the code only, same nominal loss.
// ---------------------------------------------------------------------------
struct CodeInferenceResult {
  std::vector<Real> code;
  Real nominal_cd = 0;
  LossReport final_loss;
};

inline CodeInferenceResult infer_object_code(const Checkpoint& ckpt,
                                             const PointCloud& nominal_cloud,
                                             const SdfSampleSet& samples,
                                             const TrainConfig& cfg) {
  cfg.validate();
  const Model& m = ckpt.model;
  CodeInferenceResult out;
  Rng rng = Rng(cfg.seed).fork(9);
  out.code.assign(size_t(m.cfg.l_alpha), 0.0);
  rng.fill_normal(out.code, 0.0, 0.01);

  auto split = train_detail::split_rows(samples);
  AdamState adam = AdamState::make(out.code.size(), cfg.infer_lr);
  for (int step = 0; step < cfg.infer_steps; ++step) {
    auto rows = train_detail::draw(split.surface, cfg.surface_batch, rng);
    auto offr = train_detail::draw(split.off, cfg.query_batch, rng);
    rows.insert(rows.end(), offr.begin(), offr.end());
    NominalBatch nb{out.code, &samples, rows};
    NominalGrads grads;
    LossReport rep = loss_nominal(m, std::span(&nb, 1), cfg.weights, &grads);
    if (!std::isfinite(rep.total))
      throw NumericError("infer_object_code: loss diverged");
    std::vector<std::span<Real>> bufs = {grads.alpha[0]};
    clip_global_norm(bufs, cfg.grad_clip);
    adam_step(adam, out.code, grads.alpha[0], "code");
  }
  {
    NominalBatch nb{out.code, &samples, {}};
    out.final_loss = loss_nominal(m, std::span(&nb, 1), cfg.weights);
  }
  out.nominal_cd = nominal_cd(m, out.code, nominal_cloud);
  return out;
}

}  // namespace defo
