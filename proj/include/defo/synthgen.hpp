#pragma once

#include "defo/io.hpp"

namespace defo {

// ---------------------------------------------------------------------------
// Synthetic stand-ins for the robot data: paddles bending quasi-statically
// against a table plane, and a hanging chain solved as a catenary. All stored
// geometry lives in the normalized wrist frame; poses/wrenches/actions stay
// in raw units.
// ---------------------------------------------------------------------------

struct PaddleSpec {
  std::string id;
  Real blade_len = 0.18;       // m
  Real blade_width = 0.10;
  Real blade_thick = 0.005;
  Real handle_len = 0.10;
  Real handle_width = 0.022;
  Real handle_thick = 0.012;
  Real ei = 0.08;              // bending stiffness EI, N m^2
  Real tilt = 0.26;            // blade pitch below the handle axis, rad

  void validate() const {
    for (Real v : {blade_len, blade_width, blade_thick, handle_len,
                   handle_width, handle_thick, ei})
      if (v <= 0) throw ConfigError("PaddleSpec: nonpositive dimension");
  }

  Real tip_stiffness() const {  // perpendicular tip load per unit deflection
    return 3.0 * ei / (blade_len * blade_len * blade_len);
  }

  Vec3 blade_axis() const { return {std::cos(tilt), 0, -std::sin(tilt)}; }
  Vec3 blade_normal() const { return {std::sin(tilt), 0, std::cos(tilt)}; }

  PrimitiveShape shape() const {
    validate();
    PrimitiveShape s;
    Mat3 r = Mat3::rot_y(tilt);
    Vec3 blade_center = blade_axis() * (blade_len / 2);
    s.parts.push_back({blade_center,
                       {blade_len / 2, blade_width / 2, blade_thick / 2},
                       0.0,
                       r});
    Real overlap = 0.25 * handle_len;
    s.parts.push_back({{-(handle_len - overlap) / 2 - overlap / 2, 0, 0},
                       {handle_len / 2, handle_width / 2, handle_thick / 2},
                       0.0,
                       Mat3::identity()});
    return s;
  }

  // object-frame position of the blade tip's bottom edge center
  Vec3 tip_bottom() const {
    return blade_axis() * blade_len - blade_normal() * (blade_thick / 2);
  }
};

struct ChainSpec {
  std::string id;
  Real length = 0.5;          // arc length S, m
  Real tube_radius = 0.008;
  Real weight_per_len = 2.0;  // N/m
  Vec3 grip_region_lo = {0.15, -0.08, -0.04};
  Vec3 grip_region_hi = {0.42, 0.08, 0.06};
  Real canonical_sep = 0.35;  // nominal-configuration horizontal separation

  void validate() const {
    if (length <= 0 || tube_radius <= 0 || weight_per_len <= 0)
      throw ConfigError("ChainSpec: nonpositive parameter");
  }
};

// Euler-Bernoulli cantilever with a perpendicular tip load: deflection at
// arclength u for tip force F.
inline Real beam_deflection(const PaddleSpec& spec, Real tip_force, Real u) {
  if (u < 0 || u > spec.blade_len)
    throw ConfigError("beam_deflection: u outside the blade");
  return tip_force * u * u * (3 * spec.blade_len - u) / (6 * spec.ei);
}

// ---------------------------------------------------------------------------
// Trajectory data.
// ---------------------------------------------------------------------------
struct ContactLine {
  Vec3 a, b;
  std::vector<Vec3> cluster;  // optional supporting points

  Real length() const { return (a - b).norm(); }
};

struct Transition {
  Vec6 pose = vec6_zero();
  Vec6 wrench = vec6_zero();  // measured (noisy)
  Vec6 action = vec6_zero();
  PointCloud partial;        // what the filter sees
  PointCloud deformed_full;  // un-occluded ground truth
  SdfSampleSet samples;      // deformed-frame supervision
  std::vector<Vec3> def_points;  // ground-truth deformation probes
  std::vector<Vec3> def_delta;   // x' - x at those probes
  bool contact_present = false;
  ContactLine contact;  // ground truth, normalized frame
  Real plane_z = 0;     // table plane height in the normalized frame
  Real depth_ratio = 0; // tip deflection / blade length (paddles)
};

struct Trajectory {
  std::string id, object_id, split;  // split: train / test / unseen
  std::vector<Transition> steps;
  Real max_depth_ratio = 0;
};

struct ObjectData {
  std::string id;
  std::string kind;  // "paddle" | "chain"
  PaddleSpec paddle;
  ChainSpec chain;
  bool unseen = false;
  PointCloud nominal_cloud;     // normalized frame, with normals
  SdfSampleSet nominal_samples; // normalized frame
  SimilarityTransform to_normalized;
};

struct Dataset {
  Json config_echo;
  uint64_t seed = 0;
  std::vector<ObjectData> objects;
  std::vector<Trajectory> trajectories;

  const ObjectData& object(const std::string& id) const {
    for (const auto& o : objects)
      if (o.id == id) return o;
    throw DataError("dataset has no object '" + id + "'");
  }
  std::vector<const Trajectory*> split(const std::string& tag) const {
    std::vector<const Trajectory*> out;
    for (const auto& t : trajectories)
      if (t.split == tag) out.push_back(&t);
    return out;
  }
};

// ---------------------------------------------------------------------------
// Occlusion.
// ---------------------------------------------------------------------------
struct OcclusionMode {
  enum Kind { BottomFraction, Box } kind = BottomFraction;
  Real fraction = 0.15;
  Vec3 box_lo, box_hi;

  static OcclusionMode bottom(Real r) { return {BottomFraction, r, {}, {}}; }
  static OcclusionMode box(const Vec3& lo, const Vec3& hi) {
    return {Box, 0, lo, hi};
  }
};

inline PointCloud apply_occlusion(const PointCloud& cloud,
                                  const OcclusionMode& mode) {
  if (mode.kind == OcclusionMode::BottomFraction &&
      (mode.fraction < 0 || mode.fraction >= 1))
    throw ConfigError("apply_occlusion: fraction must be in [0, 1)");
  PointCloud out;
  auto keep = [&](size_t i) {
    out.points.push_back(cloud.points[i]);
    if (cloud.has_normals()) out.normals.push_back(cloud.normals[i]);
  };
  if (mode.kind == OcclusionMode::BottomFraction) {
    if (mode.fraction == 0) return cloud;
    auto [lo, hi] = bounding_box(cloud.points);
    Real cut = lo.z + mode.fraction * (hi.z - lo.z);
    for (size_t i = 0; i < cloud.size(); ++i)
      if (cloud.points[i].z >= cut) keep(i);
  } else {
    for (size_t i = 0; i < cloud.size(); ++i) {
      const Vec3& p = cloud.points[i];
      bool inside = p.x >= mode.box_lo.x && p.x <= mode.box_hi.x &&
                    p.y >= mode.box_lo.y && p.y <= mode.box_hi.y &&
                    p.z >= mode.box_lo.z && p.z <= mode.box_hi.z;
      if (!inside) keep(i);
    }
  }
  if (out.empty())
    throw DegeneracyError("apply_occlusion: mask removed every point");
  return out;
}

// ---------------------------------------------------------------------------
// Generator configuration.
// ---------------------------------------------------------------------------
struct GenConfig {
  std::string kind = "paddle";
  int train_objects = 4;
  int unseen_objects = 2;
  int train_trajectories = 8;  // per training object
  int test_trajectories = 3;   // per training object
  int unseen_trajectories = 2; // per unseen object
  int steps = 12;
  int surface_samples = 512;   // per frame
  int query_samples = 2048;    // per frame
  int nominal_surface = 1024;
  int nominal_query = 4096;
  int cloud_points = 1024;
  int dense_oracle_points = 8192;
  int def_probe_points = 256;
  Real occlusion_fraction = 0.15;  // test and unseen splits
  Real wrench_noise = 0.4;         // N
  Real torque_noise = 0.05;        // N m
  Real friction_mu = 0.3;
  Real table_offset = 0.004;       // per-trajectory table height jitter, m
  Real deep_fraction = 0.5;        // fraction of test trajectories held deep
  std::array<Real, 3> action_box = {0.02, 0.02, 0.01};  // |dx|,|dy|,|dz| caps

  void validate() const {
    if (kind != "paddle" && kind != "chain")
      throw ConfigError("GenConfig: unknown kind '" + kind + "'");
    if (train_objects < 1 || steps < 2)
      throw ConfigError("GenConfig: need >= 1 object and >= 2 steps");
  }
};

inline void to_json(Json& j, const GenConfig& c) {
  j = Json{{"kind", c.kind},
           {"train_objects", c.train_objects},
           {"unseen_objects", c.unseen_objects},
           {"train_trajectories", c.train_trajectories},
           {"test_trajectories", c.test_trajectories},
           {"unseen_trajectories", c.unseen_trajectories},
           {"steps", c.steps},
           {"surface_samples", c.surface_samples},
           {"query_samples", c.query_samples},
           {"nominal_surface", c.nominal_surface},
           {"nominal_query", c.nominal_query},
           {"cloud_points", c.cloud_points},
           {"dense_oracle_points", c.dense_oracle_points},
           {"def_probe_points", c.def_probe_points},
           {"occlusion_fraction", c.occlusion_fraction},
           {"wrench_noise", c.wrench_noise},
           {"torque_noise", c.torque_noise},
           {"friction_mu", c.friction_mu},
           {"table_offset", c.table_offset},
           {"deep_fraction", c.deep_fraction},
           {"action_box", c.action_box}};
}

inline void from_json(const Json& j, GenConfig& c) {
  GenConfig d;
  c.kind = j.value("kind", d.kind);
  c.train_objects = j.value("train_objects", d.train_objects);
  c.unseen_objects = j.value("unseen_objects", d.unseen_objects);
  c.train_trajectories = j.value("train_trajectories", d.train_trajectories);
  c.test_trajectories = j.value("test_trajectories", d.test_trajectories);
  c.unseen_trajectories = j.value("unseen_trajectories", d.unseen_trajectories);
  c.steps = j.value("steps", d.steps);
  c.surface_samples = j.value("surface_samples", d.surface_samples);
  c.query_samples = j.value("query_samples", d.query_samples);
  c.nominal_surface = j.value("nominal_surface", d.nominal_surface);
  c.nominal_query = j.value("nominal_query", d.nominal_query);
  c.cloud_points = j.value("cloud_points", d.cloud_points);
  c.dense_oracle_points = j.value("dense_oracle_points", d.dense_oracle_points);
  c.def_probe_points = j.value("def_probe_points", d.def_probe_points);
  c.occlusion_fraction = j.value("occlusion_fraction", d.occlusion_fraction);
  c.wrench_noise = j.value("wrench_noise", d.wrench_noise);
  c.torque_noise = j.value("torque_noise", d.torque_noise);
  c.friction_mu = j.value("friction_mu", d.friction_mu);
  c.table_offset = j.value("table_offset", d.table_offset);
  c.deep_fraction = j.value("deep_fraction", d.deep_fraction);
  c.action_box = j.value("action_box", d.action_box);
}

// ---------------------------------------------------------------------------
// Paddle generation.
// ---------------------------------------------------------------------------
namespace paddle_detail {

// The bending map pushes points perpendicular to the blade axis, so its
// inverse is closed form: u is preserved.
struct BendingMap {
  const PaddleSpec* spec;
  Real tip_force = 0;  // perpendicular component

  Real u_of(const Vec3& x) const { return spec->blade_axis().dot(x); }

  Real deflection_at(const Vec3& x) const {
    Real u = std::clamp(u_of(x), 0.0, spec->blade_len);
    return tip_force <= 0 ? 0.0 : beam_deflection(*spec, tip_force, u);
  }

  Vec3 forward(const Vec3& x) const {
    return x + spec->blade_normal() * deflection_at(x);
  }
  Vec3 inverse(const Vec3& y) const {
    return y - spec->blade_normal() * deflection_at(y);
  }

  // slope of the deflection profile at u (for normal transport)
  Real slope_at(const Vec3& x) const {
    Real u = std::clamp(u_of(x), 0.0, spec->blade_len);
    if (tip_force <= 0) return 0;
    return tip_force * u * (2 * spec->blade_len - u) / (2 * spec->ei);
  }

  // Normals transform by the inverse-transpose of J = I + sl * zb xb^T,
  // which is I - sl * xb zb^T since xb and zb are orthogonal.
  Vec3 forward_normal(const Vec3& x, const Vec3& n) const {
    Real sl = slope_at(x);
    if (sl == 0) return n;
    Real nz = spec->blade_normal().dot(n);
    return (n - spec->blade_axis() * (sl * nz)).normalized();
  }
};

}  // namespace paddle_detail

inline PaddleSpec make_paddle_variant(uint64_t seed, const std::string& id) {
  Rng rng(seed);
  PaddleSpec s;
  s.id = id;
  s.blade_len = rng.uniform(0.16, 0.22);
  s.blade_width = rng.uniform(0.08, 0.12);
  s.blade_thick = rng.uniform(0.004, 0.006);
  s.handle_len = rng.uniform(0.08, 0.12);
  Real k = rng.uniform(120.0, 350.0);  // N/m perpendicular tip stiffness
  s.ei = k * s.blade_len * s.blade_len * s.blade_len / 3.0;
  return s;
}

// Builds the normalized-frame nominal data for a paddle.
inline ObjectData make_paddle_object(const PaddleSpec& spec,
                                     const GenConfig& cfg, uint64_t seed,
                                     bool unseen) {
  ObjectData obj;
  obj.id = spec.id;
  obj.kind = "paddle";
  obj.paddle = spec;
  obj.unseen = unseen;
  PrimitiveShape shape = spec.shape();
  PointCloud raw = sample_surface(shape, cfg.cloud_points, seed);
  auto [norm_cloud, t] = normalize_cloud(raw, 2.0);
  obj.nominal_cloud = norm_cloud;
  obj.to_normalized = t;
  // normalized-frame analytic shape for nominal sd supervision
  PrimitiveShape nshape = shape;
  for (auto& b : nshape.parts) {
    b.center = t.apply(b.center);
    b.half_extents = b.half_extents * t.scale;
    b.radius *= t.scale;
  }
  obj.nominal_samples = sample_training_points(nshape, cfg.nominal_surface,
                                               cfg.nominal_query, seed ^ 0x9e1);
  return obj;
}

inline Trajectory gen_paddle_trajectory(const ObjectData& obj,
                                        const GenConfig& cfg, uint64_t seed,
                                        const std::string& split,
                                        const std::string& traj_id,
                                        bool deep_profile) {
  if (cfg.steps < 2) throw ConfigError("gen_paddle_trajectory: steps >= 2");
  const PaddleSpec& spec = obj.paddle;
  const SimilarityTransform& T = obj.to_normalized;
  Rng rng(seed);
  Trajectory traj;
  traj.id = traj_id;
  traj.object_id = obj.id;
  traj.split = split;

  const Real cos_t = std::cos(spec.tilt);
  const Real d_cap = 0.14 * spec.blade_len * cos_t;
  // the walk may leave contact on shallow profiles (clamped depth 0)
  const Real walk_lo = deep_profile ? 0.72 * d_cap : -0.2 * d_cap;
  const Real d_hi = deep_profile ? d_cap : 0.80 * d_cap;
  const Real table_z = rng.uniform(-cfg.table_offset, cfg.table_offset);
  const Vec3 tip = spec.tip_bottom();

  // commanded-depth random walk (reflected into [walk_lo, d_hi])
  std::vector<Real> depth(size_t(cfg.steps) + 1);
  depth[0] = deep_profile ? rng.uniform(0.78 * d_cap, 0.95 * d_cap)
                          : rng.uniform(0.25 * d_cap, 0.75 * d_cap);
  for (int t = 1; t <= cfg.steps; ++t) {
    Real step = rng.uniform(-cfg.action_box[2], cfg.action_box[2]);
    Real d = depth[size_t(t - 1)] + step;
    while (d < walk_lo || d > d_hi) {
      if (d < walk_lo) d = 2 * walk_lo - d;
      if (d > d_hi) d = 2 * d_hi - d;
    }
    depth[size_t(t)] = d;
  }

  // poses: commanded depth determines z; xy wanders
  std::vector<Vec3> pos(size_t(cfg.steps) + 1);
  pos[0] = {rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05), 0};
  for (int t = 1; t <= cfg.steps; ++t)
    pos[size_t(t)] = {pos[size_t(t - 1)].x +
                          rng.uniform(-cfg.action_box[0], cfg.action_box[0]),
                      pos[size_t(t - 1)].y +
                          rng.uniform(-cfg.action_box[1], cfg.action_box[1]),
                      0};
  for (int t = 0; t <= cfg.steps; ++t)
    pos[size_t(t)].z = table_z - tip.z - depth[size_t(t)];

  Rng cloud_rng = rng.fork(101);
  Rng sample_rng = rng.fork(202);
  Rng noise_rng = rng.fork(303);

  PrimitiveShape shape = spec.shape();
  // dense nominal surface for the deformed-distance oracle
  PointCloud dense_nominal =
      sample_surface(shape, cfg.dense_oracle_points, seed ^ 0x77);

  for (int t = 0; t < cfg.steps; ++t) {
    Transition tr;
    Real d = std::max(depth[size_t(t)], 0.0);  // free-space frames clamp to 0
    Real delta_tip = d / cos_t;  // perpendicular tip deflection
    paddle_detail::BendingMap bend{&spec, spec.tip_stiffness() * delta_tip};
    tr.depth_ratio = delta_tip / spec.blade_len;
    traj.max_depth_ratio = std::max(traj.max_depth_ratio, tr.depth_ratio);

    // pose and action (Cartesian displacement to the next pose)
    tr.pose = {pos[size_t(t)].x, pos[size_t(t)].y, pos[size_t(t)].z, 0, 0, 0};
    Vec3 dp = pos[size_t(t) + 1] - pos[size_t(t)];
    tr.action = {dp.x, dp.y, dp.z, 0, 0, 0};

    // true wrench: normal contact force + sliding friction from the motion
    // that led into this configuration
    Real normal_force =
        d > 0 ? spec.tip_stiffness() * d / (cos_t * cos_t) : 0.0;
    Vec3 fric = {};
    if (t > 0 && normal_force > 0) {
      Vec3 prev = pos[size_t(t)] - pos[size_t(t - 1)];
      Vec3 lat = {prev.x, prev.y, 0};
      if (lat.norm() > 1e-9)
        fric = -lat.normalized() * (cfg.friction_mu * normal_force);
    }
    Vec3 force = {fric.x, fric.y, normal_force};
    Vec3 r_contact = tip + spec.blade_normal() * delta_tip;
    Vec3 torque = r_contact.cross(force);
    for (int i = 0; i < 3; ++i) {
      tr.wrench[size_t(i)] =
          force[i] + noise_rng.normal(0, cfg.wrench_noise * (d > 0 ? 1 : 0.25));
      tr.wrench[size_t(i) + 3] =
          torque[i] + noise_rng.normal(0, cfg.torque_noise * (d > 0 ? 1 : 0.25));
    }

    // deformed full cloud (normalized)
    PointCloud def;
    for (size_t i = 0; i < obj.nominal_cloud.size(); ++i) {
      Vec3 p_obj = T.invert(obj.nominal_cloud.points[i]);
      Vec3 q = bend.forward(p_obj);
      def.points.push_back(T.apply(q));
      def.normals.push_back(
          bend.forward_normal(p_obj, obj.nominal_cloud.normals[i]));
    }
    tr.deformed_full = def;

    // partial view: camera on the -y side, slightly above
    Vec3 cam = {0, -1.6, 1.0};
    PointCloud partial;
    for (size_t i = 0; i < def.size(); ++i) {
      Vec3 to_cam = cam - def.points[i];
      if (def.normals[i].dot(to_cam) > 0) {
        partial.points.push_back(def.points[i]);
        partial.normals.push_back(def.normals[i]);
      }
    }
    if (partial.size() < 8) partial = def;
    if ((split == "test" || split == "unseen") && cfg.occlusion_fraction > 0)
      partial = apply_occlusion(partial,
                                OcclusionMode::bottom(cfg.occlusion_fraction));
    tr.partial = partial;

    // deformed-frame sd supervision
    PointGrid dense_grid;
    {
      std::vector<Vec3> dense_def(dense_nominal.size());
      for (size_t i = 0; i < dense_nominal.size(); ++i)
        dense_def[i] = bend.forward(dense_nominal.points[i]);
      dense_grid.build(dense_def);
    }
    SdfSampleSet& ss = tr.samples;
    for (int i = 0; i < cfg.surface_samples; ++i) {
      size_t pick = size_t(sample_rng.uniform_int(int(obj.nominal_cloud.size())));
      Vec3 p_obj = T.invert(obj.nominal_cloud.points[pick]);
      Vec3 q = bend.forward(p_obj);
      ss.queries.push_back(T.apply(q));
      ss.target_sd.push_back(0.0);
      ss.surface_mask.push_back(1);
      ss.target_normals.push_back(
          bend.forward_normal(p_obj, obj.nominal_cloud.normals[pick]));
    }
    for (int i = 0; i < cfg.query_samples; ++i) {
      Vec3 qn;
      if (i % 2 == 0) {
        qn = {sample_rng.uniform(-1, 1), sample_rng.uniform(-1, 1),
              sample_rng.uniform(-1, 1)};
      } else {
        size_t pick =
            size_t(sample_rng.uniform_int(int(obj.nominal_cloud.size())));
        Vec3 p_obj = T.invert(obj.nominal_cloud.points[pick]);
        qn = T.apply(bend.forward(p_obj)) + sample_rng.normal_vec3(0.05);
        qn = max3(min3(qn, {1, 1, 1}), {-1, -1, -1});
      }
      Vec3 q_obj = T.invert(qn);
      Real nn_sq;
      dense_grid.nearest(q_obj, &nn_sq);
      Real dist = std::sqrt(nn_sq);
      Real sign =
          primitive_sdf(shape, bend.inverse(q_obj)).first >= 0 ? 1.0 : -1.0;
      ss.queries.push_back(qn);
      ss.target_sd.push_back(sign * dist * T.scale);
      ss.surface_mask.push_back(0);
      ss.target_normals.push_back({});
    }

    // ground-truth deformation probes on the deformed surface
    for (int i = 0; i < cfg.def_probe_points; ++i) {
      size_t pick = size_t(cloud_rng.uniform_int(int(dense_nominal.size())));
      Vec3 p_obj = dense_nominal.points[pick];
      Vec3 q_obj = bend.forward(p_obj);
      tr.def_points.push_back(T.apply(q_obj));
      tr.def_delta.push_back(T.apply(p_obj) - T.apply(q_obj));
    }

    // table plane and ground-truth contact line in the wrist frame
    Real plane_obj_z = table_z - pos[size_t(t)].z;
    tr.plane_z = plane_obj_z * T.scale + T.offset.z;
    if (d > 0) {
      tr.contact_present = true;
      Mat3 r = Mat3::rot_y(spec.tilt);
      Vec3 e1 = r.apply({spec.blade_len, -spec.blade_width / 2,
                         -spec.blade_thick / 2}) +
                spec.blade_normal() * delta_tip;
      Vec3 e2 = r.apply({spec.blade_len, spec.blade_width / 2,
                         -spec.blade_thick / 2}) +
                spec.blade_normal() * delta_tip;
      tr.contact.a = T.apply(e1);
      tr.contact.b = T.apply(e2);
    }
    traj.steps.push_back(std::move(tr));
  }
  return traj;
}

// ---------------------------------------------------------------------------
// Chain generation: catenary with optional resting contact on the table.
// ---------------------------------------------------------------------------
namespace chain_detail {

struct Curve2D {
  // z as a function of horizontal coordinate x in [0, D], arclength S total
  bool contact = false;
  Real a = 1;                     // catenary parameter
  Real D = 0, S = 0;
  Real xm = 0, c = 0;             // free: z = a cosh((x-xm)/a) + c
  Real xa = 0, xb = 0, flat = 0;  // contact: touchdown spans
  Real za = 0, zb = 0, table = 0;
  Real arc_a = 0, arc_b = 0;

  Real z_at(Real x) const {
    if (!contact) return a * std::cosh((x - xm) / a) + c;
    if (x <= xa) return table + a * (std::cosh((xa - x) / a) - 1);
    if (x <= xa + flat) return table;
    return table + a * (std::cosh((x - xa - flat) / a) - 1);
  }

  // horizontal position at arclength s measured from the A end (contact case)
  Real x_at_arc(Real s) const {
    if (!contact)
      return xm + a * std::asinh(s / a - std::sinh(xm / a));
    if (s <= arc_a) {
      Real v = std::sinh(xa / a) - s / a;
      return xa - a * std::asinh(v);
    }
    if (s <= arc_a + flat) return xa + (s - arc_a);
    Real sp = s - arc_a - flat;
    return xa + flat + a * std::asinh(sp / a);
  }
};

inline Real free_arc_from0(Real a, Real xm, Real x) {
  return a * (std::sinh((x - xm) / a) + std::sinh(xm / a));
}

// Solves the free-hanging catenary through (0, za) and (D, zb) with arc
// length S. Bisection on the parameter to 1e-9.
inline Curve2D solve_free(Real D, Real za, Real zb, Real S) {
  Real v = zb - za;
  Real chord = std::sqrt(D * D + v * v);
  if (S <= chord * (1 + 1e-12))
    throw GenerationError("catenary: endpoints too far apart for the length");
  Real target = std::sqrt(S * S - v * v);
  auto g = [&](Real a) { return 2 * a * std::sinh(D / (2 * a)) - target; };
  Real lo = D / 1400.0, hi = std::max(D, 1e-3);
  while (g(hi) > 0) hi *= 2;
  if (g(lo) < 0) lo = hi / 2;  // extremely taut; collapse interval
  for (int it = 0; it < 200; ++it) {
    Real mid = 0.5 * (lo + hi);
    (g(mid) > 0 ? lo : hi) = mid;
    if (hi - lo < 1e-15 * std::max(1.0, hi)) break;
  }
  Curve2D cv;
  cv.contact = false;
  cv.a = 0.5 * (lo + hi);
  cv.D = D;
  cv.S = S;
  cv.za = za;
  cv.zb = zb;
  Real sh = 2 * cv.a * std::sinh(D / (2 * cv.a));
  cv.xm = D / 2 - cv.a * std::asinh(v / sh);
  cv.c = za - cv.a * std::cosh(cv.xm / cv.a);
  return cv;
}

// Chain resting on the table between two tangent catenary pieces. The shared
// parameter a is found by bisection on total arclength.
inline Curve2D solve_contact(Real D, Real za, Real zb, Real S, Real table) {
  Real ha = za - table, hb = zb - table;
  if (ha <= 0 || hb <= 0)
    throw GenerationError("catenary: grip below the table");
  auto xa_of = [&](Real a) { return a * std::acosh(1 + ha / a); };
  auto xb_of = [&](Real a) { return a * std::acosh(1 + hb / a); };
  auto arc_a_of = [&](Real a) { return std::sqrt(ha * ha + 2 * a * ha); };
  auto arc_b_of = [&](Real a) { return std::sqrt(hb * hb + 2 * a * hb); };
  auto total = [&](Real a) {
    return arc_a_of(a) + arc_b_of(a) + (D - xa_of(a) - xb_of(a));
  };
  auto flat_of = [&](Real a) { return D - xa_of(a) - xb_of(a); };

  // largest a with nonnegative flat span
  Real a_hi = 1e-6;
  while (flat_of(a_hi * 2) > 0 && a_hi < 1e6) a_hi *= 2;
  // refine the F=0 boundary
  {
    Real lo = a_hi, hi = a_hi * 2;
    for (int it = 0; it < 100; ++it) {
      Real mid = 0.5 * (lo + hi);
      (flat_of(mid) > 0 ? lo : hi) = mid;
    }
    a_hi = lo;
  }
  Real a_lo = 1e-9;
  if (total(a_lo) < S)
    throw GenerationError("catenary: chain longer than the drape path");
  if (total(a_hi) > S)
    throw GenerationError("catenary: contact solve has no bracket");
  for (int it = 0; it < 200; ++it) {
    Real mid = 0.5 * (a_lo + a_hi);
    (total(mid) > S ? a_lo : a_hi) = mid;
  }
  Curve2D cv;
  cv.contact = true;
  cv.a = 0.5 * (a_lo + a_hi);
  cv.D = D;
  cv.S = S;
  cv.za = za;
  cv.zb = zb;
  cv.table = table;
  cv.xa = xa_of(cv.a);
  cv.xb = xb_of(cv.a);
  cv.flat = D - cv.xa - cv.xb;
  cv.arc_a = arc_a_of(cv.a);
  cv.arc_b = arc_b_of(cv.a);
  return cv;
}

// Samples the curve at n arclength-uniform parameters, in the vertical plane
// spanned by horizontal direction u from endpoint A.
inline std::vector<Vec3> sample_curve(const Curve2D& cv, const Vec3& A,
                                      const Vec3& u, int n) {
  std::vector<Vec3> pts(size_t(n), Vec3{});
  for (int i = 0; i < n; ++i) {
    Real s = cv.S * Real(i) / Real(n - 1);
    Real x;
    if (!cv.contact) {
      // invert s(x) = a( sinh((x-xm)/a) + sinh(xm/a) )
      x = cv.xm + cv.a * std::asinh(s / cv.a - std::sinh(cv.xm / cv.a));
    } else {
      x = cv.x_at_arc(s);
    }
    Real z = cv.z_at(x);
    pts[size_t(i)] = A + u * x + Vec3{0, 0, 1} * (z - cv.za);
  }
  return pts;
}

// rotation-minimizing frames via the double reflection method
inline std::vector<std::pair<Vec3, Vec3>> rmf(const std::vector<Vec3>& pts) {
  size_t n = pts.size();
  std::vector<Vec3> tan(n);
  for (size_t i = 0; i < n; ++i) {
    Vec3 d = (i == 0 ? pts[1] - pts[0]
                     : (i + 1 == n ? pts[n - 1] - pts[n - 2]
                                   : pts[i + 1] - pts[i - 1]));
    tan[i] = d.normalized();
  }
  std::vector<std::pair<Vec3, Vec3>> frames(n);
  Vec3 up = std::fabs(tan[0].z) < 0.9 ? Vec3{0, 0, 1} : Vec3{1, 0, 0};
  Vec3 r0 = tan[0].cross(up).normalized();
  frames[0] = {r0, tan[0].cross(r0)};
  for (size_t i = 0; i + 1 < n; ++i) {
    Vec3 v1 = pts[i + 1] - pts[i];
    Real c1 = v1.dot(v1);
    if (c1 < 1e-18) {
      frames[i + 1] = frames[i];
      continue;
    }
    Vec3 rL = frames[i].first - v1 * (2.0 / c1 * v1.dot(frames[i].first));
    Vec3 tL = tan[i] - v1 * (2.0 / c1 * v1.dot(tan[i]));
    Vec3 v2 = tan[i + 1] - tL;
    Real c2 = v2.dot(v2);
    Vec3 r = c2 < 1e-18 ? rL : rL - v2 * (2.0 / c2 * v2.dot(rL));
    frames[i + 1] = {r.normalized(), tan[i + 1].cross(r).normalized()};
  }
  return frames;
}

struct ChainConfigSolve {
  Curve2D curve;
  Vec3 plane_u;  // horizontal direction from A toward B
  std::vector<Vec3> centerline;
  std::vector<std::pair<Vec3, Vec3>> frames;
};

inline ChainConfigSolve solve_chain(const ChainSpec& spec, const Vec3& A,
                                    const Vec3& B, Real table_z, int n_pts) {
  Vec3 h = {B.x - A.x, B.y - A.y, 0};
  Real D = h.norm();
  if (D < 1e-6) throw GenerationError("chain: grips vertically aligned");
  ChainConfigSolve out;
  out.plane_u = h / D;
  Curve2D free_cv = solve_free(D, A.z, B.z, spec.length);
  Real zmin = free_cv.za;
  {
    // lowest point (if inside the span)
    if (free_cv.xm >= 0 && free_cv.xm <= D)
      zmin = free_cv.a + free_cv.c;
    zmin = std::min({zmin, free_cv.za, free_cv.zb});
  }
  if (zmin < table_z + spec.tube_radius) {
    out.curve = solve_contact(D, A.z, B.z, spec.length,
                              table_z + spec.tube_radius);
  } else {
    out.curve = free_cv;
  }
  out.centerline = sample_curve(out.curve, A, out.plane_u, n_pts);
  out.frames = rmf(out.centerline);
  return out;
}

inline Real dist_to_polyline(const std::vector<Vec3>& pts, const Vec3& q,
                             Vec3* closest = nullptr) {
  Real best = std::numeric_limits<Real>::max();
  Vec3 bp;
  for (size_t i = 0; i + 1 < pts.size(); ++i) {
    Vec3 a = pts[i], b = pts[i + 1];
    Vec3 ab = b - a;
    Real t = ab.norm_sq() > 0 ? std::clamp((q - a).dot(ab) / ab.norm_sq(), 0.0,
                                           1.0)
                              : 0.0;
    Vec3 p = a + ab * t;
    Real d = (q - p).norm_sq();
    if (d < best) {
      best = d;
      bp = p;
    }
  }
  if (closest) *closest = bp;
  return std::sqrt(best);
}

}  // namespace chain_detail

inline ObjectData make_chain_object(const ChainSpec& spec, const GenConfig& cfg,
                                    uint64_t seed, bool unseen) {
  spec.validate();
  ObjectData obj;
  obj.id = spec.id;
  obj.kind = "chain";
  obj.chain = spec;
  obj.unseen = unseen;

  // canonical configuration: symmetric hang, no table
  Vec3 A = {0, 0, 0};
  Vec3 B = {spec.canonical_sep, 0, 0};
  auto solve = chain_detail::solve_chain(spec, A, B, -10.0, 384);

  Rng rng(seed);
  PointCloud raw;
  for (int i = 0; i < cfg.cloud_points; ++i) {
    int k = rng.uniform_int(int(solve.centerline.size()));
    Real th = rng.uniform(0.0, 2 * std::numbers::pi);
    Vec3 n = solve.frames[size_t(k)].first * std::cos(th) +
             solve.frames[size_t(k)].second * std::sin(th);
    raw.points.push_back(solve.centerline[size_t(k)] + n * spec.tube_radius);
    raw.normals.push_back(n);
  }
  auto [ncloud, t] = normalize_cloud(raw, 2.0);
  obj.nominal_cloud = ncloud;
  obj.to_normalized = t;

  // nominal sd supervision from the capsule-polyline oracle
  std::vector<Vec3> line_n(solve.centerline.size(), Vec3{});
  for (size_t i = 0; i < line_n.size(); ++i)
    line_n[i] = t.apply(solve.centerline[i]);
  Real r_n = spec.tube_radius * t.scale;
  SdfSampleSet& ss = obj.nominal_samples;
  Rng srng = rng.fork(7);
  for (int i = 0; i < cfg.nominal_surface; ++i) {
    size_t pick = size_t(srng.uniform_int(int(ncloud.size())));
    ss.queries.push_back(ncloud.points[pick]);
    ss.target_sd.push_back(0.0);
    ss.surface_mask.push_back(1);
    ss.target_normals.push_back(ncloud.normals[pick]);
  }
  for (int i = 0; i < cfg.nominal_query; ++i) {
    Vec3 q;
    if (i % 2 == 0) {
      q = {srng.uniform(-1, 1), srng.uniform(-1, 1), srng.uniform(-1, 1)};
    } else {
      size_t pick = size_t(srng.uniform_int(int(ncloud.size())));
      q = ncloud.points[pick] + srng.normal_vec3(0.05);
      q = max3(min3(q, {1, 1, 1}), {-1, -1, -1});
    }
    ss.queries.push_back(q);
    ss.target_sd.push_back(chain_detail::dist_to_polyline(line_n, q) - r_n);
    ss.surface_mask.push_back(0);
    ss.target_normals.push_back({});
  }
  return obj;
}

inline Trajectory gen_chain_trajectory(const ObjectData& obj,
                                       const GenConfig& cfg, uint64_t seed,
                                       const std::string& split,
                                       const std::string& traj_id) {
  const ChainSpec& spec = obj.chain;
  const SimilarityTransform& T = obj.to_normalized;
  Rng rng(seed);
  Trajectory traj;
  traj.id = traj_id;
  traj.object_id = obj.id;
  traj.split = split;

  const Real table_z = -0.34 * spec.length + rng.uniform(-0.01, 0.01);
  const Vec3 A = {0, 0, 0};
  const int n_pts = 384;

  // canonical centerline for ground-truth correspondences
  auto canonical = chain_detail::solve_chain(
      spec, A, {spec.canonical_sep, 0, 0}, -10.0, n_pts);

  // grip random walk through the region
  std::vector<Vec3> grip(size_t(cfg.steps) + 1);
  auto& lo = spec.grip_region_lo;
  auto& hi = spec.grip_region_hi;
  grip[0] = {rng.uniform(lo.x, hi.x), rng.uniform(lo.y, hi.y),
             rng.uniform(lo.z, hi.z)};
  for (int t = 1; t <= cfg.steps; ++t) {
    Vec3 g = grip[size_t(t - 1)];
    g.x = std::clamp(g.x + rng.uniform(-cfg.action_box[0], cfg.action_box[0]),
                     lo.x, hi.x);
    g.y = std::clamp(g.y + rng.uniform(-cfg.action_box[1], cfg.action_box[1]),
                     lo.y, hi.y);
    g.z = std::clamp(g.z + rng.uniform(-2 * cfg.action_box[2],
                                       2 * cfg.action_box[2]),
                     lo.z, hi.z);
    grip[size_t(t)] = g;
  }

  Rng cloud_rng = rng.fork(11);
  Rng sample_rng = rng.fork(12);
  Rng noise_rng = rng.fork(13);

  for (int t = 0; t < cfg.steps; ++t) {
    Transition tr;
    const Vec3 B = grip[size_t(t)];
    auto solve = chain_detail::solve_chain(spec, A, B, table_z, n_pts);

    tr.pose = {B.x, B.y, B.z, 0, 0, 0};
    Vec3 dp = grip[size_t(t) + 1] - grip[size_t(t)];
    tr.action = {dp.x, dp.y, dp.z, 0, 0, 0};

    // tension at the moving grip: horizontal w*a toward A, vertical the
    // weight of the suspended run on the B side
    Real wpl = spec.weight_per_len;
    Real suspended =
        solve.curve.contact ? solve.curve.arc_b : spec.length * 0.5;
    if (!solve.curve.contact) {
      // arc between the low point and B (or the whole span if monotone)
      Real s_at_b = chain_detail::free_arc_from0(solve.curve.a, solve.curve.xm,
                                                 solve.curve.D);
      Real s_at_min = solve.curve.xm >= 0 && solve.curve.xm <= solve.curve.D
                          ? chain_detail::free_arc_from0(
                                solve.curve.a, solve.curve.xm, solve.curve.xm)
                          : 0.0;
      suspended = std::max(s_at_b - s_at_min, 0.0);
    }
    Vec3 f = -solve.plane_u * (wpl * solve.curve.a);
    f.z = -wpl * suspended;
    for (int i = 0; i < 3; ++i)
      tr.wrench[size_t(i)] =
          f[i] + noise_rng.normal(0, cfg.wrench_noise * 0.1);

    // clouds: tube sweep, registered relative to the moving grip... the
    // chain frame is the fixed grip A, matching the nominal registration
    PointCloud def;
    for (int i = 0; i < cfg.cloud_points; ++i) {
      int k = cloud_rng.uniform_int(n_pts);
      Real th = cloud_rng.uniform(0.0, 2 * std::numbers::pi);
      Vec3 n = solve.frames[size_t(k)].first * std::cos(th) +
               solve.frames[size_t(k)].second * std::sin(th);
      def.points.push_back(
          T.apply(solve.centerline[size_t(k)] + n * spec.tube_radius));
      def.normals.push_back(n);
    }
    tr.deformed_full = def;

    PointCloud partial;
    Vec3 cam = {0.2, -1.8, 0.4};
    for (size_t i = 0; i < def.size(); ++i)
      if (def.normals[i].dot(cam - def.points[i]) > 0) {
        partial.points.push_back(def.points[i]);
        partial.normals.push_back(def.normals[i]);
      }
    if (partial.size() < 8) partial = def;
    if ((split == "test" || split == "unseen") && cfg.occlusion_fraction > 0)
      partial = apply_occlusion(partial,
                                OcclusionMode::bottom(cfg.occlusion_fraction));
    tr.partial = partial;

    // supervision samples against the capsule oracle
    std::vector<Vec3> line_n(size_t(n_pts), Vec3{});
    for (int i = 0; i < n_pts; ++i)
      line_n[size_t(i)] = T.apply(solve.centerline[size_t(i)]);
    Real r_n = spec.tube_radius * T.scale;
    SdfSampleSet& ss = tr.samples;
    for (int i = 0; i < cfg.surface_samples; ++i) {
      size_t pick = size_t(sample_rng.uniform_int(int(def.size())));
      ss.queries.push_back(def.points[pick]);
      ss.target_sd.push_back(0.0);
      ss.surface_mask.push_back(1);
      ss.target_normals.push_back(def.normals[pick]);
    }
    for (int i = 0; i < cfg.query_samples; ++i) {
      Vec3 q;
      if (i % 2 == 0) {
        q = {sample_rng.uniform(-1, 1), sample_rng.uniform(-1, 1),
             sample_rng.uniform(-1, 1)};
      } else {
        size_t pick = size_t(sample_rng.uniform_int(int(def.size())));
        q = def.points[pick] + sample_rng.normal_vec3(0.05);
        q = max3(min3(q, {1, 1, 1}), {-1, -1, -1});
      }
      ss.queries.push_back(q);
      ss.target_sd.push_back(chain_detail::dist_to_polyline(line_n, q) - r_n);
      ss.surface_mask.push_back(0);
      ss.target_normals.push_back({});
    }

    // ground-truth deformation probes: arclength/angle correspondence with
    // the canonical configuration
    for (int i = 0; i < cfg.def_probe_points; ++i) {
      int k = cloud_rng.uniform_int(n_pts);
      Real th = cloud_rng.uniform(0.0, 2 * std::numbers::pi);
      Vec3 n_cur = solve.frames[size_t(k)].first * std::cos(th) +
                   solve.frames[size_t(k)].second * std::sin(th);
      Vec3 n_can = canonical.frames[size_t(k)].first * std::cos(th) +
                   canonical.frames[size_t(k)].second * std::sin(th);
      Vec3 x_cur =
          T.apply(solve.centerline[size_t(k)] + n_cur * spec.tube_radius);
      Vec3 x_can = T.apply(canonical.centerline[size_t(k)] +
                           n_can * spec.tube_radius);
      tr.def_points.push_back(x_cur);
      tr.def_delta.push_back(x_can - x_cur);
    }

    tr.plane_z = (table_z)*T.scale + T.offset.z;
    if (solve.curve.contact) {
      tr.contact_present = true;
      Vec3 td_a = A + solve.plane_u * solve.curve.xa;
      td_a.z = table_z + spec.tube_radius;
      Vec3 td_b = A + solve.plane_u * (solve.curve.xa + solve.curve.flat);
      td_b.z = table_z + spec.tube_radius;
      tr.contact.a = T.apply(td_a);
      tr.contact.b = T.apply(td_b);
      tr.depth_ratio = solve.curve.flat / spec.length;
      traj.max_depth_ratio = std::max(traj.max_depth_ratio, tr.depth_ratio);
    }
    traj.steps.push_back(std::move(tr));
  }
  return traj;
}

// ---------------------------------------------------------------------------
// Whole-dataset generation.
// ---------------------------------------------------------------------------
inline Dataset generate_dataset(const GenConfig& cfg, uint64_t seed) {
  cfg.validate();
  Dataset ds;
  ds.seed = seed;
  to_json(ds.config_echo, cfg);
  Rng master(seed);

  int total_objects = cfg.train_objects + cfg.unseen_objects;
  for (int i = 0; i < total_objects; ++i) {
    bool unseen = i >= cfg.train_objects;
    std::string id = (unseen ? "unseen_" : "object_") +
                     std::to_string(unseen ? i - cfg.train_objects : i);
    uint64_t oseed = master.fork(uint64_t(i)).next_u64();
    if (cfg.kind == "paddle") {
      PaddleSpec spec = make_paddle_variant(oseed, id);
      ds.objects.push_back(make_paddle_object(spec, cfg, oseed ^ 0xabc, unseen));
    } else {
      ChainSpec spec;
      spec.id = id;
      Rng vr(oseed);
      spec.length = vr.uniform(0.45, 0.6);
      spec.tube_radius = vr.uniform(0.007, 0.01);
      spec.weight_per_len = vr.uniform(1.5, 3.0);
      spec.canonical_sep = 0.7 * spec.length;
      ds.objects.push_back(make_chain_object(spec, cfg, oseed ^ 0xabc, unseen));
    }
  }

  for (const auto& obj : ds.objects) {
    int n_traj = obj.unseen ? cfg.unseen_trajectories
                            : cfg.train_trajectories + cfg.test_trajectories;
    for (int k = 0; k < n_traj; ++k) {
      std::string split =
          obj.unseen ? "unseen"
                     : (k < cfg.train_trajectories ? "train" : "test");
      bool deep = false;
      if (split != "train") {
        int test_index = obj.unseen ? k : k - cfg.train_trajectories;
        deep = Real(test_index) <
               cfg.deep_fraction *
                   Real(obj.unseen ? cfg.unseen_trajectories
                                   : cfg.test_trajectories);
      }
      std::string tid = obj.id + "_t" + std::to_string(k);
      uint64_t tseed =
          master.fork(0x1000 + uint64_t(std::hash<std::string>{}(tid)))
              .next_u64();
      if (obj.kind == "paddle")
        ds.trajectories.push_back(
            gen_paddle_trajectory(obj, cfg, tseed, split, tid, deep));
      else
        ds.trajectories.push_back(
            gen_chain_trajectory(obj, cfg, tseed, split, tid));
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Dataset persistence: a directory with a JSON manifest plus one binary blob
// per object and per trajectory.
// ---------------------------------------------------------------------------
namespace dataset_io_detail {

constexpr int kFormatVersion = 1;

inline void put_sample_set(blob::Writer& w, const std::string& p,
                           const SdfSampleSet& s) {
  w.add_vec3(p + ".queries", s.queries);
  w.add(p + ".target_sd", {s.target_sd.size()}, s.target_sd);
  std::vector<Real> mask(s.surface_mask.begin(), s.surface_mask.end());
  w.add(p + ".surface_mask", {mask.size()}, mask);
  w.add_vec3(p + ".target_normals", s.target_normals);
}

inline SdfSampleSet get_sample_set(const blob::Reader& r,
                                   const std::string& p) {
  SdfSampleSet s;
  s.queries = r.get_vec3(p + ".queries");
  s.target_sd = r.get(p + ".target_sd").data;
  for (Real v : r.get(p + ".surface_mask").data)
    s.surface_mask.push_back(uint8_t(v));
  s.target_normals = r.get_vec3(p + ".target_normals");
  if (s.target_sd.size() != s.queries.size() ||
      s.surface_mask.size() != s.queries.size())
    throw FormatError("sample set '" + p + "': inconsistent row counts");
  return s;
}

inline void put_cloud(blob::Writer& w, const std::string& p,
                      const PointCloud& c) {
  w.add_vec3(p + ".points", c.points);
  w.add_vec3(p + ".normals", c.normals);
}

inline PointCloud get_cloud(const blob::Reader& r, const std::string& p) {
  PointCloud c;
  c.points = r.get_vec3(p + ".points");
  c.normals = r.get_vec3(p + ".normals");
  return c;
}

inline std::vector<Real> vec6_to_vec(const Vec6& v) {
  return {v.begin(), v.end()};
}
inline Vec6 vec_to_vec6(const std::vector<Real>& v) {
  if (v.size() != 6) throw FormatError("expected a 6-vector");
  Vec6 out;
  std::copy_n(v.begin(), 6, out.begin());
  return out;
}

}  // namespace dataset_io_detail

inline void write_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  namespace dd = dataset_io_detail;
  fs::create_directories(dir / "objects");
  fs::create_directories(dir / "trajectories");

  Json manifest;
  manifest["format_version"] = dd::kFormatVersion;
  manifest["seed"] = ds.seed;
  manifest["config"] = ds.config_echo;
  manifest["config_hash"] = hash_hex(config_hash(ds.config_echo));

  for (const auto& obj : ds.objects) {
    blob::Writer w;
    dd::put_cloud(w, "nominal", obj.nominal_cloud);
    dd::put_sample_set(w, "samples", obj.nominal_samples);
    std::string file = "objects/" + obj.id + ".bin";
    write_file_atomic(dir / file, w.serialize());
    Json jo;
    jo["id"] = obj.id;
    jo["kind"] = obj.kind;
    jo["unseen"] = obj.unseen;
    jo["file"] = file;
    jo["transform"] = {{"scale", obj.to_normalized.scale},
                       {"offset",
                        {obj.to_normalized.offset.x, obj.to_normalized.offset.y,
                         obj.to_normalized.offset.z}}};
    if (obj.kind == "paddle") {
      const auto& p = obj.paddle;
      jo["paddle"] = {{"blade_len", p.blade_len},
                      {"blade_width", p.blade_width},
                      {"blade_thick", p.blade_thick},
                      {"handle_len", p.handle_len},
                      {"handle_width", p.handle_width},
                      {"handle_thick", p.handle_thick},
                      {"ei", p.ei},
                      {"tilt", p.tilt}};
    } else {
      const auto& c = obj.chain;
      jo["chain"] = {{"length", c.length},
                     {"tube_radius", c.tube_radius},
                     {"weight_per_len", c.weight_per_len},
                     {"canonical_sep", c.canonical_sep}};
    }
    manifest["objects"].push_back(jo);
  }

  for (const auto& tr : ds.trajectories) {
    blob::Writer w;
    for (size_t t = 0; t < tr.steps.size(); ++t) {
      const Transition& s = tr.steps[t];
      std::string p = "s" + std::to_string(t);
      w.add(p + ".pose", {6}, dd::vec6_to_vec(s.pose));
      w.add(p + ".wrench", {6}, dd::vec6_to_vec(s.wrench));
      w.add(p + ".action", {6}, dd::vec6_to_vec(s.action));
      dd::put_cloud(w, p + ".partial", s.partial);
      dd::put_cloud(w, p + ".deformed", s.deformed_full);
      dd::put_sample_set(w, p + ".samples", s.samples);
      w.add_vec3(p + ".def_points", s.def_points);
      w.add_vec3(p + ".def_delta", s.def_delta);
      w.add_scalar(p + ".contact_present", s.contact_present ? 1.0 : 0.0);
      w.add_vec3(p + ".contact",
                 std::array<Vec3, 2>{s.contact.a, s.contact.b});
      w.add_scalar(p + ".plane_z", s.plane_z);
      w.add_scalar(p + ".depth_ratio", s.depth_ratio);
    }
    std::string file = "trajectories/" + tr.id + ".bin";
    write_file_atomic(dir / file, w.serialize());
    manifest["trajectories"].push_back({{"id", tr.id},
                                        {"object_id", tr.object_id},
                                        {"split", tr.split},
                                        {"steps", tr.steps.size()},
                                        {"max_depth_ratio", tr.max_depth_ratio},
                                        {"file", file}});
  }
  write_file_atomic(dir / "manifest.json", manifest.dump(2));
}

inline Dataset read_dataset(const std::filesystem::path& dir) {
  namespace dd = dataset_io_detail;
  Json manifest = read_json_file(dir / "manifest.json");
  int version = manifest.value("format_version", -1);
  if (version != dd::kFormatVersion)
    throw FormatError("dataset " + dir.string() + ": format version " +
                      std::to_string(version) + " unsupported");
  Dataset ds;
  ds.seed = manifest.value("seed", uint64_t(0));
  ds.config_echo = manifest.value("config", Json::object());

  for (const auto& jo : manifest.value("objects", Json::array())) {
    ObjectData obj;
    obj.id = jo.at("id").get<std::string>();
    obj.kind = jo.at("kind").get<std::string>();
    obj.unseen = jo.value("unseen", false);
    obj.to_normalized.scale = jo.at("transform").at("scale").get<Real>();
    auto off = jo.at("transform").at("offset");
    obj.to_normalized.offset = {off.at(0).get<Real>(), off.at(1).get<Real>(),
                                off.at(2).get<Real>()};
    if (obj.kind == "paddle") {
      const auto& p = jo.at("paddle");
      obj.paddle.id = obj.id;
      obj.paddle.blade_len = p.at("blade_len").get<Real>();
      obj.paddle.blade_width = p.at("blade_width").get<Real>();
      obj.paddle.blade_thick = p.at("blade_thick").get<Real>();
      obj.paddle.handle_len = p.at("handle_len").get<Real>();
      obj.paddle.handle_width = p.at("handle_width").get<Real>();
      obj.paddle.handle_thick = p.at("handle_thick").get<Real>();
      obj.paddle.ei = p.at("ei").get<Real>();
      obj.paddle.tilt = p.at("tilt").get<Real>();
    } else if (obj.kind == "chain") {
      const auto& c = jo.at("chain");
      obj.chain.id = obj.id;
      obj.chain.length = c.at("length").get<Real>();
      obj.chain.tube_radius = c.at("tube_radius").get<Real>();
      obj.chain.weight_per_len = c.at("weight_per_len").get<Real>();
      obj.chain.canonical_sep = c.at("canonical_sep").get<Real>();
    } else {
      throw FormatError("dataset object '" + obj.id + "': unknown kind");
    }
    blob::Reader r(read_file(dir / jo.at("file").get<std::string>()));
    obj.nominal_cloud = dd::get_cloud(r, "nominal");
    obj.nominal_samples = dd::get_sample_set(r, "samples");
    ds.objects.push_back(std::move(obj));
  }

  for (const auto& jt : manifest.value("trajectories", Json::array())) {
    Trajectory tr;
    tr.id = jt.at("id").get<std::string>();
    tr.object_id = jt.at("object_id").get<std::string>();
    tr.split = jt.at("split").get<std::string>();
    tr.max_depth_ratio = jt.value("max_depth_ratio", 0.0);
    size_t steps = jt.at("steps").get<size_t>();
    blob::Reader r(read_file(dir / jt.at("file").get<std::string>()));
    for (size_t t = 0; t < steps; ++t) {
      Transition s;
      std::string p = "s" + std::to_string(t);
      s.pose = dd::vec_to_vec6(r.get(p + ".pose").data);
      s.wrench = dd::vec_to_vec6(r.get(p + ".wrench").data);
      s.action = dd::vec_to_vec6(r.get(p + ".action").data);
      s.partial = dd::get_cloud(r, p + ".partial");
      s.deformed_full = dd::get_cloud(r, p + ".deformed");
      s.samples = dd::get_sample_set(r, p + ".samples");
      s.def_points = r.get_vec3(p + ".def_points");
      s.def_delta = r.get_vec3(p + ".def_delta");
      s.contact_present = r.get_scalar(p + ".contact_present") != 0.0;
      auto cl = r.get_vec3(p + ".contact");
      s.contact.a = cl.at(0);
      s.contact.b = cl.at(1);
      s.plane_z = r.get_scalar(p + ".plane_z");
      s.depth_ratio = r.get_scalar(p + ".depth_ratio");
      tr.steps.push_back(std::move(s));
    }
    ds.trajectories.push_back(std::move(tr));
  }
  return ds;
}

}  // namespace defo
