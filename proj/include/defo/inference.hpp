#pragma once

#include "defo/contact.hpp"
#include "defo/losses.hpp"
#include "defo/reconstruct.hpp"
#include "defo/trainer.hpp"

namespace defo {

// ---------------------------------------------------------------------------
// Particle-filter state estimation over contact embeddings.
// ---------------------------------------------------------------------------
struct FilterConfig {
  int particles = 40;
  Real gamma = 0.7;
  int refine_epochs = 10;
  Real refine_lr = 1e-3;
  Real beta = 0.25;            // exploration fraction of each resampling
  Real process_noise = 0.01;   // propagation noise
  Real init_noise = 0.01;      // initial particle draw
  bool noise_is_variance = false;  // interpret the noises as variances
  int refine_queries = 48;
  int refine_cloud = 96;
  int recon_base = 20;
  int recon_refine = 1;
  uint64_t seed = 0;

  void validate() const {
    if (particles < 1) throw ConfigError("FilterConfig: particles >= 1");
    if (beta < 0 || beta >= 1) throw ConfigError("FilterConfig: beta in [0,1)");
    if (gamma <= 0) throw ConfigError("FilterConfig: gamma > 0");
    if (refine_epochs < 0) throw ConfigError("FilterConfig: refine_epochs >= 0");
  }

  Real init_sigma() const {
    return noise_is_variance ? std::sqrt(init_noise) : init_noise;
  }
  Real process_sigma() const {
    return noise_is_variance ? std::sqrt(process_noise) : process_noise;
  }
};

inline void to_json(Json& j, const FilterConfig& c) {
  j = Json{{"particles", c.particles},
           {"gamma", c.gamma},
           {"refine_epochs", c.refine_epochs},
           {"refine_lr", c.refine_lr},
           {"beta", c.beta},
           {"process_noise", c.process_noise},
           {"init_noise", c.init_noise},
           {"noise_is_variance", c.noise_is_variance},
           {"refine_queries", c.refine_queries},
           {"refine_cloud", c.refine_cloud},
           {"recon_base", c.recon_base},
           {"recon_refine", c.recon_refine}};
}

inline void from_json(const Json& j, FilterConfig& c) {
  FilterConfig d;
  c.particles = j.value("particles", d.particles);
  c.gamma = j.value("gamma", d.gamma);
  c.refine_epochs = j.value("refine_epochs", d.refine_epochs);
  c.refine_lr = j.value("refine_lr", d.refine_lr);
  c.beta = j.value("beta", d.beta);
  c.process_noise = j.value("process_noise", d.process_noise);
  c.init_noise = j.value("init_noise", d.init_noise);
  c.noise_is_variance = j.value("noise_is_variance", d.noise_is_variance);
  c.refine_queries = j.value("refine_queries", d.refine_queries);
  c.refine_cloud = j.value("refine_cloud", d.refine_cloud);
  c.recon_base = j.value("recon_base", d.recon_base);
  c.recon_refine = j.value("recon_refine", d.recon_refine);
}

struct ParticleSet {
  std::vector<std::vector<Real>> c;  // n contact embeddings
  std::vector<Real> weights;
  std::vector<Vec6> f_pred;          // per-particle wrench prediction
  std::vector<std::vector<Real>> c_pred;  // propagated embeddings

  size_t size() const { return c.size(); }
};

inline ParticleSet init_particles(int n, int l_c, Real sigma, Rng rng) {
  ParticleSet p;
  p.c.assign(size_t(n), std::vector<Real>(size_t(l_c), 0.0));
  p.weights.assign(size_t(n), 1.0);
  p.f_pred.assign(size_t(n), vec6_zero());
  for (int i = 0; i < n; ++i) {
    Rng prng = rng.fork(uint64_t(i));
    prng.fill_normal(p.c[size_t(i)], 0.0, sigma);
  }
  return p;
}

// ---------------------------------------------------------------------------
// Refine: per-particle gradient descent on the visible-cloud geometry loss
// (sd regression at observed points, correspondence to the nominal cloud,
// minimum correction). Model weights stay fixed; only the embedding moves.
// ---------------------------------------------------------------------------
struct RefineContext {
  const Model* model = nullptr;
  const DecodedField* obj_field = nullptr;
  std::span<const Real> alpha;
  const PointCloud* nominal = nullptr;
  const PointGrid* nominal_grid = nullptr;
};

inline void refine_particles(ParticleSet& particles, const PointCloud& observed,
                             const Vec6& wrench, const Vec6& pose,
                             const RefineContext& ctx, const FilterConfig& cfg,
                             const LossWeights& weights, Rng rng) {
  if (cfg.refine_epochs == 0) return;
  const Model& m = *ctx.model;
  if (m.cfg.no_contact_embedding || m.cfg.rigid) return;  // nothing to refine

  const MlpSpec fspec = m.cfg.force_spec();
  const HyperSpec hd = make_hyper_d(m.cfg);
  Vec6 f_std = m.stats.wrench.standardize(wrench);
  Vec6 p_std = m.stats.pose.standardize(pose);

  const bool have_obs = !observed.empty();
  // observed points double as zero-target regression samples
  SdfSampleSet obs_samples;
  std::vector<int> obs_rows;
  if (have_obs) {
    Rng orng = rng.fork(1);
    std::vector<int> all(observed.size());
    for (size_t i = 0; i < all.size(); ++i) all[i] = int(i);
    obs_rows = train_detail::draw(all, cfg.refine_cloud, orng);
    for (int r : obs_rows) {
      obs_samples.queries.push_back(observed.points[size_t(r)]);
      obs_samples.target_sd.push_back(0.0);
      obs_samples.surface_mask.push_back(1);
      obs_samples.target_normals.push_back({});  // no trusted normals
    }
  }
  std::vector<Vec3> field_points;
  {
    Rng frng = rng.fork(2);
    for (int i = 0; i < cfg.refine_queries; ++i)
      field_points.push_back({frng.uniform(-1, 1), frng.uniform(-1, 1),
                              frng.uniform(-1, 1)});
  }
  PointCloud obs_subset;
  for (int r : obs_rows) obs_subset.points.push_back(observed.points[size_t(r)]);

  GeoInputs gi;
  gi.field_points = field_points;
  if (have_obs) {
    gi.samples = &obs_samples;
    gi.observed = &obs_subset;
    gi.nominal_gt = ctx.nominal;
    gi.nominal_grid = ctx.nominal_grid;
  }

  Tape ftape, dtape;
  for (size_t i = 0; i < particles.size(); ++i) {
    std::vector<Real>& c = particles.c[i];
    AdamState adam = AdamState::make(c.size(), cfg.refine_lr);
    for (int e = 0; e < cfg.refine_epochs; ++e) {
      // z = F(f, c, p)
      ftape.reset();
      int fn = ftape.leaf(f_std, false);
      int cn = ftape.leaf(c, true);
      int pn = ftape.leaf(p_std, false);
      int input = ftape.concat(ftape.concat(fn, cn), pn);
      LayerNodes fwb = mlp_param_leaves(ftape, fspec, m.force_net, false);
      int zn = mlp_apply(ftape, fspec, fwb, input);
      auto zv = ftape.val(zn);

      // decode D(alpha, z)
      dtape.reset();
      std::vector<Real> cond(ctx.alpha.begin(), ctx.alpha.end());
      cond.insert(cond.end(), zv.begin(), zv.end());
      int condn = dtape.leaf(cond, true);
      DecodeTape dec = tape_decode(dtape, hd, m.hyper_d, condn, false);
      auto wd = dtape.val(dec.weights);

      std::vector<Real> wd_grad(wd.size(), 0.0);
      LossReport rep = loss_geo_terms(m, *ctx.obj_field, wd, gi, weights,
                                      wd_grad);
      if (!std::isfinite(rep.total)) {
        // reset the particle to a fresh draw
        Rng reset = rng.fork(0x8000 + uint64_t(i));
        reset.fill_normal(c, 0.0, cfg.init_sigma());
        break;
      }
      dtape.backward(dec.weights, wd_grad);
      auto cg = dtape.grad(condn);
      std::vector<Real> zbar(zv.size());
      for (size_t k = 0; k < zbar.size(); ++k)
        zbar[k] = cg[size_t(m.cfg.l_alpha) + k];
      ftape.backward(zn, zbar);
      auto cbar = ftape.grad(cn);
      std::vector<Real> cgrad(cbar.begin(), cbar.end());
      adam_step(adam, c, cgrad, "particle");
    }
  }
}

// w_i = exp(-gamma * ||f_pred_i - f||_2), always in (0, 1].
inline std::vector<Real> weight_particles(const ParticleSet& particles,
                                          const Vec6& measured, Real gamma) {
  std::vector<Real> w(particles.size());
  for (size_t i = 0; i < particles.size(); ++i) {
    Real err = 0;
    for (int k = 0; k < 6; ++k) {
      Real d = particles.f_pred[i][size_t(k)] - measured[size_t(k)];
      err += d * d;
    }
    w[i] = std::exp(-gamma * std::sqrt(err));
  }
  return w;
}

// Alg-2 style resampling: round(beta*n) fresh exploration draws plus
// weight-proportional exploitation draws with replacement. All-zero weights
// fall back to full exploration.
struct ResampleOutcome {
  ParticleSet set;
  bool exploration_fallback = false;
};

inline ResampleOutcome resample(const ParticleSet& particles,
                                std::span<const Real> weights, Real beta,
                                Real fresh_sigma, Rng rng) {
  size_t n = particles.size();
  if (weights.size() != n) throw ConfigError("resample: weight count mismatch");
  ResampleOutcome out;
  out.set.weights.assign(n, 1.0);
  out.set.f_pred.assign(n, vec6_zero());
  int l_c = int(particles.c.empty() ? 0 : particles.c[0].size());

  Real total = 0;
  for (Real w : weights) total += w;
  int k_explore = int(std::lround(beta * Real(n)));
  if (total <= 0) {
    out.exploration_fallback = true;
    k_explore = int(n);
  }

  std::vector<Real> cum(weights.size());
  Real acc = 0;
  for (size_t i = 0; i < weights.size(); ++i) {
    acc += weights[i];
    cum[i] = acc;
  }

  for (size_t i = 0; i < n; ++i) {
    if (int(i) < k_explore) {
      std::vector<Real> fresh(size_t(l_c), 0.0);
      Rng prng = rng.fork(0x100 + uint64_t(i));
      prng.fill_normal(fresh, 0.0, fresh_sigma);
      out.set.c.push_back(std::move(fresh));
    } else {
      Real u = rng.fork(0x9000 + uint64_t(i)).uniform() * total;
      size_t pick =
          size_t(std::lower_bound(cum.begin(), cum.end(), u) - cum.begin());
      if (pick >= n) pick = n - 1;
      out.set.c.push_back(particles.c[pick]);
    }
  }
  return out;
}

// Force module then action module, with propagation noise on the embedding.
inline ParticleSet propagate(const ParticleSet& particles, const Vec6& wrench,
                             const Vec6& pose, const Vec6& action,
                             std::span<const Real> alpha, const Model& m,
                             Real noise_sigma, Rng rng) {
  ParticleSet out;
  size_t n = particles.size();
  out.weights.assign(n, 1.0);
  for (size_t i = 0; i < n; ++i) {
    auto z = force_encode(m, wrench, particles.c[i], pose);
    auto pred = action_predict(m, alpha, z, action);
    std::vector<Real> c_next = pred.contact;
    if (noise_sigma > 0 && !c_next.empty()) {
      Rng prng = rng.fork(0x200 + uint64_t(i));
      for (Real& v : c_next) v += prng.normal(0, noise_sigma);
    }
    // the particle's embedding for the next step is the propagated one
    out.c.push_back(c_next.empty() ? particles.c[i] : c_next);
    out.c_pred.push_back(pred.contact);
    out.f_pred.push_back(pred.wrench);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Full filter run over one trajectory.
// ---------------------------------------------------------------------------
struct FilterStepTrace {
  int step = 0;
  Real cd_est = std::numeric_limits<Real>::quiet_NaN();
  Real cd_pred = std::numeric_limits<Real>::quiet_NaN();
  Real force_err = std::numeric_limits<Real>::quiet_NaN();
  Real torque_err = std::numeric_limits<Real>::quiet_NaN();
  Real weight_max = 0;
  bool exploration_fallback = false;
  std::vector<Real> estimate_c, mean_c;
  Real contact_est_err = std::numeric_limits<Real>::quiet_NaN();
  Real contact_pred_err = std::numeric_limits<Real>::quiet_NaN();
  // 0 = matched, 1 = missed, 2 = spurious, 3 = both absent, -1 = not checked
  int contact_est_status = -1;
  int contact_pred_status = -1;
};

struct FilterTrace {
  std::vector<FilterStepTrace> steps;
  Json meta;

  static std::string csv_header() {
    return "step,cd_est,cd_pred,force_err,torque_err,weight_max,"
           "exploration_fallback,contact_est_err,contact_pred_err,"
           "contact_est_status,contact_pred_status";
  }
  std::string csv() const {
    std::ostringstream os;
    os.precision(10);
    os << csv_header() << "\n";
    for (const auto& s : steps) {
      os << s.step << ',' << s.cd_est << ',' << s.cd_pred << ',' << s.force_err
         << ',' << s.torque_err << ',' << s.weight_max << ','
         << (s.exploration_fallback ? 1 : 0) << ',' << s.contact_est_err << ','
         << s.contact_pred_err << ',' << s.contact_est_status << ','
         << s.contact_pred_status << "\n";
    }
    return os.str();
  }
};

struct FilterOptions {
  bool with_contact = false;
  ContactParams contact;
};

inline FilterTrace run_filter(const Model& m, const ObjectData& obj,
                              const Trajectory& traj, const FilterConfig& cfg,
                              const LossWeights& weights,
                              const FilterOptions& opts = {}) {
  cfg.validate();
  const int oi = m.find_object(traj.object_id);
  if (obj.id != traj.object_id)
    throw ConfigError("run_filter: trajectory/object mismatch");
  std::span<const Real> alpha = m.objects[size_t(oi)].code;
  DecodedField obj_field = m.decode_object(alpha);
  PointGrid nominal_grid(obj.nominal_cloud.points);

  RefineContext rctx;
  rctx.model = &m;
  rctx.obj_field = &obj_field;
  rctx.alpha = alpha;
  rctx.nominal = &obj.nominal_cloud;
  rctx.nominal_grid = &nominal_grid;

  FilterTrace trace;
  if (traj.steps.empty()) return trace;

  Rng master(cfg.seed);
  ParticleSet particles = init_particles(cfg.particles, m.cfg.l_c,
                                         cfg.init_sigma(), master.fork(0));

  // bootstrap wrench predictions: one zero-action propagation
  {
    const Transition& st0 = traj.steps[0];
    ParticleSet boot = propagate(particles, st0.wrench, st0.pose, vec6_zero(),
                                 alpha, m, 0.0, master.fork(1));
    particles.f_pred = boot.f_pred;
  }

  // open-loop prediction lineage (for the prediction metrics)
  std::vector<Real> pred_c;
  Vec6 pred_f = vec6_zero();
  bool have_pred = false;

  auto reconstruct_with = [&](std::span<const Real> z) {
    return reconstruct_surface(m, alpha, z, cfg.recon_base, cfg.recon_refine);
  };
  auto eval_cd = [&](const PointCloud& recon, const PointCloud& gt) {
    return chamfer(recon.points, gt.points);
  };
  auto contact_for = [&](std::span<const Real> z, const Transition& st,
                         Real* err_out, int* status_out) {
    DecodedField def;
    bool rigid = m.cfg.rigid || z.empty();
    if (!rigid) def = m.decode_deformation(alpha, z);
    ComposedField field(obj_field, def, rigid);
    BatchSdf batch = [&](std::span<const Vec3> pts) {
      std::vector<Real> out(pts.size());
      for (size_t i = 0; i < pts.size(); ++i) out[i] = field.value(pts[i]);
      return out;
    };
    auto det = detect_contact_line(batch, {0, 0, 1}, st.plane_z, opts.contact);
    if (st.contact_present && det) {
      *err_out = contact_error(*det, st.contact);
      *status_out = 0;
    } else if (st.contact_present && !det) {
      *status_out = 1;
    } else if (!st.contact_present && det) {
      *status_out = 2;
    } else {
      *status_out = 3;
    }
  };

  for (size_t t = 0; t < traj.steps.size(); ++t) {
    const Transition& st = traj.steps[t];
    FilterStepTrace row;
    row.step = int(t);
    Rng step_rng = master.fork(0x5000 + uint64_t(t));

    // prediction metrics before any measurement update
    if (have_pred) {
      auto z_pred = force_encode(m, pred_f, pred_c, st.pose);
      PointCloud recon = reconstruct_with(z_pred);
      row.cd_pred = eval_cd(recon, st.deformed_full);
      Real fe = 0, te = 0;
      for (int k = 0; k < 3; ++k) {
        Real df = pred_f[size_t(k)] - st.wrench[size_t(k)];
        Real dt = pred_f[size_t(k) + 3] - st.wrench[size_t(k) + 3];
        fe += df * df;
        te += dt * dt;
      }
      row.force_err = std::sqrt(fe);
      row.torque_err = std::sqrt(te);
      if (opts.with_contact)
        contact_for(z_pred, st, &row.contact_pred_err,
                    &row.contact_pred_status);
    }

    // refine -> weight -> estimate
    refine_particles(particles, st.partial, st.wrench, st.pose, rctx, cfg,
                     weights, step_rng.fork(1));
    particles.weights = weight_particles(particles, st.wrench, cfg.gamma);
    size_t best = 0;
    for (size_t i = 1; i < particles.size(); ++i)
      if (particles.weights[i] > particles.weights[best]) best = i;
    row.weight_max = particles.weights[best];
    row.estimate_c = particles.c[best];
    row.mean_c.assign(size_t(m.cfg.l_c), 0.0);
    if (!m.cfg.no_contact_embedding) {
      Real wsum = 0;
      for (Real w : particles.weights) wsum += w;
      if (wsum > 0)
        for (size_t i = 0; i < particles.size(); ++i)
          for (size_t k = 0; k < row.mean_c.size(); ++k)
            row.mean_c[k] += particles.weights[i] * particles.c[i][k] / wsum;
    }

    auto z_est = force_encode(m, st.wrench, row.estimate_c, st.pose);
    {
      PointCloud recon = reconstruct_with(z_est);
      row.cd_est = eval_cd(recon, st.deformed_full);
      if (opts.with_contact)
        contact_for(z_est, st, &row.contact_est_err, &row.contact_est_status);
    }

    // resample -> propagate
    auto rs = resample(particles, particles.weights, cfg.beta,
                       cfg.init_sigma(), step_rng.fork(2));
    row.exploration_fallback = rs.exploration_fallback;
    ParticleSet prop = propagate(rs.set, st.wrench, st.pose, st.action, alpha,
                                 m, cfg.process_sigma(), step_rng.fork(3));
    particles = std::move(prop);

    // open-loop lineage from the chosen estimate
    {
      auto pred = action_predict(m, alpha, z_est, st.action);
      pred_c = pred.contact;
      pred_f = pred.wrench;
      have_pred = true;
    }
    trace.steps.push_back(std::move(row));
  }
  return trace;
}

}  // namespace defo
