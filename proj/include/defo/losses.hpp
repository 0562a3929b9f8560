#pragma once

#include "defo/model.hpp"

namespace defo {

// ---------------------------------------------------------------------------
// Training objective weights. Defaults follow the published parameter table;
// delta and the horizon are our choices.
// ---------------------------------------------------------------------------
struct LossWeights {
  Real lambda = 5e1;    // pretrain normal alignment, inside L_sdf
  Real lambda1 = 1e1;   // latent code regularization
  Real lambda2 = 1e1;   // hyper output regularization
  Real lambda3 = 1e4;   // wrench prediction
  Real lambda4 = 1.0;   // regularization group
  Real lambda5 = 1e2;   // minimum correction
  Real lambda6 = 1e5;   // correspondence chamfer
  Real lambda7 = 5e1;   // normal alignment (deformed)
  Real lambda8 = 3e6;   // composed signed-distance regression
  Real lambda9 = 1e1;   // ||z||
  Real lambda10 = 1e1;  // ||c||
  Real lambda11 = 1e1;  // ||decoded D weights||
  Real delta = 0.1;     // sd clamp
  int horizon = 3;      // dynamics window length w

  void validate() const {
    for (Real v : {lambda, lambda1, lambda2, lambda3, lambda4, lambda5,
                   lambda6, lambda7, lambda8, lambda9, lambda10, lambda11})
      if (v < 0) throw ConfigError("LossWeights: negative weight");
    if (delta <= 0) throw ConfigError("LossWeights: delta must be positive");
    if (horizon < 1) throw ConfigError("LossWeights: horizon must be >= 1");
  }
};

inline Real clamp_sd(Real s, Real delta) {
  if (delta <= 0) throw ConfigError("clamp_sd: delta must be positive");
  return s < -delta ? -delta : (s > delta ? delta : s);
}

// The published weight table pairs with sum reductions over ~22k query and
// ~2k surface points per object. This library reduces per-point terms by
// mean so batch size drops out, which rescales the balance; dividing the
// singleton terms by the reference query count and the surface terms by the
// surface/query ratio restores the table's intended proportions.
inline LossWeights count_normalized(const LossWeights& table,
                                    Real ref_queries = 22000.0,
                                    Real ref_surface = 2000.0) {
  LossWeights w = table;
  Real surf_ratio = ref_surface / ref_queries;
  w.lambda = table.lambda * surf_ratio;    // pretrain normal alignment
  w.lambda7 = table.lambda7 * surf_ratio;  // deformed normal alignment
  w.lambda1 = table.lambda1 / ref_queries;
  w.lambda2 = table.lambda2 / ref_queries;
  w.lambda3 = table.lambda3 / ref_queries;
  w.lambda4 = table.lambda4 / ref_queries;  // scales the lambda9..11 group
  w.lambda6 = table.lambda6 / ref_queries;
  return w;
}

// Unweighted term values; `total` is the weighted combination for the phase
// that produced the report.
struct LossReport {
  Real sdf = 0;             // mean clamped |s - s*| (pretrain, summed over objects)
  Real latent = 0;          // sum ||alpha||
  Real hyper = 0;           // sum ||decoded O weights||
  Real min_correction = 0;  // mean ||D(x)||
  Real correspondence = 0;  // CD(P + D(P), nominal)
  Real normal = 0;          // mean (1 - <grad_hat, n*>)
  Real regression = 0;      // mean clamped |O(x + D(x)) - s*|
  Real pred = 0;            // sum ||f - f_hat||
  Real reg = 0;             // sum lam9||z|| + lam10||c|| + lam11||W_D||
  Real total = 0;

  LossReport& operator+=(const LossReport& o) {
    sdf += o.sdf;
    latent += o.latent;
    hyper += o.hyper;
    min_correction += o.min_correction;
    correspondence += o.correspondence;
    normal += o.normal;
    regression += o.regression;
    pred += o.pred;
    reg += o.reg;
    total += o.total;
    return *this;
  }
};

constexpr Real kGradNormEps = 1e-6;  // smooth guard for grad normalization

namespace detail {

inline std::span<const int> all_rows_or(std::span<const int> rows, size_t n,
                                        std::vector<int>& scratch) {
  if (!rows.empty()) return rows;
  scratch.resize(n);
  for (size_t i = 0; i < n; ++i) scratch[i] = int(i);
  return scratch;
}

inline Real vec_norm(std::span<const Real> v) {
  Real s = 0;
  for (Real x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Nominal pretraining loss: clamped sd regression over all rows plus normal
// alignment on surface rows, with code and hyper-output regularization.
// Reductions are means within each sample set, summed over objects.
// ---------------------------------------------------------------------------
struct NominalBatch {
  std::span<const Real> alpha;
  const SdfSampleSet* samples = nullptr;
  std::span<const int> rows;  // subset; empty means all rows
};

struct NominalGrads {
  std::vector<Real> hyper_o;             // layout of model.hyper_o
  std::vector<std::vector<Real>> alpha;  // parallel to the batch
};

inline LossReport loss_nominal(const Model& m,
                               std::span<const NominalBatch> batch,
                               const LossWeights& w,
                               NominalGrads* grads = nullptr) {
  w.validate();
  LossReport rep;
  HyperSpec hs = make_hyper_o(m.cfg);
  if (grads) {
    grads->hyper_o.assign(m.hyper_o.size(), 0.0);
    grads->alpha.assign(batch.size(), {});
  }

  Tape dec, ts;
  std::vector<Real> wbar;
  std::vector<int> scratch;
  const MlpSpec hypo = m.cfg.hypo_o_spec();
  for (size_t oi = 0; oi < batch.size(); ++oi) {
    const NominalBatch& ob = batch[oi];
    if (!ob.samples || ob.samples->size() == 0)
      throw DataError("loss_nominal: object without samples");
    std::span<const int> rows =
        detail::all_rows_or(ob.rows, ob.samples->size(), scratch);
    int n_all = int(rows.size());
    int n_surf = 0;
    for (int r : rows) n_surf += ob.samples->surface_mask[size_t(r)];
    for (int r : rows)
      if (ob.samples->surface_mask[size_t(r)] &&
          ob.samples->target_normals[size_t(r)].norm() == 0)
        throw DataError("loss_nominal: surface row without a normal");

    dec.reset();
    int cond = dec.leaf(ob.alpha, grads != nullptr);
    DecodeTape dt = tape_decode(dec, hs, m.hyper_o, cond, grads != nullptr);
    auto W = dec.val(dt.weights);
    wbar.assign(W.size(), 0.0);

    for (int r : rows) {
      const Vec3& x = ob.samples->queries[size_t(r)];
      Real target = ob.samples->target_sd[size_t(r)];
      bool surf = ob.samples->surface_mask[size_t(r)] != 0;

      ts.reset();
      int wleaf = ts.leaf_view(W.data(), W.size(), grads != nullptr);
      LayerNodes wb = mlp_sliced_leaves(ts, hypo, wleaf);
      std::array<Real, 3> xv = {x.x, x.y, x.z};
      int xn = ts.leaf(xv, false);

      int loss_node;
      if (surf) {
        std::array<Real, 3> e0 = {1, 0, 0}, e1 = {0, 1, 0}, e2 = {0, 0, 1};
        std::array<int, 3> dirs = {ts.constant(e0), ts.constant(e1),
                                   ts.constant(e2)};
        auto out = mlp_apply_tangent(ts, hypo, wb, xn, dirs);
        int g = ts.concat(ts.concat(out.tangents[0], out.tangents[1]),
                          out.tangents[2]);
        int ghat = ts.normalize_smooth(g, kGradNormEps);
        int nstar = ts.constant3(ob.samples->target_normals[size_t(r)]);
        int nterm = ts.sub(ts.scalar_const(1.0), ts.dot(ghat, nstar));
        rep.normal += ts.val0(nterm) / Real(n_surf);

        int cs = ts.clamp(out.value, -w.delta, w.delta);
        int sdterm =
            ts.abs(ts.sub(cs, ts.scalar_const(clamp_sd(target, w.delta))));
        rep.sdf += ts.val0(sdterm) / Real(n_all);

        loss_node = ts.add(ts.scale(sdterm, 1.0 / Real(n_all)),
                           ts.scale(nterm, w.lambda / Real(n_surf)));
      } else {
        int s_node = mlp_apply(ts, hypo, wb, xn);
        int cs = ts.clamp(s_node, -w.delta, w.delta);
        int sdterm =
            ts.abs(ts.sub(cs, ts.scalar_const(clamp_sd(target, w.delta))));
        rep.sdf += ts.val0(sdterm) / Real(n_all);
        loss_node = ts.scale(sdterm, 1.0 / Real(n_all));
      }
      if (grads) {
        ts.backward_scalar(loss_node, 1.0);
        auto g = ts.grad(wleaf);
        for (size_t i = 0; i < wbar.size(); ++i) wbar[i] += g[i];
      }
    }

    Real wnorm = detail::vec_norm(W);
    rep.hyper += wnorm;
    if (grads && wnorm > 0)
      for (size_t i = 0; i < wbar.size(); ++i)
        wbar[i] += w.lambda2 * W[i] / wnorm;

    if (grads) {
      dec.backward(dt.weights, wbar);
      collect_param_grads(dec, dt.param_leaves, m.hyper_o, grads->hyper_o);
      auto ag = dec.grad(cond);
      grads->alpha[oi].assign(ag.begin(), ag.end());
    }

    Real anorm = detail::vec_norm(ob.alpha);
    rep.latent += anorm;
    if (grads && anorm > 0)
      for (size_t i = 0; i < ob.alpha.size(); ++i)
        grads->alpha[oi][i] += w.lambda1 * ob.alpha[i] / anorm;
  }

  rep.total = rep.sdf + w.lambda * rep.normal + w.lambda1 * rep.latent +
              w.lambda2 * rep.hyper;
  return rep;
}

// ---------------------------------------------------------------------------
// Geometry loss for one deformed configuration (Deformation Module inputs).
// Term semantics:
//   min_correction : mean ||D(x)|| over field_points
//   correspondence : CD(P + D(P), nominal_gt) over observed points
//   normal         : mean (1 - <grad O(x'), n*>) over surface sample rows
//   regression     : mean |clamp(O(x + D(x))) - clamp(s*)| over sample rows
// Gradients flow into the decoded D weight vector only; O stays frozen here.
// With no observation the correspondence term is skipped (refine contract),
// and rows without normals skip the normal term.
// ---------------------------------------------------------------------------
struct GeoInputs {
  std::span<const Vec3> field_points;
  const SdfSampleSet* samples = nullptr;
  std::span<const int> sample_rows;
  const PointCloud* observed = nullptr;
  std::span<const int> observed_rows;
  const PointCloud* nominal_gt = nullptr;
  const PointGrid* nominal_grid = nullptr;  // optional prebuilt NN structure
};

inline LossReport loss_geo_terms(const Model& m, const DecodedField& obj_field,
                                 std::span<const Real> w_d,
                                 const GeoInputs& in, const LossWeights& w,
                                 std::span<Real> w_d_grad) {
  LossReport rep;
  const bool rigid = m.cfg.rigid;
  const bool want_grads = !w_d_grad.empty();
  if (want_grads && rigid)
    throw ConfigError("loss_geo_terms: rigid model has no deformation grads");
  const MlpSpec dspec = m.cfg.hypo_d_spec();
  const MlpSpec ospec = obj_field.spec;

  Tape ts;
  MlpWork work;
  std::vector<int> scratch;

  // ---- min correction + regression + normal over sample rows -------------
  auto d_eval_plain = [&](const Vec3& x) -> Vec3 {
    if (rigid) return {};
    std::vector<Real> out;
    std::array<Real, 3> xv = {x.x, x.y, x.z};
    mlp_eval_flat(dspec, w_d, xv, out, work);
    return {out[0], out[1], out[2]};
  };

  if (!in.field_points.empty()) {
    int n = int(in.field_points.size());
    for (const Vec3& x : in.field_points) {
      if (rigid) continue;  // ||D|| = 0
      ts.reset();
      int wleaf = ts.leaf_view(w_d.data(), w_d.size(), want_grads);
      LayerNodes wb = mlp_sliced_leaves(ts, dspec, wleaf);
      std::array<Real, 3> xv = {x.x, x.y, x.z};
      int dx = mlp_apply(ts, dspec, wb, ts.leaf(xv, false));
      int nrm = ts.norm2(dx);
      rep.min_correction += ts.val0(nrm) / Real(n);
      if (want_grads) {
        ts.backward_scalar(nrm, w.lambda5 / Real(n));
        auto g = ts.grad(wleaf);
        for (size_t i = 0; i < w_d_grad.size(); ++i) w_d_grad[i] += g[i];
      }
    }
  }

  if (in.samples && in.samples->size() > 0) {
    std::span<const int> rows =
        detail::all_rows_or(in.sample_rows, in.samples->size(), scratch);
    int n_all = int(rows.size());
    int n_surf = 0;
    for (int r : rows)
      if (in.samples->surface_mask[size_t(r)] &&
          in.samples->target_normals[size_t(r)].norm() > 0)
        ++n_surf;

    for (int r : rows) {
      const Vec3& x = in.samples->queries[size_t(r)];
      Real target = in.samples->target_sd[size_t(r)];
      bool surf = in.samples->surface_mask[size_t(r)] &&
                  in.samples->target_normals[size_t(r)].norm() > 0;

      if (rigid) {
        // constants w.r.t. trainables: report values only
        auto [s, g] = field_eval_grad(obj_field, x, work);
        rep.regression +=
            std::fabs(clamp_sd(s, w.delta) - clamp_sd(target, w.delta)) /
            Real(n_all);
        if (surf) {
          Real gn = std::sqrt(g.norm_sq() + kGradNormEps * kGradNormEps);
          rep.normal += (1.0 - g.dot(in.samples->target_normals[size_t(r)]) / gn) /
                        Real(n_surf);
        }
        continue;
      }

      ts.reset();
      int wleaf = ts.leaf_view(w_d.data(), w_d.size(), want_grads);
      LayerNodes dwb = mlp_sliced_leaves(ts, dspec, wleaf);
      int oleaf = ts.leaf_view(obj_field.weights.data(),
                               obj_field.weights.size(), false);
      LayerNodes owb = mlp_sliced_leaves(ts, ospec, oleaf);
      std::array<Real, 3> xv = {x.x, x.y, x.z};
      int xn = ts.leaf(xv, false);
      int dx = mlp_apply(ts, dspec, dwb, xn);
      int xp = ts.add(xn, dx);

      int loss_node = -1;
      if (surf) {
        std::array<Real, 3> e0 = {1, 0, 0}, e1 = {0, 1, 0}, e2 = {0, 0, 1};
        std::array<int, 3> dirs = {ts.constant(e0), ts.constant(e1),
                                   ts.constant(e2)};
        auto out = mlp_apply_tangent(ts, ospec, owb, xp, dirs);
        int g = ts.concat(ts.concat(out.tangents[0], out.tangents[1]),
                          out.tangents[2]);
        int ghat = ts.normalize_smooth(g, kGradNormEps);
        int nstar = ts.constant3(in.samples->target_normals[size_t(r)]);
        int nterm = ts.sub(ts.scalar_const(1.0), ts.dot(ghat, nstar));
        rep.normal += ts.val0(nterm) / Real(n_surf);

        int cs = ts.clamp(out.value, -w.delta, w.delta);
        int sdterm =
            ts.abs(ts.sub(cs, ts.scalar_const(clamp_sd(target, w.delta))));
        rep.regression += ts.val0(sdterm) / Real(n_all);
        loss_node =
            ts.add(ts.scale(sdterm, w.lambda8 / Real(n_all)),
                   ts.scale(nterm, w.lambda7 / Real(n_surf)));
      } else {
        int s_node = mlp_apply(ts, ospec, owb, xp);
        int cs = ts.clamp(s_node, -w.delta, w.delta);
        int sdterm =
            ts.abs(ts.sub(cs, ts.scalar_const(clamp_sd(target, w.delta))));
        rep.regression += ts.val0(sdterm) / Real(n_all);
        loss_node = ts.scale(sdterm, w.lambda8 / Real(n_all));
      }
      if (want_grads) {
        // weighted on-tape; undo the weights when reporting term values only
        ts.backward_scalar(loss_node, 1.0);
        auto g = ts.grad(wleaf);
        for (size_t i = 0; i < w_d_grad.size(); ++i) w_d_grad[i] += g[i];
      }
    }
  }

  // ---- correspondence -----------------------------------------------------
  if (in.observed && !in.observed->empty() && in.nominal_gt &&
      !in.nominal_gt->empty()) {
    std::span<const int> orows = detail::all_rows_or(
        in.observed_rows, in.observed->points.size(), scratch);
    size_t n_a = orows.size();
    std::vector<Vec3> y(n_a);
    for (size_t i = 0; i < n_a; ++i) {
      const Vec3& p = in.observed->points[size_t(orows[i])];
      y[i] = p + d_eval_plain(p);
    }
    const std::vector<Vec3>& B = in.nominal_gt->points;
    size_t n_b = B.size();

    PointGrid yg(y);
    PointGrid local;
    const PointGrid* bg = in.nominal_grid;
    if (!bg) {
      local.build(B);
      bg = &local;
    }
    std::vector<int> nn_ab(n_a);
    Real cd = 0;
    std::vector<Vec3> ygrad(n_a);
    for (size_t i = 0; i < n_a; ++i) {
      Real d;
      nn_ab[i] = bg->nearest(y[i], &d);
      cd += d / Real(n_a);
      ygrad[i] += (y[i] - B[size_t(nn_ab[i])]) * (2.0 / Real(n_a));
    }
    for (size_t j = 0; j < n_b; ++j) {
      Real d;
      int i = yg.nearest(B[j], &d);
      cd += d / Real(n_b);
      ygrad[size_t(i)] += (y[size_t(i)] - B[j]) * (2.0 / Real(n_b));
    }
    rep.correspondence = cd;

    if (want_grads && !rigid) {
      for (size_t i = 0; i < n_a; ++i) {
        const Vec3& p = in.observed->points[size_t(orows[i])];
        ts.reset();
        int wleaf = ts.leaf_view(w_d.data(), w_d.size(), true);
        LayerNodes dwb = mlp_sliced_leaves(ts, dspec, wleaf);
        std::array<Real, 3> pv = {p.x, p.y, p.z};
        int dx = mlp_apply(ts, dspec, dwb, ts.leaf(pv, false));
        std::array<Real, 3> seed = {w.lambda6 * ygrad[i].x,
                                    w.lambda6 * ygrad[i].y,
                                    w.lambda6 * ygrad[i].z};
        ts.backward(dx, seed);
        auto g = ts.grad(wleaf);
        for (size_t k = 0; k < w_d_grad.size(); ++k) w_d_grad[k] += g[k];
      }
    }
  }

  rep.total = w.lambda5 * rep.min_correction + w.lambda6 * rep.correspondence +
              w.lambda7 * rep.normal + w.lambda8 * rep.regression;
  return rep;
}

// ---------------------------------------------------------------------------
// Dynamics window loss (horizon w): per-step geometry loss with the measured
// wrench, wrench prediction loss against the next measurement, and
// regularizers, with the predicted contact embedding fed recursively into the
// next step. Gradients reach the D hypernetwork, force/action modules and the
// window's initial contact embedding; Psi_o and alpha stay frozen.
// ---------------------------------------------------------------------------
struct DynamicsStep {
  Vec6 pose = vec6_zero();
  Vec6 wrench = vec6_zero();
  Vec6 action = vec6_zero();
  Vec6 wrench_next = vec6_zero();  // measured f_{t+1}
  const PointCloud* observed = nullptr;
  const SdfSampleSet* samples = nullptr;
  std::span<const Vec3> field_points;
  std::span<const int> sample_rows, observed_rows;
};

struct DynamicsGrads {
  std::vector<Real> hyper_d, force, action, c_init;
};

struct DynamicsTraceStep {
  std::vector<Real> c, z, c_next;
  Vec6 wrench_pred = vec6_zero();
};

inline LossReport loss_dynamics_total(
    const Model& m, const DecodedField& obj_field, std::span<const Real> alpha,
    std::span<const Real> c_init, std::span<const DynamicsStep> steps,
    const PointCloud& nominal_gt, const PointGrid* nominal_grid,
    const LossWeights& w, DynamicsGrads* grads = nullptr,
    std::vector<DynamicsTraceStep>* trace = nullptr) {
  w.validate();
  if (steps.empty()) throw ConfigError("loss_dynamics_total: empty window");
  const bool no_ct = m.cfg.no_contact_embedding;
  const bool rigid = m.cfg.rigid;
  const int T = int(steps.size());
  const MlpSpec fspec = m.cfg.force_spec();
  const MlpSpec aspec = m.cfg.action_spec();
  const HyperSpec hd = make_hyper_d(m.cfg);
  const bool want = grads != nullptr;
  if (want) {
    grads->hyper_d.assign(m.hyper_d.size(), 0.0);
    grads->force.assign(m.force_net.size(), 0.0);
    grads->action.assign(m.action_net.size(), 0.0);
    grads->c_init.assign(c_init.size(), 0.0);
  }
  if (trace) trace->assign(size_t(T), {});

  struct StepRec {
    Tape f_tape, dec_tape, a_tape;
    int c_leaf = -1, z_node = -1;
    DecodeTape dec;
    std::vector<std::pair<int, std::string>> f_leaves, a_leaves;
    int z_leaf_a = -1, pred_node = -1, chat_node = -1;
    std::vector<Real> z, c, chat, wd_grad;
    Real z_norm = 0, c_norm = 0, wd_norm = 0;
  };
  std::vector<StepRec> recs;
  recs.resize(size_t(T));

  LossReport rep;
  std::vector<Real> c_cur(c_init.begin(), c_init.end());

  // ---- forward ------------------------------------------------------------
  for (int t = 0; t < T; ++t) {
    StepRec& rc = recs[size_t(t)];
    const DynamicsStep& st = steps[size_t(t)];
    rc.c = c_cur;

    // force module
    Vec6 f_std = m.stats.wrench.standardize(st.wrench);
    Vec6 p_std = m.stats.pose.standardize(st.pose);
    {
      Tape& t_ = rc.f_tape;
      int fn = t_.leaf(f_std, false);
      int pn = t_.leaf(p_std, false);
      int input;
      if (no_ct) {
        input = t_.concat(fn, pn);
      } else {
        rc.c_leaf = t_.leaf(c_cur, true);
        input = t_.concat(t_.concat(fn, rc.c_leaf), pn);
      }
      LayerNodes wb = mlp_param_leaves(t_, fspec, m.force_net, want);
      rc.f_leaves = named_leaves(fspec, wb);
      rc.z_node = mlp_apply(t_, fspec, wb, input);
      auto zv = t_.val(rc.z_node);
      rc.z.assign(zv.begin(), zv.end());
    }

    // decode D and geometry terms
    if (!rigid) {
      Tape& t_ = rc.dec_tape;
      std::vector<Real> cond(alpha.begin(), alpha.end());
      cond.insert(cond.end(), rc.z.begin(), rc.z.end());
      int cn = t_.leaf(cond, true);  // adjoint of the z slice flows back
      rc.dec = tape_decode(t_, hd, m.hyper_d, cn, want);
      auto wd = t_.val(rc.dec.weights);
      rc.wd_grad.assign(want ? wd.size() : 0, 0.0);

      GeoInputs gi;
      gi.field_points = st.field_points;
      gi.samples = st.samples;
      gi.sample_rows = st.sample_rows;
      gi.observed = st.observed;
      gi.observed_rows = st.observed_rows;
      gi.nominal_gt = &nominal_gt;
      gi.nominal_grid = nominal_grid;
      LossReport geo = loss_geo_terms(m, obj_field, wd, gi, w,
                                      want ? std::span<Real>(rc.wd_grad)
                                           : std::span<Real>());
      rep.min_correction += geo.min_correction;
      rep.correspondence += geo.correspondence;
      rep.normal += geo.normal;
      rep.regression += geo.regression;

      rc.wd_norm = detail::vec_norm(wd);
      if (want && rc.wd_norm > 0)
        for (size_t i = 0; i < rc.wd_grad.size(); ++i)
          rc.wd_grad[i] += w.lambda4 * w.lambda11 * wd[i] / rc.wd_norm;
    } else {
      GeoInputs gi;
      gi.field_points = st.field_points;
      gi.samples = st.samples;
      gi.sample_rows = st.sample_rows;
      gi.observed = st.observed;
      gi.observed_rows = st.observed_rows;
      gi.nominal_gt = &nominal_gt;
      gi.nominal_grid = nominal_grid;
      LossReport geo =
          loss_geo_terms(m, obj_field, {}, gi, w, std::span<Real>());
      rep.min_correction += geo.min_correction;
      rep.correspondence += geo.correspondence;
      rep.normal += geo.normal;
      rep.regression += geo.regression;
    }

    // action module: predicted (f, c) for t+1
    {
      Tape& t_ = rc.a_tape;
      Vec6 a_std = m.stats.action.standardize(st.action);
      int an = t_.leaf(alpha, false);
      rc.z_leaf_a = t_.leaf(rc.z, true);
      int actn = t_.leaf(a_std, false);
      int input = t_.concat(t_.concat(an, rc.z_leaf_a), actn);
      LayerNodes wb = mlp_param_leaves(t_, aspec, m.action_net, want);
      rc.a_leaves = named_leaves(aspec, wb);
      int out = mlp_apply(t_, aspec, wb, input);
      int f_std_node = t_.slice(out, 0, 6);
      // de-standardize on tape for the raw-unit prediction loss
      std::array<Real, 6> sc, mn;
      for (int i = 0; i < 6; ++i) {
        sc[size_t(i)] = m.stats.wrench.std[size_t(i)];
        mn[size_t(i)] = m.stats.wrench.mean[size_t(i)];
      }
      int f_raw = t_.add(t_.mul(f_std_node, t_.constant(sc)), t_.constant(mn));
      int diff = t_.sub(f_raw, t_.leaf(st.wrench_next, false));
      rc.pred_node = t_.norm2(diff);
      rep.pred += t_.val0(rc.pred_node);
      auto fv = t_.val(f_raw);
      Vec6 fpred;
      std::copy_n(fv.begin(), 6, fpred.begin());
      if (!no_ct) {
        rc.chat_node = t_.slice(out, 6, uint32_t(m.cfg.l_c));
        auto cv = t_.val(rc.chat_node);
        rc.chat.assign(cv.begin(), cv.end());
      }
      if (trace) {
        (*trace)[size_t(t)].c = rc.c;
        (*trace)[size_t(t)].z = rc.z;
        (*trace)[size_t(t)].c_next = rc.chat;
        (*trace)[size_t(t)].wrench_pred = fpred;
      }
    }

    rc.z_norm = detail::vec_norm(rc.z);
    rc.c_norm = detail::vec_norm(rc.c);
    rep.reg += w.lambda9 * rc.z_norm + w.lambda10 * rc.c_norm +
               w.lambda11 * rc.wd_norm;

    c_cur = rc.chat;  // recursion
  }

  // ---- backward (reverse time) ---------------------------------------------
  if (want) {
    std::vector<Real> cbar_next;  // adjoint of c_{t+1} flowing into step t
    for (int t = T - 1; t >= 0; --t) {
      StepRec& rc = recs[size_t(t)];

      // action tape: prediction loss + recursion adjoint on c_hat
      std::vector<std::pair<int, std::span<const Real>>> seeds;
      std::array<Real, 1> pred_seed = {w.lambda3};
      seeds.push_back({rc.pred_node, pred_seed});
      if (!no_ct && t + 1 < T && !cbar_next.empty())
        seeds.push_back({rc.chat_node, cbar_next});
      rc.a_tape.backward_multi(seeds);
      collect_param_grads(rc.a_tape, rc.a_leaves, m.action_net, grads->action);
      auto zgA = rc.a_tape.grad(rc.z_leaf_a);
      std::vector<Real> zbar(zgA.begin(), zgA.end());

      // decode tape: geometry + lambda11 adjoints
      if (!rigid) {
        rc.dec_tape.backward(rc.dec.weights, rc.wd_grad);
        collect_param_grads(rc.dec_tape, rc.dec.param_leaves, m.hyper_d,
                            grads->hyper_d);
        auto cg = rc.dec_tape.grad(rc.dec.cond);
        for (int i = 0; i < m.cfg.l_z; ++i)
          zbar[size_t(i)] += cg[size_t(m.cfg.l_alpha + i)];
      }

      // z regularizer
      if (rc.z_norm > 0)
        for (size_t i = 0; i < zbar.size(); ++i)
          zbar[i] += w.lambda4 * w.lambda9 * rc.z[i] / rc.z_norm;

      // force tape
      rc.f_tape.backward(rc.z_node, zbar);
      collect_param_grads(rc.f_tape, rc.f_leaves, m.force_net, grads->force);

      if (!no_ct) {
        auto cg = rc.f_tape.grad(rc.c_leaf);
        std::vector<Real> cbar(cg.begin(), cg.end());
        if (rc.c_norm > 0)
          for (size_t i = 0; i < cbar.size(); ++i)
            cbar[i] += w.lambda4 * w.lambda10 * rc.c[i] / rc.c_norm;
        if (t == 0)
          for (size_t i = 0; i < cbar.size(); ++i) grads->c_init[i] += cbar[i];
        else
          cbar_next = std::move(cbar);
      }
    }
  }

  rep.total = w.lambda5 * rep.min_correction + w.lambda6 * rep.correspondence +
              w.lambda7 * rep.normal + w.lambda8 * rep.regression +
              w.lambda3 * rep.pred + w.lambda4 * rep.reg;
  return rep;
}

}  // namespace defo
