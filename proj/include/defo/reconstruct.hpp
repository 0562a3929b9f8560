#pragma once

#include <functional>

#include "defo/model.hpp"

namespace defo {

// Signed distance with gradient at a query point.
using SdfGradFn = std::function<std::pair<Real, Vec3>(const Vec3&)>;

// Extracts near-surface points of a level set over [-1,1]^3: coarse grid
// scan, optional cell refinement, then a single Newton projection step
// x <- x - s * grad / |grad|^2. Rows failing the iso tolerance after
// projection are dropped.
inline PointCloud reconstruct_level_set(const SdfGradFn& sdf, int base_res,
                                        int refine_levels, Real iso_tol = -1) {
  if (base_res < 4) throw ConfigError("reconstruct_level_set: base_res >= 4");
  Real cell = 2.0 / base_res;
  std::vector<Vec3> active;
  for (int i = 0; i < base_res; ++i)
    for (int j = 0; j < base_res; ++j)
      for (int k = 0; k < base_res; ++k) {
        Vec3 x = {-1 + (i + 0.5) * cell, -1 + (j + 0.5) * cell,
                  -1 + (k + 0.5) * cell};
        auto [s, g] = sdf(x);
        if (std::fabs(s) <= 0.9 * cell) active.push_back(x);
      }
  for (int lvl = 0; lvl < refine_levels; ++lvl) {
    Real child = cell / 2;
    std::vector<Vec3> next;
    next.reserve(active.size() * 4);
    for (const Vec3& x : active)
      for (int dx = -1; dx <= 1; dx += 2)
        for (int dy = -1; dy <= 1; dy += 2)
          for (int dz = -1; dz <= 1; dz += 2) {
            Vec3 c = {x.x + dx * child / 2, x.y + dy * child / 2,
                      x.z + dz * child / 2};
            auto [s, g] = sdf(c);
            if (std::fabs(s) <= 0.9 * child) next.push_back(c);
          }
    active = std::move(next);
    cell = child;
  }
  if (iso_tol <= 0) iso_tol = 0.5 * cell;

  PointCloud out;
  for (const Vec3& x : active) {
    auto [s, g] = sdf(x);
    Real gn = g.norm_sq();
    if (gn < 1e-12) continue;
    Vec3 p = x - g * (s / gn);
    auto [s2, g2] = sdf(p);
    if (std::fabs(s2) <= iso_tol) out.points.push_back(p);
  }
  if (out.empty())
    throw ReconstructionError(
        "reconstruct_level_set: no surface found at this resolution");
  return out;
}

// Composed-field evaluator O(x + D(x)) with the full chain-rule gradient
// (I + J_D)^T grad O. An empty deformation yields the nominal field.
class ComposedField {
 public:
  ComposedField(DecodedField obj, DecodedField def, bool rigid)
      : obj_(std::move(obj)), def_(std::move(def)), rigid_(rigid) {}

  std::pair<Real, Vec3> eval(const Vec3& x) const {
    MlpWork& w = work_;
    if (rigid_ || def_.weights.empty()) return field_eval_grad(obj_, x, w);
    std::array<Real, 3> in = {x.x, x.y, x.z};
    std::array<Vec3, 3> dirs = {Vec3{1, 0, 0}, Vec3{0, 1, 0}, Vec3{0, 0, 1}};
    std::vector<Real> dval;
    std::vector<std::vector<Real>> dtan;
    mlp_eval_flat_grad(def_.spec, def_.weights, in, dirs, dval, dtan, w);
    Vec3 xp = x + Vec3{dval[0], dval[1], dval[2]};
    auto [s, go] = field_eval_grad(obj_, xp, w);
    // rows of J_D: dtan[k][c] = d D_c / d x_k
    Vec3 g;
    for (int k = 0; k < 3; ++k) {
      Real acc = go[k];
      for (int c = 0; c < 3; ++c) acc += dtan[size_t(k)][size_t(c)] * go[c];
      g[k] = acc;
    }
    return {s, g};
  }

  Real value(const Vec3& x) const {
    MlpWork& w = work_;
    if (rigid_ || def_.weights.empty()) return field_eval(obj_, x, w);
    Vec3 dx = field_eval3(def_, x, w);
    return field_eval(obj_, x + dx, w);
  }

  SdfGradFn fn() const {
    return [this](const Vec3& x) { return eval(x); };
  }

 private:
  DecodedField obj_, def_;
  bool rigid_;
  mutable MlpWork work_;
};

inline PointCloud reconstruct_surface(const Model& m,
                                      std::span<const Real> alpha,
                                      std::span<const Real> z, int base_res,
                                      int refine_levels) {
  DecodedField obj = m.decode_object(alpha);
  DecodedField def;
  bool rigid = m.cfg.rigid || z.empty();
  if (!rigid) def = m.decode_deformation(alpha, z);
  ComposedField field(std::move(obj), std::move(def), rigid);
  return reconstruct_level_set(field.fn(), base_res, refine_levels);
}

}  // namespace defo
