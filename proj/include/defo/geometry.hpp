#pragma once

#include <algorithm>
#include <limits>

#include "defo/core.hpp"

namespace defo {

// ---------------------------------------------------------------------------
// Point clouds in the normalized wrist frame.
// ---------------------------------------------------------------------------
struct PointCloud {
  std::vector<Vec3> points;
  std::vector<Vec3> normals;  // empty or one per point, unit length

  bool has_normals() const { return !normals.empty(); }
  size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }

  void validate() const {
    if (points.empty()) throw DataError("point cloud is empty");
    if (!normals.empty()) {
      if (normals.size() != points.size())
        throw DataError("normals count does not match points");
      for (const Vec3& n : normals)
        if (std::fabs(n.norm() - 1.0) > 1e-6)
          throw DataError("non-unit normal in point cloud");
    }
  }
};

// y = scale * x + offset (uniform scale similarity)
struct SimilarityTransform {
  Real scale = 1.0;
  Vec3 offset;

  Vec3 apply(const Vec3& x) const { return x * scale + offset; }
  Vec3 invert(const Vec3& y) const { return (y - offset) / scale; }
  SimilarityTransform inverse() const {
    return {1.0 / scale, -offset / scale};
  }
};

inline std::pair<Vec3, Vec3> bounding_box(std::span<const Vec3> pts) {
  Vec3 lo = pts[0], hi = pts[0];
  for (const Vec3& p : pts) {
    lo = min3(lo, p);
    hi = max3(hi, p);
  }
  return {lo, hi};
}

// Uniform rescale + recenter so the cloud fits [-scale_box/2, scale_box/2]^3.
inline std::pair<PointCloud, SimilarityTransform> normalize_cloud(
    const PointCloud& raw, Real scale_box) {
  if (raw.empty()) throw DataError("normalize_cloud: empty cloud");
  auto [lo, hi] = bounding_box(raw.points);
  Vec3 extent = hi - lo;
  Real max_extent = std::max({extent.x, extent.y, extent.z});
  if (max_extent < 1e-12)
    throw DegeneracyError("normalize_cloud: zero-extent cloud");
  SimilarityTransform t;
  t.scale = scale_box / max_extent;
  Vec3 center = (lo + hi) * 0.5;
  t.offset = -center * t.scale;
  PointCloud out;
  out.points.reserve(raw.points.size());
  for (const Vec3& p : raw.points) out.points.push_back(t.apply(p));
  out.normals = raw.normals;  // unchanged under similarity
  return {out, t};
}

// ---------------------------------------------------------------------------
// Exact nearest neighbor on a uniform grid. Cells are scanned in expanding
// Chebyshev shells; once the best squared distance is below (r*cell)^2 no
// unscanned point can win.
// ---------------------------------------------------------------------------
class PointGrid {
 public:
  PointGrid() = default;
  explicit PointGrid(std::span<const Vec3> pts) { build(pts); }

  void build(std::span<const Vec3> pts) {
    pts_.assign(pts.begin(), pts.end());
    if (pts_.empty()) throw DataError("PointGrid: empty point set");
    auto [lo, hi] = bounding_box(pts_);
    origin_ = lo;
    Vec3 extent = hi - lo;
    Real max_extent = std::max({extent.x, extent.y, extent.z, Real(1e-9)});
    Real target = max_extent / std::max(1.0, std::cbrt(Real(pts_.size()) / 2.0));
    cell_ = std::max(target, max_extent / 64.0);
    nx_ = dim(extent.x);
    ny_ = dim(extent.y);
    nz_ = dim(extent.z);
    // counting sort into CSR cell lists
    std::vector<int> counts(size_t(nx_) * ny_ * nz_ + 1, 0);
    std::vector<int> cell_of(pts_.size());
    for (size_t i = 0; i < pts_.size(); ++i) {
      cell_of[i] = cell_index(clamp_coord(pts_[i]));
      counts[size_t(cell_of[i]) + 1]++;
    }
    for (size_t i = 1; i < counts.size(); ++i) counts[i] += counts[i - 1];
    start_ = counts;
    order_.resize(pts_.size());
    std::vector<int> cursor(start_.begin(), start_.end() - 1);
    for (size_t i = 0; i < pts_.size(); ++i)
      order_[size_t(cursor[size_t(cell_of[i])]++)] = int(i);
  }

  size_t size() const { return pts_.size(); }
  const Vec3& point(int i) const { return pts_[size_t(i)]; }

  // Index of the nearest stored point; best_sq receives squared distance.
  int nearest(const Vec3& q, Real* best_sq_out = nullptr) const {
    int qx = int(std::floor((q.x - origin_.x) / cell_));
    int qy = int(std::floor((q.y - origin_.y) / cell_));
    int qz = int(std::floor((q.z - origin_.z) / cell_));
    Real best_sq = std::numeric_limits<Real>::max();
    int best = -1;
    int max_r = std::max({nx_, ny_, nz_}) +
                std::max({std::abs(qx), std::abs(qy), std::abs(qz)}) + 2;
    for (int r = 0;; ++r) {
      // after shells 0..r-1, any unscanned point is at least (r-1)*cell away
      if (best >= 0 && r >= 1) {
        Real safe = Real(r - 1) * cell_;
        if (best_sq <= safe * safe) break;
      }
      if (r > max_r) break;
      scan_shell(q, qx, qy, qz, r, best, best_sq);
    }
    if (best_sq_out) *best_sq_out = best_sq;
    return best;
  }

 private:
  int dim(Real extent) const {
    return std::max(1, int(std::floor(extent / cell_)) + 1);
  }
  std::array<int, 3> clamp_coord(const Vec3& p) const {
    int cx = std::clamp(int(std::floor((p.x - origin_.x) / cell_)), 0, nx_ - 1);
    int cy = std::clamp(int(std::floor((p.y - origin_.y) / cell_)), 0, ny_ - 1);
    int cz = std::clamp(int(std::floor((p.z - origin_.z) / cell_)), 0, nz_ - 1);
    return {cx, cy, cz};
  }
  int cell_index(const std::array<int, 3>& c) const {
    return (c[2] * ny_ + c[1]) * nx_ + c[0];
  }

  void scan_cell(const Vec3& q, int cx, int cy, int cz, int& best,
                 Real& best_sq) const {
    int ci = cell_index({cx, cy, cz});
    for (int k = start_[size_t(ci)]; k < start_[size_t(ci) + 1]; ++k) {
      int i = order_[size_t(k)];
      Real d = (pts_[size_t(i)] - q).norm_sq();
      if (d < best_sq) {
        best_sq = d;
        best = i;
      }
    }
  }

  void scan_shell(const Vec3& q, int qx, int qy, int qz, int r, int& best,
                  Real& best_sq) const {
    int x0 = std::max(qx - r, 0), x1 = std::min(qx + r, nx_ - 1);
    int y0 = std::max(qy - r, 0), y1 = std::min(qy + r, ny_ - 1);
    int z0 = std::max(qz - r, 0), z1 = std::min(qz + r, nz_ - 1);
    if (x0 > x1 || y0 > y1 || z0 > z1) return;
    for (int z = z0; z <= z1; ++z)
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
          int cheb = std::max({std::abs(x - qx), std::abs(y - qy),
                               std::abs(z - qz)});
          if (cheb != r) continue;  // shell only
          scan_cell(q, x, y, z, best, best_sq);
        }
  }

  std::vector<Vec3> pts_;
  std::vector<int> start_, order_;
  Vec3 origin_;
  Real cell_ = 1.0;
  int nx_ = 1, ny_ = 1, nz_ = 1;
};

// Symmetric squared chamfer distance:
//   CD(A,B) = mean_a min_b ||a-b||^2 + mean_b min_a ||a-b||^2.
// Reported tables scale this by 1e3.
inline Real chamfer(std::span<const Vec3> a, std::span<const Vec3> b) {
  if (a.empty() || b.empty()) throw DataError("chamfer: empty cloud");
  PointGrid ga(a), gb(b);
  Real sum_ab = 0, sum_ba = 0;
  for (const Vec3& p : a) {
    Real d;
    gb.nearest(p, &d);
    sum_ab += d;
  }
  for (const Vec3& p : b) {
    Real d;
    ga.nearest(p, &d);
    sum_ba += d;
  }
  return sum_ab / Real(a.size()) + sum_ba / Real(b.size());
}

inline Real chamfer(const PointCloud& a, const PointCloud& b) {
  return chamfer(std::span<const Vec3>(a.points), std::span<const Vec3>(b.points));
}

// ---------------------------------------------------------------------------
// Analytic primitives: unions of (optionally rotated) rounded boxes.
// ---------------------------------------------------------------------------
struct RoundedBox {
  Vec3 center;
  Vec3 half_extents;  // of the core box; the surface is inflated by radius
  Real radius = 0.0;
  Mat3 frame;  // local->world rotation
};

struct PrimitiveShape {
  std::vector<RoundedBox> parts;

  void validate() const {
    if (parts.empty()) throw ConfigError("PrimitiveShape: no primitives");
    for (const auto& b : parts)
      if (b.half_extents.x < 0 || b.half_extents.y < 0 || b.half_extents.z < 0 ||
          b.radius < 0 ||
          (b.half_extents.norm() == 0 && b.radius == 0))
        throw ConfigError("PrimitiveShape: degenerate primitive");
  }
};

// Signed distance and gradient of one rounded box. Exact everywhere; the
// gradient is unit norm except on the medial axis.
inline std::pair<Real, Vec3> rounded_box_sdf(const RoundedBox& b, const Vec3& x) {
  Vec3 local = b.frame.apply_transposed(x - b.center);
  Vec3 a = {std::fabs(local.x), std::fabs(local.y), std::fabs(local.z)};
  Vec3 q = a - b.half_extents;
  Vec3 qpos = {std::max(q.x, 0.0), std::max(q.y, 0.0), std::max(q.z, 0.0)};
  Real outside = qpos.norm();
  Real inside = std::min(std::max({q.x, q.y, q.z}), 0.0);
  Real sd = outside + inside - b.radius;

  Vec3 g_local;
  if (outside > 0) {
    g_local = qpos / outside;
  } else {
    // interior: toward the nearest face
    int axis = 0;
    if (q.y > q.x) axis = 1;
    if (q.z > (&q.x)[axis]) axis = 2;
    g_local = {};
    g_local[axis] = 1.0;
  }
  g_local.x = local.x < 0 ? -g_local.x : g_local.x;
  g_local.y = local.y < 0 ? -g_local.y : g_local.y;
  g_local.z = local.z < 0 ? -g_local.z : g_local.z;
  return {sd, b.frame.apply(g_local)};
}

// Union via min: exact outside the union, a lower bound inside overlaps.
inline std::pair<Real, Vec3> primitive_sdf(const PrimitiveShape& shape,
                                           const Vec3& x) {
  Real best = std::numeric_limits<Real>::max();
  Vec3 grad;
  for (const auto& b : shape.parts) {
    auto [sd, g] = rounded_box_sdf(b, x);
    if (sd < best) {
      best = sd;
      grad = g;
    }
  }
  return {best, grad};
}

// ---------------------------------------------------------------------------
// Training samples for SDF regression.
// ---------------------------------------------------------------------------
struct SdfSampleSet {
  std::vector<Vec3> queries;
  std::vector<Real> target_sd;
  std::vector<uint8_t> surface_mask;   // 1 = on-surface row
  std::vector<Vec3> target_normals;    // meaningful where surface_mask is set

  size_t size() const { return queries.size(); }
  size_t surface_count() const {
    size_t c = 0;
    for (uint8_t m : surface_mask) c += m;
    return c;
  }
};

namespace detail {

// Uniform sample on the surface of one rounded box: flat faces, quarter
// cylinder edges and eighth-sphere corners weighted by exact area.
inline std::pair<Vec3, Vec3> sample_rounded_box_surface(const RoundedBox& b,
                                                        Rng& rng) {
  const Vec3 h = b.half_extents;
  const Real r = b.radius;
  const Real face_area[3] = {4 * h.y * h.z, 4 * h.x * h.z, 4 * h.x * h.y};
  // 4 edges per axis pair, each a quarter cylinder of length 2h_axis
  const Real edge_area[3] = {4 * (std::numbers::pi / 2) * r * 2 * h.x,
                             4 * (std::numbers::pi / 2) * r * 2 * h.y,
                             4 * (std::numbers::pi / 2) * r * 2 * h.z};
  const Real corner_area = 4 * std::numbers::pi * r * r;  // 8 eighth-spheres
  Real total = face_area[0] + face_area[1] + face_area[2] + edge_area[0] +
               edge_area[1] + edge_area[2] + corner_area;

  Vec3 p_local, n_local;
  Real u = rng.uniform() * total;
  if (total <= 0) u = -1;  // degenerate: fall through to corner (sphere)

  if (u >= 0 && u < face_area[0] + face_area[1] + face_area[2]) {
    int axis = u < face_area[0] ? 0 : (u < face_area[0] + face_area[1] ? 1 : 2);
    Real sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
    int a1 = (axis + 1) % 3, a2 = (axis + 2) % 3;
    p_local = {};
    p_local[axis] = sign * ((&h.x)[axis] + r);
    p_local[a1] = rng.uniform(-(&h.x)[a1], (&h.x)[a1]);
    p_local[a2] = rng.uniform(-(&h.x)[a2], (&h.x)[a2]);
    n_local = {};
    n_local[axis] = sign;
  } else if (u >= 0 &&
             u < face_area[0] + face_area[1] + face_area[2] + edge_area[0] +
                     edge_area[1] + edge_area[2]) {
    Real v = u - face_area[0] - face_area[1] - face_area[2];
    int axis = v < edge_area[0] ? 0 : (v < edge_area[0] + edge_area[1] ? 1 : 2);
    int a1 = (axis + 1) % 3, a2 = (axis + 2) % 3;
    Real s1 = rng.uniform() < 0.5 ? -1.0 : 1.0;
    Real s2 = rng.uniform() < 0.5 ? -1.0 : 1.0;
    Real ang = rng.uniform(0.0, std::numbers::pi / 2);
    p_local = {};
    p_local[axis] = rng.uniform(-(&h.x)[axis], (&h.x)[axis]);
    p_local[a1] = s1 * ((&h.x)[a1] + r * std::cos(ang));
    p_local[a2] = s2 * ((&h.x)[a2] + r * std::sin(ang));
    n_local = {};
    n_local[a1] = s1 * std::cos(ang);
    n_local[a2] = s2 * std::sin(ang);
  } else {
    // corner: uniform on an eighth sphere via rejection into one octant
    Vec3 d;
    do {
      d = rng.normal_vec3(1.0);
    } while (d.norm() < 1e-9);
    d = d.normalized();
    d = {std::fabs(d.x), std::fabs(d.y), std::fabs(d.z)};
    Real s1 = rng.uniform() < 0.5 ? -1.0 : 1.0;
    Real s2 = rng.uniform() < 0.5 ? -1.0 : 1.0;
    Real s3 = rng.uniform() < 0.5 ? -1.0 : 1.0;
    n_local = {s1 * d.x, s2 * d.y, s3 * d.z};
    p_local = {s1 * h.x, s2 * h.y, s3 * h.z};
    p_local += n_local * r;
  }
  return {b.center + b.frame.apply(p_local), b.frame.apply(n_local)};
}

inline Real shape_surface_area(const RoundedBox& b) {
  const Vec3 h = b.half_extents;
  const Real r = b.radius;
  return 4 * (h.y * h.z + h.x * h.z + h.x * h.y) +
         2 * std::numbers::pi * r * (2 * h.x + 2 * h.y + 2 * h.z) +
         4 * std::numbers::pi * r * r;
}

}  // namespace detail

// Points exactly on the union surface with analytic normals. Candidates that
// fall inside another primitive are rejected.
inline PointCloud sample_surface(const PrimitiveShape& shape, int n,
                                 uint64_t seed) {
  shape.validate();
  std::vector<Real> weights;
  Real total = 0;
  for (const auto& b : shape.parts) {
    total += detail::shape_surface_area(b);
    weights.push_back(total);
  }
  PointCloud out;
  Rng rng(seed);
  int guard = 0;
  while (int(out.points.size()) < n) {
    if (++guard > 1000 * n)
      throw GenerationError("sample_surface: rejection did not converge");
    Real u = rng.uniform(0.0, total);
    size_t k = size_t(std::lower_bound(weights.begin(), weights.end(), u) -
                      weights.begin());
    k = std::min(k, shape.parts.size() - 1);
    auto [p, nrm] = detail::sample_rounded_box_surface(shape.parts[k], rng);
    auto [sd, g] = primitive_sdf(shape, p);
    if (sd < -1e-9) continue;  // interior of the union
    out.points.push_back(p);
    out.normals.push_back(nrm);
  }
  return out;
}

// On-surface rows carry s*=0 and analytic normals; off-surface rows are a
// 50/50 mix of uniform draws in [-1,1]^3 and Gaussian-perturbed surface
// points, each with exact analytic signed distance.
inline SdfSampleSet sample_training_points(const PrimitiveShape& shape,
                                           int n_surface, int n_query,
                                           uint64_t seed,
                                           Real perturb_sigma = 0.05) {
  if (n_surface <= 0 || n_query <= 0)
    throw ConfigError("sample_training_points: counts must be positive");
  SdfSampleSet out;
  PointCloud surf = sample_surface(shape, n_surface, seed);
  for (size_t i = 0; i < surf.points.size(); ++i) {
    out.queries.push_back(surf.points[i]);
    out.target_sd.push_back(0.0);
    out.surface_mask.push_back(1);
    out.target_normals.push_back(surf.normals[i]);
  }
  Rng rng = Rng(seed).fork(1);
  int n_uniform = n_query / 2;
  PointCloud near = sample_surface(shape, n_query - n_uniform, seed ^ 0x5eedULL);
  for (int i = 0; i < n_query; ++i) {
    Vec3 q;
    if (i < n_uniform) {
      q = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    } else {
      q = near.points[size_t(i - n_uniform)] + rng.normal_vec3(perturb_sigma);
      q = max3(min3(q, {1, 1, 1}), {-1, -1, -1});
    }
    auto [sd, g] = primitive_sdf(shape, q);
    out.queries.push_back(q);
    out.target_sd.push_back(sd);
    out.surface_mask.push_back(0);
    out.target_normals.push_back({});
  }
  return out;
}

// Subsamples `n` rows deterministically (without replacement when possible).
inline std::vector<int> sample_indices(size_t total, int n, Rng& rng) {
  std::vector<int> idx(total);
  for (size_t i = 0; i < total; ++i) idx[i] = int(i);
  for (size_t i = 0; i + 1 < total; ++i) {
    size_t j = i + size_t(rng.uniform_int(int(total - i)));
    std::swap(idx[i], idx[j]);
  }
  if (n < int(total)) idx.resize(size_t(n));
  return idx;
}

}  // namespace defo
