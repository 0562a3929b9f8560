#pragma once

#include <functional>
#include <optional>

#include "defo/synthgen.hpp"

namespace defo {

// Evaluates signed distances for a whole batch of query points at once; the
// detector issues exactly one such call per invocation.
using BatchSdf = std::function<std::vector<Real>(std::span<const Vec3>)>;

struct ContactParams {
  Real epsilon = 0.01;  // cluster threshold on the signed distance
  int grid_res = 128;

  void validate() const {
    if (epsilon <= 0 || grid_res < 2)
      throw ConfigError("ContactParams: epsilon > 0 and grid_res >= 2");
  }
};

// Clusters plane-grid points whose deformed signed distance falls below
// epsilon and returns the two furthest-apart members. The plane is given by
// (normal, offset) in the normalized frame with points n.x = offset.
inline std::optional<ContactLine> detect_contact_line(
    const BatchSdf& sdf_batch, const Vec3& plane_normal, Real plane_offset,
    const ContactParams& params) {
  params.validate();
  Vec3 n = plane_normal.normalized();
  if (n.norm() == 0) throw ConfigError("detect_contact_line: zero normal");
  // in-plane basis
  Vec3 up = std::fabs(n.z) < 0.9 ? Vec3{0, 0, 1} : Vec3{1, 0, 0};
  Vec3 u = n.cross(up).normalized();
  Vec3 v = n.cross(u);
  Vec3 center = n * plane_offset;

  std::vector<Vec3> grid;
  grid.reserve(size_t(params.grid_res) * size_t(params.grid_res));
  Real span = 2.0;  // covers the [-1,1] cube cross-section
  for (int i = 0; i < params.grid_res; ++i)
    for (int j = 0; j < params.grid_res; ++j) {
      Real a = -span / 2 + span * (Real(i) + 0.5) / params.grid_res;
      Real b = -span / 2 + span * (Real(j) + 0.5) / params.grid_res;
      Vec3 p = center + u * a + v * b;
      if (std::fabs(p.x) > 1 || std::fabs(p.y) > 1 || std::fabs(p.z) > 1)
        continue;
      grid.push_back(p);
    }
  if (grid.empty()) return std::nullopt;

  std::vector<Real> sd = sdf_batch(grid);  // the single batched evaluation
  if (sd.size() != grid.size())
    throw NumericError("detect_contact_line: batch evaluator size mismatch");

  std::vector<Vec3> cluster;
  for (size_t i = 0; i < grid.size(); ++i) {
    Real s = std::max(sd[i], -params.epsilon);  // clamp below
    if (s <= params.epsilon) cluster.push_back(grid[i]);
  }
  if (cluster.empty()) return std::nullopt;

  // furthest pair; clusters are grid-bounded so brute force is fine
  size_t bi = 0, bj = 0;
  Real best = -1;
  for (size_t i = 0; i < cluster.size(); ++i)
    for (size_t j = i; j < cluster.size(); ++j) {
      Real d = (cluster[i] - cluster[j]).norm_sq();
      if (d > best) {
        best = d;
        bi = i;
        bj = j;
      }
    }
  ContactLine line;
  line.a = cluster[bi];
  line.b = cluster[bj];
  line.cluster = std::move(cluster);
  return line;
}

// Average endpoint error under the pairing (direct or swapped) that
// minimizes it.
inline Real contact_error(const ContactLine& detected,
                          const ContactLine& truth) {
  Real direct = (detected.a - truth.a).norm() + (detected.b - truth.b).norm();
  Real swapped = (detected.a - truth.b).norm() + (detected.b - truth.a).norm();
  return 0.5 * std::min(direct, swapped);
}

}  // namespace defo
