#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace defo {

using Real = double;

// ---------------------------------------------------------------------------
// Error taxonomy. The CLI maps these to distinct exit codes (see cli.hpp):
// config=2, data=3, numeric=4, io=5.
// ---------------------------------------------------------------------------
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DegeneracyError : DataError {
  using DataError::DataError;
};
struct GenerationError : DataError {
  using DataError::DataError;
};
struct FormatError : IoError {
  using IoError::IoError;
};
struct StaleTapeError : NumericError {
  using NumericError::NumericError;
};
struct ReconstructionError : NumericError {
  using NumericError::NumericError;
};

// ---------------------------------------------------------------------------
// Small fixed-size linear algebra. Everything desk-scale runs on doubles.
// ---------------------------------------------------------------------------
struct Vec3 {
  Real x = 0, y = 0, z = 0;

  Real& operator[](int i) { return (&x)[i]; }
  Real operator[](int i) const { return (&x)[i]; }

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(Real s) const { return {x * s, y * s, z * s}; }
  Vec3 operator/(Real s) const { return {x / s, y / s, z / s}; }
  Vec3 operator-() const { return {-x, -y, -z}; }
  Vec3& operator+=(const Vec3& o) {
    x += o.x;
    y += o.y;
    z += o.z;
    return *this;
  }
  Vec3& operator-=(const Vec3& o) {
    x -= o.x;
    y -= o.y;
    z -= o.z;
    return *this;
  }

  Real dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  Vec3 cross(const Vec3& o) const {
    return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
  }
  Real norm_sq() const { return dot(*this); }
  Real norm() const { return std::sqrt(norm_sq()); }
  Vec3 normalized() const {
    Real n = norm();
    return n > 0 ? *this / n : Vec3{};
  }
  bool finite() const {
    return std::isfinite(x) && std::isfinite(y) && std::isfinite(z);
  }
};

inline Vec3 operator*(Real s, const Vec3& v) { return v * s; }

inline Vec3 min3(const Vec3& a, const Vec3& b) {
  return {std::min(a.x, b.x), std::min(a.y, b.y), std::min(a.z, b.z)};
}
inline Vec3 max3(const Vec3& a, const Vec3& b) {
  return {std::max(a.x, b.x), std::max(a.y, b.y), std::max(a.z, b.z)};
}

// Row-major 3x3 rotation (local frames of primitives).
struct Mat3 {
  std::array<Real, 9> m = {1, 0, 0, 0, 1, 0, 0, 0, 1};

  static Mat3 identity() { return {}; }
  static Mat3 rot_y(Real a) {
    Mat3 r;
    Real c = std::cos(a), s = std::sin(a);
    r.m = {c, 0, s, 0, 1, 0, -s, 0, c};
    return r;
  }
  static Mat3 rot_z(Real a) {
    Mat3 r;
    Real c = std::cos(a), s = std::sin(a);
    r.m = {c, -s, 0, s, c, 0, 0, 0, 1};
    return r;
  }

  Vec3 apply(const Vec3& v) const {
    return {m[0] * v.x + m[1] * v.y + m[2] * v.z,
            m[3] * v.x + m[4] * v.y + m[5] * v.z,
            m[6] * v.x + m[7] * v.y + m[8] * v.z};
  }
  // R^T v (inverse rotation for pure rotations)
  Vec3 apply_transposed(const Vec3& v) const {
    return {m[0] * v.x + m[3] * v.y + m[6] * v.z,
            m[1] * v.x + m[4] * v.y + m[7] * v.z,
            m[2] * v.x + m[5] * v.y + m[8] * v.z};
  }
};

using Vec6 = std::array<Real, 6>;

inline Vec6 vec6_zero() { return {0, 0, 0, 0, 0, 0}; }

inline bool all_finite(std::span<const Real> v) {
  for (Real x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

inline void require_finite(std::span<const Real> v, const std::string& what) {
  if (!all_finite(v)) throw NumericError(what + ": non-finite value");
}

// ---------------------------------------------------------------------------
// Deterministic RNG. splitmix64 core with Box-Muller normals; `fork` derives
// independent streams so concurrent call sites stay reproducible.
// ---------------------------------------------------------------------------
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // [0, 1)
  Real uniform() { return Real(next_u64() >> 11) * 0x1.0p-53; }
  Real uniform(Real lo, Real hi) { return lo + (hi - lo) * uniform(); }

  int uniform_int(int n) {  // [0, n)
    return int(next_u64() % uint64_t(n));
  }

  Real normal() {
    Real u1 = uniform();
    while (u1 <= 0) u1 = uniform();
    Real u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }
  Real normal(Real mean, Real stddev) { return mean + stddev * normal(); }

  Vec3 normal_vec3(Real stddev) {
    return {normal(0, stddev), normal(0, stddev), normal(0, stddev)};
  }

  void fill_normal(std::span<Real> out, Real mean, Real stddev) {
    for (Real& x : out) x = normal(mean, stddev);
  }

  // Derived stream; does not advance this generator.
  Rng fork(uint64_t stream) const {
    uint64_t s = state_ ^ (0x632be59bd9b4e019ULL * (stream + 1));
    s += 0x9e3779b97f4a7c15ULL;
    s = (s ^ (s >> 30)) * 0xbf58476d1ce4e5b9ULL;
    s = (s ^ (s >> 27)) * 0x94d049bb133111ebULL;
    return Rng(s ^ (s >> 31));
  }

 private:
  uint64_t state_;
};

}  // namespace defo
