#pragma once

#include <bit>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>

#include <nlohmann/json.hpp>

#include "defo/geometry.hpp"

namespace defo {

using Json = nlohmann::json;

// ---------------------------------------------------------------------------
// Binary blob container: versioned header followed by named, shape-prefixed
// little-endian float64 arrays. Host is assumed little-endian (checked).
// ---------------------------------------------------------------------------
namespace blob {

constexpr uint32_t kMagic = 0x4f464544;  // "DEFO"
constexpr uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "blob format is little-endian");

struct Array {
  std::vector<uint64_t> dims;
  std::vector<Real> data;
};

class Writer {
 public:
  void add(const std::string& name, std::vector<uint64_t> dims,
           std::vector<Real> data) {
    uint64_t want = 1;
    for (uint64_t d : dims) want *= d;
    if (want != data.size())
      throw IoError("blob array '" + name + "': dims/data mismatch");
    arrays_[name] = Array{std::move(dims), std::move(data)};
  }

  void add_vec3(const std::string& name, std::span<const Vec3> pts) {
    std::vector<Real> flat;
    flat.reserve(pts.size() * 3);
    for (const Vec3& p : pts) {
      flat.push_back(p.x);
      flat.push_back(p.y);
      flat.push_back(p.z);
    }
    add(name, {pts.size(), 3}, std::move(flat));
  }

  void add_scalar(const std::string& name, Real v) { add(name, {1}, {v}); }

  std::string serialize() const {
    std::string out;
    auto put_u32 = [&](uint32_t v) { out.append((const char*)&v, 4); };
    auto put_u64 = [&](uint64_t v) { out.append((const char*)&v, 8); };
    put_u32(kMagic);
    put_u32(kVersion);
    put_u64(arrays_.size());
    for (const auto& [name, arr] : arrays_) {
      put_u64(name.size());
      out.append(name);
      put_u64(arr.dims.size());
      for (uint64_t d : arr.dims) put_u64(d);
      put_u64(arr.data.size());
      out.append((const char*)arr.data.data(), arr.data.size() * sizeof(Real));
    }
    return out;
  }

 private:
  std::map<std::string, Array> arrays_;
};

class Reader {
 public:
  explicit Reader(std::string bytes) : bytes_(std::move(bytes)) {
    uint32_t magic = get_u32();
    if (magic != kMagic) throw FormatError("blob: bad magic header");
    uint32_t version = get_u32();
    if (version != kVersion)
      throw FormatError("blob: unsupported version " + std::to_string(version));
    uint64_t count = get_u64();
    for (uint64_t i = 0; i < count; ++i) {
      uint64_t name_len = get_u64();
      std::string name = get_bytes(name_len, "array name");
      Array arr;
      uint64_t ndim = get_u64();
      if (ndim > 8) throw FormatError("blob: implausible rank in " + name);
      uint64_t want = 1;
      for (uint64_t d = 0; d < ndim; ++d) {
        arr.dims.push_back(get_u64());
        want *= arr.dims.back();
      }
      uint64_t n = get_u64();
      if (n != want) throw FormatError("blob: dims/count mismatch in " + name);
      std::string raw = get_bytes(n * sizeof(Real), name);
      arr.data.resize(n);
      std::memcpy(arr.data.data(), raw.data(), raw.size());
      arrays_[name] = std::move(arr);
    }
  }

  bool has(const std::string& name) const { return arrays_.count(name) > 0; }

  const Array& get(const std::string& name) const {
    auto it = arrays_.find(name);
    if (it == arrays_.end())
      throw FormatError("blob: missing array '" + name + "'");
    return it->second;
  }

  std::vector<Vec3> get_vec3(const std::string& name) const {
    const Array& a = get(name);
    if (a.dims.size() != 2 || a.dims[1] != 3)
      throw FormatError("blob: '" + name + "' is not Nx3");
    std::vector<Vec3> out(a.dims[0]);
    for (size_t i = 0; i < out.size(); ++i)
      out[i] = {a.data[i * 3], a.data[i * 3 + 1], a.data[i * 3 + 2]};
    return out;
  }

  Real get_scalar(const std::string& name) const {
    const Array& a = get(name);
    if (a.data.size() != 1)
      throw FormatError("blob: '" + name + "' is not a scalar");
    return a.data[0];
  }

 private:
  uint32_t get_u32() {
    if (pos_ + 4 > bytes_.size()) throw FormatError("blob: truncated header");
    uint32_t v;
    std::memcpy(&v, bytes_.data() + pos_, 4);
    pos_ += 4;
    return v;
  }
  uint64_t get_u64() {
    if (pos_ + 8 > bytes_.size()) throw FormatError("blob: truncated field");
    uint64_t v;
    std::memcpy(&v, bytes_.data() + pos_, 8);
    pos_ += 8;
    return v;
  }
  std::string get_bytes(uint64_t n, const std::string& what) {
    if (pos_ + n > bytes_.size())
      throw FormatError("blob: truncated payload at " + what);
    std::string out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  std::string bytes_;
  size_t pos_ = 0;
  std::map<std::string, Array> arrays_;
};

}  // namespace blob

// ---------------------------------------------------------------------------
// Atomic file writes (temp + rename) so failed runs never leave partial
// artifacts behind.
// ---------------------------------------------------------------------------
inline void write_file_atomic(const std::filesystem::path& path,
                              std::string_view bytes) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(path.parent_path(), ec);
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for write: " + tmp.string());
    f.write(bytes.data(), long(bytes.size()));
    if (!f) throw IoError("write failed: " + tmp.string());
  }
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("rename failed: " + path.string() + ": " + ec.message());
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path.string());
  std::string out((std::istreambuf_iterator<char>(f)),
                  std::istreambuf_iterator<char>());
  return out;
}

inline Json read_json_file(const std::filesystem::path& path) {
  try {
    return Json::parse(read_file(path));
  } catch (const Json::parse_error& e) {
    throw FormatError("invalid JSON in " + path.string() + ": " + e.what());
  }
}

// FNV-1a over the canonical (sorted-key) JSON dump. Artifacts embed this so
// mismatched runs are never merged.
inline uint64_t config_hash(const Json& j) {
  std::string s = j.dump();
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hash_hex(uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", (unsigned long long)h);
  return buf;
}

}  // namespace defo
