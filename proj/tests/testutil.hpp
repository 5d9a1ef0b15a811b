#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "oxfer/layout.hpp"

namespace oxfer::test {

namespace fs = std::filesystem;

// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = fs::temp_directory_path() /
            (tag + "-" + std::to_string(std::random_device{}()));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& sub) const { return path_ / sub; }

 private:
  fs::path path_;
};

inline void write_file(const fs::path& p, const std::string& bytes) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

// Deterministic content distinct per (seed, index).
inline std::string pseudo_bytes(uint64_t seed, size_t len) {
  std::mt19937_64 rng(seed);
  std::string out(len, '\0');
  for (size_t i = 0; i < len; ++i) out[i] = static_cast<char>(rng() & 0xff);
  return out;
}

// Writes `sizes[i]` pseudorandom bytes to numbered files under root and
// returns a manifest over them.
inline DatasetManifest make_dataset(const fs::path& root, const std::vector<uint64_t>& sizes,
                                    uint64_t object_size = 1 << 16,
                                    LayoutPolicy policy = LayoutPolicy{}) {
  fs::create_directories(root);
  for (size_t i = 0; i < sizes.size(); ++i) {
    char name[32];
    snprintf(name, sizeof(name), "f%03zu.bin", i);
    write_file(root / name, pseudo_bytes(1000 + i, sizes[i]));
  }
  if (policy.stripe_size == kDefaultObjectSize && policy.stripe_count == 1)
    policy.stripe_size = object_size;
  return build_manifest(root, object_size, policy);
}

// A FileSpec with no backing file, for pure-logic tests.
inline FileSpec spec_of(uint32_t id, uint64_t size, uint64_t stripe_size, uint32_t stripe_count,
                        std::vector<OstId> osts, const std::string& path = "") {
  FileSpec f;
  f.file_id = id;
  f.path = path.empty() ? "mem/f" + std::to_string(id) + ".bin" : path;
  f.size = size;
  f.mtime = 1700000000;
  f.stripe_size = stripe_size;
  f.stripe_count = stripe_count;
  f.ost_list = std::move(osts);
  return f;
}

}  // namespace oxfer::test
