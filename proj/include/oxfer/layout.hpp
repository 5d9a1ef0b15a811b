#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace oxfer {

using OstId = uint32_t;

inline constexpr uint64_t kDefaultObjectSize = 1ull << 20;  // 1 MiB
inline constexpr uint32_t kDefaultOstPoolSize = 11;

// One file of the dataset with its simulated stripe placement. Immutable
// once the manifest is built; safe to share across threads.
struct FileSpec {
  uint32_t file_id = 0;
  std::string path;  // relative to the dataset root, '/'-separated
  uint64_t size = 0;
  uint64_t mtime = 0;  // seconds since epoch
  uint64_t stripe_size = kDefaultObjectSize;
  uint32_t stripe_count = 1;
  std::vector<OstId> ost_list;  // length == stripe_count, no duplicates

  // ceil(size / object_size); 0 for an empty file (complete immediately).
  uint64_t object_count(uint64_t object_size) const;

  bool operator==(const FileSpec&) const = default;
};

// One transfer unit: block K of a file, placed on one OST.
struct ObjectDescriptor {
  uint32_t file_id = 0;
  uint64_t block_index = 0;
  uint64_t offset = 0;
  uint64_t length = 0;
  OstId ost_id = 0;

  bool operator==(const ObjectDescriptor&) const = default;
};

struct LayoutPolicy {
  uint64_t stripe_size = kDefaultObjectSize;
  uint32_t stripe_count = 1;
  std::vector<OstId> ost_pool;  // defaults to {0..10} when empty
};

struct DatasetManifest {
  std::string root;
  uint64_t object_size = kDefaultObjectSize;
  std::vector<FileSpec> files;

  uint64_t total_objects() const;
  uint64_t total_bytes() const;
  const FileSpec* find(uint32_t file_id) const;
};

// Scans root and produces a deterministic manifest: files sorted
// lexicographically by relative path, file_ids assigned in that order,
// each file's ost_list rotated round-robin from ost_pool starting at
// file_id mod |ost_pool|.
DatasetManifest build_manifest(const std::filesystem::path& root, uint64_t object_size,
                               const LayoutPolicy& policy);

// ost_id of block K: ost_list[(offset / stripe_size) mod stripe_count].
OstId ost_of(const FileSpec& file, uint64_t object_size, uint64_t block_index);

ObjectDescriptor object_at(const FileSpec& file, uint64_t object_size, uint64_t block_index);

// Canonical serialization: one UTF-8 JSON document, fixed key order.
std::string manifest_to_json(const DatasetManifest& manifest);
DatasetManifest manifest_from_json(const std::string& text);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest load_manifest(const std::filesystem::path& path);

// SHA-256 (hex) over the canonical JSON of {object_size, files}; the root
// path is excluded so a relocated but unchanged dataset still matches.
std::string manifest_checksum(const DatasetManifest& manifest);

std::string sha256_hex(const void* data, size_t len);
std::string sha256_file(const std::filesystem::path& path);

}  // namespace oxfer
