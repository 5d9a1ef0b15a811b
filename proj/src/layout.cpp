#include "oxfer/layout.hpp"

#include <openssl/evp.h>
#include <sys/stat.h>

#include <algorithm>
#include <fstream>
#include <nlohmann/json.hpp>

#include "oxfer/errors.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace oxfer {

uint64_t FileSpec::object_count(uint64_t object_size) const {
  if (size == 0) return 0;
  return (size + object_size - 1) / object_size;
}

uint64_t DatasetManifest::total_objects() const {
  uint64_t n = 0;
  for (const auto& f : files) n += f.object_count(object_size);
  return n;
}

uint64_t DatasetManifest::total_bytes() const {
  uint64_t n = 0;
  for (const auto& f : files) n += f.size;
  return n;
}

const FileSpec* DatasetManifest::find(uint32_t file_id) const {
  if (file_id < files.size() && files[file_id].file_id == file_id) return &files[file_id];
  return nullptr;
}

OstId ost_of(const FileSpec& file, uint64_t object_size, uint64_t block_index) {
  if (block_index >= file.object_count(object_size))
    throw std::out_of_range("block_index past end of file");
  uint64_t offset = block_index * object_size;
  return file.ost_list[(offset / file.stripe_size) % file.stripe_count];
}

ObjectDescriptor object_at(const FileSpec& file, uint64_t object_size, uint64_t block_index) {
  ObjectDescriptor d;
  d.file_id = file.file_id;
  d.block_index = block_index;
  d.offset = block_index * object_size;
  d.length = std::min(object_size, file.size - d.offset);
  d.ost_id = ost_of(file, object_size, block_index);
  return d;
}

namespace {

uint64_t mtime_seconds(const fs::path& p) {
  struct stat st{};
  if (::stat(p.c_str(), &st) != 0) throw IoError("stat failed: " + p.string());
  return static_cast<uint64_t>(st.st_mtime);
}

}  // namespace

DatasetManifest build_manifest(const fs::path& root, uint64_t object_size,
                               const LayoutPolicy& policy) {
  if (object_size == 0) throw ConfigError("object_size must be positive");
  if (policy.stripe_size == 0) throw ConfigError("stripe_size must be positive");
  if (policy.stripe_count == 0) throw ConfigError("stripe_count must be positive");

  std::vector<OstId> pool = policy.ost_pool;
  if (pool.empty()) {
    pool.resize(kDefaultOstPoolSize);
    for (uint32_t i = 0; i < kDefaultOstPoolSize; ++i) pool[i] = i;
  }
  if (policy.stripe_count > pool.size())
    throw ConfigError("stripe_count exceeds OST pool size");

  std::error_code ec;
  if (!fs::is_directory(root, ec)) throw ConfigError("dataset root is not a readable directory: " + root.string());

  std::vector<std::pair<std::string, fs::path>> entries;
  for (auto it = fs::recursive_directory_iterator(root, ec); it != fs::recursive_directory_iterator();
       it.increment(ec)) {
    if (ec) throw IoError("cannot read dataset root: " + ec.message());
    if (!it->is_regular_file()) continue;
    std::string rel = fs::relative(it->path(), root).generic_string();
    if (rel.find(',') != std::string::npos || rel.find('\n') != std::string::npos)
      throw ConfigError("unsupported character in dataset path: " + rel);
    entries.emplace_back(std::move(rel), it->path());
  }
  if (ec) throw IoError("cannot read dataset root: " + ec.message());
  if (entries.empty()) throw ConfigError("empty dataset: " + root.string());

  std::sort(entries.begin(), entries.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  DatasetManifest m;
  m.root = root.string();
  m.object_size = object_size;
  m.files.reserve(entries.size());
  for (uint32_t id = 0; id < entries.size(); ++id) {
    const auto& [rel, abs] = entries[id];
    FileSpec f;
    f.file_id = id;
    f.path = rel;
    f.size = fs::file_size(abs);
    f.mtime = mtime_seconds(abs);
    f.stripe_size = policy.stripe_size;
    f.stripe_count = policy.stripe_count;
    f.ost_list.reserve(policy.stripe_count);
    for (uint32_t s = 0; s < policy.stripe_count; ++s)
      f.ost_list.push_back(pool[(id + s) % pool.size()]);
    m.files.push_back(std::move(f));
  }
  return m;
}

std::string manifest_to_json(const DatasetManifest& m) {
  ordered_json j;
  j["root"] = m.root;
  j["object_size"] = m.object_size;
  j["files"] = ordered_json::array();
  for (const auto& f : m.files) {
    ordered_json jf;
    jf["file_id"] = f.file_id;
    jf["path"] = f.path;
    jf["size"] = f.size;
    jf["mtime"] = f.mtime;
    jf["stripe_size"] = f.stripe_size;
    jf["stripe_count"] = f.stripe_count;
    jf["ost_list"] = f.ost_list;
    j["files"].push_back(std::move(jf));
  }
  return j.dump(2) + "\n";
}

DatasetManifest manifest_from_json(const std::string& text) {
  DatasetManifest m;
  try {
    auto j = ordered_json::parse(text);
    m.root = j.at("root").get<std::string>();
    m.object_size = j.at("object_size").get<uint64_t>();
    for (const auto& jf : j.at("files")) {
      FileSpec f;
      f.file_id = jf.at("file_id").get<uint32_t>();
      f.path = jf.at("path").get<std::string>();
      f.size = jf.at("size").get<uint64_t>();
      f.mtime = jf.at("mtime").get<uint64_t>();
      f.stripe_size = jf.at("stripe_size").get<uint64_t>();
      f.stripe_count = jf.at("stripe_count").get<uint32_t>();
      f.ost_list = jf.at("ost_list").get<std::vector<OstId>>();
      m.files.push_back(std::move(f));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed manifest: ") + e.what());
  }
  for (size_t i = 0; i < m.files.size(); ++i)
    if (m.files[i].file_id != i) throw ConfigError("manifest file_ids not contiguous");
  return m;
}

void save_manifest(const DatasetManifest& m, const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write manifest: " + path.string());
  out << manifest_to_json(m);
}

DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read manifest: " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return manifest_from_json(text);
}

std::string sha256_hex(const void* data, size_t len) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int digest_len = 0;
  EVP_Digest(data, len, digest, &digest_len, EVP_sha256(), nullptr);
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(digest_len * 2);
  for (unsigned int i = 0; i < digest_len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read file for digest: " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  std::vector<char> buf(1 << 20);
  while (in) {
    in.read(buf.data(), buf.size());
    if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf.data(), static_cast<size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int digest_len = 0;
  EVP_DigestFinal_ex(ctx, digest, &digest_len);
  EVP_MD_CTX_free(ctx);
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(digest_len * 2);
  for (unsigned int i = 0; i < digest_len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

std::string manifest_checksum(const DatasetManifest& m) {
  // Root path deliberately excluded: moving an unchanged dataset keeps the pin.
  DatasetManifest copy = m;
  copy.root.clear();
  std::string canon = manifest_to_json(copy);
  return sha256_hex(canon.data(), canon.size());
}

}  // namespace oxfer
