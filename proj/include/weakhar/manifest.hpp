#ifndef WEAKHAR_MANIFEST_HPP
#define WEAKHAR_MANIFEST_HPP

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>
#include <openssl/evp.h>

#include "weakhar/error.hpp"
#include "weakhar/io.hpp"

namespace weakhar {

inline std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw StateError("SHA-256 computation failed");
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 0xF];
  }
  return out;
}

// Per-stage record: config hash, seeds and checksums of every artifact,
// keyed by path relative to the stage directory. No timestamps, so equal
// inputs give byte-identical manifests.
struct Manifest {
  std::string stage;
  std::string config_hash;
  std::vector<std::uint64_t> seeds;
  std::map<std::string, std::string> artifacts;

  nlohmann::json to_json() const {
    return {{"stage", stage}, {"config_hash", config_hash}, {"seeds", seeds}, {"artifacts", artifacts}};
  }
};

inline constexpr const char* kManifestFile = "manifest.json";

inline Manifest scan_stage(const std::filesystem::path& dir, std::string stage, std::string config_hash,
                           std::vector<std::uint64_t> seeds) {
  Manifest m{std::move(stage), std::move(config_hash), std::move(seeds), {}};
  if (!std::filesystem::exists(dir)) return m;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const auto rel = std::filesystem::relative(entry.path(), dir).generic_string();
    if (rel == kManifestFile) continue;
    m.artifacts[rel] = sha256_hex(io::read_file(entry.path()));
  }
  return m;
}

inline void write_manifest(const std::filesystem::path& dir, const Manifest& m) {
  io::write_file(dir / kManifestFile, m.to_json().dump(2) + "\n");
}

inline Manifest read_manifest(const std::filesystem::path& dir, const std::string& stage) {
  const auto path = dir / kManifestFile;
  if (!std::filesystem::exists(path))
    throw StateError("missing stage '" + stage + "': no " + path.string() + " (run `" + stage + "` first)");
  const auto j = nlohmann::json::parse(io::read_file(path), nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw FormatError("corrupt manifest " + path.string());
  Manifest m;
  m.stage = j.value("stage", "");
  m.config_hash = j.value("config_hash", "");
  m.seeds = j.value("seeds", std::vector<std::uint64_t>{});
  m.artifacts = j.value("artifacts", std::map<std::string, std::string>{});
  return m;
}

}  // namespace weakhar

#endif  // WEAKHAR_MANIFEST_HPP
