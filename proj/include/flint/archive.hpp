#pragma once

// On-disk ensemble archive:
//
//   <root>/manifest.json
//   <root>/<member_id>/<field>/t<6-digit index>.raw
//
// Raw payloads are little-endian float32, row-major, channels first.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "flint/tensor.hpp"
#include "flint/types.hpp"

namespace flint {

inline constexpr int kArchiveVersion = 1;

struct FieldSpec {
  std::string dtype = "f32";
  int channels = 1;
};

struct MemberInfo {
  std::string id;
  int timesteps = 0;
  int first = 0;  // first valid index; frames cover [first, timesteps)
  nlohmann::json params = nlohmann::json::object();
  // (field, t) pairs declared absent, e.g. flow at the final stored frame.
  std::set<std::pair<std::string, int>> missing;

  bool has(const std::string& field, int t) const {
    return t >= first && t < timesteps && !missing.count({field, t});
  }
};

struct Manifest {
  int version = kArchiveVersion;
  int dims = 2;
  std::vector<int> shape;
  std::map<std::string, FieldSpec> fields;
  std::vector<MemberInfo> members;
  std::map<std::string, std::pair<double, double>> normalization;
  std::uint64_t seed = 0;
  nlohmann::json provenance = nlohmann::json::object();

  Grid grid() const { return Grid::from_shape(shape); }
  const MemberInfo& member(const std::string& id) const;
  MemberInfo& member(const std::string& id);
  bool has_field(const std::string& name) const { return fields.count(name) > 0; }

  // Throws LoadError(kInvalidManifest / kVersionMismatch) on violations.
  void validate() const;

  nlohmann::json to_json() const;
  static Manifest from_json(const nlohmann::json& j);
};

std::filesystem::path field_path(const std::filesystem::path& root, const std::string& member,
                                 const std::string& field, int t);

// Read-only view of an archive; fields are loaded on demand.
class EnsembleArchive {
 public:
  static EnsembleArchive open(const std::filesystem::path& root);

  const Manifest& manifest() const { return manifest_; }
  const std::filesystem::path& root() const { return root_; }
  Grid grid() const { return manifest_.grid(); }

  bool has(const std::string& member, const std::string& field, int t) const;
  FieldF read(const std::string& member, const std::string& field, int t) const;

  // Reads a field and maps it through the manifest normalization.
  FieldF read_normalized(const std::string& member, const std::string& field, int t) const;

  // Checks that every declared (member, field, t) resolves to a file of the
  // right size.
  void verify() const;

 private:
  std::filesystem::path root_;
  Manifest manifest_;
};

// Single writer for a new or existing archive directory. Holds a lock file
// until finish(); a second writer fails with ConflictError.
class ArchiveWriter {
 public:
  ArchiveWriter(const std::filesystem::path& root, Manifest manifest, bool overwrite = false);
  ~ArchiveWriter();
  ArchiveWriter(const ArchiveWriter&) = delete;
  ArchiveWriter& operator=(const ArchiveWriter&) = delete;

  Manifest& manifest() { return manifest_; }

  void write(const std::string& member, const std::string& field, int t, const FieldF& values);

  // Observed value range per field over everything written so far.
  std::optional<std::pair<double, double>> observed_range(const std::string& field) const;

  // Writes manifest.json (fills missing normalization entries from the
  // observed ranges) and releases the lock.
  void finish();

 private:
  std::filesystem::path root_;
  Manifest manifest_;
  std::set<std::tuple<std::string, std::string, int>> written_;
  std::map<std::string, std::pair<double, double>> observed_;
  bool finished_ = false;
};

// Raw float32 little-endian helpers.
void write_raw_f32(const std::filesystem::path& path, const float* data, std::size_t count);
std::vector<float> read_raw_f32(const std::filesystem::path& path);

// Writes `text` to `path` through a temporary file and rename.
void write_text_atomic(const std::filesystem::path& path, const std::string& text);

}  // namespace flint
