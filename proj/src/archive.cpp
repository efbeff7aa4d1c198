#include "flint/archive.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace flint {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kLockName = ".writer.lock";

LoadError invalid(const std::string& what) { return LoadError(LoadError::Kind::kInvalidManifest, "manifest: " + what); }

std::uint32_t bswap32(std::uint32_t v) {
  return (v >> 24) | ((v >> 8) & 0xff00u) | ((v << 8) & 0xff0000u) | (v << 24);
}

}  // namespace

const MemberInfo& Manifest::member(const std::string& id) const {
  for (const auto& m : members) {
    if (m.id == id) return m;
  }
  throw ContractError("archive has no member '" + id + "'");
}

MemberInfo& Manifest::member(const std::string& id) {
  return const_cast<MemberInfo&>(static_cast<const Manifest&>(*this).member(id));
}

void Manifest::validate() const {
  if (version != kArchiveVersion) {
    throw LoadError(LoadError::Kind::kVersionMismatch,
                    "manifest version " + std::to_string(version) + ", expected " + std::to_string(kArchiveVersion));
  }
  if (dims != 2 && dims != 3) throw invalid("dims must be 2 or 3");
  if (static_cast<int>(shape.size()) != dims) throw invalid("shape length does not match dims");
  for (int s : shape) {
    if (s <= 0) throw invalid("shape entries must be positive");
  }
  if (fields.empty()) throw invalid("no fields registered");
  for (const auto& [name, spec] : fields) {
    if (spec.dtype != "f32") throw invalid("field '" + name + "' has unsupported dtype '" + spec.dtype + "'");
    if (spec.channels != 1 && spec.channels != dims) {
      throw invalid("field '" + name + "' has " + std::to_string(spec.channels) + " channels in a " +
                    std::to_string(dims) + "D archive");
    }
    if (name.rfind("flow", 0) == 0 && spec.channels != dims) {
      throw invalid("flow field '" + name + "' must have " + std::to_string(dims) + " channels");
    }
    auto it = normalization.find(name);
    if (it == normalization.end()) throw invalid("missing normalization for field '" + name + "'");
    if (!(it->second.first < it->second.second)) throw invalid("normalization min >= max for '" + name + "'");
  }
  std::set<std::string> ids;
  for (const auto& m : members) {
    if (m.id.empty() || m.id.find('/') != std::string::npos) throw invalid("bad member id '" + m.id + "'");
    if (!ids.insert(m.id).second) throw invalid("duplicate member id '" + m.id + "'");
    if (m.timesteps < 0 || m.first < 0 || m.first > m.timesteps) throw invalid("bad timestep range for '" + m.id + "'");
  }
}

json Manifest::to_json() const {
  json j;
  j["version"] = version;
  j["dims"] = dims;
  j["shape"] = shape;
  json jf = json::object();
  for (const auto& [name, spec] : fields) jf[name] = {{"dtype", spec.dtype}, {"channels", spec.channels}};
  j["fields"] = jf;
  json jm = json::array();
  for (const auto& m : members) {
    json e{{"id", m.id}, {"timesteps", m.timesteps}, {"params", m.params}};
    if (m.first != 0) e["first"] = m.first;
    if (!m.missing.empty()) {
      json miss = json::array();
      for (const auto& [f, t] : m.missing) miss.push_back({{"field", f}, {"t", t}});
      e["missing"] = miss;
    }
    jm.push_back(e);
  }
  j["members"] = jm;
  json jn = json::object();
  for (const auto& [name, range] : normalization) jn[name] = {range.first, range.second};
  j["normalization"] = jn;
  j["seed"] = seed;
  if (!provenance.empty()) j["provenance"] = provenance;
  return j;
}

Manifest Manifest::from_json(const json& j) {
  Manifest m;
  try {
    if (!j.is_object()) throw invalid("top level must be an object");
    for (const char* key : {"version", "dims", "shape", "fields", "members", "normalization", "seed"}) {
      if (!j.contains(key)) throw invalid(std::string("missing key '") + key + "'");
    }
    m.version = j.at("version").get<int>();
    if (m.version != kArchiveVersion) {
      throw LoadError(LoadError::Kind::kVersionMismatch, "manifest version " + std::to_string(m.version) +
                                                             ", expected " + std::to_string(kArchiveVersion));
    }
    m.dims = j.at("dims").get<int>();
    m.shape = j.at("shape").get<std::vector<int>>();
    for (const auto& [name, spec] : j.at("fields").items()) {
      m.fields[name] = FieldSpec{spec.value("dtype", std::string("f32")), spec.at("channels").get<int>()};
    }
    for (const auto& e : j.at("members")) {
      MemberInfo mi;
      mi.id = e.at("id").get<std::string>();
      mi.timesteps = e.at("timesteps").get<int>();
      mi.first = e.value("first", 0);
      mi.params = e.value("params", json::object());
      if (e.contains("missing")) {
        for (const auto& x : e.at("missing")) mi.missing.insert({x.at("field").get<std::string>(), x.at("t").get<int>()});
      }
      m.members.push_back(std::move(mi));
    }
    for (const auto& [name, range] : j.at("normalization").items()) {
      if (!range.is_array() || range.size() != 2) throw invalid("normalization entry for '" + name + "' must be [min,max]");
      m.normalization[name] = {range[0].get<double>(), range[1].get<double>()};
    }
    m.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("provenance")) m.provenance = j.at("provenance");
  } catch (const json::exception& e) {
    throw invalid(e.what());
  }
  m.validate();
  return m;
}

fs::path field_path(const fs::path& root, const std::string& member, const std::string& field, int t) {
  char name[32];
  std::snprintf(name, sizeof name, "t%06d.raw", t);
  return root / member / field / name;
}

void write_raw_f32(const fs::path& path, const float* data, std::size_t count) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * sizeof(float)));
  } else {
    std::vector<std::uint32_t> buf(count);
    for (std::size_t i = 0; i < count; ++i) buf[i] = bswap32(std::bit_cast<std::uint32_t>(data[i]));
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(count * sizeof(float)));
  }
  if (!out) throw IoError("short write to '" + path.string() + "'");
}

std::vector<float> read_raw_f32(const fs::path& path) {
  std::error_code ec;
  const auto bytes = fs::file_size(path, ec);
  if (ec) throw LoadError(LoadError::Kind::kMissingFile, "missing file '" + path.string() + "'");
  if (bytes % sizeof(float) != 0) throw LoadError(LoadError::Kind::kShapeMismatch, "'" + path.string() + "' is not float32");
  std::vector<float> v(bytes / sizeof(float));
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError(LoadError::Kind::kMissingFile, "cannot open '" + path.string() + "'");
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(bytes));
  if (!in) throw IoError("short read from '" + path.string() + "'");
  if constexpr (std::endian::native != std::endian::little) {
    for (auto& x : v) x = std::bit_cast<float>(bswap32(std::bit_cast<std::uint32_t>(x)));
  }
  return v;
}

void write_text_atomic(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw IoError("cannot write '" + tmp.string() + "'");
    out << text;
    if (!out) throw IoError("short write to '" + tmp.string() + "'");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename '" + tmp.string() + "': " + ec.message());
}

EnsembleArchive EnsembleArchive::open(const fs::path& root) {
  const fs::path mpath = root / "manifest.json";
  std::ifstream in(mpath);
  if (!in) throw LoadError(LoadError::Kind::kMissingFile, "no manifest at '" + mpath.string() + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw LoadError(LoadError::Kind::kInvalidManifest, "manifest is not valid JSON: " + std::string(e.what()));
  }
  EnsembleArchive a;
  a.root_ = root;
  a.manifest_ = Manifest::from_json(j);
  return a;
}

bool EnsembleArchive::has(const std::string& member, const std::string& field, int t) const {
  if (!manifest_.has_field(field)) return false;
  for (const auto& m : manifest_.members) {
    if (m.id == member) return m.has(field, t);
  }
  return false;
}

FieldF EnsembleArchive::read(const std::string& member, const std::string& field, int t) const {
  auto it = manifest_.fields.find(field);
  if (it == manifest_.fields.end()) throw ContractError("archive has no field '" + field + "'");
  if (!manifest_.member(member).has(field, t)) {
    throw ContractError("field '" + field + "' of member '" + member + "' has no frame " + std::to_string(t));
  }
  const Grid g = grid();
  const fs::path path = field_path(root_, member, field, t);
  std::vector<float> v = read_raw_f32(path);
  const std::size_t expect = static_cast<std::size_t>(it->second.channels) * g.cells();
  if (v.size() != expect) {
    throw LoadError(LoadError::Kind::kShapeMismatch, "'" + path.string() + "' holds " + std::to_string(v.size()) +
                                                         " values, expected " + std::to_string(expect));
  }
  return FieldF(it->second.channels, g, std::move(v));
}

FieldF EnsembleArchive::read_normalized(const std::string& member, const std::string& field, int t) const {
  const auto& [lo, hi] = manifest_.normalization.at(field);
  return normalize_field(read(member, field, t), lo, hi);
}

void EnsembleArchive::verify() const {
  const Grid g = grid();
  for (const auto& m : manifest_.members) {
    for (const auto& [name, spec] : manifest_.fields) {
      for (int t = m.first; t < m.timesteps; ++t) {
        if (!m.has(name, t)) continue;
        const fs::path path = field_path(root_, m.id, name, t);
        std::error_code ec;
        const auto bytes = fs::file_size(path, ec);
        if (ec) throw LoadError(LoadError::Kind::kMissingFile, "missing file '" + path.string() + "'");
        if (bytes != static_cast<std::uintmax_t>(spec.channels) * g.cells() * sizeof(float)) {
          throw LoadError(LoadError::Kind::kShapeMismatch, "'" + path.string() + "' has wrong size");
        }
      }
    }
  }
}

ArchiveWriter::ArchiveWriter(const fs::path& root, Manifest manifest, bool overwrite)
    : root_(root), manifest_(std::move(manifest)) {
  std::error_code ec;
  if (fs::exists(root_ / kLockName)) throw ConflictError("archive '" + root_.string() + "' is locked by another writer");
  if (!overwrite && fs::exists(root_ / "manifest.json")) {
    throw ConflictError("archive '" + root_.string() + "' already exists");
  }
  if (overwrite && fs::exists(root_)) {
    fs::remove_all(root_, ec);
    if (ec) throw IoError("cannot clear '" + root_.string() + "': " + ec.message());
  }
  fs::create_directories(root_, ec);
  if (ec) throw IoError("cannot create '" + root_.string() + "': " + ec.message());
  const int fd = ::open((root_ / kLockName).c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    if (errno == EEXIST) throw ConflictError("archive '" + root_.string() + "' is locked by another writer");
    throw IoError("cannot create lock in '" + root_.string() + "'");
  }
  ::close(fd);
}

ArchiveWriter::~ArchiveWriter() {
  if (!finished_) {
    std::error_code ec;
    fs::remove(root_ / kLockName, ec);
  }
}

void ArchiveWriter::write(const std::string& member, const std::string& field, int t, const FieldF& values) {
  if (finished_) throw ContractError("archive writer already finished");
  auto it = manifest_.fields.find(field);
  if (it == manifest_.fields.end()) throw ContractError("field '" + field + "' is not registered in the manifest");
  const Grid g = manifest_.grid();
  if (!(values.grid() == g) || values.channels() != it->second.channels) {
    throw ContractError("write of '" + field + "': got " + std::to_string(values.channels()) + "x" +
                        values.grid().to_string() + ", manifest expects " + std::to_string(it->second.channels) + "x" +
                        g.to_string());
  }
  if (!written_.insert({member, field, t}).second) {
    throw ConflictError("field '" + field + "' of member '" + member + "' at t=" + std::to_string(t) + " written twice");
  }
  const fs::path path = field_path(root_, member, field, t);
  if (fs::exists(path)) throw ConflictError("'" + path.string() + "' already exists");
  std::error_code ec;
  fs::create_directories(path.parent_path(), ec);
  if (ec) throw IoError("cannot create '" + path.parent_path().string() + "': " + ec.message());
  write_raw_f32(path, values.data(), values.size());

  auto [lo_it, lo_hi] = std::minmax_element(values.values().begin(), values.values().end());
  auto& range = observed_.try_emplace(field, *lo_it, *lo_hi).first->second;
  range.first = std::min<double>(range.first, *lo_it);
  range.second = std::max<double>(range.second, *lo_hi);
}

std::optional<std::pair<double, double>> ArchiveWriter::observed_range(const std::string& field) const {
  auto it = observed_.find(field);
  if (it == observed_.end()) return std::nullopt;
  return it->second;
}

void ArchiveWriter::finish() {
  if (finished_) return;
  for (const auto& [name, spec] : manifest_.fields) {
    if (manifest_.normalization.count(name)) continue;
    auto range = observed_range(name).value_or(std::pair<double, double>{0.0, 1.0});
    // A constant field still needs a usable range.
    if (!(range.first < range.second)) range.second = range.first + 1.0;
    manifest_.normalization[name] = range;
  }
  manifest_.validate();
  write_text_atomic(root_ / "manifest.json", manifest_.to_json().dump(2) + "\n");
  std::error_code ec;
  fs::remove(root_ / kLockName, ec);
  finished_ = true;
}

}  // namespace flint
