#include "pssc/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <utility>

#include "json.hpp"
#include "pssc/error.hpp"

namespace pssc {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

constexpr const char* kFormat = "pssc-checkpoint";
constexpr int kVersion = 1;
constexpr const char* kGroups[] = {"generator", "discriminator", "recognizer"};

std::string tensor_file(const std::string& group, const std::string& name) { return group + "." + name + ".bin"; }

const ParameterTable<float>& model_group(const ModelBundle& b, const std::string& group) {
  if (group == "generator") return b.generator;
  if (group == "discriminator") return b.discriminator;
  if (group == "recognizer") return b.recognizer;
  throw IncompatibleCheckpoint("unknown parameter group '" + group + "'");
}

ParameterTable<float>& model_group(ModelBundle& b, const std::string& group) {
  return const_cast<ParameterTable<float>&>(model_group(std::as_const(b), group));
}

std::string base_group(const std::string& extra) {
  const auto dot = extra.find('.');
  if (dot == std::string::npos) throw IncompatibleCheckpoint("extra table '" + extra + "' lacks a model group suffix");
  return extra.substr(dot + 1);
}

json table_entries(const std::string& group, const ParameterTable<float>& table) {
  json arr = json::array();
  for (const auto& [name, p] : table) {
    arr.push_back({{"name", name}, {"file", tensor_file(group, name)}, {"shape", p.value.shape()}});
  }
  return arr;
}

void write_table(const fs::path& dir, const std::string& group, const ParameterTable<float>& table) {
  for (const auto& [name, p] : table) write_raw_f32((dir / tensor_file(group, name)).string(), p.value);
}

// Reads a group's tensors against the shapes of `reference`.
ParameterTable<float> read_table(const fs::path& dir, const std::string& group, const json& entries,
                                 const ParameterTable<float>& reference) {
  ParameterTable<float> out;
  std::size_t seen = 0;
  for (const auto& e : entries) {
    const std::string name = e.at("name").get<std::string>();
    const Shape shape = e.at("shape").get<Shape>();
    if (!reference.contains(name)) {
      throw IncompatibleCheckpoint(group + ": unexpected parameter '" + name + "' for this architecture");
    }
    const Shape& want = reference.at(name).value.shape();
    if (shape != want) {
      throw IncompatibleCheckpoint(group + "." + name + ": manifest shape " + shape_string(shape) +
                                   " but architecture implies " + shape_string(want));
    }
    out.add(name, read_raw_f32((dir / e.at("file").get<std::string>()).string(), shape));
    ++seen;
  }
  if (seen != reference.size()) {
    for (const auto& [name, p] : reference) {
      if (!out.contains(name)) throw IncompatibleCheckpoint(group + ": missing parameter '" + name + "'");
    }
  }
  return out;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

void write_raw_f32(const std::string& path, const Tensor<float>& t) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot create " + path);
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
  } else {
    for (float v : t.values()) {
      auto bits = std::bit_cast<std::uint32_t>(v);
      char bytes[4];
      for (int i = 0; i < 4; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
      out.write(bytes, 4);
    }
  }
  if (!out) throw IoError("write failed for " + path);
}

Tensor<float> read_raw_f32(const std::string& path, const Shape& shape) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw IoError("cannot open tensor file " + path);
  Tensor<float> t(shape);
  const auto bytes = static_cast<std::size_t>(in.tellg());
  if (bytes != t.size() * sizeof(float)) {
    throw IoError(path + ": expected " + std::to_string(t.size() * sizeof(float)) + " bytes for shape " +
                  shape_string(shape) + ", found " + std::to_string(bytes));
  }
  in.seekg(0);
  in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(bytes));
  if (!in) throw IoError("read failed for " + path);
  if constexpr (std::endian::native != std::endian::little) {
    for (float& v : t.storage()) {
      auto bits = std::bit_cast<std::uint32_t>(v);
      v = std::bit_cast<float>(__builtin_bswap32(bits));
    }
  }
  return t;
}

void require_compatible(const ArchConfig& expected, const ArchConfig& found) {
  if (expected == found) return;
  std::string diff;
  auto note = [&](const char* field, const auto& a, const auto& b) {
    if (a != b) {
      std::ostringstream ss;
      ss << field << " (expected " << a << ", found " << b << ")";
      diff += (diff.empty() ? "" : ", ") + ss.str();
    }
  };
  note("latent_dim", expected.latent_dim, found.latent_dim);
  note("num_rects", expected.num_rects, found.num_rects);
  note("resolution", expected.resolution, found.resolution);
  note("mask_mode", to_string(expected.mask_mode), to_string(found.mask_mode));
  note("kind", to_string(expected.kind), to_string(found.kind));
  if (diff.empty()) diff = "channel layout or fixture settings";
  throw IncompatibleCheckpoint("checkpoint architecture mismatch: " + diff);
}

void write_checkpoint(const std::string& dir, const CheckpointContents& c) {
  const fs::path target(dir);
  const fs::path staging = target.string() + ".partial";
  std::error_code ec;
  fs::remove_all(staging, ec);
  if (!fs::create_directories(staging, ec) && ec) {
    throw IoError("cannot create " + staging.string() + ": " + ec.message());
  }

  json tensors = json::object();
  for (const char* g : kGroups) {
    const auto& table = model_group(c.bundle, g);
    tensors[g] = table_entries(g, table);
    write_table(staging, g, table);
  }
  for (const auto& [group, table] : c.extra_tables) {
    const auto& ref = model_group(c.bundle, base_group(group));
    for (const auto& [name, p] : table) {
      if (!ref.contains(name) || ref.at(name).value.shape() != p.value.shape()) {
        throw std::invalid_argument("extra table " + group + " does not mirror its model group at '" + name + "'");
      }
    }
    tensors[group] = table_entries(group, table);
    write_table(staging, group, table);
  }

  json m = {{"format", kFormat},
            {"version", kVersion},
            {"dtype", "float32"},
            {"byte_order", "little"},
            {"layout", "row-major"},
            {"arch", json::parse(arch_to_json(c.bundle.arch))},
            {"step", c.step},
            {"images_seen", c.images_seen},
            {"seed", c.seed},
            {"tensors", tensors},
            {"rng_states", c.rng_states}};
  if (!c.train_config_json.empty()) m["train_config"] = json::parse(c.train_config_json);
  if (!c.extra_state_json.empty()) m["state"] = json::parse(c.extra_state_json);
  {
    std::ofstream out(staging / "manifest.json", std::ios::trunc);
    if (!out) throw IoError("cannot write manifest in " + staging.string());
    out << m.dump(2) << '\n';
    if (!out) throw IoError("write failed for manifest in " + staging.string());
  }

  fs::remove_all(target, ec);
  if (ec) throw IoError("cannot replace " + target.string() + ": " + ec.message());
  fs::rename(staging, target, ec);
  if (ec) throw IoError("cannot move checkpoint into " + target.string() + ": " + ec.message());
}

CheckpointContents read_checkpoint(const std::string& dir) {
  const fs::path root(dir);
  if (!fs::is_directory(root)) throw IoError("checkpoint directory not found: " + dir);
  json m;
  try {
    m = json::parse(read_text(root / "manifest.json"));
  } catch (const json::parse_error& e) {
    throw IoError(dir + "/manifest.json is not valid JSON: " + e.what());
  }
  try {
    if (m.at("format") != kFormat) throw IncompatibleCheckpoint(dir + ": not a checkpoint manifest");
    if (m.at("version").get<int>() != kVersion) {
      throw IncompatibleCheckpoint(dir + ": unsupported checkpoint version " + m.at("version").dump());
    }
    if (m.at("dtype") != "float32") throw IncompatibleCheckpoint(dir + ": dtype must be float32");

    CheckpointContents c;
    ArchConfig arch;
    try {
      arch = arch_from_json(m.at("arch").dump());
    } catch (const std::invalid_argument& e) {
      throw IncompatibleCheckpoint(dir + ": invalid architecture: " + e.what());
    }
    // Shapes implied by the architecture; values are irrelevant.
    RngStream scratch(0);
    const ModelBundle reference = init_bundle(arch, scratch);
    c.bundle.arch = arch;

    const json& tensors = m.at("tensors");
    for (const char* g : kGroups) {
      model_group(c.bundle, g) = read_table(root, g, tensors.at(g), model_group(reference, g));
    }
    for (const auto& [group, entries] : tensors.items()) {
      if (group == "generator" || group == "discriminator" || group == "recognizer") continue;
      c.extra_tables[group] = read_table(root, group, entries, model_group(reference, base_group(group)));
    }
    c.step = m.at("step").get<long>();
    c.images_seen = m.at("images_seen").get<long>();
    c.seed = m.at("seed").get<std::uint64_t>();
    c.rng_states = m.at("rng_states").get<std::map<std::string, std::string>>();
    if (m.contains("train_config")) c.train_config_json = m["train_config"].dump();
    if (m.contains("state")) c.extra_state_json = m["state"].dump();
    return c;
  } catch (const json::exception& e) {
    throw IncompatibleCheckpoint(dir + ": malformed manifest: " + e.what());
  }
}

void save_bundle(const ModelBundle& bundle, const std::string& dir) {
  CheckpointContents c;
  c.bundle = bundle;
  write_checkpoint(dir, c);
}

ModelBundle load_bundle(const std::string& dir) { return read_checkpoint(dir).bundle; }

}  // namespace pssc
