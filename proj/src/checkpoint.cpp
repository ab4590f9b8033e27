#include "adapterseg/checkpoint.hpp"

#include <bit>
#include <chrono>
#include <cstring>
#include <ctime>
#include <fstream>
#include <sstream>

namespace adapterseg {

static_assert(std::endian::native == std::endian::little,
              "checkpoint container assumes a little-endian host");

std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t seed) {
  const unsigned char* b = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= b[i];
    h *= 1099511628211ull;
  }
  return h;
}

std::string LoadReport::to_string() const {
  std::ostringstream os;
  if (!missing.empty()) {
    os << "missing arrays:\n";
    for (const auto& m : missing) os << "  " << m << "\n";
  }
  if (!unexpected.empty()) {
    os << "unexpected arrays:\n";
    for (const auto& u : unexpected) os << "  " << u << "\n";
  }
  if (!shape_mismatches.empty()) {
    os << "shape mismatches:\n";
    for (const auto& s : shape_mismatches) os << "  " << s << "\n";
  }
  if (ok() && unexpected.empty()) os << "ok\n";
  return os.str();
}

nlohmann::json encoder_config_to_json(const EncoderConfig& cfg) {
  return nlohmann::json{{"num_stages", cfg.num_stages},
                        {"blocks_per_stage", cfg.blocks_per_stage},
                        {"stage_widths", cfg.stage_widths},
                        {"patch_size", cfg.patch_size},
                        {"downsample_factor", cfg.downsample_factor},
                        {"input_resolution", cfg.input_resolution},
                        {"num_heads", cfg.num_heads},
                        {"mlp_ratio", cfg.mlp_ratio}};
}

EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
  EncoderConfig cfg;
  cfg.num_stages = j.at("num_stages").get<std::int64_t>();
  cfg.blocks_per_stage = j.at("blocks_per_stage").get<std::vector<std::int64_t>>();
  cfg.stage_widths = j.at("stage_widths").get<std::vector<std::int64_t>>();
  cfg.patch_size = j.at("patch_size").get<std::int64_t>();
  cfg.downsample_factor = j.at("downsample_factor").get<std::int64_t>();
  cfg.input_resolution = j.at("input_resolution").get<std::int64_t>();
  cfg.num_heads = j.at("num_heads").get<std::int64_t>();
  cfg.mlp_ratio = j.value("mlp_ratio", 4);
  return cfg;
}

std::string iso8601_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

namespace {

constexpr char kMagic[4] = {'A', 'S', 'C', 'P'};
constexpr std::uint32_t kContainerVersion = 1;

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const char* what) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T)))
    throw CheckpointIoError(std::string("checkpoint: truncated while reading ") + what);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const CheckpointMeta& meta,
                     const std::vector<std::pair<std::string, const Tensor*>>& arrays,
                     CheckpointDtype dtype) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CheckpointIoError("checkpoint: cannot open for writing: " + path);

  os.write(kMagic, 4);
  write_pod(os, kContainerVersion);

  nlohmann::json j{{"format_version", meta.format_version},
                   {"encoder_config", meta.encoder_config},
                   {"creation_time", meta.creation_time},
                   {"extra", meta.extra}};
  const std::string meta_str = j.dump();
  write_pod<std::uint64_t>(os, meta_str.size());
  os.write(meta_str.data(), static_cast<std::streamsize>(meta_str.size()));

  write_pod<std::uint64_t>(os, arrays.size());
  for (const auto& [name, tensor] : arrays) {
    write_pod<std::uint16_t>(os, static_cast<std::uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod<std::uint8_t>(os, dtype == CheckpointDtype::kF32 ? 0 : 1);
    write_pod<std::uint8_t>(os, static_cast<std::uint8_t>(tensor->ndim()));
    for (auto d : tensor->shape()) write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(d));
    if (dtype == CheckpointDtype::kF64) {
      os.write(reinterpret_cast<const char*>(tensor->data()),
               static_cast<std::streamsize>(sizeof(double) * tensor->size()));
    } else {
      std::vector<float> buf(static_cast<std::size_t>(tensor->size()));
      for (std::int64_t i = 0; i < tensor->size(); ++i)
        buf[static_cast<std::size_t>(i)] = static_cast<float>((*tensor)[i]);
      os.write(reinterpret_cast<const char*>(buf.data()),
               static_cast<std::streamsize>(sizeof(float) * buf.size()));
    }
  }
  if (!os) throw CheckpointIoError("checkpoint: write failed: " + path);
}

CheckpointFile load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointIoError("checkpoint: cannot open: " + path);

  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    throw CheckpointIoError("checkpoint: bad magic in " + path);
  const auto container_version = read_pod<std::uint32_t>(is, "container version");
  if (container_version != kContainerVersion)
    throw CheckpointVersionError("checkpoint: container version " +
                                 std::to_string(container_version) + " unsupported");

  const auto meta_len = read_pod<std::uint64_t>(is, "metadata length");
  std::string meta_str(meta_len, '\0');
  if (!is.read(meta_str.data(), static_cast<std::streamsize>(meta_len)))
    throw CheckpointIoError("checkpoint: truncated metadata in " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(meta_str);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointIoError(std::string("checkpoint: corrupt metadata: ") + e.what());
  }

  CheckpointFile out;
  out.meta.format_version = j.at("format_version").get<int>();
  out.meta.encoder_config = j.at("encoder_config");
  out.meta.creation_time = j.value("creation_time", "");
  out.meta.extra = j.value("extra", nlohmann::json::object());

  const auto count = read_pod<std::uint64_t>(is, "array count");
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = read_pod<std::uint16_t>(is, "array name length");
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len))
      throw CheckpointIoError("checkpoint: truncated array name");
    const auto dtype = read_pod<std::uint8_t>(is, "array dtype");
    if (dtype > 1) throw CheckpointIoError("checkpoint: unknown dtype for " + name);
    const auto ndim = read_pod<std::uint8_t>(is, "array rank");
    std::vector<std::int64_t> shape;
    std::int64_t numel = 1;
    for (std::uint8_t d = 0; d < ndim; ++d) {
      const auto dim = read_pod<std::uint64_t>(is, "array dim");
      shape.push_back(static_cast<std::int64_t>(dim));
      numel *= static_cast<std::int64_t>(dim);
    }
    Tensor t(shape);
    if (dtype == 1) {
      if (!is.read(reinterpret_cast<char*>(t.data()),
                   static_cast<std::streamsize>(sizeof(double) * numel)))
        throw CheckpointIoError("checkpoint: truncated data for " + name);
    } else {
      std::vector<float> buf(static_cast<std::size_t>(numel));
      if (!is.read(reinterpret_cast<char*>(buf.data()),
                   static_cast<std::streamsize>(sizeof(float) * numel)))
        throw CheckpointIoError("checkpoint: truncated data for " + name);
      for (std::int64_t k = 0; k < numel; ++k) t[k] = buf[static_cast<std::size_t>(k)];
    }
    out.arrays.emplace(std::move(name), std::move(t));
  }
  return out;
}

LoadReport populate_parameters(const std::vector<Parameter*>& params,
                               const std::map<std::string, Tensor>& arrays,
                               const std::string& prefix) {
  LoadReport report;
  std::map<std::string, const Tensor*> pool;
  for (const auto& [name, t] : arrays)
    if (prefix.empty() || name.rfind(prefix, 0) == 0) pool.emplace(name, &t);

  for (Parameter* p : params) {
    auto it = pool.find(p->name);
    if (it == pool.end()) {
      report.missing.push_back(p->name);
      continue;
    }
    if (!it->second->same_shape(p->value)) {
      report.shape_mismatches.push_back(p->name + ": file " + it->second->shape_str() +
                                        " vs model " + p->value.shape_str());
    } else {
      p->value = *it->second;
    }
    pool.erase(it);
  }
  for (const auto& [name, t] : pool) {
    (void)t;
    report.unexpected.push_back(name);
  }
  return report;
}

std::unique_ptr<Encoder> load_pretrained_encoder(const std::string& path,
                                                 const EncoderConfig& expected,
                                                 int format_version) {
  CheckpointFile file = load_checkpoint(path);
  if (file.meta.format_version != format_version)
    throw CheckpointVersionError("checkpoint: format version " +
                                 std::to_string(file.meta.format_version) + ", expected " +
                                 std::to_string(format_version));

  auto encoder = std::make_unique<Encoder>(expected, /*seed=*/0);
  LoadReport report = populate_parameters(encoder->parameters(), file.arrays, "encoder.");
  if (!report.ok()) throw CheckpointMismatchError(std::move(report));
  return encoder;
}

}  // namespace adapterseg
