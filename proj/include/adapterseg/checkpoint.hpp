#ifndef ADAPTERSEG_CHECKPOINT_HPP
#define ADAPTERSEG_CHECKPOINT_HPP

#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "adapterseg/backbone.hpp"

namespace adapterseg {

constexpr int kCheckpointFormatVersion = 1;

// Container layout: magic "ASCP", u32 container version, JSON metadata blob,
// then named little-endian arrays (f32 by default, f64 in gradient-test
// mode).
enum class CheckpointDtype { kF32, kF64 };

struct CheckpointMeta {
  int format_version = kCheckpointFormatVersion;
  nlohmann::json encoder_config;
  std::string creation_time;  // ISO 8601, UTC
  nlohmann::json extra;       // step counter, task, dataset id, histories...
};

struct CheckpointFile {
  CheckpointMeta meta;
  std::map<std::string, Tensor> arrays;
};

struct CheckpointIoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct CheckpointVersionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Listing of what failed to line up when populating a module from a file.
struct LoadReport {
  std::vector<std::string> missing;
  std::vector<std::string> unexpected;
  std::vector<std::string> shape_mismatches;

  bool ok() const { return missing.empty() && shape_mismatches.empty(); }
  std::string to_string() const;
};

struct CheckpointMismatchError : std::runtime_error {
  LoadReport report;
  explicit CheckpointMismatchError(LoadReport r)
      : std::runtime_error("checkpoint mismatch:\n" + r.to_string()), report(std::move(r)) {}
};

nlohmann::json encoder_config_to_json(const EncoderConfig& cfg);
EncoderConfig encoder_config_from_json(const nlohmann::json& j);
std::string iso8601_now();

void save_checkpoint(const std::string& path, const CheckpointMeta& meta,
                     const std::vector<std::pair<std::string, const Tensor*>>& arrays,
                     CheckpointDtype dtype);
CheckpointFile load_checkpoint(const std::string& path);

// Fills `params` from `arrays` by name. Names in `arrays` restricted by
// `prefix` ("" = everything). Returns the report; throws nothing.
LoadReport populate_parameters(const std::vector<Parameter*>& params,
                               const std::map<std::string, Tensor>& arrays,
                               const std::string& prefix);

// Builds a frozen encoder from the container at `path`. The file must carry
// the requested format version and arrays matching `expected`'s geometry;
// any mismatch raises CheckpointMismatchError with the full report.
std::unique_ptr<Encoder> load_pretrained_encoder(const std::string& path,
                                                 const EncoderConfig& expected,
                                                 int format_version = kCheckpointFormatVersion);

std::uint64_t fnv1a64(const void* data, std::size_t n,
                      std::uint64_t seed = 1469598103934665603ull);

}  // namespace adapterseg

#endif  // ADAPTERSEG_CHECKPOINT_HPP
