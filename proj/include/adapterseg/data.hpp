#ifndef ADAPTERSEG_DATA_HPP
#define ADAPTERSEG_DATA_HPP

#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "adapterseg/guidance.hpp"

namespace adapterseg {

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Split { kTrain, kTest };
std::string split_to_string(Split s);

struct SampleRecord {
  std::string sample_id;
  std::string image_path;
  std::string mask_path;
  Split split = Split::kTrain;
  std::string dataset_id;
};

struct DatasetManifest {
  static constexpr int kSchemaVersion = 1;

  std::string dataset_id;
  std::string task;  // task key: cod | shadow | polyp | cell
  std::vector<SampleRecord> records;       // sorted by sample_id
  std::vector<std::string> diagnostics;    // unmatched files, never dropped silently

  std::int64_t count(Split s) const;
  std::vector<const SampleRecord*> split_records(Split s) const;

  nlohmann::json to_json() const;
  static DatasetManifest from_json(const nlohmann::json& j);
  void save(const std::string& path) const;
  static DatasetManifest load(const std::string& path);
};

enum class ManifestLayout {
  kPairedDirs,    // parallel image/mask directories, stems matched
  kSuffixPaired,  // one directory; mask file = image stem + suffix
};

enum class SplitRule { kSubdirSplit, kAllTrain, kAllTest };

struct ManifestOptions {
  ManifestLayout layout = ManifestLayout::kPairedDirs;
  SplitRule split_rule = SplitRule::kSubdirSplit;
  std::string mask_suffix;          // "" for paired dirs; "_mask" style otherwise
  std::string task = "cod";
  std::string dataset_id;           // defaults to the root directory name
  std::string images_dirname;       // optional explicit override
  std::string masks_dirname;        // optional explicit override
};

// Walks `root` deterministically and pairs every image with exactly one mask
// by stem. Orphans land in diagnostics; duplicate stems and an empty result
// are distinct errors.
DatasetManifest build_manifest(const std::string& root, const ManifestOptions& opts);

DatasetManifest merge_manifests(const std::vector<DatasetManifest>& parts,
                                const std::string& merged_id);

// Caches build_manifest results under cache_dir, keyed by the directory tree
// signature; rebuilt automatically when the tree changes.
DatasetManifest build_manifest_cached(const std::string& root, const ManifestOptions& opts,
                                      const std::string& cache_dir);

// Binary union of all nonzero instance labels. Rejects negative labels.
Tensor instance_to_semantic(const Tensor& instance_mask);

// Decodes and bilinearly resizes to target x target, values scaled to [0,1],
// grayscale replicated to 3 channels.
ImageTensor preprocess_image(const std::string& path, std::int64_t target_resolution);

// Decodes a mask, nearest-neighbor resizes, then binarizes: instance masks
// by label > 0, plain masks at half the maximum value.
Tensor preprocess_mask(const std::string& path, std::int64_t target_resolution,
                       bool instance_labels = false);

// Mask at its native resolution (no resize), binarized the same way.
Tensor load_mask_native(const std::string& path, bool instance_labels = false);

// Bilinear resize of a [H,W] map (used to bring predictions to GT size).
Tensor resize_bilinear_map(const Tensor& map, std::int64_t h, std::int64_t w);

}  // namespace adapterseg

#endif  // ADAPTERSEG_DATA_HPP
