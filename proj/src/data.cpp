#include "adapterseg/data.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "adapterseg/checkpoint.hpp"  // fnv1a64

namespace fs = std::filesystem;

namespace adapterseg {

std::string split_to_string(Split s) { return s == Split::kTrain ? "train" : "test"; }

std::int64_t DatasetManifest::count(Split s) const {
  std::int64_t n = 0;
  for (const auto& r : records)
    if (r.split == s) ++n;
  return n;
}

std::vector<const SampleRecord*> DatasetManifest::split_records(Split s) const {
  std::vector<const SampleRecord*> out;
  for (const auto& r : records)
    if (r.split == s) out.push_back(&r);
  return out;
}

nlohmann::json DatasetManifest::to_json() const {
  nlohmann::json recs = nlohmann::json::array();
  for (const auto& r : records)
    recs.push_back({{"sample_id", r.sample_id},
                    {"image_path", r.image_path},
                    {"mask_path", r.mask_path},
                    {"split", split_to_string(r.split)},
                    {"dataset_id", r.dataset_id}});
  return nlohmann::json{{"schema_version", kSchemaVersion},
                        {"dataset_id", dataset_id},
                        {"task", task},
                        {"records", recs},
                        {"counts",
                         {{"train", count(Split::kTrain)}, {"test", count(Split::kTest)}}},
                        {"diagnostics", diagnostics}};
}

DatasetManifest DatasetManifest::from_json(const nlohmann::json& j) {
  const int version = j.at("schema_version").get<int>();
  if (version != kSchemaVersion)
    throw DataError("manifest schema version " + std::to_string(version) + " unsupported");
  DatasetManifest m;
  m.dataset_id = j.at("dataset_id").get<std::string>();
  m.task = j.at("task").get<std::string>();
  for (const auto& r : j.at("records")) {
    SampleRecord rec;
    rec.sample_id = r.at("sample_id").get<std::string>();
    rec.image_path = r.at("image_path").get<std::string>();
    rec.mask_path = r.at("mask_path").get<std::string>();
    rec.split = r.at("split").get<std::string>() == "train" ? Split::kTrain : Split::kTest;
    rec.dataset_id = r.value("dataset_id", m.dataset_id);
    m.records.push_back(std::move(rec));
  }
  m.diagnostics = j.value("diagnostics", std::vector<std::string>{});
  return m;
}

void DatasetManifest::save(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw DataError("manifest: cannot write " + path);
  os << to_json().dump(2) << "\n";
}

DatasetManifest DatasetManifest::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("manifest: cannot read " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("manifest: corrupt JSON in " + path + ": " + e.what());
  }
  return from_json(j);
}

// ---------------------------------------------------------------------------
// Manifest building
// ---------------------------------------------------------------------------

namespace {

const std::set<std::string> kImageExts = {".png", ".jpg", ".jpeg", ".tif", ".tiff", ".bmp"};

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
  return kImageExts.count(ext) > 0;
}

std::vector<fs::path> sorted_files(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && is_image_file(e.path())) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::string> image_dir_candidates(const std::string& split_name) {
  std::vector<std::string> c = {"images", "Images", "image", "Image",
                                "Imgs",   "imgs",   "img",   "JPEGImages"};
  if (!split_name.empty()) c.push_back(split_name + "_A");
  return c;
}

std::vector<std::string> mask_dir_candidates(const std::string& split_name) {
  std::vector<std::string> c = {"masks", "Masks", "mask",   "GT",
                                "gt",    "GT_Object", "labels", "Labels"};
  if (!split_name.empty()) c.push_back(split_name + "_B");
  return c;
}

fs::path find_subdir(const fs::path& base, const std::vector<std::string>& candidates,
                     const std::string& explicit_name, const char* what) {
  if (!explicit_name.empty()) {
    fs::path p = base / explicit_name;
    if (!fs::is_directory(p))
      throw DataError(std::string("manifest: no ") + what + " directory " + p.string());
    return p;
  }
  for (const auto& c : candidates)
    if (fs::is_directory(base / c)) return base / c;
  throw DataError(std::string("manifest: could not locate a ") + what +
                  " directory under " + base.string());
}

// Pairs images to masks by stem within one (images_dir, masks_dir) pair.
void pair_directory(const fs::path& images_dir, const fs::path& masks_dir,
                    const std::string& suffix, Split split, const std::string& dataset_id,
                    const std::string& id_prefix, DatasetManifest& out) {
  const bool same_dir = fs::equivalent(images_dir, masks_dir);
  std::map<std::string, fs::path> masks;
  for (const fs::path& p : sorted_files(masks_dir)) {
    std::string stem = p.stem().string();
    if (same_dir) {
      // Only files carrying the suffix are masks here.
      if (suffix.empty() || stem.size() <= suffix.size() ||
          stem.compare(stem.size() - suffix.size(), suffix.size(), suffix) != 0)
        continue;
      stem = stem.substr(0, stem.size() - suffix.size());
    } else if (!suffix.empty()) {
      if (stem.size() > suffix.size() &&
          stem.compare(stem.size() - suffix.size(), suffix.size(), suffix) == 0)
        stem = stem.substr(0, stem.size() - suffix.size());
    }
    if (masks.count(stem))
      throw DataError("manifest: duplicate mask stem '" + stem + "' in " +
                      masks_dir.string());
    masks.emplace(stem, p);
  }

  std::set<std::string> seen;
  for (const fs::path& p : sorted_files(images_dir)) {
    const std::string stem = p.stem().string();
    if (same_dir && !suffix.empty() && stem.size() > suffix.size() &&
        stem.compare(stem.size() - suffix.size(), suffix.size(), suffix) == 0)
      continue;  // a mask file
    if (seen.count(stem))
      throw DataError("manifest: duplicate image stem '" + stem + "' in " +
                      images_dir.string());
    seen.insert(stem);
    auto it = masks.find(stem);
    if (it == masks.end()) {
      out.diagnostics.push_back("unmatched image: " + p.string());
      continue;
    }
    SampleRecord rec;
    rec.sample_id = id_prefix + stem;
    rec.image_path = p.string();
    rec.mask_path = it->second.string();
    rec.split = split;
    rec.dataset_id = dataset_id;
    out.records.push_back(std::move(rec));
    masks.erase(it);
  }
  for (const auto& [stem, path] : masks)
    out.diagnostics.push_back("unmatched mask: " + path.string());
}

}  // namespace

DatasetManifest build_manifest(const std::string& root, const ManifestOptions& opts) {
  fs::path base(root);
  if (!fs::is_directory(base)) throw DataError("manifest: no such directory: " + root);

  DatasetManifest out;
  out.dataset_id = opts.dataset_id.empty() ? base.filename().string() : opts.dataset_id;
  out.task = opts.task;

  auto build_split = [&](const fs::path& split_base, Split split,
                         const std::string& split_name, const std::string& id_prefix) {
    if (opts.layout == ManifestLayout::kPairedDirs) {
      fs::path imgs = find_subdir(split_base, image_dir_candidates(split_name),
                                  opts.images_dirname, "image");
      fs::path msks = find_subdir(split_base, mask_dir_candidates(split_name),
                                  opts.masks_dirname, "mask");
      pair_directory(imgs, msks, opts.mask_suffix, split, out.dataset_id, id_prefix, out);
    } else {
      pair_directory(split_base, split_base,
                     opts.mask_suffix.empty() ? "_mask" : opts.mask_suffix, split,
                     out.dataset_id, id_prefix, out);
    }
  };

  if (opts.split_rule == SplitRule::kSubdirSplit) {
    bool found = false;
    for (const char* name : {"train", "Train", "training"}) {
      if (fs::is_directory(base / name)) {
        build_split(base / name, Split::kTrain, name, "train/");
        found = true;
        break;
      }
    }
    for (const char* name : {"test", "Test", "testing"}) {
      if (fs::is_directory(base / name)) {
        build_split(base / name, Split::kTest, name, "test/");
        found = true;
        break;
      }
    }
    if (!found)
      throw DataError("manifest: no train/ or test/ subdirectory under " + root);
  } else {
    build_split(base, opts.split_rule == SplitRule::kAllTrain ? Split::kTrain : Split::kTest,
                "", "");
  }

  if (out.records.empty()) throw DataError("manifest: empty dataset at " + root);
  std::sort(out.records.begin(), out.records.end(),
            [](const SampleRecord& a, const SampleRecord& b) {
              return a.sample_id < b.sample_id;
            });
  return out;
}

DatasetManifest merge_manifests(const std::vector<DatasetManifest>& parts,
                                const std::string& merged_id) {
  if (parts.empty()) throw DataError("merge_manifests: nothing to merge");
  DatasetManifest out;
  out.dataset_id = merged_id;
  out.task = parts[0].task;
  for (const auto& part : parts) {
    if (part.task != out.task)
      throw DataError("merge_manifests: task mismatch (" + part.task + " vs " + out.task +
                      ")");
    for (SampleRecord rec : part.records) {
      rec.sample_id = part.dataset_id + "/" + rec.sample_id;
      out.records.push_back(std::move(rec));
    }
    for (const auto& d : part.diagnostics)
      out.diagnostics.push_back(part.dataset_id + ": " + d);
  }
  std::sort(out.records.begin(), out.records.end(),
            [](const SampleRecord& a, const SampleRecord& b) {
              return a.sample_id < b.sample_id;
            });
  return out;
}

DatasetManifest build_manifest_cached(const std::string& root, const ManifestOptions& opts,
                                      const std::string& cache_dir) {
  // Tree signature: sorted relative paths and sizes of all image files.
  std::uint64_t sig = 1469598103934665603ull;
  std::vector<std::string> entries;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file() && is_image_file(e.path()))
      entries.push_back(e.path().string() + ":" + std::to_string(fs::file_size(e.path())));
  std::sort(entries.begin(), entries.end());
  for (const auto& s : entries) sig = fnv1a64(s.data(), s.size(), sig);
  sig = fnv1a64(opts.task.data(), opts.task.size(), sig);

  fs::create_directories(cache_dir);
  const std::string key =
      (fs::path(cache_dir) / ("manifest_" + std::to_string(sig) + ".json")).string();
  if (fs::exists(key)) {
    try {
      return DatasetManifest::load(key);
    } catch (const DataError&) {
      // fall through to rebuild
    }
  }
  DatasetManifest m = build_manifest(root, opts);
  m.save(key);
  return m;
}

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

Tensor instance_to_semantic(const Tensor& instance_mask) {
  if (instance_mask.ndim() != 2)
    throw std::invalid_argument("instance_to_semantic: mask must be [H,W]");
  Tensor out(instance_mask.shape());
  for (std::int64_t i = 0; i < instance_mask.size(); ++i) {
    if (instance_mask[i] < 0.0)
      throw std::invalid_argument("instance_to_semantic: negative label");
    out[i] = instance_mask[i] > 0.0 ? 1.0 : 0.0;
  }
  return out;
}

namespace {

cv::Mat imread_or_throw(const std::string& path, int flags) {
  cv::Mat img = cv::imread(path, flags);
  if (img.empty()) throw DataError("cannot decode image file: " + path);
  return img;
}

Tensor mask_mat_to_tensor(cv::Mat m, bool instance_labels) {
  if (m.channels() > 1) {
    cv::Mat gray;
    cv::cvtColor(m, gray, cv::COLOR_BGR2GRAY);
    m = gray;
  }
  cv::Mat d;
  m.convertTo(d, CV_64F);
  Tensor out({d.rows, d.cols});
  for (int r = 0; r < d.rows; ++r)
    for (int c = 0; c < d.cols; ++c) out.at(r, c) = d.at<double>(r, c);
  if (instance_labels) return instance_to_semantic(out);
  const double mx = out.max();
  if (mx <= 0.0) {
    out.set_zero();
    return out;
  }
  const double thr = 0.5 * mx;
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = out[i] >= thr ? 1.0 : 0.0;
  return out;
}

}  // namespace

ImageTensor preprocess_image(const std::string& path, std::int64_t target_resolution) {
  cv::Mat img = imread_or_throw(path, cv::IMREAD_COLOR);  // 8-bit BGR, gray replicated
  cv::Mat resized;
  cv::resize(img, resized, cv::Size(static_cast<int>(target_resolution),
                                    static_cast<int>(target_resolution)),
             0, 0, cv::INTER_LINEAR);
  cv::Mat rgb;
  cv::cvtColor(resized, rgb, cv::COLOR_BGR2RGB);
  Tensor out({3, target_resolution, target_resolution});
  for (std::int64_t y = 0; y < target_resolution; ++y)
    for (std::int64_t x = 0; x < target_resolution; ++x) {
      const cv::Vec3b px = rgb.at<cv::Vec3b>(static_cast<int>(y), static_cast<int>(x));
      for (int c = 0; c < 3; ++c) out.at3(c, y, x) = px[c] / 255.0;
    }
  return ImageTensor{std::move(out)};
}

Tensor preprocess_mask(const std::string& path, std::int64_t target_resolution,
                       bool instance_labels) {
  cv::Mat m = imread_or_throw(path, cv::IMREAD_UNCHANGED);
  cv::Mat resized;
  cv::resize(m, resized, cv::Size(static_cast<int>(target_resolution),
                                  static_cast<int>(target_resolution)),
             0, 0, cv::INTER_NEAREST);
  return mask_mat_to_tensor(resized, instance_labels);
}

Tensor load_mask_native(const std::string& path, bool instance_labels) {
  return mask_mat_to_tensor(imread_or_throw(path, cv::IMREAD_UNCHANGED), instance_labels);
}

Tensor resize_bilinear_map(const Tensor& map, std::int64_t h, std::int64_t w) {
  if (map.ndim() != 2) throw std::invalid_argument("resize_bilinear_map: map must be [H,W]");
  if (map.rows() == h && map.cols() == w) return map;
  cv::Mat src(static_cast<int>(map.rows()), static_cast<int>(map.cols()), CV_64F);
  for (std::int64_t r = 0; r < map.rows(); ++r)
    for (std::int64_t c = 0; c < map.cols(); ++c)
      src.at<double>(static_cast<int>(r), static_cast<int>(c)) = map.at(r, c);
  cv::Mat dst;
  cv::resize(src, dst, cv::Size(static_cast<int>(w), static_cast<int>(h)), 0, 0,
             cv::INTER_LINEAR);
  Tensor out({h, w});
  for (std::int64_t r = 0; r < h; ++r)
    for (std::int64_t c = 0; c < w; ++c)
      out.at(r, c) = dst.at<double>(static_cast<int>(r), static_cast<int>(c));
  return out;
}

}  // namespace adapterseg
