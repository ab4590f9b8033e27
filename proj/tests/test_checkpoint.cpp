#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "adapterseg/checkpoint.hpp"

using namespace adapterseg;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("adapterseg_test_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

EncoderConfig mini_config() {
  EncoderConfig cfg;
  cfg.num_stages = 2;
  cfg.blocks_per_stage = {1, 1};
  cfg.stage_widths = {4, 8};
  cfg.patch_size = 4;
  cfg.input_resolution = 8;
  cfg.num_heads = 2;
  cfg.mlp_ratio = 2;
  return cfg;
}

void save_encoder(Encoder& enc, const std::string& path, CheckpointDtype dtype,
                  const std::vector<std::string>& skip = {}) {
  CheckpointMeta meta;
  meta.encoder_config = encoder_config_to_json(enc.config());
  meta.creation_time = iso8601_now();
  std::vector<std::pair<std::string, const Tensor*>> arrays;
  for (Parameter* p : enc.parameters()) {
    if (std::find(skip.begin(), skip.end(), p->name) != skip.end()) continue;
    arrays.emplace_back(p->name, &p->value);
  }
  save_checkpoint(path, meta, arrays, dtype);
}

}  // namespace

TEST_CASE("checkpoint round-trip restores parameters bitwise at f64") {
  TempDir tmp;
  Encoder enc(mini_config(), 101);
  const std::string path = tmp.file("enc.ascp");
  save_encoder(enc, path, CheckpointDtype::kF64);

  auto loaded = load_pretrained_encoder(path, mini_config());
  auto a = enc.parameters();
  auto b = loaded->parameters();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i]->name == b[i]->name);
    REQUIRE(a[i]->value.same_shape(b[i]->value));
    for (std::int64_t k = 0; k < a[i]->value.size(); ++k)
      CHECK(a[i]->value[k] == b[i]->value[k]);
  }
  CHECK(enc.parameter_hash() == loaded->parameter_hash());
}

TEST_CASE("checkpoint f32 round-trip is accurate to float precision") {
  TempDir tmp;
  Encoder enc(mini_config(), 103);
  const std::string path = tmp.file("enc32.ascp");
  save_encoder(enc, path, CheckpointDtype::kF32);
  auto loaded = load_pretrained_encoder(path, mini_config());
  auto a = enc.parameters();
  auto b = loaded->parameters();
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::int64_t k = 0; k < a[i]->value.size(); ++k)
      CHECK(a[i]->value[k] ==
            doctest::Approx(b[i]->value[k]).epsilon(1e-6));
}

TEST_CASE("missing array is reported by name") {
  TempDir tmp;
  Encoder enc(mini_config(), 105);
  const std::string path = tmp.file("missing.ascp");
  save_encoder(enc, path, CheckpointDtype::kF64, {"encoder.stage1.block0.attn.qkv.weight"});
  try {
    load_pretrained_encoder(path, mini_config());
    FAIL("expected CheckpointMismatchError");
  } catch (const CheckpointMismatchError& e) {
    REQUIRE(e.report.missing.size() == 1);
    CHECK(e.report.missing[0] == "encoder.stage1.block0.attn.qkv.weight");
    CHECK(std::string(e.what()).find("qkv.weight") != std::string::npos);
  }
}

TEST_CASE("width mismatch lists every diverging stage") {
  TempDir tmp;
  Encoder narrow(mini_config(), 107);
  const std::string path = tmp.file("narrow.ascp");
  save_encoder(narrow, path, CheckpointDtype::kF64);

  EncoderConfig wide = mini_config();
  wide.stage_widths = {8, 16};
  try {
    load_pretrained_encoder(path, wide);
    FAIL("expected CheckpointMismatchError");
  } catch (const CheckpointMismatchError& e) {
    CHECK(!e.report.shape_mismatches.empty());
    bool stage0 = false, stage1 = false;
    for (const auto& msg : e.report.shape_mismatches) {
      if (msg.find("stage0") != std::string::npos) stage0 = true;
      if (msg.find("stage1") != std::string::npos) stage1 = true;
    }
    CHECK(stage0);
    CHECK(stage1);
  }
}

TEST_CASE("distinct errors: unreadable file vs version mismatch vs shape mismatch") {
  TempDir tmp;
  CHECK_THROWS_AS(load_checkpoint(tmp.file("nope.ascp")), CheckpointIoError);

  // A file with the wrong format version.
  Encoder enc(mini_config(), 109);
  const std::string path = tmp.file("ver.ascp");
  CheckpointMeta meta;
  meta.format_version = 999;
  meta.encoder_config = encoder_config_to_json(enc.config());
  std::vector<std::pair<std::string, const Tensor*>> arrays;
  for (Parameter* p : enc.parameters()) arrays.emplace_back(p->name, &p->value);
  save_checkpoint(path, meta, arrays, CheckpointDtype::kF64);
  CHECK_THROWS_AS(load_pretrained_encoder(path, mini_config()), CheckpointVersionError);

  // Garbage bytes.
  const std::string garbage = tmp.file("garbage.ascp");
  {
    std::ofstream os(garbage, std::ios::binary);
    os << "not a checkpoint";
  }
  CHECK_THROWS_AS(load_checkpoint(garbage), CheckpointIoError);
}

TEST_CASE("encoder config JSON round-trip") {
  EncoderConfig cfg = EncoderConfig::toy();
  EncoderConfig back = encoder_config_from_json(encoder_config_to_json(cfg));
  CHECK(back == cfg);
}
