#ifndef ADAPTERSEG_TESTS_FIXTURES_HPP
#define ADAPTERSEG_TESTS_FIXTURES_HPP

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include "adapterseg/tensor.hpp"

namespace adapterseg::testing {

// Scratch directory removed on destruction.
struct TempDir {
  std::filesystem::path path;
  TempDir() {
    static std::mt19937_64 rng(std::random_device{}());
    path = std::filesystem::temp_directory_path() /
           ("adapterseg_" + std::to_string(rng()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::string str() const { return path.string(); }
  std::string sub(const std::string& name) const { return (path / name).string(); }
};

struct SyntheticSpec {
  std::int64_t count = 8;
  std::int64_t resolution = 64;
  std::uint64_t seed = 7;
  double contrast = 0.18;  // foreground brightness offset over the texture
};

// Writes camouflage-style fixtures: low-contrast ellipses over textured
// noise, images under <dir>/images, masks under <dir>/masks (all-train
// paired-dirs layout).
void write_synthetic_camo_dataset(const std::string& dir, const SyntheticSpec& spec);

// In-memory variant of one synthetic sample (3-channel image, binary mask).
void make_synthetic_sample(std::int64_t resolution, std::mt19937_64& rng, double contrast,
                           Tensor& image, Tensor& mask);

}  // namespace adapterseg::testing

#endif  // ADAPTERSEG_TESTS_FIXTURES_HPP
