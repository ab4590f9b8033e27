#include "fixtures.hpp"

#include <cmath>

#include <opencv2/imgcodecs.hpp>

namespace adapterseg::testing {

void make_synthetic_sample(std::int64_t resolution, std::mt19937_64& rng, double contrast,
                           Tensor& image, Tensor& mask) {
  const std::int64_t n = resolution;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> freq(0.7, 1.6);
  std::uniform_real_distribution<double> noise(-0.04, 0.04);

  // Textured background: two fast gratings plus white noise. The grating
  // period stays below the patch scale so the texture reads as texture, not
  // as large-scale brightness structure.
  const double fx1 = freq(rng), fy1 = freq(rng), ph1 = unit(rng) * 6.283;
  const double fx2 = freq(rng), fy2 = freq(rng), ph2 = unit(rng) * 6.283;
  Tensor texture({n, n});
  for (std::int64_t y = 0; y < n; ++y)
    for (std::int64_t x = 0; x < n; ++x)
      texture.at(y, x) = 0.5 + 0.10 * std::sin(fx1 * x + fy1 * y + ph1) +
                         0.07 * std::sin(fx2 * x - fy2 * y + ph2) + noise(rng);

  // Low-contrast ellipse somewhere in the middle band.
  std::uniform_real_distribution<double> cpos(0.4, 0.6);
  std::uniform_real_distribution<double> axis(0.26, 0.4);
  const double cx = cpos(rng) * n, cy = cpos(rng) * n;
  const double ax = axis(rng) * n, ay = axis(rng) * n;
  const double tilt = unit(rng) * 3.1416;
  const double ct = std::cos(tilt), st = std::sin(tilt);

  mask = Tensor({n, n});
  image = Tensor({3, n, n});
  for (std::int64_t y = 0; y < n; ++y)
    for (std::int64_t x = 0; x < n; ++x) {
      const double dx = x - cx, dy = y - cy;
      const double u = (dx * ct + dy * st) / ax;
      const double v = (-dx * st + dy * ct) / ay;
      const bool inside = u * u + v * v <= 1.0;
      mask.at(y, x) = inside ? 1.0 : 0.0;
      double val = texture.at(y, x) + (inside ? contrast : 0.0);
      val = std::min(1.0, std::max(0.0, val));
      for (int c = 0; c < 3; ++c)
        image.at3(c, y, x) = std::min(1.0, std::max(0.0, val + 0.02 * c));
    }
}

void write_synthetic_camo_dataset(const std::string& dir, const SyntheticSpec& spec) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "images");
  fs::create_directories(fs::path(dir) / "masks");
  std::mt19937_64 rng(spec.seed);
  for (std::int64_t i = 0; i < spec.count; ++i) {
    Tensor image, mask;
    make_synthetic_sample(spec.resolution, rng, spec.contrast, image, mask);
    const int n = static_cast<int>(spec.resolution);
    cv::Mat img(n, n, CV_8UC3), msk(n, n, CV_8UC1);
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        // OpenCV writes BGR; keep channel 0 in blue so reads map back.
        img.at<cv::Vec3b>(y, x) =
            cv::Vec3b(static_cast<unsigned char>(image.at3(2, y, x) * 255.0 + 0.5),
                      static_cast<unsigned char>(image.at3(1, y, x) * 255.0 + 0.5),
                      static_cast<unsigned char>(image.at3(0, y, x) * 255.0 + 0.5));
        msk.at<unsigned char>(y, x) = mask.at(y, x) != 0.0 ? 255 : 0;
      }
    char name[32];
    std::snprintf(name, sizeof(name), "sample_%03d.png", static_cast<int>(i));
    cv::imwrite((fs::path(dir) / "images" / name).string(), img);
    cv::imwrite((fs::path(dir) / "masks" / name).string(), msk);
  }
}

}  // namespace adapterseg::testing
