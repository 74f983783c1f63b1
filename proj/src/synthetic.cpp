#include "rcnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

namespace rcnet {

namespace fs = std::filesystem;

namespace {

struct Canvas {
  Index h, w;
  std::vector<float> vessel;  // darkening strength in [0, 1]

  void stamp(double cy, double cx, double radius, float strength) {
    const Index y0 = std::max<Index>(0, static_cast<Index>(std::floor(cy - radius)));
    const Index y1 = std::min<Index>(h - 1, static_cast<Index>(std::ceil(cy + radius)));
    const Index x0 = std::max<Index>(0, static_cast<Index>(std::floor(cx - radius)));
    const Index x1 = std::min<Index>(w - 1, static_cast<Index>(std::ceil(cx + radius)));
    for (Index y = y0; y <= y1; ++y)
      for (Index x = x0; x <= x1; ++x) {
        const double d = std::hypot(double(y) - cy, double(x) - cx);
        if (d <= radius) vessel[y * w + x] = std::max(vessel[y * w + x], strength);
      }
  }
};

void grow_branch(Canvas& cv, std::mt19937_64& rng, double y, double x, double heading,
                 double width, int depth) {
  std::normal_distribution<double> turn(0.0, 0.12);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int length = static_cast<int>((0.25 + 0.2 * unit(rng)) * double(std::min(cv.h, cv.w)));
  for (int step = 0; step < length; ++step) {
    cv.stamp(y, x, 0.5 * width, static_cast<float>(std::min(1.0, 0.45 + 0.2 * width)));
    heading += turn(rng);
    y += std::sin(heading);
    x += std::cos(heading);
    if (y < 0 || x < 0 || y >= double(cv.h) || x >= double(cv.w)) return;
    if (depth > 0 && step > 8 && unit(rng) < 0.02) {
      const double side = unit(rng) < 0.5 ? -1.0 : 1.0;
      grow_branch(cv, rng, y, x, heading + side * (0.5 + 0.4 * unit(rng)),
                  std::max(1.0, width * 0.7), depth - 1);
      width = std::max(1.0, width * 0.85);
    }
  }
}

}  // namespace

Sample synthetic_fundus(const std::string& id, Index height, Index width, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ fnv1a(id));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<float> noise(0.0f, 0.015f);

  Canvas cv{height, width, std::vector<float>(static_cast<std::size_t>(height * width), 0.0f)};
  const double cy = 0.5 * double(height - 1), cx = 0.5 * double(width - 1);
  const double radius = 0.47 * double(std::min(height, width));
  // Vessel trees radiate from an optic-disc-like origin left of center.
  const double oy = cy + (unit(rng) - 0.5) * 0.1 * double(height);
  const double ox = cx - 0.3 * radius;
  const int trees = 5 + static_cast<int>(unit(rng) * 3);
  for (int t = 0; t < trees; ++t) {
    const double heading = 2.0 * std::numbers::pi * (double(t) + unit(rng) * 0.5) / trees;
    grow_branch(cv, rng, oy, ox, heading, 2.0 + 2.0 * unit(rng), 3);
  }

  const Index ph = padded_extent(height), pw = padded_extent(width);
  Sample s;
  s.id = id;
  s.original_height = height;
  s.original_width = width;
  s.image = TensorF({3, ph, pw});
  s.label = TensorF({ph, pw});
  s.fov = TensorF({ph, pw});
  const std::array<float, 3> base{0.78f, 0.38f, 0.16f};
  const std::array<float, 3> vessel_drop{0.30f, 0.55f, 0.35f};
  for (Index y = 0; y < height; ++y)
    for (Index x = 0; x < width; ++x) {
      const double r = std::hypot(double(y) - cy, double(x) - cx);
      const bool inside = r <= radius;
      const float v = cv.vessel[y * width + x];
      s.label[y * pw + x] = v > 0.0f ? 1.0f : 0.0f;
      s.fov[y * pw + x] = inside ? 1.0f : 0.0f;
      const float vignette = inside ? static_cast<float>(1.0 - 0.35 * (r / radius) * (r / radius))
                                    : 0.03f;
      for (Index c = 0; c < 3; ++c) {
        float val = base[c] * vignette;
        if (inside) val *= 1.0f - vessel_drop[c] * v;
        val += noise(rng);
        s.image[(c * ph + y) * pw + x] = std::clamp(val, 0.0f, 1.0f);
      }
    }
  return s;
}

void write_synthetic_drive(const fs::path& root, std::uint64_t seed) {
  char id[32];
  for (int i = 0; i < 40; ++i) {
    const bool train = i < 20;
    std::snprintf(id, sizeof id, train ? "%02d_training" : "%02d_test", train ? i + 21 : i - 19);
    write_sample(synthetic_fundus(id, kDriveHeight, kDriveWidth, seed),
                 root / (train ? "train" : "test"));
  }
}

void write_synthetic_stare(const fs::path& root, std::uint64_t seed) {
  char id[32];
  fs::create_directories(root / "images");
  fs::create_directories(root / "labels");
  for (int i = 1; i <= 20; ++i) {
    std::snprintf(id, sizeof id, "im%04d", i);
    const Sample s = synthetic_fundus(id, kStareHeight, kStareWidth, seed);
    netpbm::write(root / "images" / (std::string(id) + ".ppm"),
                  to_rgb8(s.image, s.original_height, s.original_width));
    netpbm::write(root / "labels" / (std::string(id) + ".ah.pgm"),
                  to_gray8(s.label, s.original_height, s.original_width));
  }
}

}  // namespace rcnet
