#include "rcnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

namespace rcnet {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

int AugmentPlan::rotation_count() const {
  if (!(rotation_step_deg > 0.0))
    throw std::invalid_argument("augment: rotation step must be positive");
  const double n = 360.0 / rotation_step_deg;
  const double rounded = std::round(n);
  if (std::abs(n - rounded) > 1e-9)
    throw std::invalid_argument("augment: rotation step " + std::to_string(rotation_step_deg) +
                                " does not divide 360");
  return static_cast<int>(rounded);
}

namespace {

// cos/sin with exact values at multiples of 90 degrees.
std::pair<double, double> exact_cos_sin(double degrees) {
  const double quarter = degrees / 90.0;
  if (quarter == std::round(quarter)) {
    switch (((static_cast<long long>(std::round(quarter)) % 4) + 4) % 4) {
      case 0: return {1.0, 0.0};
      case 1: return {0.0, 1.0};
      case 2: return {-1.0, 0.0};
      default: return {0.0, -1.0};
    }
  }
  const double rad = degrees * std::numbers::pi / 180.0;
  return {std::cos(rad), std::sin(rad)};
}

}  // namespace

Sample rotate(const Sample& s, double degrees) {
  const Index h = s.height(), w = s.width();
  const auto [c, sn] = exact_cos_sin(degrees);
  const double cy = 0.5 * static_cast<double>(h - 1), cx = 0.5 * static_cast<double>(w - 1);
  constexpr double kEdge = 1e-9;

  Sample out;
  out.id = s.id;
  out.original_height = s.original_height;
  out.original_width = s.original_width;
  out.image = TensorF(s.image.shape());
  out.label = TensorF(s.label.shape());
  out.fov = TensorF(s.fov.shape());

  const Index plane = h * w;
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      // Inverse map: destination pixel -> source coordinates.
      const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
      double sx = cx + c * dx + sn * dy;
      double sy = cy - sn * dx + c * dy;
      if (sx < -kEdge || sy < -kEdge || sx > double(w - 1) + kEdge || sy > double(h - 1) + kEdge)
        continue;
      sx = std::clamp(sx, 0.0, double(w - 1));
      sy = std::clamp(sy, 0.0, double(h - 1));

      const Index nx = static_cast<Index>(std::lround(sx)), ny = static_cast<Index>(std::lround(sy));
      out.label[y * w + x] = s.label[ny * w + nx];
      out.fov[y * w + x] = s.fov[ny * w + nx];

      const Index x0 = static_cast<Index>(std::floor(sx)), y0 = static_cast<Index>(std::floor(sy));
      const Index x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
      const float fx = static_cast<float>(sx - double(x0)), fy = static_cast<float>(sy - double(y0));
      for (Index ch = 0; ch < 3; ++ch) {
        const float* src = s.image.data().data() + ch * plane;
        const float top = (1.0f - fx) * src[y0 * w + x0] + fx * src[y0 * w + x1];
        const float bot = (1.0f - fx) * src[y1 * w + x0] + fx * src[y1 * w + x1];
        out.image[ch * plane + y * w + x] = (1.0f - fy) * top + fy * bot;
      }
    }
  return out;
}

Sample adjust_brightness(const Sample& s, double factor) {
  Sample out = s;
  out.image.array() = (out.image.array() * static_cast<float>(factor)).max(0.0f).min(1.0f);
  return out;
}

Sample AugmentedSet::at(std::size_t i) const {
  const AugmentSpec& sp = specs_.at(i);
  const Sample& src = (*sources_)[sp.source];
  Sample out = sp.kind == AugmentSpec::Kind::Rotation ? rotate(src, sp.value)
                                                      : adjust_brightness(src, sp.value);
  out.id = sp.id;
  return out;
}

AugmentedSet augment(std::vector<Sample> train, const AugmentPlan& plan) {
  const int rotations = plan.rotation_count();
  if (plan.brightness_variants < 0)
    throw std::invalid_argument("augment: brightness variant count must be >= 0");
  if (!(plan.brightness_min > 0.0) || plan.brightness_max < plan.brightness_min)
    throw std::invalid_argument("augment: invalid brightness factor range");

  std::vector<AugmentSpec> specs;
  specs.reserve(train.size() * static_cast<std::size_t>(plan.outputs_per_image()));
  char suffix[16];
  for (std::size_t i = 0; i < train.size(); ++i) {
    const std::string& id = train[i].id;
    for (int r = 0; r < rotations; ++r) {
      std::snprintf(suffix, sizeof suffix, "_r%03d", r);
      specs.push_back({i, AugmentSpec::Kind::Rotation, r * plan.rotation_step_deg, id + suffix});
    }
    // Seeded per sample so parallel rendering order never changes the factors.
    std::mt19937_64 rng(plan.seed ^ fnv1a(id));
    std::uniform_real_distribution<double> factor(plan.brightness_min, plan.brightness_max);
    for (int b = 0; b < plan.brightness_variants; ++b) {
      std::snprintf(suffix, sizeof suffix, "_b%02d", b);
      specs.push_back({i, AugmentSpec::Kind::Brightness, factor(rng), id + suffix});
    }
  }
  return AugmentedSet(std::make_shared<const std::vector<Sample>>(std::move(train)),
                      std::move(specs));
}

Sample crop(const Sample& s, Index y0, Index x0, Index h, Index w) {
  if (h % 4 || w % 4 || y0 < 0 || x0 < 0 || y0 + h > s.height() || x0 + w > s.width())
    throw std::invalid_argument("crop: window outside sample or not a multiple of 4");
  Sample out;
  out.id = s.id + "_crop";
  out.original_height = h;
  out.original_width = w;
  out.image = TensorF({3, h, w});
  out.label = TensorF({h, w});
  out.fov = TensorF({h, w});
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      for (Index c = 0; c < 3; ++c)
        out.image[(c * h + y) * w + x] = s.image[(c * s.height() + y0 + y) * s.width() + x0 + x];
      out.label[y * w + x] = s.label[(y0 + y) * s.width() + x0 + x];
      out.fov[y * w + x] = s.fov[(y0 + y) * s.width() + x0 + x];
    }
  return out;
}

}  // namespace rcnet
