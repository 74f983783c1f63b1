#pragma once

#include "rcnet/netpbm.hpp"
#include "rcnet/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace rcnet {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A fundus image with its vessel ground truth and field-of-view mask.
///
/// Tensors are stored padded (bottom/right, zeros) so that H and W are
/// multiples of 4; original_height/original_width record the size on disk.
/// The padded region is outside the FOV.
struct Sample {
  std::string id;
  TensorF image;  // [3, H, W], values in [0, 1]
  TensorF label;  // [H, W], 1 = vessel
  TensorF fov;    // [H, W], 1 = inside field of view
  Index original_height = 0;
  Index original_width = 0;

  Index height() const { return image.dim(1); }
  Index width() const { return image.dim(2); }
};

enum class Protocol { DriveFixed, Stare5050, StareLeaveOneOut };

struct DatasetSplit {
  std::vector<Sample> train;
  std::vector<Sample> test;
  Protocol protocol = Protocol::DriveFixed;
  int holdout = -1;  // leave-one-out only

  /// "drive-fixed", "stare-50-50" or "stare-loo(k)".
  std::string tag() const;
};

inline constexpr Index kDriveHeight = 584;
inline constexpr Index kDriveWidth = 565;
inline constexpr Index kStareHeight = 605;
inline constexpr Index kStareWidth = 700;
inline constexpr std::size_t kDriveSplitSize = 20;
inline constexpr std::size_t kStareImageCount = 20;

/// Rounds `n` up to the next multiple of 4 (two 2x2 poolings).
inline Index padded_extent(Index n) { return (n + 3) / 4 * 4; }

/// Builds a sample from decoded images. The label is binarized at half of
/// its maxval. Pads to multiples of 4.
Sample make_sample(std::string id, const netpbm::Image& image, const netpbm::Image& label,
                   const netpbm::Image& fov);

/// Crops a padded [H, W] map back to the sample's original extent.
TensorF crop_to_original(const TensorF& map, Index height, Index width);

/// DRIVE layout:
///   <root>/{train,test}/images/<id>.ppm   RGB image (P6)
///   <root>/{train,test}/labels/<id>.pgm   first manual annotation (P5)
///   <root>/{train,test}/masks/<id>.pgm    FOV mask (P5)
DatasetSplit load_drive(const std::filesystem::path& root);

/// STARE layout:
///   <root>/images/<id>.ppm      RGB image (P6)
///   <root>/labels/<id>.ah.pgm   first-expert ("ah") annotation (P5)
/// The FOV is synthesized from the red channel unless whole_image_fov is set.
/// stare-50-50 trains on the first 10 ids (lexicographic), tests on the last
/// 10; leave-one-out tests on id index `holdout` and trains on the other 19.
DatasetSplit load_stare(const std::filesystem::path& root, Protocol protocol, int holdout = -1,
                        bool whole_image_fov = false);

/// Red channel > 0.15 * max(red), keep the largest 4-connected component and
/// fill its holes. `image` is [3, H, W]; returns [H, W].
TensorF synthesize_fov(const TensorF& image);

/// Sample -> Netpbm (8-bit) for materialization to disk.
netpbm::Image to_rgb8(const TensorF& image, Index height, Index width);
netpbm::Image to_gray8(const TensorF& map, Index height, Index width);

/// Writes images/<id>.ppm, labels/<id>.pgm and masks/<id>.pgm under `dir`,
/// cropped to the original extent.
void write_sample(const Sample& sample, const std::filesystem::path& dir);

/// Extracts an h x w window (h, w multiples of 4) as a standalone sample.
Sample crop(const Sample& sample, Index y0, Index x0, Index h, Index w);

/// Concatenates samples of equal size into a batch.
struct Batch {
  TensorF images;  // [N, 3, H, W]
  TensorF labels;  // [N, H, W]
  TensorF fovs;    // [N, H, W]
};
Batch make_batch(const std::vector<const Sample*>& samples);

// ---------------------------------------------------------------------------
// Augmentation

struct AugmentPlan {
  double rotation_step_deg = 1.0;  // must divide 360; rotations include 0 deg
  int brightness_variants = 20;
  double brightness_min = 0.8;
  double brightness_max = 1.2;
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument on a step that does not divide 360.
  int rotation_count() const;
  int outputs_per_image() const { return rotation_count() + brightness_variants; }
};

struct AugmentSpec {
  enum class Kind { Rotation, Brightness };
  std::size_t source = 0;
  Kind kind = Kind::Rotation;
  double value = 0.0;  // degrees or brightness factor
  std::string id;      // <source id>_rNNN or <source id>_bNN
};

/// Lazily rendered augmented training set; full-resolution DRIVE at the
/// default plan is 7600 images and is never held in memory at once.
class AugmentedSet {
 public:
  AugmentedSet(std::shared_ptr<const std::vector<Sample>> sources, std::vector<AugmentSpec> specs)
      : sources_(std::move(sources)), specs_(std::move(specs)) {}

  std::size_t size() const { return specs_.size(); }
  const AugmentSpec& spec(std::size_t i) const { return specs_.at(i); }
  const std::vector<Sample>& sources() const { return *sources_; }
  Sample at(std::size_t i) const;

 private:
  std::shared_ptr<const std::vector<Sample>> sources_;
  std::vector<AugmentSpec> specs_;
};

AugmentedSet augment(std::vector<Sample> train, const AugmentPlan& plan);

/// Rotation about the image center. The image is resampled bilinearly,
/// label and FOV with nearest neighbour; out-of-support pixels become 0.
Sample rotate(const Sample& sample, double degrees);

/// clamp(factor * image, 0, 1); label and FOV unchanged.
Sample adjust_brightness(const Sample& sample, double factor);

/// Stable 64-bit FNV-1a, used to derive per-sample seeds.
std::uint64_t fnv1a(std::string_view s);

// ---------------------------------------------------------------------------
// Synthetic fundus-like data for tests and demos.

/// A dark-vessel-on-orange disc image with a branching vessel tree, a
/// circular FOV, and exact ground truth. Dimensions are the on-disk size;
/// the returned sample is padded like a loaded one.
Sample synthetic_fundus(const std::string& id, Index height, Index width, std::uint64_t seed);

/// Writes a complete synthetic DRIVE tree (20 train + 20 test, 584x565).
void write_synthetic_drive(const std::filesystem::path& root, std::uint64_t seed);

/// Writes a complete synthetic STARE tree (20 images, 605x700).
void write_synthetic_stare(const std::filesystem::path& root, std::uint64_t seed);

}  // namespace rcnet
