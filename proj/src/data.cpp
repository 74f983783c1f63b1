#include "rcnet/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>

namespace rcnet {

namespace fs = std::filesystem;

std::string DatasetSplit::tag() const {
  switch (protocol) {
    case Protocol::DriveFixed: return "drive-fixed";
    case Protocol::Stare5050: return "stare-50-50";
    case Protocol::StareLeaveOneOut: return "stare-loo(" + std::to_string(holdout) + ")";
  }
  return "unknown";
}

namespace {

void require_dims(const netpbm::Image& img, int h, int w, const std::string& what) {
  if (img.height != h || img.width != w)
    throw DataError(what + ": dimensions " + std::to_string(img.height) + "x" +
                    std::to_string(img.width) + " do not match " + std::to_string(h) + "x" +
                    std::to_string(w));
}

TensorF binary_map(const netpbm::Image& img, Index height, Index width) {
  TensorF out({height, width});
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      // Binarize at half the sample range; the first channel decides for RGB.
      const std::uint32_t v = img.at(y, x, 0);
      out[y * width + x] = (2 * v > img.maxval) ? 1.0f : 0.0f;
    }
  return out;
}

netpbm::Image read_checked(const fs::path& path) {
  if (!fs::exists(path)) throw DataError("missing file '" + path.string() + "'");
  return netpbm::read(path);
}

std::vector<std::string> list_ids(const fs::path& dir, const std::string& ext) {
  if (!fs::is_directory(dir)) throw DataError("missing directory '" + dir.string() + "'");
  std::vector<std::string> ids;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ext)
      ids.push_back(entry.path().stem().string());
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::vector<Sample> load_drive_part(const fs::path& dir) {
  std::vector<Sample> out;
  for (const std::string& id : list_ids(dir / "images", ".ppm")) {
    const netpbm::Image img = read_checked(dir / "images" / (id + ".ppm"));
    const netpbm::Image lbl = read_checked(dir / "labels" / (id + ".pgm"));
    const netpbm::Image fov = read_checked(dir / "masks" / (id + ".pgm"));
    require_dims(img, kDriveHeight, kDriveWidth, "DRIVE image '" + id + "'");
    require_dims(lbl, kDriveHeight, kDriveWidth, "DRIVE label '" + id + "'");
    require_dims(fov, kDriveHeight, kDriveWidth, "DRIVE mask '" + id + "'");
    out.push_back(make_sample(id, img, lbl, fov));
  }
  if (out.size() != kDriveSplitSize)
    throw DataError("DRIVE split '" + dir.string() + "' has " + std::to_string(out.size()) +
                    " images, expected " + std::to_string(kDriveSplitSize));
  return out;
}

}  // namespace

Sample make_sample(std::string id, const netpbm::Image& image, const netpbm::Image& label,
                   const netpbm::Image& fov) {
  if (image.channels != 3) throw DataError("image '" + id + "' is not RGB");
  require_dims(label, image.height, image.width, "label '" + id + "'");
  require_dims(fov, image.height, image.width, "mask '" + id + "'");
  const Index h = image.height, w = image.width;
  const Index ph = padded_extent(h), pw = padded_extent(w);
  Sample s;
  s.id = std::move(id);
  s.original_height = h;
  s.original_width = w;
  s.image = TensorF({3, ph, pw});
  const float inv = 1.0f / static_cast<float>(image.maxval);
  for (Index c = 0; c < 3; ++c)
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x)
        s.image[(c * ph + y) * pw + x] =
            static_cast<float>(image.at(static_cast<int>(y), static_cast<int>(x),
                                        static_cast<int>(c))) * inv;
  s.label = binary_map(label, ph, pw);
  s.fov = binary_map(fov, ph, pw);
  return s;
}

TensorF crop_to_original(const TensorF& map, Index height, Index width) {
  if (map.rank() != 2 || map.dim(0) < height || map.dim(1) < width)
    throw ShapeError("crop_to_original: map " + to_string(map.shape()) + " smaller than crop");
  TensorF out({height, width});
  for (Index y = 0; y < height; ++y)
    for (Index x = 0; x < width; ++x) out[y * width + x] = map[y * map.dim(1) + x];
  return out;
}

DatasetSplit load_drive(const fs::path& root) {
  DatasetSplit split;
  split.protocol = Protocol::DriveFixed;
  split.train = load_drive_part(root / "train");
  split.test = load_drive_part(root / "test");
  return split;
}

DatasetSplit load_stare(const fs::path& root, Protocol protocol, int holdout,
                        bool whole_image_fov) {
  if (protocol == Protocol::DriveFixed)
    throw std::invalid_argument("load_stare: drive-fixed is not a STARE protocol");
  if (protocol == Protocol::StareLeaveOneOut &&
      (holdout < 0 || holdout >= static_cast<int>(kStareImageCount)))
    throw std::invalid_argument("load_stare: holdout index " + std::to_string(holdout) +
                                " outside 0.." + std::to_string(kStareImageCount - 1));

  const std::vector<std::string> ids = list_ids(root / "images", ".ppm");
  if (ids.size() != kStareImageCount)
    throw DataError("STARE root '" + root.string() + "' has " + std::to_string(ids.size()) +
                    " images, expected " + std::to_string(kStareImageCount));

  std::vector<Sample> all;
  for (const std::string& id : ids) {
    const netpbm::Image img = read_checked(root / "images" / (id + ".ppm"));
    const netpbm::Image lbl = read_checked(root / "labels" / (id + ".ah.pgm"));
    require_dims(img, kStareHeight, kStareWidth, "STARE image '" + id + "'");
    require_dims(lbl, kStareHeight, kStareWidth, "STARE label '" + id + "'");
    netpbm::Image full_fov{img.width, img.height, 1, 1,
                           std::vector<std::uint16_t>(static_cast<std::size_t>(img.width) *
                                                          img.height,
                                                      1)};
    Sample s = make_sample(id, img, lbl, full_fov);
    if (!whole_image_fov) {
      TensorF cropped({3, s.original_height, s.original_width});
      for (Index c = 0; c < 3; ++c)
        for (Index y = 0; y < s.original_height; ++y)
          for (Index x = 0; x < s.original_width; ++x)
            cropped[(c * s.original_height + y) * s.original_width + x] =
                s.image[(c * s.height() + y) * s.width() + x];
      const TensorF fov = synthesize_fov(cropped);
      s.fov.array().setZero();
      for (Index y = 0; y < s.original_height; ++y)
        for (Index x = 0; x < s.original_width; ++x)
          s.fov[y * s.width() + x] = fov[y * s.original_width + x];
    }
    all.push_back(std::move(s));
  }

  DatasetSplit split;
  split.protocol = protocol;
  if (protocol == Protocol::Stare5050) {
    for (std::size_t i = 0; i < all.size(); ++i)
      (i < all.size() / 2 ? split.train : split.test).push_back(std::move(all[i]));
  } else {
    split.holdout = holdout;
    for (std::size_t i = 0; i < all.size(); ++i)
      (static_cast<int>(i) == holdout ? split.test : split.train).push_back(std::move(all[i]));
  }
  return split;
}

TensorF synthesize_fov(const TensorF& image) {
  const Index h = image.dim(1), w = image.dim(2);
  const auto red = image.array().head(h * w);
  const float threshold = 0.15f * red.maxCoeff();
  std::vector<std::uint8_t> fg(static_cast<std::size_t>(h * w));
  for (Index i = 0; i < h * w; ++i) fg[i] = red[i] > threshold;

  // Largest 4-connected foreground component.
  std::vector<int> comp(fg.size(), -1);
  int best = -1;
  std::size_t best_size = 0;
  int next = 0;
  std::deque<Index> queue;
  const std::array<std::pair<int, int>, 4> nbrs{{{-1, 0}, {1, 0}, {0, -1}, {0, 1}}};
  for (Index start = 0; start < h * w; ++start) {
    if (!fg[start] || comp[start] >= 0) continue;
    std::size_t size = 0;
    comp[start] = next;
    queue.push_back(start);
    while (!queue.empty()) {
      const Index p = queue.front();
      queue.pop_front();
      ++size;
      const Index y = p / w, x = p % w;
      for (auto [dy, dx] : nbrs) {
        const Index ny = y + dy, nx = x + dx;
        if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
        const Index q = ny * w + nx;
        if (fg[q] && comp[q] < 0) {
          comp[q] = next;
          queue.push_back(q);
        }
      }
    }
    if (size > best_size) {
      best_size = size;
      best = next;
    }
    ++next;
  }

  // Fill holes: background not reachable from the border becomes FOV.
  std::vector<std::uint8_t> outside(fg.size(), 0);
  auto seed = [&](Index p) {
    if (comp[p] != best && !outside[p]) {
      outside[p] = 1;
      queue.push_back(p);
    }
  };
  for (Index x = 0; x < w; ++x) {
    seed(x);
    seed((h - 1) * w + x);
  }
  for (Index y = 0; y < h; ++y) {
    seed(y * w);
    seed(y * w + w - 1);
  }
  while (!queue.empty()) {
    const Index p = queue.front();
    queue.pop_front();
    const Index y = p / w, x = p % w;
    for (auto [dy, dx] : nbrs) {
      const Index ny = y + dy, nx = x + dx;
      if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
      seed(ny * w + nx);
    }
  }
  TensorF fov({h, w});
  if (best < 0) return fov;
  for (Index i = 0; i < h * w; ++i) fov[i] = outside[i] ? 0.0f : 1.0f;
  return fov;
}

netpbm::Image to_rgb8(const TensorF& image, Index height, Index width) {
  netpbm::Image img{static_cast<int>(width), static_cast<int>(height), 3, 255, {}};
  img.samples.resize(static_cast<std::size_t>(height * width * 3));
  const Index ph = image.dim(1), pw = image.dim(2);
  for (Index y = 0; y < height; ++y)
    for (Index x = 0; x < width; ++x)
      for (Index c = 0; c < 3; ++c) {
        const float v = std::clamp(image[(c * ph + y) * pw + x], 0.0f, 1.0f);
        img.samples[static_cast<std::size_t>((y * width + x) * 3 + c)] =
            static_cast<std::uint16_t>(std::lround(v * 255.0f));
      }
  return img;
}

netpbm::Image to_gray8(const TensorF& map, Index height, Index width) {
  netpbm::Image img{static_cast<int>(width), static_cast<int>(height), 1, 255, {}};
  img.samples.resize(static_cast<std::size_t>(height * width));
  const Index pw = map.dim(1);
  for (Index y = 0; y < height; ++y)
    for (Index x = 0; x < width; ++x)
      img.samples[static_cast<std::size_t>(y * width + x)] =
          static_cast<std::uint16_t>(std::lround(std::clamp(map[y * pw + x], 0.0f, 1.0f) * 255.0f));
  return img;
}

void write_sample(const Sample& s, const fs::path& dir) {
  for (const char* sub : {"images", "labels", "masks"}) fs::create_directories(dir / sub);
  netpbm::write(dir / "images" / (s.id + ".ppm"),
                to_rgb8(s.image, s.original_height, s.original_width));
  netpbm::write(dir / "labels" / (s.id + ".pgm"),
                to_gray8(s.label, s.original_height, s.original_width));
  netpbm::write(dir / "masks" / (s.id + ".pgm"),
                to_gray8(s.fov, s.original_height, s.original_width));
}

Batch make_batch(const std::vector<const Sample*>& samples) {
  if (samples.empty()) throw std::invalid_argument("make_batch: empty batch");
  const Index n = static_cast<Index>(samples.size());
  const Index h = samples[0]->height(), w = samples[0]->width();
  Batch b{TensorF({n, 3, h, w}), TensorF({n, h, w}), TensorF({n, h, w})};
  for (Index i = 0; i < n; ++i) {
    const Sample& s = *samples[static_cast<std::size_t>(i)];
    if (s.height() != h || s.width() != w)
      throw ShapeError("make_batch: sample '" + s.id + "' size differs from the batch");
    b.images.array().segment(i * 3 * h * w, 3 * h * w) = s.image.array();
    b.labels.array().segment(i * h * w, h * w) = s.label.array();
    b.fovs.array().segment(i * h * w, h * w) = s.fov.array();
  }
  return b;
}

}  // namespace rcnet
