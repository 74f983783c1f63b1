#include <doctest.h>

#include "oracles.hpp"
#include "rcnet/data.hpp"

#include <filesystem>
#include <set>

using namespace rcnet;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("rcnet_test_data_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

const fs::path& drive_root() {
  static const fs::path root = [] {
    const fs::path r = scratch("drive");
    write_synthetic_drive(r, 3);
    return r;
  }();
  return root;
}

const fs::path& stare_root() {
  static const fs::path root = [] {
    const fs::path r = scratch("stare");
    write_synthetic_stare(r, 4);
    return r;
  }();
  return root;
}

Sample square(Index n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Sample s;
  s.id = "sq";
  s.original_height = s.original_width = n;
  s.image = oracle::random<float>({3, n, n}, rng, 0.0, 1.0);
  s.label = TensorF({n, n});
  s.fov = TensorF({n, n});
  std::bernoulli_distribution coin(0.4);
  for (Index i = 0; i < n * n; ++i) s.label[i] = coin(rng), s.fov[i] = coin(rng);
  return s;
}

bool binary(const TensorF& t) {
  for (Index i = 0; i < t.size(); ++i)
    if (t[i] != 0.0f && t[i] != 1.0f) return false;
  return true;
}

}  // namespace

TEST_CASE("netpbm round trips") {
  netpbm::Image g{3, 2, 1, 255, {0, 1, 2, 253, 254, 255}};
  const netpbm::Image g2 = netpbm::decode(netpbm::encode(g));
  CHECK(g2.samples == g.samples);
  CHECK(g2.width == 3);
  CHECK(g2.height == 2);

  netpbm::Image rgb16{2, 1, 3, 65535, {0, 256, 65535, 1, 2, 40000}};
  const std::string bytes = netpbm::encode(rgb16);
  CHECK(bytes.starts_with("P6"));
  CHECK(netpbm::decode(bytes).samples == rgb16.samples);
  // big-endian samples
  CHECK(static_cast<unsigned char>(bytes[bytes.size() - 12 + 2]) == 1);

  const std::string commented = "P5\n# a comment\n2 # width\n1\n255\n\x07\x09";
  const netpbm::Image c = netpbm::decode(commented);
  CHECK(c.samples == std::vector<std::uint16_t>{7, 9});
}

TEST_CASE("netpbm rejects malformed files") {
  CHECK_THROWS_AS(netpbm::decode("P2\n1 1\n255\n0"), netpbm::FormatError);
  CHECK_THROWS_AS(netpbm::decode("P5\n2 2\n255\nab"), netpbm::FormatError);
  CHECK_THROWS_AS(netpbm::decode("P5\n0 2\n255\n"), netpbm::FormatError);
  CHECK_THROWS_AS(netpbm::decode("P5\n1 1\n0\n\x01"), netpbm::FormatError);
  CHECK_THROWS_AS(netpbm::decode(std::string("P5\n1 1\n7\n\x08", 12)), netpbm::FormatError);
  CHECK_THROWS_AS(netpbm::read("/nonexistent.pgm"), netpbm::FormatError);
}

TEST_CASE("padding to multiples of four and cropping back") {
  CHECK(padded_extent(584) == 584);
  CHECK(padded_extent(565) == 568);
  CHECK(padded_extent(605) == 608);
  CHECK(padded_extent(700) == 700);
  const Sample s = synthetic_fundus("p", 13, 10, 1);
  CHECK(s.image.shape() == Shape{3, 16, 12});
  for (Index y = 0; y < 16; ++y)
    for (Index x = 0; x < 12; ++x)
      if (y >= 13 || x >= 10) {
        CHECK(s.fov[y * 12 + x] == 0.0f);
        CHECK(s.image[y * 12 + x] == 0.0f);
      }
  const TensorF c = crop_to_original(s.label, 13, 10);
  CHECK(c.shape() == Shape{13, 10});
  CHECK(c[12 * 10 + 9] == s.label[12 * 12 + 9]);
}

TEST_CASE("make_sample binarizes labels") {
  netpbm::Image img{2, 1, 3, 255, {10, 20, 30, 40, 50, 60}};
  netpbm::Image lab{2, 1, 1, 255, {127, 128}};
  netpbm::Image fov{2, 1, 1, 255, {255, 0}};
  const Sample s = make_sample("x", img, lab, fov);
  CHECK(s.label[0] == 0.0f);
  CHECK(s.label[1] == 1.0f);
  CHECK(s.fov[0] == 1.0f);
  CHECK(s.image[0] == doctest::Approx(10.0 / 255.0));
  netpbm::Image wrong{3, 1, 1, 255, {0, 0, 0}};
  CHECK_THROWS_AS(make_sample("x", img, wrong, fov), DataError);
}

TEST_CASE("DRIVE loader") {
  const DatasetSplit d = load_drive(drive_root());
  CHECK(d.train.size() == 20);
  CHECK(d.test.size() == 20);
  CHECK(d.tag() == "drive-fixed");
  CHECK(d.train.front().id == "21_training");
  CHECK(d.test.front().id == "01_test");
  for (const Sample& s : d.test) {
    CHECK(s.image.shape() == Shape{3, 584, 568});
    CHECK(s.label.shape() == Shape{584, 568});
    CHECK(s.fov.shape() == Shape{584, 568});
    CHECK(s.original_width == 565);
    CHECK(binary(s.label));
  }
  // round trip through disk is exact at 8 bits
  const Sample& a = d.train[3];
  const Sample b = synthetic_fundus(a.id, kDriveHeight, kDriveWidth, 3);
  CHECK(a.label == b.label);
  CHECK(a.fov == b.fov);
  CHECK((a.image.array() - b.image.array()).abs().maxCoeff() <= 0.5f / 255.0f + 1e-6f);

  const fs::path broken = scratch("drive_broken");
  fs::copy(drive_root(), broken, fs::copy_options::recursive);
  fs::remove(broken / "test" / "masks" / "05_test.pgm");
  CHECK_THROWS_AS(load_drive(broken), DataError);
  fs::remove_all(broken);
  CHECK_THROWS_AS(load_drive("/nonexistent"), DataError);
}

TEST_CASE("STARE protocols") {
  const DatasetSplit half = load_stare(stare_root(), Protocol::Stare5050);
  CHECK(half.train.size() == 10);
  CHECK(half.test.size() == 10);
  std::set<std::string> ids;
  for (const Sample& s : half.train) ids.insert(s.id);
  for (const Sample& s : half.test) CHECK(ids.insert(s.id).second);
  CHECK(ids.size() == 20);

  std::set<std::string> held;
  for (int k = 0; k < 20; ++k) {
    const DatasetSplit loo = load_stare(stare_root(), Protocol::StareLeaveOneOut, k);
    CHECK(loo.train.size() == 19);
    REQUIRE(loo.test.size() == 1);
    for (const Sample& s : loo.train) CHECK(s.id != loo.test[0].id);
    held.insert(loo.test[0].id);
    if (k == 0) {
      CHECK(loo.test[0].id == "im0001");
      CHECK(loo.tag() == "stare-loo(0)");
    }
  }
  CHECK(held == ids);
  CHECK_THROWS_AS(load_stare(stare_root(), Protocol::StareLeaveOneOut, 20), std::invalid_argument);

  const Sample& s = half.test[0];
  CHECK(s.image.shape() == Shape{3, 608, 700});
  // synthesized FOV tracks the true disc closely
  const Sample truth = synthetic_fundus(s.id, kStareHeight, kStareWidth, 4);
  std::int64_t diff = 0, inside = 0;
  for (Index i = 0; i < s.fov.size(); ++i) {
    diff += s.fov[i] != truth.fov[i];
    inside += truth.fov[i] == 1.0f;
  }
  CHECK(static_cast<double>(diff) < 0.02 * static_cast<double>(inside));

  const DatasetSplit whole = load_stare(stare_root(), Protocol::Stare5050, -1, true);
  const Sample& w = whole.test[0];
  for (Index y = 0; y < 605; y += 50) CHECK(w.fov[y * 700] == 1.0f);
  CHECK(w.fov[606 * 700] == 0.0f);  // padding stays outside
}

TEST_CASE("FOV synthesis keeps the largest component and fills holes") {
  TensorF img({3, 12, 12});
  auto red = [&](Index y, Index x) -> float& { return img[y * 12 + x]; };
  for (Index y = 2; y < 10; ++y)
    for (Index x = 2; x < 10; ++x) red(y, x) = 1.0f;
  red(5, 5) = 0.0f;   // hole
  red(0, 11) = 1.0f;  // speck
  const TensorF fov = synthesize_fov(img);
  CHECK(fov[5 * 12 + 5] == 1.0f);
  CHECK(fov[0 * 12 + 11] == 0.0f);
  CHECK(fov[1 * 12 + 1] == 0.0f);
  CHECK(sum_all(fov) == 64.0f);
}

TEST_CASE("augmentation plan counts") {
  AugmentPlan plan;
  CHECK(plan.rotation_count() == 360);
  CHECK(plan.outputs_per_image() == 380);
  std::vector<Sample> twenty;
  for (int i = 0; i < 20; ++i) twenty.push_back(square(4, i));
  const AugmentedSet set = augment(twenty, plan);
  CHECK(set.size() == 7600);
  CHECK(set.spec(0).id == "sq_r000");
  CHECK(set.spec(359).id == "sq_r359");
  CHECK(set.spec(360).id == "sq_b00");
  CHECK(set.spec(379).id == "sq_b19");
  for (std::size_t i = 360; i < 380; ++i) {
    CHECK(set.spec(i).value >= 0.8);
    CHECK(set.spec(i).value <= 1.2);
  }
  plan.rotation_step_deg = 7;
  CHECK_THROWS_AS(plan.rotation_count(), std::invalid_argument);
  // 19-image leave-one-out training split
  std::vector<Sample> nineteen(twenty.begin(), twenty.begin() + 19);
  CHECK(augment(nineteen, AugmentPlan{}).size() == 7220);
}

TEST_CASE("brightness factors are seeded per sample id") {
  Sample a = square(4, 1), b = square(4, 2);
  b.id = "other";
  const AugmentedSet one = augment({a, b}, AugmentPlan{});
  const AugmentedSet two = augment({b, a}, AugmentPlan{});
  CHECK(one.spec(360).value == two.spec(380 + 360).value);
  CHECK(fnv1a("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a("a") == 0xaf63dc4c8601ec8cULL);
}

TEST_CASE("identity transforms are bit-exact") {
  const Sample s = synthetic_fundus("id", 40, 36, 5);
  const Sample r = rotate(s, 0.0);
  CHECK(r.image == s.image);
  CHECK(r.label == s.label);
  CHECK(r.fov == s.fov);
  const Sample b = adjust_brightness(s, 1.0);
  CHECK(b.image == s.image);
  const AugmentedSet set = augment({s}, AugmentPlan{});
  CHECK(set.at(0).image == s.image);
  CHECK(set.at(0).id == "id_r000");
}

TEST_CASE("right-angle rotations are exact permutations") {
  Sample s = square(2, 9);
  const Sample r = rotate(s, 90.0);
  std::multiset<float> before(s.image.data().begin(), s.image.data().end());
  std::multiset<float> after(r.image.data().begin(), r.image.data().end());
  CHECK(before == after);
  CHECK(r.image[0] != s.image[0]);

  const Sample q = square(8, 10);
  for (double deg : {90.0, 180.0, 270.0}) {
    const Sample back = rotate(rotate(q, deg), -deg);
    CHECK(back.image == q.image);
    CHECK(back.label == q.label);
    CHECK(back.fov == q.fov);
  }
  Sample four = q;
  for (int i = 0; i < 4; ++i) four = rotate(four, 90.0);
  CHECK(four.image == q.image);
}

TEST_CASE("arbitrary rotations stay close to the input inside the FOV") {
  const Sample s = synthetic_fundus("rot", 96, 96, 6);
  for (double deg : {7.0, 33.0, 141.0}) {
    const Sample back = rotate(rotate(s, deg), -deg);
    double err = 0.0;
    Index n = 0;
    for (Index y = 0; y < 96; ++y)
      for (Index x = 0; x < 96; ++x) {
        const double r = std::hypot(y - 47.5, x - 47.5);
        if (r > 40.0) continue;  // interior, away from the disc border
        for (Index c = 0; c < 3; ++c) err += std::abs(back.image[(c * 96 + y) * 96 + x] - s.image[(c * 96 + y) * 96 + x]);
        n += 3;
      }
    CHECK(err / static_cast<double>(n) < 0.02);
    CHECK(binary(back.label));
    CHECK(binary(back.fov));
  }
}

TEST_CASE("brightness clamps and keeps labels") {
  const Sample s = synthetic_fundus("br", 16, 16, 7);
  const Sample b = adjust_brightness(s, 1.2);
  for (Index i = 0; i < s.image.size(); ++i)
    CHECK(b.image[i] == std::clamp(s.image[i] * 1.2f, 0.0f, 1.0f));
  CHECK(b.label == s.label);
  CHECK(b.fov == s.fov);
  const Sample hot = adjust_brightness(s, 50.0);
  CHECK(hot.image.array().maxCoeff() == 1.0f);
}

TEST_CASE("augmented sources never leak into the test split") {
  const DatasetSplit d = load_drive(drive_root());
  const AugmentedSet set = augment(d.train, AugmentPlan{});
  std::set<std::string> test_ids;
  for (const Sample& s : d.test) test_ids.insert(s.id);
  for (std::size_t i = 0; i < set.size(); i += 97) {
    const std::string& src = set.sources()[set.spec(i).source].id;
    CHECK(test_ids.count(src) == 0);
    CHECK(set.spec(i).id.starts_with(src + "_"));
  }
  const Sample a = set.at(5);
  CHECK(binary(a.label));
  CHECK(a.image.shape() == Shape{3, 584, 568});
}

TEST_CASE("write_sample materializes cropped files") {
  const fs::path dir = scratch("write");
  const Sample s = synthetic_fundus("w1", 13, 10, 8);
  write_sample(s, dir);
  const netpbm::Image img = netpbm::read(dir / "images" / "w1.ppm");
  CHECK(img.width == 10);
  CHECK(img.height == 13);
  const Sample back = make_sample("w1", img, netpbm::read(dir / "labels" / "w1.pgm"),
                                  netpbm::read(dir / "masks" / "w1.pgm"));
  CHECK(back.label == s.label);
  CHECK(back.fov == s.fov);
  fs::remove_all(dir);
}

TEST_CASE("crop and batch") {
  const Sample s = synthetic_fundus("c", 32, 32, 9);
  const Sample c = crop(s, 8, 4, 16, 12);
  CHECK(c.image.shape() == Shape{3, 16, 12});
  CHECK(c.label[0] == s.label[8 * 32 + 4]);
  CHECK(c.image[2 * 16 * 12 + 5 * 12 + 3] == s.image[2 * 32 * 32 + 13 * 32 + 7]);
  CHECK_THROWS(crop(s, 0, 0, 15, 12));
  CHECK_THROWS(crop(s, 20, 0, 16, 12));

  const Sample c2 = crop(s, 0, 0, 16, 12);
  const Batch b = make_batch({&c, &c2});
  CHECK(b.images.shape() == Shape{2, 3, 16, 12});
  CHECK(b.labels.shape() == Shape{2, 16, 12});
  CHECK(b.fovs[16 * 12] == c2.fov[0]);
  const Sample other = crop(s, 0, 0, 8, 8);
  CHECK_THROWS_AS(make_batch({&c, &other}), ShapeError);
}
