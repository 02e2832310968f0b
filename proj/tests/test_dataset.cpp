#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "mirrorseg/dataset.hpp"
#include "mirrorseg/errors.hpp"
#include "mirrorseg/image_io.hpp"
#include "test_support.hpp"

using namespace mseg;
namespace fs = std::filesystem;
using test::random_tensor;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("mseg_test_" + std::to_string(::getpid()) + "_" +
                                        std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static int counter;
};
int TempDir::counter = 0;

SampleRecord make_record(std::string stem, std::string group, Tensor image, Tensor mask) {
  SampleRecord r;
  r.stem = std::move(stem);
  r.group = std::move(group);
  r.image = std::move(image);
  r.mask = std::move(mask);
  return r;
}

}  // namespace

TEST_CASE("pnm round trip is lossless for masks and stable for images") {
  TempDir dir;
  Rng rng = make_rng(1);
  Tensor img = random_tensor(1, 3, 9, 7, rng, 0, 1);
  write_pnm(dir.path / "a.ppm", tensor_to_image(img));
  ImageU8 back = read_pnm(dir.path / "a.ppm");
  CHECK(back.width == 7);
  CHECK(back.height == 9);
  CHECK(back.channels == 3);
  Tensor once = image_to_tensor(back);
  // a second encode/decode is bit-exact
  write_pnm(dir.path / "b.ppm", tensor_to_image(once));
  Tensor twice = image_to_tensor(read_pnm(dir.path / "b.ppm"));
  REQUIRE(once.data() == twice.data());

  Tensor mask(1, 1, 5, 5);
  for (int i = 0; i < 25; i += 3) mask.data()[i] = 1;
  write_pnm(dir.path / "m.pgm", mask_to_image(mask));
  Tensor mask_back = mask_to_tensor(read_pnm(dir.path / "m.pgm"));
  REQUIRE(mask_back.data() == mask.data());
}

TEST_CASE("pnm parser handles comments and rejects malformed files") {
  TempDir dir;
  {
    std::ofstream out(dir.path / "c.pgm", std::ios::binary);
    out << "P5\n# a comment line\n2 2\n255\n";
    out.write("\x00\xff\x80\x10", 4);
  }
  ImageU8 img = read_pnm(dir.path / "c.pgm");
  CHECK(img.width == 2);
  CHECK(img.pixels[1] == 255);

  {
    std::ofstream out(dir.path / "bad.pgm", std::ios::binary);
    out << "P5\n2 2\n255\n";
    out.write("\x00", 1);  // truncated payload
  }
  CHECK_THROWS_AS(read_pnm(dir.path / "bad.pgm"), IoError);
  {
    std::ofstream out(dir.path / "bad2.pgm", std::ios::binary);
    out << "P7\n2 2\n255\n0000";
  }
  CHECK_THROWS_AS(read_pnm(dir.path / "bad2.pgm"), IoError);
}

TEST_CASE("load_pairs finds sorted pairs and derives groups") {
  TempDir dir;
  SynthConfig cfg;
  cfg.count = 3;
  cfg.resolution = 32;
  std::vector<SampleRecord> records = generate_synthetic(cfg, 5);
  write_dataset(records, dir.path);
  // one record also gets an explicit .group file that overrides the stem
  {
    std::ofstream g(dir.path / (records[1].stem + ".group"));
    g << "  special \n";
  }
  std::vector<SampleRecord> loaded = load_pairs(dir.path);
  REQUIRE(loaded.size() == 3);
  CHECK(std::is_sorted(loaded.begin(), loaded.end(),
                       [](const auto& a, const auto& b) { return a.stem < b.stem; }));
  CHECK(loaded[0].group == "g0");
  CHECK(loaded[1].group == "special");
  for (std::size_t i = 0; i < loaded.size(); ++i) {
    CHECK(loaded[i].mask.data() == records[i].mask.data());
  }
}

TEST_CASE("load_pairs rejects orphans by name and empty dirs load empty") {
  TempDir dir;
  CHECK(load_pairs(dir.path).empty());

  Tensor img(1, 3, 4, 4, 0.5);
  write_pnm(dir.path / "lonely.ppm", tensor_to_image(img));
  CHECK_THROWS_WITH_AS(load_pairs(dir.path), doctest::Contains("lonely"), DataError);
  fs::remove(dir.path / "lonely.ppm");

  Tensor mask(1, 1, 4, 4, 1.0);
  write_pnm(dir.path / "stray_mask.pgm", mask_to_image(mask));
  CHECK_THROWS_WITH_AS(load_pairs(dir.path), doctest::Contains("stray"), DataError);
}

TEST_CASE("preprocess resizes, keeps masks binary, and flips as an involution") {
  Rng rng = make_rng(2);
  SampleRecord rec = make_record("x", "g", random_tensor(1, 3, 20, 20, rng, 0, 1),
                                 Tensor(1, 1, 20, 20));
  for (int y = 4; y < 12; ++y)
    for (int x = 6; x < 16; ++x) rec.mask.at(0, 0, y, x) = 1;

  Rng aug_off = make_rng(3);
  auto [img1, msk1] = preprocess(rec, 16, false, aug_off);
  CHECK(img1.h() == 16);
  CHECK(msk1.h() == 16);
  for (Real v : msk1.data()) CHECK((v == 0 || v == 1));
  auto [img2, msk2] = preprocess(rec, 16, false, aug_off);
  REQUIRE(img1.data() == img2.data());  // deterministic without augmentation

  CHECK(hflip(hflip(rec.image)).data() == rec.image.data());

  // flip applies to both or neither: the mask must track the image
  Rng aug_on = make_rng(4);
  bool saw_flip = false, saw_plain = false;
  for (int trial = 0; trial < 20; ++trial) {
    auto [img, msk] = preprocess(rec, 20, true, aug_on);
    const bool img_flipped = img.data() == hflip(rec.image).data();
    const bool msk_flipped = msk.data() == hflip(rec.mask).data();
    CHECK(img_flipped == msk_flipped);
    saw_flip = saw_flip || img_flipped;
    saw_plain = saw_plain || !img_flipped;
  }
  CHECK(saw_flip);
  CHECK(saw_plain);
}

TEST_CASE("split_by_group never leaks a group and honours the target fraction") {
  Rng rng = make_rng(5);
  std::vector<SampleRecord> records;
  for (int g = 0; g < 5; ++g)
    for (int i = 0; i < 4; ++i) {
      records.push_back(make_record("g" + std::to_string(g) + "_" + std::to_string(i),
                                    "g" + std::to_string(g), Tensor(1, 3, 2, 2),
                                    Tensor(1, 1, 2, 2)));
    }
  for (int trial = 0; trial < 100; ++trial) {
    auto [train, test] = split_by_group(records, 0.25, rng);
    CHECK(train.size() + test.size() == records.size());
    CHECK_FALSE(train.empty());
    CHECK_FALSE(test.empty());
    std::set<std::string> train_groups, test_groups;
    for (const auto& r : train) train_groups.insert(r.group);
    for (const auto& r : test) test_groups.insert(r.group);
    for (const auto& g : test_groups) CHECK(train_groups.count(g) == 0);
  }
}

TEST_CASE("two groups split one per side; paper-scale counts reproduce") {
  Rng rng = make_rng(6);
  std::vector<SampleRecord> two;
  for (int i = 0; i < 6; ++i) {
    two.push_back(make_record("a_" + std::to_string(i), "a", Tensor(1, 3, 2, 2), Tensor(1, 1, 2, 2)));
    two.push_back(make_record("b_" + std::to_string(i), "b", Tensor(1, 3, 2, 2), Tensor(1, 1, 2, 2)));
  }
  auto [train, test] = split_by_group(two, 0.5, rng);
  CHECK(train.size() == 6);
  CHECK(test.size() == 6);

  // two mirror types sized like the corpus: 3063 train / 955 test out of 4018
  std::vector<SampleRecord> corpus;
  corpus.reserve(4018);
  for (int i = 0; i < 3063; ++i) {
    corpus.push_back(make_record("big_" + std::to_string(i), "big", Tensor(), Tensor()));
  }
  for (int i = 0; i < 955; ++i) {
    corpus.push_back(make_record("small_" + std::to_string(i), "small", Tensor(), Tensor()));
  }
  auto [tr, te] = split_by_group(corpus, 955.0 / 4018.0, rng);
  CHECK(tr.size() == 3063);
  CHECK(te.size() == 955);

  std::vector<SampleRecord> lone = {
      make_record("a_0", "a", Tensor(), Tensor()),
      make_record("a_1", "a", Tensor(), Tensor()),
  };
  CHECK_THROWS_AS(split_by_group(lone, 0.5, rng), DataError);
}

TEST_CASE("compute_stats hand values") {
  // single all-ones mask: ratio 1, location map all ones
  Tensor full(1, 1, 8, 8, 1.0);
  Tensor img(1, 3, 8, 8, 0.5);
  std::vector<SampleRecord> one = {make_record("a_0", "a", img, full)};
  DatasetStats s1 = compute_stats(one, 8);
  CHECK(s1.area_ratios[0] == doctest::Approx(1.0));
  CHECK(s1.area_histogram[9] == 1);
  for (Real v : s1.location_map.data()) CHECK(v == doctest::Approx(1.0));
  CHECK(s1.chi2_skipped == 1);  // no outside region

  // location map of k identical masks equals the single mask
  Tensor half(1, 1, 8, 8);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 8; ++x) half.at(0, 0, y, x) = 1;
  std::vector<SampleRecord> k = {make_record("a_0", "a", img, half),
                                 make_record("a_1", "a", img, half),
                                 make_record("a_2", "a", img, half)};
  DatasetStats s2 = compute_stats(k, 8);
  REQUIRE(s2.location_map.data() == half.data());
  CHECK(s2.area_histogram[5] == 3);  // ratio 0.5 falls in bin [0.5, 0.6)
}

TEST_CASE("chi-square contrast endpoints") {
  // identical colors inside and outside -> 0
  Tensor img(1, 3, 8, 8, 0.4);
  Tensor mask(1, 1, 8, 8);
  for (int x = 0; x < 8; ++x) mask.at(0, 0, 0, x) = 1;
  CHECK(chi_square_contrast(img, mask) == doctest::Approx(0.0));

  // disjoint support -> 1 (up to the epsilon regularizer)
  Tensor split(1, 3, 8, 8, 0.1);
  for (int x = 0; x < 8; ++x)
    for (int c = 0; c < 3; ++c) split.at(0, c, 0, x) = 0.9;
  CHECK(chi_square_contrast(split, mask) == doctest::Approx(1.0).epsilon(1e-6));

  Tensor empty_mask(1, 1, 8, 8);
  CHECK_THROWS_AS(chi_square_contrast(img, empty_mask), DataError);
}

TEST_CASE("synthetic scenes are deterministic, connected, and in the area band") {
  SynthConfig cfg;
  cfg.count = 12;
  cfg.resolution = 48;
  std::vector<SampleRecord> a = generate_synthetic(cfg, 99);
  std::vector<SampleRecord> b = generate_synthetic(cfg, 99);
  REQUIRE(a.size() == 12);
  for (std::size_t i = 0; i < a.size(); ++i) {
    REQUIRE(a[i].image.data() == b[i].image.data());  // bitwise reproduction
    REQUIRE(a[i].mask.data() == b[i].mask.data());
  }
  std::vector<SampleRecord> c = generate_synthetic(cfg, 100);
  CHECK(a[0].image.data() != c[0].image.data());

  for (const SampleRecord& r : a) {
    Real area = 0;
    for (Real v : r.mask.data()) area += v;
    const Real ratio = area / r.mask.size();
    CHECK(ratio >= cfg.area_min);
    CHECK(ratio <= cfg.area_max);

    // single connected region: flood fill from any mirror pixel covers all
    const int res = cfg.resolution;
    std::vector<int> seen(res * res, 0);
    int start = -1;
    for (int i = 0; i < res * res; ++i)
      if (r.mask.data()[i] == 1) {
        start = i;
        break;
      }
    REQUIRE(start >= 0);
    std::vector<int> queue = {start};
    seen[start] = 1;
    int covered = 0;
    while (!queue.empty()) {
      const int cur = queue.back();
      queue.pop_back();
      ++covered;
      const int y = cur / res, x = cur % res;
      const int neigh[4][2] = {{y - 1, x}, {y + 1, x}, {y, x - 1}, {y, x + 1}};
      for (auto [ny, nx] : neigh) {
        if (ny < 0 || ny >= res || nx < 0 || nx >= res) continue;
        const int idx = ny * res + nx;
        if (!seen[idx] && r.mask.data()[idx] == 1) {
          seen[idx] = 1;
          queue.push_back(idx);
        }
      }
    }
    CHECK(covered == static_cast<int>(area));
  }
}

TEST_CASE("mirror content correlates with the scene: lower chi2 than a noise control") {
  SynthConfig cfg;
  cfg.count = 10;
  cfg.resolution = 48;
  std::vector<SampleRecord> records = generate_synthetic(cfg, 7);
  Rng noise_rng = make_rng(8);
  std::uniform_real_distribution<Real> uni(0, 1);
  Real real_total = 0, control_total = 0;
  for (const SampleRecord& r : records) {
    real_total += chi_square_contrast(r.image, r.mask);
    Tensor control = r.image;
    for (int y = 0; y < control.h(); ++y)
      for (int x = 0; x < control.w(); ++x) {
        if (r.mask.at(0, 0, y, x) == 1) {
          for (int c = 0; c < 3; ++c) control.at(0, c, y, x) = uni(noise_rng);
        }
      }
    control_total += chi_square_contrast(control, r.mask);
  }
  CHECK(real_total / records.size() < control_total / records.size());
}
