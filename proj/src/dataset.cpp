#include "mirrorseg/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "mirrorseg/errors.hpp"
#include "mirrorseg/image_io.hpp"
#include "mirrorseg/ops.hpp"

namespace mseg {

namespace fs = std::filesystem;

namespace {

std::string read_group_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open group file " + path.string());
  std::string line;
  std::getline(in, line);
  const auto l = line.find_first_not_of(" \t\r\n");
  if (l == std::string::npos) throw DataError("empty group file " + path.string());
  const auto r = line.find_last_not_of(" \t\r\n");
  return line.substr(l, r - l + 1);
}

std::string group_from_stem(const std::string& stem) {
  const auto pos = stem.find('_');
  return pos == std::string::npos ? stem : stem.substr(0, pos);
}

}  // namespace

std::vector<SampleRecord> load_pairs(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::set<std::string> image_stems, mask_stems;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const fs::path& p = entry.path();
    if (p.extension() == ".ppm") {
      image_stems.insert(p.stem().string());
    } else if (p.extension() == ".pgm") {
      std::string stem = p.stem().string();
      constexpr const char* suffix = "_mask";
      if (stem.size() > 5 && stem.ends_with(suffix)) {
        mask_stems.insert(stem.substr(0, stem.size() - 5));
      }
    }
  }
  for (const std::string& s : image_stems) {
    if (!mask_stems.count(s)) throw DataError("image without mask: " + s);
  }
  for (const std::string& s : mask_stems) {
    if (!image_stems.count(s)) throw DataError("mask without image: " + s);
  }

  std::vector<SampleRecord> records;
  for (const std::string& stem : image_stems) {  // std::set iterates sorted
    SampleRecord r;
    r.stem = stem;
    r.image_path = dir / (stem + ".ppm");
    r.mask_path = dir / (stem + "_mask.pgm");
    const ImageU8 img = read_pnm(r.image_path);
    if (img.channels != 3) throw DataError("image is not RGB: " + r.image_path.string());
    const ImageU8 msk = read_pnm(r.mask_path);
    if (msk.channels != 1) throw DataError("mask is not grayscale: " + r.mask_path.string());
    if (img.width != msk.width || img.height != msk.height) {
      throw DataError("image and mask dimensions differ for stem " + stem);
    }
    r.image = image_to_tensor(img);
    r.mask = mask_to_tensor(msk);
    const fs::path group_path = dir / (stem + ".group");
    r.group = fs::exists(group_path) ? read_group_file(group_path) : group_from_stem(stem);
    records.push_back(std::move(r));
  }
  return records;
}

Tensor resize_bilinear_image(const Tensor& image, int resolution) {
  if (image.h() == resolution && image.w() == resolution) return image;
  return upsample_bilinear(image, resolution, resolution);
}

Tensor resize_nearest_mask(const Tensor& mask, int resolution) {
  if (mask.h() == resolution && mask.w() == resolution) return mask;
  Tensor out(mask.n(), mask.c(), resolution, resolution);
  const Real sy = static_cast<Real>(mask.h()) / resolution;
  const Real sx = static_cast<Real>(mask.w()) / resolution;
  for (int n = 0; n < mask.n(); ++n)
    for (int c = 0; c < mask.c(); ++c)
      for (int y = 0; y < resolution; ++y) {
        const int iy = std::min(mask.h() - 1, static_cast<int>((y + Real(0.5)) * sy));
        for (int x = 0; x < resolution; ++x) {
          const int ix = std::min(mask.w() - 1, static_cast<int>((x + Real(0.5)) * sx));
          out.at(n, c, y, x) = mask.at(n, c, iy, ix);
        }
      }
  return out;
}

Tensor hflip(const Tensor& t) {
  Tensor out(t.n(), t.c(), t.h(), t.w());
  for (int n = 0; n < t.n(); ++n)
    for (int c = 0; c < t.c(); ++c)
      for (int y = 0; y < t.h(); ++y)
        for (int x = 0; x < t.w(); ++x) out.at(n, c, y, x) = t.at(n, c, y, t.w() - 1 - x);
  return out;
}

std::pair<Tensor, Tensor> preprocess(const SampleRecord& record, int resolution, bool augment,
                                     Rng& rng) {
  if (resolution < 1) throw ConfigError("preprocess: resolution must be positive");
  Tensor image = resize_bilinear_image(record.image, resolution);
  Tensor mask = resize_nearest_mask(record.mask, resolution);
  if (augment) {
    std::uniform_real_distribution<Real> coin(0, 1);
    if (coin(rng) < Real(0.5)) {
      image = hflip(image);
      mask = hflip(mask);
    }
  }
  return {std::move(image), std::move(mask)};
}

std::pair<std::vector<SampleRecord>, std::vector<SampleRecord>> split_by_group(
    const std::vector<SampleRecord>& records, double test_fraction, Rng& rng) {
  if (test_fraction <= 0 || test_fraction >= 1) {
    throw ConfigError("split: test_fraction must lie in (0, 1)");
  }
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].group.empty()) throw DataError("record without group id: " + records[i].stem);
    groups[records[i].group].push_back(i);
  }
  if (groups.size() < 2) {
    throw DataError("split: need at least 2 groups, found " + std::to_string(groups.size()));
  }
  std::vector<std::string> names;
  for (const auto& [name, idx] : groups) names.push_back(name);
  std::shuffle(names.begin(), names.end(), rng);

  const double target = test_fraction * static_cast<double>(records.size());
  std::set<std::string> test_groups;
  double test_size = 0;
  for (const std::string& name : names) {
    const double grown = test_size + static_cast<double>(groups[name].size());
    // take the group when it moves the test size closer to the target
    if (std::abs(grown - target) <= std::abs(test_size - target)) {
      test_groups.insert(name);
      test_size = grown;
    }
  }
  if (test_groups.empty()) {
    // all groups overshoot; take the smallest
    const auto smallest = std::min_element(
        groups.begin(), groups.end(),
        [](const auto& a, const auto& b) { return a.second.size() < b.second.size(); });
    test_groups.insert(smallest->first);
  }
  if (test_groups.size() == groups.size()) {
    test_groups.erase(*test_groups.begin());  // keep the training side non-empty
  }

  std::pair<std::vector<SampleRecord>, std::vector<SampleRecord>> out;
  for (const SampleRecord& r : records) {
    (test_groups.count(r.group) ? out.second : out.first).push_back(r);
  }
  return out;
}

Real chi_square_contrast(const Tensor& image, const Tensor& mask) {
  if (image.h() != mask.h() || image.w() != mask.w() || image.n() != 1 || mask.n() != 1) {
    throw ShapeError("chi2: image " + image.shape_str() + " vs mask " + mask.shape_str());
  }
  constexpr int kBins = 8;
  constexpr Real kEps = Real(1e-8);
  std::vector<Real> inside(kBins * kBins * kBins, 0), outside(kBins * kBins * kBins, 0);
  Real n_in = 0, n_out = 0;
  for (int y = 0; y < image.h(); ++y)
    for (int x = 0; x < image.w(); ++x) {
      int idx = 0;
      for (int c = 0; c < 3; ++c) {
        const Real v = image.at(0, c, y, x);
        const int b = std::min(kBins - 1, static_cast<int>(v * kBins));
        idx = idx * kBins + b;
      }
      if (mask.at(0, 0, y, x) >= Real(0.5)) {
        inside[idx] += 1;
        n_in += 1;
      } else {
        outside[idx] += 1;
        n_out += 1;
      }
    }
  if (n_in == 0 || n_out == 0) {
    throw DataError("chi2 undefined: mask selects an empty region");
  }
  Real chi2 = 0;
  for (std::size_t i = 0; i < inside.size(); ++i) {
    const Real a = inside[i] / n_in;
    const Real b = outside[i] / n_out;
    const Real d = a - b;
    chi2 += d * d / (a + b + kEps);
  }
  return chi2 / 2;
}

DatasetStats compute_stats(const std::vector<SampleRecord>& records, int map_resolution) {
  if (records.empty()) throw DataError("compute_stats: empty record list");
  DatasetStats stats;
  stats.area_histogram.assign(10, 0);
  stats.location_map = Tensor(1, 1, map_resolution, map_resolution);
  for (const SampleRecord& r : records) {
    Real area = 0;
    for (Real v : r.mask.data()) area += v;
    const Real ratio = area / static_cast<Real>(r.mask.size());
    stats.area_ratios.push_back(ratio);
    const int bin = std::min(9, static_cast<int>(ratio * 10));
    stats.area_histogram[bin] += 1;

    Tensor resized = resize_nearest_mask(r.mask, map_resolution);
    for (std::size_t i = 0; i < resized.data().size(); ++i) {
      stats.location_map.data()[i] += resized.data()[i];
    }
    try {
      stats.chi2.push_back(chi_square_contrast(r.image, r.mask));
    } catch (const DataError&) {
      ++stats.chi2_skipped;
    }
  }
  const Real inv = Real(1) / static_cast<Real>(records.size());
  for (Real& v : stats.location_map.data()) v *= inv;
  return stats;
}

namespace {

struct Region {
  bool ellipse = false;
  int x0 = 0, y0 = 0, w = 0, h = 0;  // bounding box

  bool inside(int x, int y) const {
    if (!ellipse) {
      return x >= x0 && x < x0 + w && y >= y0 && y < y0 + h;
    }
    const Real cx = x0 + (w - 1) / Real(2), cy = y0 + (h - 1) / Real(2);
    const Real a = w / Real(2), b = h / Real(2);
    const Real dx = (x - cx) / a, dy = (y - cy) / b;
    return dx * dx + dy * dy <= 1;
  }

  bool inside_expanded(int x, int y, int t) const {
    if (!ellipse) {
      return x >= x0 - t && x < x0 + w + t && y >= y0 - t && y < y0 + h + t;
    }
    const Real cx = x0 + (w - 1) / Real(2), cy = y0 + (h - 1) / Real(2);
    const Real a = w / Real(2) + t, b = h / Real(2) + t;
    const Real dx = (x - cx) / a, dy = (y - cy) / b;
    return dx * dx + dy * dy <= 1;
  }
};

void paint_background(Tensor& img, Rng& rng) {
  const int res = img.h();
  std::uniform_real_distribution<Real> mid(Real(0.15), Real(0.85));
  std::uniform_real_distribution<Real> unit(0, 1);
  Real c0[3], c1[3];
  for (int c = 0; c < 3; ++c) {
    c0[c] = mid(rng);
    c1[c] = mid(rng);
  }
  const Real alpha = unit(rng);
  std::uniform_real_distribution<Real> amp_d(Real(0.03), Real(0.09));
  std::uniform_real_distribution<Real> freq_d(Real(1.5), Real(4.5));
  const Real amp = amp_d(rng);
  const Real fx = freq_d(rng) / res, fy = freq_d(rng) / res;
  const Real phase = unit(rng) * 2 * Real(M_PI);
  Real chan_w[3];
  for (int c = 0; c < 3; ++c) chan_w[c] = Real(0.5) + Real(0.5) * unit(rng);

  for (int y = 0; y < res; ++y)
    for (int x = 0; x < res; ++x) {
      const Real t = alpha * x / res + (1 - alpha) * y / res;
      const Real wave = amp * std::sin(2 * Real(M_PI) * (fx * x + fy * y) + phase);
      for (int c = 0; c < 3; ++c) {
        img.at(0, c, y, x) = c0[c] * (1 - t) + c1[c] * t + wave * chan_w[c];
      }
    }

  // a few solid shapes so the scene has objects
  std::uniform_int_distribution<int> count_d(2, 4);
  const int count = count_d(rng);
  for (int k = 0; k < count; ++k) {
    std::uniform_int_distribution<int> size_d(res / 10, res / 4);
    const int sw = size_d(rng), sh = size_d(rng);
    std::uniform_int_distribution<int> px(0, res - sw), py(0, res - sh);
    const int ox = px(rng), oy = py(rng);
    const bool disk = unit(rng) < Real(0.5);
    Real col[3];
    std::uniform_real_distribution<Real> col_d(Real(0.05), Real(0.95));
    for (int c = 0; c < 3; ++c) col[c] = col_d(rng);
    for (int y = oy; y < oy + sh; ++y)
      for (int x = ox; x < ox + sw; ++x) {
        if (disk) {
          const Real dx = (x - ox - sw / Real(2)) / (sw / Real(2));
          const Real dy = (y - oy - sh / Real(2)) / (sh / Real(2));
          if (dx * dx + dy * dy > 1) continue;
        }
        for (int c = 0; c < 3; ++c) {
          img.at(0, c, y, x) = Real(0.25) * img.at(0, c, y, x) + Real(0.75) * col[c];
        }
      }
  }

  // light pixel noise
  std::uniform_real_distribution<Real> noise(Real(-0.01), Real(0.01));
  for (Real& v : img.data()) {
    v += noise(rng);
    v = std::clamp(v, Real(0), Real(1));
  }
}

}  // namespace

std::vector<SampleRecord> generate_synthetic(const SynthConfig& cfg, std::uint64_t seed) {
  if (cfg.count < 1) throw ConfigError("generate: count must be positive");
  if (cfg.resolution < 16) throw ConfigError("generate: resolution must be at least 16");
  if (cfg.area_min <= 0 || cfg.area_max <= cfg.area_min || cfg.area_max > Real(0.9)) {
    throw ConfigError("generate: need 0 < area_min < area_max <= 0.9");
  }
  if (cfg.groups < 1) throw ConfigError("generate: groups must be positive");

  std::vector<SampleRecord> records;
  const int res = cfg.resolution;
  for (int i = 0; i < cfg.count; ++i) {
    Rng rng = make_stream(seed, static_cast<std::uint64_t>(i));
    const int g = i % cfg.groups;

    Tensor img(1, 3, res, res);
    paint_background(img, rng);

    // group picks the shape and a size band inside the configured range
    std::uniform_real_distribution<Real> unit(0, 1);
    const Real band = (cfg.area_max - cfg.area_min) / cfg.groups;
    Region region;
    region.ellipse = (g % 2) == 1;
    const int frame_margin = 4;
    bool placed = false;
    for (int attempt = 0; attempt < 16 && !placed; ++attempt) {
      const Real ratio = cfg.area_min + band * (g + Real(0.2) + Real(0.6) * unit(rng));
      Real box_area = ratio * res * res;
      if (region.ellipse) box_area /= Real(M_PI) / 4;  // bounding box of the ellipse
      const Real aspect = Real(0.65) + Real(0.9) * unit(rng);
      int w = static_cast<int>(std::lround(std::sqrt(box_area * aspect)));
      int h = static_cast<int>(std::lround(box_area / std::max(1, w)));
      w = std::clamp(w, 5, res - 2 * frame_margin);
      h = std::clamp(h, 5, res - 2 * frame_margin);
      std::uniform_int_distribution<int> px(frame_margin, res - w - frame_margin);
      std::uniform_int_distribution<int> py(frame_margin, res - h - frame_margin);
      region.x0 = px(rng);
      region.y0 = py(rng);
      region.w = w;
      region.h = h;
      // accept when the realized pixel count lands inside the range
      std::int64_t area_px = 0;
      for (int y = 0; y < res; ++y)
        for (int x = 0; x < res; ++x) area_px += region.inside(x, y) ? 1 : 0;
      const Real realized = static_cast<Real>(area_px) / (static_cast<Real>(res) * res);
      placed = realized >= cfg.area_min && realized <= cfg.area_max;
    }
    if (!placed) {
      // rectangle with an exact mid-band pixel count
      region.ellipse = false;
      const Real ratio = cfg.area_min + band * (g + Real(0.5));
      const Real area = ratio * res * res;
      int w = std::clamp(static_cast<int>(std::lround(std::sqrt(area))), 5, res - 2 * frame_margin);
      int h = std::clamp(static_cast<int>(std::lround(area / w)), 5, res - 2 * frame_margin);
      region.w = w;
      region.h = h;
      std::uniform_int_distribution<int> px(frame_margin, res - w - frame_margin);
      std::uniform_int_distribution<int> py(frame_margin, res - h - frame_margin);
      region.x0 = px(rng);
      region.y0 = py(rng);
    }

    // mirror content: flipped copy of another part of the scene
    const Tensor scene = img;
    std::uniform_int_distribution<int> sx_d(0, res - region.w), sy_d(0, res - region.h);
    int sx = sx_d(rng), sy = sy_d(rng);
    for (int attempt = 0; attempt < 8; ++attempt) {
      if (std::abs(sx - region.x0) + std::abs(sy - region.y0) >= res / 6) break;
      sx = sx_d(rng);
      sy = sy_d(rng);
    }
    std::uniform_real_distribution<Real> bright_d(Real(0.82), Real(0.94));
    const Real brightness = bright_d(rng);
    for (int y = region.y0; y < region.y0 + region.h; ++y)
      for (int x = region.x0; x < region.x0 + region.w; ++x) {
        if (!region.inside(x, y)) continue;
        const int src_x = sx + (region.w - 1 - (x - region.x0));  // horizontal flip
        const int src_y = sy + (y - region.y0);
        for (int c = 0; c < 3; ++c) {
          img.at(0, c, y, x) = std::clamp(scene.at(0, c, src_y, src_x) * brightness, Real(0), Real(1));
        }
      }

    // thin dark frame just outside the region
    std::uniform_int_distribution<int> t_d(1, 2);
    const int t = t_d(rng);
    std::uniform_real_distribution<Real> frame_d(Real(0.08), Real(0.28));
    const Real frame_gray = frame_d(rng);
    for (int y = std::max(0, region.y0 - t); y < std::min(res, region.y0 + region.h + t); ++y)
      for (int x = std::max(0, region.x0 - t); x < std::min(res, region.x0 + region.w + t); ++x) {
        if (region.inside(x, y) || !region.inside_expanded(x, y, t)) continue;
        for (int c = 0; c < 3; ++c) {
          img.at(0, c, y, x) = std::clamp(frame_gray + Real(0.02) * c, Real(0), Real(1));
        }
      }

    Tensor mask(1, 1, res, res);
    for (int y = 0; y < res; ++y)
      for (int x = 0; x < res; ++x) mask.at(0, 0, y, x) = region.inside(x, y) ? 1 : 0;

    SampleRecord r;
    std::ostringstream stem;
    stem << "g" << g << "_";
    stem.fill('0');
    stem.width(4);
    stem << i;
    r.stem = stem.str();
    r.group = "g" + std::to_string(g);
    r.image = std::move(img);
    r.mask = std::move(mask);
    records.push_back(std::move(r));
  }
  return records;
}

void write_dataset(std::vector<SampleRecord>& records, const fs::path& dir) {
  fs::create_directories(dir);
  for (SampleRecord& r : records) {
    r.image_path = dir / (r.stem + ".ppm");
    r.mask_path = dir / (r.stem + "_mask.pgm");
    write_pnm(r.image_path, tensor_to_image(r.image));
    write_pnm(r.mask_path, mask_to_image(r.mask));
  }
}

}  // namespace mseg
