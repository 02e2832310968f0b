#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "mirrorseg/rng.hpp"
#include "mirrorseg/tensor.hpp"

namespace mseg {

struct SampleRecord {
  std::string stem;
  std::filesystem::path image_path, mask_path;
  std::string group;  // mirror type
  Tensor image;       // (1, 3, H, W) in [0,1]
  Tensor mask;        // (1, 1, H, W) in {0,1}
};

// Scans a directory for `<stem>.ppm` + `<stem>_mask.pgm` pairs, decoded
// eagerly, sorted by stem. Group id comes from a `<stem>.group` text file
// when present, otherwise from the stem prefix before the first '_'.
// Orphan images or masks are rejected by name.
std::vector<SampleRecord> load_pairs(const std::filesystem::path& dir);

// Bilinear resize for the image, nearest for the mask; optional horizontal
// flip applied to both or neither with probability 1/2.
std::pair<Tensor, Tensor> preprocess(const SampleRecord& record, int resolution, bool augment,
                                     Rng& rng);

Tensor resize_bilinear_image(const Tensor& image, int resolution);
Tensor resize_nearest_mask(const Tensor& mask, int resolution);
Tensor hflip(const Tensor& t);

// Groups are assigned atomically to one side; sizes approach the target
// fraction at group granularity. Requires at least two groups.
std::pair<std::vector<SampleRecord>, std::vector<SampleRecord>> split_by_group(
    const std::vector<SampleRecord>& records, double test_fraction, Rng& rng);

struct DatasetStats {
  std::vector<std::size_t> area_histogram;  // 10 bins of width 0.1 over [0,1]
  std::vector<Real> area_ratios;            // per image
  Tensor location_map;                      // (1, 1, R, R) per-pixel mirror frequency
  std::vector<Real> chi2;                   // per image with both regions non-empty
  std::size_t chi2_skipped = 0;             // all-mirror or no-mirror masks
};

DatasetStats compute_stats(const std::vector<SampleRecord>& records, int map_resolution = 64);

// Chi-squared distance between the normalized joint RGB histograms (8 bins
// per channel) inside and outside the mask. 0 for identical distributions,
// ~1 for disjoint support. Throws DataError when either region is empty.
Real chi_square_contrast(const Tensor& image, const Tensor& mask);

struct SynthConfig {
  int count = 20;
  int resolution = 64;
  Real area_min = Real(0.05);
  Real area_max = Real(0.5);
  int groups = 4;
};

// Synthetic mirror scenes: textured background, a rectangular or elliptical
// mirror region filled with a horizontally flipped, slightly darkened copy
// of another part of the scene, and a thin dark frame around it. The mask is
// the region interior. Deterministic per (seed, index).
std::vector<SampleRecord> generate_synthetic(const SynthConfig& cfg, std::uint64_t seed);

// Writes `<stem>.ppm` / `<stem>_mask.pgm` files and fills in the paths.
void write_dataset(std::vector<SampleRecord>& records, const std::filesystem::path& dir);

}  // namespace mseg
