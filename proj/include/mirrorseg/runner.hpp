#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "mirrorseg/config.hpp"
#include "mirrorseg/dataset.hpp"
#include "mirrorseg/metrics.hpp"
#include "mirrorseg/network.hpp"

namespace mseg {

// Checkpoint: "MNCK" magic, length-prefixed config text, then the parameter
// store payload. The embedded config rebuilds the network on load.
void save_checkpoint(const std::filesystem::path& path, const RunConfig& cfg,
                     const ParamStore& params);
struct Checkpoint {
  RunConfig cfg;
  std::unique_ptr<MirrorNet> net;
};
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct TrainResult {
  Real final_loss = 0;
  Real train_iou = 0;
  int epochs_run = 0;
  std::int64_t steps = 0;
  std::string checkpoint_path;
};

// Trains on cfg.data_dir, logs key=value records per step, writes the
// checkpoint, and reports the final train-set IoU. Deterministic per seed.
TrainResult run_train(const RunConfig& cfg, std::ostream* console = nullptr);

// Evaluates cfg.checkpoint on cfg.data_dir; cfg.use_crf applies CRF
// refinement before binarization. The eval resolution must match the
// checkpoint's.
MetricsReport run_eval(const RunConfig& cfg, std::ostream* console = nullptr);

struct InferResult {
  std::filesystem::path prob_path, mask_path;
};
// Writes `<stem>_prob.pgm` (255 * probability, rounded) and
// `<stem>_mask.pgm` into cfg.out_dir.
InferResult run_infer(const RunConfig& cfg, const std::filesystem::path& image_path);

// Dataset statistics over cfg.data_dir; also writes records plus the
// location-map tensor into cfg.out_dir when it is set.
DatasetStats run_stats(const RunConfig& cfg, std::ostream* console = nullptr);

// Standalone CRF refinement of a probability map file against its image.
std::filesystem::path run_crf_file(const RunConfig& cfg, const std::filesystem::path& image_path,
                                   const std::filesystem::path& prob_path);

// Synthetic scene generation into cfg.data_dir.
std::vector<SampleRecord> run_gen(const RunConfig& cfg, std::ostream* console = nullptr);

// Train-set IoU of a network over records (inference mode, no CRF).
Real dataset_iou(MirrorNet& net, const std::vector<SampleRecord>& records, int resolution,
                 Real threshold);

std::string stats_records(const DatasetStats& stats);

}  // namespace mseg
