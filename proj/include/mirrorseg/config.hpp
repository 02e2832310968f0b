#pragma once

#include <filesystem>
#include <string>

#include "mirrorseg/crf.hpp"
#include "mirrorseg/dataset.hpp"
#include "mirrorseg/loss.hpp"
#include "mirrorseg/network.hpp"
#include "mirrorseg/optim.hpp"

namespace mseg {

// Ablation switches, one per component-analysis configuration:
//   full             4 blocks x 4 scales with contrasts, lovasz loss
//   bce_loss         no contextual-contrast modules, BCE loss
//   no_ccfe          no contextual-contrast modules, lovasz loss
//   ccfe_no_contrast modules keep widths but drop the local-context difference
//   1B4C             one block with four contrast scales
//   4B1C             four blocks with one contrast scale
struct RunConfig {
  NetworkConfig network;
  OptimConfig optim;
  CrfParams crf;

  // dataset
  std::string data_dir;
  bool augment = true;
  Real test_fraction = Real(0.25);
  SynthConfig synth;

  // run
  std::string ablation = "full";
  std::uint64_t seed = 7;
  Real threshold = Real(0.5);
  bool use_crf = false;
  std::string checkpoint = "checkpoint.mnps";
  std::string log_file;
  std::string out_dir = ".";
  int eval_every = 10;
  Real target_iou = 0;  // early stop on train IoU; 0 disables
  bool dump_probs = false;

  void validate() const;
  LossKind loss_kind() const;
  // Network configuration with the ablation switches and seed applied.
  NetworkConfig network_for_ablation() const;
};

// Line-oriented `key = value` format with [section] headers; unknown keys and
// sections are hard errors. serialize -> parse round-trips exactly.
RunConfig parse_config(const std::string& text);
std::string serialize_config(const RunConfig& cfg);
RunConfig load_config_file(const std::filesystem::path& path);

}  // namespace mseg
