// Command-line front end: train / eval / infer / stats / crf / gen-data.
//
// Configuration precedence: built-in defaults, then the MIRRORSEG_SEED
// environment variable, then --config FILE, then explicit flags.

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "mirrorseg/config.hpp"
#include "mirrorseg/errors.hpp"
#include "mirrorseg/runner.hpp"

namespace {

struct CliOverrides {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> data_dir, out_dir, checkpoint, log_file, ablation;
  std::optional<int> epochs, batch_size, count, resolution, eval_every;
  std::optional<double> threshold, target_iou;
  bool use_crf = false;
  bool no_augment = false;
  bool dump_probs = false;
};

void add_common(CLI::App* cmd, CliOverrides& ov) {
  cmd->add_option("--config", ov.config_path, "configuration file (key = value sections)");
  cmd->add_option("--seed", ov.seed, "RNG seed (overrides MIRRORSEG_SEED and the config file)");
  cmd->add_option("--data", ov.data_dir, "dataset directory");
  cmd->add_option("--out", ov.out_dir, "output directory");
  cmd->add_option("--checkpoint", ov.checkpoint, "checkpoint path");
  cmd->add_option("--log", ov.log_file, "append-only log file");
}

mseg::RunConfig resolve_config(const CliOverrides& ov) {
  mseg::RunConfig cfg;
  if (const char* env = std::getenv("MIRRORSEG_SEED")) {
    try {
      cfg.seed = std::stoull(env);
    } catch (const std::exception&) {
      throw mseg::ConfigError(std::string("bad MIRRORSEG_SEED value '") + env + "'");
    }
  }
  if (!ov.config_path.empty()) {
    const std::uint64_t env_seed = cfg.seed;
    const std::string text = [&] {
      std::ifstream in(ov.config_path);
      if (!in) throw mseg::IoError("cannot open config file " + ov.config_path);
      std::ostringstream buf;
      buf << in.rdbuf();
      return buf.str();
    }();
    // keep the env-provided seed unless the file names one explicitly
    cfg = mseg::parse_config(text);
    if (text.find("seed") == std::string::npos) cfg.seed = env_seed;
  }
  if (ov.seed) cfg.seed = *ov.seed;
  if (ov.data_dir) cfg.data_dir = *ov.data_dir;
  if (ov.out_dir) cfg.out_dir = *ov.out_dir;
  if (ov.checkpoint) cfg.checkpoint = *ov.checkpoint;
  if (ov.log_file) cfg.log_file = *ov.log_file;
  if (ov.ablation) cfg.ablation = *ov.ablation;
  if (ov.epochs) cfg.optim.epochs = *ov.epochs;
  if (ov.batch_size) cfg.optim.batch_size = *ov.batch_size;
  if (ov.count) cfg.synth.count = *ov.count;
  if (ov.resolution) {
    cfg.network.resolution = *ov.resolution;
    cfg.synth.resolution = *ov.resolution;
  }
  if (ov.eval_every) cfg.eval_every = *ov.eval_every;
  if (ov.threshold) cfg.threshold = *ov.threshold;
  if (ov.target_iou) cfg.target_iou = *ov.target_iou;
  if (ov.use_crf) cfg.use_crf = true;
  if (ov.no_augment) cfg.augment = false;
  if (ov.dump_probs) cfg.dump_probs = true;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mirror segmentation: contextual-contrast network, desk-scale CPU build"};
  app.require_subcommand(1);

  CliOverrides ov;
  std::string image_path, prob_path;

  CLI::App* train = app.add_subcommand("train", "train a network and write a checkpoint");
  add_common(train, ov);
  train->add_option("--epochs", ov.epochs, "training epochs");
  train->add_option("--batch-size", ov.batch_size, "images per SGD step");
  train->add_option("--ablation", ov.ablation,
                    "full | bce_loss | no_ccfe | ccfe_no_contrast | 1B4C | 4B1C");
  train->add_option("--eval-every", ov.eval_every, "epochs between train-set IoU evaluations");
  train->add_option("--target-iou", ov.target_iou, "stop once train IoU reaches this value");
  train->add_flag("--no-augment", ov.no_augment, "disable horizontal-flip augmentation");

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint (IoU, Acc, F_beta, MAE, BER)");
  add_common(eval, ov);
  eval->add_flag("--crf", ov.use_crf, "refine probabilities with the dense CRF");
  eval->add_option("--threshold", ov.threshold, "binarization threshold");
  eval->add_flag("--dump-probs", ov.dump_probs, "write raw probability tensors to --out");

  CLI::App* infer = app.add_subcommand("infer", "segment one image");
  add_common(infer, ov);
  infer->add_option("--image", image_path, "input PPM image")->required();
  infer->add_flag("--crf", ov.use_crf, "refine probabilities with the dense CRF");
  infer->add_option("--threshold", ov.threshold, "binarization threshold");

  CLI::App* stats = app.add_subcommand("stats", "dataset statistics (areas, locations, contrast)");
  add_common(stats, ov);

  CLI::App* crf = app.add_subcommand("crf", "refine a probability map against its image");
  add_common(crf, ov);
  crf->add_option("--image", image_path, "input PPM image")->required();
  crf->add_option("--prob", prob_path, "probability map PGM")->required();

  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic mirror-scene dataset");
  add_common(gen, ov);
  gen->add_option("--count", ov.count, "number of scenes");
  gen->add_option("--resolution", ov.resolution, "scene resolution");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::cerr << "error: usage: " << e.what() << "\n";
    return 1;
  }

  try {
    const mseg::RunConfig cfg = resolve_config(ov);
    if (train->parsed()) {
      mseg::run_train(cfg, &std::cout);
    } else if (eval->parsed()) {
      mseg::run_eval(cfg, &std::cout);
    } else if (infer->parsed()) {
      const mseg::InferResult r = mseg::run_infer(cfg, image_path);
      std::cout << "prob=" << r.prob_path.string() << " mask=" << r.mask_path.string() << "\n";
    } else if (stats->parsed()) {
      mseg::run_stats(cfg, &std::cout);
    } else if (crf->parsed()) {
      const auto out = mseg::run_crf_file(cfg, image_path, prob_path);
      std::cout << "refined=" << out.string() << "\n";
    } else if (gen->parsed()) {
      mseg::run_gen(cfg, &std::cout);
    }
  } catch (const mseg::ConfigError& e) {
    std::cerr << "error: config: " << e.what() << "\n";
    return 1;
  } catch (const mseg::IoError& e) {
    std::cerr << "error: io: " << e.what() << "\n";
    return 1;
  } catch (const mseg::DataError& e) {
    std::cerr << "error: data: " << e.what() << "\n";
    return 1;
  } catch (const mseg::ShapeError& e) {
    std::cerr << "error: shape: " << e.what() << "\n";
    return 1;
  } catch (const mseg::StateError& e) {
    std::cerr << "error: state: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
