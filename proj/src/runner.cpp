#include "mirrorseg/runner.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "mirrorseg/errors.hpp"
#include "mirrorseg/image_io.hpp"
#include "mirrorseg/loss.hpp"
#include "mirrorseg/optim.hpp"
#include "mirrorseg/threading.hpp"

namespace mseg {

namespace fs = std::filesystem;

namespace {

constexpr char kCheckpointMagic[4] = {'M', 'N', 'C', 'K'};

void put_u32le(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32le(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw IoError("truncated checkpoint");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

// Step log sink: stdout-style stream plus optional append-only file.
class Logger {
 public:
  Logger(std::ostream* console, const std::string& path) : console_(console) {
    if (!path.empty()) {
      file_.open(path, std::ios::app);
      if (!file_) throw IoError("cannot open log file " + path);
    }
  }
  void line(const std::string& s) {
    if (console_) *console_ << s << "\n";
    if (file_.is_open()) file_ << s << "\n";
  }

 private:
  std::ostream* console_;
  std::ofstream file_;
};

struct Batch {
  Tensor images, masks;
};

Batch stack_batch(const std::vector<SampleRecord>& records, const std::vector<std::size_t>& order,
                  std::size_t begin, std::size_t end, int resolution, bool augment, Rng& rng) {
  const int b = static_cast<int>(end - begin);
  Batch out;
  out.images = Tensor(b, 3, resolution, resolution);
  out.masks = Tensor(b, 1, resolution, resolution);
  for (int k = 0; k < b; ++k) {
    auto [img, msk] = preprocess(records[order[begin + k]], resolution, augment, rng);
    std::copy(img.data().begin(), img.data().end(),
              out.images.data().begin() + static_cast<std::size_t>(k) * img.size());
    std::copy(msk.data().begin(), msk.data().end(),
              out.masks.data().begin() + static_cast<std::size_t>(k) * msk.size());
  }
  return out;
}

}  // namespace

void save_checkpoint(const fs::path& path, const RunConfig& cfg, const ParamStore& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(kCheckpointMagic, 4);
  const std::string config_text = serialize_config(cfg);
  put_u32le(out, static_cast<std::uint32_t>(config_text.size()));
  out.write(config_text.data(), static_cast<std::streamsize>(config_text.size()));
  params.save(out);
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw IoError("bad checkpoint magic in " + path.string());
  }
  const std::uint32_t len = get_u32le(in);
  std::string text(len, '\0');
  in.read(text.data(), len);
  if (!in) throw IoError("truncated checkpoint " + path.string());
  Checkpoint ck;
  ck.cfg = parse_config(text);
  ck.net = build_network(ck.cfg.network_for_ablation());
  ck.net->params().load(in);
  return ck;
}

Real dataset_iou(MirrorNet& net, const std::vector<SampleRecord>& records, int resolution,
                 Real threshold) {
  std::vector<Tensor> probs(records.size());
  parallel_for(static_cast<std::int64_t>(records.size()), [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t i = lo; i < hi; ++i) {
      probs[i] = net.predict_prob(resize_bilinear_image(records[i].image, resolution));
    }
  });
  ConfusionCounts totals;
  for (std::size_t i = 0; i < records.size(); ++i) {
    Tensor mask = resize_nearest_mask(records[i].mask, resolution);
    Tensor pred(1, 1, resolution, resolution);
    for (std::size_t k = 0; k < pred.data().size(); ++k) {
      pred.data()[k] = probs[i].data()[k] >= threshold ? Real(1) : Real(0);
    }
    totals.add(confusion(pred, mask));
  }
  return iou_accuracy(totals).first;
}

TrainResult run_train(const RunConfig& cfg, std::ostream* console) {
  cfg.validate();
  if (cfg.data_dir.empty()) throw ConfigError("train: data_dir is required");
  Logger log(console, cfg.log_file);

  const std::vector<SampleRecord> records = load_pairs(cfg.data_dir);
  if (records.empty()) throw DataError("train: no samples in " + cfg.data_dir);

  auto net = build_network(cfg.network_for_ablation());
  const int resolution = cfg.network.resolution;
  const LossKind kind = cfg.loss_kind();

  const std::size_t n = records.size();
  const std::size_t batch = static_cast<std::size_t>(cfg.optim.batch_size);
  const std::int64_t batches_per_epoch = static_cast<std::int64_t>((n + batch - 1) / batch);
  const std::int64_t max_iter = batches_per_epoch * cfg.optim.epochs;

  Rng shuffle_rng = make_stream(cfg.seed, 0x5f0f);
  Rng augment_rng = make_stream(cfg.seed, 0xa3a3);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainResult result;
  std::int64_t iter = 0;
  Real last_loss = 0;
  bool stop = false;
  for (int epoch = 0; epoch < cfg.optim.epochs && !stop; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    Real epoch_loss = 0;
    for (std::size_t b0 = 0; b0 < n; b0 += batch) {
      const std::size_t b1 = std::min(n, b0 + batch);
      Batch data = stack_batch(records, order, b0, b1, resolution, cfg.augment, augment_rng);
      MirrorNet::Forward fw = net->forward(data.images, true);
      SupervisionBundle bundle;
      bundle.maps = &fw.maps;
      bundle.mask = &data.masks;
      bundle.weights = cfg.network.loss_weights;
      TotalLossGrad lg = total_loss_grad(bundle, kind);
      net->backward(fw, lg.map_grads);
      const Real lr = poly_lr(cfg.optim.base_lr, iter, max_iter, cfg.optim.power);
      sgd_step(net->params(), cfg.optim, lr);
      ++iter;
      last_loss = lg.value;
      epoch_loss += lg.value;
      std::ostringstream os;
      os << "epoch=" << epoch << " step=" << iter << " lr=" << std::setprecision(8) << lr
         << " loss=" << std::setprecision(10) << lg.value;
      log.line(os.str());
    }
    (void)epoch_loss;
    const bool eval_now = (epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.optim.epochs;
    if (eval_now) {
      const Real iou = dataset_iou(*net, records, resolution, cfg.threshold);
      std::ostringstream os;
      os << "epoch=" << epoch << " train_iou=" << std::setprecision(8) << iou;
      log.line(os.str());
      result.train_iou = iou;
      if (cfg.target_iou > 0 && iou >= cfg.target_iou) stop = true;
    }
    result.epochs_run = epoch + 1;
  }
  result.final_loss = last_loss;
  result.steps = iter;

  fs::path ckpt = cfg.checkpoint;
  if (ckpt.is_relative() && !cfg.out_dir.empty()) ckpt = fs::path(cfg.out_dir) / ckpt;
  if (ckpt.has_parent_path()) fs::create_directories(ckpt.parent_path());
  save_checkpoint(ckpt, cfg, net->params());
  result.checkpoint_path = ckpt.string();
  std::ostringstream os;
  os << "checkpoint=" << ckpt.string() << " final_loss=" << std::setprecision(10)
     << result.final_loss << " train_iou=" << result.train_iou;
  log.line(os.str());
  return result;
}

MetricsReport run_eval(const RunConfig& cfg, std::ostream* console) {
  Logger log(console, cfg.log_file);
  if (cfg.data_dir.empty()) throw ConfigError("eval: data_dir is required");
  fs::path ckpt = cfg.checkpoint;
  if (!fs::exists(ckpt) && !cfg.out_dir.empty()) ckpt = fs::path(cfg.out_dir) / cfg.checkpoint;
  Checkpoint ck = load_checkpoint(ckpt);
  if (ck.cfg.network.resolution != cfg.network.resolution) {
    throw ConfigError("eval: resolution " + std::to_string(cfg.network.resolution) +
                      " does not match checkpoint resolution " +
                      std::to_string(ck.cfg.network.resolution));
  }
  const std::vector<SampleRecord> records = load_pairs(cfg.data_dir);
  if (records.empty()) throw DataError("eval: no samples in " + cfg.data_dir);

  const int resolution = cfg.network.resolution;
  std::vector<Tensor> raw(records.size());
  std::vector<Tensor> images(records.size());
  parallel_for(static_cast<std::int64_t>(records.size()), [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t i = lo; i < hi; ++i) {
      images[i] = resize_bilinear_image(records[i].image, resolution);
      raw[i] = ck.net->predict_prob(images[i]);
    }
  });

  if (cfg.dump_probs) {
    fs::create_directories(cfg.out_dir);
    for (std::size_t i = 0; i < records.size(); ++i) {
      save_tensor_file(raw[i], (fs::path(cfg.out_dir) / (records[i].stem + "_rawprob.mnt")).string());
    }
  }

  MetricsAccumulator acc(cfg.threshold);
  for (std::size_t i = 0; i < records.size(); ++i) {
    Tensor prob = cfg.use_crf ? crf_refine(images[i], raw[i], cfg.crf) : raw[i];
    acc.add(prob, resize_nearest_mask(records[i].mask, resolution));
  }
  MetricsReport report = acc.report();
  log.line(report.table());
  std::istringstream rec(report.records());
  std::string line;
  while (std::getline(rec, line)) log.line(line);
  return report;
}

InferResult run_infer(const RunConfig& cfg, const fs::path& image_path) {
  fs::path ckpt = cfg.checkpoint;
  if (!fs::exists(ckpt) && !cfg.out_dir.empty()) ckpt = fs::path(cfg.out_dir) / cfg.checkpoint;
  Checkpoint ck = load_checkpoint(ckpt);
  const ImageU8 raw_img = read_pnm(image_path);
  if (raw_img.channels != 3) throw DataError("infer: image must be RGB: " + image_path.string());
  const Tensor original = image_to_tensor(raw_img);
  const int resolution = ck.cfg.network.resolution;
  Tensor image = resize_bilinear_image(original, resolution);

  Tensor prob = ck.net->predict_prob(image);
  if (cfg.use_crf) prob = crf_refine(image, prob, cfg.crf);
  if (prob.h() != raw_img.height || prob.w() != raw_img.width) {
    prob = upsample_bilinear(prob, raw_img.height, raw_img.width);
  }
  Tensor mask(1, 1, prob.h(), prob.w());
  for (std::size_t i = 0; i < prob.data().size(); ++i) {
    mask.data()[i] = prob.data()[i] >= cfg.threshold ? Real(1) : Real(0);
  }

  fs::create_directories(cfg.out_dir);
  const std::string stem = image_path.stem().string();
  InferResult out;
  out.prob_path = fs::path(cfg.out_dir) / (stem + "_prob.pgm");
  out.mask_path = fs::path(cfg.out_dir) / (stem + "_mask.pgm");
  ImageU8 prob_img;
  prob_img.width = prob.w();
  prob_img.height = prob.h();
  prob_img.channels = 1;
  prob_img.pixels.resize(prob.data().size());
  for (std::size_t i = 0; i < prob.data().size(); ++i) {
    prob_img.pixels[i] = static_cast<std::uint8_t>(std::lround(prob.data()[i] * 255));
  }
  write_pnm(out.prob_path, prob_img);
  write_pnm(out.mask_path, mask_to_image(mask));
  return out;
}

std::string stats_records(const DatasetStats& stats) {
  std::ostringstream os;
  os << std::setprecision(10);
  os << "n_images=" << stats.area_ratios.size() << "\n";
  for (std::size_t b = 0; b < stats.area_histogram.size(); ++b) {
    os << "area_hist_" << b << "=" << stats.area_histogram[b] << "\n";
  }
  Real mean_area = 0;
  for (Real r : stats.area_ratios) mean_area += r;
  os << "area_mean=" << (stats.area_ratios.empty() ? 0 : mean_area / stats.area_ratios.size())
     << "\n";
  Real mean_chi2 = 0;
  for (Real c : stats.chi2) mean_chi2 += c;
  os << "chi2_n=" << stats.chi2.size() << "\n";
  os << "chi2_mean=" << (stats.chi2.empty() ? 0 : mean_chi2 / stats.chi2.size()) << "\n";
  os << "chi2_skipped=" << stats.chi2_skipped << "\n";
  return os.str();
}

DatasetStats run_stats(const RunConfig& cfg, std::ostream* console) {
  Logger log(console, cfg.log_file);
  if (cfg.data_dir.empty()) throw ConfigError("stats: data_dir is required");
  const std::vector<SampleRecord> records = load_pairs(cfg.data_dir);
  if (records.empty()) throw DataError("stats: no samples in " + cfg.data_dir);
  DatasetStats stats = compute_stats(records, cfg.network.resolution);
  std::istringstream rec(stats_records(stats));
  std::string line;
  while (std::getline(rec, line)) log.line(line);
  if (!cfg.out_dir.empty()) {
    fs::create_directories(cfg.out_dir);
    save_tensor_file(stats.location_map, (fs::path(cfg.out_dir) / "location_map.mnt").string());
    std::ofstream txt(fs::path(cfg.out_dir) / "stats.txt");
    txt << stats_records(stats);
    std::ofstream chi(fs::path(cfg.out_dir) / "chi2.txt");
    chi << std::setprecision(10);
    for (Real c : stats.chi2) chi << c << "\n";
  }
  return stats;
}

fs::path run_crf_file(const RunConfig& cfg, const fs::path& image_path, const fs::path& prob_path) {
  const ImageU8 img = read_pnm(image_path);
  if (img.channels != 3) throw DataError("crf: image must be RGB");
  const ImageU8 pm = read_pnm(prob_path);
  if (pm.channels != 1) throw DataError("crf: probability map must be grayscale");
  if (pm.width != img.width || pm.height != img.height) {
    throw ShapeError("crf: image and probability map dimensions differ");
  }
  Tensor image = image_to_tensor(img);
  Tensor prob(1, 1, pm.height, pm.width);
  for (std::size_t i = 0; i < pm.pixels.size(); ++i) {
    prob.data()[i] = static_cast<Real>(pm.pixels[i]) / 255;
  }
  Tensor refined = crf_refine(image, prob, cfg.crf);
  fs::create_directories(cfg.out_dir);
  const fs::path out = fs::path(cfg.out_dir) / (prob_path.stem().string() + "_crf.pgm");
  ImageU8 out_img;
  out_img.width = refined.w();
  out_img.height = refined.h();
  out_img.channels = 1;
  out_img.pixels.resize(refined.data().size());
  for (std::size_t i = 0; i < refined.data().size(); ++i) {
    out_img.pixels[i] = static_cast<std::uint8_t>(std::lround(refined.data()[i] * 255));
  }
  write_pnm(out, out_img);
  return out;
}

std::vector<SampleRecord> run_gen(const RunConfig& cfg, std::ostream* console) {
  Logger log(console, cfg.log_file);
  if (cfg.data_dir.empty()) throw ConfigError("gen-data: data_dir is required");
  SynthConfig synth = cfg.synth;
  synth.resolution = cfg.network.resolution;
  std::vector<SampleRecord> records = generate_synthetic(synth, cfg.seed);
  write_dataset(records, cfg.data_dir);
  std::ostringstream os;
  os << "generated=" << records.size() << " dir=" << cfg.data_dir;
  log.line(os.str());
  return records;
}

}  // namespace mseg
