#include "mirrorseg/config.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

#include "mirrorseg/errors.hpp"

namespace mseg {

namespace {

std::string trim(const std::string& s) {
  const auto l = s.find_first_not_of(" \t\r\n");
  if (l == std::string::npos) return "";
  const auto r = s.find_last_not_of(" \t\r\n");
  return s.substr(l, r - l + 1);
}

Real parse_real(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const Real r = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw ConfigError("bad numeric value for " + key + ": '" + v + "'");
  }
}

std::int64_t parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const std::int64_t r = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw ConfigError("bad integer value for " + key + ": '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError("bad boolean value for " + key + ": '" + v + "' (use true/false)");
}

template <typename T, typename F>
std::vector<T> parse_list(const std::string& key, const std::string& v, F item) {
  std::vector<T> out;
  std::stringstream ss(v);
  std::string part;
  while (std::getline(ss, part, ',')) {
    part = trim(part);
    if (part.empty()) throw ConfigError("empty list element in " + key);
    out.push_back(item(key, part));
  }
  if (out.empty()) throw ConfigError("empty list for " + key);
  return out;
}

std::string fmt_real(Real v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

LossKind RunConfig::loss_kind() const {
  return ablation == "bce_loss" ? LossKind::kBce : LossKind::kLovasz;
}

NetworkConfig RunConfig::network_for_ablation() const {
  NetworkConfig n = network;
  n.seed = seed;
  if (ablation == "full") {
    n.ccfe_mode = CcfeMode::kFull;
  } else if (ablation == "bce_loss" || ablation == "no_ccfe") {
    n.ccfe_mode = CcfeMode::kNone;
  } else if (ablation == "ccfe_no_contrast") {
    n.ccfe_mode = CcfeMode::kNoContrast;
  } else if (ablation == "1B4C") {
    n.ccfe_mode = CcfeMode::kFull;
    n.ccfe_blocks = 1;
    n.ccfe_scales = 4;
  } else if (ablation == "4B1C") {
    n.ccfe_mode = CcfeMode::kFull;
    n.ccfe_blocks = 4;
    n.ccfe_scales = 1;
  } else {
    throw ConfigError("unknown ablation mode '" + ablation +
                      "' (full, bce_loss, no_ccfe, ccfe_no_contrast, 1B4C, 4B1C)");
  }
  return n;
}

void RunConfig::validate() const {
  network_for_ablation().validate();
  optim.validate();
  crf.validate();
  if (threshold <= 0 || threshold >= 1) throw ConfigError("run: threshold must lie in (0, 1)");
  if (test_fraction <= 0 || test_fraction >= 1) {
    throw ConfigError("dataset: test_fraction must lie in (0, 1)");
  }
  if (eval_every < 1) throw ConfigError("run: eval_every must be positive");
  if (target_iou < 0 || target_iou > 1) throw ConfigError("run: target_iou must lie in [0, 1]");
}

RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  // loss_weights defaults track the widths unless given explicitly
  bool saw_weights = false, saw_widths = false;

  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    if (t.front() == '[') {
      if (t.back() != ']') throw ConfigError("bad section header at line " + std::to_string(lineno));
      section = t.substr(1, t.size() - 2);
      if (section != "network" && section != "optim" && section != "crf" &&
          section != "dataset" && section != "run") {
        throw ConfigError("unknown config section [" + section + "]");
      }
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("expected key = value at line " + std::to_string(lineno));
    }
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    const std::string qkey = section + "." + key;

    if (section == "network") {
      if (key == "resolution") cfg.network.resolution = static_cast<int>(parse_int(qkey, value));
      else if (key == "widths") {
        cfg.network.widths = parse_list<int>(qkey, value, [](const std::string& k, const std::string& v) {
          return static_cast<int>(parse_int(k, v));
        });
        saw_widths = true;
      } else if (key == "ccfe_blocks") cfg.network.ccfe_blocks = static_cast<int>(parse_int(qkey, value));
      else if (key == "ccfe_scales") cfg.network.ccfe_scales = static_cast<int>(parse_int(qkey, value));
      else if (key == "attention_reduction") cfg.network.attention_reduction = static_cast<int>(parse_int(qkey, value));
      else if (key == "loss_weights") {
        cfg.network.loss_weights = parse_list<Real>(qkey, value, parse_real);
        saw_weights = true;
      } else throw ConfigError("unknown config key '" + qkey + "'");
    } else if (section == "optim") {
      if (key == "base_lr") cfg.optim.base_lr = parse_real(qkey, value);
      else if (key == "momentum") cfg.optim.momentum = parse_real(qkey, value);
      else if (key == "weight_decay") cfg.optim.weight_decay = parse_real(qkey, value);
      else if (key == "poly_power") cfg.optim.power = parse_real(qkey, value);
      else if (key == "epochs") cfg.optim.epochs = static_cast<int>(parse_int(qkey, value));
      else if (key == "batch_size") cfg.optim.batch_size = static_cast<int>(parse_int(qkey, value));
      else if (key == "exempt_bn_decay") cfg.optim.exempt_bn_decay = parse_bool(qkey, value);
      else throw ConfigError("unknown config key '" + qkey + "'");
    } else if (section == "crf") {
      if (key == "w_appearance") cfg.crf.w_appearance = parse_real(qkey, value);
      else if (key == "w_smoothness") cfg.crf.w_smoothness = parse_real(qkey, value);
      else if (key == "theta_alpha") cfg.crf.theta_alpha = parse_real(qkey, value);
      else if (key == "theta_beta") cfg.crf.theta_beta = parse_real(qkey, value);
      else if (key == "theta_gamma") cfg.crf.theta_gamma = parse_real(qkey, value);
      else if (key == "iterations") cfg.crf.iterations = static_cast<int>(parse_int(qkey, value));
      else throw ConfigError("unknown config key '" + qkey + "'");
    } else if (section == "dataset") {
      if (key == "data_dir") cfg.data_dir = value;
      else if (key == "augment") cfg.augment = parse_bool(qkey, value);
      else if (key == "test_fraction") cfg.test_fraction = parse_real(qkey, value);
      else if (key == "synth_count") cfg.synth.count = static_cast<int>(parse_int(qkey, value));
      else if (key == "synth_groups") cfg.synth.groups = static_cast<int>(parse_int(qkey, value));
      else if (key == "area_min") cfg.synth.area_min = parse_real(qkey, value);
      else if (key == "area_max") cfg.synth.area_max = parse_real(qkey, value);
      else throw ConfigError("unknown config key '" + qkey + "'");
    } else if (section == "run") {
      if (key == "ablation") cfg.ablation = value;
      else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(parse_int(qkey, value));
      else if (key == "threshold") cfg.threshold = parse_real(qkey, value);
      else if (key == "use_crf") cfg.use_crf = parse_bool(qkey, value);
      else if (key == "checkpoint") cfg.checkpoint = value;
      else if (key == "log_file") cfg.log_file = value;
      else if (key == "out_dir") cfg.out_dir = value;
      else if (key == "eval_every") cfg.eval_every = static_cast<int>(parse_int(qkey, value));
      else if (key == "target_iou") cfg.target_iou = parse_real(qkey, value);
      else if (key == "dump_probs") cfg.dump_probs = parse_bool(qkey, value);
      else throw ConfigError("unknown config key '" + qkey + "'");
    } else {
      throw ConfigError("key '" + key + "' appears before any [section] header");
    }
  }
  if (saw_widths && !saw_weights) {
    cfg.network.loss_weights.assign(cfg.network.widths.size(), Real(1));
  }
  cfg.synth.resolution = cfg.network.resolution;
  return cfg;
}

std::string serialize_config(const RunConfig& cfg) {
  std::ostringstream os;
  os << "[network]\n";
  os << "resolution = " << cfg.network.resolution << "\n";
  os << "widths = ";
  for (std::size_t i = 0; i < cfg.network.widths.size(); ++i) {
    os << (i ? "," : "") << cfg.network.widths[i];
  }
  os << "\n";
  os << "ccfe_blocks = " << cfg.network.ccfe_blocks << "\n";
  os << "ccfe_scales = " << cfg.network.ccfe_scales << "\n";
  os << "attention_reduction = " << cfg.network.attention_reduction << "\n";
  os << "loss_weights = ";
  for (std::size_t i = 0; i < cfg.network.loss_weights.size(); ++i) {
    os << (i ? "," : "") << fmt_real(cfg.network.loss_weights[i]);
  }
  os << "\n";
  os << "[optim]\n";
  os << "base_lr = " << fmt_real(cfg.optim.base_lr) << "\n";
  os << "momentum = " << fmt_real(cfg.optim.momentum) << "\n";
  os << "weight_decay = " << fmt_real(cfg.optim.weight_decay) << "\n";
  os << "poly_power = " << fmt_real(cfg.optim.power) << "\n";
  os << "epochs = " << cfg.optim.epochs << "\n";
  os << "batch_size = " << cfg.optim.batch_size << "\n";
  os << "exempt_bn_decay = " << (cfg.optim.exempt_bn_decay ? "true" : "false") << "\n";
  os << "[crf]\n";
  os << "w_appearance = " << fmt_real(cfg.crf.w_appearance) << "\n";
  os << "w_smoothness = " << fmt_real(cfg.crf.w_smoothness) << "\n";
  os << "theta_alpha = " << fmt_real(cfg.crf.theta_alpha) << "\n";
  os << "theta_beta = " << fmt_real(cfg.crf.theta_beta) << "\n";
  os << "theta_gamma = " << fmt_real(cfg.crf.theta_gamma) << "\n";
  os << "iterations = " << cfg.crf.iterations << "\n";
  os << "[dataset]\n";
  os << "data_dir = " << cfg.data_dir << "\n";
  os << "augment = " << (cfg.augment ? "true" : "false") << "\n";
  os << "test_fraction = " << fmt_real(cfg.test_fraction) << "\n";
  os << "synth_count = " << cfg.synth.count << "\n";
  os << "synth_groups = " << cfg.synth.groups << "\n";
  os << "area_min = " << fmt_real(cfg.synth.area_min) << "\n";
  os << "area_max = " << fmt_real(cfg.synth.area_max) << "\n";
  os << "[run]\n";
  os << "ablation = " << cfg.ablation << "\n";
  os << "seed = " << cfg.seed << "\n";
  os << "threshold = " << fmt_real(cfg.threshold) << "\n";
  os << "use_crf = " << (cfg.use_crf ? "true" : "false") << "\n";
  os << "checkpoint = " << cfg.checkpoint << "\n";
  os << "log_file = " << cfg.log_file << "\n";
  os << "out_dir = " << cfg.out_dir << "\n";
  os << "eval_every = " << cfg.eval_every << "\n";
  os << "target_iou = " << fmt_real(cfg.target_iou) << "\n";
  os << "dump_probs = " << (cfg.dump_probs ? "true" : "false") << "\n";
  return os.str();
}

RunConfig load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

}  // namespace mseg
