#include "smmix/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

namespace smmix {

namespace {

bool parse_bool(const std::string& v) {
  if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "off" || v == "no") return false;
  throw ValidationError("config: not a boolean: '" + v + "'");
}

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  std::size_t e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? "" : s.substr(b, e - b + 1);
}

}  // namespace

TrainMixMode parse_mix_mode(const std::string& s) {
  if (s == "smmix") return TrainMixMode::Smmix;
  if (s == "cutmix") return TrainMixMode::Cutmix;
  if (s == "mixup_only" || s == "mixup") return TrainMixMode::MixupOnly;
  if (s == "none") return TrainMixMode::None;
  throw ValidationError("config: unknown mix_mode '" + s + "'");
}

DeltaMode parse_delta_mode(const std::string& s) {
  if (s == "uniform_25_75") return DeltaMode::Uniform25to75;
  if (s == "fixed_05") return DeltaMode::Fixed05;
  if (s == "uniform_0_1") return DeltaMode::Uniform01;
  throw ValidationError("config: unknown delta_mode '" + s + "'");
}

void apply_config_kv(TrainConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "image_size") cfg.model.image_size = std::stoi(value);
  else if (key == "patch_size") cfg.model.patch_size = std::stoi(value);
  else if (key == "channels") cfg.model.channels = std::stoi(value);
  else if (key == "embed_dim") cfg.model.embed_dim = std::stoi(value);
  else if (key == "num_heads") cfg.model.num_heads = std::stoi(value);
  else if (key == "depth") cfg.model.depth = std::stoi(value);
  else if (key == "num_classes") cfg.model.num_classes = std::stoi(value);
  else if (key == "use_class_token") cfg.model.use_class_token = parse_bool(value);
  else if (key == "attention_score_block") cfg.model.attention_score_block = std::stoi(value);
  else if (key == "lr") cfg.optimizer.lr = std::stod(value);
  else if (key == "weight_decay") cfg.optimizer.weight_decay = std::stod(value);
  else if (key == "beta1") cfg.optimizer.beta1 = std::stod(value);
  else if (key == "beta2") cfg.optimizer.beta2 = std::stod(value);
  else if (key == "warmup_steps") cfg.warmup_steps = std::stoi(value);
  else if (key == "batch_size") cfg.batch_size = std::stoi(value);
  else if (key == "epochs") cfg.epochs = std::stoi(value);
  else if (key == "seed") cfg.seed = std::stoull(value);
  else if (key == "mix_mode") cfg.mix_mode = parse_mix_mode(value);
  else if (key == "smmix_mixup_switch_prob") cfg.smmix_mixup_switch_prob = std::stod(value);
  else if (key == "delta_mode") cfg.delta_mode = parse_delta_mode(value);
  else if (key == "loss_cls") cfg.loss_switches.cls = parse_bool(value);
  else if (key == "loss_fine") cfg.loss_switches.fine = parse_bool(value);
  else if (key == "loss_con") cfg.loss_switches.con = parse_bool(value);
  else if (key == "kl_reversed") cfg.loss_switches.kl_reversed = parse_bool(value);
  else if (key == "label_smoothing") cfg.label_smoothing = std::stod(value);
  else if (key == "single_thread") cfg.single_thread = parse_bool(value);
  else if (key == "threads") cfg.threads = std::stoi(value);
  else if (key == "data_dir") cfg.data_dir = value;
  else if (key == "out_dir") cfg.out_dir = value;
  else throw ValidationError("config: unknown key '" + key + "'");
}

void load_train_config(const std::string& path, TrainConfig& cfg) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ValidationError("config: line " + std::to_string(lineno) + " has no '='");
    apply_config_kv(cfg, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
}

void save_train_config(const TrainConfig& cfg, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write config " + path);
  os << "image_size = " << cfg.model.image_size << '\n'
     << "patch_size = " << cfg.model.patch_size << '\n'
     << "channels = " << cfg.model.channels << '\n'
     << "embed_dim = " << cfg.model.embed_dim << '\n'
     << "num_heads = " << cfg.model.num_heads << '\n'
     << "depth = " << cfg.model.depth << '\n'
     << "num_classes = " << cfg.model.num_classes << '\n'
     << "use_class_token = " << (cfg.model.use_class_token ? 1 : 0) << '\n'
     << "attention_score_block = " << cfg.model.attention_score_block << '\n'
     << "lr = " << cfg.optimizer.lr << '\n'
     << "weight_decay = " << cfg.optimizer.weight_decay << '\n'
     << "beta1 = " << cfg.optimizer.beta1 << '\n'
     << "beta2 = " << cfg.optimizer.beta2 << '\n'
     << "warmup_steps = " << cfg.warmup_steps << '\n'
     << "batch_size = " << cfg.batch_size << '\n'
     << "epochs = " << cfg.epochs << '\n'
     << "seed = " << cfg.seed << '\n'
     << "mix_mode = " << train_mix_mode_name(cfg.mix_mode) << '\n'
     << "smmix_mixup_switch_prob = " << cfg.smmix_mixup_switch_prob << '\n'
     << "delta_mode = "
     << (cfg.delta_mode == DeltaMode::Fixed05
             ? "fixed_05"
             : cfg.delta_mode == DeltaMode::Uniform01 ? "uniform_0_1" : "uniform_25_75")
     << '\n'
     << "loss_cls = " << (cfg.loss_switches.cls ? 1 : 0) << '\n'
     << "loss_fine = " << (cfg.loss_switches.fine ? 1 : 0) << '\n'
     << "loss_con = " << (cfg.loss_switches.con ? 1 : 0) << '\n'
     << "kl_reversed = " << (cfg.loss_switches.kl_reversed ? 1 : 0) << '\n'
     << "label_smoothing = " << cfg.label_smoothing << '\n'
     << "single_thread = " << (cfg.single_thread ? 1 : 0) << '\n'
     << "threads = " << cfg.threads << '\n'
     << "data_dir = " << cfg.data_dir << '\n'
     << "out_dir = " << cfg.out_dir << '\n';
}

int log_verbosity() {
  const char* v = std::getenv("SMMIX_LOG");
  if (!v) return 0;
  return std::atoi(v);
}

}  // namespace smmix
