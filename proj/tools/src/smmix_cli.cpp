#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <string>
#include <vector>

#include "smmix/analysis.hpp"
#include "smmix/config.hpp"
#include "smmix/image_io.hpp"
#include "smmix/trainer.hpp"

namespace fs = std::filesystem;
using namespace smmix;

namespace {

// --set key=value overrides, applied after the config file.
void apply_overrides(TrainConfig& cfg, const std::vector<std::string>& sets) {
  for (const std::string& kv : sets) {
    auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw ValidationError("--set expects key=value, got '" + kv + "'");
    apply_config_kv(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
}

TrainConfig build_config(const std::string& config_path, const std::vector<std::string>& sets) {
  TrainConfig cfg;
  if (!config_path.empty()) load_train_config(config_path, cfg);
  apply_overrides(cfg, sets);
  return cfg;
}

// Forward one batch, mix it per the requested mode, and return the batch
// plus the attention grids that drove the selection (empty off smmix mode).
MixedBatch<float> preview_mix(VitModel<float>& model, const Dataset& data,
                              const std::vector<int>& indices, MixMode mode, Rng& rng,
                              std::vector<AttentionScoreGrid<float>>* alphas_out) {
  std::vector<Tensor<float>> images;
  std::vector<int> labels;
  for (int idx : indices) {
    images.push_back(sample_to_tensor<float>(data.samples[idx], data.meta));
    labels.push_back(data.samples[idx].label);
  }
  Tensor<float> label_rows = one_hot_labels<float>(labels, model.cfg.num_classes);
  if (mode == MixMode::Smmix) {
    Tape<float> tape;
    tape.grad_enabled = false;
    auto out = forward(tape, model, images);
    std::vector<AttentionScoreGrid<float>> alphas;
    for (const auto& rec : out.attention) alphas.push_back(image_attention_score(rec, model.cfg));
    if (alphas_out) *alphas_out = alphas;
    return apply_smmix(images, label_rows, alphas, rng, model.cfg);
  }
  if (mode == MixMode::Cutmix) return apply_cutmix(images, label_rows, rng, model.cfg);
  return apply_mixup(images, label_rows, rng);
}

int cmd_generate(const std::string& out_dir, int count, std::uint64_t seed, int size,
                 int channels, int classes) {
  DatasetMeta meta;
  meta.height = meta.width = size;
  meta.channels = channels;
  meta.num_classes = classes;
  synth_generate(count, meta, seed, out_dir);
  if (log_verbosity() >= 1)
    std::cerr << "wrote " << count << " samples to " << out_dir << '\n';
  return 0;
}

int cmd_train(TrainConfig cfg, const std::string& resume) {
  cfg.validate();
  Dataset data = load_dataset(cfg.data_dir);
  fs::create_directories(cfg.out_dir);
  Trainer<float> trainer(cfg, data);
  if (!resume.empty()) trainer.load(resume);

  std::ofstream csv(cfg.out_dir + "/metrics.csv");
  if (!csv) throw IoError("cannot write " + cfg.out_dir + "/metrics.csv");
  int verbosity = log_verbosity();
  EvalMetrics final = trainer.train(csv, verbosity >= 1 ? &std::cerr : nullptr);
  trainer.save(cfg.out_dir + "/final.smmx");
  save_train_config(cfg, cfg.out_dir + "/run.cfg");
  std::cout << "val_top1 " << final.top1 << " mean_ce " << final.mean_ce << '\n';
  return 0;
}

int cmd_eval(TrainConfig cfg, const std::string& checkpoint, bool train_split) {
  cfg.validate();
  Dataset data = load_dataset(cfg.data_dir);
  Trainer<float> trainer(cfg, data);
  if (!checkpoint.empty()) trainer.load(checkpoint);
  auto m = trainer.evaluate(train_split ? data.train_indices : data.val_indices);
  std::cout << "top1 " << m.top1 << " mean_ce " << m.mean_ce << " count " << m.count << '\n';
  for (std::size_t c = 0; c < m.per_class.size(); ++c)
    std::cout << "class" << c << "_top1 " << m.per_class[c] << '\n';
  return 0;
}

int cmd_mix_preview(TrainConfig cfg, const std::string& checkpoint, const std::string& out_dir,
                    const std::string& mode_name, int count) {
  cfg.validate();
  Dataset data = load_dataset(cfg.data_dir);
  fs::create_directories(out_dir);
  Trainer<float> trainer(cfg, data);
  if (!checkpoint.empty()) trainer.load(checkpoint);

  MixMode mode = MixMode::Smmix;
  if (mode_name == "cutmix")
    mode = MixMode::Cutmix;
  else if (mode_name == "mixup")
    mode = MixMode::Mixup;
  else if (mode_name != "smmix")
    throw ValidationError("mix-preview: unknown mode '" + mode_name + "'");

  std::vector<int> indices(data.samples.size());
  std::iota(indices.begin(), indices.end(), 0);
  indices.resize(std::max(2, std::min<int>(count, static_cast<int>(indices.size()))));

  Rng rng(cfg.seed);
  std::vector<AttentionScoreGrid<float>> alphas;
  MixedBatch<float> mixed = preview_mix(trainer.model(), data, indices, mode, rng, &alphas);

  std::ofstream plans(out_dir + "/plans.txt");
  for (std::size_t i = 0; i < mixed.images.size(); ++i) {
    std::string name = out_dir + "/mixed_" + std::to_string(i) +
                       (data.meta.channels == 3 ? ".ppm" : ".pgm");
    write_image(mixed.images[i], name);
  }
  for (const MixPlan& plan : mixed.plans) plans << plan.to_line() << '\n';
  for (std::size_t i = 0; i < alphas.size(); ++i)
    export_attention_map(alphas[i], out_dir + "/alpha_" + std::to_string(i) + ".pgm");
  std::cout << "wrote " << mixed.images.size() << " mixed images to " << out_dir << '\n';
  return 0;
}

int cmd_attn_stats(TrainConfig cfg, const std::string& checkpoint, const std::string& out_csv,
                   int count, bool topk) {
  cfg.validate();
  Dataset data = load_dataset(cfg.data_dir);
  Trainer<float> trainer(cfg, data);
  if (!checkpoint.empty()) trainer.load(checkpoint);
  VitModel<float>& model = trainer.model();

  std::vector<int> indices(data.samples.size());
  std::iota(indices.begin(), indices.end(), 0);
  indices.resize(std::max(2, std::min<int>(count, static_cast<int>(indices.size()))));

  Rng rng(cfg.seed);
  std::vector<Tensor<float>> images;
  std::vector<int> labels;
  for (int idx : indices) {
    images.push_back(sample_to_tensor<float>(data.samples[idx], data.meta));
    labels.push_back(data.samples[idx].label);
  }
  Tensor<float> label_rows = one_hot_labels<float>(labels, cfg.model.num_classes);
  Tape<float> tape;
  tape.grad_enabled = false;
  auto out = forward(tape, model, images);
  std::vector<AttentionScoreGrid<float>> alphas;
  for (const auto& rec : out.attention) alphas.push_back(image_attention_score(rec, cfg.model));
  MixedBatch<float> mixed = apply_smmix(images, label_rows, alphas, rng, cfg.model);

  // Attention of the mixed images, regions straight from the recorded plans.
  Tape<float> tape2;
  tape2.grad_enabled = false;
  auto mixed_out = forward(tape2, model, mixed.images);

  std::ofstream csv(out_csv);
  if (!csv) throw IoError("cannot write " + out_csv);
  csv << "image,ss,st,ts,tt\n";
  RegionAttentionStats sum;
  for (const MixPlan& plan : mixed.plans) {
    auto rs = RegionIndexSets::from_plan(plan);
    auto st = region_attention_stats(mixed_out.attention[plan.target_index], cfg.model, rs);
    csv << plan.target_index << ',' << st.ss << ',' << st.st << ',' << st.ts << ',' << st.tt
        << '\n';
    sum.ss += st.ss;
    sum.st += st.st;
    sum.ts += st.ts;
    sum.tt += st.tt;
  }
  double n = static_cast<double>(mixed.plans.size());
  std::cout << "mean ss " << sum.ss / n << " st " << sum.st / n << " ts " << sum.ts / n << " tt "
            << sum.tt / n << '\n';

  if (topk) {
    std::vector<MixedEvalItem<float>> items;
    for (const MixPlan& plan : mixed.plans) {
      if (labels[plan.source_index] == labels[plan.target_index]) continue;
      MixedEvalItem<float> item;
      item.image = mixed.images[plan.target_index];
      item.y_a = labels[plan.source_index];
      item.y_b = labels[plan.target_index];
      items.push_back(std::move(item));
    }
    if (!items.empty()) {
      auto m = mixed_top_k_accuracy(model, items);
      std::cout << "mixed_top1 " << m.top1 << " mixed_top2 " << m.top2 << " count " << m.count
                << '\n';
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SMMix training laboratory"};
  app.require_subcommand(1);

  std::string config_path, resume, checkpoint, out_dir, out_csv, mode_name = "smmix";
  std::vector<std::string> sets;
  int count = 4000, size = 32, channels = 3, classes = 4, preview_count = 8;
  std::uint64_t seed = 42;
  bool train_split = false, topk = false;

  auto* gen = app.add_subcommand("generate-data", "synthesize a labelled shape dataset");
  gen->add_option("--out", out_dir, "output directory")->required();
  gen->add_option("--count", count, "number of samples");
  gen->add_option("--seed", seed, "generator seed");
  gen->add_option("--size", size, "image height/width");
  gen->add_option("--channels", channels, "image channels");
  gen->add_option("--classes", classes, "number of classes");

  auto add_cfg_opts = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "key = value config file");
    cmd->add_option("--set", sets, "config override key=value (repeatable)");
  };

  auto* train = app.add_subcommand("train", "train a model");
  add_cfg_opts(train);
  train->add_option("--resume", resume, "checkpoint to resume from");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_cfg_opts(eval);
  eval->add_option("--checkpoint", checkpoint, "checkpoint file");
  eval->add_flag("--train-split", train_split, "evaluate the training split");

  auto* preview = app.add_subcommand("mix-preview", "write mixed images and MixPlans");
  add_cfg_opts(preview);
  preview->add_option("--checkpoint", checkpoint, "checkpoint file (optional)");
  preview->add_option("--out", out_dir, "output directory")->required();
  preview->add_option("--mode", mode_name, "smmix | cutmix | mixup");
  preview->add_option("--count", preview_count, "images to mix");

  auto* stats = app.add_subcommand("attn-stats", "region attention statistics");
  add_cfg_opts(stats);
  stats->add_option("--checkpoint", checkpoint, "checkpoint file (optional)");
  stats->add_option("--out", out_csv, "output CSV path")->required();
  stats->add_option("--count", preview_count, "images to mix");
  stats->add_flag("--topk", topk, "also report mixed top-1/top-2 accuracy");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_generate(out_dir, count, seed, size, channels, classes);
    TrainConfig cfg = build_config(config_path, sets);
    if (train->parsed()) return cmd_train(cfg, resume);
    if (eval->parsed()) return cmd_eval(cfg, checkpoint, train_split);
    if (preview->parsed()) return cmd_mix_preview(cfg, checkpoint, out_dir, mode_name,
                                                  preview_count);
    if (stats->parsed()) return cmd_attn_stats(cfg, checkpoint, out_csv, preview_count, topk);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
