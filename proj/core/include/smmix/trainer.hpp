#pragma once

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "smmix/checkpoint.hpp"
#include "smmix/dataset.hpp"
#include "smmix/mixer.hpp"
#include "smmix/objective.hpp"
#include "smmix/optimizer.hpp"
#include "smmix/vit.hpp"

extern "C" void openblas_set_num_threads(int);

namespace smmix {

// Which mixing family the run uses. Smmix additionally switches to Mixup
// with probability smmix_mixup_switch_prob, per batch.
enum class TrainMixMode { Smmix, Cutmix, MixupOnly, None };

inline const char* train_mix_mode_name(TrainMixMode m) {
  switch (m) {
    case TrainMixMode::Smmix: return "smmix";
    case TrainMixMode::Cutmix: return "cutmix";
    case TrainMixMode::MixupOnly: return "mixup_only";
    case TrainMixMode::None: return "none";
  }
  return "?";
}

struct TrainConfig {
  ModelConfig model;
  OptimizerConfig optimizer;
  int warmup_steps = -1;  // -1: 5% of total steps
  int batch_size = 64;
  int epochs = 30;
  std::uint64_t seed = 42;
  TrainMixMode mix_mode = TrainMixMode::Smmix;
  double smmix_mixup_switch_prob = 0.5;
  DeltaMode delta_mode = DeltaMode::Uniform25to75;
  LossSwitches loss_switches;
  double label_smoothing = 0.0;
  bool single_thread = false;
  int threads = 0;  // 0 = leave BLAS default
  std::string data_dir = "data";
  std::string out_dir = "runs/default";

  void validate() const {
    model.validate();
    if (batch_size < 1) throw ValidationError("TrainConfig: batch_size must be >= 1");
    if (mix_mode != TrainMixMode::None && batch_size < 2)
      throw ValidationError("TrainConfig: batch_size must be >= 2 when mixing is enabled");
    if (smmix_mixup_switch_prob < 0 || smmix_mixup_switch_prob > 1)
      throw ValidationError("TrainConfig: smmix_mixup_switch_prob must be in [0,1]");
    if (epochs < 1) throw ValidationError("TrainConfig: epochs must be >= 1");
  }
};

struct EvalMetrics {
  double top1 = 0;
  std::vector<double> per_class;
  double mean_ce = 0;
  int count = 0;
};

struct StepRecord {
  std::int64_t step = 0;
  int epoch = 0;
  MixMode mode = MixMode::None;
  double l_cls = 0, l_fine = 0, l_con = 0, l_total = 0;
  double lr = 0;
};

template <class S>
class Trainer {
 public:
  Trainer(const TrainConfig& cfg, const Dataset& data)
      : cfg_(cfg),
        data_(data),
        model_(cfg.model, Rng(cfg.seed).split(1)),
        opt_(cfg.optimizer, model_.params) {
    cfg_.validate();
    if (cfg_.single_thread)
      openblas_set_num_threads(1);
    else if (cfg_.threads > 0)
      openblas_set_num_threads(cfg_.threads);
    steps_per_epoch_ = static_cast<int>(data_.train_indices.size()) / cfg_.batch_size;
    if (steps_per_epoch_ < 1)
      throw ValidationError("Trainer: fewer training samples than one batch");
    total_steps_ = static_cast<std::int64_t>(steps_per_epoch_) * cfg_.epochs;
    warmup_ = cfg_.warmup_steps >= 0 ? cfg_.warmup_steps : (total_steps_ * 5) / 100;
  }

  VitModel<S>& model() { return model_; }
  AdamW<S>& optimizer() { return opt_; }
  std::int64_t step() const { return step_; }
  std::int64_t total_steps() const { return total_steps_; }
  int steps_per_epoch() const { return steps_per_epoch_; }
  std::int64_t forward_count() const { return forward_count_; }
  std::int64_t backward_count() const { return backward_count_; }

  // One optimizer step on the given training samples. SMMix steps run an
  // unmixed no-grad forward (attention scores + detached predictions), then
  // the mixed grad forward and one backward; all other modes run a single
  // forward/backward.
  StepRecord train_step(const std::vector<int>& batch_indices) {
    Rng step_rng = Rng(cfg_.seed).split(0x100000 + static_cast<std::uint64_t>(step_));
    std::vector<Tensor<S>> images;
    std::vector<int> labels;
    images.reserve(batch_indices.size());
    for (int idx : batch_indices) {
      images.push_back(sample_to_tensor<S>(data_.samples[idx], data_.meta));
      labels.push_back(data_.samples[idx].label);
    }
    Tensor<S> label_rows =
        one_hot_labels<S>(labels, cfg_.model.num_classes, cfg_.label_smoothing);

    MixMode mode = MixMode::None;
    MixedBatch<S> mixed;
    Tensor<S> unmixed_probs;
    switch (cfg_.mix_mode) {
      case TrainMixMode::None: break;
      case TrainMixMode::Cutmix:
        mode = MixMode::Cutmix;
        break;
      case TrainMixMode::MixupOnly:
        mode = MixMode::Mixup;
        break;
      case TrainMixMode::Smmix:
        mode = step_rng.next_double() < cfg_.smmix_mixup_switch_prob ? MixMode::Mixup
                                                                     : MixMode::Smmix;
        break;
    }

    if (mode == MixMode::Smmix) {
      // Unmixed pass: inference only, never touches parameter gradients.
      Tape<S> free_tape;
      free_tape.grad_enabled = false;
      ForwardResult<S> plain = forward(free_tape, model_, images);
      ++forward_count_;
      std::vector<AttentionScoreGrid<S>> alphas;
      alphas.reserve(images.size());
      for (const auto& rec : plain.attention)
        alphas.push_back(image_attention_score(rec, cfg_.model));
      unmixed_probs = plain.probs;  // grad-free tape: already detached
      mixed = apply_smmix(images, label_rows, alphas, step_rng, cfg_.model, cfg_.delta_mode);
    } else if (mode == MixMode::Cutmix) {
      mixed = apply_cutmix(images, label_rows, step_rng, cfg_.model);
    } else if (mode == MixMode::Mixup) {
      mixed = apply_mixup(images, label_rows, step_rng);
    } else {
      mixed.images = images;
      mixed.labels = label_rows;
      mixed.mode = MixMode::None;
    }

    Tape<S> tape;
    ForwardOptions<S> fopt;
    fopt.record_attention = false;
    ForwardResult<S> out = forward(tape, model_, mixed.images, fopt);
    ++forward_count_;
    LossBreakdown<S> lb =
        total_loss(tape, model_, mixed, out, label_rows, unmixed_probs, cfg_.loss_switches);
    double loss = static_cast<double>(lb.l_total.value()[0]);
    if (!std::isfinite(loss))
      throw NumericError("non-finite loss at step " + std::to_string(step_) + " (mode " +
                         mix_mode_name(mode) + ", lr " + std::to_string(current_lr()) + ")");
    model_.zero_grads();
    tape.backward(lb.l_total);
    ++backward_count_;
    opt_.step(model_.params, current_lr());

    StepRecord rec;
    rec.step = step_;
    rec.epoch = static_cast<int>(step_ / steps_per_epoch_);
    rec.mode = mode;
    rec.l_cls = static_cast<double>(lb.l_cls.value()[0]);
    rec.l_fine = static_cast<double>(lb.l_fine.value()[0]);
    rec.l_con = static_cast<double>(lb.l_con.value()[0]);
    rec.l_total = loss;
    rec.lr = current_lr();
    ++step_;
    return rec;
  }

  double current_lr() const { return lr_at(step_, total_steps_, warmup_, cfg_.optimizer.lr); }

  // Deterministic shuffled batch order for one epoch; resume-safe because it
  // depends only on (seed, epoch).
  std::vector<std::vector<int>> epoch_batches(int epoch) const {
    std::vector<int> order = data_.train_indices;
    Rng rng = Rng(cfg_.seed).split(0x200000 + static_cast<std::uint64_t>(epoch));
    for (int i = static_cast<int>(order.size()) - 1; i > 0; --i)
      std::swap(order[i], order[static_cast<int>(rng.next_below(i + 1))]);
    std::vector<std::vector<int>> batches;
    for (int b = 0; b + cfg_.batch_size <= static_cast<int>(order.size()); b += cfg_.batch_size)
      batches.emplace_back(order.begin() + b, order.begin() + b + cfg_.batch_size);
    return batches;
  }

  EvalMetrics evaluate(const std::vector<int>& indices, int eval_batch = 64) {
    EvalMetrics m;
    m.per_class.assign(cfg_.model.num_classes, 0.0);
    std::vector<double> class_counts(cfg_.model.num_classes, 0.0);
    double ce_sum = 0;
    int correct = 0;
    for (std::size_t pos = 0; pos < indices.size(); pos += eval_batch) {
      std::size_t end = std::min(indices.size(), pos + eval_batch);
      std::vector<Tensor<S>> images;
      std::vector<int> labels;
      for (std::size_t i = pos; i < end; ++i) {
        images.push_back(sample_to_tensor<S>(data_.samples[indices[i]], data_.meta));
        labels.push_back(data_.samples[indices[i]].label);
      }
      Tape<S> tape;
      tape.grad_enabled = false;
      ForwardOptions<S> fopt;
      fopt.record_attention = false;
      ForwardResult<S> out = forward(tape, model_, images, fopt);
      Tensor<S> targets = one_hot_labels<S>(labels, cfg_.model.num_classes);
      ce_sum += static_cast<double>(
                    ops::cross_entropy_soft(tape, out.logits, targets).value()[0]) *
                static_cast<double>(labels.size());
      for (std::size_t i = 0; i < labels.size(); ++i) {
        int argmax = 0;
        for (int c = 1; c < cfg_.model.num_classes; ++c)
          if (out.probs.at(static_cast<int>(i), c) > out.probs.at(static_cast<int>(i), argmax))
            argmax = c;
        class_counts[labels[i]] += 1;
        if (argmax == labels[i]) {
          ++correct;
          m.per_class[labels[i]] += 1;
        }
      }
    }
    m.count = static_cast<int>(indices.size());
    m.top1 = m.count ? static_cast<double>(correct) / m.count : 0.0;
    for (int c = 0; c < cfg_.model.num_classes; ++c)
      if (class_counts[c] > 0) m.per_class[c] /= class_counts[c];
    m.mean_ce = m.count ? ce_sum / m.count : 0.0;
    return m;
  }

  static std::string csv_header() {
    return "step,epoch,mode,l_cls,l_fine,l_con,l_total,lr,val_top1";
  }

  static std::string csv_line(const StepRecord& r, double val_top1 = -1.0) {
    std::ostringstream os;
    os << std::setprecision(10) << r.step << ',' << r.epoch << ',' << mix_mode_name(r.mode) << ','
       << r.l_cls << ',' << r.l_fine << ',' << r.l_con << ',' << r.l_total << ',' << r.lr << ',';
    if (val_top1 >= 0) os << std::setprecision(10) << val_top1;
    return os.str();
  }

  // Full training run; writes one CSV row per step and evaluates at each
  // epoch end. Returns final validation metrics.
  EvalMetrics train(std::ostream& csv, std::ostream* log = nullptr) {
    csv << csv_header() << '\n';
    EvalMetrics last;
    int start_epoch = static_cast<int>(step_ / steps_per_epoch_);
    for (int epoch = start_epoch; epoch < cfg_.epochs; ++epoch) {
      auto batches = epoch_batches(epoch);
      // Resume mid-run lands on a step boundary; skip completed batches.
      int skip = static_cast<int>(step_ - static_cast<std::int64_t>(epoch) * steps_per_epoch_);
      for (std::size_t b = skip; b < batches.size(); ++b) {
        StepRecord rec = train_step(batches[b]);
        bool epoch_end = (b + 1 == batches.size());
        if (epoch_end) {
          last = evaluate(data_.val_indices);
          csv << csv_line(rec, last.top1) << '\n';
          if (log)
            *log << "epoch " << epoch << " step " << rec.step << " loss " << rec.l_total
                 << " val_top1 " << last.top1 << '\n';
        } else {
          csv << csv_line(rec) << '\n';
        }
      }
    }
    return last;
  }

  void save(const std::string& path) {
    TrainState<S> st;
    st.model = &model_;
    st.optimizer = &opt_;
    st.step = step_;
    st.rng_key = cfg_.seed;
    st.rng_counter = 0;
    save_checkpoint(st, path);
  }

  void load(const std::string& path) {
    TrainState<S> st;
    st.model = &model_;
    st.optimizer = &opt_;
    load_checkpoint(st, path);
    step_ = st.step;
  }

 private:
  TrainConfig cfg_;
  const Dataset& data_;
  VitModel<S> model_;
  AdamW<S> opt_;
  std::int64_t step_ = 0;
  std::int64_t total_steps_ = 0;
  int steps_per_epoch_ = 0;
  std::int64_t warmup_ = 0;
  std::int64_t forward_count_ = 0;
  std::int64_t backward_count_ = 0;
};

}  // namespace smmix
