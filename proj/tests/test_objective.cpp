#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "smmix/objective.hpp"
#include "test_helpers.hpp"

using namespace smmix;
using smmix_test::gradient_check;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.image_size = 8;
  c.patch_size = 4;
  c.channels = 1;
  c.embed_dim = 8;
  c.num_heads = 2;
  c.depth = 1;
  c.num_classes = 4;
  return c;
}

MixPlan unit_plan(int rows, int cols, int mask_i, int mask_j) {
  MixPlan p;
  p.h = p.w = 1;
  p.grid_rows = rows;
  p.grid_cols = cols;
  p.source_center_i = p.target_center_i = mask_i;
  p.source_center_j = p.target_center_j = mask_j;
  p.lambda_m = 1.0 / (rows * cols);
  p.mask.assign(static_cast<std::size_t>(rows) * cols, 0);
  p.mask[static_cast<std::size_t>(mask_i) * cols + mask_j] = 1;
  return p;
}

TokenSequence<double> token_grid(Tensor<double> tokens, int rows, int cols) {
  TokenSequence<double> ts;
  ts.tokens = std::move(tokens);
  ts.grid_rows = rows;
  ts.grid_cols = cols;
  return ts;
}

std::vector<Tensor<double>> random_images(const ModelConfig& cfg, int n, Rng& rng) {
  std::vector<Tensor<double>> imgs;
  for (int i = 0; i < n; ++i) {
    Tensor<double> img({cfg.channels, cfg.image_size, cfg.image_size});
    for (auto& v : img.value()) v = rng.next_double();
    imgs.push_back(std::move(img));
  }
  return imgs;
}

// Forward the images, then mix them by their own attention maps; returns the
// batch plus detached unmixed prediction rows.
struct MixSetup {
  MixedBatch<double> batch;
  Tensor<double> unmixed_probs;
  Tensor<double> orig_labels;
};

MixSetup make_smmix_setup(VitModel<double>& model, const std::vector<Tensor<double>>& images,
                          std::uint64_t mix_seed) {
  const ModelConfig& cfg = model.cfg;
  Tape<double> scout;
  ForwardOptions<double> opt;
  auto out = forward(scout, model, images, opt);
  std::vector<AttentionScoreGrid<double>> alphas;
  for (const auto& rec : out.attention) alphas.push_back(image_attention_score(rec, cfg));

  MixSetup s;
  s.orig_labels = Tensor<double>({static_cast<int>(images.size()), cfg.num_classes});
  for (std::size_t i = 0; i < images.size(); ++i)
    s.orig_labels.at(static_cast<int>(i), static_cast<int>(i) % cfg.num_classes) = 1.0;
  Rng mix_rng(mix_seed);
  s.batch = apply_smmix(images, s.orig_labels, alphas, mix_rng, cfg, DeltaMode::Fixed05);
  s.unmixed_probs = Tensor<double>::from(out.probs.shape(), out.probs.value());
  return s;
}

}  // namespace

TEST_CASE("aggregate_region_tokens with identical tokens") {
  Tape<double> tape;
  Tensor<double> tokens({4, 3});
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 3; ++j) tokens.at(i, j) = 0.5 + 0.25 * j;
  auto agg = aggregate_region_tokens(tape, token_grid(tokens, 2, 2), unit_plan(2, 2, 1, 0));
  CHECK(agg.inside == 1);
  CHECK(agg.outside == 3);
  for (int j = 0; j < 3; ++j) {
    CHECK(agg.x_bar_A.at(0, j) == doctest::Approx(0.5 + 0.25 * j).epsilon(1e-12));
    CHECK(agg.x_bar_B.at(0, j) == doctest::Approx(0.5 + 0.25 * j).epsilon(1e-12));
  }
}

TEST_CASE("aggregate_region_tokens single-token mask picks that token") {
  Tape<double> tape;
  Rng rng(1);
  Tensor<double> tokens({9, 5});
  for (auto& v : tokens.value()) v = rng.uniform(-1, 1);
  auto plan = unit_plan(3, 3, 2, 1);
  auto agg = aggregate_region_tokens(tape, token_grid(tokens, 3, 3), plan);
  int idx = 2 * 3 + 1;
  for (int j = 0; j < 5; ++j) CHECK(agg.x_bar_A.at(0, j) == tokens.at(idx, j));
}

TEST_CASE("aggregate_region_tokens partition identity") {
  Tape<double> tape;
  Rng rng(2);
  const int rows = 4, cols = 4, d = 6, N = rows * cols;
  Tensor<double> tokens({N, d});
  for (auto& v : tokens.value()) v = rng.uniform(-2, 2);
  MixPlan plan;
  plan.h = 2;
  plan.w = 3;
  plan.grid_rows = rows;
  plan.grid_cols = cols;
  plan.mask.assign(N, 0);
  for (int p = 0; p < 2; ++p)
    for (int q = 0; q < 3; ++q) plan.mask[static_cast<std::size_t>(1 + p) * cols + q] = 1;
  auto agg = aggregate_region_tokens(tape, token_grid(tokens, rows, cols), plan);
  REQUIRE(agg.inside + agg.outside == N);
  for (int j = 0; j < d; ++j) {
    double global = 0;
    for (int i = 0; i < N; ++i) global += tokens.at(i, j);
    double recombined = agg.inside * agg.x_bar_A.at(0, j) + agg.outside * agg.x_bar_B.at(0, j);
    CHECK(recombined == doctest::Approx(global).epsilon(1e-9));
  }
}

TEST_CASE("aggregate_region_tokens rejects bad masks") {
  Tape<double> tape;
  Tensor<double> tokens({4, 3});
  auto wrong_grid = unit_plan(3, 3, 0, 0);
  CHECK_THROWS_AS(aggregate_region_tokens(tape, token_grid(tokens, 2, 2), wrong_grid),
                  DimensionError);
  auto full = unit_plan(2, 2, 0, 0);
  full.mask.assign(4, 1);
  CHECK_THROWS_AS(aggregate_region_tokens(tape, token_grid(tokens, 2, 2), full), ValidationError);
}

TEST_CASE("fine_grained_loss at a zero classifier is ln C") {
  ModelConfig cfg = tiny_config();
  VitModel<double> model(cfg, Rng(3));  // head is zero-initialized
  Tape<double> tape;
  Rng rng(4);
  Tensor<double> tokens({cfg.num_tokens(), cfg.embed_dim});
  for (auto& v : tokens.value()) v = rng.uniform(-1, 1);
  auto agg = aggregate_region_tokens(tape, token_grid(tokens, cfg.grid(), cfg.grid()),
                                     unit_plan(cfg.grid(), cfg.grid(), 0, 1));
  auto y_A = Tensor<double>::from({1, 4}, {1, 0, 0, 0});
  auto y_B = Tensor<double>::from({1, 4}, {0, 1, 0, 0});
  auto loss = fine_grained_loss(tape, agg, model, y_A, y_B);
  CHECK(loss.value()[0] == doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("fine_grained_loss symmetry when both aggregates coincide") {
  ModelConfig cfg = tiny_config();
  VitModel<double> model(cfg, Rng(5));
  Rng hrng(6);
  for (auto& v : model.param("head.weight").value()) v = hrng.uniform(-0.5, 0.5);
  Tape<double> tape;
  // Identical tokens force x_bar_A == x_bar_B.
  Tensor<double> tokens({cfg.num_tokens(), cfg.embed_dim});
  for (int i = 0; i < cfg.num_tokens(); ++i)
    for (int j = 0; j < cfg.embed_dim; ++j) tokens.at(i, j) = 0.1 * (j + 1);
  auto agg = aggregate_region_tokens(tape, token_grid(tokens, cfg.grid(), cfg.grid()),
                                     unit_plan(cfg.grid(), cfg.grid(), 1, 1));
  auto y = Tensor<double>::from({1, 4}, {0, 0, 1, 0});
  auto loss = fine_grained_loss(tape, agg, model, y, y);

  auto logits = ops::add_rowvec(tape, ops::matmul(tape, agg.x_bar_A, model.param("head.weight")),
                                model.param("head.bias"));
  auto ce = ops::cross_entropy_soft(tape, logits, y);
  CHECK(loss.value()[0] == doctest::Approx(ce.value()[0]).epsilon(1e-12));
}

TEST_CASE("fine_grained_loss gradient w.r.t. tokens matches finite differences") {
  ModelConfig cfg = tiny_config();
  VitModel<double> model(cfg, Rng(7));
  Rng hrng(8);
  for (auto& v : model.param("head.weight").value()) v = hrng.uniform(-0.5, 0.5);
  for (auto& v : model.param("head.bias").value()) v = hrng.uniform(-0.1, 0.1);
  Rng rng(9);
  Tensor<double> tokens({cfg.num_tokens(), cfg.embed_dim}, true);
  for (auto& v : tokens.value()) v = rng.uniform(-1, 1);
  auto y_A = Tensor<double>::from({1, 4}, {0.7, 0.1, 0.1, 0.1});
  auto y_B = Tensor<double>::from({1, 4}, {0, 0, 0.5, 0.5});
  double err = gradient_check(
      [&](Tape<double>& t) {
        auto agg = aggregate_region_tokens(t, token_grid(tokens, cfg.grid(), cfg.grid()),
                                           unit_plan(cfg.grid(), cfg.grid(), 0, 0));
        return fine_grained_loss(t, agg, model, y_A, y_B);
      },
      {tokens}, 1e-5);
  CHECK(err < 1e-4);
}

TEST_CASE("consistency_loss trivial zeros") {
  Tape<double> tape;
  auto p = Tensor<double>::from({1, 2}, {0.3, 0.7});
  auto a = Tensor<double>::from({1, 2}, {0.3, 0.7});
  auto b = Tensor<double>::from({1, 2}, {0.3, 0.7});
  auto l = consistency_loss(tape, p, a, b, {0.25});
  CHECK(l.value()[0] == doctest::Approx(0.0).epsilon(1e-12));

  // lambda = 1: target mixture is Y_A alone, so Y_M == Y_A gives 0.
  auto b2 = Tensor<double>::from({1, 2}, {0.9, 0.1});
  auto l2 = consistency_loss(tape, p, a, b2, {1.0});
  CHECK(l2.value()[0] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("consistency_loss one-hot against even mixture is ln 2") {
  Tape<double> tape;
  auto p = Tensor<double>::from({1, 2}, {1.0, 0.0});
  auto a = Tensor<double>::from({1, 2}, {1.0, 0.0});
  auto b = Tensor<double>::from({1, 2}, {0.0, 1.0});
  auto l = consistency_loss(tape, p, a, b, {0.5});
  CHECK(l.value()[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("consistency_loss direction switch reverses the arguments") {
  Tape<double> tape;
  auto p = Tensor<double>::from({1, 2}, {0.8, 0.2});
  auto a = Tensor<double>::from({1, 2}, {0.5, 0.5});
  auto b = Tensor<double>::from({1, 2}, {0.1, 0.9});
  double lam = 0.5;
  double m0 = lam * 0.5 + (1 - lam) * 0.1, m1 = lam * 0.5 + (1 - lam) * 0.9;
  double fwd = 0.8 * std::log(0.8 / m0) + 0.2 * std::log(0.2 / m1);
  double rev = m0 * std::log(m0 / 0.8) + m1 * std::log(m1 / 0.2);
  CHECK(consistency_loss(tape, p, a, b, {lam}, false).value()[0] ==
        doctest::Approx(fwd).epsilon(1e-12));
  CHECK(consistency_loss(tape, p, a, b, {lam}, true).value()[0] ==
        doctest::Approx(rev).epsilon(1e-12));
}

TEST_CASE("consistency_loss rejects attached unmixed predictions") {
  Tape<double> tape;
  auto p = Tensor<double>::from({1, 2}, {0.5, 0.5});
  Tensor<double> a({1, 2}, true);
  a.at(0, 0) = a.at(0, 1) = 0.5;
  auto b = Tensor<double>::from({1, 2}, {0.5, 0.5});
  CHECK_THROWS_AS(consistency_loss(tape, p, a, b, {0.5}), ValidationError);

  // Mixture rows must be distributions.
  auto bad = Tensor<double>::from({1, 2}, {0.9, 0.9});
  auto det = Tensor<double>::from({1, 2}, {0.5, 0.5});
  CHECK_THROWS_AS(consistency_loss(tape, p, det, bad, {0.0}), ValidationError);
}

TEST_CASE("consistency_loss gradient flows only through the mixed prediction") {
  Rng rng(10);
  // Parametrize the mixed prediction by logits so FD probes stay on the
  // simplex, matching how the loss is fed in training.
  Tensor<double> logits({2, 3}, true);
  for (auto& v : logits.value()) v = rng.uniform(-1, 1);
  auto a = smmix_test::random_distribution_rows(2, 3, rng);
  auto b = smmix_test::random_distribution_rows(2, 3, rng);
  double err = gradient_check(
      [&](Tape<double>& t) {
        auto p = ops::softmax_rows(t, logits);
        return consistency_loss(t, p, a, b, {0.3, 0.6});
      },
      {logits}, 1e-5);
  CHECK(err < 1e-4);
}

TEST_CASE("total_loss forced values at a freshly initialized model") {
  ModelConfig cfg = tiny_config();
  VitModel<double> model(cfg, Rng(11));
  Rng img_rng(12);
  auto images = random_images(cfg, 2, img_rng);
  auto setup = make_smmix_setup(model, images, 13);

  // Zero-initialized head: every prediction (mixed, unmixed, fine-grained)
  // is uniform over the 4 classes.
  Tape<double> tape;
  ForwardOptions<double> opt;
  opt.record_attention = false;
  auto out = forward(tape, model, setup.batch.images, opt);
  auto lb = total_loss(tape, model, setup.batch, out, setup.orig_labels, setup.unmixed_probs);
  CHECK(lb.l_cls.value()[0] == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  CHECK(lb.l_fine.value()[0] == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  CHECK(lb.l_con.value()[0] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(lb.l_total.value()[0] ==
        lb.l_cls.value()[0] + lb.l_fine.value()[0] + lb.l_con.value()[0]);
}

TEST_CASE("total_loss ablation switches are exactly additive") {
  ModelConfig cfg = tiny_config();
  VitModel<double> model(cfg, Rng(14));
  Rng hrng(15);
  for (auto& v : model.param("head.weight").value()) v = hrng.uniform(-0.3, 0.3);
  Rng img_rng(16);
  auto images = random_images(cfg, 2, img_rng);
  auto setup = make_smmix_setup(model, images, 17);

  auto run = [&](LossSwitches sw) {
    Tape<double> tape;
    ForwardOptions<double> opt;
    opt.record_attention = false;
    auto out = forward(tape, model, setup.batch.images, opt);
    return total_loss(tape, model, setup.batch, out, setup.orig_labels, setup.unmixed_probs, sw);
  };
  auto full = run({true, true, true, false});
  CHECK(full.l_fine.value()[0] >= 0.0);
  CHECK(full.l_con.value()[0] >= 0.0);
  CHECK(full.l_total.value()[0] ==
        full.l_cls.value()[0] + full.l_fine.value()[0] + full.l_con.value()[0]);

  auto cls_only = run({true, false, false, false});
  CHECK(cls_only.l_fine.value()[0] == 0.0);
  CHECK(cls_only.l_con.value()[0] == 0.0);
  CHECK(cls_only.l_total.value()[0] == cls_only.l_cls.value()[0]);
  CHECK(full.l_cls.value()[0] == cls_only.l_cls.value()[0]);

  auto no_fine = run({true, false, true, false});
  CHECK(full.l_total.value()[0] - no_fine.l_total.value()[0] ==
        doctest::Approx(full.l_fine.value()[0]).epsilon(1e-12));
  auto no_con = run({true, true, false, false});
  CHECK(full.l_total.value()[0] - no_con.l_total.value()[0] ==
        doctest::Approx(full.l_con.value()[0]).epsilon(1e-12));
}

TEST_CASE("total_loss applies only the classification term off smmix mode") {
  ModelConfig cfg = tiny_config();
  VitModel<double> model(cfg, Rng(18));
  Rng img_rng(19), mix_rng(20);
  auto images = random_images(cfg, 2, img_rng);
  Tensor<double> labels({2, 4});
  labels.at(0, 0) = labels.at(1, 1) = 1.0;
  auto batch = apply_mixup(images, labels, mix_rng);

  Tape<double> tape;
  ForwardOptions<double> opt;
  opt.record_attention = false;
  auto out = forward(tape, model, batch.images, opt);
  auto lb = total_loss(tape, model, batch, out, labels, Tensor<double>());
  CHECK(lb.l_fine.value()[0] == 0.0);
  CHECK(lb.l_con.value()[0] == 0.0);
  CHECK(lb.l_total.value()[0] == lb.l_cls.value()[0]);
}

TEST_CASE("total_loss rejects smmix batches without plans") {
  ModelConfig cfg = tiny_config();
  VitModel<double> model(cfg, Rng(21));
  Rng img_rng(22);
  auto images = random_images(cfg, 2, img_rng);
  MixedBatch<double> batch;
  batch.mode = MixMode::Smmix;
  batch.images = images;
  batch.labels = Tensor<double>({2, 4});
  batch.labels.at(0, 0) = batch.labels.at(1, 1) = 1.0;

  Tape<double> tape;
  ForwardOptions<double> opt;
  opt.record_attention = false;
  auto out = forward(tape, model, batch.images, opt);
  CHECK_THROWS_AS(total_loss(tape, model, batch, out, batch.labels, Tensor<double>()),
                  ValidationError);
}

TEST_CASE("fine-grained predictions share the main classifier parameters") {
  ModelConfig cfg = tiny_config();
  VitModel<double> model(cfg, Rng(23));
  Rng hrng(24);
  for (auto& v : model.param("head.weight").value()) v = hrng.uniform(-0.3, 0.3);
  Rng img_rng(25);
  auto images = random_images(cfg, 2, img_rng);
  auto setup = make_smmix_setup(model, images, 26);

  // Backprop through L_fine alone must land gradient in the same storage the
  // main head reads from.
  Tape<double> tape;
  ForwardOptions<double> opt;
  opt.record_attention = false;
  auto out = forward(tape, model, setup.batch.images, opt);
  LossSwitches sw;
  sw.cls = false;
  sw.con = false;
  auto lb = total_loss(tape, model, setup.batch, out, setup.orig_labels, setup.unmixed_probs, sw);
  model.zero_grads();
  tape.backward(lb.l_total);
  double head_norm = 0;
  for (double g : model.param("head.weight").grad()) head_norm += g * g;
  CHECK(head_norm > 0.0);
}

TEST_CASE("total_loss full gradient check on a 2-image batch") {
  ModelConfig cfg = tiny_config();
  VitModel<double> model(cfg, Rng(27));
  Rng hrng(28);
  for (auto& v : model.param("head.weight").value()) v = hrng.uniform(-0.3, 0.3);
  for (auto& v : model.param("head.bias").value()) v = hrng.uniform(-0.1, 0.1);
  Rng img_rng(29);
  auto images = random_images(cfg, 2, img_rng);
  auto setup = make_smmix_setup(model, images, 30);

  std::vector<Tensor<double>> leaves;
  for (auto& [name, t] : model.params) leaves.push_back(t);
  double err = gradient_check(
      [&](Tape<double>& t) {
        ForwardOptions<double> opt;
        opt.record_attention = false;
        auto out = forward(t, model, setup.batch.images, opt);
        auto lb = total_loss(t, model, setup.batch, out, setup.orig_labels, setup.unmixed_probs);
        return lb.l_total;
      },
      leaves, 1e-4);
  CHECK(err < 1e-4);
}
