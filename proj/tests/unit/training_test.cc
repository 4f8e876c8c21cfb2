// Copyright 2026 The Prefalign Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#include "prefalign/training.hpp"

#include <cmath>
#include <numbers>
#include <vector>

#include <gtest/gtest.h>

#include "prefalign/neural_policy.hpp"
#include "prefalign/reference.hpp"
#include "prefalign/tabular_policy.hpp"

namespace prefalign {
namespace {

using TabularExample = SftExampleFor<TabularPolicy>;

TEST(CosineLrTest, Endpoints) {
  EXPECT_DOUBLE_EQ(cosine_lr(0, 100, 1e-3, 1e-5), 1e-3);
  EXPECT_NEAR(cosine_lr(100, 100, 1e-3, 1e-5), 1e-5, 1e-18);
  EXPECT_NEAR(cosine_lr(50, 100, 1e-3, 1e-5), 0.5 * (1e-3 + 1e-5), 1e-15);
  EXPECT_NEAR(cosine_lr(25, 100, 1.0, 0.0), 0.5 * (1.0 + std::cos(std::numbers::pi / 4.0)), 1e-15);
}

TEST(CosineLrTest, MonotoneAndRangeChecked) {
  double prev = INFINITY;
  for (long s = 0; s <= 40; ++s) {
    const double lr = cosine_lr(s, 40, 2e-3, 1e-4);
    EXPECT_LE(lr, prev);
    prev = lr;
  }
  EXPECT_THROW(cosine_lr(-1, 10, 1, 0), Error);
  EXPECT_THROW(cosine_lr(11, 10, 1, 0), Error);
  EXPECT_THROW(cosine_lr(0, 0, 1, 0), Error);
}

// Independent scalar AdamW recurrence.
TEST(AdamWTest, MatchesScalarRecurrence) {
  Matrix theta(1, 1);
  theta << 0.5;
  std::vector<ParamRef> params = {{"t", &theta}};
  TrainConfig cfg;
  cfg.weight_decay = 0.1;
  OptimizerState s = make_optimizer_state(params, cfg);
  double t = 0.5, m = 0.0, v = 0.0;
  const double grads[] = {0.3, -1.2, 0.05, 2.0, -0.7};
  for (int k = 0; k < 5; ++k) {
    const double lr = 0.01 * (k + 1);
    adamw_update(params, GradientSet{Matrix::Constant(1, 1, grads[k])}, s, lr);
    m = 0.9 * m + 0.1 * grads[k];
    v = 0.999 * v + 0.001 * grads[k] * grads[k];
    t *= 1.0 - lr * 0.1;
    const double mh = m / (1.0 - std::pow(0.9, k + 1));
    const double vh = v / (1.0 - std::pow(0.999, k + 1));
    t -= lr * mh / (std::sqrt(vh) + 1e-8);
    EXPECT_NEAR(theta(0, 0), t, 1e-15);
  }
}

TEST(AdamWTest, ZeroLearningRateIsNoOp) {
  Matrix theta = (Matrix(2, 2) << 1, -2, 3, 0.5).finished();
  const Matrix before = theta;
  std::vector<ParamRef> params = {{"t", &theta}};
  OptimizerState s = make_optimizer_state(params, TrainConfig{});
  for (int k = 0; k < 3; ++k) adamw_update(params, GradientSet{Matrix::Constant(2, 2, 1.5)}, s, 0.0);
  EXPECT_EQ(theta, before);
}

TEST(SftTest, ResponseOnlyLoss) {
  const auto p = TabularPolicy::from_probabilities((Matrix(2, 2) << 0.5, 0.5, 0.25, 0.75).finished());
  const std::vector<TabularExample> batch = {{0, 0}, {1, 1}};
  EXPECT_NEAR(sft_loss(p, batch), -(std::log(0.5) + std::log(0.75)) / 2.0, 1e-12);
}

TEST(SftTest, ErrorsNameTheExample) {
  const NeuralPolicy p(NeuralConfig{}, 1);
  const std::vector<SftExampleFor<NeuralPolicy>> batch = {{{1}, {2}}, {{1}, {}}};
  try {
    sft_loss(p, batch);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("example 1"), std::string::npos) << e.what();
  }
}

TEST(SftTest, TabularConvergesToEmpiricalDistribution) {
  auto p = TabularPolicy::uniform(1, 3);
  const std::vector<TabularExample> data = {{0, 0}, {0, 0}, {0, 0}, {0, 1}};
  TrainConfig cfg;
  cfg.lr_max = 0.05;
  cfg.lr_min = 0.05;
  cfg.total_steps = 3000;
  cfg.weight_decay = 0.0;
  TrainState st = init_train_state(p, cfg);
  for (int i = 0; i < cfg.total_steps; ++i) train_step(p, std::span<const TabularExample>(data), cfg, st);
  EXPECT_NEAR(p.probabilities(0)(0), 0.75, 2e-2);
  EXPECT_NEAR(p.probabilities(0)(1), 0.25, 2e-2);
  EXPECT_LT(p.probabilities(0)(2), 0.02);
}

TEST(DpoGradientTest, ZeroMarginGradient) {
  // pi == pi_ref: each pair pushes chosen up and rejected down by beta/2.
  auto p = TabularPolicy::from_logits((Matrix(1, 3) << 0.3, -0.2, 1.0).finished());
  const auto ref = snapshot_reference(p);
  const std::vector<TabularPair> batch = {{0, 0, 1, 1.0}};
  GradientSet g = p.make_gradients();
  const double loss = detail::dpo_loss_and_grad(p, ref, std::span<const TabularPair>(batch), Beta{0.4}, 1,
                                                ForwardOptions{}, g);
  EXPECT_NEAR(loss, std::log(2.0), 1e-12);
  EXPECT_NEAR(g[0](0, 0), -0.2, 1e-12);
  EXPECT_NEAR(g[0](0, 1), 0.2, 1e-12);
  EXPECT_NEAR(g[0](0, 2), 0.0, 1e-12);
}

GradCheckResult TabularDpoGradCheck(TabularPolicy& p, const ReferenceSnapshot<TabularPolicy>& ref,
                                    const std::vector<TabularPair>& batch, double beta) {
  auto loss_fn = [&](GradientSet* g) {
    GradientSet local = p.make_gradients();
    const double loss = detail::dpo_loss_and_grad(p, ref, std::span<const TabularPair>(batch), Beta{beta}, 1,
                                                  ForwardOptions{}, g ? *g : local);
    return loss;
  };
  return grad_check(loss_fn, p.trainable_parameters(), p.make_gradients());
}

TEST(GradCheckTest, TabularDpoAcrossBetas) {
  Rng rng(31);
  for (double beta : {0.01, 0.1, 0.5, 1.0}) {
    Matrix logits(3, 4), ref_logits(3, 4);
    for (Eigen::Index i = 0; i < logits.size(); ++i) {
      logits.data()[i] = rng.normal();
      ref_logits.data()[i] = rng.normal();
    }
    auto p = TabularPolicy::from_logits(logits);
    const auto ref = snapshot_reference(TabularPolicy::from_logits(ref_logits));
    std::vector<TabularPair> batch;
    for (int k = 0; k < 12; ++k) {
      const auto a = static_cast<std::size_t>(rng.below(4));
      auto b = static_cast<std::size_t>(rng.below(3));
      if (b >= a) ++b;
      batch.push_back({static_cast<std::size_t>(rng.below(3)), a, b, 0.5 + rng.uniform()});
    }
    const GradCheckResult r = TabularDpoGradCheck(p, ref, batch, beta);
    EXPECT_EQ(r.components, 12u);
    EXPECT_LE(r.max_relative_error, 1e-4) << "beta " << beta << " at " << r.worst_parameter;
  }
}

TEST(GradCheckTest, NeuralDpoLoss) {
  NeuralConfig cfg;
  cfg.vocab_size = 6;
  cfg.d_model = 8;
  cfg.num_heads = 2;
  cfg.ff_mult = 2;
  cfg.context_window = 32;
  cfg.dropout = 0.0;
  cfg.begin_response = 4;
  cfg.end_response = 5;
  NeuralPolicy p(cfg, 3);
  const auto ref = snapshot_reference(NeuralPolicy(cfg, 4));
  const std::vector<PairFor<NeuralPolicy>> batch = {{{0, 1, 2}, {3, 3, 5}, {1, 5}, 1.0},
                                                    {{2, 2}, {0, 5}, {1, 2, 3, 5}, 1.0}};
  auto loss_fn = [&](GradientSet* g) {
    GradientSet local = p.make_gradients();
    return detail::dpo_loss_and_grad(p, ref, std::span<const PairFor<NeuralPolicy>>(batch), Beta{0.5}, 1,
                                     ForwardOptions{}, g ? *g : local);
  };
  const GradCheckResult r = grad_check(loss_fn, p.trainable_parameters(), p.make_gradients());
  EXPECT_LE(r.max_relative_error, 1e-3) << r.worst_parameter;
}

TEST(AccumulationTest, SplitBatchGivesSameGradient) {
  NeuralConfig cfg;
  cfg.d_model = 8;
  cfg.num_heads = 2;
  cfg.dropout = 0.0;
  const NeuralPolicy p(cfg, 6);
  std::vector<SftExampleFor<NeuralPolicy>> batch;
  for (int i = 0; i < 7; ++i) {
    batch.push_back({Vocabulary::prompt_tokens("q" + std::to_string(i)),
                     Vocabulary::response_tokens(std::string(static_cast<std::size_t>(i + 1), 'a'))});
  }
  GradientSet g1 = p.make_gradients();
  GradientSet g3 = p.make_gradients();
  const auto span = std::span<const SftExampleFor<NeuralPolicy>>(batch);
  const double l1 = detail::sft_loss_and_grad(p, span, 1, ForwardOptions{}, g1);
  const double l3 = detail::sft_loss_and_grad(p, span, 3, ForwardOptions{}, g3);
  EXPECT_NEAR(l1, l3, 1e-12);
  for (std::size_t i = 0; i < g1.size(); ++i) EXPECT_LE((g1[i] - g3[i]).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(DeterminismTest, SameSeedSameParameters) {
  auto run = [] {
    NeuralConfig cfg;
    cfg.d_model = 8;
    cfg.num_heads = 2;
    NeuralPolicy p(cfg, 12);
    TrainConfig tc;
    tc.total_steps = 5;
    tc.seed = 99;
    tc.dropout = 0.2;
    TrainState st = init_train_state(p, tc);
    const std::vector<SftExampleFor<NeuralPolicy>> batch = {
        {Vocabulary::prompt_tokens("hi"), Vocabulary::response_tokens("yo")},
        {Vocabulary::prompt_tokens("a"), Vocabulary::response_tokens("bcd")}};
    for (int i = 0; i < 5; ++i) train_step(p, std::span<const SftExampleFor<NeuralPolicy>>(batch), tc, st);
    return p.tensors();
  };
  const auto a = run();
  const auto b = run();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(ExplosionGuardTest, Actions) {
  TrainConfig cfg;
  cfg.explosion_threshold = 10.0;
  EXPECT_EQ(explosion_guard(1.0, 5.0, cfg), GuardAction::kProceed);
  EXPECT_EQ(explosion_guard(1.0, 10.0, cfg), GuardAction::kProceed);
  EXPECT_EQ(explosion_guard(1.0, 10.5, cfg), GuardAction::kHalveLossAndDecayLr);
  EXPECT_EQ(explosion_guard(NAN, 1.0, cfg), GuardAction::kSkip);
  EXPECT_EQ(explosion_guard(1.0, INFINITY, cfg), GuardAction::kSkip);
}

TEST(ExplosionGuardTest, HalvesGradientAndDecaysLr) {
  auto p = TabularPolicy::uniform(1, 2);
  TrainConfig cfg;
  cfg.explosion_threshold = 1e-6;  // any real gradient trips it
  cfg.weight_decay = 0.0;
  TrainState st = init_train_state(p, cfg);
  const std::vector<TabularExample> data = {{0, 0}};
  const StepResult r = train_step(p, std::span<const TabularExample>(data), cfg, st);
  EXPECT_EQ(r.action, GuardAction::kHalveLossAndDecayLr);
  EXPECT_NEAR(st.lr_max, 0.9 * cfg.lr_max, 1e-18);
  EXPECT_EQ(st.explosion_events, 1);
  EXPECT_NEAR(st.optimizer.first_moment[0](0, 0), 0.1 * 0.5 * -0.5, 1e-15);
}

TEST(ExplosionGuardTest, SkipsNonFiniteStep) {
  auto p = TabularPolicy::uniform(1, 2);
  TrainConfig cfg;
  TrainState st = init_train_state(p, cfg);
  GradientSet g = {Matrix::Constant(1, 2, NAN)};
  const Matrix before = p.logits();
  const StepResult r = detail::apply_step(p, g, 1.0, cfg, st);
  EXPECT_EQ(r.action, GuardAction::kSkip);
  EXPECT_EQ(p.logits(), before);
  EXPECT_EQ(st.step, 1);
  EXPECT_EQ(st.optimizer.step, 0);
}

TEST(CheckpointSelectionTest, MinimumWithLaterTieBreak) {
  EXPECT_EQ(select_checkpoint({{100, 2.0}, {200, 1.5}, {300, 1.7}}), 200);
  EXPECT_EQ(select_checkpoint({{100, 1.0}, {200, 1.0}, {300, 3.0}}), 200);
  EXPECT_THROW(select_checkpoint(std::vector<ValidationPoint>{}), Error);
}

TEST(TrainConfigTest, Validation) {
  TrainConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.stage = Stage::kDpo;
  cfg.beta = 0.0;
  EXPECT_THROW(cfg.validate(), Error);
  cfg.beta = 0.1;
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.validate(), Error);
  EXPECT_EQ(parse_stage("dpo"), Stage::kDpo);
  EXPECT_THROW(parse_stage("ppo"), Error);
}

TEST(ReferenceTest, DpoStepLeavesReferenceUntouched) {
  auto p = TabularPolicy::from_logits((Matrix(1, 3) << 0.3, -0.2, 1.0).finished());
  const auto ref = snapshot_reference(p);
  const Matrix frozen = ref.policy().logits();
  TrainConfig cfg;
  cfg.stage = Stage::kDpo;
  cfg.lr_max = 0.1;
  TrainState st = init_train_state(p, cfg);
  const std::vector<TabularPair> batch = {{0, 0, 2, 1.0}};
  for (int i = 0; i < 20; ++i) train_step(p, ref, std::span<const TabularPair>(batch), cfg, st);
  EXPECT_EQ(ref.policy().logits(), frozen);
  EXPECT_GT(p.probabilities(0)(0), ref.policy().probabilities(0)(0));
}

}  // namespace
}  // namespace prefalign
