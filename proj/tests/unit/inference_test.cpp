#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "oracles.hpp"
#include "preservation.hpp"
#include "pianofill/inference/bench.hpp"
#include "pianofill/inference/engine.hpp"
#include "pianofill/inference/sampler.hpp"

namespace {

using namespace pianofill;
using namespace pianofill::inference;

const InpaintEngine& toy_engine() {
  static const InpaintEngine engine = [] {
    Rng rng(41);
    const auto cfg = model::ModelConfig::toy();
    return InpaintEngine(cfg, model::ModelParams<float>::initialize(cfg, rng));
  }();
  return engine;
}

Performance steady_performance(int notes, double step_s = 0.25) {
  Performance p;
  for (int i = 0; i < notes; ++i) p.notes.push_back({48 + (i * 7) % 30, 40 + i % 50, i * step_s, 0.2});
  return p;
}

std::vector<double> exact_top_p(const std::vector<float>& logits, double p) {
  std::vector<double> prob(logits.size());
  double z = 0.0;
  for (float l : logits) z += std::exp(static_cast<double>(l));
  for (std::size_t i = 0; i < logits.size(); ++i) prob[i] = std::exp(static_cast<double>(logits[i])) / z;
  std::vector<std::size_t> idx(logits.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return prob[a] > prob[b]; });
  std::vector<double> out(logits.size(), 0.0);
  double mass = 0.0;
  for (std::size_t i : idx) {
    out[i] = prob[i];
    mass += prob[i];
    if (mass >= p) break;
  }
  for (double& v : out) v /= mass;
  return out;
}

TEST(TopP, FullNucleusIsSoftmax) {
  const std::vector<float> logits = {0.5f, -1.0f, 2.0f, 0.0f};
  const auto got = top_p_distribution(logits, 1.0);
  const auto want = exact_top_p(logits, 1.0);
  for (std::size_t i = 0; i < logits.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
}

TEST(TopP, DominantLogitAlwaysWins) {
  std::vector<float> logits(106, 0.0f);
  logits[17] = 40.0f;
  Rng rng(3);
  for (int i = 0; i < 200; ++i) EXPECT_EQ(top_p_sample(logits, 0.9, rng), 17);
}

TEST(TopP, ExcludesNegativeInfinity) {
  const std::vector<float> logits = {-INFINITY, 0.0f, -INFINITY, 0.0f};
  const auto d = top_p_distribution(logits, 1.0);
  EXPECT_EQ(d[0], 0.0);
  EXPECT_EQ(d[2], 0.0);
  EXPECT_NEAR(d[1], 0.5, 1e-12);
}

TEST(TopP, RejectsNonFinite) {
  const std::vector<float> logits = {NAN, 0.0f};
  Rng rng(1);
  EXPECT_THROW(top_p_sample(logits, 0.9, rng), std::exception);
}

TEST(TopP, FrequenciesMatchTruncatedDistribution) {
  Rng gen(77);
  std::vector<float> logits(20);
  for (auto& l : logits) l = static_cast<float>(gen.normal() * 1.5);
  const double p = 0.8;
  const auto want = exact_top_p(logits, p);
  std::vector<int> counts(logits.size(), 0);
  Rng rng(5);
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) ++counts[static_cast<std::size_t>(top_p_sample(logits, p, rng))];
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double sigma = std::sqrt(draws * want[i] * (1 - want[i]));
    EXPECT_LE(std::abs(counts[i] - draws * want[i]), 3 * sigma + 1e-9) << "index " << i;
    if (want[i] == 0.0) {
      EXPECT_EQ(counts[i], 0);
    }
  }
}

TEST(Density, RoundsHalfUp) {
  EXPECT_EQ(density_to_note_count(0.0, 3.0), 0);
  EXPECT_EQ(density_to_note_count(5.0, 4.0), 20);
  EXPECT_EQ(density_to_note_count(2.6, 1.0), 3);
  EXPECT_EQ(density_to_note_count(2.5, 1.0), 3);
  EXPECT_THROW(density_to_note_count(-1.0, 1.0), std::invalid_argument);
}

TEST(Plan, ContiguousReplacesGap) {
  // 100 notes every 0.25 s; notes 10..19 occupy [2.5, 5.0).
  InpaintRequest req;
  req.context = steady_performance(100);
  req.start_s = 2.5;
  req.end_s = 5.0;
  req.note_count = 12;
  const GenerationPlan plan = build_plan(req);
  ASSERT_EQ(plan.size(), (90u + 12u) * 4u);
  EXPECT_EQ(plan.sampled_count(), 12u * 4u + 1u);
  EXPECT_EQ(plan.first_sampled(), 10u * 4u - 1u);
  EXPECT_EQ(plan.last_sampled(), 22u * 4u - 1u);
  EXPECT_EQ(plan.constraints.free_count(), 12u * 4u + 1u);
  EXPECT_EQ(plan.source_note[9], 9);
  EXPECT_EQ(plan.source_note[22], 20);
  for (std::size_t i = 10; i < 22; ++i) {
    EXPECT_TRUE(plan.generated[i]);
    EXPECT_EQ(plan.source_note[i], -1);
    const double want = 2.5 + 2.5 * (static_cast<double>(i - 10) + 0.5) / 12.0;
    EXPECT_NEAR(plan.constraints.elapsed_s[i * 4], want, 1e-12);
  }
  EXPECT_DOUBLE_EQ(plan.constraints.elapsed_s[22 * 4], 5.0);
  plan.constraints.validate();
}

TEST(Plan, AttributeModesFreeOnlyTheirChannels) {
  InpaintRequest req;
  req.context = steady_performance(20);
  req.start_s = 1.0;
  req.end_s = 2.0;  // notes 4..7
  for (Mode m : {Mode::kVelocify, Mode::kPitchify, Mode::kVariation}) {
    for (bool vel_only : {false, true}) {
      req.mode = m;
      req.velocity_only = vel_only;
      const GenerationPlan plan = build_plan(req);
      ASSERT_EQ(plan.size(), 80u);
      for (std::size_t t = 0; t < plan.size(); ++t) {
        const std::size_t i = t / 4, c = t % 4;
        const bool region = i >= 4 && i < 8;
        bool want = false;
        if (region && m == Mode::kVelocify) want = c == 1 || (c == 2 && !vel_only);
        if (region && m == Mode::kPitchify) want = c == 0;
        if (region && m == Mode::kVariation) want = true;
        EXPECT_EQ(plan.sampled[t], want) << mode_name(m) << " t=" << t;
        EXPECT_EQ(plan.constraints.is_free(t), want && m != Mode::kVariation);
      }
    }
  }
}

TEST(Plan, UnconditionalIsAllFree) {
  InpaintRequest req;
  req.mode = Mode::kUnconditional;
  req.start_s = 3.0;
  req.end_s = 7.0;
  req.density = 2.0;
  const GenerationPlan plan = build_plan(req);
  EXPECT_EQ(plan.size(), 32u);
  EXPECT_EQ(plan.constraints.free_count(), 32u);
  EXPECT_DOUBLE_EQ(plan.constraints.elapsed_s.front(), 0.25);
}

TEST(Request, Validation) {
  InpaintRequest req;
  req.context = steady_performance(8);
  req.start_s = 1.0;
  req.end_s = 0.5;
  req.note_count = 2;
  EXPECT_THROW(req.validate(), RequestError);
  req.end_s = 1.5;
  req.note_count = -1;
  EXPECT_THROW(req.validate(), RequestError);
  req.note_count.reset();
  EXPECT_THROW(req.validate(), RequestError);
  req.note_count = 2;
  req.top_p = 0.0;
  EXPECT_THROW(req.validate(), RequestError);
  req.top_p = 0.9;
  req.start_s = 10.0;
  req.end_s = 11.0;
  EXPECT_THROW(req.validate(), RequestError);
  req.start_s = 1.0;
  req.end_s = 1.5;
  EXPECT_NO_THROW(req.validate());
}

TEST(Engine, ZeroNotesReturnsContext) {
  InpaintRequest req;
  req.context = steady_performance(30);
  req.start_s = 1.0;
  req.end_s = 3.0;
  req.note_count = 0;
  const auto res = toy_engine().inpaint(req);
  EXPECT_EQ(res.performance, req.context);
  EXPECT_TRUE(res.emitted.empty());
}

TEST(Engine, PreservesContextAcrossModes) {
  Rng rng(2024);
  const Mode modes[] = {Mode::kContiguous, Mode::kVelocify, Mode::kPitchify, Mode::kVariation, Mode::kUnconditional};
  for (int run = 0; run < 100; ++run) {
    InpaintRequest req;
    req.context = oracle::random_performance(rng, 40);
    req.mode = modes[run % 5];
    const double end = req.context.notes.back().onset_s;
    req.start_s = rng.uniform(0.0, end);
    req.end_s = req.start_s + rng.uniform(0.0, 3.0);
    req.note_count = static_cast<int>(rng.uniform_int(0, 12));
    if (req.note_count > 0 && req.end_s == req.start_s) req.end_s += 0.5;
    req.velocity_only = rng.bernoulli(0.5);
    req.overflow = static_cast<Overflow>(run % 3);
    req.seed = static_cast<std::uint64_t>(run);
    SCOPED_TRACE("run " + std::to_string(run) + " mode " + std::string(mode_name(req.mode)));
    const auto res = toy_engine().inpaint(req);
    EXPECT_EQ(fixtures::preservation_violation(req, res), "");
  }
}

TEST(Engine, ParallelAndRecurrentPrefixAgree) {
  InpaintRequest req;
  req.context = steady_performance(60);
  req.start_s = 8.0;
  req.end_s = 10.0;
  req.note_count = 6;
  req.seed = 9;
  for (Mode m : {Mode::kContiguous, Mode::kVelocify, Mode::kVariation}) {
    req.mode = m;
    req.prefix_mode = PrefixMode::kParallel;
    const auto a = toy_engine().inpaint(req);
    req.prefix_mode = PrefixMode::kRecurrent;
    const auto b = toy_engine().inpaint(req);
    EXPECT_EQ(a.tokens, b.tokens) << mode_name(m);
    EXPECT_EQ(a.performance, b.performance);
  }
}

TEST(Engine, SeedDeterminism) {
  InpaintRequest req;
  req.context = steady_performance(40);
  req.start_s = 2.0;
  req.end_s = 6.0;
  req.note_count = 10;
  req.seed = 123;
  const auto a = toy_engine().inpaint(req);
  const auto b = toy_engine().inpaint(req);
  EXPECT_EQ(a.tokens, b.tokens);
  EXPECT_EQ(a.performance, b.performance);
  req.seed = 124;
  const auto c = toy_engine().inpaint(req);
  EXPECT_NE(a.tokens, c.tokens);
}

TEST(Engine, TruncateKeepsNotesInRegion) {
  Rng rng(8);
  for (int run = 0; run < 40; ++run) {
    InpaintRequest req;
    req.context = steady_performance(40, 0.3);
    req.start_s = rng.uniform(0.0, 10.0);
    req.end_s = req.start_s + rng.uniform(0.05, 2.0);
    req.note_count = static_cast<int>(rng.uniform_int(1, 15));
    req.overflow = Overflow::kTruncate;
    req.top_p = 1.0;
    req.seed = static_cast<std::uint64_t>(run);
    req.mode = run % 2 ? Mode::kContiguous : Mode::kUnconditional;
    const auto res = toy_engine().inpaint(req);
    ASSERT_EQ(res.emitted.size(), static_cast<std::size_t>(*req.note_count));
    for (const auto& n : res.emitted) {
      EXPECT_GE(n.onset_s, req.start_s - 1e-9);
      EXPECT_LT(n.onset_s, req.end_s);
    }
    EXPECT_FALSE(res.rescaled);
  }
}

TEST(Engine, RescaleMapsIntoRegion) {
  InpaintRequest req;
  req.context = steady_performance(40, 0.3);
  req.start_s = 3.0;
  req.end_s = 3.2;  // far too short for 12 notes at random timing
  req.note_count = 12;
  req.overflow = Overflow::kRescale;
  bool any = false;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    req.seed = seed;
    const auto res = toy_engine().inpaint(req);
    any = any || res.rescaled;
    for (const auto& n : res.emitted) {
      EXPECT_GE(n.onset_s, req.start_s - 1e-9);
      EXPECT_LT(n.onset_s, req.end_s);
    }
  }
  EXPECT_TRUE(any);
}

TEST(Engine, StreamedNotesMatchResult) {
  InpaintRequest req;
  req.context = steady_performance(50);
  req.start_s = 4.0;
  req.end_s = 7.0;
  req.note_count = 9;
  req.overflow = Overflow::kTruncate;
  std::vector<NoteEvent> streamed;
  const auto res = toy_engine().inpaint(req, [&](const NoteEvent& n) { streamed.push_back(n); });
  EXPECT_EQ(streamed, res.emitted);
  EXPECT_GE(res.timings.first_note_s, 0.0);
  EXPECT_LE(res.timings.first_note_s, res.timings.total_s);
}

TEST(Engine, UnconditionalOutputIsOnlyNewNotes) {
  InpaintRequest req;
  req.context = steady_performance(10);
  req.mode = Mode::kUnconditional;
  req.start_s = 0.0;
  req.end_s = 4.0;
  req.note_count = 7;
  const auto res = toy_engine().inpaint(req);
  EXPECT_EQ(res.performance.size(), 7u);
  EXPECT_NO_THROW(res.performance.validate());
}

TEST(Engine, OutputIsValidPerformance) {
  Rng rng(99);
  for (int run = 0; run < 20; ++run) {
    InpaintRequest req;
    req.context = oracle::random_performance(rng, 30);
    req.start_s = 0.5;
    req.end_s = 2.5;
    req.note_count = 5;
    req.seed = static_cast<std::uint64_t>(run);
    const auto res = toy_engine().inpaint(req);
    EXPECT_NO_THROW(res.performance.validate());
    EXPECT_TRUE(res.performance.is_sorted());
  }
}

}  // namespace

namespace {

TEST(Preservation, DetectsTampering) {
  using namespace pianofill::inference;
  InpaintRequest req;
  req.context = steady_performance(20);
  req.mode = Mode::kPitchify;
  req.start_s = 1.0;
  req.end_s = 2.0;
  auto res = toy_engine().inpaint(req);
  ASSERT_EQ(fixtures::preservation_violation(req, res), "");
  auto moved = res;
  moved.performance.notes.front().velocity += 1;
  EXPECT_NE(fixtures::preservation_violation(req, moved), "");
  auto retimed = res;
  for (auto& n : retimed.performance.notes) {
    if (n.onset_s >= 1.0 && n.onset_s < 2.0) n.duration_s += 0.5;
  }
  EXPECT_NE(fixtures::preservation_violation(req, retimed), "");
}

}  // namespace

namespace {

TEST(Latency, FirstNoteUnderOneSecondOnDeskModel) {
  using namespace pianofill::inference;
  Rng rng(13);
  const auto cfg = model::ModelConfig::desk();
  const InpaintEngine engine(cfg, model::ModelParams<float>::initialize(cfg, rng));
  const InpaintRequest req = bench_request(1024, 32, GapPosition::kBack, 1);
  const auto res = engine.inpaint(req);
  EXPECT_GE(res.timings.first_note_s, 0.0);
  EXPECT_LT(res.timings.first_note_s, 1.0);
}

}  // namespace
