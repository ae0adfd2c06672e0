#include <gtest/gtest.h>

#include "oracles.hpp"
#include "pianofill/augment.hpp"

using namespace pianofill;

TEST(Augment, IdentityIsNoOp) {
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    const auto s = TokenSequence::from_indices(oracle::random_canonical_indices(rng, 30));
    EXPECT_EQ(apply_augmentation(s, {}), s);
  }
}

TEST(Augment, TranspositionDropsNotesLeavingRange) {
  const auto s = encode(Performance{{{60, 64, 0.0, 0.5}, {108, 64, 0.5, 0.5}}});
  const auto out = apply_augmentation(s, {.transposition = 6});
  ASSERT_EQ(out.note_count(), 1u);
  EXPECT_EQ(out[0].index, 66 - kLowestPitch);
}

TEST(Augment, VelocityClamps) {
  const auto s = encode(Performance{{{60, 120, 0.0, 0.5}, {62, 5, 0.5, 0.5}}});
  EXPECT_EQ(apply_augmentation(s, {.velocity_shift = 20})[1].index, 127);
  EXPECT_EQ(apply_augmentation(s, {.velocity_shift = -20})[5].index, 0);
}

TEST(Augment, DilationScalesTimes) {
  const auto s = encode(Performance{{{60, 64, 0.0, 1.0}, {62, 64, 2.0, 1.0}}});
  const auto out = decode(apply_augmentation(s, {.time_dilation = 1.1}));
  EXPECT_DOUBLE_EQ(out.notes[1].onset_s, 2.2);
  EXPECT_DOUBLE_EQ(out.notes[0].duration_s, 1.1);
}

TEST(Augment, SampledParamsInRangeAndOutputValid) {
  Rng rng(8);
  for (int i = 0; i < 500; ++i) {
    const auto a = AugmentParams::sample(rng);
    ASSERT_GE(a.time_dilation, 0.9);
    ASSERT_LT(a.time_dilation, 1.1);
    ASSERT_GE(a.velocity_shift, -20);
    ASSERT_LE(a.velocity_shift, 20);
    ASSERT_GE(a.transposition, -6);
    ASSERT_LE(a.transposition, 6);
    const auto s = TokenSequence::from_indices(oracle::random_canonical_indices(rng, 20));
    const auto out = apply_augmentation(s, a);
    ASSERT_NO_THROW(TokenSequence(out.tokens()));
  }
}
