#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "secap/qformer.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace secap;
using secap::test::grad_check;
using secap::test::random_tensor;
using namespace secap::oracle;

namespace {

QFormerConfig small_config() { return {4, 8, 8, 8, 5, 2, 16, 10, 32}; }

AttentionWeights random_attention(std::size_t d_in_q, std::size_t d_in_kv, std::size_t d_k, std::size_t d_v,
                                  std::mt19937_64& rng) {
  return {ad::parameter(random_tensor(d_in_q, d_k, rng, 0.5)), ad::parameter(random_tensor(d_in_kv, d_k, rng, 0.5)),
          ad::parameter(random_tensor(d_in_kv, d_v, rng, 0.5))};
}

struct Fixture {
  ParameterStore ps;
  QFormer qf;
  explicit Fixture(std::uint64_t seed, QFormerConfig cfg = small_config()) {
    std::mt19937_64 rng(seed);
    qf = QFormer::create(ps, cfg, rng);
  }
};

}  // namespace

TEST(SelfAttend, SingleRowReturnsValueProjection) {
  std::mt19937_64 rng(1);
  const auto w = random_attention(8, 8, 8, 8, rng);
  const auto x = ad::constant(random_tensor(1, 8, rng));
  EXPECT_LT(max_abs_diff(self_attend(x, w).value(), ad::matmul(x, w.wv).value()), 1e-15);
}

TEST(SelfAttend, IdenticalRowsGiveIdenticalOutputs) {
  std::mt19937_64 rng(2);
  const auto w = random_attention(8, 8, 8, 8, rng);
  const auto r = random_tensor(1, 8, rng);
  const auto out = self_attend(ad::concat_rows({ad::constant(r), ad::constant(r)}), w).value();
  for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(out(0, c), out(1, c));
}

TEST(SelfAttend, MatchesStraightLineOracle) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    const auto w = random_attention(8, 8, 8, 8, rng);
    const auto x = random_tensor(4, 8, rng);
    const auto got = self_attend(ad::constant(x), w).value();
    EXPECT_LT(max_diff(got, attention_oracle(to_mat(x), to_mat(x), w.wq.value(), w.wk.value(), w.wv.value())), 1e-10);
  }
}

TEST(CrossAttend, SingleFrameGivesItsValueEverywhere) {
  std::mt19937_64 rng(4);
  const auto w = random_attention(8, 6, 8, 8, rng);
  const auto a = ad::constant(random_tensor(4, 8, rng));
  const auto s = ad::constant(random_tensor(1, 6, rng));
  const auto out = cross_attend(a, s, w).value();
  const auto v = ad::matmul(s, w.wv).value();
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t c = 0; c < 8; ++c) EXPECT_NEAR(out(i, c), v(0, c), 1e-15);
}

TEST(CrossAttend, MatchesStraightLineOracle) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    const auto w = random_attention(8, 6, 8, 8, rng);
    const auto a = random_tensor(4, 8, rng), s = random_tensor(9, 6, rng);
    const auto got = cross_attend(ad::constant(a), ad::constant(s), w).value();
    EXPECT_LT(max_diff(got, attention_oracle(to_mat(a), to_mat(s), w.wq.value(), w.wk.value(), w.wv.value())), 1e-10);
  }
}

TEST(CrossAttend, FramePermutationInvariant) {
  std::mt19937_64 rng(6);
  const auto w = random_attention(8, 6, 8, 8, rng);
  const auto a = ad::constant(random_tensor(4, 8, rng));
  const auto s = random_tensor(7, 6, rng);
  std::vector<int> perm(7);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  const auto sp = ad::gather_rows(ad::constant(s), perm);
  EXPECT_LT(max_abs_diff(cross_attend(a, ad::constant(s), w).value(), cross_attend(a, sp, w).value()), 1e-10);
}

TEST(EncodeSpeech, ShapeIndependentOfLength) {
  Fixture f(7);
  std::mt19937_64 rng(8);
  for (std::size_t t : {1, 7, 200}) {
    const auto q = f.qf.encode_speech(ad::constant(random_tensor(t, 5, rng)));
    EXPECT_EQ(q.rows(), 4u);
    EXPECT_EQ(q.cols(), 8u);
  }
  for (int i = 0; i < 20; ++i) {
    const auto q = f.qf.encode_speech(ad::constant(random_tensor(1 + rng() % 64, 5, rng)));
    EXPECT_EQ(q.shape(), (Shape{4, 8}));
  }
}

TEST(EncodeSpeech, DeterministicAndPermutationInvariant) {
  Fixture f(9);
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 10; ++trial) {
    const auto s = random_tensor(3 + rng() % 30, 5, rng);
    const auto q = f.qf.encode_speech(ad::constant(s)).value();
    EXPECT_EQ(q, f.qf.encode_speech(ad::constant(s)).value());
    std::vector<int> perm(s.rows());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    EXPECT_LT(max_abs_diff(q, f.qf.encode_speech(ad::gather_rows(ad::constant(s), perm)).value()), 1e-10);
  }
}

TEST(EncodeSpeech, RejectsWrongFeatureWidth) {
  Fixture f(11);
  EXPECT_THROW(f.qf.encode_speech(ad::constant(Tensor(3, 6))), ShapeError);
}

TEST(EncodeText, ShapeFollowsLength) {
  Fixture f(12);
  EXPECT_EQ(f.qf.encode_text({4}, TextKind::Caption).rows.shape(), (Shape{1, 8}));
  EXPECT_EQ(f.qf.encode_text({4, 5, 6}, TextKind::Transcription).rows.shape(), (Shape{3, 8}));
  EXPECT_THROW(f.qf.encode_text({}, TextKind::Caption), Error);
  EXPECT_THROW(f.qf.encode_text({10}, TextKind::Caption), Error);
}

TEST(EncodeText, KindIsMetadataOnly) {
  Fixture f(13);
  const std::vector<int> toks = {3, 7, 5, 5};
  EXPECT_EQ(f.qf.encode_text(toks, TextKind::Caption).rows.value(),
            f.qf.encode_text(toks, TextKind::Transcription).rows.value());
}

TEST(EncodeText, OrderMattersBecauseOfPositions) {
  Fixture f(14);
  std::mt19937_64 rng(15);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<int> toks(2 + rng() % 6);
    for (auto& t : toks) t = static_cast<int>(3 + rng() % 7);
    auto swapped = toks;
    std::size_t i = 0, j = 1;
    while (swapped[i] == swapped[j] && j + 1 < swapped.size()) ++j;
    if (swapped[i] == swapped[j]) swapped[j] = swapped[j] == 3 ? 4 : 3;
    else std::swap(swapped[i], swapped[j]);
    const auto a = ad::mean_rows(f.qf.encode_text(toks, TextKind::Caption).rows).value();
    const auto b = ad::mean_rows(f.qf.encode_text(swapped, TextKind::Caption).rows).value();
    EXPECT_GT(max_abs_diff(a, b), 1e-9);
  }
}

TEST(Project, IdentityAndBiasOnly) {
  std::mt19937_64 rng(16);
  const auto x = ad::constant(random_tensor(4, 8, rng));
  const Affine ident{ad::parameter(Tensor::identity(8)), ad::parameter(Tensor(1, 8, 0.0))};
  EXPECT_EQ(project(x, ident).value(), x.value());
  const auto b = random_tensor(1, 6, rng);
  const Affine bias{ad::parameter(Tensor(8, 6, 0.0)), ad::parameter(b)};
  const auto out = project(x, bias).value();
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 6; ++c) EXPECT_EQ(out(r, c), b[c]);
}

TEST(Project, GradientThroughEncodeSpeech) {
  Fixture f(17);
  std::mt19937_64 rng(18);
  const auto proj = create_projection(f.ps, 8, 6, rng);
  const auto s = ad::constant(random_tensor(5, 5, rng));
  const auto read = ad::constant(random_tensor(4, 6, rng));
  std::vector<ad::Var> params;
  for (const auto& [name, e] : f.ps.entries()) params.push_back(e.var);
  EXPECT_LT(grad_check(params, [&] { return ad::sum(ad::mul(project(f.qf.encode_speech(s), proj), read)); }), 1e-4);
}

TEST(QFormer, RegistersGroups) {
  Fixture f(19);
  // scalar counts: 5x8 weight plus 8 bias
  EXPECT_EQ(f.ps.count(ParamGroup::FeaturizerProjection), 48u);
  EXPECT_GT(f.ps.count(ParamGroup::QFormer), 0u);
  EXPECT_EQ(f.ps.count(ParamGroup::DecoderCore), 0u);
}
