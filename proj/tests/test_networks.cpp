#include <gtest/gtest.h>

#include "mcdut/nets/discriminator.hpp"
#include "mcdut/nets/generator.hpp"
#include "mcdut/nets/projections.hpp"
#include "testutil.hpp"

using namespace mcdut;
using namespace mcdut::nets;

namespace {

using V = Variable<double>;

GeneratorSpec small_spec(attention::AttentionKind att = attention::AttentionKind::Dca) {
  GeneratorSpec s;
  s.base_channels = 4;
  s.num_resnet_blocks = 5;
  s.attention = att;
  s.attention_reduction = 2;
  return s;
}

V rand_image(int64_t h, int64_t w, uint64_t seed) {
  Rng rng(seed);
  return V::constant(Tensor<double>::uniform({1, 3, h, w}, rng, -1.0, 1.0));
}

TEST(Generator, OutputRangeAndShape) {
  Rng rng(1);
  auto g = ResnetGenerator<double>::create(small_spec(), rng);
  for (int64_t size : {64, 32}) {
    auto x = rand_image(size, size, 2);
    auto out = g.forward(x);
    EXPECT_EQ(out.image.value().shape(), (Shape{1, 3, size, size}));
    for (int64_t i = 0; i < out.image.value().numel(); ++i) {
      ASSERT_TRUE(std::isfinite(out.image.value()[i]));
      ASSERT_GE(out.image.value()[i], -1.0);
      ASSERT_LE(out.image.value()[i], 1.0);
    }
  }
}

TEST(Generator, RejectsBadInputs) {
  Rng rng(3);
  auto g = ResnetGenerator<double>::create(small_spec(), rng);
  Rng r2(4);
  auto wrong_ch = V::constant(Tensor<double>::randn({1, 4, 32, 32}, r2));
  try {
    g.forward(wrong_ch);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InvalidInput);
  }
  auto odd = V::constant(Tensor<double>::randn({1, 3, 30, 30}, r2));
  EXPECT_THROW(g.forward(odd), Error);
}

TEST(Generator, EncoderTapContract) {
  Rng rng(5);
  auto g = ResnetGenerator<double>::create(small_spec(), rng);
  auto x = rand_image(32, 32, 6);
  auto taps = g.encode(x);
  ASSERT_EQ(taps.size(), 5u);
  // tap 0 is the raw input
  ASSERT_EQ(taps[0].value().shape(), x.value().shape());
  for (int64_t i = 0; i < x.value().numel(); ++i) ASSERT_EQ(taps[0].value()[i], x.value()[i]);
  // spatial sizes monotonically non-increasing, channels per spec
  auto chans = g.spec().tap_channels();
  int64_t prev_h = 1 << 30;
  for (size_t l = 0; l < 5; ++l) {
    EXPECT_EQ(taps[l].value().shape()[1], chans[l]);
    EXPECT_LE(taps[l].value().shape()[2], prev_h);
    prev_h = taps[l].value().shape()[2];
  }
  // eval determinism
  auto taps2 = g.encode(x);
  for (size_t l = 0; l < 5; ++l)
    for (int64_t i = 0; i < taps[l].value().numel(); ++i)
      ASSERT_EQ(taps[l].value()[i], taps2[l].value()[i]);
}

void copy_matching(const ParamRegistry<double>& src, ParamRegistry<double>& dst) {
  for (auto& [name, var] : dst) {
    const Variable<double>* s = src.find(name);
    if (s) const_cast<Variable<double>&>(var).mutable_value() = s->value();
  }
}

TEST(Generator, AttentionPlacementTrace) {
  // Same convolution weights with and without attention; zero-initialized
  // attention gates are exactly 0.5, so the downsampling taps of the
  // attention variant are exactly half the plain taps. Anything upstream is
  // bit-identical by construction, anything deeper diverges.
  Rng rng_a(7);
  auto g_att = ResnetGenerator<double>::create(small_spec(attention::AttentionKind::Dca), rng_a);
  Rng rng_b(8);
  auto g_plain = ResnetGenerator<double>::create(small_spec(attention::AttentionKind::None), rng_b);
  ParamRegistry<double> reg_a, reg_b;
  g_att.collect(reg_a);
  g_plain.collect(reg_b);
  copy_matching(reg_b, reg_a);  // share conv weights
  // zero the attention bottlenecks -> gates 0.5
  for (auto& [name, var] : reg_a)
    if (name.find(".att") != std::string::npos)
      const_cast<Variable<double>&>(var).mutable_value().fill(0.0);

  auto x = rand_image(32, 32, 9);
  auto taps_att = g_att.encode(x);
  auto taps_plain = g_plain.encode(x);
  // tap 0 (upstream of everything) identical, tap 1 exactly halved: the
  // gating happens after the first downsampling stage and nowhere earlier
  for (int64_t i = 0; i < x.value().numel(); ++i)
    ASSERT_EQ(taps_att[0].value()[i], taps_plain[0].value()[i]);
  for (int64_t i = 0; i < taps_att[1].value().numel(); ++i)
    ASSERT_NEAR(taps_att[1].value()[i], 0.5 * taps_plain[1].value()[i], 1e-12);
  // tap 2 sees the halved activations through instance norm, whose epsilon
  // makes the relation approximate rather than exact
  for (int64_t i = 0; i < taps_att[2].value().numel(); ++i)
    ASSERT_NEAR(taps_att[2].value()[i], 0.5 * taps_plain[2].value()[i],
                2e-2 * std::max(1.0, std::abs(taps_plain[2].value()[i])));
  // deeper taps are not a plain rescale any more (skip connections)
  double diff = 0;
  for (int64_t i = 0; i < taps_att[3].value().numel(); ++i)
    diff = std::max(diff, std::abs(taps_att[3].value()[i] - 0.5 * taps_plain[3].value()[i]));
  EXPECT_GT(diff, 1e-6);
}

TEST(Generator, ParameterCountStableAcrossRuns) {
  Rng a(10), b(10);
  auto g1 = ResnetGenerator<double>::create(small_spec(), a);
  auto g2 = ResnetGenerator<double>::create(small_spec(), b);
  ParamRegistry<double> r1, r2;
  g1.collect(r1);
  g2.collect(r2);
  ASSERT_EQ(r1.size(), r2.size());
  EXPECT_EQ(r1.total_scalars(), r2.total_scalars());
  auto v1 = r1.variables(), v2 = r2.variables();
  for (size_t i = 0; i < v1.size(); ++i)
    for (int64_t j = 0; j < v1[i].value().numel(); ++j)
      ASSERT_EQ(v1[i].value()[j], v2[i].value()[j]);
}

TEST(Discriminator, PatchMapArithmetic) {
  Rng rng(11);
  DiscriminatorSpec spec;
  spec.base_channels = 2;
  auto d = PatchDiscriminator<double>::create(spec, rng);
  auto x = rand_image(256, 256, 12);
  auto y = d.forward(x);
  // 256 -> 128 -> 64 -> 32 -> 31 -> 30 under the 70x70 configuration
  EXPECT_EQ(y.value().shape(), (Shape{1, 1, 30, 30}));
  for (int64_t i = 0; i < y.value().numel(); ++i) ASSERT_TRUE(std::isfinite(y.value()[i]));
}

TEST(Discriminator, TranslationShiftsLogitMap) {
  Rng rng(13);
  DiscriminatorSpec spec;
  spec.base_channels = 2;
  auto d = PatchDiscriminator<double>::create(spec, rng);
  const int64_t canvas = 160, patch = 16, stride_total = 8;
  Rng prng(14);
  Tensor<double> pattern = Tensor<double>::uniform({3, patch, patch}, prng, -1.0, 1.0);
  auto make = [&](int64_t off) {
    Tensor<double> img = Tensor<double>::full({1, 3, canvas, canvas}, -0.2);
    for (int64_t c = 0; c < 3; ++c)
      for (int64_t i = 0; i < patch; ++i)
        for (int64_t j = 0; j < patch; ++j) img.at(0, c, 64 + i, off + j) = pattern.at(c, i, j);
    return V::constant(img);
  };
  auto y1 = d.forward(make(64));
  auto y2 = d.forward(make(64 + stride_total));
  // interior logits shift by exactly one unit
  const int64_t hw = y1.value().shape()[3];
  ASSERT_EQ(hw, 18);
  for (int64_t i = 6; i <= 11; ++i)
    for (int64_t j = 6; j <= 10; ++j)
      ASSERT_NEAR(y1.value().at(0, 0, i, j), y2.value().at(0, 0, i, j + 1), 1e-6);
}

TEST(Projections, PatchHeadContract) {
  Rng rng(15);
  auto g = ResnetGenerator<double>::create(small_spec(), rng);
  auto f = PatchProjection<double>::create(g.spec().tap_channels(), 16, rng);
  auto x = rand_image(32, 32, 16);
  auto taps = g.encode(x);
  Rng srng(17);
  std::vector<multicrop::PatchIndexSet> ids;
  for (size_t l = 0; l < taps.size(); ++l) {
    const auto& s = taps[l].value().shape();
    ids.push_back(multicrop::sample_patch_ids(s[2], s[3], 8, srng, static_cast<int64_t>(l)));
  }
  auto embs = project_patches(taps, ids, f);
  ASSERT_EQ(embs.size(), 5u);
  for (const auto& e : embs) {
    ASSERT_EQ(e.value().shape(), (Shape{8, 16}));
    for (int64_t r = 0; r < 8; ++r) {
      double s = 0;
      for (int64_t c = 0; c < 16; ++c) s += e.value().at(r, c) * e.value().at(r, c);
      ASSERT_NEAR(std::sqrt(s), 1.0, 1e-9);
    }
  }
  // bypassing the head returns the exact feature vectors
  auto gathered = ops::gather_patches(taps[1], 0, ids[1].indices);
  const auto& tap = taps[1].value();
  const int64_t plane = tap.shape()[2] * tap.shape()[3];
  for (size_t s = 0; s < ids[1].indices.size(); ++s)
    for (int64_t c = 0; c < tap.shape()[1]; ++c)
      ASSERT_EQ(gathered.value().at(static_cast<int64_t>(s), c),
                tap[c * plane + ids[1].indices[s]]);
}

TEST(Projections, DomainHeadContract) {
  Rng rng(18);
  auto g = ResnetGenerator<double>::create(small_spec(), rng);
  auto h = DomainProjection<double>::create(g.spec().tap_channels(), 12, rng);
  auto x = rand_image(32, 32, 19);
  auto taps = g.encode(x);
  auto styles = project_domain(taps, h);
  ASSERT_EQ(styles.size(), 5u);
  for (const auto& s : styles) ASSERT_EQ(s.value().shape(), (Shape{1, 12}));
  auto styles2 = project_domain(taps, h);
  for (size_t l = 0; l < 5; ++l)
    for (int64_t i = 0; i < styles[l].value().numel(); ++i)
      ASSERT_EQ(styles[l].value()[i], styles2[l].value()[i]);
}

TEST(Projections, PoolingAbsorbsSpatialPermutation) {
  // Rebuild the head's pipeline from its registered weights and permute the
  // post-convolution activations: the style vector must not change.
  Rng rng(20);
  std::vector<int64_t> chans{3};
  auto h = DomainProjection<double>::create(chans, 6, rng);
  ParamRegistry<double> reg;
  h.collect(reg, "hd");
  auto conv_w = *reg.find("hd.l0.conv.w");
  auto conv_b = *reg.find("hd.l0.conv.b");
  auto run_tail = [&](const V& pooled) {
    auto a = ops::relu(ops::linear(pooled, *reg.find("hd.l0.fc1.w"), *reg.find("hd.l0.fc1.b")));
    auto b = ops::relu(ops::linear(a, *reg.find("hd.l0.fc2.w"), *reg.find("hd.l0.fc2.b")));
    return ops::linear(b, *reg.find("hd.l0.fc3.w"), *reg.find("hd.l0.fc3.b"));
  };
  auto x = rand_image(10, 10, 21);
  auto conv_out = ops::relu(ops::conv2d(x, conv_w, conv_b, 1, 1));
  // spatially permute the conv-stage output (reverse raster order)
  Tensor<double> permuted = conv_out.value();
  const int64_t plane = 100;
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t i = 0; i < plane; ++i)
      permuted[c * plane + i] = conv_out.value()[c * plane + (plane - 1 - i)];
  auto s1 = run_tail(ops::global_avg_pool(conv_out));
  auto s2 = run_tail(ops::global_avg_pool(V::constant(permuted)));
  for (int64_t i = 0; i < s1.value().numel(); ++i) ASSERT_NEAR(s1.value()[i], s2.value()[i], 1e-12);
  // and this matches the head's own output
  auto s_head = h.project(x, 0);
  for (int64_t i = 0; i < s1.value().numel(); ++i) ASSERT_NEAR(s1.value()[i], s_head.value()[i], 1e-12);
}

TEST(Projections, DomainHeadsAreParameterDisjoint) {
  Rng rng(22);
  std::vector<int64_t> chans{3, 8};
  auto hf = DomainProjection<double>::create(chans, 6, rng);
  auto hr = DomainProjection<double>::create(chans, 6, rng);
  ParamRegistry<double> rf, rr;
  hf.collect(rf, "proj_hf");
  hr.collect(rr, "proj_hr");
  EXPECT_TRUE(ParamRegistry<double>::disjoint(rf, rr));
  ParamRegistry<double> rf2;
  hf.collect(rf2, "again");
  EXPECT_FALSE(ParamRegistry<double>::disjoint(rf, rf2));
}

}  // namespace
