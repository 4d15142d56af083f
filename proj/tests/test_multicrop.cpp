#include <gtest/gtest.h>

#include <set>

#include "mcdut/sampling/multicrop.hpp"
#include "testutil.hpp"

using namespace mcdut;
using namespace mcdut::multicrop;

namespace {

Tensor<double> rand_image(int64_t h, int64_t w, uint64_t seed) {
  Rng rng(seed);
  return Tensor<double>::uniform({3, h, w}, rng, -1.0, 1.0);
}

TEST(CenterCrop, EvenSize) {
  auto img = rand_image(256, 256, 1);
  CropRect r = center_crop(img, 0.5);
  EXPECT_EQ(r.top, 64);
  EXPECT_EQ(r.left, 64);
  EXPECT_EQ(r.height, 128);
  EXPECT_EQ(r.width, 128);
}

TEST(CenterCrop, IdentityScale) {
  auto img = rand_image(100, 70, 2);
  CropRect r = center_crop(img, 1.0);
  EXPECT_EQ(r.top, 0);
  EXPECT_EQ(r.left, 0);
  EXPECT_EQ(r.height, 100);
  EXPECT_EQ(r.width, 70);
}

TEST(CenterCrop, OddSize) {
  auto img = rand_image(255, 255, 3);
  CropRect r = center_crop(img, 0.5);
  EXPECT_EQ(r.height, 127);
  EXPECT_EQ(r.width, 127);
  EXPECT_EQ(r.top, 64);
  EXPECT_EQ(r.left, 64);
}

TEST(CenterCrop, RejectsBadScale) {
  auto img = rand_image(10, 10, 4);
  EXPECT_THROW(center_crop(img, 0.0), Error);
  EXPECT_THROW(center_crop(img, 1.5), Error);
  try {
    center_crop(img, -1.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InvalidConfig);
  }
}

TEST(RandomCrop, FullScaleRangeIsIdentity) {
  auto img = rand_image(33, 57, 5);
  Rng rng(9);
  for (int i = 0; i < 20; ++i) {
    CropRect r = random_crop(img, 1.0, 1.0, rng);
    EXPECT_EQ(r.top, 0);
    EXPECT_EQ(r.left, 0);
    EXPECT_EQ(r.height, 33);
    EXPECT_EQ(r.width, 57);
  }
}

TEST(RandomCrop, SeedDeterminism) {
  auto img = rand_image(64, 64, 6);
  Rng a(123), b(123);
  for (int i = 0; i < 50; ++i) {
    CropRect ra = random_crop(img, 0.3, 0.7, a);
    CropRect rb = random_crop(img, 0.3, 0.7, b);
    EXPECT_EQ(ra.top, rb.top);
    EXPECT_EQ(ra.left, rb.left);
    EXPECT_EQ(ra.height, rb.height);
    EXPECT_EQ(ra.width, rb.width);
  }
}

TEST(RandomCrop, BoundsOverManyDraws) {
  auto img = rand_image(256, 256, 7);
  Rng rng(11);
  for (int i = 0; i < 10000; ++i) {
    CropRect r = random_crop(img, 0.3, 0.7, rng);
    ASSERT_TRUE(r.in_bounds(256, 256));
    ASSERT_GE(r.height, 76);  // floor(256*0.3)
    ASSERT_LE(r.height, 179);  // floor(256*0.7)
    ASSERT_GE(r.width, 76);
    ASSERT_LE(r.width, 179);
  }
}

TEST(RandomCrop, RejectsBadRange) {
  auto img = rand_image(10, 10, 8);
  Rng rng(1);
  EXPECT_THROW(random_crop(img, 0.0, 0.5, rng), Error);
  EXPECT_THROW(random_crop(img, 0.7, 0.3, rng), Error);
  EXPECT_THROW(random_crop(img, 0.3, 1.5, rng), Error);
}

TEST(MulticropViews, DefaultConfigGivesThreeFullSizeViews) {
  auto img = rand_image(64, 48, 9);
  CropConfig cfg;  // 1 center + 2 random
  Rng rng(3);
  auto views = make_multicrop_views(img, cfg, rng);
  ASSERT_EQ(views.size(), 3u);
  EXPECT_EQ(views[0].kind, CropKind::Center);
  EXPECT_EQ(views[1].kind, CropKind::Random);
  EXPECT_EQ(views[2].kind, CropKind::Random);
  for (const auto& v : views) {
    EXPECT_EQ(v.image.shape(), (Shape{3, 64, 48}));
    EXPECT_TRUE(v.rect.in_bounds(64, 48));
  }
}

TEST(MulticropViews, IdentityCenterViewIsPixelIdentical) {
  auto img = rand_image(32, 32, 10);
  CropConfig cfg;
  cfg.num_center = 1;
  cfg.num_random = 0;
  cfg.center_scale = 1.0;
  Rng rng(4);
  auto views = make_multicrop_views(img, cfg, rng);
  ASSERT_EQ(views.size(), 1u);
  for (int64_t i = 0; i < img.numel(); ++i) ASSERT_EQ(views[0].image[i], img[i]);
}

TEST(MulticropViews, RandomOnlyRow) {
  auto img = rand_image(40, 40, 11);
  CropConfig cfg;
  cfg.num_center = 0;
  cfg.num_random = 1;
  Rng rng(5);
  auto views = make_multicrop_views(img, cfg, rng);
  ASSERT_EQ(views.size(), 1u);
  EXPECT_EQ(views[0].kind, CropKind::Random);
}

TEST(MulticropViews, RejectsEmptyConfig) {
  auto img = rand_image(16, 16, 12);
  CropConfig cfg;
  cfg.num_center = 0;
  cfg.num_random = 0;
  Rng rng(6);
  EXPECT_THROW(make_multicrop_views(img, cfg, rng), Error);
}

TEST(SamplePatchIds, ForcedSingle) {
  Rng rng(13);
  auto s = sample_patch_ids(1, 1, 1, rng);
  ASSERT_EQ(s.indices.size(), 1u);
  EXPECT_EQ(s.indices[0], 0);
}

TEST(SamplePatchIds, ExhaustiveIsPermutation) {
  Rng rng(14);
  auto s = sample_patch_ids(16, 16, 256, rng);
  std::set<int64_t> uniq(s.indices.begin(), s.indices.end());
  EXPECT_EQ(uniq.size(), 256u);
  EXPECT_EQ(*uniq.begin(), 0);
  EXPECT_EQ(*uniq.rbegin(), 255);
}

TEST(SamplePatchIds, UniqueAndReproducible) {
  Rng a(15), b(15);
  auto sa = sample_patch_ids(64, 64, 256, a);
  auto sb = sample_patch_ids(64, 64, 256, b);
  EXPECT_EQ(sa.indices, sb.indices);
  std::set<int64_t> uniq(sa.indices.begin(), sa.indices.end());
  EXPECT_EQ(uniq.size(), 256u);
  for (int64_t id : sa.indices) {
    ASSERT_GE(id, 0);
    ASSERT_LT(id, 64 * 64);
  }
}

TEST(SamplePatchIds, RejectsOversizedRequest) {
  Rng rng(16);
  EXPECT_THROW(sample_patch_ids(4, 4, 17, rng), Error);
}

Tensor<double> unit_rows(int64_t n, int64_t k, uint64_t seed) {
  Rng rng(seed);
  Tensor<double> m = Tensor<double>::randn({n, k}, rng);
  for (int64_t i = 0; i < n; ++i) {
    double s = 0;
    for (int64_t j = 0; j < k; ++j) s += m.at(i, j) * m.at(i, j);
    s = std::sqrt(s);
    for (int64_t j = 0; j < k; ++j) m.at(i, j) /= s;
  }
  return m;
}

TEST(GatherNegatives, ProvenanceTracksPoolRows) {
  std::vector<Tensor<double>> pools = {unit_rows(256, 8, 21), unit_rows(256, 8, 22), unit_rows(256, 8, 23)};
  Rng rng(17);
  auto set = gather_negatives(pools, 2, 256, rng);
  EXPECT_EQ(set.layer_id, 2);
  ASSERT_EQ(set.embeddings.shape(), (Shape{256, 8}));
  ASSERT_EQ(set.provenance.size(), 256u);
  std::set<std::pair<int64_t, int64_t>> uniq;
  for (int64_t i = 0; i < 256; ++i) {
    const auto [view, row] = set.provenance[static_cast<size_t>(i)];
    uniq.insert({view, row});
    for (int64_t j = 0; j < 8; ++j)
      ASSERT_EQ(set.embeddings.at(i, j), pools[static_cast<size_t>(view)].at(row, j));
  }
  EXPECT_EQ(uniq.size(), 256u);  // each negative traceable to exactly one source
}

TEST(GatherNegatives, SinglePoolExactlyN) {
  std::vector<Tensor<double>> pools = {unit_rows(5, 4, 31)};
  Rng rng(18);
  auto set = gather_negatives(pools, 0, 5, rng);
  std::set<int64_t> rows;
  for (auto [v, r] : set.provenance) {
    EXPECT_EQ(v, 0);
    rows.insert(r);
  }
  EXPECT_EQ(rows.size(), 5u);  // whole pool, as a set
}

TEST(GatherNegatives, SeedDeterminism) {
  std::vector<Tensor<double>> pools = {unit_rows(20, 4, 41), unit_rows(20, 4, 42)};
  Rng a(19), b(19);
  auto sa = gather_negatives(pools, 1, 10, a);
  auto sb = gather_negatives(pools, 1, 10, b);
  EXPECT_EQ(sa.provenance, sb.provenance);
}

TEST(GatherNegatives, InsufficientPool) {
  std::vector<Tensor<double>> pools = {unit_rows(3, 4, 51)};
  Rng rng(20);
  EXPECT_THROW(gather_negatives(pools, 0, 4, rng), Error);
}

// property: rects stay in bounds over random sizes and configs
TEST(MulticropProperty, RectsAlwaysInBounds) {
  Rng rng(22);
  for (int trial = 0; trial < 200; ++trial) {
    const int64_t h = rng.uniform_int(8, 90);
    const int64_t w = rng.uniform_int(8, 90);
    auto img = rand_image(h, w, 1000 + static_cast<uint64_t>(trial));
    CropConfig cfg;
    cfg.num_center = rng.uniform_int(0, 2);
    cfg.num_random = rng.uniform_int(cfg.num_center == 0 ? 1 : 0, 3);
    cfg.center_scale = rng.uniform_real(0.05, 1.0);
    cfg.random_scale_lo = rng.uniform_real(0.05, 0.5);
    cfg.random_scale_hi = rng.uniform_real(cfg.random_scale_lo, 1.0);
    auto views = make_multicrop_views(img, cfg, rng);
    for (const auto& v : views) {
      ASSERT_TRUE(v.rect.in_bounds(h, w));
      ASSERT_EQ(v.image.shape(), (Shape{3, h, w}));
    }
  }
}

TEST(MulticropProperty, CenterConsumesNoRng) {
  auto img = rand_image(50, 50, 23);
  CropConfig cfg;
  cfg.num_center = 2;
  cfg.num_random = 0;
  Rng rng(77);
  const std::string before = rng.serialize();
  make_multicrop_views(img, cfg, rng);
  EXPECT_EQ(rng.serialize(), before);
  // and is a pure function of (size, scale)
  CropRect r1 = center_crop(img, 0.37);
  CropRect r2 = center_crop(img, 0.37);
  EXPECT_EQ(r1.top, r2.top);
  EXPECT_EQ(r1.height, r2.height);
}

TEST(MulticropProperty, FullPipelineIsSeedDeterministic) {
  auto img = rand_image(32, 32, 24);
  CropConfig cfg;
  auto run = [&](uint64_t seed) {
    Rng rng(seed);
    auto views = make_multicrop_views(img, cfg, rng);
    auto ids = sample_patch_ids(16, 16, 32, rng);
    std::vector<Tensor<double>> pools;
    for (size_t v = 0; v < views.size(); ++v) pools.push_back(unit_rows(32, 4, 900 + v));
    auto negs = gather_negatives(pools, 0, 16, rng);
    return std::make_tuple(views[1].rect.top, views[2].rect.left, ids.indices, negs.provenance);
  };
  EXPECT_EQ(run(5), run(5));
  EXPECT_NE(run(5), run(6));
}

}  // namespace
