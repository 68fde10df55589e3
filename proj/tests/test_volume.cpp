#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <cstring>
#include <random>

#include "voxelinst/errors.hpp"
#include "voxelinst/volume.hpp"

namespace fs = std::filesystem;
using namespace voxelinst;

namespace {

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("voxelinst_volume_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST(VolumeIo, ZeroVolumeWritesThirtyTwoBytes) {
  const auto dir = scratch("zero");
  Volume3D v(Shape3{2, 2, 2});
  save_volume(v, dir / "z");
  EXPECT_EQ(fs::file_size(dir / "z.f32"), 32u);
  EXPECT_TRUE(fs::exists(dir / "z.json"));
  EXPECT_EQ(load_volume(dir / "z"), v);
}

TEST(VolumeIo, RandomRoundTripIsExact) {
  const auto dir = scratch("random");
  std::mt19937_64 rng(3);
  std::normal_distribution<float> n(0.0f, 1e3f);
  Volume3D v(Shape3{3, 5, 7}, 2);
  for (auto& x : v.data) x = n(rng);
  v.data[0] = std::numeric_limits<float>::denorm_min();
  v.data[1] = -0.0f;
  v.spacing = {2.0, 0.5, 0.25};
  save_volume(v, dir / "r");
  const auto back = load_volume(dir / "r.f32");
  ASSERT_EQ(back.data.size(), v.data.size());
  EXPECT_EQ(std::memcmp(back.data.data(), v.data.data(), v.data.size() * sizeof(float)), 0);
  EXPECT_EQ(back.spacing, v.spacing);
  EXPECT_EQ(back.channels, 2);
}

TEST(VolumeIo, LabelRoundTrip) {
  const auto dir = scratch("labels");
  LabelVolume l(Shape3{4, 3, 2});
  for (std::size_t i = 0; i < l.labels.size(); ++i) l.labels[i] = static_cast<std::uint16_t>(i * 2731);
  save_labels(l, dir / "l");
  EXPECT_EQ(load_labels(dir / "l"), l);
  EXPECT_THROW(load_volume(dir / "l"), FormatError);
}

TEST(VolumeIo, PayloadSizeMismatchNamesByteCounts) {
  const auto dir = scratch("mismatch");
  save_volume(Volume3D(Shape3{2, 2, 2}), dir / "m");
  {
    std::ofstream out(dir / "m.f32", std::ios::binary | std::ios::app);
    out.write("\0\0\0\0", 4);
  }
  try {
    load_volume(dir / "m");
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("36"), std::string::npos) << msg;
    EXPECT_NE(msg.find("32"), std::string::npos) << msg;
  }
}

TEST(VolumeIo, MissingSidecar) {
  const auto dir = scratch("sidecar");
  save_volume(Volume3D(Shape3{1, 1, 1}), dir / "s");
  fs::remove(dir / "s.json");
  EXPECT_THROW(load_volume(dir / "s"), MissingSidecarError);
}

TEST(VolumeIo, AnnotationsRoundTrip) {
  const auto dir = scratch("annos");
  std::vector<InstanceAnnotation> annos(2);
  annos[0].id = 4;
  annos[0].object_class = 1;
  annos[0].box = BBox3D{{1.5, 2.5, 3.5}, {3, 4, 5}, 1, 0.0};
  annos[0].has_mask = false;
  annos[1].id = 9;
  annos[1].object_class = 2;
  annos[1].box = BBox3D{{10.25, 2, 3}, {1, 1, 2}, 2, 0.75};
  save_annotations(annos, dir / "a.annos.json");
  EXPECT_EQ(load_annotations(dir / "a.annos.json"), annos);
}

namespace {

// Lattice points of a centered ellipsoid, counted directly.
int lattice_count(double r) {
  int n = 0;
  const int R = static_cast<int>(std::ceil(r));
  for (int z = -R; z <= R; ++z)
    for (int y = -R; y <= R; ++y)
      for (int x = -R; x <= R; ++x)
        if ((z * z + y * y + x * x) / (r * r) <= 1.0) ++n;
  return n;
}

SynthConfig single_sphere() {
  SynthConfig cfg;
  cfg.shape = {24, 24, 24};
  cfg.min_count = cfg.max_count = 1;
  cfg.radius_min = cfg.radius_max = {3.0, 3.0, 3.0};
  cfg.noise_sigma = 0.0;
  cfg.fixed_centers = {{12.5, 12.5, 12.5}};
  return cfg;
}

}  // namespace

TEST(Synth, SingleSphereVoxelCountAndBox) {
  ASSERT_EQ(lattice_count(3.0), 123);
  const auto s = synth_generate(single_sphere(), 1);
  ASSERT_EQ(s.annotations.size(), 1u);
  int fg = 0;
  for (auto l : s.labels.labels) fg += l != 0;
  EXPECT_EQ(fg, 123);
  for (int a = 0; a < 3; ++a) {
    EXPECT_DOUBLE_EQ(s.annotations[0].box.size[a], 7.0);
    EXPECT_DOUBLE_EQ(s.annotations[0].box.center[a], 12.5);
  }
  // sigma 0: intensities are exactly the two means
  for (std::size_t i = 0; i < s.image.data.size(); ++i) {
    EXPECT_FLOAT_EQ(s.image.data[i], s.labels.labels[i] ? 1.0f : 0.2f);
  }
}

TEST(Synth, ZeroCountIsEmpty) {
  SynthConfig cfg;
  cfg.shape = {16, 16, 16};
  cfg.min_count = cfg.max_count = 0;
  const auto s = synth_generate(cfg, 5);
  EXPECT_TRUE(s.annotations.empty());
  for (auto l : s.labels.labels) EXPECT_EQ(l, 0);
}

TEST(Synth, DeterministicPerSeed) {
  SynthConfig cfg;
  const auto a = synth_generate(cfg, 7);
  const auto b = synth_generate(cfg, 7);
  const auto c = synth_generate(cfg, 8);
  EXPECT_EQ(a.image, b.image);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_EQ(a.annotations, b.annotations);
  bool differ = a.annotations.size() != c.annotations.size();
  for (std::size_t i = 0; !differ && i < a.annotations.size(); ++i) {
    differ = a.annotations[i].box.center != c.annotations[i].box.center;
  }
  EXPECT_TRUE(differ);
}

TEST(Synth, InstancesAreNonemptyAndInsideTheirBoxes) {
  SynthConfig cfg;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto s = synth_generate(cfg, seed);
    for (const auto& a : s.annotations) {
      int count = 0;
      for (int z = 0; z < cfg.shape.depth; ++z)
        for (int y = 0; y < cfg.shape.height; ++y)
          for (int x = 0; x < cfg.shape.width; ++x) {
            if (s.labels.at(z, y, x) != a.id) continue;
            ++count;
            const std::array<int, 3> v{z, y, x};
            for (int ax = 0; ax < 3; ++ax) {
              EXPECT_GE(v[ax], a.box.lo(ax));
              EXPECT_LE(v[ax] + 1, a.box.hi(ax));
            }
          }
      EXPECT_GT(count, 0);
    }
  }
}

TEST(Synth, InfeasiblePackingReportsPlacedCount) {
  SynthConfig cfg;
  cfg.shape = {16, 16, 16};
  cfg.min_count = cfg.max_count = 40;
  cfg.min_separation = 10.0;
  try {
    synth_generate(cfg, 1);
    FAIL() << "expected GenerationError";
  } catch (const GenerationError& e) {
    EXPECT_LT(e.placed(), 40u);
  }
}

TEST(Subsample, ExactCounts) {
  std::vector<InstanceAnnotation> annos(10);
  for (int i = 0; i < 10; ++i) annos[static_cast<std::size_t>(i)].id = i + 1;
  auto count = [](const std::vector<InstanceAnnotation>& v) {
    int n = 0;
    for (const auto& a : v) n += a.has_mask;
    return n;
  };
  EXPECT_EQ(subsample_masks(annos, 1.0, 3), annos);
  EXPECT_EQ(count(subsample_masks(annos, 0.2, 3)), 2);
  EXPECT_EQ(count(subsample_masks(annos, 0.3, 3)), 3);
  EXPECT_EQ(count(subsample_masks(annos, 0.0, 3)), 0);
  EXPECT_EQ(subsample_masks(annos, 0.3, 11), subsample_masks(annos, 0.3, 11));
  const auto out = subsample_masks(annos, 0.2, 3);
  for (std::size_t i = 0; i < annos.size(); ++i) EXPECT_EQ(out[i].box.center, annos[i].box.center);
}

TEST(Subsample, SelectionIsSpreadAcrossSeeds) {
  std::vector<InstanceAnnotation> annos(10);
  std::array<int, 10> hits{};
  for (std::uint64_t seed = 0; seed < 500; ++seed) {
    const auto out = subsample_masks(annos, 0.2, seed);
    for (std::size_t i = 0; i < 10; ++i) hits[i] += out[i].has_mask;
  }
  for (int h : hits) {
    EXPECT_GT(h, 50);  // expectation 100
    EXPECT_LT(h, 150);
  }
}
