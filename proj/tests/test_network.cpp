#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>

#include "voxelinst/errors.hpp"
#include "voxelinst/network.hpp"

namespace fs = std::filesystem;
using namespace voxelinst;

namespace {

Tensor random_tensor(std::vector<int> shape, std::mt19937_64& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> n(0, scale);
  for (auto& v : t.values()) v = n(rng);
  return t;
}

double dot(const Tensor& a, const Tensor& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

NetworkConfig tiny_config() {
  NetworkConfig cfg;
  cfg.widths = {2, 2, 2};
  cfg.blocks_per_stage = 1;
  cfg.anchor_templates = {{4, 4, 4}};
  cfg.roi_size = 2;
  cfg.mask_hidden = 2;
  cfg.init_seed = 3;
  return cfg;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(Network, HeadShapesFollowGridAndAnchors) {
  for (const auto& [c, r] : {std::pair{2, 3}, std::pair{3, 2}, std::pair{2, 1}}) {
    for (const GridShape grid : {GridShape{1, 1, 1}, GridShape{4, 4, 4}, GridShape{2, 3, 5}}) {
      NetworkConfig cfg = tiny_config();
      cfg.class_count = c;
      cfg.anchor_templates.assign(static_cast<std::size_t>(r), Vec3{4, 4, 4});
      const Model model(cfg);
      Graph g;
      const auto nodes = forward_detect(g, model, Tensor({1, 4 * grid.m, 4 * grid.n, 4 * grid.k}, 0.5));
      EXPECT_EQ(nodes.grid, grid);
      EXPECT_EQ(g.value(nodes.class_probs).shape(), (std::vector<int>{c * r, grid.m, grid.n, grid.k}));
      EXPECT_EQ(g.value(nodes.box_offsets).shape(), (std::vector<int>{6 * r, grid.m, grid.n, grid.k}));
      const auto det = to_detection_output(g, nodes, cfg);
      EXPECT_EQ(det.class_scores.size(), grid.cells() * static_cast<std::size_t>(c * r));
      EXPECT_EQ(det.box_offsets.size(), grid.cells() * static_cast<std::size_t>(6 * r));
      EXPECT_EQ(det.anchor_count(), grid.cells() * static_cast<std::size_t>(r));
    }
  }
}

TEST(Network, DefaultConfigExampleGrid) {
  NetworkConfig cfg;
  cfg.anchor_templates = {{8, 8, 8}, {12, 12, 12}, {16, 16, 16}};
  const Model model(cfg);
  Volume3D v(Shape3{16, 16, 16}, 1, 0.3f);
  const auto det = forward_detect(model, v);
  EXPECT_EQ(det.grid, (GridShape{4, 4, 4}));
  EXPECT_EQ(det.class_scores.size(), 4u * 4 * 4 * 6);
  EXPECT_EQ(det.box_offsets.size(), 4u * 4 * 4 * 18);
}

TEST(Network, SoftmaxSumsToOnePerAnchor) {
  NetworkConfig cfg = tiny_config();
  cfg.class_count = 3;
  cfg.anchor_templates = {{4, 4, 4}, {6, 6, 6}};
  Model model(cfg);
  std::mt19937_64 rng(1);
  for (auto& p : model.parameters()) {
    if (p.name.starts_with("head.cls")) p.value = random_tensor(p.value.shape(), rng, 3.0);
  }
  Volume3D v(Shape3{8, 12, 8});
  std::normal_distribution<float> n(0, 1);
  for (auto& x : v.data) x = n(rng);
  const auto det = forward_detect(model, v);
  for (std::size_t a = 0; a < det.anchor_count(); ++a) {
    double s = 0;
    for (double p : det.scores_of(a)) s += p;
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(Network, IndivisibleInputIsPadded) {
  const Model model(tiny_config());
  const auto det = forward_detect(model, Volume3D(Shape3{5, 9, 4}));
  EXPECT_EQ(det.grid, (GridShape{2, 3, 1}));
  const Tensor padded = pad_to_multiple(Tensor({1, 5, 9, 4}, 1.0), 4);
  EXPECT_EQ(padded.shape(), (std::vector<int>{1, 8, 12, 4}));
  EXPECT_EQ(padded[0], 1.0);
  EXPECT_EQ(padded[padded.size() - 1], 0.0);
  Graph g;
  EXPECT_THROW(forward_detect(g, model, Tensor({1, 5, 8, 8})), ContractError);
}

TEST(Network, ChannelMismatchFailsAtBuildTime) {
  Graph g;
  const auto x = g.input(Tensor({3, 4, 4, 4}));
  Parameter w{"w", Tensor({2, 2, 3, 3, 3})}, b{"b", Tensor({2})};
  EXPECT_THROW(g.conv3d(x, w, b, 1, 1), ContractError);
}

TEST(VoxRes, ZeroResidualBranchIsIdentity) {
  Model model(tiny_config());
  for (auto& p : model.parameters()) {
    if (p.name.starts_with("stage0.block0.conv2")) p.value.fill(0.0);
  }
  std::mt19937_64 rng(2);
  const auto x = random_tensor({2, 4, 4, 4}, rng);
  Graph g;
  const auto in = g.input(x, true);
  const auto y = voxres_block(g, in, model, "stage0.block0");
  EXPECT_EQ(g.value(y), x);
  const auto u = random_tensor({2, 4, 4, 4}, rng);
  g.grad(y) += u;
  g.backward();
  EXPECT_EQ(g.grad(in), u);
}

TEST(VoxRes, InputAndParameterGradientsMatchFiniteDifferences) {
  Model model(tiny_config());
  std::mt19937_64 rng(4);
  for (auto& p : model.parameters()) {
    if (p.name.starts_with("stage0.block0")) p.value = random_tensor(p.value.shape(), rng, 0.7);
  }
  auto x = random_tensor({2, 4, 4, 4}, rng);
  const auto u = random_tensor({2, 4, 4, 4}, rng);
  auto eval = [&] {
    Graph g;
    return dot(g.value(voxres_block(g, g.input(x), model, "stage0.block0")), u);
  };
  Graph g;
  const auto in = g.input(x, true);
  const auto y = voxres_block(g, in, model, "stage0.block0");
  g.grad(y) += u;
  g.backward();
  const Tensor dx = g.grad(in);
  const double eps = 1e-6;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + eps;
    const double up = eval();
    x[i] = keep - eps;
    const double down = eval();
    x[i] = keep;
    const double num = (up - down) / (2 * eps);
    EXPECT_LT(std::abs(num - dx[i]) / std::max({std::abs(num), std::abs(dx[i]), 1e-6}), 1e-5) << i;
  }
  std::vector<Parameter*> params;
  for (auto& p : model.parameters())
    if (p.name.starts_with("stage0.block0")) params.push_back(&p);
  const auto res = grad_check(
      params, eval,
      [&] {
        std::vector<Tensor> out;
        for (auto* p : params) out.push_back(g.param_grad(*p));
        return out;
      },
      eps, 10000, 1);
  EXPECT_LT(res.max_relative, 1e-5);
  EXPECT_GT(res.checked, 100u);
}

TEST(MaskHead, UpsamplesFourfold) {
  NetworkConfig cfg;
  const Model model(cfg);
  Graph g;
  const auto out = forward_mask(g, model, g.input(Tensor({cfg.aligned_channels(), 8, 8, 8}, 0.1)));
  EXPECT_EQ(g.value(out).shape(), (std::vector<int>{1, 32, 32, 32}));
  for (double v : g.value(out).values()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
}

NetworkConfig two_channel_mask() {
  NetworkConfig cfg = tiny_config();
  cfg.widths = {1, 1, 1};
  return cfg;
}

TEST(MaskHead, ZeroFinalLayerGivesOneHalf) {
  Model model(two_channel_mask());
  model.param("mask.up2.w").value.fill(0.0);
  model.param("mask.up2.b").value.fill(0.0);
  std::mt19937_64 rng(5);
  Graph g;
  const auto out = forward_mask(g, model, g.input(random_tensor({2, 2, 2, 2}, rng)));
  for (double v : g.value(out).values()) EXPECT_EQ(v, 0.5);
}

TEST(MaskHead, GradientsMatchFiniteDifferences) {
  Model model(two_channel_mask());
  std::mt19937_64 rng(6);
  auto x = random_tensor({2, 2, 2, 2}, rng);
  const auto u = random_tensor({1, 8, 8, 8}, rng);
  auto eval = [&] {
    Graph g;
    return dot(g.value(forward_mask(g, model, g.input(x))), u);
  };
  Graph g;
  const auto in = g.input(x, true);
  g.grad(forward_mask(g, model, in)) += u;
  g.backward();
  std::vector<Parameter*> params;
  for (auto& p : model.parameters())
    if (Model::is_mask_parameter(p)) params.push_back(&p);
  const auto res = grad_check(
      params, eval,
      [&] {
        std::vector<Tensor> out;
        for (auto* p : params) out.push_back(g.param_grad(*p));
        return out;
      },
      1e-6, 10000, 2);
  EXPECT_LT(res.max_relative, 1e-5);
  const Tensor dx = g.grad(in);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + 1e-6;
    const double up = eval();
    x[i] = keep - 1e-6;
    const double down = eval();
    x[i] = keep;
    const double num = (up - down) / 2e-6;
    EXPECT_LT(std::abs(num - dx[i]) / std::max({std::abs(num), std::abs(dx[i]), 1e-6}), 1e-5);
  }
}

TEST(GradCheck, LinearToyIsExact) {
  std::mt19937_64 rng(7);
  Parameter w{"w", random_tensor({300}, rng)};
  Tensor c({300});
  std::uniform_real_distribution<double> u(0.5, 2.0);
  for (auto& v : c.values()) v = u(rng);
  Parameter* ps[] = {&w};
  const auto res = grad_check(ps, [&] { return dot(w.value, c); }, [&] { return std::vector<Tensor>{c}; }, 0.5, 300, 1);
  EXPECT_EQ(res.checked, 300u);
  EXPECT_LT(res.max_relative, 1e-9);
}

TEST(GradCheck, CentralDifferenceErrorShrinksQuadratically) {
  std::mt19937_64 rng(8);
  Parameter w{"w", random_tensor({2, 1, 3, 3, 3}, rng, 0.5)}, b{"b", random_tensor({2}, rng)};
  const auto x = random_tensor({1, 4, 4, 4}, rng);
  const auto u = random_tensor({2, 4, 4, 4}, rng);
  auto eval = [&] {
    Graph g;
    return dot(g.value(g.sigmoid(g.conv3d(g.input(x), w, b, 1, 1))), u);
  };
  auto analytic = [&] {
    Graph g;
    g.grad(g.sigmoid(g.conv3d(g.input(x), w, b, 1, 1))) += u;
    g.backward();
    return std::vector<Tensor>{g.param_grad(w), g.param_grad(b)};
  };
  Parameter* ps[] = {&w, &b};
  const auto coarse = grad_check(ps, eval, analytic, 1e-2, 100, 3);
  const auto fine = grad_check(ps, eval, analytic, 5e-3, 100, 3);
  const double ratio = coarse.max_absolute / fine.max_absolute;
  EXPECT_GT(ratio, 3.5);
  EXPECT_LT(ratio, 4.5);
}

TEST(Network, ForwardIsDeterministic) {
  NetworkConfig cfg;
  cfg.init_seed = 9;
  const Model a(cfg), b(cfg);
  for (std::size_t i = 0; i < a.parameters().size(); ++i) EXPECT_EQ(a.parameters()[i].value, b.parameters()[i].value);
  Volume3D v(Shape3{12, 12, 12});
  std::mt19937_64 rng(1);
  std::normal_distribution<float> n(0, 1);
  for (auto& x : v.data) x = n(rng);
  const auto d1 = forward_detect(a, v), d2 = forward_detect(a, v);
  EXPECT_EQ(d1.class_scores, d2.class_scores);
  EXPECT_EQ(d1.box_offsets, d2.box_offsets);
}

TEST(Checkpoint, RoundTripStoresFloatPrecision) {
  const auto dir = fs::temp_directory_path() / "voxelinst_checkpoint";
  fs::remove_all(dir);
  fs::create_directories(dir);
  NetworkConfig cfg = tiny_config();
  cfg.class_count = 3;
  const Model model(cfg);
  save_checkpoint(model, dir / "m");
  const Model back = load_checkpoint(dir / "m.json");
  EXPECT_EQ(back.config().class_count, 3);
  EXPECT_EQ(back.config().widths, cfg.widths);
  ASSERT_EQ(back.parameters().size(), model.parameters().size());
  for (std::size_t i = 0; i < model.parameters().size(); ++i) {
    const auto& p = model.parameters()[i].value;
    const auto& q = back.parameters()[i].value;
    ASSERT_EQ(p.shape(), q.shape());
    for (std::size_t k = 0; k < p.size(); ++k) EXPECT_EQ(q[k], static_cast<double>(static_cast<float>(p[k])));
  }
  save_checkpoint(back, dir / "again");
  EXPECT_EQ(file_bytes(dir / "m.f32"), file_bytes(dir / "again.f32"));
  EXPECT_EQ(fs::file_size(dir / "m.f32"), model.parameter_count() * 4);

  { std::ofstream(dir / "m.f32", std::ios::binary | std::ios::app) << "xx"; }
  EXPECT_THROW(load_checkpoint(dir / "m"), FormatError);
}
