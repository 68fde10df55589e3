#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <random>

#include "voxelinst/errors.hpp"
#include "voxelinst/losses.hpp"

using namespace voxelinst;

namespace {

MatchResult labels(std::initializer_list<int> classes) {
  MatchResult m;
  for (int c : classes) {
    AnchorLabel l;
    l.positive = c > 0;
    l.object_class = c;
    l.gt_index = c > 0 ? 0 : -1;
    m.labels.push_back(l);
  }
  return m;
}

}  // namespace

TEST(ClassLoss, Examples) {
  const auto one = labels({1, 0});
  const std::vector<double> perfect{0, 1, 1, 0};
  EXPECT_LE(loss_cls(perfect, 2, one).value, 1e-12);
  const std::vector<double> uniform{0.5, 0.5, 0.5, 0.5};
  EXPECT_NEAR(loss_cls(uniform, 2, one).value, std::log(2.0), 1e-15);
  const std::vector<double> mixed{0.5, 0.5, 0.75, 0.25};
  const auto two = labels({1, 1});
  EXPECT_NEAR(loss_cls(mixed, 2, two).value, (std::log(2.0) + std::log(4.0)) / 2, 1e-12);
  EXPECT_NEAR((std::log(2.0) + std::log(4.0)) / 2, 1.0397, 1e-4);
}

TEST(ClassLoss, ClampFlagsSaturation) {
  const std::vector<double> probs{1.0, 0.0};
  const auto r = loss_cls(probs, 2, labels({1}));
  EXPECT_TRUE(r.saturated);
  EXPECT_NEAR(r.value, -std::log(kProbabilityClamp), 1e-9);
  EXPECT_TRUE(std::isfinite(r.grad[1]));
}

TEST(ClassLoss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  const auto m = labels({0, 2, 1, 0, 2});
  std::vector<double> probs(15);
  for (auto& p : probs) p = u(rng);
  const auto r = loss_cls(probs, 3, m);
  for (std::size_t i = 0; i < probs.size(); ++i) {
    auto up = probs, down = probs;
    up[i] += 1e-6;
    down[i] -= 1e-6;
    const double num = (loss_cls(up, 3, m).value - loss_cls(down, 3, m).value) / 2e-6;
    EXPECT_NEAR(num, r.grad[i], 1e-5 * std::max(1.0, std::abs(num)));
  }
}

TEST(SmoothL1, Examples) {
  EXPECT_EQ(smooth_l1(0.0), 0.0);
  EXPECT_EQ(smooth_l1(0.5), 0.125);
  EXPECT_EQ(smooth_l1(2.0), 1.5);
  EXPECT_EQ(smooth_l1(-2.0), 1.5);
  EXPECT_EQ(smooth_l1_grad(-3.0), -1.0);
  EXPECT_EQ(smooth_l1_grad(0.25), 0.25);
}

TEST(RegLoss, Examples) {
  MatchResult m;
  m.labels.resize(10);
  std::vector<double> offsets(60, 0.7);
  EXPECT_EQ(loss_reg(offsets, m).value, 0.0);
  m.labels[3].positive = true;
  m.labels[3].object_class = 1;
  std::fill(offsets.begin() + 18, offsets.begin() + 24, 0.0);
  offsets[18] = 0.5;
  EXPECT_DOUBLE_EQ(loss_reg(offsets, m).value, 0.0125);
  offsets[18] = 0.0;
  EXPECT_EQ(loss_reg(offsets, m).value, 0.0);
}

TEST(RegLoss, NegativeAnchorsAreGated) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0, 2);
  MatchResult m;
  m.labels.resize(20);
  for (std::size_t a = 0; a < 20; a += 3) {
    m.labels[a].positive = true;
    for (auto& t : m.labels[a].target) t = n(rng);
  }
  std::vector<double> offsets(120);
  for (auto& o : offsets) o = n(rng);
  const auto base = loss_reg(offsets, m);
  for (std::size_t a = 0; a < 20; ++a) {
    if (m.labels[a].positive) continue;
    for (int k = 0; k < 6; ++k) {
      offsets[a * 6 + k] += 100 * n(rng);
      EXPECT_EQ(base.grad[a * 6 + k], 0.0);
    }
  }
  EXPECT_EQ(loss_reg(offsets, m).value, base.value);
}

TEST(RegLoss, GradientMatchesFiniteDifferencesAwayFromKink) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0, 1.5);
  MatchResult m;
  m.labels.resize(8);
  for (std::size_t a = 0; a < 8; a += 2) m.labels[a].positive = true;
  std::vector<double> offsets(48);
  for (auto& o : offsets) {
    do o = n(rng);
    while (std::abs(std::abs(o) - 1.0) < 1e-3);
  }
  const auto r = loss_reg(offsets, m);
  for (std::size_t i = 0; i < offsets.size(); ++i) {
    auto up = offsets, down = offsets;
    up[i] += 1e-6;
    down[i] -= 1e-6;
    const double num = (loss_reg(up, m).value - loss_reg(down, m).value) / 2e-6;
    EXPECT_NEAR(num, r.grad[i], 1e-5 * std::max(1e-3, std::abs(num)));
  }
}

TEST(MaskLoss, Examples) {
  const std::vector<double> half(27, 0.5), gt(27, 1.0);
  std::vector<double> other(27);
  for (std::size_t i = 0; i < other.size(); ++i) other[i] = i % 2;
  std::vector<MaskInstance> none{{1, half, gt, 0.0}, {2, half, other, 0.0}};
  const auto z = loss_mask(none);
  EXPECT_EQ(z.value, 0.0);
  for (const auto& g : z.grads)
    for (double v : g) EXPECT_EQ(v, 0.0);

  std::vector<MaskInstance> one{{1, half, other, 1.0}};
  EXPECT_NEAR(loss_mask(one).value, std::log(2.0), 1e-12);
}

TEST(MaskLoss, WeightZeroInstancesAreNeverRead) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.01, 0.99);
  std::vector<double> p1(64), p2(64), g1(64), g2(64);
  for (auto* v : {&p1, &p2}) for (auto& x : *v) x = u(rng);
  for (auto* v : {&g1, &g2}) for (auto& x : *v) x = u(rng) > 0.5;
  const auto base = loss_mask(std::vector<MaskInstance>{{1, p1, g1, 1.0}, {2, p2, g2, 0.0}});
  for (auto& x : g2) x = std::nan("");
  for (auto& x : p2) x = -7.0;
  const auto again = loss_mask(std::vector<MaskInstance>{{1, p1, g1, 1.0}, {2, p2, g2, 0.0}});
  EXPECT_EQ(std::memcmp(&base.value, &again.value, sizeof(double)), 0);
  EXPECT_EQ(base.grads[0], again.grads[0]);
  for (double v : again.grads[1]) EXPECT_EQ(v, 0.0);
}

TEST(MaskLoss, ContractErrorsNameTheInstance) {
  const std::vector<double> a(8, 0.5), b(7, 1.0);
  try {
    loss_mask(std::vector<MaskInstance>{{42, a, b, 1.0}});
    FAIL();
  } catch (const ContractError& e) {
    EXPECT_NE(std::string(e.what()).find("42"), std::string::npos);
  }
  EXPECT_THROW(loss_mask(std::vector<MaskInstance>{{3, a, a, 0.5}}), ContractError);
}

TEST(MaskLoss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  std::vector<double> p1(20), p2(30), g1(20), g2(30);
  for (auto* v : {&p1, &p2}) for (auto& x : *v) x = u(rng);
  for (auto* v : {&g1, &g2}) for (auto& x : *v) x = u(rng) > 0.5;
  auto eval = [&] { return loss_mask(std::vector<MaskInstance>{{1, p1, g1, 1.0}, {2, p2, g2, 1.0}}); };
  const auto r = eval();
  for (auto* p : {&p1, &p2}) {
    const std::size_t which = p == &p1 ? 0 : 1;
    for (std::size_t i = 0; i < p->size(); ++i) {
      const double keep = (*p)[i];
      (*p)[i] = keep + 1e-6;
      const double up = eval().value;
      (*p)[i] = keep - 1e-6;
      const double down = eval().value;
      (*p)[i] = keep;
      const double num = (up - down) / 2e-6;
      EXPECT_NEAR(num, r.grads[which][i], 1e-5 * std::max(1.0, std::abs(num)));
    }
  }
}

TEST(TotalLoss, Composition) {
  const auto r = total_loss(0.7, 0.1, 0.3, 1.0);
  EXPECT_NEAR(r.total, 1.1, 1e-12);
  EXPECT_NEAR(r.l_box, 0.8, 1e-12);
  const auto d = total_loss(0.7, 0.1, 0.3, 2.0);
  EXPECT_NEAR(d.total - r.total, 0.1, 1e-12);
  EXPECT_NEAR(d.l_box - r.l_box, 0.1, 1e-12);
  EXPECT_LE(total_loss(0, 0, 0).total, 1e-9);
}
