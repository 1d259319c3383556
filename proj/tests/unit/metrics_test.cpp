#include <gtest/gtest.h>

#include <cmath>

#include "cxmx/common.hpp"
#include "cxmx/metrics.hpp"

using namespace cxmx;

namespace {

// Fraction of (positive, negative) pairs ordered correctly, ties counted half.
double pair_auroc(const std::vector<double>& s, const std::vector<int>& y) {
  double good = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[i] != 1 || y[j] != 0) continue;
      pairs += 1;
      good += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
    }
  }
  return good / pairs;
}

// Sweep every distinct threshold from high to low; precision at each step
// weighted by the recall it adds.
double sweep_auprc(const std::vector<double>& s, const std::vector<int>& y) {
  std::vector<double> th = s;
  std::sort(th.rbegin(), th.rend());
  th.erase(std::unique(th.begin(), th.end()), th.end());
  double total_pos = 0;
  for (int v : y) total_pos += v;
  double ap = 0, prev_recall = 0;
  for (double t : th) {
    double tp = 0, pred = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] >= t) {
        pred += 1;
        tp += y[i];
      }
    }
    const double recall = tp / total_pos;
    ap += (recall - prev_recall) * (tp / pred);
    prev_recall = recall;
  }
  return ap;
}

Image random_image(Rng& rng, int h = 16, int w = 16) {
  Image im(h, w);
  for (double& p : im.pixels) p = uniform01(rng);
  return im;
}

}  // namespace

TEST(Auroc, Conventions) {
  EXPECT_EQ(auroc(std::vector<double>{0.1, 0.2, 0.8, 0.9}, std::vector<int>{0, 0, 1, 1}), 1.0);
  EXPECT_EQ(auroc(std::vector<double>{0.9, 0.8, 0.2, 0.1}, std::vector<int>{0, 0, 1, 1}), 0.0);
  EXPECT_EQ(auroc(std::vector<double>{3, 3, 3, 3, 3}, std::vector<int>{1, 0, 0, 1, 0}), 0.5);
  EXPECT_THROW(auroc(std::vector<double>{1, 2}, std::vector<int>{1, 1}), ValidationError);
  EXPECT_THROW(auroc(std::vector<double>{1, 2}, std::vector<int>{1}), ValidationError);
}

TEST(Auroc, SixPointPairCount) {
  const std::vector<double> s = {0.3, 0.7, 0.7, 0.1, 0.9, 0.4};
  const std::vector<int> y = {1, 0, 1, 0, 1, 0};
  // Pairs: 0.3 beats 0.1; 0.7 beats 0.1, 0.4 and ties 0.7; 0.9 beats all three. (1 + 2.5 + 3) / 9
  EXPECT_NEAR(auroc(s, y), 6.5 / 9.0, 1e-15);
  EXPECT_NEAR(auroc(s, y), pair_auroc(s, y), 1e-15);
}

TEST(Auroc, MatchesPairCountAndMonotoneInvariance) {
  Rng rng = make_rng(3);
  for (int t = 0; t < 200; ++t) {
    const int n = 2 + static_cast<int>(uniform_index(rng, 30));
    std::vector<double> s(static_cast<std::size_t>(n));
    std::vector<int> y(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      s[static_cast<std::size_t>(i)] = static_cast<double>(uniform_index(rng, 6));
      y[static_cast<std::size_t>(i)] = static_cast<int>(uniform_index(rng, 2));
    }
    y[0] = 1;
    y[1] = 0;
    const double a = auroc(s, y);
    EXPECT_NEAR(a, pair_auroc(s, y), 1e-12);
    std::vector<double> warped(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) warped[i] = std::exp(3 * s[i]) - 7;
    EXPECT_NEAR(auroc(warped, y), a, 1e-12);
  }
}

TEST(Auprc, Conventions) {
  EXPECT_EQ(auprc(std::vector<double>{0.9, 0.8, 0.1}, std::vector<int>{1, 1, 0}), 1.0);
  EXPECT_NEAR(auprc(std::vector<double>{0.9, 0.8, 0.7, 0.6, 0.1}, std::vector<int>{0, 0, 0, 0, 1}), 1.0 / 5, 1e-15);
  EXPECT_THROW(auprc(std::vector<double>{0.9, 0.1}, std::vector<int>{0, 0}), ValidationError);
}

TEST(Auprc, MatchesThresholdSweep) {
  Rng rng = make_rng(4);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> s(8);
    std::vector<int> y(8);
    for (int i = 0; i < 8; ++i) {
      s[static_cast<std::size_t>(i)] = t % 2 ? uniform01(rng) : static_cast<double>(uniform_index(rng, 4));
      y[static_cast<std::size_t>(i)] = static_cast<int>(uniform_index(rng, 2));
    }
    y[3] = 1;
    EXPECT_NEAR(auprc(s, y), sweep_auprc(s, y), 1e-12);
  }
}

TEST(Psnr, OffsetAndIdentity) {
  Image a(8, 8, 0.4), b(8, 8, 0.5);
  EXPECT_NEAR(psnr(a, b), 20.0, 1e-9);
  EXPECT_TRUE(is_infinite_psnr(psnr(a, a)));
  EXPECT_THROW(psnr(a, Image(8, 7)), ValidationError);
}

TEST(Ssim, IdentityAndSymmetry) {
  Rng rng = make_rng(5);
  const auto a = random_image(rng), b = random_image(rng);
  EXPECT_NEAR(ssim(a, a), 1.0, 1e-12);
  EXPECT_NEAR(ssim(a, b), ssim(b, a), 1e-12);
  EXPECT_LT(ssim(a, b), 0.5);
  EXPECT_THROW(ssim(a, Image(16, 15)), ValidationError);
  EXPECT_THROW(ssim(Image(5, 5), Image(5, 5)), ValidationError);
}

TEST(Ssim, MatchesNaiveWindowedSum) {
  Rng rng = make_rng(6);
  const auto a = random_image(rng, 12, 10), b = random_image(rng, 12, 10);
  double wsum = 0;
  std::vector<double> w(49);
  for (int r = 0; r < 7; ++r) {
    for (int c = 0; c < 7; ++c) {
      w[static_cast<std::size_t>(r * 7 + c)] = std::exp(-((r - 3) * (r - 3) + (c - 3) * (c - 3)) / (2 * 1.5 * 1.5));
      wsum += w[static_cast<std::size_t>(r * 7 + c)];
    }
  }
  double total = 0;
  int windows = 0;
  for (int r0 = 0; r0 + 7 <= 12; ++r0) {
    for (int c0 = 0; c0 + 7 <= 10; ++c0) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (int r = 0; r < 7; ++r) {
        for (int c = 0; c < 7; ++c) {
          const double g = w[static_cast<std::size_t>(r * 7 + c)] / wsum;
          const double x = a.at(r0 + r, c0 + c), y = b.at(r0 + r, c0 + c);
          ma += g * x;
          mb += g * y;
          saa += g * x * x;
          sbb += g * y * y;
          sab += g * x * y;
        }
      }
      const double c1 = 1e-4, c2 = 9e-4;
      total += ((2 * ma * mb + c1) * (2 * (sab - ma * mb) + c2)) /
               ((ma * ma + mb * mb + c1) * (saa - ma * ma + sbb - mb * mb + c2));
      ++windows;
    }
  }
  EXPECT_NEAR(ssim(a, b), total / windows, 1e-12);
}
