#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "cxmx/common.hpp"
#include "cxmx/vq.hpp"

namespace cxmx {

// Mann-Whitney U / (P * N) with average ranks for tied scores.
inline double auroc(std::span<const double> scores, std::span<const int> labels) {
  require(scores.size() == labels.size(), "auroc: scores/labels size mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double pos_rank_sum = 0.0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // ranks i+1 .. j
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) {
        pos_rank_sum += avg_rank;
        ++pos;
      }
    }
    i = j;
  }
  const std::size_t neg = scores.size() - pos;
  require(pos > 0 && neg > 0, "auroc: needs at least one positive and one negative");
  const double p = static_cast<double>(pos);
  return (pos_rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(neg));
}

// Average precision; tied scores enter the ranking together as one threshold.
inline double auprc(std::span<const double> scores, std::span<const int> labels) {
  require(scores.size() == labels.size(), "auprc: scores/labels size mismatch");
  const auto total_pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  require(total_pos > 0, "auprc: needs at least one positive");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double ap = 0.0;
  std::size_t tp = 0, seen = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    std::size_t group_pos = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      group_pos += labels[order[j]] == 1 ? 1 : 0;
      ++j;
    }
    tp += group_pos;
    seen += j - i;
    if (group_pos > 0) {
      ap += (static_cast<double>(tp) / static_cast<double>(seen)) *
            (static_cast<double>(group_pos) / static_cast<double>(total_pos));
    }
    i = j;
  }
  return ap;
}

// 10 log10(1 / MSE) for [0,1] images; +inf for identical images.
inline double psnr(const Image& a, const Image& b) {
  const double mse = mean_squared_error(a, b);
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

inline bool is_infinite_psnr(double v) { return std::isinf(v) && v > 0; }

struct SsimOptions {
  int window = 7;
  double sigma = 1.5;
  double c1 = 0.01 * 0.01;
  double c2 = 0.03 * 0.03;
};

inline std::vector<double> gaussian_kernel_1d(int size, double sigma) {
  std::vector<double> k(static_cast<std::size_t>(size));
  const double mid = (size - 1) / 2.0;
  double sum = 0.0;
  for (int i = 0; i < size; ++i) {
    const double x = i - mid;
    k[static_cast<std::size_t>(i)] = std::exp(-x * x / (2.0 * sigma * sigma));
    sum += k[static_cast<std::size_t>(i)];
  }
  for (double& v : k) v /= sum;
  return k;
}

namespace detail {

// Separable "valid" filtering of a row-major h x w field.
inline std::vector<double> filter_valid(const std::vector<double>& src, int h, int w,
                                        const std::vector<double>& k) {
  const int ks = static_cast<int>(k.size());
  const int ow = w - ks + 1;
  const int oh = h - ks + 1;
  std::vector<double> tmp(static_cast<std::size_t>(h) * ow, 0.0);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < ow; ++c) {
      double acc = 0.0;
      for (int t = 0; t < ks; ++t) acc += k[static_cast<std::size_t>(t)] * src[static_cast<std::size_t>(r) * w + c + t];
      tmp[static_cast<std::size_t>(r) * ow + c] = acc;
    }
  }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow, 0.0);
  for (int r = 0; r < oh; ++r) {
    for (int c = 0; c < ow; ++c) {
      double acc = 0.0;
      for (int t = 0; t < ks; ++t) acc += k[static_cast<std::size_t>(t)] * tmp[static_cast<std::size_t>(r + t) * ow + c];
      out[static_cast<std::size_t>(r) * ow + c] = acc;
    }
  }
  return out;
}

}  // namespace detail

// Single-scale SSIM: Gaussian-weighted local statistics, averaged over all
// windows that fit entirely inside the image.
inline double ssim(const Image& a, const Image& b, const SsimOptions& opt = {}) {
  require(a.height == b.height && a.width == b.width, "ssim: image shape mismatch");
  require(a.height >= opt.window && a.width >= opt.window, "ssim: image smaller than window");
  const auto k = gaussian_kernel_1d(opt.window, opt.sigma);
  const int h = a.height, w = a.width;
  std::vector<double> aa(a.pixels.size()), bb(a.pixels.size()), ab(a.pixels.size());
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    aa[i] = a.pixels[i] * a.pixels[i];
    bb[i] = b.pixels[i] * b.pixels[i];
    ab[i] = a.pixels[i] * b.pixels[i];
  }
  const auto mu_a = detail::filter_valid(a.pixels, h, w, k);
  const auto mu_b = detail::filter_valid(b.pixels, h, w, k);
  const auto e_aa = detail::filter_valid(aa, h, w, k);
  const auto e_bb = detail::filter_valid(bb, h, w, k);
  const auto e_ab = detail::filter_valid(ab, h, w, k);
  double total = 0.0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    const double va = e_aa[i] - mu_a[i] * mu_a[i];
    const double vb = e_bb[i] - mu_b[i] * mu_b[i];
    const double cov = e_ab[i] - mu_a[i] * mu_b[i];
    total += ((2 * mu_a[i] * mu_b[i] + opt.c1) * (2 * cov + opt.c2)) /
             ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + opt.c1) * (va + vb + opt.c2));
  }
  return total / static_cast<double>(mu_a.size());
}

}  // namespace cxmx
