#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "cxmx/common.hpp"
#include "cxmx/vq.hpp"

namespace cxmx {

enum class Shape : std::uint8_t { square = 0, circle = 1, cross = 2 };
enum class Intensity : std::uint8_t { faint = 0, bright = 1 };
enum class Quadrant : std::uint8_t { ul = 0, ur = 1, ll = 2, lr = 3 };

inline constexpr std::array<std::string_view, 3> kShapeNames = {"square", "circle", "cross"};
inline constexpr std::array<std::string_view, 2> kIntensityNames = {"faint", "bright"};
inline constexpr std::array<std::string_view, 4> kQuadrantNames = {"ul", "ur", "ll", "lr"};

struct Finding {
  Shape shape = Shape::square;
  Intensity intensity = Intensity::faint;
  Quadrant quadrant = Quadrant::ul;

  friend auto operator<=>(const Finding&, const Finding&) = default;
};

using FindingSet = std::set<Finding>;

// Probe labels: bit (shape * 4 + quadrant) for the 12 shape/quadrant combos,
// bit 12 for "no finding".
inline constexpr int kLabelCount = 13;
inline constexpr int kNoFindingLabel = 12;

inline std::uint16_t labels_from_findings(const FindingSet& findings) {
  std::uint16_t bits = 0;
  for (const auto& f : findings) {
    bits |= static_cast<std::uint16_t>(1u << (static_cast<int>(f.shape) * 4 + static_cast<int>(f.quadrant)));
  }
  if (findings.empty()) bits |= static_cast<std::uint16_t>(1u << kNoFindingLabel);
  return bits;
}

inline bool label_bit(std::uint16_t bits, int label) { return (bits >> label) & 1u; }

struct SyntheticSample {
  Image image;
  FindingSet findings;
  std::string report;
  std::uint16_t labels = 0;
};

inline constexpr int kImageSide = 32;
inline constexpr double kBackground = 0.1;

inline double intensity_value(Intensity i) { return i == Intensity::bright ? 1.0 : 0.5; }

// Findings listed in quadrant order, then "; impression: <n> findings.".
inline std::string render_report(const FindingSet& findings) {
  std::vector<Finding> ordered(findings.begin(), findings.end());
  std::stable_sort(ordered.begin(), ordered.end(), [](const Finding& a, const Finding& b) {
    return a.quadrant < b.quadrant;
  });
  std::string out = "findings: ";
  for (std::size_t i = 0; i < ordered.size(); ++i) {
    if (i > 0) out += "; ";
    out += kShapeNames[static_cast<int>(ordered[i].shape)];
    out += ' ';
    out += kIntensityNames[static_cast<int>(ordered[i].intensity)];
    out += ' ';
    out += kQuadrantNames[static_cast<int>(ordered[i].quadrant)];
  }
  out += "; impression: " + std::to_string(ordered.size()) + " findings.";
  return out;
}

inline bool shape_covers(Shape shape, double dr, double dc) {
  switch (shape) {
    case Shape::square:
      return std::abs(dr) < 4.0 && std::abs(dc) < 4.0;
    case Shape::circle:
      return dr * dr + dc * dc <= 4.5 * 4.5;
    case Shape::cross:
      return (std::abs(dr) < 1.0 && std::abs(dc) < 5.5) || (std::abs(dc) < 1.0 && std::abs(dr) < 5.5);
  }
  return false;
}

// Each quadrant's shape is centred at the quadrant centre (fixed anchors).
inline Image render_findings(const FindingSet& findings) {
  Image img(kImageSide, kImageSide, kBackground);
  const int half = kImageSide / 2;
  for (const auto& f : findings) {
    const int q = static_cast<int>(f.quadrant);
    const double cr = (q / 2) * half + half / 2.0;
    const double cc = (q % 2) * half + half / 2.0;
    for (int r = 0; r < kImageSide; ++r) {
      for (int c = 0; c < kImageSide; ++c) {
        if (shape_covers(f.shape, r + 0.5 - cr, c + 0.5 - cc)) img.at(r, c) = intensity_value(f.intensity);
      }
    }
  }
  return img;
}

// Sample i depends only on (seed, i).
inline SyntheticSample generate_sample(std::uint64_t seed, std::uint64_t index, double noise_std) {
  Rng rng = make_rng(derive_seed(seed, index));
  const auto count = static_cast<int>(uniform_index(rng, 4));
  std::array<int, 4> quadrants = {0, 1, 2, 3};
  cxmx::shuffle(quadrants.begin(), quadrants.end(), rng);
  SyntheticSample s;
  for (int k = 0; k < count; ++k) {
    Finding f;
    f.quadrant = static_cast<Quadrant>(quadrants[static_cast<std::size_t>(k)]);
    f.shape = static_cast<Shape>(uniform_index(rng, 3));
    f.intensity = static_cast<Intensity>(uniform_index(rng, 2));
    s.findings.insert(f);
  }
  s.image = render_findings(s.findings);
  if (noise_std > 0.0) {
    for (double& p : s.image.pixels) {
      const double v = p + noise_std * normal01(rng);
      p = std::clamp(v, 0.0, 1.0);
    }
  }
  s.report = render_report(s.findings);
  s.labels = labels_from_findings(s.findings);
  return s;
}

inline std::vector<SyntheticSample> generate_dataset(std::size_t n, std::uint64_t seed,
                                                     double noise_std = 0.02) {
  require(n >= 1, "generate_dataset: n must be >= 1");
  require(noise_std >= 0.0 && noise_std <= 0.1, "generate_dataset: noise_std must lie in [0, 0.1]");
  std::vector<SyntheticSample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(generate_sample(seed, i, noise_std));
  return out;
}

struct ParsedReport {
  FindingSet findings;
  int parsed_clauses = 0;
  int malformed_clauses = 0;
  bool header_found = false;
  std::optional<int> impression_count;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\n");
  return s.substr(b, e - b + 1);
}

template <std::size_t N>
std::optional<int> lookup(const std::array<std::string_view, N>& names, std::string_view word) {
  for (std::size_t i = 0; i < N; ++i) {
    if (names[i] == word) return static_cast<int>(i);
  }
  return std::nullopt;
}

inline std::optional<Finding> parse_clause(std::string_view clause) {
  std::vector<std::string_view> words;
  std::size_t pos = 0;
  while (pos < clause.size()) {
    const auto b = clause.find_first_not_of(' ', pos);
    if (b == std::string_view::npos) break;
    auto e = clause.find(' ', b);
    if (e == std::string_view::npos) e = clause.size();
    words.push_back(clause.substr(b, e - b));
    pos = e;
  }
  if (words.size() != 3) return std::nullopt;
  const auto s = lookup(kShapeNames, words[0]);
  const auto i = lookup(kIntensityNames, words[1]);
  const auto q = lookup(kQuadrantNames, words[2]);
  if (!s || !i || !q) return std::nullopt;
  return Finding{static_cast<Shape>(*s), static_cast<Intensity>(*i), static_cast<Quadrant>(*q)};
}

}  // namespace detail

// Tolerant parse: clauses that do not match "<shape> <intensity> <quadrant>"
// are skipped and counted; parsing stops at the impression section.
inline ParsedReport parse_report(std::string_view text) {
  ParsedReport out;
  std::string_view body = detail::trim(text);
  if (body.empty()) return out;
  constexpr std::string_view kHeader = "findings:";
  if (body.substr(0, kHeader.size()) != kHeader) {
    out.malformed_clauses = 1;
    return out;
  }
  out.header_found = true;
  body.remove_prefix(kHeader.size());
  while (true) {
    const auto semi = body.find(';');
    const std::string_view piece = detail::trim(body.substr(0, semi));
    if (piece.substr(0, 10) == "impression") {
      int n = 0;
      if (std::sscanf(std::string(piece).c_str(), "impression: %d findings", &n) == 1) {
        out.impression_count = n;
      }
      break;
    }
    if (!piece.empty()) {
      if (auto f = detail::parse_clause(piece)) {
        out.findings.insert(*f);
        ++out.parsed_clauses;
      } else {
        ++out.malformed_clauses;
      }
    }
    if (semi == std::string_view::npos) break;
    body.remove_prefix(semi + 1);
  }
  return out;
}

// Micro-F1 over set membership; both empty scores 1.
inline double finding_f1(const FindingSet& predicted, const FindingSet& reference) {
  if (predicted.empty() && reference.empty()) return 1.0;
  if (predicted.empty() || reference.empty()) return 0.0;
  std::size_t tp = 0;
  for (const auto& f : predicted) tp += reference.count(f);
  return 2.0 * static_cast<double>(tp) / static_cast<double>(predicted.size() + reference.size());
}

// Micro-averaged F1: true positives and set sizes pooled over many reports.
struct MicroF1 {
  std::size_t true_positives = 0;
  std::size_t predicted = 0;
  std::size_t reference = 0;

  void add(const FindingSet& pred, const FindingSet& ref) {
    for (const auto& f : pred) true_positives += ref.count(f);
    predicted += pred.size();
    reference += ref.size();
  }
  double value() const {
    if (predicted + reference == 0) return 1.0;
    return 2.0 * static_cast<double>(true_positives) / static_cast<double>(predicted + reference);
  }
};

struct DatasetSplits {
  std::vector<std::size_t> train, val, test;
};

// Contiguous 90/5/5 split of sample indices.
inline DatasetSplits split_dataset(std::size_t n) {
  DatasetSplits s;
  const std::size_t n_val = n / 20;
  const std::size_t n_test = n / 20;
  const std::size_t n_train = n - n_val - n_test;
  for (std::size_t i = 0; i < n; ++i) {
    if (i < n_train) {
      s.train.push_back(i);
    } else if (i < n_train + n_val) {
      s.val.push_back(i);
    } else {
      s.test.push_back(i);
    }
  }
  return s;
}

}  // namespace cxmx
