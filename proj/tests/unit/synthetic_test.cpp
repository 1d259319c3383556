#include <gtest/gtest.h>

#include <array>
#include <cmath>

#include "cxmx/synthetic.hpp"

using namespace cxmx;

namespace {

Finding F(Shape s, Intensity i, Quadrant q) { return {s, i, q}; }

}  // namespace

TEST(Report, EmptyFindingsString) {
  EXPECT_EQ(render_report({}), "findings: ; impression: 0 findings.");
}

TEST(Report, ListsFindingsInQuadrantOrder) {
  const FindingSet f = {F(Shape::cross, Intensity::faint, Quadrant::lr), F(Shape::square, Intensity::bright, Quadrant::ul)};
  EXPECT_EQ(render_report(f), "findings: square bright ul; cross faint lr; impression: 2 findings.");
}

TEST(Generator, ZeroFindingSampleIsNearBackground) {
  std::uint64_t i = 0;
  while (!generate_sample(4, i, 0.02).findings.empty()) ++i;
  const auto s = generate_sample(4, i, 0.02);
  EXPECT_EQ(s.report, "findings: ; impression: 0 findings.");
  double mean = 0;
  for (double p : s.image.pixels) mean += p;
  mean /= static_cast<double>(s.image.pixels.size());
  EXPECT_NEAR(mean, kBackground, 0.01);
  EXPECT_EQ(s.labels, 1u << kNoFindingLabel);
}

TEST(Generator, SamplesAreConsistent) {
  for (const auto& s : generate_dataset(500, 2, 0.05)) {
    EXPECT_LE(s.findings.size(), 3u);
    std::array<int, 4> per_quadrant{};
    for (const auto& f : s.findings) ++per_quadrant[static_cast<std::size_t>(f.quadrant)];
    for (int c : per_quadrant) EXPECT_LE(c, 1);
    EXPECT_EQ(parse_report(s.report).findings, s.findings);
    EXPECT_EQ(s.labels, labels_from_findings(s.findings));
    EXPECT_EQ(label_bit(s.labels, kNoFindingLabel), s.findings.empty());
    EXPECT_EQ(s.image.height, kImageSide);
    for (double p : s.image.pixels) {
      EXPECT_GE(p, 0.0);
      EXPECT_LE(p, 1.0);
    }
  }
}

TEST(Generator, Deterministic) {
  const auto a = generate_dataset(50, 9, 0.02);
  const auto b = generate_dataset(50, 9, 0.02);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].image, b[i].image);
    EXPECT_EQ(a[i].report, b[i].report);
  }
  EXPECT_NE(generate_dataset(5, 10, 0.02)[0].image, a[0].image);
}

TEST(Generator, FindingCountHistogramIsUniform) {
  // Each count has probability 1/4; sigma = sqrt(n p (1 - p)) = 43.3 for n = 10000.
  std::array<int, 4> hist{};
  for (const auto& s : generate_dataset(10000, 1, 0.0)) ++hist[s.findings.size()];
  const double sigma = std::sqrt(10000 * 0.25 * 0.75);
  for (int h : hist) EXPECT_LE(std::abs(h - 2500), 3 * sigma);
}

TEST(Generator, RejectsBadArguments) {
  EXPECT_THROW(generate_dataset(0, 1), ValidationError);
  EXPECT_THROW(generate_dataset(3, 1, 0.2), ValidationError);
  EXPECT_THROW(generate_dataset(3, 1, -0.01), ValidationError);
}

TEST(ParseReport, SingleFinding) {
  const auto p = parse_report("findings: square bright ul; impression: 1 findings.");
  EXPECT_EQ(p.findings, FindingSet{F(Shape::square, Intensity::bright, Quadrant::ul)});
  EXPECT_EQ(p.parsed_clauses, 1);
  EXPECT_EQ(p.malformed_clauses, 0);
  EXPECT_EQ(p.impression_count, 1);
}

TEST(ParseReport, EmptyString) {
  const auto p = parse_report("");
  EXPECT_TRUE(p.findings.empty());
  EXPECT_EQ(p.parsed_clauses, 0);
}

TEST(ParseReport, SkipsUnknownShape) {
  const auto p = parse_report("findings: blob bright ul; circle faint lr; impression: 2 findings.");
  EXPECT_EQ(p.findings, FindingSet{F(Shape::circle, Intensity::faint, Quadrant::lr)});
  EXPECT_EQ(p.malformed_clauses, 1);
}

TEST(ParseReport, ToleratesTruncationAndGarbage) {
  EXPECT_EQ(parse_report("findings: cross bright ll; circ").findings,
            FindingSet{F(Shape::cross, Intensity::bright, Quadrant::ll)});
  const auto junk = parse_report("qqq 12 ;;: ");
  EXPECT_TRUE(junk.findings.empty());
  EXPECT_FALSE(junk.header_found);
  EXPECT_EQ(junk.malformed_clauses, 1);
  EXPECT_TRUE(parse_report("findings: impression: 3 findings.").findings.empty());
}

TEST(FindingF1, Conventions) {
  const Finding a = F(Shape::square, Intensity::faint, Quadrant::ul);
  const Finding b = F(Shape::circle, Intensity::bright, Quadrant::ur);
  const Finding c = F(Shape::cross, Intensity::faint, Quadrant::ll);
  EXPECT_EQ(finding_f1({}, {}), 1.0);
  EXPECT_EQ(finding_f1({a}, {}), 0.0);
  EXPECT_EQ(finding_f1({}, {a}), 0.0);
  EXPECT_EQ(finding_f1({a, b}, {a, b}), 1.0);
  EXPECT_EQ(finding_f1({a}, {b}), 0.0);
  EXPECT_DOUBLE_EQ(finding_f1({a, b}, {b, c}), 0.5);
}

TEST(MicroF1, PoolsCountsAcrossReports) {
  const Finding a = F(Shape::square, Intensity::faint, Quadrant::ul);
  const Finding b = F(Shape::circle, Intensity::bright, Quadrant::ur);
  MicroF1 m;
  EXPECT_EQ(m.value(), 1.0);
  m.add({}, {});
  EXPECT_EQ(m.value(), 1.0);
  m.add({a}, {a, b});  // tp 1, P 1, R 2
  m.add({b}, {});      // tp 0, P 1, R 0
  EXPECT_DOUBLE_EQ(m.value(), 2.0 * 1 / (2 + 2));
}

TEST(Splits, ContiguousNinetyFiveFive) {
  const auto s = split_dataset(5000);
  EXPECT_EQ(s.train.size(), 4500u);
  EXPECT_EQ(s.val.size(), 250u);
  EXPECT_EQ(s.test.size(), 250u);
  EXPECT_EQ(s.val.front(), 4500u);
  EXPECT_EQ(s.test.back(), 4999u);
}
