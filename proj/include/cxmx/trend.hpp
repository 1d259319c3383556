#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "cxmx/experiment.hpp"

namespace cxmx {

// Stage-1 vs stage-1 + stage-2 comparison on synthetic pairs, plus the
// stage-2 mask-ratio sweep.
struct TrendOptions {
  DataOptions data;
  ModelConfig model;
  TrainConfig train;  // shared optimizer settings; stage/steps/seed set per run
  std::int64_t s1_steps = 20000;
  std::int64_t s2_steps = 20000;
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  ProbeConfig probe;
  std::vector<double> inpaint_ratios = {0.2, 0.4, 0.6, 0.8};
  std::vector<double> report_ratios = {0.0, 0.8};
  std::vector<double> sweep_ratios = {0.25, 0.5, 0.75, 0.9};
  std::int64_t sweep_steps = 4000;
  std::uint64_t sweep_seed = 0;
  std::size_t eval_samples = 0;  // 0: whole test split
};

struct VariantResult {
  std::map<double, double> probe_auroc;  // test AUROC at the validation-best layer
  std::map<double, double> probe_auprc;
  std::map<double, int> probe_layer;
  std::map<double, InpaintSummary> inpaint;
  std::map<double, ReportSummary> report;
};

struct SeedResult {
  std::uint64_t seed = 0;
  VariantResult s1, s1s2;
};

struct SweepPoint {
  double train_ratio = 0.0;
  double mean_auroc = 0.0;  // averaged over the probe's evaluation ratios
  std::map<double, double> probe_auroc;
};

struct TrendResult {
  std::vector<SeedResult> seeds;
  std::vector<SweepPoint> sweep;
};

using TrendLog = std::function<void(const std::string&)>;

inline std::vector<std::size_t> eval_indices(const PreparedData& d, std::size_t limit) {
  std::vector<std::size_t> idx = d.splits.test;
  if (limit && idx.size() > limit) idx.resize(limit);
  return idx;
}

template <typename T>
VariantResult evaluate_variant(const Model<T>& model, const PreparedData& d, const TrendOptions& opt,
                               std::uint64_t seed, const ProbeDataset& probe_data) {
  VariantResult v;
  ProbeConfig pc = opt.probe;
  pc.seeds = {seed};
  const auto report = run_probe(model, probe_data, pc);
  for (const auto& sel : report.selections) {
    v.probe_auroc[sel.ratio] = sel.test_auroc;
    v.probe_auprc[sel.ratio] = sel.test_auprc;
    v.probe_layer[sel.ratio] = sel.best_layer;
  }
  const auto idx = eval_indices(d, opt.eval_samples);
  for (double r : opt.inpaint_ratios) v.inpaint[r] = inpaint_eval(model, d, idx, r, derive_seed(seed, 0x1a9u));
  for (double r : opt.report_ratios) v.report[r] = report_eval(model, d, idx, r, derive_seed(seed, 0x4e9u));
  return v;
}

inline RunSpec trend_run(const TrendOptions& opt, const std::string& name, Stage stage, std::int64_t steps,
                         std::uint64_t seed, double mask_ratio) {
  RunSpec spec;
  spec.name = name;
  spec.model = opt.model;
  spec.model_seed = derive_seed(seed, 0x5eedu);
  spec.train = opt.train;
  spec.train.stage = stage;
  spec.train.steps = steps;
  spec.train.seed = derive_seed(seed, stage == Stage::s1 ? 1u : 2u);
  spec.train.mask_ratio = mask_ratio;
  return spec;
}

inline TrendResult run_trend(const TrendOptions& opt, const PreparedData& d, RunCache& cache, const TrendLog& log) {
  TrendResult out;
  const auto probe_data = make_probe_dataset(d);
  for (std::uint64_t seed : opt.seeds) {
    const auto tag = "seed" + std::to_string(seed);
    json s1_key;
    const auto s1 = cache.run(trend_run(opt, "s1_" + tag, Stage::s1, opt.s1_steps, seed, opt.train.mask_ratio), d,
                              nullptr, nullptr, &s1_key);
    const auto s2 = cache.run(trend_run(opt, "s1s2_" + tag, Stage::s2, opt.s2_steps, seed, opt.train.mask_ratio), d,
                              &s1, s1_key);
    SeedResult r;
    r.seed = seed;
    if (log) log("evaluating " + tag);
    r.s1 = evaluate_variant(s1, d, opt, seed, probe_data);
    r.s1s2 = evaluate_variant(s2, d, opt, seed, probe_data);
    out.seeds.push_back(std::move(r));
  }
  json s1_key;
  const auto base = cache.run(trend_run(opt, "s1_seed" + std::to_string(opt.sweep_seed), Stage::s1, opt.s1_steps,
                                        opt.sweep_seed, opt.train.mask_ratio),
                              d, nullptr, nullptr, &s1_key);
  for (double ratio : opt.sweep_ratios) {
    const auto name = "sweep_" + std::to_string(static_cast<int>(std::lround(ratio * 100)));
    const auto m = cache.run(trend_run(opt, name, Stage::s2, opt.sweep_steps, opt.sweep_seed, ratio), d, &base, s1_key);
    ProbeConfig pc = opt.probe;
    pc.seeds = {opt.sweep_seed};
    const auto rep = run_probe(m, probe_data, pc);
    SweepPoint p;
    p.train_ratio = ratio;
    for (const auto& sel : rep.selections) {
      p.probe_auroc[sel.ratio] = sel.test_auroc;
      p.mean_auroc += sel.test_auroc;
    }
    p.mean_auroc /= static_cast<double>(rep.selections.size());
    if (log) log("sweep ratio " + std::to_string(ratio) + " mean probe AUROC " + std::to_string(p.mean_auroc));
    out.sweep.push_back(p);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Directional checks

struct TrendCheck {
  bool pass = false;
  std::string detail;
};

inline int seeds_needed(std::size_t n) { return static_cast<int>((2 * n + 2) / 3); }  // 2 of 3

inline TrendCheck check_probe_trend(const TrendResult& r, const std::vector<double>& ratios = {0.4, 0.6, 0.8}) {
  int ok = 0;
  std::string detail;
  for (const auto& s : r.seeds) {
    bool all = true;
    for (double q : ratios) all = all && s.s1s2.probe_auroc.at(q) >= s.s1.probe_auroc.at(q);
    ok += all ? 1 : 0;
    detail += "seed " + std::to_string(s.seed) + (all ? " yes" : " no") + "; ";
  }
  return {ok >= seeds_needed(r.seeds.size()), detail + std::to_string(ok) + "/" + std::to_string(r.seeds.size())};
}

inline TrendCheck check_inpaint_trend(const TrendResult& r, const std::vector<double>& ratios = {0.6, 0.8}) {
  int ok = 0;
  std::string detail;
  for (const auto& s : r.seeds) {
    bool all = true;
    for (double q : ratios) all = all && s.s1s2.inpaint.at(q).mean_psnr > s.s1.inpaint.at(q).mean_psnr;
    ok += all ? 1 : 0;
    detail += "seed " + std::to_string(s.seed) + (all ? " yes" : " no") + "; ";
  }
  return {ok >= seeds_needed(r.seeds.size()), detail + std::to_string(ok) + "/" + std::to_string(r.seeds.size())};
}

// (F1 at ratio 0 - F1 at `high`) / F1 at ratio 0; +inf when the unmasked F1 is 0.
inline double relative_f1_drop(const VariantResult& v, double high) {
  const double f0 = v.report.at(0.0).micro_f1;
  const double fh = v.report.at(high).micro_f1;
  if (f0 <= 0.0) return std::numeric_limits<double>::infinity();
  return (f0 - fh) / f0;
}

inline TrendCheck check_report_trend(const TrendResult& r, double high = 0.8) {
  int ok = 0;
  std::string detail;
  for (const auto& s : r.seeds) {
    const double a = relative_f1_drop(s.s1, high), b = relative_f1_drop(s.s1s2, high);
    const bool better = b < a;
    ok += better ? 1 : 0;
    detail += "seed " + std::to_string(s.seed) + " drop s1 " + std::to_string(a) + " s1+s2 " + std::to_string(b) + "; ";
  }
  return {ok >= seeds_needed(r.seeds.size()), detail + std::to_string(ok) + "/" + std::to_string(r.seeds.size())};
}

// Passes when some other training ratio scores strictly higher than `worst`.
inline TrendCheck check_sweep_trend(const TrendResult& r, double worst = 0.9) {
  double at_worst = -1.0, best_other = -1.0;
  std::string detail;
  for (const auto& p : r.sweep) {
    detail += std::to_string(p.train_ratio) + ": " + std::to_string(p.mean_auroc) + "; ";
    if (std::abs(p.train_ratio - worst) < 1e-12) {
      at_worst = p.mean_auroc;
    } else {
      best_other = std::max(best_other, p.mean_auroc);
    }
  }
  require(at_worst >= 0.0, "sweep: ratio under test was not run");
  return {best_other > at_worst, detail};
}

}  // namespace cxmx
