#pragma once

#include <filesystem>
#include <iostream>
#include <string>

#include "acceptance/criteria.hpp"

namespace cxmx::acceptance {

// Full-budget configuration for the stage comparison.
inline TrendOptions full_trend_options() {
  TrendOptions opt;
  opt.data.samples = 5000;
  opt.data.seed = 0;
  opt.data.codes = 256;
  opt.s1_steps = 20000;
  opt.s2_steps = 20000;
  opt.seeds = {0, 1, 2};
  opt.sweep_steps = 4000;
  return opt;
}

inline json variant_json(const VariantResult& v) {
  json j;
  for (const auto& [r, a] : v.probe_auroc) {
    j["probe"].push_back({{"ratio", r}, {"auroc", a}, {"auprc", v.probe_auprc.at(r)}, {"layer", v.probe_layer.at(r)}});
  }
  for (const auto& [r, s] : v.inpaint) {
    j["inpaint"].push_back({{"ratio", r},
                            {"psnr", s.mean_psnr},
                            {"ssim", s.mean_ssim},
                            {"blank_psnr", s.blank_psnr},
                            {"blank_ssim", s.blank_ssim},
                            {"infinite_psnr", s.infinite_psnr},
                            {"count", s.count}});
  }
  for (const auto& [r, s] : v.report) {
    j["report"].push_back({{"ratio", r}, {"micro_f1", s.micro_f1}, {"mean_f1", s.mean_f1}, {"exact", s.exact_match}});
  }
  return j;
}

inline json trend_json(const TrendOptions& opt, const TrendResult& r) {
  json j;
  j["data"] = data_options_json(opt.data);
  j["model"] = model_config_json(opt.model);
  j["train"] = train_config_json(opt.train);
  j["s1_steps"] = opt.s1_steps;
  j["s2_steps"] = opt.s2_steps;
  j["sweep_steps"] = opt.sweep_steps;
  for (const auto& s : r.seeds) j["seeds"].push_back({{"seed", s.seed}, {"s1", variant_json(s.s1)}, {"s1s2", variant_json(s.s1s2)}});
  for (const auto& p : r.sweep) {
    json pj = {{"train_ratio", p.train_ratio}, {"mean_auroc", p.mean_auroc}};
    for (const auto& [q, a] : p.probe_auroc) pj["auroc"].push_back({{"ratio", q}, {"auroc", a}});
    j["sweep"].push_back(pj);
  }
  return j;
}

inline std::vector<Outcome> criterion_trend(const TrendOptions& opt, const std::filesystem::path& cache_dir,
                                            std::ostream& log) {
  const auto t0 = Clock::now();
  auto say = [&](const std::string& s) { log << "  [trend] " << s << std::endl; };
  say("preparing " + std::to_string(opt.data.samples) + " synthetic pairs");
  const auto data = prepare_data(opt.data);
  say("codebook distortion " + fmt(data.codebook.distortion) + " after " + std::to_string(data.codebook.iterations) +
      " iterations");
  RunCache cache(cache_dir, say);
  const auto result = run_trend(opt, data, cache, say);
  write_text(cache_dir / "trend_results.json", trend_json(opt, result).dump(2) + "\n");
  const double secs = seconds_since(t0);
  const auto a = check_probe_trend(result);
  const auto b = check_inpaint_trend(result);
  const auto c = check_report_trend(result);
  const auto d = check_sweep_trend(result);
  return {{8, "trend (a) probe AUROC S1+S2 >= S1 at 0.4/0.6/0.8", a.pass, a.detail, secs},
          {8, "trend (b) inpainting PSNR S1+S2 > S1 at 0.6/0.8", b.pass, b.detail, secs},
          {8, "trend (c) smaller relative finding-F1 drop 0 -> 0.8", c.pass, c.detail, secs},
          {8, "trend (d) mask-ratio sweep: 0.9 not best", d.pass, d.detail, secs}};
}

}  // namespace cxmx::acceptance
