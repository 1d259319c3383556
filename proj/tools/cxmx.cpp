// cxmx: data generation, tokenizer fitting, two-stage pretraining and the
// evaluation protocols, driven from the command line.
//
// Exit codes: 0 success, 1 validation/format error, 2 numerical failure,
// 3 verification failure.

#include <CLI11.hpp>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "acceptance/criteria.hpp"
#include "cxmx/cxmx.hpp"
#include "cxmx/pipeline.hpp"

namespace fs = std::filesystem;
using namespace cxmx;

namespace {

void note(const std::string& s) { std::cerr << s << std::endl; }

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

std::vector<double> parse_ratios(const std::string& s) {
  std::vector<double> out;
  for (const auto& item : split_list(s)) {
    double v = 0.0;
    try {
      v = std::stod(item);
    } catch (const std::exception&) {
      throw ValidationError("bad ratio '" + item + "'");
    }
    require(v >= 0.0 && v < 1.0, "ratio " + item + " must lie in [0,1)");
    out.push_back(v);
  }
  require(!out.empty(), "no ratios given");
  return out;
}

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> out;
  for (const auto& item : split_list(s)) {
    try {
      out.push_back(std::stoull(item));
    } catch (const std::exception&) {
      throw ValidationError("bad seed '" + item + "'");
    }
  }
  require(!out.empty(), "no seeds given");
  return out;
}

Config build_config(const std::string& path, const std::vector<std::string>& overrides) {
  Config cfg = path.empty() ? Config() : load_config(path);
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    require(eq != std::string::npos, "--set expects key=value, got '" + kv + "'");
    cfg.set(trim_ws(std::string_view(kv).substr(0, eq)), trim_ws(std::string_view(kv).substr(eq + 1)), "override");
  }
  return cfg;
}

struct EvalArgs {
  std::string checkpoint, shards, out, ratios = "0,0.2,0.4,0.6,0.8", seeds = "0,1,2";
  std::size_t limit = 0;
};

void add_eval_args(CLI::App* sub, EvalArgs& a) {
  sub->add_option("--checkpoint", a.checkpoint, "model checkpoint (.cxck)")->required();
  sub->add_option("--shards", a.shards, "tokenized data directory")->required();
  sub->add_option("--ratios", a.ratios, "comma-separated masking ratios");
  sub->add_option("--seeds", a.seeds, "comma-separated seeds");
  sub->add_option("--out", a.out, "results file (.jsonl)")->required();
  sub->add_option("--limit", a.limit, "evaluate at most this many test samples (0: all)");
}

struct Loaded {
  Checkpoint ck;
  Model<float> model;
  PreparedData data;
};

Loaded load_eval(const EvalArgs& a) {
  auto ck = read_checkpoint(a.checkpoint);
  auto model = model_from_checkpoint(ck);
  auto data = load_prepared(a.shards);
  require(model.config().vocab == data.vocab, "checkpoint vocabulary does not match the data directory");
  return {std::move(ck), std::move(model), std::move(data)};
}

json header(const std::string& protocol, const EvalArgs& a, const Loaded& l) {
  return {{"record", "header"},
          {"protocol", protocol},
          {"checkpoint", a.checkpoint},
          {"checkpoint_metadata", l.ck.metadata},
          {"shards", a.shards},
          {"data", data_options_json(l.data.options)},
          {"ratios", parse_ratios(a.ratios)},
          {"seeds", parse_seeds(a.seeds)},
          {"limit", a.limit}};
}

std::vector<std::size_t> test_indices(const PreparedData& d, std::size_t limit) { return eval_indices(d, limit); }

int verify(bool quick, const std::string& scratch, const std::string& self) {
  using namespace cxmx::acceptance;
  std::vector<std::function<Outcome()>> checks = {criterion_loss_rule, criterion_gradient_check, criterion_causality,
                                                  criterion_vq_contract, criterion_metric_oracles,
                                                  criterion_tta_algebra, criterion_random_retrieval};
  if (!quick) {
    checks.insert(checks.begin() + 2, criterion_overfit);
    checks.push_back([&] { return criterion_determinism(self, scratch); });
  }
  int failed = 0;
  for (const auto& c : checks) {
    Outcome o;
    try {
      o = c();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = e.what();
    }
    std::cout << (o.pass ? "[PASS] " : "[FAIL] ") << "criterion " << o.id << ": " << o.name << " | " << o.detail
              << std::endl;
    failed += o.pass ? 0 : 1;
  }
  std::cout << (failed ? std::to_string(failed) + " FAILED" : "ALL PASS") << std::endl;
  return failed ? 3 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cxmx: early-fusion image/report pretraining on synthetic data"};
  app.require_subcommand(1);
  int exit_code = 0;

  // gen-data
  GenDataOptions gen;
  std::string gen_out;
  auto* gen_cmd = app.add_subcommand("gen-data", "generate synthetic image/report pairs");
  gen_cmd->add_option("--n", gen.n, "number of samples")->check(CLI::PositiveNumber);
  gen_cmd->add_option("--seed", gen.seed, "generator seed");
  gen_cmd->add_option("--noise", gen.noise, "pixel noise std (0..0.1)");
  gen_cmd->add_option("--out", gen_out, "output directory")->required();
  gen_cmd->callback([&] {
    const auto m = gen_data(gen, gen_out);
    std::cout << m.dump(2) << std::endl;
  });

  // fit-tokenizer
  FitTokenizerOptions fit;
  std::string fit_in, fit_out;
  auto* fit_cmd = app.add_subcommand("fit-tokenizer", "fit the VQ codebook and tokenize all shards");
  fit_cmd->add_option("--shards", fit_in, "directory written by gen-data")->required();
  fit_cmd->add_option("--codes", fit.codes, "codebook size");
  fit_cmd->add_option("--seed", fit.seed, "k-means seed");
  fit_cmd->add_option("--max-iterations", fit.kmeans.max_iterations, "Lloyd iteration cap");
  fit_cmd->add_option("--out", fit_out, "output directory")->required();
  fit_cmd->callback([&] {
    const auto book = fit_tokenizer(fit_in, fit, fit_out);
    std::cout << "codebook: " << book.code_count << " codes, " << book.iterations
              << " iterations, mean distortion " << book.distortion << ", peak distortion " << book.peak_distortion
              << std::endl;
  });

  // pretrain
  std::string pt_stage = "s1", pt_config, pt_shards, pt_out, pt_init;
  bool pt_scratch = false;
  std::vector<std::string> pt_set;
  auto* pt_cmd = app.add_subcommand("pretrain", "run stage s1 or s2 training");
  pt_cmd->add_option("--stage", pt_stage, "s1 or s2")->check(CLI::IsMember({"s1", "s2"}));
  pt_cmd->add_option("--config", pt_config, "key=value config file");
  pt_cmd->add_option("--set", pt_set, "override a config key (key=value)");
  pt_cmd->add_option("--shards", pt_shards, "tokenized data directory")->required();
  pt_cmd->add_option("--init", pt_init, "checkpoint to start from (required for s2)");
  pt_cmd->add_flag("--allow-scratch", pt_scratch, "allow s2 from random initialisation");
  pt_cmd->add_option("--out", pt_out, "output directory")->required();
  pt_cmd->callback([&] {
    const Config cfg = build_config(pt_config, pt_set);
    TrainConfig tc = cfg.train_config(pt_stage == "s1" ? Stage::s1 : Stage::s2);
    tc.allow_scratch = pt_scratch;
    check_stage_init(tc, !pt_init.empty());
    const auto data = load_prepared(pt_shards);
    std::optional<Model<float>> model;
    json init_meta = nullptr;
    if (!pt_init.empty()) {
      const auto ck = read_checkpoint(pt_init);
      model = model_from_checkpoint(ck);
      init_meta = ck.metadata;
      require(model->config().vocab == data.vocab, "init checkpoint vocabulary does not match the data");
      require(model->config().max_len >= tc.context_cap, "init checkpoint max_len is below context_cap");
    } else {
      model.emplace(cfg.model_config(data.vocab), static_cast<std::uint64_t>(cfg.integer("model_seed")));
    }
    const fs::path out = pt_out;
    fs::create_directories(out);
    const json echo = cfg.echo();
    auto meta_for = [&](std::int64_t step) {
      return json{{"config", echo},
                  {"train", train_config_json(tc)},
                  {"data", data_options_json(data.options)},
                  {"init", init_meta},
                  {"step", step},
                  {"stage", pt_stage},
                  {"rng", {{"seed", tc.seed}, {"next_step", step}}}};
    };
    JsonlWriter log(out / "train_log.jsonl");
    log.write({{"record", "header"}, {"config", echo}, {"stage", pt_stage}, {"init", pt_init}});
    TrainHooks hooks;
    const auto every = std::max<std::int64_t>(1, tc.steps / 20);
    hooks.on_step = [&](const TrainRecord& r) {
      log.write({{"step", r.step}, {"loss", r.loss}, {"lr", r.lr}, {"grad_norm", r.grad_norm},
                 {"counted", r.counted}, {"wall_seconds", r.wall_seconds}});
      if ((r.step + 1) % every == 0) note("step " + std::to_string(r.step + 1) + " loss " + std::to_string(r.loss));
    };
    hooks.on_checkpoint = [&](std::int64_t step, const ParamVector<float>& params) {
      const Model<float> snap(model->config(), params);
      write_checkpoint(out / ("checkpoint_step" + std::to_string(step) + ".cxck"), model_checkpoint(snap, meta_for(step)));
    };
    train(*model, tc, select_train_data(data, data.splits.train), hooks);
    write_checkpoint(out / "checkpoint.cxck", model_checkpoint(*model, meta_for(tc.steps)));
    write_text(out / "effective_config.json", echo.dump(2) + "\n");
  });

  // eval-probe
  EvalArgs probe_args;
  int probe_epochs = 100;
  double probe_lr = 1e-5;
  auto* probe_cmd = app.add_subcommand("eval-probe", "masked linear probing with per-layer selection");
  add_eval_args(probe_cmd, probe_args);
  probe_cmd->add_option("--epochs", probe_epochs, "probe training epochs");
  probe_cmd->add_option("--lr", probe_lr, "probe peak learning rate");
  probe_cmd->callback([&] {
    const auto l = load_eval(probe_args);
    ProbeConfig pc;
    pc.ratios = parse_ratios(probe_args.ratios);
    pc.seeds = parse_seeds(probe_args.seeds);
    pc.epochs = probe_epochs;
    pc.lr = probe_lr;
    JsonlWriter out(probe_args.out);
    auto h = header("probe", probe_args, l);
    h["probe"] = {{"epochs", pc.epochs}, {"lr", pc.lr}, {"batch_size", pc.batch_size}, {"grad_accum", pc.grad_accum}};
    out.write(h);
    const auto rep = run_probe(l.model, make_probe_dataset(l.data), pc);
    for (const auto& c : rep.cells) {
      out.write({{"protocol", "probe"}, {"record", "layer"}, {"ratio", c.ratio}, {"seed", c.seed}, {"layer", c.layer},
                 {"val_auroc", c.val.auroc}, {"test_auroc", c.test.auroc}, {"test_auprc", c.test.auprc}});
    }
    for (const auto& s : rep.selections) {
      out.write({{"protocol", "probe"}, {"record", "selected"}, {"ratio", s.ratio}, {"seed", s.seed},
                 {"layer", s.best_layer}, {"val_auroc", s.val_auroc}, {"test_auroc", s.test_auroc},
                 {"test_auprc", s.test_auprc}});
      std::cout << "ratio " << s.ratio << " seed " << s.seed << ": layer " << s.best_layer << " test AUROC "
                << s.test_auroc << " AUPRC " << s.test_auprc << std::endl;
    }
    for (const auto& n : rep.notices) note(n);
  });

  // eval-inpaint
  EvalArgs inp_args;
  std::string pgm_dir;
  auto* inp_cmd = app.add_subcommand("eval-inpaint", "token inpainting with PSNR/SSIM");
  add_eval_args(inp_cmd, inp_args);
  inp_cmd->add_option("--pgm-dir", pgm_dir, "write reference|corrupted|inpainted triptychs here");
  inp_cmd->callback([&] {
    const auto l = load_eval(inp_args);
    JsonlWriter out(inp_args.out);
    out.write(header("inpaint", inp_args, l));
    const auto idx = test_indices(l.data, inp_args.limit);
    for (double r : parse_ratios(inp_args.ratios)) {
      for (auto seed : parse_seeds(inp_args.seeds)) {
        const auto s = inpaint_eval(l.model, l.data, idx, r, seed);
        out.write({{"protocol", "inpaint"}, {"ratio", r}, {"seed", seed}, {"psnr", s.mean_psnr}, {"ssim", s.mean_ssim},
                   {"blank_psnr", s.blank_psnr}, {"blank_ssim", s.blank_ssim}, {"infinite_psnr", s.infinite_psnr},
                   {"unrestricted_disagreements", s.unrestricted_disagreements}, {"count", s.count}});
        std::cout << "ratio " << r << " seed " << seed << ": PSNR " << s.mean_psnr << " SSIM " << s.mean_ssim
                  << " (blank " << s.blank_psnr << " / " << s.blank_ssim << ")" << std::endl;
        if (s.unrestricted_disagreements > 0) {
          note(std::to_string(s.unrestricted_disagreements) +
               " masked slots where the unrestricted argmax was not an image token");
        }
        if (!pgm_dir.empty() && !idx.empty()) {
          const auto seq = image_prompt(l.data.image_tokens[idx[0]], l.data.vocab);
          const auto rec = corrupt_image(seq, r, derive_seed(seed, idx[0]), l.data.vocab);
          const auto res = inpaint(l.model, seq, rec.masked_positions, l.data.codebook);
          const std::vector<Image> panels{res.reference, res.blank, res.reconstruction};
          write_file(fs::path(pgm_dir) / ("inpaint_r" + std::to_string(static_cast<int>(std::lround(r * 100))) +
                                          "_s" + std::to_string(seed) + ".pgm"),
                     encode_pgm(panels));
        }
      }
    }
  });

  // eval-report
  EvalArgs rep_args;
  auto* rep_cmd = app.add_subcommand("eval-report", "greedy report generation with finding-F1");
  add_eval_args(rep_cmd, rep_args);
  rep_cmd->callback([&] {
    const auto l = load_eval(rep_args);
    JsonlWriter out(rep_args.out);
    out.write(header("report", rep_args, l));
    const auto idx = test_indices(l.data, rep_args.limit);
    for (double r : parse_ratios(rep_args.ratios)) {
      for (auto seed : parse_seeds(rep_args.seeds)) {
        std::vector<std::string> reports;
        const auto s = report_eval(l.model, l.data, idx, r, seed, &reports);
        out.write({{"protocol", "report"}, {"ratio", r}, {"seed", seed}, {"micro_f1", s.micro_f1},
                   {"mean_f1", s.mean_f1}, {"exact_match", s.exact_match}, {"count", s.count},
                   {"example", reports.empty() ? "" : reports.front()}});
        std::cout << "ratio " << r << " seed " << seed << ": finding-F1 " << s.micro_f1 << std::endl;
      }
    }
  });

  // eval-retrieval
  EvalArgs ret_args;
  ret_args.ratios = "0";
  ret_args.seeds = "0";
  int pool = 32, top_k = 8, layer = -1;
  auto* ret_cmd = app.add_subcommand("eval-retrieval", "image<->report recall@k in disjoint pools");
  add_eval_args(ret_cmd, ret_args);
  ret_cmd->add_option("--pool", pool, "pool size (32, 64, 128)");
  ret_cmd->add_option("--k", top_k, "recall cut-off");
  ret_cmd->add_option("--layer", layer, "hidden-state layer (-1: probe-selected layer at ratio 0)");
  ret_cmd->callback([&] {
    const auto l = load_eval(ret_args);
    JsonlWriter out(ret_args.out);
    auto h = header("retrieval", ret_args, l);
    int use_layer = layer;
    if (use_layer < 0) {
      ProbeConfig pc;
      pc.ratios = {0.0};
      pc.seeds = {parse_seeds(ret_args.seeds).front()};
      use_layer = run_probe(l.model, make_probe_dataset(l.data), pc).selections.front().best_layer;
      note("probe-selected layer " + std::to_string(use_layer));
    }
    h["layer"] = use_layer;
    h["pool"] = pool;
    h["k"] = top_k;
    out.write(h);
    const auto idx = test_indices(l.data, ret_args.limit);
    std::vector<std::vector<TokenId>> texts;
    for (std::size_t i : idx) texts.push_back(l.data.text_tokens[i]);
    for (double r : parse_ratios(ret_args.ratios)) {
      for (auto seed : parse_seeds(ret_args.seeds)) {
        std::vector<std::vector<TokenId>> images;
        for (std::size_t i : idx) {
          const auto seq = image_prompt(l.data.image_tokens[i], l.data.vocab);
          const auto rec = corrupt_image(seq, r, derive_seed(seed, i), l.data.vocab);
          const Span p = seq.image_payload();
          images.emplace_back(rec.corrupted_ids.begin() + p.begin, rec.corrupted_ids.begin() + p.end);
        }
        const auto e = embed_pairs(l.model, images, texts, use_layer);
        const auto res = retrieval_recall(e.image, e.text, pool, top_k);
        out.write({{"protocol", "retrieval"}, {"ratio", r}, {"seed", seed}, {"pool", pool}, {"k", top_k},
                   {"layer", use_layer}, {"image_to_text", res.image_to_text}, {"text_to_image", res.text_to_image},
                   {"pools", res.pools}});
        std::cout << "ratio " << r << ": recall@" << top_k << " image->text " << res.image_to_text << " text->image "
                  << res.text_to_image << std::endl;
      }
    }
  });

  // eval-tta
  EvalArgs tta_args;
  tta_args.ratios = "0";
  int tta_k = 5;
  std::string tta_mode = "mask";
  auto* tta_cmd = app.add_subcommand("eval-tta", "test-time augmentation with majority-vote consolidation");
  add_eval_args(tta_cmd, tta_args);
  tta_cmd->add_option("--k", tta_k, "number of disjoint views");
  tta_cmd->add_option("--mode", tta_mode, "mask: each view masks one subset; keep: each view keeps one subset")
      ->check(CLI::IsMember({"mask", "keep"}));
  tta_cmd->callback([&] {
    const auto l = load_eval(tta_args);
    JsonlWriter out(tta_args.out);
    auto h = header("tta", tta_args, l);
    h["k"] = tta_k;
    h["mode"] = tta_mode;
    out.write(h);
    const auto idx = test_indices(l.data, tta_args.limit);
    const auto mode = tta_mode == "mask" ? TtaMode::mask_subset : TtaMode::keep_subset;
    for (auto seed : parse_seeds(tta_args.seeds)) {
      const auto s = tta_eval(l.model, l.data, idx, tta_k, mode, seed);
      out.write({{"protocol", "tta"}, {"seed", seed}, {"k", tta_k}, {"mode", tta_mode},
                 {"consolidated_f1", s.consolidated_micro_f1}, {"view_f1", s.view_micro_f1},
                 {"consolidated_mean_f1", s.consolidated_mean_f1}, {"view_mean_f1", s.view_mean_f1},
                 {"count", s.count}});
      std::cout << "seed " << seed << ": consolidated F1 " << s.consolidated_micro_f1 << " single-view F1 "
                << s.view_micro_f1 << std::endl;
    }
  });

  // sweep-mask-ratio
  std::string sw_ratios = "0.25,0.5,0.75,0.9", sw_init, sw_shards, sw_out, sw_config, sw_seeds = "0";
  std::vector<std::string> sw_set;
  auto* sw_cmd = app.add_subcommand("sweep-mask-ratio", "stage s2 at several mask ratios, compared by probing");
  sw_cmd->add_option("--ratios", sw_ratios, "stage s2 mask ratios");
  sw_cmd->add_option("--init", sw_init, "stage s1 checkpoint")->required();
  sw_cmd->add_option("--shards", sw_shards, "tokenized data directory")->required();
  sw_cmd->add_option("--config", sw_config, "key=value config (steps = per-ratio budget)");
  sw_cmd->add_option("--set", sw_set, "override a config key");
  sw_cmd->add_option("--seeds", sw_seeds, "probe seeds");
  sw_cmd->add_option("--out", sw_out, "output directory")->required();
  sw_cmd->callback([&] {
    const Config cfg = build_config(sw_config, sw_set);
    const auto data = load_prepared(sw_shards);
    const auto ck = read_checkpoint(sw_init);
    const auto base = model_from_checkpoint(ck);
    RunCache cache(fs::path(sw_out) / "runs", note);
    JsonlWriter out(fs::path(sw_out) / "sweep.jsonl");
    out.write({{"record", "header"}, {"protocol", "sweep"}, {"config", cfg.echo()}, {"init", sw_init},
               {"init_metadata", ck.metadata}});
    ProbeConfig pc;
    pc.seeds = parse_seeds(sw_seeds);
    const auto probe_data = make_probe_dataset(data);
    for (const auto& item : split_list(sw_ratios)) {
      const double ratio = std::stod(item);
      RunSpec spec;
      spec.name = "s2_mask" + std::to_string(static_cast<int>(std::lround(ratio * 100)));
      spec.model = base.config();
      spec.train = cfg.train_config(Stage::s2);
      spec.train.mask_ratio = ratio;
      const auto m = cache.run(spec, data, &base, ck.metadata);
      const auto rep = run_probe(m, probe_data, pc);
      double mean = 0.0;
      for (const auto& s : rep.selections) {
        out.write({{"protocol", "sweep"}, {"train_ratio", ratio}, {"ratio", s.ratio}, {"seed", s.seed},
                   {"layer", s.best_layer}, {"test_auroc", s.test_auroc}, {"test_auprc", s.test_auprc}});
        mean += s.test_auroc;
      }
      mean /= static_cast<double>(rep.selections.size());
      std::cout << "mask ratio " << ratio << ": mean probe AUROC " << mean << std::endl;
    }
  });

  // compare-attention
  std::string ca_variants = "causal,bidirectional_image", ca_shards, ca_out, ca_config, ca_seeds = "0";
  std::int64_t ca_s1 = 2000, ca_s2 = 2000;
  std::size_t ca_limit = 100;
  std::vector<std::string> ca_set;
  auto* ca_cmd = app.add_subcommand("compare-attention", "causal vs bidirectional-image attention, both stages");
  ca_cmd->add_option("--variants", ca_variants, "attention variants");
  ca_cmd->add_option("--shards", ca_shards, "tokenized data directory")->required();
  ca_cmd->add_option("--config", ca_config, "key=value config");
  ca_cmd->add_option("--set", ca_set, "override a config key");
  ca_cmd->add_option("--s1-steps", ca_s1, "stage s1 steps");
  ca_cmd->add_option("--s2-steps", ca_s2, "stage s2 steps");
  ca_cmd->add_option("--seeds", ca_seeds, "seeds");
  ca_cmd->add_option("--limit", ca_limit, "report-generation samples");
  ca_cmd->add_option("--out", ca_out, "output directory")->required();
  ca_cmd->callback([&] {
    const Config cfg = build_config(ca_config, ca_set);
    const auto data = load_prepared(ca_shards);
    RunCache cache(fs::path(ca_out) / "runs", note);
    JsonlWriter out(fs::path(ca_out) / "attention.jsonl");
    out.write({{"record", "header"}, {"protocol", "attention"}, {"config", cfg.echo()}, {"s1_steps", ca_s1},
               {"s2_steps", ca_s2}});
    const auto probe_data = make_probe_dataset(data);
    const auto idx = eval_indices(data, ca_limit);
    for (const auto& variant : split_list(ca_variants)) {
      require(variant == "causal" || variant == "bidirectional_image", "unknown attention variant " + variant);
      for (auto seed : parse_seeds(ca_seeds)) {
        RunSpec s1;
        s1.name = variant + "_s1_seed" + std::to_string(seed);
        s1.model = cfg.model_config(data.vocab);
        s1.model.attention = variant == "causal" ? AttentionVariant::causal : AttentionVariant::bidirectional_image;
        s1.model_seed = derive_seed(seed, 0x5eedu);
        s1.train = cfg.train_config(Stage::s1);
        s1.train.steps = ca_s1;
        s1.train.seed = derive_seed(seed, 1u);
        json s1_key;
        const auto m1 = cache.run(s1, data, nullptr, nullptr, &s1_key);
        RunSpec s2 = s1;
        s2.name = variant + "_s1s2_seed" + std::to_string(seed);
        s2.train = cfg.train_config(Stage::s2);
        s2.train.steps = ca_s2;
        s2.train.seed = derive_seed(seed, 2u);
        const auto m2 = cache.run(s2, data, &m1, s1_key);
        ProbeConfig pc;
        pc.seeds = {seed};
        for (const auto& [name, model] : {std::pair<std::string, const Model<float>*>{"s1", &m1}, {"s1s2", &m2}}) {
          const auto rep = run_probe(*model, probe_data, pc);
          for (const auto& s : rep.selections) {
            const auto r = report_eval(*model, data, idx, s.ratio, seed);
            out.write({{"protocol", "attention"}, {"variant", variant}, {"stage", name}, {"ratio", s.ratio},
                       {"seed", seed}, {"test_auroc", s.test_auroc}, {"report_f1", r.micro_f1}});
            std::cout << variant << " " << name << " ratio " << s.ratio << ": AUROC " << s.test_auroc
                      << " report F1 " << r.micro_f1 << std::endl;
          }
        }
      }
    }
  });

  // verify
  bool quick = false;
  std::string scratch = (fs::temp_directory_path() / "cxmx_verify").string();
  auto* ver_cmd = app.add_subcommand("verify", "run the oracle and property suites");
  ver_cmd->add_flag("--quick", quick, "skip the overfit fixture and the pipeline determinism run");
  ver_cmd->add_option("--scratch", scratch, "scratch directory for the determinism run");
  ver_cmd->callback([&] { exit_code = verify(quick, scratch, fs::canonical("/proc/self/exe").string()); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << std::endl;
    return 2;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << std::endl;
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
  return exit_code;
}
