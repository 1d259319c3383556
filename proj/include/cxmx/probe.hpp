#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "cxmx/common.hpp"
#include "cxmx/metrics.hpp"
#include "cxmx/model.hpp"
#include "cxmx/sequence.hpp"
#include "cxmx/synthetic.hpp"
#include "cxmx/training.hpp"

namespace cxmx {

using FeatureMatrix = RowMat<double>;
// Entries are 1, 0, or -1 (unknown; excluded from loss and metrics).
using LabelMatrix = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ProbeConfig {
  int label_count = kLabelCount;
  int epochs = 100;
  int batch_size = 8;
  int grad_accum = 8;
  double lr = 1e-5;
  std::vector<double> ratios = {0.0, 0.2, 0.4, 0.6, 0.8};
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  bool standardize = true;

  void validate() const {
    require(label_count >= 1, "probe: label_count must be >= 1");
    require(epochs >= 1 && batch_size >= 1 && grad_accum >= 1, "probe: epochs/batch/accum must be >= 1");
    require(!seeds.empty(), "probe: seeds must be non-empty");
    for (double r : ratios) require(r >= 0.0 && r < 1.0, "probe: ratios must lie in [0,1)");
  }
};

inline LabelMatrix labels_matrix(std::span<const std::uint16_t> bits, int label_count = kLabelCount) {
  LabelMatrix y(static_cast<Eigen::Index>(bits.size()), label_count);
  for (std::size_t i = 0; i < bits.size(); ++i) {
    for (int l = 0; l < label_count; ++l) y(static_cast<Eigen::Index>(i), l) = label_bit(bits[i], l) ? 1 : 0;
  }
  return y;
}

// One affine map per label, sharing the input features.
struct LinearProbes {
  RowMat<double> weight;  // features x labels
  Eigen::RowVectorXd bias;
  Eigen::RowVectorXd mean, scale;  // input standardisation

  RowMat<double> scores(const FeatureMatrix& x) const {
    RowMat<double> z = ((x.rowwise() - mean).array().rowwise() / scale.array()).matrix();
    RowMat<double> s = z * weight;
    s.rowwise() += bias;
    return s;
  }
};

struct ProbeTrainStats {
  double final_loss = 0.0;
  int steps = 0;
};

// Masked binary cross-entropy: entries labelled -1 contribute nothing.
inline double masked_bce(const RowMat<double>& logits, const LabelMatrix& y, RowMat<double>* dlogits) {
  double loss = 0.0;
  std::size_t valid = 0;
  if (dlogits) dlogits->setZero(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    for (Eigen::Index l = 0; l < logits.cols(); ++l) {
      if (y(i, l) < 0) continue;
      ++valid;
      const double z = logits(i, l);
      loss += std::max(z, 0.0) - z * y(i, l) + std::log1p(std::exp(-std::abs(z)));
      if (dlogits) (*dlogits)(i, l) = 1.0 / (1.0 + std::exp(-z)) - y(i, l);
    }
  }
  if (valid == 0) return 0.0;
  if (dlogits) *dlogits /= static_cast<double>(valid);
  return loss / static_cast<double>(valid);
}

// AdamW without weight decay, cosine-decayed lr, batch_size * grad_accum
// examples per optimizer step, reshuffled every epoch.
inline LinearProbes train_linear_probes(const FeatureMatrix& x, const LabelMatrix& y, const ProbeConfig& cfg,
                                        std::uint64_t seed, ProbeTrainStats* stats = nullptr) {
  require(x.rows() == y.rows() && x.rows() > 0, "probe: features/labels mismatch");
  require(y.cols() == cfg.label_count, "probe: label column count mismatch");
  const auto n = static_cast<std::size_t>(x.rows());
  const auto d = x.cols();
  LinearProbes p;
  p.mean = cfg.standardize ? Eigen::RowVectorXd(x.colwise().mean()) : Eigen::RowVectorXd::Zero(d);
  p.scale = Eigen::RowVectorXd::Ones(d);
  if (cfg.standardize) {
    for (Eigen::Index c = 0; c < d; ++c) {
      const double var = (x.col(c).array() - p.mean(c)).square().mean();
      p.scale(c) = var > 1e-12 ? std::sqrt(var) : 1.0;
    }
  }
  const FeatureMatrix z = ((x.rowwise() - p.mean).array().rowwise() / p.scale.array()).matrix();
  p.weight = RowMat<double>::Zero(d, cfg.label_count);
  p.bias = Eigen::RowVectorXd::Zero(cfg.label_count);

  const std::size_t per_step = static_cast<std::size_t>(cfg.batch_size) * cfg.grad_accum;
  const std::size_t steps_per_epoch = (n + per_step - 1) / per_step;
  const auto total_steps = static_cast<std::int64_t>(steps_per_epoch * static_cast<std::size_t>(cfg.epochs));
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  RowMat<double> mw = RowMat<double>::Zero(d, cfg.label_count), vw = mw;
  Eigen::RowVectorXd mb = Eigen::RowVectorXd::Zero(cfg.label_count), vb = mb;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_rng(derive_seed(seed, 0x9b0eu));
  std::int64_t t = 0;
  double last_loss = 0.0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    cxmx::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < n; start += per_step) {
      const std::size_t count = std::min(per_step, n - start);
      FeatureMatrix xb(static_cast<Eigen::Index>(count), d);
      LabelMatrix yb(static_cast<Eigen::Index>(count), cfg.label_count);
      for (std::size_t i = 0; i < count; ++i) {
        xb.row(static_cast<Eigen::Index>(i)) = z.row(static_cast<Eigen::Index>(order[start + i]));
        yb.row(static_cast<Eigen::Index>(i)) = y.row(static_cast<Eigen::Index>(order[start + i]));
      }
      RowMat<double> logits = xb * p.weight;
      logits.rowwise() += p.bias;
      RowMat<double> dl;
      last_loss = masked_bce(logits, yb, &dl);
      const RowMat<double> gw = xb.transpose() * dl;
      const Eigen::RowVectorXd gb = dl.colwise().sum();
      ++t;
      const double lr = cosine_lr(t - 1, total_steps, cfg.lr);
      const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t));
      const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t));
      mw = b1 * mw + (1 - b1) * gw;
      vw = b2 * vw + (1 - b2) * gw.cwiseProduct(gw);
      mb = b1 * mb + (1 - b1) * gb;
      vb = b2 * vb + (1 - b2) * gb.cwiseProduct(gb);
      p.weight.array() -= (lr / bc1) * mw.array() / ((vw.array() / bc2).sqrt() + eps);
      p.bias.array() -= (lr / bc1) * mb.array() / ((vb.array() / bc2).sqrt() + eps);
    }
  }
  if (stats) {
    stats->final_loss = last_loss;
    stats->steps = static_cast<int>(t);
  }
  return p;
}

struct MacroMetrics {
  double auroc = 0.0;
  double auprc = 0.0;
  std::vector<int> used_labels;     // labels with both classes present
  std::vector<int> dropped_labels;  // skipped for lack of a positive or negative
};

// Macro average over labels that have at least one positive and one negative
// among their known (non -1) entries.
inline MacroMetrics macro_metrics(const RowMat<double>& scores, const LabelMatrix& y) {
  MacroMetrics m;
  double roc = 0.0, prc = 0.0;
  for (Eigen::Index l = 0; l < y.cols(); ++l) {
    std::vector<double> s;
    std::vector<int> lab;
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      if (y(i, l) < 0) continue;
      s.push_back(scores(i, l));
      lab.push_back(y(i, l));
    }
    const auto pos = std::count(lab.begin(), lab.end(), 1);
    if (pos == 0 || pos == static_cast<std::ptrdiff_t>(lab.size())) {
      m.dropped_labels.push_back(static_cast<int>(l));
      continue;
    }
    roc += auroc(s, lab);
    prc += auprc(s, lab);
    m.used_labels.push_back(static_cast<int>(l));
  }
  if (!m.used_labels.empty()) {
    m.auroc = roc / static_cast<double>(m.used_labels.size());
    m.auprc = prc / static_cast<double>(m.used_labels.size());
  }
  return m;
}

// Picks the layer with the highest validation AUROC (ties: shallowest). Only
// validation numbers are visible here.
inline int select_best_layer(std::span<const double> validation_auroc) {
  require(!validation_auroc.empty(), "select_best_layer: no layers");
  return static_cast<int>(std::max_element(validation_auroc.begin(), validation_auroc.end()) -
                          validation_auroc.begin());
}

// Mean-pooled image-payload hidden states for every layer, after masking
// floor(ratio * payload) image tokens per sample.
template <typename T>
std::vector<FeatureMatrix> embed_images(const Model<T>& model, std::span<const std::vector<TokenId>> images,
                                        double ratio, std::uint64_t seed) {
  const auto& cfg = model.config();
  std::vector<FeatureMatrix> out(static_cast<std::size_t>(cfg.layers) + 1,
                                 FeatureMatrix(static_cast<Eigen::Index>(images.size()), cfg.model_dim));
  Activations<T> acts;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto seq = assemble(images[i], {}, true, static_cast<int>(images[i].size()) + 3, cfg.vocab);
    const auto rec = corrupt_image(seq, ratio, derive_seed(seed, i), cfg.vocab);
    model.forward(rec.corrupted_ids, build_attention_mask(seq, cfg.attention), acts);
    for (int l = 0; l <= cfg.layers; ++l) {
      out[static_cast<std::size_t>(l)].row(static_cast<Eigen::Index>(i)) =
          extract_embedding(acts.out, l, seq.image_payload()).template cast<double>();
    }
  }
  return out;
}

struct ProbeCell {
  double ratio = 0.0;
  std::uint64_t seed = 0;
  int layer = 0;
  MacroMetrics val;
  MacroMetrics test;
};

struct ProbeSelection {
  double ratio = 0.0;
  std::uint64_t seed = 0;
  int best_layer = 0;
  double val_auroc = 0.0;
  double test_auroc = 0.0;
  double test_auprc = 0.0;
};

struct ProbeReport {
  std::vector<ProbeCell> cells;
  std::vector<ProbeSelection> selections;
  std::vector<std::string> notices;

  // Mean test AUROC at the selected layer over seeds, for one ratio.
  double mean_test_auroc(double ratio) const {
    double s = 0.0;
    int n = 0;
    for (const auto& sel : selections) {
      if (std::abs(sel.ratio - ratio) < 1e-12) {
        s += sel.test_auroc;
        ++n;
      }
    }
    return n ? s / n : 0.0;
  }
};

struct ProbeSplit {
  std::vector<FeatureMatrix> features;  // per layer
  LabelMatrix labels;
};

// Probe every layer on precomputed features; pick the layer on validation.
inline void probe_layers(const ProbeSplit& train, const ProbeSplit& val, const ProbeSplit& test,
                         const ProbeConfig& cfg, double ratio, std::uint64_t seed, ProbeReport& report) {
  const std::size_t layers = train.features.size();
  std::vector<double> val_auroc;
  std::vector<ProbeCell> cells;
  for (std::size_t l = 0; l < layers; ++l) {
    const auto probes = train_linear_probes(train.features[l], train.labels, cfg, derive_seed(seed, l));
    ProbeCell cell;
    cell.ratio = ratio;
    cell.seed = seed;
    cell.layer = static_cast<int>(l);
    cell.val = macro_metrics(probes.scores(val.features[l]), val.labels);
    cell.test = macro_metrics(probes.scores(test.features[l]), test.labels);
    val_auroc.push_back(cell.val.auroc);
    cells.push_back(cell);
  }
  for (int dropped : cells.front().test.dropped_labels) {
    report.notices.push_back("ratio " + std::to_string(ratio) + ": label " + std::to_string(dropped) +
                             " has a single class in the test split and is excluded from macro averages");
  }
  const int best = select_best_layer(val_auroc);
  ProbeSelection sel;
  sel.ratio = ratio;
  sel.seed = seed;
  sel.best_layer = best;
  sel.val_auroc = cells[static_cast<std::size_t>(best)].val.auroc;
  sel.test_auroc = cells[static_cast<std::size_t>(best)].test.auroc;
  sel.test_auprc = cells[static_cast<std::size_t>(best)].test.auprc;
  report.cells.insert(report.cells.end(), cells.begin(), cells.end());
  report.selections.push_back(sel);
}

struct ProbeDataset {
  std::vector<std::vector<TokenId>> train_images, val_images, test_images;
  LabelMatrix train_labels, val_labels, test_labels;
};

template <typename T>
ProbeReport run_probe(const Model<T>& model, const ProbeDataset& data, const ProbeConfig& cfg) {
  cfg.validate();
  ProbeReport report;
  for (std::size_t ri = 0; ri < cfg.ratios.size(); ++ri) {
    const double ratio = cfg.ratios[ri];
    for (std::uint64_t seed : cfg.seeds) {
      const std::uint64_t s = derive_seed(seed, ri);
      ProbeSplit train{embed_images(model, data.train_images, ratio, derive_seed(s, 1)), data.train_labels};
      ProbeSplit val{embed_images(model, data.val_images, ratio, derive_seed(s, 2)), data.val_labels};
      ProbeSplit test{embed_images(model, data.test_images, ratio, derive_seed(s, 3)), data.test_labels};
      probe_layers(train, val, test, cfg, ratio, seed, report);
    }
  }
  return report;
}

}  // namespace cxmx
