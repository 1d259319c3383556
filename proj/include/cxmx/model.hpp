#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "cxmx/common.hpp"
#include "cxmx/sequence.hpp"
#include "cxmx/vocab.hpp"

namespace cxmx {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;
// Flat parameter/gradient storage. Eigen picks its vectorized reduction split
// from the base address, so the alignment must not depend on the heap state.
template <typename T>
using ParamVector = std::vector<T, Eigen::aligned_allocator<T>>;

enum class AttentionVariant { causal, bidirectional_image };

struct ModelConfig {
  int layers = 4;
  int model_dim = 128;
  int heads = 4;
  double mlp_ratio = 4.0;
  VocabLayout vocab;
  int max_len = 132;
  AttentionVariant attention = AttentionVariant::causal;
  double rope_base = 10000.0;

  int head_dim() const { return model_dim / heads; }
  int mlp_dim() const { return static_cast<int>(std::lround(model_dim * mlp_ratio)); }

  void validate() const {
    require(layers >= 1, "model: layers must be >= 1");
    require(heads >= 1 && model_dim % heads == 0, "model: model_dim must be divisible by heads");
    require(head_dim() % 2 == 0, "model: rotary positions need an even head dimension");
    require(mlp_dim() >= 1, "model: mlp_ratio too small");
    require(max_len >= 2, "model: max_len must be >= 2");
  }
};

// allowed(i, j): position i may attend to position j.
struct AttentionMask {
  int n = 0;
  std::vector<char> allowed;

  bool operator()(int i, int j) const {
    return allowed[static_cast<std::size_t>(i) * n + j] != 0;
  }
};

inline AttentionMask build_attention_mask(int n, Span image_payload, AttentionVariant variant) {
  AttentionMask m;
  m.n = n;
  m.allowed.assign(static_cast<std::size_t>(n) * n, 0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= i; ++j) m.allowed[static_cast<std::size_t>(i) * n + j] = 1;
  }
  if (variant == AttentionVariant::bidirectional_image) {
    for (int i = image_payload.begin; i < image_payload.end; ++i) {
      for (int j = image_payload.begin; j < image_payload.end; ++j) {
        m.allowed[static_cast<std::size_t>(i) * n + j] = 1;
      }
    }
  }
  return m;
}

// The bidirectional block spans the image payload only, not IMG_START/IMG_END.
inline AttentionMask build_attention_mask(const TokenSequence& seq, AttentionVariant variant) {
  return build_attention_mask(seq.size(), seq.image_payload(), variant);
}

struct TensorInfo {
  std::string name;
  int rows = 0;
  int cols = 0;
  bool decay = false;
  std::size_t offset = 0;

  std::size_t size() const { return static_cast<std::size_t>(rows) * cols; }
};

// Tensor order: token embedding, then per layer the twelve block tensors, then
// the final norm and output projection.
class ParameterLayout {
 public:
  static constexpr int kPerLayer = 12;
  enum LayerSlot : int {
    ln1_g, ln1_b, w_qkv, b_qkv, w_o, b_o, ln2_g, ln2_b, w_fc, b_fc, w_proj, b_proj
  };

  explicit ParameterLayout(const ModelConfig& cfg) {
    const int d = cfg.model_dim;
    const int v = cfg.vocab.total();
    const int m = cfg.mlp_dim();
    add("tok_emb", v, d, true);
    for (int l = 0; l < cfg.layers; ++l) {
      const std::string p = "layer" + std::to_string(l) + ".";
      add(p + "ln1.g", 1, d, false);
      add(p + "ln1.b", 1, d, false);
      add(p + "attn.w_qkv", d, 3 * d, true);
      add(p + "attn.b_qkv", 1, 3 * d, false);
      add(p + "attn.w_o", d, d, true);
      add(p + "attn.b_o", 1, d, false);
      add(p + "ln2.g", 1, d, false);
      add(p + "ln2.b", 1, d, false);
      add(p + "mlp.w_fc", d, m, true);
      add(p + "mlp.b_fc", 1, m, false);
      add(p + "mlp.w_proj", m, d, true);
      add(p + "mlp.b_proj", 1, d, false);
    }
    add("lnf.g", 1, d, false);
    add("lnf.b", 1, d, false);
    add("head.w", d, v, true);
    add("head.b", 1, v, false);
  }

  const std::vector<TensorInfo>& tensors() const { return tensors_; }
  std::size_t total() const { return total_; }

  static int tok_emb() { return 0; }
  static int layer(int l, LayerSlot slot) { return 1 + l * kPerLayer + slot; }
  int lnf_g() const { return static_cast<int>(tensors_.size()) - 4; }
  int lnf_b() const { return static_cast<int>(tensors_.size()) - 3; }
  int head_w() const { return static_cast<int>(tensors_.size()) - 2; }
  int head_b() const { return static_cast<int>(tensors_.size()) - 1; }

 private:
  void add(std::string name, int rows, int cols, bool decay) {
    tensors_.push_back({std::move(name), rows, cols, decay, total_});
    total_ += static_cast<std::size_t>(rows) * cols;
  }

  std::vector<TensorInfo> tensors_;
  std::size_t total_ = 0;
};

template <typename T>
struct ForwardOutput {
  RowMat<T> logits;                      // N x vocab
  std::vector<RowMat<T>> hidden_states;  // layers + 1 entries, each N x model_dim
};

template <typename T>
struct LayerActivations {
  RowMat<T> ln1_xhat, ln1_out, qkv, q_rot, k_rot, attn, mid, ln2_xhat, ln2_out, fc, act;
  Eigen::Matrix<T, Eigen::Dynamic, 1> ln1_rstd, ln2_rstd;
  std::vector<RowMat<T>> probs;  // per head, N x N
};

template <typename T>
struct Activations {
  std::vector<TokenId> ids;
  ForwardOutput<T> out;
  std::vector<LayerActivations<T>> layers;
  RowMat<T> lnf_xhat, lnf_out;
  Eigen::Matrix<T, Eigen::Dynamic, 1> lnf_rstd;
};

namespace detail {

template <typename T>
void layer_norm_forward(const RowMat<T>& x, ConstMatMap<T> gain, ConstMatMap<T> bias,
                        RowMat<T>& xhat, Eigen::Matrix<T, Eigen::Dynamic, 1>& rstd, RowMat<T>& y) {
  const auto n = x.rows();
  const auto d = x.cols();
  xhat.resize(n, d);
  rstd.resize(n);
  y.resize(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const T mean = x.row(i).mean();
    const T var = (x.row(i).array() - mean).square().mean();
    const T r = T(1) / std::sqrt(var + T(1e-5));
    rstd(i) = r;
    xhat.row(i) = (x.row(i).array() - mean) * r;
  }
  y = (xhat.array().rowwise() * gain.row(0).array()).rowwise() + bias.row(0).array();
}

// Returns dx; accumulates into the gain/bias gradients.
template <typename T>
RowMat<T> layer_norm_backward(const RowMat<T>& dy, const RowMat<T>& xhat,
                              const Eigen::Matrix<T, Eigen::Dynamic, 1>& rstd, ConstMatMap<T> gain,
                              MatMap<T> dgain, MatMap<T> dbias) {
  dgain.row(0) += (dy.array() * xhat.array()).colwise().sum().matrix();
  dbias.row(0) += dy.colwise().sum();
  RowMat<T> dxhat = (dy.array().rowwise() * gain.row(0).array()).matrix();
  const T inv_d = T(1) / static_cast<T>(dy.cols());
  RowMat<T> dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const T m1 = dxhat.row(i).sum() * inv_d;
    const T m2 = dxhat.row(i).dot(xhat.row(i)) * inv_d;
    dx.row(i) = rstd(i) * (dxhat.row(i).array() - m1 - xhat.row(i).array() * m2).matrix();
  }
  return dx;
}

template <typename T>
constexpr T kGeluC = T(0.7978845608028654);  // sqrt(2/pi)

template <typename T>
RowMat<T> gelu(const RowMat<T>& x) {
  const auto a = x.array();
  return (T(0.5) * a * (T(1) + (kGeluC<T> * (a + T(0.044715) * a.cube())).tanh())).matrix();
}

template <typename T>
RowMat<T> gelu_grad(const RowMat<T>& x) {
  const auto a = x.array();
  const Eigen::Array<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> t =
      (kGeluC<T> * (a + T(0.044715) * a.cube())).tanh();
  return (T(0.5) * (T(1) + t) +
          T(0.5) * a * (T(1) - t.square()) * kGeluC<T> * (T(1) + T(3 * 0.044715) * a.square()))
      .matrix();
}

}  // namespace detail

// Pre-norm decoder-only transformer with rotary positions on the full head
// dimension, GELU MLP, final norm and an untied output projection.
template <typename T>
class Model {
 public:
  Model(ModelConfig config, std::uint64_t seed) : config_(config), layout_(config) {
    config_.validate();
    params_.assign(layout_.total(), T(0));
    init(seed);
    build_rope();
  }

  Model(ModelConfig config, ParamVector<T> params) : config_(config), layout_(config) {
    config_.validate();
    require(params.size() == layout_.total(), "model: parameter count mismatch");
    params_ = std::move(params);
    build_rope();
  }

  template <typename U>
  Model<U> cast() const {
    ParamVector<U> p(params_.begin(), params_.end());
    return Model<U>(config_, std::move(p));
  }

  const ModelConfig& config() const { return config_; }
  const ParameterLayout& layout() const { return layout_; }
  ParamVector<T>& params() { return params_; }
  const ParamVector<T>& params() const { return params_; }

  ConstMatMap<T> tensor(int idx) const {
    const auto& t = layout_.tensors()[static_cast<std::size_t>(idx)];
    return ConstMatMap<T>(params_.data() + t.offset, t.rows, t.cols);
  }
  MatMap<T> tensor(int idx, ParamVector<T>& buffer) const {
    const auto& t = layout_.tensors()[static_cast<std::size_t>(idx)];
    return MatMap<T>(buffer.data() + t.offset, t.rows, t.cols);
  }

  void check_input(std::span<const TokenId> ids, const AttentionMask& mask) const {
    require(!ids.empty(), "forward: empty sequence");
    require(static_cast<int>(ids.size()) <= config_.max_len,
            "forward: sequence length " + std::to_string(ids.size()) + " exceeds max_len " +
                std::to_string(config_.max_len));
    require(mask.n == static_cast<int>(ids.size()), "forward: mask size does not match sequence");
    for (TokenId id : ids) {
      require(config_.vocab.valid(id), "forward: token id " + std::to_string(id) + " outside vocabulary");
    }
  }

  void forward(std::span<const TokenId> ids, const AttentionMask& mask, Activations<T>& acts) const {
    check_input(ids, mask);
    const int n = static_cast<int>(ids.size());
    const int d = config_.model_dim;
    const int hd = config_.head_dim();
    const T scale = T(1) / std::sqrt(static_cast<T>(hd));

    acts.ids.assign(ids.begin(), ids.end());
    acts.layers.resize(static_cast<std::size_t>(config_.layers));
    auto& hidden = acts.out.hidden_states;
    hidden.resize(static_cast<std::size_t>(config_.layers) + 1);

    const auto emb = tensor(ParameterLayout::tok_emb());
    hidden[0].resize(n, d);
    for (int i = 0; i < n; ++i) hidden[0].row(i) = emb.row(ids[static_cast<std::size_t>(i)]);

    RowMat<T> bias_mask = RowMat<T>::Zero(n, n);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        if (!mask(i, j)) bias_mask(i, j) = -std::numeric_limits<T>::infinity();
      }
    }

    for (int l = 0; l < config_.layers; ++l) {
      auto& a = acts.layers[static_cast<std::size_t>(l)];
      const RowMat<T>& x = hidden[static_cast<std::size_t>(l)];
      using S = ParameterLayout;
      detail::layer_norm_forward<T>(x, tensor(S::layer(l, S::ln1_g)), tensor(S::layer(l, S::ln1_b)),
                                    a.ln1_xhat, a.ln1_rstd, a.ln1_out);
      a.qkv.noalias() = a.ln1_out * tensor(S::layer(l, S::w_qkv));
      a.qkv.rowwise() += tensor(S::layer(l, S::b_qkv)).row(0);
      a.q_rot = a.qkv.leftCols(d);
      a.k_rot = a.qkv.middleCols(d, d);
      apply_rope(a.q_rot, false);
      apply_rope(a.k_rot, false);
      a.attn.resize(n, d);
      a.probs.resize(static_cast<std::size_t>(config_.heads));
      for (int h = 0; h < config_.heads; ++h) {
        RowMat<T>& p = a.probs[static_cast<std::size_t>(h)];
        p.noalias() = a.q_rot.middleCols(h * hd, hd) * a.k_rot.middleCols(h * hd, hd).transpose();
        p *= scale;
        p += bias_mask;
        for (int i = 0; i < n; ++i) {
          const T mx = p.row(i).maxCoeff();
          p.row(i) = (p.row(i).array() - mx).exp().matrix();
          p.row(i) /= p.row(i).sum();
        }
        a.attn.middleCols(h * hd, hd).noalias() = p * a.qkv.middleCols(2 * d + h * hd, hd);
      }
      a.mid = x;
      a.mid.noalias() += a.attn * tensor(S::layer(l, S::w_o));
      a.mid.rowwise() += tensor(S::layer(l, S::b_o)).row(0);
      detail::layer_norm_forward<T>(a.mid, tensor(S::layer(l, S::ln2_g)), tensor(S::layer(l, S::ln2_b)),
                                    a.ln2_xhat, a.ln2_rstd, a.ln2_out);
      a.fc.noalias() = a.ln2_out * tensor(S::layer(l, S::w_fc));
      a.fc.rowwise() += tensor(S::layer(l, S::b_fc)).row(0);
      a.act = detail::gelu<T>(a.fc);
      RowMat<T>& y = hidden[static_cast<std::size_t>(l) + 1];
      y = a.mid;
      y.noalias() += a.act * tensor(S::layer(l, S::w_proj));
      y.rowwise() += tensor(S::layer(l, S::b_proj)).row(0);
    }

    detail::layer_norm_forward<T>(hidden.back(), tensor(layout_.lnf_g()), tensor(layout_.lnf_b()),
                                  acts.lnf_xhat, acts.lnf_rstd, acts.lnf_out);
    acts.out.logits.noalias() = acts.lnf_out * tensor(layout_.head_w());
    acts.out.logits.rowwise() += tensor(layout_.head_b()).row(0);
  }

  ForwardOutput<T> forward(std::span<const TokenId> ids, const AttentionMask& mask) const {
    Activations<T> acts;
    forward(ids, mask, acts);
    return std::move(acts.out);
  }

  // Accumulates d(loss)/d(params) into `grad` given d(loss)/d(logits).
  void backward(const Activations<T>& acts, const RowMat<T>& dlogits, ParamVector<T>& grad) const {
    require(grad.size() == params_.size(), "backward: gradient buffer size mismatch");
    const int n = static_cast<int>(acts.ids.size());
    const int d = config_.model_dim;
    const int hd = config_.head_dim();
    const T scale = T(1) / std::sqrt(static_cast<T>(hd));

    tensor(layout_.head_w(), grad).noalias() += acts.lnf_out.transpose() * dlogits;
    tensor(layout_.head_b(), grad).row(0) += dlogits.colwise().sum();
    RowMat<T> df = dlogits * tensor(layout_.head_w()).transpose();
    RowMat<T> dx = detail::layer_norm_backward<T>(df, acts.lnf_xhat, acts.lnf_rstd, tensor(layout_.lnf_g()),
                                                  tensor(layout_.lnf_g(), grad), tensor(layout_.lnf_b(), grad));

    using S = ParameterLayout;
    for (int l = config_.layers - 1; l >= 0; --l) {
      const auto& a = acts.layers[static_cast<std::size_t>(l)];
      // MLP branch
      tensor(S::layer(l, S::w_proj), grad).noalias() += a.act.transpose() * dx;
      tensor(S::layer(l, S::b_proj), grad).row(0) += dx.colwise().sum();
      RowMat<T> dact = dx * tensor(S::layer(l, S::w_proj)).transpose();
      RowMat<T> dfc = (dact.array() * detail::gelu_grad<T>(a.fc).array()).matrix();
      tensor(S::layer(l, S::w_fc), grad).noalias() += a.ln2_out.transpose() * dfc;
      tensor(S::layer(l, S::b_fc), grad).row(0) += dfc.colwise().sum();
      RowMat<T> dln2 = dfc * tensor(S::layer(l, S::w_fc)).transpose();
      RowMat<T> dmid = dx + detail::layer_norm_backward<T>(dln2, a.ln2_xhat, a.ln2_rstd,
                                                           tensor(S::layer(l, S::ln2_g)),
                                                           tensor(S::layer(l, S::ln2_g), grad),
                                                           tensor(S::layer(l, S::ln2_b), grad));

      // attention branch
      tensor(S::layer(l, S::w_o), grad).noalias() += a.attn.transpose() * dmid;
      tensor(S::layer(l, S::b_o), grad).row(0) += dmid.colwise().sum();
      RowMat<T> dattn = dmid * tensor(S::layer(l, S::w_o)).transpose();
      RowMat<T> dq(n, d), dk(n, d), dqkv(n, 3 * d);
      for (int h = 0; h < config_.heads; ++h) {
        const RowMat<T>& p = a.probs[static_cast<std::size_t>(h)];
        const auto d_out = dattn.middleCols(h * hd, hd);
        const auto v = a.qkv.middleCols(2 * d + h * hd, hd);
        RowMat<T> dp = d_out * v.transpose();
        dqkv.middleCols(2 * d + h * hd, hd).noalias() = p.transpose() * d_out;
        Eigen::Matrix<T, Eigen::Dynamic, 1> row_dot = (dp.array() * p.array()).rowwise().sum();
        RowMat<T> ds = (p.array() * (dp.array().colwise() - row_dot.array())).matrix();
        ds *= scale;
        dq.middleCols(h * hd, hd).noalias() = ds * a.k_rot.middleCols(h * hd, hd);
        dk.middleCols(h * hd, hd).noalias() = ds.transpose() * a.q_rot.middleCols(h * hd, hd);
      }
      apply_rope(dq, true);
      apply_rope(dk, true);
      dqkv.leftCols(d) = dq;
      dqkv.middleCols(d, d) = dk;
      tensor(S::layer(l, S::w_qkv), grad).noalias() += a.ln1_out.transpose() * dqkv;
      tensor(S::layer(l, S::b_qkv), grad).row(0) += dqkv.colwise().sum();
      RowMat<T> dln1 = dqkv * tensor(S::layer(l, S::w_qkv)).transpose();
      dx = dmid + detail::layer_norm_backward<T>(dln1, a.ln1_xhat, a.ln1_rstd,
                                                 tensor(S::layer(l, S::ln1_g)),
                                                 tensor(S::layer(l, S::ln1_g), grad),
                                                 tensor(S::layer(l, S::ln1_b), grad));
    }

    auto demb = tensor(ParameterLayout::tok_emb(), grad);
    for (int i = 0; i < n; ++i) demb.row(acts.ids[static_cast<std::size_t>(i)]) += dx.row(i);
  }

 private:
  void init(std::uint64_t seed) {
    Rng rng = make_rng(derive_seed(seed, 0x11u));
    const double base_std = 0.02;
    const double proj_std = 0.02 / std::sqrt(2.0 * config_.layers);
    for (std::size_t t = 0; t < layout_.tensors().size(); ++t) {
      const auto& info = layout_.tensors()[t];
      const bool is_gain = info.name.ends_with(".g");
      const bool is_proj = info.name.ends_with("w_o") || info.name.ends_with("w_proj");
      for (std::size_t i = 0; i < info.size(); ++i) {
        T& p = params_[info.offset + i];
        if (is_gain) {
          p = T(1);
        } else if (info.decay) {
          p = static_cast<T>((is_proj ? proj_std : base_std) * normal01(rng));
        } else {
          p = T(0);
        }
      }
    }
  }

  void build_rope() {
    const int half = config_.head_dim() / 2;
    rope_cos_.resize(config_.max_len, half);
    rope_sin_.resize(config_.max_len, half);
    for (int pos = 0; pos < config_.max_len; ++pos) {
      for (int i = 0; i < half; ++i) {
        const double freq = std::pow(config_.rope_base, -2.0 * i / config_.head_dim());
        rope_cos_(pos, i) = static_cast<T>(std::cos(pos * freq));
        rope_sin_(pos, i) = static_cast<T>(std::sin(pos * freq));
      }
    }
  }

  // Rotates each (2i, 2i+1) pair of every head by pos * freq_i; the inverse
  // rotation maps gradients back.
  void apply_rope(RowMat<T>& m, bool inverse) const {
    const int hd = config_.head_dim();
    const int half = hd / 2;
    for (Eigen::Index pos = 0; pos < m.rows(); ++pos) {
      T* row = m.row(pos).data();
      for (int h = 0; h < config_.heads; ++h) {
        T* head = row + h * hd;
        for (int i = 0; i < half; ++i) {
          const T c = rope_cos_(pos, i);
          const T s = inverse ? -rope_sin_(pos, i) : rope_sin_(pos, i);
          const T x0 = head[2 * i];
          const T x1 = head[2 * i + 1];
          head[2 * i] = x0 * c - x1 * s;
          head[2 * i + 1] = x0 * s + x1 * c;
        }
      }
    }
  }

  ModelConfig config_;
  ParameterLayout layout_;
  ParamVector<T> params_;
  RowMat<T> rope_cos_, rope_sin_;
};

// Mean of hidden_states[layer] over the rows in `span`.
template <typename T>
Eigen::Matrix<T, 1, Eigen::Dynamic> extract_embedding(const ForwardOutput<T>& out, int layer, Span span) {
  require(layer >= 0 && layer < static_cast<int>(out.hidden_states.size()), "extract_embedding: layer out of range");
  const auto& h = out.hidden_states[static_cast<std::size_t>(layer)];
  require(!span.empty() && span.begin >= 0 && span.end <= h.rows(), "extract_embedding: span out of range");
  return h.middleRows(span.begin, span.size()).colwise().mean();
}

}  // namespace cxmx
