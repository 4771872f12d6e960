#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "boxlm/rng.hpp"
#include "boxlm/tensor.hpp"

namespace boxlm {

enum class DecoderMode { causal, prefix };

inline std::string decoder_mode_name(DecoderMode m) {
  return m == DecoderMode::causal ? "causal" : "prefix";
}

inline DecoderMode decoder_mode_from(const std::string& s) {
  if (s == "causal") return DecoderMode::causal;
  if (s == "prefix") return DecoderMode::prefix;
  throw std::invalid_argument("unknown decoder mode: " + s);
}

// Gains on the three cross pairings between text and spatial streams.
// (0, 0, 0) reduces attention to plain text-to-text scores.
struct AttentionConfig {
  int d_model = 0;
  int n_heads = 0;
  double lambda_ts = 0.0;  // text query  x spatial key
  double lambda_st = 0.0;  // spatial query x text key
  double lambda_ss = 1.0;  // spatial query x spatial key
  DecoderMode decoder_mode = DecoderMode::causal;

  int head_dim() const { return d_model / n_heads; }

  void validate() const {
    if (d_model <= 0 || n_heads <= 0)
      throw std::invalid_argument("attention config: d_model and n_heads must be positive");
    if (d_model % n_heads != 0)
      throw std::invalid_argument("attention config: d_model " + std::to_string(d_model) +
                                  " not divisible by n_heads " + std::to_string(n_heads));
  }
};

// The five per-layer projections. Text carries a value stream; the spatial
// stream only modulates scores, so it has no value projection, and heads are
// re-concatenated without an output projection.
template <class Real>
struct AttentionWeights {
  Tensor<Real> w_tq, w_tk, w_tv;  // text query / key / value, each [d, d]
  Tensor<Real> w_sq, w_sk;        // spatial query / key, each [d, d]

  AttentionWeights() = default;
  AttentionWeights(int d, Rng& rng, Real stddev) {
    w_tq = Tensor<Real>::randn({d, d}, rng, stddev, true);
    w_tk = Tensor<Real>::randn({d, d}, rng, stddev, true);
    w_tv = Tensor<Real>::randn({d, d}, rng, stddev, true);
    w_sq = Tensor<Real>::randn({d, d}, rng, stddev, true);
    w_sk = Tensor<Real>::randn({d, d}, rng, stddev, true);
  }

  std::vector<Tensor<Real>*> params() { return {&w_tq, &w_tk, &w_tv, &w_sq, &w_sk}; }
};

// Additive attention mask, 0 where allowed and kMaskNegInf where blocked.
// causal: row i attends to j <= i.
// prefix: rows i < prefix_len attend bidirectionally within the prefix (j < prefix_len);
//         rows i >= prefix_len attend causally (j <= i).
template <class Real>
Tensor<Real> build_mask(DecoderMode mode, int t, int prefix_len = -1) {
  if (t < 0) throw ShapeError("build_mask: negative length");
  if (mode == DecoderMode::prefix) {
    if (prefix_len < 0)
      throw std::invalid_argument("build_mask: prefix mode requires prefix_len");
    if (prefix_len > t)
      throw std::invalid_argument("build_mask: prefix_len " + std::to_string(prefix_len) +
                                  " exceeds length " + std::to_string(t));
  }
  auto mask = Tensor<Real>::filled({t, t}, Real(kMaskNegInf));
  auto& mv = mask.value();
  for (int i = 0; i < t; ++i) {
    int limit = (mode == DecoderMode::prefix && i < prefix_len) ? prefix_len : i + 1;
    Real* row = mv.data() + static_cast<size_t>(i) * t;
    for (int j = 0; j < limit; ++j) row[j] = Real(0);
  }
  return mask;
}

namespace detail {

// Per-head gated score matrices. Gains of exactly zero skip their term, so a
// disabled pairing contributes neither compute nor rounding.
template <class Real>
std::vector<Tensor<Real>> attention_score_heads(const Tensor<Real>& h, const Tensor<Real>& s,
                                                const AttentionWeights<Real>& w,
                                                const AttentionConfig& cfg) {
  cfg.validate();
  require_matrix(h, "attention");
  require_matrix(s, "attention");
  if (h.dim(1) != cfg.d_model)
    throw ShapeError("attention: hidden width " + shape_str(h.shape()) + " does not match d_model " +
                     std::to_string(cfg.d_model));
  require_same_shape(h, s, "attention(text, spatial)");

  auto qt = matmul(h, w.w_tq);
  auto kt = matmul(h, w.w_tk);
  bool need_s = cfg.lambda_ts != 0.0 || cfg.lambda_st != 0.0 || cfg.lambda_ss != 0.0;
  Tensor<Real> qs, ks;
  if (need_s) {
    if (cfg.lambda_st != 0.0 || cfg.lambda_ss != 0.0) qs = matmul(s, w.w_sq);
    if (cfg.lambda_ts != 0.0 || cfg.lambda_ss != 0.0) ks = matmul(s, w.w_sk);
  }

  int dh = cfg.head_dim();
  std::vector<Tensor<Real>> heads;
  heads.reserve(static_cast<size_t>(cfg.n_heads));
  for (int hh = 0; hh < cfg.n_heads; ++hh) {
    int c0 = hh * dh;
    auto qt_h = slice_cols(qt, c0, dh);
    auto kt_h = slice_cols(kt, c0, dh);
    auto a = matmul_nt(qt_h, kt_h);
    if (cfg.lambda_ts != 0.0)
      a = add(a, scale(matmul_nt(qt_h, slice_cols(ks, c0, dh)), Real(cfg.lambda_ts)));
    if (cfg.lambda_st != 0.0)
      a = add(a, scale(matmul_nt(slice_cols(qs, c0, dh), kt_h), Real(cfg.lambda_st)));
    if (cfg.lambda_ss != 0.0)
      a = add(a, scale(matmul_nt(slice_cols(qs, c0, dh), slice_cols(ks, c0, dh)),
                       Real(cfg.lambda_ss)));
    heads.push_back(a);
  }
  return heads;
}

}  // namespace detail

// Raw (unscaled, unmasked) gated scores for every head, stacked [n_heads, T, T].
template <class Real>
Tensor<Real> attention_scores(const Tensor<Real>& h, const Tensor<Real>& s,
                              const AttentionWeights<Real>& w, const AttentionConfig& cfg) {
  return stack(detail::attention_score_heads(h, s, w, cfg));
}

// Full attention block: per head softmax((scores) / sqrt(head_dim) + mask) * Vt,
// heads concatenated back to [T, d]. No output projection by design.
template <class Real>
Tensor<Real> attention_layer(const Tensor<Real>& h, const Tensor<Real>& s,
                             const AttentionWeights<Real>& w, const AttentionConfig& cfg,
                             const Tensor<Real>& mask) {
  auto heads = detail::attention_score_heads(h, s, w, cfg);
  if (mask.ndim() != 2 || mask.dim(0) != h.dim(0) || mask.dim(1) != h.dim(0))
    throw ShapeError("attention_layer: mask " + shape_str(mask.shape()) + " does not match length " +
                     std::to_string(h.dim(0)));
  auto vt = matmul(h, w.w_tv);
  int dh = cfg.head_dim();
  Real inv_sqrt = Real(1) / std::sqrt(static_cast<Real>(dh));
  std::vector<Tensor<Real>> ctx;
  ctx.reserve(heads.size());
  for (size_t hh = 0; hh < heads.size(); ++hh) {
    auto p = softmax_rows(scale(heads[hh], inv_sqrt), mask);
    ctx.push_back(matmul(p, slice_cols(vt, static_cast<int>(hh) * dh, dh)));
  }
  return concat_cols(ctx);
}

}  // namespace boxlm
