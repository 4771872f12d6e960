#pragma once

#include <json.hpp>

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "boxlm/attention.hpp"
#include "boxlm/infill.hpp"
#include "boxlm/spatial.hpp"
#include "boxlm/tensor.hpp"

namespace boxlm {

struct ModelConfig {
  int vocab_size = 0;  // includes the six control tokens
  int d_model = 128;
  int n_layers = 4;
  int n_heads = 4;
  int max_ctx = 512;
  int ffn_mult = 4;
  int spatial_bins = 128;
  double lambda_ts = 0.0;
  double lambda_st = 0.0;
  double lambda_ss = 1.0;
  DecoderMode decoder_mode = DecoderMode::causal;
  double init_std = 0.02;

  AttentionConfig attention_config() const {
    return {d_model, n_heads, lambda_ts, lambda_st, lambda_ss, decoder_mode};
  }

  void validate() const {
    if (vocab_size <= 6) throw std::invalid_argument("model config: vocab_size not set");
    if (max_ctx <= 0 || ffn_mult <= 0 || spatial_bins <= 0 || n_layers <= 0)
      throw std::invalid_argument("model config: non-positive dimension");
    attention_config().validate();
  }

  int64_t param_count() const {
    int64_t d = d_model, f = static_cast<int64_t>(ffn_mult) * d_model;
    int64_t per_layer = 5 * d * d + 2 * d            // attention + its layer norm
                        + d * f + f + f * d + d      // feed-forward
                        + 2 * d;                     // feed-forward layer norm
    return static_cast<int64_t>(vocab_size) * d + static_cast<int64_t>(max_ctx) * d +
           4 * static_cast<int64_t>(spatial_bins) * d + 2 * d  // spatial tables + their norm
           + n_layers * per_layer + 2 * d;
  }

  nlohmann::json to_json() const {
    return {{"vocab_size", vocab_size}, {"d_model", d_model},       {"n_layers", n_layers},
            {"n_heads", n_heads},       {"max_ctx", max_ctx},       {"ffn_mult", ffn_mult},
            {"spatial_bins", spatial_bins}, {"lambda_ts", lambda_ts}, {"lambda_st", lambda_st},
            {"lambda_ss", lambda_ss},   {"decoder_mode", decoder_mode_name(decoder_mode)},
            {"init_std", init_std}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.vocab_size = j.at("vocab_size").get<int>();
    c.d_model = j.at("d_model").get<int>();
    c.n_layers = j.at("n_layers").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.max_ctx = j.at("max_ctx").get<int>();
    c.ffn_mult = j.at("ffn_mult").get<int>();
    c.spatial_bins = j.at("spatial_bins").get<int>();
    c.lambda_ts = j.at("lambda_ts").get<double>();
    c.lambda_st = j.at("lambda_st").get<double>();
    c.lambda_ss = j.at("lambda_ss").get<double>();
    c.decoder_mode = decoder_mode_from(j.at("decoder_mode").get<std::string>());
    c.init_std = j.at("init_std").get<double>();
    return c;
  }
};

template <class Real>
struct ParamRef {
  std::string name;
  Tensor<Real>* tensor;
  bool decay;  // weight decay applies to matrices, not to norms or biases
};

template <class Real>
struct DecoderLayer {
  AttentionWeights<Real> attn;
  Tensor<Real> ln1_g, ln1_b, ln2_g, ln2_b;
  Tensor<Real> ffn_w1, ffn_b1, ffn_w2, ffn_b2;
};

// Decoder-only model over packed chunks. The spatial encoding of a sequence is
// computed once per forward pass and fed to every layer; each layer applies its
// own spatial projections. Output logits reuse the input embedding (tied head).
template <class Real>
class DocModel {
 public:
  ModelConfig cfg;

  DocModel(ModelConfig config, uint64_t seed) : cfg(config) {
    cfg.validate();
    Rng rng(derive_seed(seed, "model-init"));
    Real std = static_cast<Real>(cfg.init_std);
    int d = cfg.d_model, f = cfg.ffn_mult * cfg.d_model;
    tok_emb_ = Tensor<Real>::randn({cfg.vocab_size, d}, rng, std, true);
    pos_emb_ = Tensor<Real>::randn({cfg.max_ctx, d}, rng, std, true);
    spatial_ = SpatialEmbedding<Real>(cfg.spatial_bins, d, rng, std);
    layers_.resize(static_cast<size_t>(cfg.n_layers));
    for (auto& l : layers_) {
      l.attn = AttentionWeights<Real>(d, rng, std);
      l.ln1_g = Tensor<Real>::filled({d}, Real(1), true);
      l.ln1_b = Tensor<Real>::zeros({d}, true);
      l.ln2_g = Tensor<Real>::filled({d}, Real(1), true);
      l.ln2_b = Tensor<Real>::zeros({d}, true);
      l.ffn_w1 = Tensor<Real>::randn({d, f}, rng, std, true);
      l.ffn_b1 = Tensor<Real>::zeros({f}, true);
      l.ffn_w2 = Tensor<Real>::randn({f, d}, rng, std, true);
      l.ffn_b2 = Tensor<Real>::zeros({d}, true);
    }
    final_g_ = Tensor<Real>::filled({d}, Real(1), true);
    final_b_ = Tensor<Real>::zeros({d}, true);
  }

  std::vector<ParamRef<Real>> param_refs() {
    std::vector<ParamRef<Real>> refs;
    refs.push_back({"tok_emb", &tok_emb_, true});
    refs.push_back({"pos_emb", &pos_emb_, true});
    refs.push_back({"spatial.x0", &spatial_.table_x0, true});
    refs.push_back({"spatial.y0", &spatial_.table_y0, true});
    refs.push_back({"spatial.x1", &spatial_.table_x1, true});
    refs.push_back({"spatial.y1", &spatial_.table_y1, true});
    refs.push_back({"spatial.ln.g", &spatial_.ln_g, false});
    refs.push_back({"spatial.ln.b", &spatial_.ln_b, false});
    for (size_t i = 0; i < layers_.size(); ++i) {
      auto& l = layers_[i];
      std::string p = "layers." + std::to_string(i) + ".";
      refs.push_back({p + "attn.w_tq", &l.attn.w_tq, true});
      refs.push_back({p + "attn.w_tk", &l.attn.w_tk, true});
      refs.push_back({p + "attn.w_tv", &l.attn.w_tv, true});
      refs.push_back({p + "attn.w_sq", &l.attn.w_sq, true});
      refs.push_back({p + "attn.w_sk", &l.attn.w_sk, true});
      refs.push_back({p + "ln1.g", &l.ln1_g, false});
      refs.push_back({p + "ln1.b", &l.ln1_b, false});
      refs.push_back({p + "ln2.g", &l.ln2_g, false});
      refs.push_back({p + "ln2.b", &l.ln2_b, false});
      refs.push_back({p + "ffn.w1", &l.ffn_w1, true});
      refs.push_back({p + "ffn.b1", &l.ffn_b1, false});
      refs.push_back({p + "ffn.w2", &l.ffn_w2, true});
      refs.push_back({p + "ffn.b2", &l.ffn_b2, false});
    }
    refs.push_back({"final_ln.g", &final_g_, false});
    refs.push_back({"final_ln.b", &final_b_, false});
    return refs;
  }

  int64_t param_count() {
    int64_t n = 0;
    for (auto& r : param_refs()) n += r.tensor->numel();
    return n;
  }

  // Hidden states after the final norm, [T, d]. Attention runs independently
  // inside each span, which is exactly a block-diagonal attention mask over
  // the packed chunk.
  Tensor<Real> forward_hidden(const Chunk& chunk) {
    chunk.validate();
    if (chunk.size() == 0) throw ShapeError("forward on empty chunk");
    for (int p : chunk.pos_ids)
      if (p < 0 || p >= cfg.max_ctx)
        throw ShapeError("position id " + std::to_string(p) + " outside context " +
                         std::to_string(cfg.max_ctx));
    auto s_all = spatial_.encode(chunk.bins);
    auto h = add(embedding_lookup(tok_emb_, chunk.tokens), embedding_lookup(pos_emb_, chunk.pos_ids));
    AttentionConfig acfg = cfg.attention_config();
    std::vector<Tensor<Real>> masks;
    masks.reserve(chunk.spans.size());
    for (const auto& sp : chunk.spans)
      masks.push_back(cfg.decoder_mode == DecoderMode::prefix
                          ? build_mask<Real>(DecoderMode::prefix, sp.len, sp.prefix_len)
                          : build_mask<Real>(DecoderMode::causal, sp.len));
    for (auto& l : layers_) {
      auto x = layer_norm(h, l.ln1_g, l.ln1_b);
      Tensor<Real> attn_out;
      if (chunk.spans.size() == 1) {
        attn_out = attention_layer(x, s_all, l.attn, acfg, masks[0]);
      } else {
        std::vector<Tensor<Real>> parts;
        parts.reserve(chunk.spans.size());
        for (size_t si = 0; si < chunk.spans.size(); ++si) {
          const auto& sp = chunk.spans[si];
          parts.push_back(attention_layer(slice_rows(x, sp.start, sp.len),
                                          slice_rows(s_all, sp.start, sp.len), l.attn, acfg,
                                          masks[si]));
        }
        attn_out = concat_rows(parts);
      }
      h = add(h, attn_out);
      auto y = layer_norm(h, l.ln2_g, l.ln2_b);
      auto ff = add_bias_row(matmul(gelu(add_bias_row(matmul(y, l.ffn_w1), l.ffn_b1)), l.ffn_w2),
                             l.ffn_b2);
      h = add(h, ff);
    }
    return layer_norm(h, final_g_, final_b_);
  }

  Tensor<Real> logits(const Chunk& chunk) { return matmul_nt(forward_hidden(chunk), tok_emb_); }

  // Greedy continuation of a single-example chunk; returns generated ids,
  // stopping (and not emitting) any id in `stop_ids`.
  std::vector<int> generate(const Chunk& prompt, int max_new, const std::vector<int>& stop_ids) {
    NoGradGuard ng;
    if (prompt.spans.size() != 1) throw ShapeError("generate expects a single-example chunk");
    Chunk cur = prompt;
    std::vector<int> out;
    for (int step = 0; step < max_new; ++step) {
      if (cur.size() >= cfg.max_ctx) break;
      auto lg = logits(cur);
      int next = argmax_rows(slice_rows(lg, cur.size() - 1, 1))[0];
      bool stop = false;
      for (int sid : stop_ids) stop = stop || sid == next;
      if (stop) break;
      out.push_back(next);
      cur.tokens.push_back(next);
      cur.bins.push_back({0, 0, cfg.spatial_bins - 1, cfg.spatial_bins - 1});
      cur.pos_ids.push_back(cur.pos_ids.back() + 1);
      cur.targets.push_back(-1);
      cur.loss_mask.push_back(0);
      cur.spans[0].len = cur.size();
    }
    return out;
  }

  SpatialEmbedding<Real>& spatial() { return spatial_; }
  Tensor<Real>& tok_emb() { return tok_emb_; }
  Tensor<Real>& pos_emb() { return pos_emb_; }
  std::vector<DecoderLayer<Real>>& layers() { return layers_; }

 private:
  Tensor<Real> tok_emb_, pos_emb_;
  SpatialEmbedding<Real> spatial_;
  std::vector<DecoderLayer<Real>> layers_;
  Tensor<Real> final_g_, final_b_;
};

// ---- checkpointing ----
// Binary layout: magic, format version, scalar width, config json, then
// name-tagged raw arrays. Loads are strict: width, names and sizes must match.

namespace detail {

inline void write_u32(std::ofstream& out, uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}
inline void write_u64(std::ofstream& out, uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}
inline uint32_t read_u32(std::ifstream& in) {
  uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}
inline uint64_t read_u64(std::ifstream& in) {
  uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}

}  // namespace detail

constexpr uint32_t kCheckpointMagic = 0x4d4c5842;  // "BXLM"
constexpr uint32_t kCheckpointVersion = 1;

template <class Real>
void save_checkpoint(DocModel<Real>& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  detail::write_u32(out, kCheckpointMagic);
  detail::write_u32(out, kCheckpointVersion);
  detail::write_u32(out, static_cast<uint32_t>(sizeof(Real)));
  std::string cfg = model.cfg.to_json().dump();
  detail::write_u64(out, cfg.size());
  out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  auto refs = model.param_refs();
  detail::write_u64(out, refs.size());
  for (auto& r : refs) {
    detail::write_u64(out, r.name.size());
    out.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
    const auto& v = r.tensor->value();
    detail::write_u64(out, v.size());
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(Real)));
  }
  if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

template <class Real>
DocModel<Real> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read checkpoint: " + path);
  if (detail::read_u32(in) != kCheckpointMagic)
    throw std::runtime_error(path + " is not a model checkpoint");
  uint32_t version = detail::read_u32(in);
  if (version != kCheckpointVersion)
    throw std::runtime_error(path + ": unsupported checkpoint version " + std::to_string(version));
  uint32_t width = detail::read_u32(in);
  if (width != sizeof(Real))
    throw std::runtime_error(path + ": checkpoint stores " + std::to_string(width * 8) +
                             "-bit scalars, loader expects " + std::to_string(sizeof(Real) * 8));
  uint64_t cfg_len = detail::read_u64(in);
  std::string cfg_text(cfg_len, '\0');
  in.read(cfg_text.data(), static_cast<std::streamsize>(cfg_len));
  ModelConfig cfg = ModelConfig::from_json(nlohmann::json::parse(cfg_text));
  DocModel<Real> model(cfg, 0);
  auto refs = model.param_refs();
  uint64_t count = detail::read_u64(in);
  if (count != refs.size())
    throw std::runtime_error(path + ": checkpoint holds " + std::to_string(count) +
                             " arrays, model has " + std::to_string(refs.size()));
  for (auto& r : refs) {
    uint64_t name_len = detail::read_u64(in);
    std::string name(name_len, '\0');
    in.read(name.data(), static_cast<std::streamsize>(name_len));
    if (name != r.name)
      throw std::runtime_error(path + ": expected array " + r.name + ", found " + name);
    uint64_t numel = detail::read_u64(in);
    auto& v = r.tensor->value();
    if (numel != v.size())
      throw std::runtime_error(path + ": array " + name + " holds " + std::to_string(numel) +
                               " values, model expects " + std::to_string(v.size()));
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(numel * sizeof(Real)));
  }
  if (!in) throw std::runtime_error(path + ": truncated checkpoint");
  return model;
}

}  // namespace boxlm
