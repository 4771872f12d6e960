#pragma once

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "boxlm/infill.hpp"
#include "boxlm/model.hpp"

namespace boxlm {

enum class Objective { causal, causal_spatial, infill_spatial };

inline std::string objective_name(Objective o) {
  switch (o) {
    case Objective::causal: return "causal";
    case Objective::causal_spatial: return "causal+spatial";
    case Objective::infill_spatial: return "infill+spatial";
  }
  throw std::invalid_argument("bad objective");
}

inline Objective objective_from(const std::string& s) {
  if (s == "causal") return Objective::causal;
  if (s == "causal+spatial") return Objective::causal_spatial;
  if (s == "infill+spatial") return Objective::infill_spatial;
  throw std::invalid_argument("unknown objective: " + s +
                              " (expected causal, causal+spatial or infill+spatial)");
}

struct TrainConfig {
  Objective objective = Objective::infill_spatial;
  double lr = 2e-4;           // pre-training peak rate; fine-tuning uses 1e-4
  int warmup_steps = 100;
  std::string scheduler = "cosine";  // cosine | constant
  double lr_floor = 0.1;      // cosine floor as a fraction of the peak
  double weight_decay = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.96;
  double adam_eps = 1e-5;
  int batch_size = 2;  // chunks per optimizer step, gradients averaged
  int epochs = 1;
  double mask_rate = 0.15;
  uint64_t seed = 0;
  double grad_clip = 1.0;  // global-norm clip; 0 disables
};

inline double lr_at(int64_t step, int64_t total_steps, const TrainConfig& cfg) {
  if (step < cfg.warmup_steps)
    return cfg.lr * static_cast<double>(step + 1) / static_cast<double>(cfg.warmup_steps);
  if (cfg.scheduler == "constant") return cfg.lr;
  if (cfg.scheduler != "cosine")
    throw std::invalid_argument("unknown scheduler: " + cfg.scheduler);
  int64_t span = std::max<int64_t>(1, total_steps - cfg.warmup_steps);
  double prog = std::min(1.0, static_cast<double>(step - cfg.warmup_steps) / static_cast<double>(span));
  double floor = cfg.lr * cfg.lr_floor;
  return floor + 0.5 * (1.0 + std::cos(prog * 3.14159265358979323846)) * (cfg.lr - floor);
}

// Decoupled weight decay: decay is applied directly to the parameter, scaled
// by the learning rate, independent of the adaptive step.
template <class Real>
class AdamW {
 public:
  AdamW(std::vector<ParamRef<Real>> params, const TrainConfig& cfg)
      : params_(std::move(params)),
        beta1_(cfg.beta1),
        beta2_(cfg.beta2),
        eps_(cfg.adam_eps),
        weight_decay_(cfg.weight_decay) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (size_t i = 0; i < params_.size(); ++i) {
      m_[i].assign(params_[i].tensor->value().size(), 0.0);
      v_[i].assign(params_[i].tensor->value().size(), 0.0);
    }
  }

  // grad_scale folds gradient accumulation averaging into the update.
  void step(double lr, double grad_scale, double grad_clip) {
    ++t_;
    double corr1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    double corr2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    double clip_scale = 1.0;
    if (grad_clip > 0.0) {
      double sq = 0.0;
      for (auto& p : params_)
        for (Real g : p.tensor->grad()) {
          double gs = static_cast<double>(g) * grad_scale;
          sq += gs * gs;
        }
      double norm = std::sqrt(sq);
      if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm");
      if (norm > grad_clip) clip_scale = grad_clip / norm;
    }
    for (size_t i = 0; i < params_.size(); ++i) {
      auto& val = params_[i].tensor->value();
      auto& grad = params_[i].tensor->grad();
      bool decay = params_[i].decay;
      for (size_t e = 0; e < val.size(); ++e) {
        double g = static_cast<double>(grad[e]) * grad_scale * clip_scale;
        m_[i][e] = beta1_ * m_[i][e] + (1.0 - beta1_) * g;
        v_[i][e] = beta2_ * v_[i][e] + (1.0 - beta2_) * g * g;
        double update = (m_[i][e] / corr1) / (std::sqrt(v_[i][e] / corr2) + eps_);
        double w = static_cast<double>(val[e]);
        if (decay) w -= lr * weight_decay_ * w;
        val[e] = static_cast<Real>(w - lr * update);
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor->zero_grad();
  }

  int64_t steps_taken() const { return t_; }

 private:
  std::vector<ParamRef<Real>> params_;
  std::vector<std::vector<double>> m_, v_;
  double beta1_, beta2_, eps_, weight_decay_;
  int64_t t_ = 0;
};

// Append-only jsonl metrics; content is fully determined by the run so two
// identical runs produce byte-identical logs.
class MetricsLogger {
 public:
  explicit MetricsLogger(const std::string& path) : out_(path) {
    if (!out_) throw std::runtime_error("cannot write metrics log: " + path);
  }

  void log_train(int64_t step, double loss, double lr) {
    nlohmann::json j{{"split", "train"}, {"step", step}, {"loss", loss}, {"lr", lr}};
    out_ << j.dump() << "\n";
    out_.flush();
  }

  void log_eval(int64_t step, const std::string& split, double loss, double acc, int64_t n) {
    nlohmann::json j{
        {"split", split}, {"step", step}, {"loss", loss}, {"accuracy", acc}, {"positions", n}};
    out_ << j.dump() << "\n";
    out_.flush();
  }

 private:
  std::ofstream out_;
};

// ---- example building ----

// Pre-training examples for one epoch. Infill masking is re-sampled per epoch
// from a stream independent of everything else; causal objectives are
// deterministic per document.
inline std::vector<InfillExample> build_pretrain_examples(const std::vector<PretrainDoc>& docs,
                                                          Objective objective, double mask_rate,
                                                          const SpecialVocab& sv, uint64_t seed,
                                                          int epoch) {
  std::vector<InfillExample> out;
  out.reserve(docs.size());
  for (size_t i = 0; i < docs.size(); ++i) {
    if (objective == Objective::infill_spatial) {
      Rng rng(derive_seed(seed, "mask", (static_cast<uint64_t>(epoch) << 32) | i));
      auto sampled = sample_blocks(static_cast<int>(docs[i].blocks.size()), mask_rate, rng);
      out.push_back(build_infill_example(docs[i], sampled, sv, rng));
    } else {
      out.push_back(build_ar_example(docs[i], sv));
    }
  }
  return out;
}

inline std::vector<Chunk> shuffle_and_pack(std::vector<InfillExample> examples, int max_len,
                                           int n_bins, uint64_t seed, int epoch, int* dropped) {
  Rng rng(derive_seed(seed, "order", static_cast<uint64_t>(epoch)));
  rng.shuffle(examples);
  return pack_chunks(examples, max_len, n_bins, dropped);
}

// ---- training ----

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
  int64_t positions = 0;
};

template <class Real>
EvalResult eval_chunks(DocModel<Real>& model, const std::vector<Chunk>& chunks) {
  NoGradGuard ng;
  double loss_sum = 0.0;
  int64_t correct = 0, total = 0, chunks_used = 0;
  for (const auto& chunk : chunks) {
    auto lg = model.logits(chunk);
    loss_sum += static_cast<double>(cross_entropy(lg, chunk.targets, chunk.loss_mask).scalar());
    ++chunks_used;
    auto pred = argmax_rows(lg);
    for (int i = 0; i < chunk.size(); ++i) {
      if (!chunk.loss_mask[static_cast<size_t>(i)]) continue;
      ++total;
      if (pred[static_cast<size_t>(i)] == chunk.targets[static_cast<size_t>(i)]) ++correct;
    }
  }
  EvalResult r;
  r.positions = total;
  if (chunks_used > 0) r.loss = loss_sum / static_cast<double>(chunks_used);
  if (total > 0) r.accuracy = static_cast<double>(correct) / static_cast<double>(total);
  return r;
}

template <class Real>
class Trainer {
 public:
  Trainer(DocModel<Real>& model, TrainConfig cfg, MetricsLogger* log = nullptr)
      : model_(model), cfg_(cfg), opt_(model.param_refs(), cfg), log_(log) {}

  // Consumes a fixed set of per-epoch chunk lists so the schedule length is
  // known exactly up front. Throws NumericError on a non-finite loss.
  void train(const std::vector<std::vector<Chunk>>& epochs, int log_every = 10) {
    int64_t total_batches = 0;
    for (const auto& ep : epochs)
      total_batches += (static_cast<int64_t>(ep.size()) + cfg_.batch_size - 1) / cfg_.batch_size;
    for (const auto& ep : epochs) {
      size_t i = 0;
      while (i < ep.size()) {
        int in_batch = 0;
        double batch_loss = 0.0;
        opt_.zero_grad();
        while (i < ep.size() && in_batch < cfg_.batch_size) {
          auto loss = infill_chunk_loss(ep[i]);
          double lv = static_cast<double>(loss.scalar());
          if (!std::isfinite(lv))
            throw NumericError("training diverged: non-finite loss at step " +
                               std::to_string(opt_.steps_taken()));
          backward(loss);
          batch_loss += lv;
          ++in_batch;
          ++i;
        }
        double lr = lr_at(opt_.steps_taken(), total_batches, cfg_);
        opt_.step(lr, 1.0 / in_batch, cfg_.grad_clip);
        if (log_ && (opt_.steps_taken() % log_every == 0 || opt_.steps_taken() == total_batches))
          log_->log_train(opt_.steps_taken(), batch_loss / in_batch, lr);
      }
    }
  }

  int64_t steps_taken() const { return opt_.steps_taken(); }

 private:
  Tensor<Real> infill_chunk_loss(const Chunk& chunk) {
    return cross_entropy(model_.logits(chunk), chunk.targets, chunk.loss_mask);
  }

  DocModel<Real>& model_;
  TrainConfig cfg_;
  AdamW<Real> opt_;
  MetricsLogger* log_;
};

// ---- full pre-training pipeline over tokenized documents ----

template <class Real>
struct PretrainResult {
  EvalResult heldout;        // evaluated with examples matching the objective
  EvalResult heldout_plain;  // evaluated with plain next-token examples
  int dropped_examples = 0;
  int64_t steps = 0;
};

// Held-out masking uses a stream derived from eval_seed only, so every model
// trained against the same corpus sees the identical evaluation instances.
inline std::vector<Chunk> build_eval_chunks(const std::vector<PretrainDoc>& docs,
                                            Objective objective, double mask_rate,
                                            const SpecialVocab& sv, uint64_t eval_seed, int max_len,
                                            int n_bins) {
  std::vector<InfillExample> examples;
  examples.reserve(docs.size());
  for (size_t i = 0; i < docs.size(); ++i) {
    if (objective == Objective::infill_spatial) {
      Rng rng(derive_seed(eval_seed, "eval-mask", i));
      auto sampled = sample_blocks(static_cast<int>(docs[i].blocks.size()), mask_rate, rng);
      examples.push_back(build_infill_example(docs[i], sampled, sv, rng));
    } else {
      examples.push_back(build_ar_example(docs[i], sv));
    }
  }
  return pack_chunks(examples, max_len, n_bins);
}

template <class Real>
PretrainResult<Real> pretrain(DocModel<Real>& model, const std::vector<PretrainDoc>& train_docs,
                              const std::vector<PretrainDoc>& heldout_docs, const SpecialVocab& sv,
                              const TrainConfig& cfg, uint64_t eval_seed,
                              MetricsLogger* log = nullptr) {
  PretrainResult<Real> result;
  std::vector<std::vector<Chunk>> epochs;
  for (int e = 0; e < cfg.epochs; ++e) {
    auto examples =
        build_pretrain_examples(train_docs, cfg.objective, cfg.mask_rate, sv, cfg.seed, e);
    int dropped = 0;
    epochs.push_back(shuffle_and_pack(std::move(examples), model.cfg.max_ctx, model.cfg.spatial_bins,
                                      cfg.seed, e, &dropped));
    result.dropped_examples += dropped;
  }
  Trainer<Real> trainer(model, cfg, log);
  trainer.train(epochs);
  result.steps = trainer.steps_taken();
  if (!heldout_docs.empty()) {
    auto matched = build_eval_chunks(heldout_docs, cfg.objective, cfg.mask_rate, sv, eval_seed,
                                     model.cfg.max_ctx, model.cfg.spatial_bins);
    result.heldout = eval_chunks(model, matched);
    auto plain = build_eval_chunks(heldout_docs, Objective::causal, 0.0, sv, eval_seed,
                                   model.cfg.max_ctx, model.cfg.spatial_bins);
    result.heldout_plain = eval_chunks(model, plain);
    if (log) {
      log->log_eval(result.steps, "eval", result.heldout.loss, result.heldout.accuracy,
                    result.heldout.positions);
      log->log_eval(result.steps, "eval_plain", result.heldout_plain.loss,
                    result.heldout_plain.accuracy, result.heldout_plain.positions);
    }
  }
  return result;
}

}  // namespace boxlm
