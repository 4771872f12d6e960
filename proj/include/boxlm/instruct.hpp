#pragma once

#include <map>
#include <string>
#include <vector>

#include "boxlm/infill.hpp"
#include "boxlm/metrics.hpp"
#include "boxlm/model.hpp"
#include "boxlm/templates.hpp"

namespace boxlm {

// Fine-tuning example: [BOS] document prompt, then a start token and the
// response, supervised from the start token through an end-of-sequence
// target. The document part is truncated from the front when the whole
// sequence would not fit. Prompt and response tokens ride a full-page box.
InfillExample build_instruct_example(const PretrainDoc& doc, const PromptRecord& rec,
                                     const Vocab& vocab, const SpecialVocab& sv, int max_ctx);

// The same sequence cut right after the start token, ready for decoding;
// its single span marks the prompt as a bidirectional prefix.
Chunk build_prompt_chunk(const PretrainDoc& doc, const PromptRecord& rec, const Vocab& vocab,
                         const SpecialVocab& sv, int max_ctx, int n_bins);

// Text ids back to words; control ids are dropped.
std::string decode_generated(const std::vector<int>& ids, const Vocab& vocab,
                             const SpecialVocab& sv);

// Greedy answer for one prompt. `key` carries the queried key for extraction
// records so downstream scoring can group entities.
template <class Real>
PredictionRecord instruct_predict_one(DocModel<Real>& model, const PretrainDoc& doc,
                                      const PromptRecord& rec, const Vocab& vocab,
                                      const SpecialVocab& sv, int max_new) {
  auto prompt = build_prompt_chunk(doc, rec, vocab, sv, model.cfg.max_ctx, model.cfg.spatial_bins);
  auto ids = model.generate(prompt, max_new, {sv.eos, sv.pad, sv.start, sv.mask});
  PredictionRecord out;
  out.doc_id = rec.doc_id;
  out.task = task_name(rec.task);
  if (rec.task == Task::kie) out.key = rec.slot;
  out.pred = decode_generated(ids, vocab, sv);
  out.gold = rec.response;
  return out;
}

template <class Real>
std::vector<PredictionRecord> instruct_predict(DocModel<Real>& model,
                                               const std::map<std::string, PretrainDoc>& docs,
                                               const std::vector<PromptRecord>& records,
                                               const Vocab& vocab, const SpecialVocab& sv,
                                               int max_new) {
  std::vector<PredictionRecord> out;
  out.reserve(records.size());
  for (const auto& rec : records) {
    auto it = docs.find(rec.doc_id);
    if (it == docs.end()) throw InfillError("prompt references unknown document " + rec.doc_id);
    out.push_back(instruct_predict_one(model, it->second, rec, vocab, sv, max_new));
  }
  return out;
}

}  // namespace boxlm
