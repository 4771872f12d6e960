#include "boxlm/instruct.hpp"

namespace boxlm {

InfillExample build_instruct_example(const PretrainDoc& doc, const PromptRecord& rec,
                                     const Vocab& vocab, const SpecialVocab& sv, int max_ctx) {
  doc.validate();
  auto prompt_ids = vocab.encode_text(rec.prompt);
  auto resp_ids = vocab.encode_text(rec.response);
  int n_fixed = 1 + static_cast<int>(prompt_ids.size()) + 1 + static_cast<int>(resp_ids.size());
  int budget = max_ctx - n_fixed;
  if (budget < 0)
    throw InfillError(rec.doc_id + ": prompt and response alone exceed the context (" +
                      std::to_string(n_fixed) + " > " + std::to_string(max_ctx) + ")");
  int n_doc = static_cast<int>(doc.tokens.size());
  int keep = std::min(n_doc, budget);
  int drop = n_doc - keep;  // oldest tokens go first

  const BBox page{0.0, 0.0, 1.0, 1.0};
  InfillExample ex;
  ex.doc_id = doc.doc_id;
  auto push = [&](int token, const BBox& box, PosKind kind) {
    ex.input.push_back(token);
    ex.boxes.push_back(box);
    ex.kinds.push_back(kind);
  };
  push(sv.bos, page, PosKind::Context);
  for (int i = drop; i < n_doc; ++i)
    push(doc.tokens[static_cast<size_t>(i)], doc.boxes[static_cast<size_t>(i)], PosKind::Context);
  for (int id : prompt_ids) push(id, page, PosKind::Context);
  ex.context_len = ex.size();
  push(sv.start, page, PosKind::Response);
  for (int id : resp_ids) push(id, page, PosKind::Response);

  int t = ex.size();
  ex.pos_ids.resize(static_cast<size_t>(t));
  for (int i = 0; i < t; ++i) ex.pos_ids[static_cast<size_t>(i)] = i;
  ex.targets.assign(static_cast<size_t>(t), -1);
  ex.loss_mask.assign(static_cast<size_t>(t), 0);
  for (int i = ex.context_len; i < t; ++i) {
    ex.targets[static_cast<size_t>(i)] =
        i + 1 < t ? ex.input[static_cast<size_t>(i + 1)] : sv.eos;
    ex.loss_mask[static_cast<size_t>(i)] = 1;
  }
  ex.validate(sv);
  return ex;
}

Chunk build_prompt_chunk(const PretrainDoc& doc, const PromptRecord& rec, const Vocab& vocab,
                         const SpecialVocab& sv, int max_ctx, int n_bins) {
  auto ex = build_instruct_example(doc, rec, vocab, sv, max_ctx);
  Chunk chunk;
  int n = ex.context_len + 1;  // keep the start token, drop the response
  for (int i = 0; i < n; ++i) {
    chunk.tokens.push_back(ex.input[static_cast<size_t>(i)]);
    chunk.bins.push_back(quantize_bbox(ex.boxes[static_cast<size_t>(i)], n_bins));
    chunk.pos_ids.push_back(ex.pos_ids[static_cast<size_t>(i)]);
    chunk.targets.push_back(-1);
    chunk.loss_mask.push_back(0);
  }
  chunk.spans.push_back({0, n, ex.context_len});
  chunk.validate();
  return chunk;
}

std::string decode_generated(const std::vector<int>& ids, const Vocab& vocab,
                             const SpecialVocab& sv) {
  std::vector<int> text_ids;
  for (int id : ids)
    if (id < sv.text_vocab) text_ids.push_back(id);
  return vocab.decode(text_ids);
}

}  // namespace boxlm
