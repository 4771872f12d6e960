#include "boxlm/infill.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

using nlohmann::json;

namespace boxlm {

void PretrainDoc::validate() const {
  if (tokens.size() != boxes.size())
    throw InfillError(doc_id + ": " + std::to_string(tokens.size()) + " tokens vs " +
                      std::to_string(boxes.size()) + " boxes");
  if (tokens.empty()) throw InfillError(doc_id + ": empty document");
  int cursor = 0;
  for (const auto& b : blocks) {
    if (b.start != cursor || b.end <= b.start)
      throw InfillError(doc_id + ": blocks do not partition the token stream");
    cursor = b.end;
  }
  if (cursor != static_cast<int>(tokens.size()))
    throw InfillError(doc_id + ": blocks cover " + std::to_string(cursor) + " of " +
                      std::to_string(tokens.size()) + " tokens");
}

PretrainDoc to_pretrain_doc(const TokenizedDoc& doc, const Vocab& vocab) {
  PretrainDoc pd;
  pd.doc_id = doc.doc_id;
  pd.tokens.reserve(doc.words.size());
  pd.boxes.reserve(doc.words.size());
  for (const auto& w : doc.words) {
    pd.tokens.push_back(vocab.id(w.text));
    pd.boxes.push_back(w.box);
  }
  for (const auto& b : doc.blocks) pd.blocks.push_back({b.start, b.end, b.box});
  pd.validate();
  return pd;
}

void InfillExample::validate(const SpecialVocab& sv) const {
  size_t n = input.size();
  if (boxes.size() != n || pos_ids.size() != n || targets.size() != n || loss_mask.size() != n ||
      kinds.size() != n)
    throw InfillError(doc_id + ": example arrays disagree in length");
  int n_mask_slots = 0, n_seg_starts = 0;
  for (size_t i = 0; i < n; ++i) {
    if (kinds[i] == PosKind::MaskSlot) {
      ++n_mask_slots;
      if (input[i] != sv.mask) throw InfillError(doc_id + ": mask slot without mask token");
    }
    if (kinds[i] == PosKind::SegStart) {
      ++n_seg_starts;
      if (input[i] != sv.start) throw InfillError(doc_id + ": segment start without start token");
    }
    bool supervised = kinds[i] == PosKind::SegStart || kinds[i] == PosKind::SegToken ||
                      kinds[i] == PosKind::Response;
    if (static_cast<bool>(loss_mask[i]) != supervised)
      throw InfillError(doc_id + ": loss mask must cover exactly the generated positions");
    if (loss_mask[i] && (targets[i] < 0))
      throw InfillError(doc_id + ": supervised position without target");
  }
  if (n_mask_slots != n_masked || n_seg_starts != n_masked ||
      static_cast<int>(segments.size()) != n_masked)
    throw InfillError(doc_id + ": mask slots, segment starts and segment records must agree");
  for (const auto& seg : segments) {
    if (seg.input_start < context_len || seg.input_start + seg.n_tokens >= static_cast<int>(n))
      throw InfillError(doc_id + ": segment outside the appended region");
    int last = seg.input_start + seg.n_tokens;
    if (targets[static_cast<size_t>(last)] != sv.end)
      throw InfillError(doc_id + ": segment does not terminate in the end token");
  }
}

std::vector<int> sample_blocks(int n_blocks, double mask_rate, Rng& rng) {
  if (n_blocks <= 0) throw InfillError("cannot sample blocks from an empty partition");
  if (mask_rate < 0.0 || mask_rate > 1.0)
    throw InfillError("mask rate " + std::to_string(mask_rate) + " outside [0,1]");
  if (mask_rate == 0.0) return {};
  int m = std::max(1, static_cast<int>(std::lround(mask_rate * n_blocks)));
  m = std::min(m, n_blocks);
  return rng.sample_without_replacement(n_blocks, m);
}

InfillExample build_ar_example(const PretrainDoc& doc, const SpecialVocab&) {
  doc.validate();
  InfillExample ex;
  ex.doc_id = doc.doc_id;
  int t = static_cast<int>(doc.tokens.size());
  ex.input = doc.tokens;
  ex.boxes = doc.boxes;
  ex.pos_ids.resize(static_cast<size_t>(t));
  for (int i = 0; i < t; ++i) ex.pos_ids[static_cast<size_t>(i)] = i;
  ex.targets.assign(static_cast<size_t>(t), -1);
  ex.loss_mask.assign(static_cast<size_t>(t), 0);
  for (int i = 0; i + 1 < t; ++i) {
    ex.targets[static_cast<size_t>(i)] = doc.tokens[static_cast<size_t>(i + 1)];
    ex.loss_mask[static_cast<size_t>(i)] = 1;
  }
  ex.kinds.assign(static_cast<size_t>(t), PosKind::Context);
  ex.context_len = 0;  // no bidirectional prefix: every position is generated
  ex.n_masked = 0;
  return ex;
}

InfillExample build_infill_example(const PretrainDoc& doc, const std::vector<int>& sampled,
                                   const SpecialVocab& sv, Rng& rng) {
  doc.validate();
  if (sampled.empty()) return build_ar_example(doc, sv);
  int n_blocks = static_cast<int>(doc.blocks.size());
  std::vector<uint8_t> is_masked(static_cast<size_t>(n_blocks), 0);
  for (size_t i = 0; i < sampled.size(); ++i) {
    int b = sampled[i];
    if (b < 0 || b >= n_blocks) throw InfillError(doc.doc_id + ": sampled block out of range");
    if (i > 0 && sampled[i] <= sampled[i - 1])
      throw InfillError(doc.doc_id + ": sampled blocks must be sorted and distinct");
    is_masked[static_cast<size_t>(b)] = 1;
  }

  InfillExample ex;
  ex.doc_id = doc.doc_id;
  ex.n_masked = static_cast<int>(sampled.size());

  // Visible stream: unmasked tokens verbatim, one mask token per masked block.
  std::vector<int> mask_pos_of_block(static_cast<size_t>(n_blocks), -1);
  for (int b = 0; b < n_blocks; ++b) {
    const auto& span = doc.blocks[static_cast<size_t>(b)];
    if (is_masked[static_cast<size_t>(b)]) {
      mask_pos_of_block[static_cast<size_t>(b)] = static_cast<int>(ex.input.size());
      ex.input.push_back(sv.mask);
      ex.boxes.push_back(span.box);  // the mask token carries the whole block's box
      ex.kinds.push_back(PosKind::MaskSlot);
    } else {
      for (int i = span.start; i < span.end; ++i) {
        ex.input.push_back(doc.tokens[static_cast<size_t>(i)]);
        ex.boxes.push_back(doc.boxes[static_cast<size_t>(i)]);
        ex.kinds.push_back(PosKind::Context);
      }
    }
  }
  ex.context_len = static_cast<int>(ex.input.size());
  for (int i = 0; i < ex.context_len; ++i) ex.pos_ids.push_back(i);
  ex.targets.assign(ex.input.size(), -1);
  ex.loss_mask.assign(ex.input.size(), 0);

  // Appended segments in shuffled order; order is what the model must not rely on.
  std::vector<int> order = sampled;
  rng.shuffle(order);
  for (int b : order) {
    const auto& span = doc.blocks[static_cast<size_t>(b)];
    InfillExample::Segment seg;
    seg.block_id = b;
    seg.input_start = static_cast<int>(ex.input.size());
    seg.n_tokens = span.end - span.start;
    seg.mask_pos = mask_pos_of_block[static_cast<size_t>(b)];

    ex.input.push_back(sv.start);
    ex.boxes.push_back(span.box);  // start token announces the slot's box
    ex.pos_ids.push_back(seg.mask_pos);
    ex.kinds.push_back(PosKind::SegStart);
    ex.targets.push_back(doc.tokens[static_cast<size_t>(span.start)]);
    ex.loss_mask.push_back(1);

    for (int i = span.start; i < span.end; ++i) {
      ex.input.push_back(doc.tokens[static_cast<size_t>(i)]);
      ex.boxes.push_back(doc.boxes[static_cast<size_t>(i)]);
      ex.pos_ids.push_back(seg.mask_pos);
      ex.kinds.push_back(PosKind::SegToken);
      bool last = i + 1 == span.end;
      ex.targets.push_back(last ? sv.end : doc.tokens[static_cast<size_t>(i + 1)]);
      ex.loss_mask.push_back(1);
    }
    ex.segments.push_back(seg);
  }
  ex.validate(sv);
  return ex;
}

std::vector<int> reconstruct(const InfillExample& ex, const SpecialVocab& sv) {
  ex.validate(sv);
  // Map each mask position to its segment via the shared position id.
  std::vector<int> seg_of_pos(ex.input.size(), -1);
  for (size_t s = 0; s < ex.segments.size(); ++s) {
    int mp = ex.segments[s].mask_pos;
    if (mp < 0 || mp >= ex.context_len || ex.kinds[static_cast<size_t>(mp)] != PosKind::MaskSlot)
      throw InfillError(ex.doc_id + ": segment points at a non-mask position");
    if (seg_of_pos[static_cast<size_t>(mp)] != -1)
      throw InfillError(ex.doc_id + ": two segments claim the same mask slot");
    seg_of_pos[static_cast<size_t>(mp)] = static_cast<int>(s);
  }
  std::vector<int> out;
  for (int i = 0; i < ex.context_len; ++i) {
    if (ex.kinds[static_cast<size_t>(i)] == PosKind::MaskSlot) {
      int s = seg_of_pos[static_cast<size_t>(i)];
      if (s < 0) throw InfillError(ex.doc_id + ": mask slot without a segment");
      const auto& seg = ex.segments[static_cast<size_t>(s)];
      for (int j = 0; j < seg.n_tokens; ++j)
        out.push_back(ex.input[static_cast<size_t>(seg.input_start + 1 + j)]);
    } else {
      out.push_back(ex.input[static_cast<size_t>(i)]);
    }
  }
  return out;
}

// ---- packing ----

void Chunk::validate() const {
  size_t n = tokens.size();
  if (bins.size() != n || pos_ids.size() != n || targets.size() != n || loss_mask.size() != n)
    throw InfillError("chunk arrays disagree in length");
  int cursor = 0;
  for (const auto& s : spans) {
    if (s.start != cursor || s.len <= 0 || s.prefix_len < 0 || s.prefix_len > s.len)
      throw InfillError("chunk spans do not partition the chunk");
    cursor = s.start + s.len;
  }
  if (cursor != static_cast<int>(n)) throw InfillError("chunk spans do not cover the chunk");
}

std::vector<Chunk> pack_chunks(const std::vector<InfillExample>& examples, int max_len, int n_bins,
                               int* dropped) {
  if (max_len <= 0) throw InfillError("pack_chunks: max_len must be positive");
  if (dropped) *dropped = 0;
  std::vector<Chunk> chunks;
  for (const auto& ex : examples) {
    int len = ex.size();
    if (len > max_len) {
      if (dropped) ++*dropped;
      continue;
    }
    size_t target = chunks.size();
    for (size_t c = 0; c < chunks.size(); ++c) {
      if (chunks[c].size() + len <= max_len) {
        target = c;
        break;
      }
    }
    if (target == chunks.size()) chunks.emplace_back();
    Chunk& chunk = chunks[target];
    ChunkSpan span;
    span.start = chunk.size();
    span.len = len;
    span.prefix_len = ex.context_len;
    chunk.spans.push_back(span);
    for (int i = 0; i < len; ++i) {
      chunk.tokens.push_back(ex.input[static_cast<size_t>(i)]);
      chunk.bins.push_back(quantize_bbox(ex.boxes[static_cast<size_t>(i)], n_bins));
      chunk.pos_ids.push_back(ex.pos_ids[static_cast<size_t>(i)]);
      chunk.targets.push_back(ex.targets[static_cast<size_t>(i)]);
      chunk.loss_mask.push_back(ex.loss_mask[static_cast<size_t>(i)]);
    }
  }
  for (const auto& c : chunks) c.validate();
  return chunks;
}

std::string chunk_to_json(const Chunk& chunk) {
  json j;
  j["tokens"] = chunk.tokens;
  j["bins"] = chunk.bins;
  j["pos_ids"] = chunk.pos_ids;
  j["targets"] = chunk.targets;
  std::vector<int> lm(chunk.loss_mask.begin(), chunk.loss_mask.end());
  j["loss_mask"] = lm;
  j["spans"] = json::array();
  for (const auto& s : chunk.spans)
    j["spans"].push_back({{"start", s.start}, {"len", s.len}, {"prefix_len", s.prefix_len}});
  return j.dump();
}

Chunk chunk_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw InfillError(std::string("chunk is not valid json: ") + e.what());
  }
  Chunk c;
  c.tokens = j.at("tokens").get<std::vector<int>>();
  c.bins = j.at("bins").get<std::vector<std::array<int, 4>>>();
  c.pos_ids = j.at("pos_ids").get<std::vector<int>>();
  c.targets = j.at("targets").get<std::vector<int>>();
  auto lm = j.at("loss_mask").get<std::vector<int>>();
  c.loss_mask.assign(lm.begin(), lm.end());
  for (const auto& s : j.at("spans"))
    c.spans.push_back({s.at("start").get<int>(), s.at("len").get<int>(), s.at("prefix_len").get<int>()});
  c.validate();
  return c;
}

void write_chunks(const std::vector<Chunk>& chunks, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw InfillError("cannot write " + path);
  for (const auto& c : chunks) out << chunk_to_json(c) << "\n";
}

std::vector<Chunk> read_chunks(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InfillError("cannot read " + path);
  std::vector<Chunk> chunks;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) chunks.push_back(chunk_from_json(line));
  }
  return chunks;
}

}  // namespace boxlm
