#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "boxlm/bbox.hpp"
#include "boxlm/corpus.hpp"
#include "boxlm/rng.hpp"
#include "boxlm/tensor.hpp"

namespace boxlm {

struct InfillError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Control-token ids appended after the text vocabulary.
struct SpecialVocab {
  int text_vocab = 0;
  int pad = 0, bos = 0, eos = 0, mask = 0, start = 0, end = 0;

  static SpecialVocab for_text_vocab(int w) {
    if (w <= 0) throw InfillError("text vocabulary must be non-empty");
    SpecialVocab s;
    s.text_vocab = w;
    s.pad = w;
    s.bos = w + 1;
    s.eos = w + 2;
    s.mask = w + 3;   // one per masked block in the visible stream
    s.start = w + 4;  // opens an appended segment
    s.end = w + 5;    // closes an appended segment (target only)
    return s;
  }

  int model_vocab() const { return text_vocab + 6; }

  std::string name(int id) const {
    static const char* names[] = {"[PAD]", "[BOS]", "[EOS]", "[M]", "[S]", "[E]"};
    if (id >= text_vocab && id < text_vocab + 6) return names[id - text_vocab];
    return std::to_string(id);
  }
};

// A document reduced to token ids with per-token boxes and a block partition.
struct BlockSpan {
  int start = 0, end = 0;  // token index range, end exclusive
  BBox box;
};

struct PretrainDoc {
  std::string doc_id;
  std::vector<int> tokens;
  std::vector<BBox> boxes;
  std::vector<BlockSpan> blocks;

  void validate() const;  // blocks must exactly partition the tokens
};

PretrainDoc to_pretrain_doc(const TokenizedDoc& doc, const Vocab& vocab);

enum class PosKind : uint8_t { Context, MaskSlot, SegStart, SegToken, Response };

// One training example: visible stream followed by appended segments.
// Segment positions reuse the position id of their mask slot, which is what
// makes reconstruction possible and tells the model where a segment belongs.
struct InfillExample {
  std::string doc_id;
  std::vector<int> input;
  std::vector<BBox> boxes;    // aligned with input
  std::vector<int> pos_ids;   // aligned with input
  std::vector<int> targets;   // aligned; -1 where unsupervised
  std::vector<uint8_t> loss_mask;
  std::vector<PosKind> kinds;

  struct Segment {
    int block_id = 0;     // index into the source doc's blocks
    int input_start = 0;  // index of the segment's opening token
    int n_tokens = 0;     // block tokens inside the segment
    int mask_pos = 0;     // shared position id, equals the mask slot's position
  };
  std::vector<Segment> segments;

  int context_len = 0;  // visible-stream length; 0 for plain next-token examples
  int n_masked = 0;

  int size() const { return static_cast<int>(input.size()); }
  void validate(const SpecialVocab& sv) const;
};

// M = max(1, round(rate * n_blocks)) distinct blocks, uniformly without
// replacement; rate 0 disables masking entirely. Returned sorted.
std::vector<int> sample_blocks(int n_blocks, double mask_rate, Rng& rng);

// Plain next-token example: the document unchanged, targets shifted by one,
// final position unsupervised.
InfillExample build_ar_example(const PretrainDoc& doc, const SpecialVocab& sv);

// Masked blocks collapse to one mask token each (carrying the block's box);
// segments with the block tokens are appended in shuffled order, each opened
// by a start token and supervised through an end-of-segment target.
InfillExample build_infill_example(const PretrainDoc& doc, const std::vector<int>& sampled,
                                   const SpecialVocab& sv, Rng& rng);

// Inverse of build_infill_example: splices segments back into their slots.
// Malformed examples (dangling slots, duplicated segments, bad terminators) throw.
std::vector<int> reconstruct(const InfillExample& ex, const SpecialVocab& sv);

// ---- packing ----

struct ChunkSpan {
  int start = 0;
  int len = 0;
  int prefix_len = 0;  // bidirectional prefix inside the example; 0 means fully causal
};

struct Chunk {
  std::vector<int> tokens;
  std::vector<std::array<int, 4>> bins;  // quantized box coordinates per token
  std::vector<int> pos_ids;
  std::vector<int> targets;
  std::vector<uint8_t> loss_mask;
  std::vector<ChunkSpan> spans;

  int size() const { return static_cast<int>(tokens.size()); }
  void validate() const;
};

// First-fit packing: each example goes into the first open chunk with room,
// examples are never split, and examples longer than max_len are dropped
// (counted in *dropped when given).
std::vector<Chunk> pack_chunks(const std::vector<InfillExample>& examples, int max_len, int n_bins,
                               int* dropped = nullptr);

std::string chunk_to_json(const Chunk& chunk);
Chunk chunk_from_json(const std::string& text);
void write_chunks(const std::vector<Chunk>& chunks, const std::string& path);
std::vector<Chunk> read_chunks(const std::string& path);

// Mean supervised cross entropy over an example or chunk layout.
template <class Real>
Tensor<Real> infill_loss(const Tensor<Real>& logits, const InfillExample& ex) {
  return cross_entropy(logits, ex.targets, ex.loss_mask);
}

}  // namespace boxlm
