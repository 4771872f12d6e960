#pragma once

#include <array>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "boxlm/bbox.hpp"
#include "boxlm/rng.hpp"

namespace boxlm {

// ---- on-disk document model (pixel coordinates) ----

struct WordBox {
  std::string text;
  std::array<double, 4> bbox{};  // x0, y0, x1, y1 in page pixels
};

struct OcrBlock {
  std::array<double, 4> bbox{};
  std::vector<WordBox> words;
};

struct OcrPage {
  double width = 0, height = 0;
  std::vector<OcrBlock> blocks;
};

struct KiePair {
  std::string key, value;
};
struct QaPair {
  std::string question, answer;
};
struct NliPair {
  std::string statement, answer;
};

struct Annotations {
  std::vector<KiePair> kie;
  std::vector<QaPair> vqa;
  std::vector<NliPair> nli;
  std::string cls;
};

struct OcrDocument {
  std::string doc_id;
  std::string family;  // form | table | letter
  std::vector<OcrPage> pages;
  Annotations ann;

  void validate() const;  // structural and box-nesting checks, throws CorpusError
};

std::string ocr_document_to_json(const OcrDocument& doc);
OcrDocument ocr_document_from_json(const std::string& text);
void save_ocr_document(const OcrDocument& doc, const std::string& path);
OcrDocument load_ocr_document(const std::string& path);

// ---- reading-order token stream with normalized boxes ----

struct SpatialWord {
  std::string text;
  BBox box;  // normalized to [0,1] by page size
};

struct TokenBlockSpan {
  int start = 0;  // first token index
  int end = 0;    // one past last
  BBox box;       // normalized block box
};

struct TokenizedDoc {
  std::string doc_id;
  std::string family;
  std::vector<SpatialWord> words;
  std::vector<TokenBlockSpan> blocks;  // partition of [0, words.size())
  Annotations ann;
};

// Pages, then blocks, then words, in stored order. Boxes are normalized here;
// word order inside the document is the reading order used everywhere else.
TokenizedDoc flatten(const OcrDocument& doc);

// ---- vocabulary ----

// Closed-world vocabulary over the synthetic universe plus prompt wording.
// Tokenization is whitespace splitting with punctuation peeled into single
// character tokens; unknown words throw, since every legal word is enumerable.
class Vocab {
 public:
  static Vocab build(const std::vector<std::string>& words);
  static Vocab corpus_vocab();  // full universe: every word any generator or template can emit

  int id(const std::string& word) const;
  const std::string& word(int id) const;
  int size() const { return static_cast<int>(words_.size()); }
  bool has(const std::string& word) const { return index_.count(word) > 0; }

  std::vector<int> encode(const std::vector<std::string>& words) const;
  std::vector<std::string> tokenize(const std::string& text) const;  // vocab-independent split
  std::vector<int> encode_text(const std::string& text) const;
  std::string decode(const std::vector<int>& ids) const;

  void save(const std::string& path) const;
  static Vocab load(const std::string& path);

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
};

// ---- synthesis ----

struct SynthesisConfig {
  uint64_t seed = 1;
  int n_docs = 2000;
  int n_heldout = 200;
  double weight_form = 0.6;
  double weight_table = 0.25;
  double weight_letter = 0.15;
  double jitter = 0.0;         // max box jitter as a fraction of page size
  double token_dropout = 0.0;  // probability a non-structural word is dropped
};

// Layout constants shared by the form generator and its tests.
struct FormLayout {
  static constexpr int n_slots = 16;      // vertical row slots on the page
  static constexpr int min_rows = 5;
  static constexpr int max_rows = 7;
  static constexpr int n_keys = 32;
  static constexpr double page_w = 1000.0;
  static constexpr double page_h = 1400.0;
  static constexpr double slot_y0 = 150.0;
  static constexpr double slot_pitch = 68.0;
  static constexpr double word_h = 28.0;
  static constexpr double word_w = 90.0;
  static constexpr double word_gap = 10.0;
  static constexpr double key_x0 = 60.0;
  static constexpr double value_x1 = 940.0;  // value blocks are right-aligned

  static double slot_y(int slot) { return slot_y0 + slot * slot_pitch; }
  // Inverse of slot_y from a normalized y coordinate; used by oracle tests.
  static int slot_of_y(double y_norm) {
    return static_cast<int>((y_norm * page_h - slot_y0) / slot_pitch + 0.5);
  }
};

OcrDocument synth_form(const std::string& doc_id, Rng& rng, const SynthesisConfig& cfg);
OcrDocument synth_table(const std::string& doc_id, Rng& rng, const SynthesisConfig& cfg);
OcrDocument synth_letter(const std::string& doc_id, Rng& rng, const SynthesisConfig& cfg);

struct Corpus {
  std::vector<OcrDocument> train;
  std::vector<OcrDocument> heldout;
  std::vector<std::string> key_universe;    // every KIE key the generators use
  std::vector<std::string> class_universe;  // every document class
};

Corpus gen_corpus(const SynthesisConfig& cfg);

// Writes train/, heldout/, vocab.txt and corpus_meta.json under dir.
void write_corpus(const Corpus& corpus, const SynthesisConfig& cfg, const std::string& dir);

struct LoadedCorpus {
  std::vector<TokenizedDoc> train;
  std::vector<TokenizedDoc> heldout;
  std::vector<std::string> key_universe;
  std::vector<std::string> class_universe;
  Vocab vocab;
};

LoadedCorpus load_corpus(const std::string& dir);

}  // namespace boxlm
