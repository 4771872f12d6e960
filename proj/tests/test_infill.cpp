#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <set>

#include "boxlm/corpus.hpp"
#include "boxlm/infill.hpp"

using namespace boxlm;

namespace {

// Hand-built document: three blocks of 2, 3, 1 tokens.
PretrainDoc tiny_doc() {
  PretrainDoc doc;
  doc.doc_id = "tiny";
  doc.tokens = {10, 11, 20, 21, 22, 30};
  for (int i = 0; i < 6; ++i)
    doc.boxes.push_back(BBox{0.1 * i, 0.2, 0.1 * i + 0.05, 0.25});
  doc.blocks = {{0, 2, BBox{0.0, 0.2, 0.15, 0.25}},
                {2, 5, BBox{0.2, 0.2, 0.45, 0.25}},
                {5, 6, BBox{0.5, 0.2, 0.55, 0.25}}};
  return doc;
}

PretrainDoc random_doc(Rng& rng, int id) {
  PretrainDoc doc;
  doc.doc_id = "rand" + std::to_string(id);
  int n_blocks = rng.uniform_int(1, 8);
  for (int b = 0; b < n_blocks; ++b) {
    int len = rng.uniform_int(1, 6);
    BlockSpan span;
    span.start = static_cast<int>(doc.tokens.size());
    for (int i = 0; i < len; ++i) {
      doc.tokens.push_back(rng.uniform_int(0, 99));
      double x = rng.uniform() * 0.9, y = rng.uniform() * 0.9;
      doc.boxes.push_back(BBox{x, y, x + 0.05, y + 0.05});
    }
    span.end = static_cast<int>(doc.tokens.size());
    span.box = doc.boxes[static_cast<size_t>(span.start)];
    for (int i = span.start; i < span.end; ++i) span.box = BBox::hull(span.box, doc.boxes[static_cast<size_t>(i)]);
    doc.blocks.push_back(span);
  }
  return doc;
}

const SpecialVocab sv = SpecialVocab::for_text_vocab(100);

}  // namespace

TEST_CASE("special ids sit directly after the text vocabulary") {
  auto s = SpecialVocab::for_text_vocab(100);
  CHECK(s.pad == 100);
  CHECK(s.bos == 101);
  CHECK(s.eos == 102);
  CHECK(s.mask == 103);
  CHECK(s.start == 104);
  CHECK(s.end == 105);
  CHECK(s.model_vocab() == 106);
  CHECK(s.name(103) == "[M]");
  CHECK_THROWS_AS(SpecialVocab::for_text_vocab(0), InfillError);
}

TEST_CASE("block sampling count follows the rate") {
  Rng rng(3);
  CHECK(sample_blocks(10, 0.0, rng).empty());
  for (int trial = 0; trial < 50; ++trial) {
    CHECK(sample_blocks(10, 0.15, rng).size() == 2);  // round(1.5) = 2
    CHECK(sample_blocks(10, 0.14, rng).size() == 1);  // round(1.4) = 1
    CHECK(sample_blocks(3, 0.05, rng).size() == 1);   // at least one when rate > 0
    CHECK(sample_blocks(4, 1.0, rng).size() == 4);
  }
  // Uniformity: each of 5 blocks picked roughly equally often at rate 0.2.
  std::vector<int> counts(5, 0);
  for (int trial = 0; trial < 2000; ++trial)
    for (int b : sample_blocks(5, 0.2, rng)) counts[static_cast<size_t>(b)]++;
  for (int c : counts) CHECK(std::abs(c - 400) < 100);
  CHECK_THROWS_AS(sample_blocks(0, 0.5, rng), InfillError);
  CHECK_THROWS_AS(sample_blocks(5, 1.5, rng), InfillError);
}

TEST_CASE("rate zero yields the unchanged document with shifted targets") {
  auto doc = tiny_doc();
  auto ex = build_ar_example(doc, sv);
  CHECK(ex.input == doc.tokens);
  CHECK(ex.context_len == 0);
  CHECK(ex.n_masked == 0);
  CHECK(ex.pos_ids == std::vector<int>({0, 1, 2, 3, 4, 5}));
  for (int i = 0; i + 1 < 6; ++i) {
    CHECK(ex.targets[static_cast<size_t>(i)] == doc.tokens[static_cast<size_t>(i + 1)]);
    CHECK(ex.loss_mask[static_cast<size_t>(i)] == 1);
  }
  CHECK(ex.targets.back() == -1);
  CHECK(ex.loss_mask.back() == 0);
}

TEST_CASE("masking one block produces the expected layout") {
  auto doc = tiny_doc();
  Rng rng(1);
  auto ex = build_infill_example(doc, {1}, sv, rng);
  // Visible stream: block 0, mask, block 2.
  CHECK(ex.context_len == 4);
  CHECK(ex.input[0] == 10);
  CHECK(ex.input[1] == 11);
  CHECK(ex.input[2] == sv.mask);
  CHECK(ex.input[3] == 30);
  // Mask token wears the masked block's box.
  CHECK(ex.boxes[2].x0 == doctest::Approx(0.2));
  CHECK(ex.boxes[2].x1 == doctest::Approx(0.45));
  // One segment: start token plus the three block tokens.
  CHECK(ex.size() == 8);
  CHECK(ex.input[4] == sv.start);
  CHECK(ex.input[5] == 20);
  CHECK(ex.input[6] == 21);
  CHECK(ex.input[7] == 22);
  // Segment positions all share the mask slot's position id.
  for (int i = 4; i < 8; ++i) CHECK(ex.pos_ids[static_cast<size_t>(i)] == 2);
  // Targets: block tokens then the end marker; loss only on the segment.
  CHECK(ex.targets[4] == 20);
  CHECK(ex.targets[5] == 21);
  CHECK(ex.targets[6] == 22);
  CHECK(ex.targets[7] == sv.end);
  for (int i = 0; i < 4; ++i) CHECK(ex.loss_mask[static_cast<size_t>(i)] == 0);
  for (int i = 4; i < 8; ++i) CHECK(ex.loss_mask[static_cast<size_t>(i)] == 1);
  CHECK(reconstruct(ex, sv) == doc.tokens);
}

TEST_CASE("segment order is shuffled but reconstruction is exact") {
  auto doc = tiny_doc();
  std::set<int> first_blocks;
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    auto ex = build_infill_example(doc, {0, 1, 2}, sv, rng);
    CHECK(ex.n_masked == 3);
    CHECK(ex.context_len == 3);  // three mask tokens only
    first_blocks.insert(ex.segments[0].block_id);
    CHECK(reconstruct(ex, sv) == doc.tokens);
  }
  // Across seeds the leading segment varies.
  CHECK(first_blocks.size() >= 2);
}

TEST_CASE("infill round-trips over a thousand random documents") {
  Rng rng(77);
  for (int i = 0; i < 1000; ++i) {
    auto doc = random_doc(rng, i);
    double rate = rng.uniform();
    auto sampled = sample_blocks(static_cast<int>(doc.blocks.size()), rate, rng);
    auto ex = build_infill_example(doc, sampled, sv, rng);
    CHECK(reconstruct(ex, sv) == doc.tokens);
    if (!sampled.empty()) {
      CHECK(ex.n_masked == static_cast<int>(sampled.size()));
      // Count control tokens in the input stream.
      int masks = 0, starts = 0;
      for (int t : ex.input) {
        masks += t == sv.mask;
        starts += t == sv.start;
      }
      CHECK(masks == ex.n_masked);
      CHECK(starts == ex.n_masked);
    }
  }
}

TEST_CASE("malformed examples are rejected") {
  auto doc = tiny_doc();
  Rng rng(2);
  auto ex = build_infill_example(doc, {1}, sv, rng);
  auto broken = ex;
  broken.segments[0].mask_pos = 0;  // points at a context token
  CHECK_THROWS_AS(reconstruct(broken, sv), InfillError);
  broken = ex;
  broken.targets.back() = 20;  // segment no longer ends in the end marker
  CHECK_THROWS_AS(reconstruct(broken, sv), InfillError);
  broken = ex;
  broken.loss_mask[0] = 1;  // loss on the visible stream
  CHECK_THROWS_AS(reconstruct(broken, sv), InfillError);
  broken = ex;
  broken.n_masked = 2;
  CHECK_THROWS_AS(reconstruct(broken, sv), InfillError);
}

TEST_CASE("sampled blocks must be sorted, distinct and in range") {
  auto doc = tiny_doc();
  Rng rng(3);
  CHECK_THROWS_AS(build_infill_example(doc, {1, 1}, sv, rng), InfillError);
  CHECK_THROWS_AS(build_infill_example(doc, {2, 1}, sv, rng), InfillError);
  CHECK_THROWS_AS(build_infill_example(doc, {3}, sv, rng), InfillError);
}

TEST_CASE("packing is first-fit and never splits an example") {
  std::vector<InfillExample> examples;
  auto mk = [&](int len) {
    InfillExample ex;
    ex.doc_id = "e" + std::to_string(len);
    for (int i = 0; i < len; ++i) {
      ex.input.push_back(i);
      ex.boxes.push_back(BBox{0.1, 0.1, 0.2, 0.2});
      ex.pos_ids.push_back(i);
      ex.targets.push_back(i + 1 < len ? i + 1 : -1);
      ex.loss_mask.push_back(i + 1 < len);
      ex.kinds.push_back(PosKind::Context);
    }
    return ex;
  };
  examples.push_back(mk(6));
  examples.push_back(mk(3));
  examples.push_back(mk(5));   // does not fit chunk 0 (6+3+5 > 10), opens chunk 1
  examples.push_back(mk(1));   // first fit: back into chunk 0
  examples.push_back(mk(12));  // oversize, dropped
  int dropped = 0;
  auto chunks = pack_chunks(examples, 10, 16, &dropped);
  CHECK(dropped == 1);
  REQUIRE(chunks.size() == 2);
  CHECK(chunks[0].size() == 10);
  CHECK(chunks[0].spans.size() == 3);
  CHECK(chunks[0].spans[1].start == 6);
  CHECK(chunks[0].spans[2].len == 1);
  CHECK(chunks[1].size() == 5);
  for (const auto& c : chunks) CHECK_NOTHROW(c.validate());
}

TEST_CASE("chunks serialize losslessly") {
  auto doc = tiny_doc();
  Rng rng(4);
  auto ex = build_infill_example(doc, {0, 2}, sv, rng);
  auto chunks = pack_chunks({ex, build_ar_example(doc, sv)}, 32, 64);
  REQUIRE(chunks.size() == 1);
  auto text = chunk_to_json(chunks[0]);
  auto back = chunk_from_json(text);
  CHECK(back.tokens == chunks[0].tokens);
  CHECK(back.bins == chunks[0].bins);
  CHECK(back.pos_ids == chunks[0].pos_ids);
  CHECK(back.targets == chunks[0].targets);
  CHECK(back.loss_mask == chunks[0].loss_mask);
  CHECK(back.spans.size() == 2);
  CHECK(back.spans[0].prefix_len == chunks[0].spans[0].prefix_len);
  std::filesystem::remove("/tmp/boxlm_chunks.jsonl");
  write_chunks(chunks, "/tmp/boxlm_chunks.jsonl");
  auto rt = read_chunks("/tmp/boxlm_chunks.jsonl");
  CHECK(rt.size() == 1);
  CHECK(rt[0].tokens == chunks[0].tokens);
}

TEST_CASE("prefix length of packed spans equals the visible stream") {
  auto doc = tiny_doc();
  Rng rng(5);
  auto infill_ex = build_infill_example(doc, {1}, sv, rng);
  auto ar_ex = build_ar_example(doc, sv);
  auto chunks = pack_chunks({infill_ex, ar_ex}, 64, 16);
  REQUIRE(chunks.size() == 1);
  REQUIRE(chunks[0].spans.size() == 2);
  CHECK(chunks[0].spans[0].prefix_len == infill_ex.context_len);
  CHECK(chunks[0].spans[1].prefix_len == 0);
}

TEST_CASE("tokenized documents convert with their block structure") {
  SynthesisConfig cfg;
  cfg.seed = 9;
  cfg.n_docs = 5;
  cfg.n_heldout = 0;
  auto corpus = gen_corpus(cfg);
  auto vocab = Vocab::corpus_vocab();
  for (const auto& doc : corpus.train) {
    auto td = flatten(doc);
    auto pd = to_pretrain_doc(td, vocab);
    CHECK(pd.tokens.size() == td.words.size());
    CHECK(pd.blocks.size() == td.blocks.size());
    CHECK_NOTHROW(pd.validate());
    for (size_t i = 0; i < pd.tokens.size(); ++i)
      CHECK(vocab.word(pd.tokens[i]) == td.words[i].text);
  }
}
