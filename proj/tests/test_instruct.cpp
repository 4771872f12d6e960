#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "boxlm/instruct.hpp"
#include "boxlm/train.hpp"

using namespace boxlm;

namespace {

const Vocab& vocab() {
  static Vocab v = Vocab::corpus_vocab();
  return v;
}

SpecialVocab special() { return SpecialVocab::for_text_vocab(vocab().size()); }

PretrainDoc two_word_doc() {
  PretrainDoc doc;
  doc.doc_id = "d0";
  doc.tokens = {vocab().id("doctype"), vocab().id("form")};
  doc.boxes = {BBox{0.1, 0.1, 0.2, 0.12}, BBox{0.3, 0.1, 0.4, 0.12}};
  doc.blocks = {{0, 2, BBox{0.1, 0.1, 0.4, 0.12}}};
  return doc;
}

PromptRecord kie_record() {
  PromptRecord rec;
  rec.doc_id = "d0";
  rec.task = Task::kie;
  rec.template_type = TemplateType::extraction;
  rec.prompt = "What is the value for the \"key07\"?";
  rec.response = "v03_0 v03_1";
  rec.slot = "key07";
  rec.split = "train";
  return rec;
}

}  // namespace

TEST_CASE("fine-tuning examples lay out prefix, start token and response") {
  auto sv = special();
  auto doc = two_word_doc();
  auto rec = kie_record();
  auto ex = build_instruct_example(doc, rec, vocab(), sv, 128);

  // [BOS] + 2 document words + 10 prompt tokens + start + 2 response words.
  REQUIRE(ex.size() == 16);
  CHECK(ex.context_len == 13);
  CHECK(ex.n_masked == 0);
  CHECK(ex.input[0] == sv.bos);
  CHECK(ex.input[1] == vocab().id("doctype"));
  CHECK(ex.input[2] == vocab().id("form"));
  CHECK(ex.input[3] == vocab().id("What"));
  CHECK(ex.input[12] == vocab().id("?"));
  CHECK(ex.input[13] == sv.start);
  CHECK(ex.input[14] == vocab().id("v03_0"));
  CHECK(ex.input[15] == vocab().id("v03_1"));

  for (int i = 0; i < 13; ++i) {
    CHECK(ex.kinds[static_cast<size_t>(i)] == PosKind::Context);
    CHECK(ex.loss_mask[static_cast<size_t>(i)] == 0);
    CHECK(ex.targets[static_cast<size_t>(i)] == -1);
  }
  for (int i = 13; i < 16; ++i) CHECK(ex.kinds[static_cast<size_t>(i)] == PosKind::Response);
  CHECK(ex.targets[13] == vocab().id("v03_0"));
  CHECK(ex.targets[14] == vocab().id("v03_1"));
  CHECK(ex.targets[15] == sv.eos);
  for (int i = 13; i < 16; ++i) CHECK(ex.loss_mask[static_cast<size_t>(i)] == 1);

  // Document words keep their boxes; template machinery rides the full page.
  CHECK(ex.boxes[1].x0 == doctest::Approx(0.1));
  CHECK(ex.boxes[3].x1 == doctest::Approx(1.0));
  CHECK(ex.boxes[13].x1 == doctest::Approx(1.0));
  for (int i = 0; i < 16; ++i) CHECK(ex.pos_ids[static_cast<size_t>(i)] == i);
  CHECK_NOTHROW(ex.validate(sv));
}

TEST_CASE("documents are truncated from the front to fit the context") {
  auto sv = special();
  auto doc = two_word_doc();
  auto rec = kie_record();
  auto full = build_instruct_example(doc, rec, vocab(), sv, 16);
  CHECK(full.size() == 16);

  auto trimmed = build_instruct_example(doc, rec, vocab(), sv, 15);
  CHECK(trimmed.size() == 15);
  CHECK(trimmed.input[1] == vocab().id("form"));  // oldest document token dropped
  CHECK(trimmed.context_len == 12);

  auto bare = build_instruct_example(doc, rec, vocab(), sv, 14);
  CHECK(bare.size() == 14);
  CHECK(bare.input[1] == vocab().id("What"));  // no document tokens left

  CHECK_THROWS_AS(build_instruct_example(doc, rec, vocab(), sv, 13), InfillError);
}

TEST_CASE("prompt chunks end at the start token with a bidirectional prefix") {
  auto sv = special();
  auto doc = two_word_doc();
  auto rec = kie_record();
  auto chunk = build_prompt_chunk(doc, rec, vocab(), sv, 128, 16);
  CHECK(chunk.size() == 14);
  CHECK(chunk.tokens.back() == sv.start);
  REQUIRE(chunk.spans.size() == 1);
  CHECK(chunk.spans[0].prefix_len == 13);
  for (int t : chunk.targets) CHECK(t == -1);
  for (auto m : chunk.loss_mask) CHECK(m == 0);
  for (const auto& b : chunk.bins) {
    for (int c : b) {
      CHECK(c >= 0);
      CHECK(c < 16);
    }
  }
}

TEST_CASE("generated ids decode to text with control tokens dropped") {
  auto sv = special();
  std::vector<int> ids{vocab().id("v03_0"), sv.eos, vocab().id("v03_1"), sv.pad};
  CHECK(decode_generated(ids, vocab(), sv) == "v03_0 v03_1");
  CHECK(decode_generated({}, vocab(), sv) == "");
  CHECK(decode_generated({sv.eos}, vocab(), sv) == "");
}

TEST_CASE("a tiny model memorizes a handful of extraction prompts") {
  SynthesisConfig scfg;
  scfg.seed = 21;
  scfg.n_docs = 2;
  scfg.n_heldout = 0;
  scfg.weight_form = 1.0;
  scfg.weight_table = 0.0;
  scfg.weight_letter = 0.0;
  auto corpus = gen_corpus(scfg);
  REQUIRE(corpus.train.size() == 2);

  auto sv = special();
  std::map<std::string, PretrainDoc> docs;
  std::vector<PromptRecord> records;
  PromptOptions opt;
  opt.absent_keys = 0;
  for (const auto& od : corpus.train) {
    docs[od.doc_id] = to_pretrain_doc(flatten(od), vocab());
    Rng rng(3);
    auto recs = render(od, Task::kie, TemplateType::extraction, corpus.key_universe,
                       corpus.class_universe, rng, opt);
    for (auto& r : recs) {
      r.split = "train";
      if (records.size() < 6) records.push_back(r);
    }
  }
  REQUIRE(records.size() == 6);

  ModelConfig mcfg;
  mcfg.vocab_size = sv.model_vocab();
  mcfg.d_model = 32;
  mcfg.n_layers = 1;
  mcfg.n_heads = 2;
  mcfg.max_ctx = 128;
  mcfg.ffn_mult = 2;
  mcfg.spatial_bins = 16;
  mcfg.decoder_mode = DecoderMode::prefix;
  DocModel<float> model(mcfg, 5);

  std::vector<InfillExample> examples;
  for (const auto& r : records)
    examples.push_back(build_instruct_example(docs.at(r.doc_id), r, vocab(), sv, mcfg.max_ctx));
  auto chunks = pack_chunks(examples, mcfg.max_ctx, mcfg.spatial_bins);

  TrainConfig tcfg;
  tcfg.lr = 3e-3;
  tcfg.warmup_steps = 10;
  tcfg.batch_size = 2;
  Trainer<float> trainer(model, tcfg);
  std::vector<std::vector<Chunk>> epochs(60, chunks);
  trainer.train(epochs);

  auto preds = instruct_predict(model, docs, records, vocab(), sv, 8);
  REQUIRE(preds.size() == records.size());
  int exact = 0;
  for (const auto& p : preds) {
    CHECK(p.task == "kie");
    CHECK(!p.key.empty());
    exact += normalize_text(p.pred) == normalize_text(p.gold);
  }
  CHECK(exact == static_cast<int>(records.size()));

  PromptRecord ghost = records[0];
  ghost.doc_id = "missing";
  CHECK_THROWS_AS(instruct_predict(model, docs, {ghost}, vocab(), sv, 4), InfillError);
}
