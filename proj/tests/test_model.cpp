#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "boxlm/gradcheck.hpp"
#include "boxlm/model.hpp"

using namespace boxlm;

namespace {

const SpecialVocab sv = SpecialVocab::for_text_vocab(6);

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.vocab_size = sv.model_vocab();
  cfg.d_model = 8;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.max_ctx = 16;
  cfg.ffn_mult = 2;
  cfg.spatial_bins = 4;
  return cfg;
}

PretrainDoc tiny_doc() {
  PretrainDoc doc;
  doc.doc_id = "tiny";
  doc.tokens = {0, 1, 2, 3, 4, 5};
  for (int i = 0; i < 6; ++i)
    doc.boxes.push_back(BBox{0.1 * i, 0.2, 0.1 * i + 0.05, 0.25});
  doc.blocks = {{0, 2, BBox{0.0, 0.2, 0.15, 0.25}},
                {2, 5, BBox{0.2, 0.2, 0.45, 0.25}},
                {5, 6, BBox{0.5, 0.2, 0.55, 0.25}}};
  return doc;
}

// One chunk holding an infill example (visible stream of 4, segment of 4)
// followed by a plain next-token example (6 tokens).
Chunk packed_chunk() {
  auto doc = tiny_doc();
  Rng rng(3);
  auto ex0 = build_infill_example(doc, {1}, sv, rng);
  auto ex1 = build_ar_example(doc, sv);
  auto chunks = pack_chunks({ex0, ex1}, 16, 4);
  REQUIRE(chunks.size() == 1);
  REQUIRE(chunks[0].spans.size() == 2);
  return chunks[0];
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0.0;
  for (size_t i = 0; i < a.value().size(); ++i)
    m = std::max(m, std::abs(a.value()[i] - b.value()[i]));
  return m;
}

}  // namespace

TEST_CASE("parameter listing matches the closed-form count and has unique names") {
  auto cfg = tiny_config();
  DocModel<double> model(cfg, 1);
  auto refs = model.param_refs();
  std::set<std::string> names;
  int64_t total = 0;
  for (auto& r : refs) {
    names.insert(r.name);
    total += r.tensor->numel();
  }
  CHECK(names.size() == refs.size());
  CHECK(total == cfg.param_count());
  CHECK(model.param_count() == cfg.param_count());
  // Decay only on matrices: norms and biases are flagged off.
  for (auto& r : refs) {
    bool vector_like = r.tensor->ndim() == 1;
    CHECK(r.decay == !vector_like);
  }
}

TEST_CASE("construction is seed-deterministic") {
  auto cfg = tiny_config();
  DocModel<double> a(cfg, 42), b(cfg, 42), c(cfg, 43);
  auto ra = a.param_refs(), rb = b.param_refs(), rc = c.param_refs();
  bool all_equal = true, any_diff_seed = false;
  for (size_t i = 0; i < ra.size(); ++i) {
    all_equal = all_equal && ra[i].tensor->value() == rb[i].tensor->value();
    any_diff_seed = any_diff_seed || ra[i].tensor->value() != rc[i].tensor->value();
  }
  CHECK(all_equal);
  CHECK(any_diff_seed);
}

TEST_CASE("config validation and json round-trip") {
  ModelConfig cfg;
  CHECK_THROWS(cfg.validate());  // vocab unset
  cfg = tiny_config();
  CHECK_NOTHROW(cfg.validate());
  cfg.n_heads = 3;  // does not divide d_model = 8
  CHECK_THROWS(cfg.validate());
  cfg = tiny_config();
  cfg.decoder_mode = DecoderMode::prefix;
  cfg.lambda_ts = 0.5;
  auto back = ModelConfig::from_json(cfg.to_json());
  CHECK(back.to_json().dump() == cfg.to_json().dump());
}

TEST_CASE("per-span attention equals block-diagonal attention over the packed sequence") {
  Rng rng(11);
  int d = 8, t0 = 6, t1 = 4, t = t0 + t1;
  AttentionConfig acfg{d, 2, 0.3, 0.7, 1.0, DecoderMode::causal};
  AttentionWeights<double> w(d, rng, 0.5);
  auto x = Tensor<double>::randn({t, d}, rng, 1.0, false);
  auto s = Tensor<double>::randn({t, d}, rng, 1.0, false);
  auto full = Tensor<double>::zeros({t, t});
  for (int i = 0; i < t; ++i)
    for (int j = 0; j < t; ++j) {
      bool same_block = (i < t0) == (j < t0);
      full.at(i, j) = same_block && j <= i ? 0.0 : kMaskNegInf;
    }
  auto whole = attention_layer(x, s, w, acfg, full);
  std::vector<Tensor<double>> pieces{
      attention_layer(slice_rows(x, 0, t0), slice_rows(s, 0, t0), w, acfg,
                      build_mask<double>(DecoderMode::causal, t0)),
      attention_layer(slice_rows(x, t0, t1), slice_rows(s, t0, t1), w, acfg,
                      build_mask<double>(DecoderMode::causal, t1))};
  auto parts = concat_rows(pieces);
  CHECK(max_abs_diff(whole, parts) == 0.0);
}

TEST_CASE("packed chunks give the same logits as separate forwards") {
  auto cfg = tiny_config();
  DocModel<double> model(cfg, 7);
  auto chunk = packed_chunk();
  auto lg = model.logits(chunk);
  auto doc = tiny_doc();
  Rng rng(3);
  auto ex0 = build_infill_example(doc, {1}, sv, rng);
  auto ex1 = build_ar_example(doc, sv);
  auto lg0 = model.logits(pack_chunks({ex0}, 16, 4)[0]);
  auto lg1 = model.logits(pack_chunks({ex1}, 16, 4)[0]);
  int t0 = lg0.shape()[0];
  CHECK(max_abs_diff(slice_rows(lg, 0, t0), lg0) == 0.0);
  CHECK(max_abs_diff(slice_rows(lg, t0, lg1.shape()[0]), lg1) == 0.0);
}

TEST_CASE("prefix rows read later prefix tokens, causal rows never do") {
  auto cfg = tiny_config();
  DocModel<double> causal_model(cfg, 5);
  cfg.decoder_mode = DecoderMode::prefix;
  DocModel<double> prefix_model(cfg, 5);

  auto doc = tiny_doc();
  Rng rng(9);
  auto ex = build_infill_example(doc, {1}, sv, rng);
  auto base = pack_chunks({ex}, 16, 4)[0];
  REQUIRE(base.spans[0].prefix_len == 4);
  auto changed = base;
  changed.tokens[2] = 3;  // swap a token the first row can only see bidirectionally

  auto row0 = [](Tensor<double> lg) { return slice_rows(lg, 0, 1); };
  CHECK(max_abs_diff(row0(causal_model.logits(base)), row0(causal_model.logits(changed))) == 0.0);
  CHECK(max_abs_diff(row0(prefix_model.logits(base)), row0(prefix_model.logits(changed))) > 1e-8);
  // A row past the prefix sees position 2 in both modes.
  auto row5 = [](Tensor<double> lg) { return slice_rows(lg, 5, 1); };
  CHECK(max_abs_diff(row5(causal_model.logits(base)), row5(causal_model.logits(changed))) > 1e-8);
  CHECK(max_abs_diff(row5(prefix_model.logits(base)), row5(prefix_model.logits(changed))) > 1e-8);
}

TEST_CASE("closed spatial gates make the boxes inert") {
  auto cfg = tiny_config();
  cfg.lambda_ss = 0.0;
  DocModel<double> blind(cfg, 13);
  cfg.lambda_ss = 1.0;
  DocModel<double> sighted(cfg, 13);

  auto base = packed_chunk();
  auto moved = base;
  for (auto& b : moved.bins) b = {2, 2, 3, 3};
  CHECK(max_abs_diff(blind.logits(base), blind.logits(moved)) == 0.0);
  CHECK(max_abs_diff(sighted.logits(base), sighted.logits(moved)) > 1e-8);
}

TEST_CASE("positions outside the trained context are rejected") {
  auto cfg = tiny_config();
  DocModel<double> model(cfg, 1);
  auto chunk = packed_chunk();
  chunk.pos_ids[3] = cfg.max_ctx;
  CHECK_THROWS_AS(model.logits(chunk), ShapeError);
  chunk = packed_chunk();
  chunk.pos_ids[3] = -1;
  CHECK_THROWS_AS(model.logits(chunk), ShapeError);
}

TEST_CASE("checkpoints restore every parameter and the config exactly") {
  auto cfg = tiny_config();
  cfg.lambda_ts = 0.25;
  cfg.decoder_mode = DecoderMode::prefix;
  DocModel<double> model(cfg, 99);
  const std::string path = "/tmp/boxlm_test_ckpt.bin";
  save_checkpoint(model, path);
  auto loaded = load_checkpoint<double>(path);
  CHECK(loaded.cfg.to_json().dump() == model.cfg.to_json().dump());
  auto ra = model.param_refs(), rb = loaded.param_refs();
  for (size_t i = 0; i < ra.size(); ++i) {
    CHECK(ra[i].name == rb[i].name);
    CHECK(ra[i].tensor->value() == rb[i].tensor->value());
  }
  auto chunk = packed_chunk();
  CHECK(max_abs_diff(model.logits(chunk), loaded.logits(chunk)) == 0.0);
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint loading is strict") {
  const std::string path = "/tmp/boxlm_test_strict.bin";
  {
    std::ofstream out(path, std::ios::binary);
    out << "not a checkpoint at all";
  }
  CHECK_THROWS_AS(load_checkpoint<double>(path), std::runtime_error);

  DocModel<float> fmodel(tiny_config(), 4);
  save_checkpoint(fmodel, path);
  CHECK_THROWS_AS(load_checkpoint<double>(path), std::runtime_error);  // 32 vs 64 bit
  CHECK_NOTHROW(load_checkpoint<float>(path));

  // Corrupt the first stored array name.
  std::ifstream in(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();
  auto pos = bytes.find("tok_emb");
  REQUIRE(pos != std::string::npos);
  bytes[pos + 6] = 'X';
  {
    std::ofstream out(path, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  CHECK_THROWS_AS(load_checkpoint<float>(path), std::runtime_error);

  // Truncated file.
  save_checkpoint(fmodel, path);
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 64);
  CHECK_THROWS_AS(load_checkpoint<float>(path), std::runtime_error);
  std::filesystem::remove(path);
}

TEST_CASE("generation is greedy, deterministic and stops on request") {
  auto cfg = tiny_config();
  DocModel<double> model(cfg, 17);
  auto doc = tiny_doc();
  auto prompt = pack_chunks({build_ar_example(doc, sv)}, 16, 4)[0];

  auto out1 = model.generate(prompt, 5, {});
  auto out2 = model.generate(prompt, 5, {});
  CHECK(out1 == out2);
  CHECK(out1.size() <= 5);
  CHECK(prompt.size() + static_cast<int>(out1.size()) <= cfg.max_ctx);
  for (int id : out1) CHECK((id >= 0 && id < cfg.vocab_size));
  REQUIRE(!out1.empty());
  CHECK(model.generate(prompt, 5, {out1[0]}).empty());

  // A prompt already at the context limit cannot grow.
  Chunk at_limit;
  for (int i = 0; i < cfg.max_ctx; ++i) {
    at_limit.tokens.push_back(0);
    at_limit.bins.push_back({0, 0, 1, 1});
    at_limit.pos_ids.push_back(i);
    at_limit.targets.push_back(-1);
    at_limit.loss_mask.push_back(0);
  }
  at_limit.spans.push_back({0, cfg.max_ctx, 0});
  CHECK(model.generate(at_limit, 5, {}).empty());

  auto multi = packed_chunk();
  CHECK_THROWS_AS(model.generate(multi, 5, {}), ShapeError);
}

TEST_CASE("analytic gradients of the full model match finite differences") {
  auto cfg = tiny_config();
  cfg.decoder_mode = DecoderMode::prefix;  // exercises both mask kinds in one chunk
  cfg.lambda_ts = 0.3;
  cfg.lambda_st = 0.2;
  DocModel<double> model(cfg, 21);
  auto chunk = packed_chunk();

  std::vector<Tensor<double>> inputs;
  for (auto& r : model.param_refs()) inputs.push_back(*r.tensor);
  auto fn = [&]() { return cross_entropy(model.logits(chunk), chunk.targets, chunk.loss_mask); };
  auto res = grad_check(inputs, fn);
  INFO(res.worst);
  CHECK(res.n_checked == model.param_count());
  CHECK(res.max_rel_err < 1e-3);
}
