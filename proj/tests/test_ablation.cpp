#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include "boxlm/ablation.hpp"

using namespace boxlm;

namespace {

// Small documents with real block structure so both objectives train.
PretrainDoc tiny_doc(uint64_t seed) {
  Rng rng(derive_seed(seed, "tiny-doc"));
  PretrainDoc doc;
  doc.doc_id = "d" + std::to_string(seed);
  int n_blocks = 3 + static_cast<int>(rng.uniform_int(0, 1));
  int pos = 0;
  for (int b = 0; b < n_blocks; ++b) {
    BlockSpan span;
    span.start = pos;
    int len = 2 + static_cast<int>(rng.uniform_int(0, 2));
    double y0 = 0.1 + 0.2 * b;
    for (int w = 0; w < len; ++w) {
      doc.tokens.push_back(static_cast<int>(rng.uniform_int(0, 19)));
      doc.boxes.push_back(BBox{0.1 + 0.15 * w, y0, 0.22 + 0.15 * w, y0 + 0.05});
      ++pos;
    }
    span.end = pos;
    span.box = BBox{0.1, y0, 0.22 + 0.15 * (len - 1), y0 + 0.05};
    doc.blocks.push_back(span);
  }
  doc.validate();
  return doc;
}

std::vector<PretrainDoc> tiny_docs(uint64_t base, int n) {
  std::vector<PretrainDoc> docs;
  for (int i = 0; i < n; ++i) docs.push_back(tiny_doc(base + static_cast<uint64_t>(i)));
  return docs;
}

AblationSettings tiny_settings(int n_seeds = 2) {
  AblationSettings s;
  s.model_base.vocab_size = 26;  // 20 text ids plus the control block
  s.model_base.d_model = 16;
  s.model_base.n_layers = 1;
  s.model_base.n_heads = 2;
  s.model_base.max_ctx = 64;
  s.model_base.ffn_mult = 2;
  s.model_base.spatial_bins = 8;
  s.train_base.epochs = 2;
  s.train_base.batch_size = 4;
  s.train_base.lr = 1e-3;
  s.train_base.warmup_steps = 2;
  s.train_base.mask_rate = 0.3;
  s.n_seeds = n_seeds;
  s.first_seed = 1;
  s.eval_seed = 99;
  return s;
}

AblationHarness tiny_harness(int n_seeds = 2, std::ostream* progress = nullptr) {
  return AblationHarness(tiny_docs(100, 8), tiny_docs(900, 3), SpecialVocab::for_text_vocab(20),
                         tiny_settings(n_seeds), progress);
}

}  // namespace

TEST_CASE("gate combinations are labeled by their interaction terms") {
  CHECK(lambda_label({0, 0, 0}) == "T2T");
  CHECK(lambda_label({1, 0, 0}) == "T2S+T2T");
  CHECK(lambda_label({0, 1, 0}) == "S2T+T2T");
  CHECK(lambda_label({0, 0, 1}) == "S2S+T2T");
  CHECK(lambda_label({1, 0, 1}) == "T2S+S2S+T2T");
  CHECK(lambda_label({0, 1, 1}) == "S2T+S2S+T2T");
  CHECK(lambda_label({1, 1, 1}) == "T2S+S2T+S2S+T2T");

  REQUIRE(spatial_grid_rows().size() == 7);
  CHECK(lambda_label(spatial_grid_rows().front()) == "T2T");
  CHECK(lambda_label(spatial_grid_rows().back()) == "T2S+S2T+S2S+T2T");
  REQUIRE(decoder_grid_rows().size() == 5);
  CHECK(lambda_label(decoder_grid_rows()[3]) == "S2S+T2T");
}

TEST_CASE("run keys separate every cell dimension") {
  AblationRun a{{0, 0, 1}, DecoderMode::causal, Objective::infill_spatial, 1};
  CHECK(run_key(a) == "ts=0,st=0,ss=1|causal|infill+spatial|seed=1");
  AblationRun b = a;
  b.decoder = DecoderMode::prefix;
  AblationRun c = a;
  c.objective = Objective::causal;
  AblationRun d = a;
  d.seed = 2;
  AblationRun e = a;
  e.lambdas.ts = 0.5;
  CHECK(run_key(b) != run_key(a));
  CHECK(run_key(c) != run_key(a));
  CHECK(run_key(d) != run_key(a));
  CHECK(run_key(e) == "ts=0.5,st=0,ss=1|causal|infill+spatial|seed=1");
}

TEST_CASE("summaries use the sample deviation") {
  auto s = summarize("x", {0.3, 0.4, 0.5});
  CHECK(s.mean == doctest::Approx(0.4));
  CHECK(s.stddev == doctest::Approx(0.1));
  CHECK(s.per_seed.size() == 3);

  auto single = summarize("x", {0.7});
  CHECK(single.mean == doctest::Approx(0.7));
  CHECK(single.stddev == 0.0);

  auto empty = summarize("x", {});
  CHECK(empty.mean == 0.0);
  CHECK(empty.stddev == 0.0);
}

TEST_CASE("spatial verdict demands a margin over the text-only row") {
  std::vector<CellStats> rows;
  rows.push_back(summarize("T2T", {0.35, 0.36}));
  rows.push_back(summarize("T2S+T2T", {0.38, 0.39}));
  rows.push_back(summarize("S2S+T2T", {0.39, 0.37}));

  auto v = spatial_verdict(rows, 2.0);
  CHECK(v.baseline_mean == doctest::Approx(0.355));
  CHECK(v.min_margin_points == doctest::Approx(2.5));
  CHECK(v.all_rows_clear_margin);
  CHECK(v.s2s_beats_baseline_every_seed);

  SUBCASE("a row under the margin fails") {
    rows.push_back(summarize("S2T+T2T", {0.365, 0.365}));
    auto w = spatial_verdict(rows, 2.0);
    CHECK(w.min_margin_points == doctest::Approx(1.0));
    CHECK_FALSE(w.all_rows_clear_margin);
    CHECK(w.s2s_beats_baseline_every_seed);
  }
  SUBCASE("a per-seed tie fails the strict comparison") {
    rows[2] = summarize("S2S+T2T", {0.39, 0.36});
    auto w = spatial_verdict(rows, 2.0);
    CHECK_FALSE(w.s2s_beats_baseline_every_seed);
  }
  SUBCASE("grid must start with the baseline") {
    std::vector<CellStats> bad{summarize("S2S+T2T", {0.4})};
    CHECK_THROWS_AS(spatial_verdict(bad, 2.0), std::invalid_argument);
  }
}

TEST_CASE("objective verdict checks ordering and gap sizes") {
  std::vector<CellStats> rows;
  rows.push_back(summarize("causal", {0.326}));
  rows.push_back(summarize("causal+spatial", {0.362}));
  rows.push_back(summarize("infill+spatial", {0.391}));

  auto v = objective_verdict(rows, 1.0);
  CHECK(v.gap_spatial_points == doctest::Approx(3.6));
  CHECK(v.gap_infill_points == doctest::Approx(2.9));
  CHECK(v.ordered_with_gaps);

  SUBCASE("an inverted step fails") {
    rows[2] = summarize("infill+spatial", {0.352});
    auto w = objective_verdict(rows, 1.0);
    CHECK(w.gap_infill_points == doctest::Approx(-1.0));
    CHECK_FALSE(w.ordered_with_gaps);
  }
  SUBCASE("a sub-threshold gap fails") {
    rows[1] = summarize("causal+spatial", {0.330});
    CHECK_FALSE(objective_verdict(rows, 1.0).ordered_with_gaps);
  }
  SUBCASE("row order is part of the contract") {
    std::swap(rows[0], rows[1]);
    CHECK_THROWS_AS(objective_verdict(rows, 1.0), std::invalid_argument);
  }
}

TEST_CASE("decoder verdict compares paired rows against their spread") {
  std::vector<CellStats> rows(4);
  rows[0].label = "T2T [causal]";
  rows[0].mean = 0.391;
  rows[0].stddev = 0.002;
  rows[1].label = "T2T [prefix]";
  rows[1].mean = 0.3915;
  rows[1].stddev = 0.0015;
  rows[2].label = "S2S+T2T [causal]";
  rows[2].mean = 0.402;
  rows[2].stddev = 0.003;
  rows[3].label = "S2S+T2T [prefix]";
  rows[3].mean = 0.4005;
  rows[3].stddev = 0.002;

  auto v = decoder_verdict(rows);
  CHECK(v.parity);
  CHECK(v.worst_gap_points == doctest::Approx(0.15));
  CHECK(v.max_stddev_points == doctest::Approx(0.3));

  SUBCASE("a gap at or above the pair spread breaks parity") {
    rows[3].mean = 0.412;
    auto w = decoder_verdict(rows);
    CHECK_FALSE(w.parity);
    CHECK(w.worst_gap_points == doctest::Approx(1.0));
  }
  SUBCASE("rows must pair up") {
    rows.pop_back();
    CHECK_THROWS_AS(decoder_verdict(rows), std::invalid_argument);
  }
}

TEST_CASE("overlapping grids share cached cells") {
  auto h = tiny_harness();
  auto spatial = h.spatial_grid();
  REQUIRE(spatial.size() == 7);
  CHECK(h.cells_computed() == 14);

  auto again = h.spatial_grid();
  CHECK(h.cells_computed() == 14);
  for (size_t i = 0; i < spatial.size(); ++i) {
    CHECK(again[i].label == spatial[i].label);
    CHECK(again[i].per_seed == spatial[i].per_seed);
  }

  auto objectives = h.objective_grid();
  REQUIRE(objectives.size() == 3);
  // Only the two causal-objective configs are new; infill+spatial is cached.
  CHECK(h.cells_computed() == 18);
  CHECK(objectives[2].per_seed == spatial[3].per_seed);

  auto decoders = h.decoder_grid();
  REQUIRE(decoders.size() == 10);
  // Causal halves are all spatial grid cells; only prefix runs are new.
  CHECK(h.cells_computed() == 28);
  CHECK(decoders[0].per_seed == spatial[0].per_seed);
  CHECK(decoders[6].per_seed == spatial[3].per_seed);
}

TEST_CASE("grid order cannot change any number") {
  auto a = tiny_harness();
  auto a_spatial = a.spatial_grid();
  auto a_objectives = a.objective_grid();
  auto a_decoders = a.decoder_grid();

  auto b = tiny_harness();
  auto b_decoders = b.decoder_grid();
  auto b_objectives = b.objective_grid();
  auto b_spatial = b.spatial_grid();

  CHECK(a.cells_computed() == b.cells_computed());
  for (size_t i = 0; i < a_spatial.size(); ++i) {
    CHECK(b_spatial[i].label == a_spatial[i].label);
    CHECK(b_spatial[i].per_seed == a_spatial[i].per_seed);
    CHECK(b_spatial[i].mean == a_spatial[i].mean);
    CHECK(b_spatial[i].stddev == a_spatial[i].stddev);
  }
  for (size_t i = 0; i < a_objectives.size(); ++i)
    CHECK(b_objectives[i].per_seed == a_objectives[i].per_seed);
  for (size_t i = 0; i < a_decoders.size(); ++i)
    CHECK(b_decoders[i].per_seed == a_decoders[i].per_seed);
  CHECK(a.report().dump() == b.report().dump());
}

TEST_CASE("decoder mode reaches the trained model") {
  // With one layer the modes agree exactly on supervised rows, since those
  // rows only read input-derived keys and values of prefix positions. Depth
  // two lets the widened prefix rows feed the loss.
  auto s = tiny_settings();
  s.model_base.n_layers = 2;
  AblationHarness h(tiny_docs(100, 8), tiny_docs(900, 3), SpecialVocab::for_text_vocab(20), s);
  AblationRun causal{{0, 0, 1}, DecoderMode::causal, Objective::infill_spatial, 1};
  AblationRun prefix{{0, 0, 1}, DecoderMode::prefix, Objective::infill_spatial, 1};
  CHECK(h.run_cell(causal).matched_loss != h.run_cell(prefix).matched_loss);
}

TEST_CASE("report lists every computed cell with both evaluations") {
  auto h = tiny_harness();
  h.objective_grid();
  auto rep = h.report();
  REQUIRE(rep.at("cells").size() == 6);
  CHECK(rep.at("n_seeds") == 2);
  CHECK(rep.at("eval_seed") == 99);
  std::string prev;
  for (const auto& cell : rep.at("cells")) {
    std::string key = cell.at("cell").get<std::string>();
    CHECK(prev < key);
    prev = key;
    CHECK(cell.contains("matched_accuracy"));
    CHECK(cell.contains("plain_accuracy"));
    CHECK(cell.at("steps").get<int64_t>() > 0);
  }
}

TEST_CASE("single-seed harness warns and reports no deviation") {
  std::ostringstream progress;
  auto h = tiny_harness(1, &progress);
  CHECK(progress.str().find("warning") != std::string::npos);
  auto rows = h.spatial_grid();
  CHECK(h.cells_computed() == 7);
  for (const auto& row : rows) {
    CHECK(row.per_seed.size() == 1);
    CHECK(row.stddev == 0.0);
  }
  auto text = format_grid(rows);
  CHECK(text.find("+/-") == std::string::npos);
  CHECK(text.find("T2S+S2T+S2S+T2T") != std::string::npos);
}

TEST_CASE("grid formatting lines up labels and percentages") {
  std::vector<CellStats> rows;
  rows.push_back(summarize("T2T", {0.35, 0.36}));
  rows.push_back(summarize("S2S+T2T", {0.3912, 0.3934}));
  auto text = format_grid(rows);
  CHECK(text.find("T2T") != std::string::npos);
  CHECK(text.find("35.50") != std::string::npos);
  CHECK(text.find("39.23") != std::string::npos);
  CHECK(text.find("+/-") != std::string::npos);
  CHECK(text.find("[39.12, 39.34]") != std::string::npos);
}
