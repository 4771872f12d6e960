#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "boxlm/ablation.hpp"
#include "boxlm/config.hpp"
#include "boxlm/corpus.hpp"
#include "boxlm/instruct.hpp"
#include "boxlm/metrics.hpp"
#include "boxlm/templates.hpp"
#include "boxlm/train.hpp"

namespace fs = std::filesystem;
using namespace boxlm;
using nlohmann::json;

namespace {

// ---- configuration; defaults are materialized into the config so the
// manifest records every value the run actually used ----

std::string fmt_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::string resolve_str(FlatConfig& c, const std::string& key, const std::string& def) {
  if (!c.has(key)) c.set(key, def);
  return c.get_str(key, def);
}

int64_t resolve_int(FlatConfig& c, const std::string& key, int64_t def) {
  if (!c.has(key)) c.set(key, std::to_string(def));
  return c.get_int(key, def);
}

double resolve_double(FlatConfig& c, const std::string& key, double def) {
  if (!c.has(key)) c.set(key, fmt_double(def));
  return c.get_double(key, def);
}

FlatConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  FlatConfig cfg;
  if (!path.empty()) cfg = FlatConfig::from_file(path);
  cfg.apply_overrides(overrides);
  return cfg;
}

SynthesisConfig synthesis_config(FlatConfig& c) {
  SynthesisConfig s;
  s.seed = static_cast<uint64_t>(resolve_int(c, "corpus.seed", 1));
  s.n_docs = static_cast<int>(resolve_int(c, "corpus.n_docs", 2000));
  s.n_heldout = static_cast<int>(resolve_int(c, "corpus.n_heldout", 200));
  s.weight_form = resolve_double(c, "corpus.weight_form", 0.6);
  s.weight_table = resolve_double(c, "corpus.weight_table", 0.25);
  s.weight_letter = resolve_double(c, "corpus.weight_letter", 0.15);
  s.jitter = resolve_double(c, "corpus.jitter", 0.0);
  s.token_dropout = resolve_double(c, "corpus.token_dropout", 0.0);
  return s;
}

ModelConfig model_config(FlatConfig& c, int text_vocab) {
  ModelConfig m;
  m.vocab_size = text_vocab + 6;
  m.d_model = static_cast<int>(resolve_int(c, "model.d_model", 48));
  m.n_layers = static_cast<int>(resolve_int(c, "model.n_layers", 2));
  m.n_heads = static_cast<int>(resolve_int(c, "model.n_heads", 4));
  m.max_ctx = static_cast<int>(resolve_int(c, "model.max_ctx", 128));
  m.ffn_mult = static_cast<int>(resolve_int(c, "model.ffn_mult", 4));
  m.spatial_bins = static_cast<int>(resolve_int(c, "model.spatial_bins", 32));
  m.lambda_ts = resolve_double(c, "model.lambda_ts", 0.0);
  m.lambda_st = resolve_double(c, "model.lambda_st", 0.0);
  m.lambda_ss = resolve_double(c, "model.lambda_ss", 1.0);
  m.decoder_mode = decoder_mode_from(resolve_str(c, "model.decoder_mode", "causal"));
  m.init_std = resolve_double(c, "model.init_std", 0.02);
  m.validate();
  return m;
}

TrainConfig train_config(FlatConfig& c) {
  TrainConfig t;
  t.objective = objective_from(resolve_str(c, "train.objective", "infill+spatial"));
  t.lr = resolve_double(c, "train.lr", 3e-3);
  t.warmup_steps = static_cast<int>(resolve_int(c, "train.warmup_steps", 50));
  t.scheduler = resolve_str(c, "train.scheduler", "cosine");
  t.lr_floor = resolve_double(c, "train.lr_floor", 0.1);
  t.weight_decay = resolve_double(c, "train.weight_decay", 0.1);
  t.beta1 = resolve_double(c, "train.beta1", 0.9);
  t.beta2 = resolve_double(c, "train.beta2", 0.96);
  t.adam_eps = resolve_double(c, "train.adam_eps", 1e-5);
  t.batch_size = static_cast<int>(resolve_int(c, "train.batch_size", 8));
  t.epochs = static_cast<int>(resolve_int(c, "train.epochs", 10));
  t.mask_rate = resolve_double(c, "train.mask_rate", 0.15);
  t.seed = static_cast<uint64_t>(resolve_int(c, "train.seed", 1));
  t.grad_clip = resolve_double(c, "train.grad_clip", 1.0);
  return t;
}

// Fine-tuning reads its own block so one file can configure the whole
// pipeline; the objective field is irrelevant since examples are prebuilt.
TrainConfig instruct_train_config(FlatConfig& c) {
  TrainConfig t;
  t.objective = Objective::causal;
  t.lr = resolve_double(c, "instruct.lr", 1e-4);
  t.warmup_steps = static_cast<int>(resolve_int(c, "instruct.warmup_steps", 20));
  t.scheduler = resolve_str(c, "instruct.scheduler", "cosine");
  t.lr_floor = resolve_double(c, "instruct.lr_floor", 0.1);
  t.weight_decay = resolve_double(c, "instruct.weight_decay", 0.1);
  t.beta1 = resolve_double(c, "instruct.beta1", 0.9);
  t.beta2 = resolve_double(c, "instruct.beta2", 0.96);
  t.adam_eps = resolve_double(c, "instruct.adam_eps", 1e-5);
  t.batch_size = static_cast<int>(resolve_int(c, "instruct.batch_size", 8));
  t.epochs = static_cast<int>(resolve_int(c, "instruct.epochs", 3));
  t.seed = static_cast<uint64_t>(resolve_int(c, "instruct.seed", 7));
  t.grad_clip = resolve_double(c, "instruct.grad_clip", 1.0);
  return t;
}

PromptOptions prompt_options(FlatConfig& c) {
  PromptOptions o;
  o.mcq_choices = static_cast<int>(resolve_int(c, "prompts.mcq_choices", 4));
  o.absent_keys = static_cast<int>(resolve_int(c, "prompts.absent_keys", 2));
  return o;
}

// ---- run directories and manifests ----

std::string run_root() {
  const char* env = std::getenv("BOXLM_RUN_ROOT");
  return env != nullptr && *env != '\0' ? env : "runs";
}

std::string prepare_dir(std::string dir, const std::string& fallback_name) {
  if (dir.empty()) dir = (fs::path(run_root()) / fallback_name).string();
  fs::create_directories(dir);
  return dir;
}

void write_manifest(const std::string& dir, const std::string& command, const FlatConfig& cfg,
                    const std::vector<std::string>& outputs) {
  json j{{"command", command}, {"config", cfg.values()}, {"outputs", outputs}};
  std::ofstream out(fs::path(dir) / "manifest.json");
  if (!out) throw std::runtime_error("cannot write manifest under " + dir);
  out << j.dump(2) << "\n";
}

std::vector<OcrDocument> load_raw_split(const fs::path& dir) {
  if (!fs::exists(dir)) throw CorpusError("missing corpus split directory: " + dir.string());
  std::vector<fs::path> paths;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.path().extension() == ".json") paths.push_back(entry.path());
  std::sort(paths.begin(), paths.end());
  std::vector<OcrDocument> docs;
  docs.reserve(paths.size());
  for (const auto& p : paths) docs.push_back(load_ocr_document(p.string()));
  return docs;
}

json read_corpus_meta(const std::string& dir) {
  std::ifstream in(fs::path(dir) / "corpus_meta.json");
  if (!in) throw CorpusError("missing corpus_meta.json under " + dir);
  json meta;
  try {
    in >> meta;
  } catch (const json::exception& e) {
    throw CorpusError(std::string("corpus_meta.json is not valid json: ") + e.what());
  }
  return meta;
}

json stats_json(const PromptSetStats& s) {
  return json{{"total", s.total}, {"by_task", s.by_task}, {"by_template", s.by_template}};
}

json grid_json(const std::vector<CellStats>& rows) {
  json a = json::array();
  for (const auto& r : rows)
    a.push_back({{"label", r.label},
                 {"per_seed", r.per_seed},
                 {"mean", r.mean},
                 {"stddev", r.stddev}});
  return a;
}

// ---- subcommands ----

void cmd_gen_corpus(FlatConfig& cfg, std::string out_dir) {
  auto scfg = synthesis_config(cfg);
  auto corpus = gen_corpus(scfg);
  out_dir = prepare_dir(std::move(out_dir), "corpus");
  write_corpus(corpus, scfg, out_dir);
  write_manifest(out_dir, "gen-corpus", cfg,
                 {"train/", "heldout/", "vocab.txt", "corpus_meta.json"});
  std::cout << "wrote " << corpus.train.size() << " train and " << corpus.heldout.size()
            << " held-out documents under " << out_dir << "\n";
}

void cmd_gen_prompts(FlatConfig& cfg, const std::string& corpus_dir, std::string run_dir) {
  auto meta = read_corpus_meta(corpus_dir);
  auto key_universe = meta.at("key_universe").get<std::vector<std::string>>();
  auto class_universe = meta.at("class_universe").get<std::vector<std::string>>();
  auto train_docs = load_raw_split(fs::path(corpus_dir) / "train");
  auto heldout_docs = load_raw_split(fs::path(corpus_dir) / "heldout");

  auto opt = prompt_options(cfg);
  auto seed = static_cast<uint64_t>(resolve_int(cfg, "prompts.seed", 11));
  auto train_recs = build_prompt_set(train_docs, "train", key_universe, class_universe, seed, opt);
  auto test_recs = build_prompt_set(heldout_docs, "test", key_universe, class_universe, seed, opt);

  run_dir = prepare_dir(std::move(run_dir), "prompts");
  write_prompts(train_recs, (fs::path(run_dir) / "prompts_train.jsonl").string());
  write_prompts(test_recs, (fs::path(run_dir) / "prompts_test.jsonl").string());
  json stats{{"train", stats_json(dataset_stats(train_recs))},
             {"test", stats_json(dataset_stats(test_recs))}};
  std::ofstream stats_out(fs::path(run_dir) / "stats.json");
  stats_out << stats.dump(2) << "\n";
  write_manifest(run_dir, "gen-prompts", cfg,
                 {"prompts_train.jsonl", "prompts_test.jsonl", "stats.json"});
  std::cout << "wrote " << train_recs.size() << " train and " << test_recs.size()
            << " test prompts under " << run_dir << "\n";
  std::cout << stats.dump(2) << "\n";
}

template <class Real>
void run_pretrain(FlatConfig& cfg, const std::string& corpus_dir, const std::string& run_dir) {
  auto lc = load_corpus(corpus_dir);
  std::vector<PretrainDoc> train, heldout;
  train.reserve(lc.train.size());
  heldout.reserve(lc.heldout.size());
  for (const auto& d : lc.train) train.push_back(to_pretrain_doc(d, lc.vocab));
  for (const auto& d : lc.heldout) heldout.push_back(to_pretrain_doc(d, lc.vocab));
  auto sv = SpecialVocab::for_text_vocab(lc.vocab.size());

  auto mc = model_config(cfg, lc.vocab.size());
  auto tc = train_config(cfg);
  auto eval_seed = static_cast<uint64_t>(resolve_int(cfg, "eval.seed", 99));

  DocModel<Real> model(mc, tc.seed);
  std::cout << "training " << model.param_count() << " parameters, objective "
            << objective_name(tc.objective) << "\n";
  MetricsLogger log((fs::path(run_dir) / "metrics.jsonl").string());
  auto res = pretrain(model, train, heldout, sv, tc, eval_seed, &log);
  save_checkpoint(model, (fs::path(run_dir) / "checkpoint.bin").string());
  std::cout << "steps " << res.steps << ", dropped " << res.dropped_examples
            << " oversized examples\n";
  std::cout << "heldout matched: loss " << res.heldout.loss << ", accuracy "
            << res.heldout.accuracy << " over " << res.heldout.positions << " positions\n";
  std::cout << "heldout next-token: loss " << res.heldout_plain.loss << ", accuracy "
            << res.heldout_plain.accuracy << "\n";
}

void cmd_pretrain(FlatConfig& cfg, const std::string& corpus_dir, std::string run_dir) {
  run_dir = prepare_dir(std::move(run_dir), "pretrain");
  auto precision = resolve_str(cfg, "model.precision", "float");
  if (precision == "float")
    run_pretrain<float>(cfg, corpus_dir, run_dir);
  else if (precision == "double")
    run_pretrain<double>(cfg, corpus_dir, run_dir);
  else
    throw std::invalid_argument("model.precision must be float or double, got " + precision);
  write_manifest(run_dir, "pretrain", cfg, {"metrics.jsonl", "checkpoint.bin"});
}

template <class Real>
void run_instruct(FlatConfig& cfg, const std::string& corpus_dir, const std::string& ckpt_path,
                  const std::string& prompts_train, const std::string& prompts_test,
                  const std::string& run_dir) {
  auto lc = load_corpus(corpus_dir);
  auto model = load_checkpoint<Real>(ckpt_path);
  if (model.cfg.vocab_size != lc.vocab.size() + 6)
    throw std::runtime_error("checkpoint vocabulary " + std::to_string(model.cfg.vocab_size) +
                             " does not match corpus vocabulary " +
                             std::to_string(lc.vocab.size() + 6));
  auto sv = SpecialVocab::for_text_vocab(lc.vocab.size());

  std::map<std::string, PretrainDoc> docs;
  for (const auto& d : lc.train) docs.emplace(d.doc_id, to_pretrain_doc(d, lc.vocab));
  for (const auto& d : lc.heldout) docs.emplace(d.doc_id, to_pretrain_doc(d, lc.vocab));

  auto train_recs = read_prompts(prompts_train);
  auto test_recs = read_prompts(prompts_test);
  auto tc = instruct_train_config(cfg);
  auto max_new = static_cast<int>(resolve_int(cfg, "instruct.max_new", 8));

  std::vector<InfillExample> examples;
  examples.reserve(train_recs.size());
  for (const auto& rec : train_recs) {
    auto it = docs.find(rec.doc_id);
    if (it == docs.end()) throw InfillError("prompt references unknown document " + rec.doc_id);
    examples.push_back(build_instruct_example(it->second, rec, lc.vocab, sv, model.cfg.max_ctx));
  }

  std::vector<std::vector<Chunk>> epochs;
  int dropped = 0;
  for (int e = 0; e < tc.epochs; ++e)
    epochs.push_back(
        shuffle_and_pack(examples, model.cfg.max_ctx, model.cfg.spatial_bins, tc.seed, e, &dropped));

  MetricsLogger log((fs::path(run_dir) / "metrics.jsonl").string());
  Trainer<Real> trainer(model, tc, &log);
  trainer.train(epochs);
  std::cout << "fine-tuned on " << examples.size() << " prompts for " << trainer.steps_taken()
            << " steps (" << dropped << " dropped)\n";

  auto preds = instruct_predict(model, docs, test_recs, lc.vocab, sv, max_new);
  write_predictions(preds, (fs::path(run_dir) / "predictions.jsonl").string());
  save_checkpoint(model, (fs::path(run_dir) / "checkpoint.bin").string());
  auto report = evaluate_predictions(preds);
  std::ofstream report_out(fs::path(run_dir) / "report.json");
  report_out << report.dump(2) << "\n";
  std::cout << format_report(report);
}

void cmd_instruct(FlatConfig& cfg, const std::string& corpus_dir, const std::string& ckpt_path,
                  const std::string& prompts_train, const std::string& prompts_test,
                  std::string run_dir) {
  run_dir = prepare_dir(std::move(run_dir), "instruct");
  auto precision = resolve_str(cfg, "model.precision", "float");
  if (precision == "float")
    run_instruct<float>(cfg, corpus_dir, ckpt_path, prompts_train, prompts_test, run_dir);
  else if (precision == "double")
    run_instruct<double>(cfg, corpus_dir, ckpt_path, prompts_train, prompts_test, run_dir);
  else
    throw std::invalid_argument("model.precision must be float or double, got " + precision);
  write_manifest(run_dir, "instruct", cfg,
                 {"metrics.jsonl", "checkpoint.bin", "predictions.jsonl", "report.json"});
}

void cmd_eval(FlatConfig& cfg, const std::string& predictions_path, const std::string& metrics_csv,
              std::string run_dir) {
  auto recs = read_predictions(predictions_path);
  auto report = evaluate_predictions(recs);

  if (!metrics_csv.empty()) {
    // Metric names select the task sections they apply to.
    std::set<std::string> keep;
    std::stringstream ss(metrics_csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (item == "anls")
        keep.insert("vqa");
      else if (item == "f1")
        keep.insert("kie");
      else if (item == "acc")
        keep.insert("nli"), keep.insert("cls");
      else
        throw std::invalid_argument("unknown metric " + item + " (expected anls, f1 or acc)");
    }
    json filtered = json::object();
    for (auto& [task, body] : report.items())
      if (keep.count(task)) filtered[task] = body;
    report = filtered;
  }

  run_dir = prepare_dir(std::move(run_dir), "eval");
  std::ofstream out(fs::path(run_dir) / "report.json");
  out << report.dump(2) << "\n";
  write_manifest(run_dir, "eval", cfg, {"report.json"});
  std::cout << format_report(report);
}

void cmd_ablate(FlatConfig& cfg, const std::string& corpus_dir, const std::string& grid,
                std::string run_dir) {
  auto lc = load_corpus(corpus_dir);
  // The sweep only models corpus tokens, so it uses a corpus-derived
  // vocabulary instead of the full template universe; cells stay cheap.
  std::set<std::string> words;
  for (const auto& d : lc.train)
    for (const auto& w : d.words) words.insert(w.text);
  for (const auto& d : lc.heldout)
    for (const auto& w : d.words) words.insert(w.text);
  Vocab vocab = Vocab::build(std::vector<std::string>(words.begin(), words.end()));

  std::vector<PretrainDoc> train, heldout;
  for (const auto& d : lc.train) train.push_back(to_pretrain_doc(d, vocab));
  for (const auto& d : lc.heldout) heldout.push_back(to_pretrain_doc(d, vocab));

  AblationSettings st;
  st.model_base = model_config(cfg, vocab.size());
  st.train_base = train_config(cfg);
  st.n_seeds = static_cast<int>(resolve_int(cfg, "ablate.n_seeds", 3));
  st.first_seed = static_cast<uint64_t>(resolve_int(cfg, "ablate.first_seed", 1));
  st.eval_seed = static_cast<uint64_t>(resolve_int(cfg, "eval.seed", 99));

  run_dir = prepare_dir(std::move(run_dir), "ablate");
  AblationHarness h(std::move(train), std::move(heldout),
                    SpecialVocab::for_text_vocab(vocab.size()), st, &std::cerr);

  json out;
  bool all = grid == "all";
  if (all || grid == "spatial") {
    auto rows = h.spatial_grid();
    auto v = spatial_verdict(rows);
    std::cout << "spatial attention grid (matched NTP accuracy, percent):\n"
              << format_grid(rows);
    std::cout << "  worst margin over T2T " << v.min_margin_points << " points; every row +2: "
              << (v.all_rows_clear_margin ? "yes" : "no") << "; S2S beats T2T on every seed: "
              << (v.s2s_beats_baseline_every_seed ? "yes" : "no") << "\n\n";
    out["spatial"] = grid_json(rows);
    out["verdicts"]["spatial"] = {{"min_margin_points", v.min_margin_points},
                                  {"all_rows_clear_margin", v.all_rows_clear_margin},
                                  {"s2s_beats_baseline_every_seed", v.s2s_beats_baseline_every_seed}};
  }
  if (all || grid == "objectives") {
    auto rows = h.objective_grid();
    auto v = objective_verdict(rows);
    std::cout << "objective grid (matched NTP accuracy, percent):\n" << format_grid(rows);
    std::cout << "  spatial gap " << v.gap_spatial_points << " points, infilling gap "
              << v.gap_infill_points << " points; ordered with +1 gaps: "
              << (v.ordered_with_gaps ? "yes" : "no") << "\n\n";
    out["objectives"] = grid_json(rows);
    out["verdicts"]["objectives"] = {{"gap_spatial_points", v.gap_spatial_points},
                                     {"gap_infill_points", v.gap_infill_points},
                                     {"ordered_with_gaps", v.ordered_with_gaps}};
  }
  if (all || grid == "decoders") {
    auto rows = h.decoder_grid();
    auto v = decoder_verdict(rows);
    std::cout << "decoder grid (matched NTP accuracy, percent):\n" << format_grid(rows);
    std::cout << "  worst causal/prefix gap " << v.worst_gap_points
              << " points, largest seed deviation " << v.max_stddev_points
              << " points; parity: " << (v.parity ? "yes" : "no") << "\n\n";
    out["decoders"] = grid_json(rows);
    out["verdicts"]["decoders"] = {{"worst_gap_points", v.worst_gap_points},
                                   {"max_stddev_points", v.max_stddev_points},
                                   {"parity", v.parity}};
  }
  out["cells"] = h.report();
  std::ofstream json_out(fs::path(run_dir) / "ablation.json");
  json_out << out.dump(2) << "\n";
  write_manifest(run_dir, "ablate", cfg, {"ablation.json"});
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"layout-aware document language model workbench"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  std::string run_dir, corpus_dir, grid = "all";
  std::string predictions_path, metrics_csv;
  std::string ckpt_path, prompts_train, prompts_test;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "flat 'key = value' configuration file");
    sub->add_option("--set", overrides, "override, key=value; repeatable");
    sub->add_option("--run", run_dir, "run directory (default $BOXLM_RUN_ROOT/<command>)");
  };

  auto* gen_corpus_cmd = app.add_subcommand("gen-corpus", "write a synthetic document corpus");
  add_common(gen_corpus_cmd);

  auto* gen_prompts_cmd =
      app.add_subcommand("gen-prompts", "render instruction prompts for a corpus");
  add_common(gen_prompts_cmd);
  gen_prompts_cmd->add_option("--corpus", corpus_dir, "corpus directory")->required();

  auto* pretrain_cmd = app.add_subcommand("pretrain", "pre-train a model on a corpus");
  add_common(pretrain_cmd);
  pretrain_cmd->add_option("--corpus", corpus_dir, "corpus directory")->required();

  auto* instruct_cmd =
      app.add_subcommand("instruct", "fine-tune a checkpoint on prompts and predict");
  add_common(instruct_cmd);
  instruct_cmd->add_option("--corpus", corpus_dir, "corpus directory")->required();
  instruct_cmd->add_option("--checkpoint", ckpt_path, "pre-trained checkpoint")->required();
  instruct_cmd->add_option("--prompts-train", prompts_train, "training prompts jsonl")->required();
  instruct_cmd->add_option("--prompts-test", prompts_test, "test prompts jsonl")->required();

  auto* eval_cmd = app.add_subcommand("eval", "score a predictions file");
  add_common(eval_cmd);
  eval_cmd->add_option("--predictions", predictions_path, "predictions jsonl")->required();
  eval_cmd->add_option("--metrics", metrics_csv, "comma list of anls, f1, acc (default all)");

  auto* ablate_cmd = app.add_subcommand("ablate", "run attention and objective sweeps");
  add_common(ablate_cmd);
  ablate_cmd->add_option("--corpus", corpus_dir, "corpus directory")->required();
  ablate_cmd->add_option("--grid", grid, "spatial | objectives | decoders | all")
      ->check(CLI::IsMember({"spatial", "objectives", "decoders", "all"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    auto cfg = load_config(config_path, overrides);
    if (gen_corpus_cmd->parsed())
      cmd_gen_corpus(cfg, run_dir);
    else if (gen_prompts_cmd->parsed())
      cmd_gen_prompts(cfg, corpus_dir, run_dir);
    else if (pretrain_cmd->parsed())
      cmd_pretrain(cfg, corpus_dir, run_dir);
    else if (instruct_cmd->parsed())
      cmd_instruct(cfg, corpus_dir, ckpt_path, prompts_train, prompts_test, run_dir);
    else if (eval_cmd->parsed())
      cmd_eval(cfg, predictions_path, metrics_csv, run_dir);
    else if (ablate_cmd->parsed())
      cmd_ablate(cfg, corpus_dir, grid, run_dir);
    return 0;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 4;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
