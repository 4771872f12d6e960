#include "boxlm/ablation.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace boxlm {

std::string lambda_label(const LambdaConfig& l) {
  std::string out;
  if (l.ts != 0.0) out += "T2S+";
  if (l.st != 0.0) out += "S2T+";
  if (l.ss != 0.0) out += "S2S+";
  return out + "T2T";
}

const std::vector<LambdaConfig>& spatial_grid_rows() {
  static const std::vector<LambdaConfig> rows{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1},
                                              {1, 0, 1}, {0, 1, 1}, {1, 1, 1}};
  return rows;
}

const std::vector<LambdaConfig>& decoder_grid_rows() {
  static const std::vector<LambdaConfig> rows{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 1, 1}};
  return rows;
}

namespace {

std::string fmt_gate(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

}  // namespace

std::string run_key(const AblationRun& run) {
  return "ts=" + fmt_gate(run.lambdas.ts) + ",st=" + fmt_gate(run.lambdas.st) +
         ",ss=" + fmt_gate(run.lambdas.ss) + "|" + decoder_mode_name(run.decoder) + "|" +
         objective_name(run.objective) + "|seed=" + std::to_string(run.seed);
}

CellStats summarize(const std::string& label, const std::vector<double>& per_seed) {
  CellStats s;
  s.label = label;
  s.per_seed = per_seed;
  if (per_seed.empty()) return s;
  double sum = 0.0;
  for (double v : per_seed) sum += v;
  s.mean = sum / static_cast<double>(per_seed.size());
  if (per_seed.size() >= 2) {
    double sq = 0.0;
    for (double v : per_seed) sq += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(sq / static_cast<double>(per_seed.size() - 1));
  }
  return s;
}

AblationHarness::AblationHarness(std::vector<PretrainDoc> train_docs,
                                 std::vector<PretrainDoc> heldout_docs, SpecialVocab sv,
                                 AblationSettings settings, std::ostream* progress)
    : train_docs_(std::move(train_docs)),
      heldout_docs_(std::move(heldout_docs)),
      sv_(sv),
      settings_(std::move(settings)),
      progress_(progress) {
  if (settings_.n_seeds < 1) throw std::invalid_argument("ablation needs at least one seed");
  if (settings_.n_seeds < 2 && progress_)
    *progress_ << "warning: single seed, deviations are not meaningful\n";
}

const RunOutcome& AblationHarness::run_cell(const AblationRun& run) {
  std::string key = run_key(run);
  auto it = cache_.find(key);
  if (it != cache_.end()) return it->second;

  ModelConfig mc = settings_.model_base;
  mc.lambda_ts = run.lambdas.ts;
  mc.lambda_st = run.lambdas.st;
  mc.lambda_ss = run.lambdas.ss;
  mc.decoder_mode = run.decoder;
  TrainConfig tc = settings_.train_base;
  tc.objective = run.objective;
  tc.seed = run.seed;

  DocModel<float> model(mc, run.seed);
  auto res = pretrain(model, train_docs_, heldout_docs_, sv_, tc, settings_.eval_seed);

  RunOutcome out;
  out.matched_accuracy = res.heldout.accuracy;
  out.matched_loss = res.heldout.loss;
  out.plain_accuracy = res.heldout_plain.accuracy;
  out.plain_loss = res.heldout_plain.loss;
  out.steps = res.steps;
  ++cells_computed_;
  if (progress_)
    *progress_ << "[cell " << cells_computed_ << "] " << key << "  matched=" << out.matched_accuracy
               << " plain=" << out.plain_accuracy << " steps=" << out.steps << std::endl;
  return cache_.emplace(std::move(key), out).first->second;
}

std::vector<double> AblationHarness::seed_accuracies(LambdaConfig lambdas, DecoderMode mode,
                                                     Objective objective) {
  std::vector<double> acc;
  acc.reserve(static_cast<size_t>(settings_.n_seeds));
  for (int i = 0; i < settings_.n_seeds; ++i) {
    AblationRun run{lambdas, mode, objective, settings_.first_seed + static_cast<uint64_t>(i)};
    acc.push_back(run_cell(run).matched_accuracy);
  }
  return acc;
}

std::vector<CellStats> AblationHarness::spatial_grid() {
  std::vector<CellStats> rows;
  for (const auto& l : spatial_grid_rows())
    rows.push_back(summarize(
        lambda_label(l), seed_accuracies(l, DecoderMode::causal, Objective::infill_spatial)));
  return rows;
}

std::vector<CellStats> AblationHarness::objective_grid() {
  std::vector<CellStats> rows;
  rows.push_back(summarize(objective_name(Objective::causal),
                           seed_accuracies({0, 0, 0}, DecoderMode::causal, Objective::causal)));
  rows.push_back(
      summarize(objective_name(Objective::causal_spatial),
                seed_accuracies({0, 0, 1}, DecoderMode::causal, Objective::causal_spatial)));
  rows.push_back(
      summarize(objective_name(Objective::infill_spatial),
                seed_accuracies({0, 0, 1}, DecoderMode::causal, Objective::infill_spatial)));
  return rows;
}

std::vector<CellStats> AblationHarness::decoder_grid() {
  std::vector<CellStats> rows;
  for (const auto& l : decoder_grid_rows()) {
    for (auto mode : {DecoderMode::causal, DecoderMode::prefix})
      rows.push_back(summarize(lambda_label(l) + " [" + decoder_mode_name(mode) + "]",
                               seed_accuracies(l, mode, Objective::infill_spatial)));
  }
  return rows;
}

nlohmann::json AblationHarness::report() const {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& [key, out] : cache_) {
    cells.push_back({{"cell", key},
                     {"matched_accuracy", out.matched_accuracy},
                     {"matched_loss", out.matched_loss},
                     {"plain_accuracy", out.plain_accuracy},
                     {"plain_loss", out.plain_loss},
                     {"steps", out.steps}});
  }
  return nlohmann::json{{"cells", cells},
                        {"n_seeds", settings_.n_seeds},
                        {"first_seed", settings_.first_seed},
                        {"eval_seed", settings_.eval_seed}};
}

SpatialVerdict spatial_verdict(const std::vector<CellStats>& rows, double margin_points) {
  if (rows.empty() || rows.front().label != "T2T")
    throw std::invalid_argument("spatial grid must start with the text-only row");
  SpatialVerdict v;
  const CellStats& base = rows.front();
  v.baseline_mean = base.mean;
  v.min_margin_points = 1e300;
  v.all_rows_clear_margin = rows.size() > 1;
  for (size_t i = 1; i < rows.size(); ++i) {
    double margin = (rows[i].mean - base.mean) * 100.0;
    v.min_margin_points = std::min(v.min_margin_points, margin);
    if (margin < margin_points) v.all_rows_clear_margin = false;
  }
  if (rows.size() <= 1) v.min_margin_points = 0.0;
  for (const auto& row : rows) {
    if (row.label != "S2S+T2T") continue;
    if (row.per_seed.size() != base.per_seed.size())
      throw std::invalid_argument("seed counts differ between rows");
    v.s2s_beats_baseline_every_seed = !row.per_seed.empty();
    for (size_t j = 0; j < row.per_seed.size(); ++j)
      if (row.per_seed[j] <= base.per_seed[j]) v.s2s_beats_baseline_every_seed = false;
  }
  return v;
}

ObjectiveVerdict objective_verdict(const std::vector<CellStats>& rows, double min_gap_points) {
  if (rows.size() != 3 || rows[0].label != "causal" || rows[1].label != "causal+spatial" ||
      rows[2].label != "infill+spatial")
    throw std::invalid_argument("objective grid must hold its three rows in order");
  ObjectiveVerdict v;
  v.gap_spatial_points = (rows[1].mean - rows[0].mean) * 100.0;
  v.gap_infill_points = (rows[2].mean - rows[1].mean) * 100.0;
  v.ordered_with_gaps =
      v.gap_spatial_points >= min_gap_points && v.gap_infill_points >= min_gap_points;
  return v;
}

DecoderVerdict decoder_verdict(const std::vector<CellStats>& rows) {
  if (rows.empty() || rows.size() % 2 != 0)
    throw std::invalid_argument("decoder grid holds causal/prefix row pairs");
  DecoderVerdict v;
  v.parity = true;
  for (size_t i = 0; i < rows.size(); i += 2) {
    double gap = std::abs(rows[i].mean - rows[i + 1].mean) * 100.0;
    double spread = std::max(rows[i].stddev, rows[i + 1].stddev) * 100.0;
    v.worst_gap_points = std::max(v.worst_gap_points, gap);
    v.max_stddev_points = std::max(v.max_stddev_points, spread);
    if (gap >= spread) v.parity = false;
  }
  return v;
}

std::string format_grid(const std::vector<CellStats>& rows) {
  size_t w = 5;
  for (const auto& r : rows) w = std::max(w, r.label.size());
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  for (const auto& r : rows) {
    os << std::left << std::setw(static_cast<int>(w) + 2) << r.label << std::right << std::setw(6)
       << r.mean * 100.0;
    if (r.per_seed.size() >= 2)
      os << " +/- " << std::setw(5) << r.stddev * 100.0;
    else
      os << "            ";
    os << "  [";
    for (size_t i = 0; i < r.per_seed.size(); ++i) {
      if (i) os << ", ";
      os << r.per_seed[i] * 100.0;
    }
    os << "]\n";
  }
  return os.str();
}

}  // namespace boxlm
