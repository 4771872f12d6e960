#pragma once

#include <json.hpp>

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "boxlm/train.hpp"

namespace boxlm {

struct LambdaConfig {
  double ts = 0.0, st = 0.0, ss = 0.0;
};

// "T2T", "S2S+T2T", "T2S+S2T+S2S+T2T", ... text attention is always on.
std::string lambda_label(const LambdaConfig& l);

// The seven gate combinations of the spatial study, text-only first.
const std::vector<LambdaConfig>& spatial_grid_rows();
// The five combinations used for the causal / prefix comparison.
const std::vector<LambdaConfig>& decoder_grid_rows();

struct AblationRun {
  LambdaConfig lambdas{0.0, 0.0, 1.0};
  DecoderMode decoder = DecoderMode::causal;
  Objective objective = Objective::infill_spatial;
  uint64_t seed = 1;
};

std::string run_key(const AblationRun& run);

struct RunOutcome {
  double matched_accuracy = 0.0;  // heldout, examples matching the objective
  double matched_loss = 0.0;
  double plain_accuracy = 0.0;  // heldout, plain next-token examples
  double plain_loss = 0.0;
  int64_t steps = 0;
};

struct CellStats {
  std::string label;
  std::vector<double> per_seed;  // matched accuracy per seed
  double mean = 0.0;
  double stddev = 0.0;  // sample deviation; 0 with fewer than two seeds
};

CellStats summarize(const std::string& label, const std::vector<double>& per_seed);

struct AblationSettings {
  ModelConfig model_base;  // gates and decoder mode are overwritten per run
  TrainConfig train_base;  // objective and seed are overwritten per run
  int n_seeds = 3;
  uint64_t first_seed = 1;  // seeds are first_seed .. first_seed + n_seeds - 1
  uint64_t eval_seed = 99;
};

// Trains one model per requested cell and caches outcomes by cell key, so
// overlapping grids share runs and grid order cannot change any number.
class AblationHarness {
 public:
  AblationHarness(std::vector<PretrainDoc> train_docs, std::vector<PretrainDoc> heldout_docs,
                  SpecialVocab sv, AblationSettings settings, std::ostream* progress = nullptr);

  const RunOutcome& run_cell(const AblationRun& run);
  int64_t cells_computed() const { return cells_computed_; }

  // Gate sweep under the infilling objective with a causal decoder.
  std::vector<CellStats> spatial_grid();
  // Text-only causal, spatial causal, spatial infilling.
  std::vector<CellStats> objective_grid();
  // decoder_grid_rows() under both decoder modes; labels get a mode suffix.
  std::vector<CellStats> decoder_grid();

  nlohmann::json report() const;  // every computed cell, keyed and sorted

 private:
  std::vector<double> seed_accuracies(LambdaConfig lambdas, DecoderMode mode, Objective objective);

  std::vector<PretrainDoc> train_docs_, heldout_docs_;
  SpecialVocab sv_;
  AblationSettings settings_;
  std::ostream* progress_;
  std::map<std::string, RunOutcome> cache_;
  int64_t cells_computed_ = 0;
};

// ---- comparison verdicts, in accuracy percentage points ----

struct SpatialVerdict {
  double baseline_mean = 0.0;        // text-only row
  double min_margin_points = 0.0;    // worst spatial row vs text-only
  bool all_rows_clear_margin = false;
  bool s2s_beats_baseline_every_seed = false;
};
SpatialVerdict spatial_verdict(const std::vector<CellStats>& rows, double margin_points = 2.0);

struct ObjectiveVerdict {
  double gap_spatial_points = 0.0;  // spatial causal minus text-only causal
  double gap_infill_points = 0.0;   // spatial infilling minus spatial causal
  bool ordered_with_gaps = false;
};
ObjectiveVerdict objective_verdict(const std::vector<CellStats>& rows,
                                   double min_gap_points = 1.0);

struct DecoderVerdict {
  double worst_gap_points = 0.0;  // largest |causal - prefix| mean gap
  double max_stddev_points = 0.0;
  bool parity = false;  // every gap below the larger of the two deviations
};
DecoderVerdict decoder_verdict(const std::vector<CellStats>& rows);

std::string format_grid(const std::vector<CellStats>& rows);

}  // namespace boxlm
