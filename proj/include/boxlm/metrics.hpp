#pragma once

#include <json.hpp>

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace boxlm {

struct MetricError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Edit distance with unit insert / delete / substitute costs.
int levenshtein(const std::string& a, const std::string& b);

// Lowercased, trimmed, inner whitespace runs collapsed to single spaces.
std::string normalize_text(const std::string& s);

// Similarity in [0,1] over normalized strings; two empty strings are identical.
double nls(const std::string& pred, const std::string& gold);

// Best similarity against any gold, zeroed below the threshold.
double anls(const std::string& pred, const std::vector<std::string>& golds,
            double threshold = 0.5);

struct F1Result {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  int64_t true_positives = 0;
  int64_t n_pred = 0;
  int64_t n_gold = 0;
};

// Entity-level scoring over key -> value maps. A prediction whose normalized
// value reads "none" claims the key is absent and never enters the prediction
// set, so answering "None" on a key the gold also lacks costs nothing.
F1Result kie_f1(const std::map<std::string, std::string>& preds,
                const std::map<std::string, std::string>& golds);

// Normalized exact match rate; sizes must agree.
double exact_accuracy(const std::vector<std::string>& preds,
                      const std::vector<std::string>& golds);

// One scored model output. `key` groups key extraction answers into per-key
// entities; other tasks leave it empty.
struct PredictionRecord {
  std::string doc_id;
  std::string task;  // vqa | nli | kie | cls
  std::string key;
  std::string pred;
  std::string gold;
};

nlohmann::json prediction_to_json(const PredictionRecord& r);
PredictionRecord prediction_from_json(const nlohmann::json& j);
void write_predictions(const std::vector<PredictionRecord>& records, const std::string& path);
std::vector<PredictionRecord> read_predictions(const std::string& path);

// Task-appropriate aggregate per task present in the records: similarity for
// vqa, accuracy for nli and cls, entity f1 for kie.
nlohmann::json evaluate_predictions(const std::vector<PredictionRecord>& records);

// Human-readable one-line-per-task rendering of evaluate_predictions output.
std::string format_report(const nlohmann::json& report);

}  // namespace boxlm
