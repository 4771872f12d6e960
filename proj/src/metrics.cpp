#include "boxlm/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace boxlm {

int levenshtein(const std::string& a, const std::string& b) {
  const std::string& shorter = a.size() <= b.size() ? a : b;
  const std::string& longer = a.size() <= b.size() ? b : a;
  std::vector<int> prev(shorter.size() + 1), cur(shorter.size() + 1);
  for (size_t j = 0; j <= shorter.size(); ++j) prev[j] = static_cast<int>(j);
  for (size_t i = 1; i <= longer.size(); ++i) {
    cur[0] = static_cast<int>(i);
    for (size_t j = 1; j <= shorter.size(); ++j) {
      int sub = prev[j - 1] + (longer[i - 1] != shorter[j - 1]);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[shorter.size()];
}

std::string normalize_text(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  bool pending_space = false;
  for (unsigned char c : s) {
    if (std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) {
      out += ' ';
      pending_space = false;
    }
    out += static_cast<char>(std::tolower(c));
  }
  return out;
}

double nls(const std::string& pred, const std::string& gold) {
  std::string p = normalize_text(pred), g = normalize_text(gold);
  size_t denom = std::max(p.size(), g.size());
  if (denom == 0) return 1.0;
  return 1.0 - static_cast<double>(levenshtein(p, g)) / static_cast<double>(denom);
}

double anls(const std::string& pred, const std::vector<std::string>& golds, double threshold) {
  if (golds.empty()) throw MetricError("similarity scoring needs at least one gold answer");
  double best = 0.0;
  for (const auto& g : golds) best = std::max(best, nls(pred, g));
  return best >= threshold ? best : 0.0;
}

F1Result kie_f1(const std::map<std::string, std::string>& preds,
                const std::map<std::string, std::string>& golds) {
  F1Result r;
  for (const auto& [key, value] : preds) {
    if (normalize_text(value) == "none") continue;
    ++r.n_pred;
    auto it = golds.find(key);
    if (it != golds.end() && normalize_text(value) == normalize_text(it->second))
      ++r.true_positives;
  }
  r.n_gold = static_cast<int64_t>(golds.size());
  double tp = static_cast<double>(r.true_positives);
  r.precision = r.n_pred > 0 ? tp / static_cast<double>(r.n_pred) : (r.n_gold == 0 ? 1.0 : 0.0);
  r.recall = r.n_gold > 0 ? tp / static_cast<double>(r.n_gold) : (r.n_pred == 0 ? 1.0 : 0.0);
  r.f1 = r.precision + r.recall > 0.0
             ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
             : 0.0;
  return r;
}

double exact_accuracy(const std::vector<std::string>& preds,
                      const std::vector<std::string>& golds) {
  if (preds.size() != golds.size())
    throw MetricError("accuracy needs matched prediction and gold counts, got " +
                      std::to_string(preds.size()) + " vs " + std::to_string(golds.size()));
  if (preds.empty()) throw MetricError("accuracy over an empty set");
  int64_t hit = 0;
  for (size_t i = 0; i < preds.size(); ++i)
    if (normalize_text(preds[i]) == normalize_text(golds[i])) ++hit;
  return static_cast<double>(hit) / static_cast<double>(preds.size());
}

nlohmann::json prediction_to_json(const PredictionRecord& r) {
  return {{"doc_id", r.doc_id}, {"task", r.task}, {"key", r.key}, {"pred", r.pred},
          {"gold", r.gold}};
}

PredictionRecord prediction_from_json(const nlohmann::json& j) {
  PredictionRecord r;
  r.doc_id = j.at("doc_id").get<std::string>();
  r.task = j.at("task").get<std::string>();
  r.key = j.at("key").get<std::string>();
  r.pred = j.at("pred").get<std::string>();
  r.gold = j.at("gold").get<std::string>();
  return r;
}

void write_predictions(const std::vector<PredictionRecord>& records, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write predictions: " + path);
  for (const auto& r : records) out << prediction_to_json(r).dump() << "\n";
  if (!out) throw std::runtime_error("prediction write failed: " + path);
}

std::vector<PredictionRecord> read_predictions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read predictions: " + path);
  std::vector<PredictionRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(prediction_from_json(nlohmann::json::parse(line)));
  }
  return out;
}

nlohmann::json evaluate_predictions(const std::vector<PredictionRecord>& records) {
  std::vector<double> vqa_scores;
  std::vector<std::string> nli_p, nli_g, cls_p, cls_g;
  std::map<std::string, std::string> kie_p, kie_g;
  for (const auto& r : records) {
    if (r.task == "vqa") {
      vqa_scores.push_back(anls(r.pred, {r.gold}));
    } else if (r.task == "nli") {
      nli_p.push_back(r.pred);
      nli_g.push_back(r.gold);
    } else if (r.task == "cls") {
      cls_p.push_back(r.pred);
      cls_g.push_back(r.gold);
    } else if (r.task == "kie") {
      std::string entity = r.doc_id + "\x1f" + r.key;
      kie_p[entity] = r.pred;
      if (normalize_text(r.gold) != "none") kie_g[entity] = r.gold;
    } else {
      throw MetricError("unknown task in predictions: " + r.task);
    }
  }
  nlohmann::json report = nlohmann::json::object();
  if (!vqa_scores.empty()) {
    double sum = 0.0;
    for (double s : vqa_scores) sum += s;
    report["vqa"] = {{"metric", "anls"},
                     {"value", sum / static_cast<double>(vqa_scores.size())},
                     {"n", vqa_scores.size()}};
  }
  if (!nli_p.empty())
    report["nli"] = {{"metric", "accuracy"}, {"value", exact_accuracy(nli_p, nli_g)},
                     {"n", nli_p.size()}};
  if (!cls_p.empty())
    report["cls"] = {{"metric", "accuracy"}, {"value", exact_accuracy(cls_p, cls_g)},
                     {"n", cls_p.size()}};
  if (!kie_p.empty()) {
    auto f1 = kie_f1(kie_p, kie_g);
    report["kie"] = {{"metric", "f1"},          {"value", f1.f1},
                     {"precision", f1.precision}, {"recall", f1.recall},
                     {"n", kie_p.size()}};
  }
  return report;
}

std::string format_report(const nlohmann::json& report) {
  std::ostringstream out;
  for (const auto& [task, body] : report.items()) {
    out << task << ": " << body.at("metric").get<std::string>() << " = "
        << body.at("value").get<double>() << " (n=" << body.at("n").get<int64_t>() << ")";
    if (body.contains("precision"))
      out << " precision=" << body.at("precision").get<double>()
          << " recall=" << body.at("recall").get<double>();
    out << "\n";
  }
  return out.str();
}

}  // namespace boxlm
