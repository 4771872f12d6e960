#pragma once

#include <json.hpp>

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "boxlm/corpus.hpp"
#include "boxlm/rng.hpp"

namespace boxlm {

struct TemplateError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Task { vqa, nli, kie, cls };
enum class TemplateType { extraction, mcq, internal_classification };

std::string task_name(Task t);
Task task_from(const std::string& s);
std::string template_name(TemplateType t);
TemplateType template_from(const std::string& s);

// Which question styles each task supports.
const std::vector<TemplateType>& valid_templates(Task t);
bool template_valid(Task t, TemplateType tmpl);

// One instruction record. `prompt` is the text that follows the document
// stream; the document tokens themselves are prepended when the model input
// is assembled. `slot` keeps the primary filled-in value so multiple-choice
// prompts can be re-rendered with a different choice list.
struct PromptRecord {
  std::string doc_id;
  Task task = Task::vqa;
  TemplateType template_type = TemplateType::extraction;
  std::string prompt;
  std::string response;
  std::vector<std::string> choices;  // multiple choice only; contains the response
  std::string slot;
  std::string split;  // train | test
};

struct PromptOptions {
  int mcq_choices = 4;  // listed options including the gold one, capped by the universe
  int absent_keys = 2;  // per-document extraction queries over keys the document lacks
};

// "[a, b, c]"
std::string render_choices(const std::vector<std::string>& choices);

// Records for one document and one (task, template) pairing. Documents
// without the relevant annotation yield no records. Throws TemplateError on a
// pairing outside valid_templates.
std::vector<PromptRecord> render(const OcrDocument& doc, Task task, TemplateType tmpl,
                                 const std::vector<std::string>& key_universe,
                                 const std::vector<std::string>& class_universe, Rng& rng,
                                 const PromptOptions& opt = {});

// Train-split multiple-choice records expand to one copy per listed choice,
// each re-rendered with that single choice; responses keep the gold answer.
// Records from other splits or templates pass through untouched.
std::vector<PromptRecord> flatten_mcq(const std::vector<PromptRecord>& records);

// Full prompt set for one split. Train uses every template valid for each
// task and flattens multiple-choice records; test keeps only extraction for
// key extraction, multiple choice for classification, and the sole template
// for the other tasks.
std::vector<PromptRecord> build_prompt_set(const std::vector<OcrDocument>& docs,
                                           const std::string& split,
                                           const std::vector<std::string>& key_universe,
                                           const std::vector<std::string>& class_universe,
                                           uint64_t seed, const PromptOptions& opt = {});

struct PromptSetStats {
  std::map<std::string, int64_t> by_task;
  std::map<std::string, int64_t> by_template;
  int64_t total = 0;
};
PromptSetStats dataset_stats(const std::vector<PromptRecord>& records);

nlohmann::json prompt_to_json(const PromptRecord& r);
PromptRecord prompt_from_json(const nlohmann::json& j);
void write_prompts(const std::vector<PromptRecord>& records, const std::string& path);
std::vector<PromptRecord> read_prompts(const std::string& path);

}  // namespace boxlm
