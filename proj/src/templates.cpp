#include "boxlm/templates.hpp"

#include <algorithm>
#include <fstream>
#include <set>

namespace boxlm {

std::string task_name(Task t) {
  switch (t) {
    case Task::vqa: return "vqa";
    case Task::nli: return "nli";
    case Task::kie: return "kie";
    case Task::cls: return "cls";
  }
  throw TemplateError("bad task");
}

Task task_from(const std::string& s) {
  if (s == "vqa") return Task::vqa;
  if (s == "nli") return Task::nli;
  if (s == "kie") return Task::kie;
  if (s == "cls") return Task::cls;
  throw TemplateError("unknown task: " + s);
}

std::string template_name(TemplateType t) {
  switch (t) {
    case TemplateType::extraction: return "extraction";
    case TemplateType::mcq: return "mcq";
    case TemplateType::internal_classification: return "internal_classification";
  }
  throw TemplateError("bad template type");
}

TemplateType template_from(const std::string& s) {
  if (s == "extraction") return TemplateType::extraction;
  if (s == "mcq") return TemplateType::mcq;
  if (s == "internal_classification") return TemplateType::internal_classification;
  throw TemplateError("unknown template type: " + s);
}

const std::vector<TemplateType>& valid_templates(Task t) {
  static const std::vector<TemplateType> vqa{TemplateType::extraction};
  static const std::vector<TemplateType> nli{TemplateType::mcq};
  static const std::vector<TemplateType> kie{TemplateType::extraction, TemplateType::mcq,
                                             TemplateType::internal_classification};
  static const std::vector<TemplateType> cls{TemplateType::mcq,
                                             TemplateType::internal_classification};
  switch (t) {
    case Task::vqa: return vqa;
    case Task::nli: return nli;
    case Task::kie: return kie;
    case Task::cls: return cls;
  }
  throw TemplateError("bad task");
}

bool template_valid(Task t, TemplateType tmpl) {
  const auto& v = valid_templates(t);
  return std::find(v.begin(), v.end(), tmpl) != v.end();
}

std::string render_choices(const std::vector<std::string>& choices) {
  std::string out = "[";
  for (size_t i = 0; i < choices.size(); ++i) {
    if (i) out += ", ";
    out += choices[i];
  }
  return out + "]";
}

namespace {

// Gold answer plus up to n_total - 1 distractors from the universe, in a
// uniformly random order.
std::vector<std::string> sample_choices(const std::string& gold,
                                        const std::vector<std::string>& universe, int n_total,
                                        Rng& rng) {
  std::vector<std::string> pool;
  for (const auto& u : universe)
    if (u != gold) pool.push_back(u);
  int n_extra = std::min<int>(n_total - 1, static_cast<int>(pool.size()));
  std::vector<std::string> choices{gold};
  if (n_extra > 0) {
    auto picked = rng.sample_without_replacement(static_cast<int>(pool.size()), n_extra);
    for (int idx : picked) choices.push_back(pool[static_cast<size_t>(idx)]);
  }
  rng.shuffle(choices);
  return choices;
}

std::string kie_value_question(const std::string& value) {
  return "What is \"" + value + "\" in the document?";
}

std::string mcq_prompt(Task task, const std::string& slot,
                       const std::vector<std::string>& choices) {
  switch (task) {
    case Task::nli:
      return "\"" + slot + "\", Yes or No?";
    case Task::kie:
      return kie_value_question(slot) + " Possible choices: " + render_choices(choices) + ".";
    case Task::cls:
      return "What type of document is this? Possible choices: " + render_choices(choices) + ".";
    default:
      throw TemplateError("no multiple-choice template for task " + task_name(task));
  }
}

}  // namespace

std::vector<PromptRecord> render(const OcrDocument& doc, Task task, TemplateType tmpl,
                                 const std::vector<std::string>& key_universe,
                                 const std::vector<std::string>& class_universe, Rng& rng,
                                 const PromptOptions& opt) {
  if (!template_valid(task, tmpl))
    throw TemplateError("template " + template_name(tmpl) + " is not valid for task " +
                        task_name(task));
  if (opt.mcq_choices < 1) throw TemplateError("mcq_choices must be positive");

  std::vector<PromptRecord> out;
  auto base = [&](TemplateType tt) {
    PromptRecord r;
    r.doc_id = doc.doc_id;
    r.task = task;
    r.template_type = tt;
    return r;
  };

  switch (task) {
    case Task::vqa:
      for (const auto& qa : doc.ann.vqa) {
        auto r = base(tmpl);
        r.prompt = qa.question;
        r.response = qa.answer;
        r.slot = qa.question;
        out.push_back(std::move(r));
      }
      break;

    case Task::nli:
      // The two options are part of the template text itself, so the record
      // carries no separate choice list and never expands under flattening.
      for (const auto& p : doc.ann.nli) {
        auto r = base(tmpl);
        r.slot = p.statement;
        r.prompt = mcq_prompt(task, r.slot, {});
        r.response = p.answer;
        out.push_back(std::move(r));
      }
      break;

    case Task::kie: {
      if (doc.ann.kie.empty()) break;
      if (tmpl == TemplateType::extraction) {
        std::set<std::string> present;
        for (const auto& p : doc.ann.kie) {
          present.insert(p.key);
          auto r = base(tmpl);
          r.prompt = "What is the value for the \"" + p.key + "\"?";
          r.response = p.value;
          r.slot = p.key;
          out.push_back(std::move(r));
        }
        // Queries over missing keys teach the model to answer "None".
        std::vector<std::string> absent;
        for (const auto& k : key_universe)
          if (!present.count(k)) absent.push_back(k);
        int n = std::min<int>(opt.absent_keys, static_cast<int>(absent.size()));
        if (n > 0) {
          auto picked = rng.sample_without_replacement(static_cast<int>(absent.size()), n);
          for (int idx : picked) {
            const auto& key = absent[static_cast<size_t>(idx)];
            auto r = base(tmpl);
            r.prompt = "What is the value for the \"" + key + "\"?";
            r.response = "None";
            r.slot = key;
            out.push_back(std::move(r));
          }
        }
      } else if (tmpl == TemplateType::mcq) {
        for (const auto& p : doc.ann.kie) {
          auto r = base(tmpl);
          r.slot = p.value;
          r.choices = sample_choices(p.key, key_universe, opt.mcq_choices, rng);
          r.prompt = mcq_prompt(task, r.slot, r.choices);
          r.response = p.key;
          out.push_back(std::move(r));
        }
      } else {
        for (const auto& p : doc.ann.kie) {
          auto r = base(tmpl);
          r.prompt = kie_value_question(p.value);
          r.response = p.key;
          r.slot = p.value;
          out.push_back(std::move(r));
        }
      }
      break;
    }

    case Task::cls: {
      if (doc.ann.cls.empty()) break;
      auto r = base(tmpl);
      if (tmpl == TemplateType::mcq) {
        r.choices = sample_choices(doc.ann.cls, class_universe, opt.mcq_choices, rng);
        r.prompt = mcq_prompt(task, "", r.choices);
      } else {
        r.prompt = "What type of document is this?";
      }
      r.response = doc.ann.cls;
      out.push_back(std::move(r));
      break;
    }
  }
  return out;
}

std::vector<PromptRecord> flatten_mcq(const std::vector<PromptRecord>& records) {
  std::vector<PromptRecord> out;
  for (const auto& r : records) {
    bool expand = r.split == "train" && r.template_type == TemplateType::mcq &&
                  r.choices.size() > 1;
    if (!expand) {
      out.push_back(r);
      continue;
    }
    for (const auto& c : r.choices) {
      auto copy = r;
      copy.choices = {c};
      copy.prompt = mcq_prompt(r.task, r.slot, copy.choices);
      out.push_back(std::move(copy));
    }
  }
  return out;
}

std::vector<PromptRecord> build_prompt_set(const std::vector<OcrDocument>& docs,
                                           const std::string& split,
                                           const std::vector<std::string>& key_universe,
                                           const std::vector<std::string>& class_universe,
                                           uint64_t seed, const PromptOptions& opt) {
  if (split != "train" && split != "test") throw TemplateError("unknown split: " + split);
  bool train = split == "train";
  std::vector<PromptRecord> out;
  for (size_t i = 0; i < docs.size(); ++i) {
    Rng rng(derive_seed(seed, "prompt", i));
    for (Task task : {Task::vqa, Task::nli, Task::kie, Task::cls}) {
      for (TemplateType tmpl : valid_templates(task)) {
        // Test evaluation sticks to one answer style per task: free-form
        // extraction for key extraction, listed choices for classification.
        if (!train && task == Task::kie && tmpl != TemplateType::extraction) continue;
        if (!train && task == Task::cls && tmpl != TemplateType::mcq) continue;
        auto records = render(docs[i], task, tmpl, key_universe, class_universe, rng, opt);
        for (auto& r : records) {
          r.split = split;
          out.push_back(std::move(r));
        }
      }
    }
  }
  return train ? flatten_mcq(out) : out;
}

PromptSetStats dataset_stats(const std::vector<PromptRecord>& records) {
  PromptSetStats s;
  for (const auto& r : records) {
    s.by_task[task_name(r.task)]++;
    s.by_template[template_name(r.template_type)]++;
    s.total++;
  }
  return s;
}

nlohmann::json prompt_to_json(const PromptRecord& r) {
  return {{"doc_id", r.doc_id},   {"task", task_name(r.task)},
          {"template", template_name(r.template_type)}, {"prompt", r.prompt},
          {"response", r.response}, {"choices", r.choices},
          {"slot", r.slot},       {"split", r.split}};
}

PromptRecord prompt_from_json(const nlohmann::json& j) {
  PromptRecord r;
  r.doc_id = j.at("doc_id").get<std::string>();
  r.task = task_from(j.at("task").get<std::string>());
  r.template_type = template_from(j.at("template").get<std::string>());
  r.prompt = j.at("prompt").get<std::string>();
  r.response = j.at("response").get<std::string>();
  r.choices = j.at("choices").get<std::vector<std::string>>();
  r.slot = j.at("slot").get<std::string>();
  r.split = j.at("split").get<std::string>();
  return r;
}

void write_prompts(const std::vector<PromptRecord>& records, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write prompts: " + path);
  for (const auto& r : records) out << prompt_to_json(r).dump() << "\n";
  if (!out) throw std::runtime_error("prompt write failed: " + path);
}

std::vector<PromptRecord> read_prompts(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read prompts: " + path);
  std::vector<PromptRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(prompt_from_json(nlohmann::json::parse(line)));
  }
  return out;
}

}  // namespace boxlm
