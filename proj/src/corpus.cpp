#include "boxlm/corpus.hpp"

#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;

namespace boxlm {

namespace {

constexpr const char* kPunct = ",.?![]():;\"'";

bool is_punct(char c) { return std::string_view(kPunct).find(c) != std::string_view::npos; }

std::string two_digits(int v) {
  std::string s = std::to_string(v);
  return s.size() < 2 ? "0" + s : s;
}

std::string three_digits(int v) {
  std::string s = std::to_string(v);
  while (s.size() < 3) s = "0" + s;
  return s;
}

std::array<double, 4> jittered(std::array<double, 4> box, Rng& rng, const SynthesisConfig& cfg,
                               double page_w, double page_h) {
  if (cfg.jitter > 0.0) {
    double dx = (rng.uniform() * 2.0 - 1.0) * cfg.jitter * page_w;
    double dy = (rng.uniform() * 2.0 - 1.0) * cfg.jitter * page_h;
    box[0] += dx;
    box[1] += dy;
    box[2] += dx;
    box[3] += dy;
  }
  // Clamp into the page so jitter can never break nesting.
  double w = box[2] - box[0], h = box[3] - box[1];
  box[0] = std::clamp(box[0], 0.0, page_w - w);
  box[1] = std::clamp(box[1], 0.0, page_h - h);
  box[2] = box[0] + w;
  box[3] = box[1] + h;
  return box;
}

OcrBlock make_block(std::vector<WordBox> words) {
  OcrBlock b;
  b.bbox = words.front().bbox;
  for (const auto& w : words) {
    b.bbox[0] = std::min(b.bbox[0], w.bbox[0]);
    b.bbox[1] = std::min(b.bbox[1], w.bbox[1]);
    b.bbox[2] = std::max(b.bbox[2], w.bbox[2]);
    b.bbox[3] = std::max(b.bbox[3], w.bbox[3]);
  }
  b.words = std::move(words);
  return b;
}

WordBox word_at(const std::string& text, double x0, double y0, double w, double h) {
  return {text, {x0, y0, x0 + w, y0 + h}};
}

}  // namespace

// ---- validation ----

void OcrDocument::validate() const {
  if (doc_id.empty()) throw CorpusError("document without id");
  if (pages.empty()) throw CorpusError(doc_id + ": document has no pages");
  auto box_ok = [](const std::array<double, 4>& b) {
    return b[0] <= b[2] && b[1] <= b[3];
  };
  for (const auto& page : pages) {
    if (page.width <= 0 || page.height <= 0)
      throw CorpusError(doc_id + ": page with non-positive size");
    if (page.blocks.empty()) throw CorpusError(doc_id + ": page has no blocks");
    for (const auto& block : page.blocks) {
      if (!box_ok(block.bbox)) throw CorpusError(doc_id + ": block corners out of order");
      if (block.bbox[0] < -1e-6 || block.bbox[1] < -1e-6 || block.bbox[2] > page.width + 1e-6 ||
          block.bbox[3] > page.height + 1e-6)
        throw CorpusError(doc_id + ": block outside page bounds");
      if (block.words.empty()) throw CorpusError(doc_id + ": block has no words");
      for (const auto& w : block.words) {
        if (w.text.empty()) throw CorpusError(doc_id + ": empty word text");
        if (!box_ok(w.bbox)) throw CorpusError(doc_id + ": word corners out of order");
        const double tol = 1e-6;
        if (w.bbox[0] < block.bbox[0] - tol || w.bbox[1] < block.bbox[1] - tol ||
            w.bbox[2] > block.bbox[2] + tol || w.bbox[3] > block.bbox[3] + tol)
          throw CorpusError(doc_id + ": word box escapes its block");
      }
    }
  }
}

// ---- json ----

std::string ocr_document_to_json(const OcrDocument& doc) {
  json j;
  j["doc_id"] = doc.doc_id;
  j["family"] = doc.family;
  j["pages"] = json::array();
  for (const auto& page : doc.pages) {
    json jp;
    jp["width"] = page.width;
    jp["height"] = page.height;
    jp["blocks"] = json::array();
    for (const auto& block : page.blocks) {
      json jb;
      jb["bbox"] = block.bbox;
      jb["words"] = json::array();
      for (const auto& w : block.words) jb["words"].push_back({{"text", w.text}, {"bbox", w.bbox}});
      jp["blocks"].push_back(std::move(jb));
    }
    j["pages"].push_back(std::move(jp));
  }
  json ja;
  ja["cls"] = doc.ann.cls;
  ja["kie"] = json::array();
  for (const auto& p : doc.ann.kie) ja["kie"].push_back({{"key", p.key}, {"value", p.value}});
  ja["vqa"] = json::array();
  for (const auto& p : doc.ann.vqa)
    ja["vqa"].push_back({{"question", p.question}, {"answer", p.answer}});
  ja["nli"] = json::array();
  for (const auto& p : doc.ann.nli)
    ja["nli"].push_back({{"statement", p.statement}, {"answer", p.answer}});
  j["annotations"] = std::move(ja);
  return j.dump(1);
}

namespace {

std::array<double, 4> bbox_from_json(const json& j, const std::string& doc_id) {
  if (!j.is_array() || j.size() != 4) throw CorpusError(doc_id + ": bbox is not a 4-array");
  std::array<double, 4> b;
  for (size_t i = 0; i < 4; ++i) {
    if (!j[i].is_number()) throw CorpusError(doc_id + ": bbox entry is not a number");
    b[i] = j[i].get<double>();
  }
  return b;
}

}  // namespace

OcrDocument ocr_document_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw CorpusError(std::string("document is not valid json: ") + e.what());
  }
  OcrDocument doc;
  if (!j.contains("doc_id") || !j["doc_id"].is_string()) throw CorpusError("missing doc_id");
  doc.doc_id = j["doc_id"].get<std::string>();
  doc.family = j.value("family", std::string());
  if (!j.contains("pages") || !j["pages"].is_array())
    throw CorpusError(doc.doc_id + ": missing pages array");
  for (const auto& jp : j["pages"]) {
    OcrPage page;
    page.width = jp.value("width", 0.0);
    page.height = jp.value("height", 0.0);
    if (!jp.contains("blocks") || !jp["blocks"].is_array())
      throw CorpusError(doc.doc_id + ": page without blocks array");
    for (const auto& jb : jp["blocks"]) {
      OcrBlock block;
      block.bbox = bbox_from_json(jb.at("bbox"), doc.doc_id);
      if (!jb.contains("words") || !jb["words"].is_array())
        throw CorpusError(doc.doc_id + ": block without words array");
      for (const auto& jw : jb["words"]) {
        WordBox w;
        if (!jw.contains("text") || !jw["text"].is_string())
          throw CorpusError(doc.doc_id + ": word without text");
        w.text = jw["text"].get<std::string>();
        w.bbox = bbox_from_json(jw.at("bbox"), doc.doc_id);
        block.words.push_back(std::move(w));
      }
      page.blocks.push_back(std::move(block));
    }
    doc.pages.push_back(std::move(page));
  }
  if (j.contains("annotations")) {
    const auto& ja = j["annotations"];
    doc.ann.cls = ja.value("cls", std::string());
    if (ja.contains("kie"))
      for (const auto& p : ja["kie"])
        doc.ann.kie.push_back({p.at("key").get<std::string>(), p.at("value").get<std::string>()});
    if (ja.contains("vqa"))
      for (const auto& p : ja["vqa"])
        doc.ann.vqa.push_back(
            {p.at("question").get<std::string>(), p.at("answer").get<std::string>()});
    if (ja.contains("nli"))
      for (const auto& p : ja["nli"])
        doc.ann.nli.push_back(
            {p.at("statement").get<std::string>(), p.at("answer").get<std::string>()});
  }
  doc.validate();
  return doc;
}

void save_ocr_document(const OcrDocument& doc, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw CorpusError("cannot write " + path);
  out << ocr_document_to_json(doc);
}

OcrDocument load_ocr_document(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ocr_document_from_json(ss.str());
}

// ---- flatten ----

TokenizedDoc flatten(const OcrDocument& doc) {
  doc.validate();
  TokenizedDoc td;
  td.doc_id = doc.doc_id;
  td.family = doc.family;
  td.ann = doc.ann;
  for (const auto& page : doc.pages) {
    for (const auto& block : page.blocks) {
      TokenBlockSpan span;
      span.start = static_cast<int>(td.words.size());
      for (const auto& w : block.words) {
        BBox nb{w.bbox[0] / page.width, w.bbox[1] / page.height, w.bbox[2] / page.width,
                w.bbox[3] / page.height};
        nb.validate();
        td.words.push_back({w.text, nb});
      }
      span.end = static_cast<int>(td.words.size());
      span.box = BBox{block.bbox[0] / page.width, block.bbox[1] / page.height,
                      block.bbox[2] / page.width, block.bbox[3] / page.height};
      span.box.validate();
      td.blocks.push_back(span);
    }
  }
  return td;
}

// ---- vocab ----

Vocab Vocab::build(const std::vector<std::string>& words) {
  Vocab v;
  for (const auto& w : words) {
    if (w.empty()) throw CorpusError("empty vocab word");
    if (v.index_.count(w)) throw CorpusError("duplicate vocab word: " + w);
    v.index_[w] = static_cast<int>(v.words_.size());
    v.words_.push_back(w);
  }
  return v;
}

Vocab Vocab::corpus_vocab() {
  std::vector<std::string> words;
  for (const char* w : {"doctype", "form", "table", "letter", "stamp"}) words.push_back(w);
  for (int i = 0; i < FormLayout::n_keys; ++i) words.push_back("key" + two_digits(i));
  for (int s = 0; s < FormLayout::n_slots; ++s)
    for (int j = 0; j < 3; ++j) words.push_back("v" + two_digits(s) + "_" + std::to_string(j));
  for (int s = 0; s < FormLayout::n_slots; ++s) words.push_back("n" + two_digits(s));
  words.push_back("nff");
  for (int c = 0; c < 4; ++c) words.push_back("col" + std::to_string(c));
  for (int r = 0; r < 5; ++r) words.push_back("row" + std::to_string(r));
  for (int c = 0; c < 4; ++c)
    for (int h = 0; h < 8; ++h) words.push_back("cell" + std::to_string(c) + "_" + std::to_string(h));
  for (int k = 0; k < 200; ++k) words.push_back("lw" + three_digits(k));
  for (const char* w : {"What", "is", "the", "value", "for", "in", "document", "type", "of",
                        "this", "Possible", "choices", "Yes", "No", "or", "None"})
    words.push_back(w);
  for (char c : std::string(kPunct)) words.push_back(std::string(1, c));
  return build(words);
}

int Vocab::id(const std::string& word) const {
  auto it = index_.find(word);
  if (it == index_.end()) throw CorpusError("word not in vocabulary: '" + word + "'");
  return it->second;
}

const std::string& Vocab::word(int id) const {
  if (id < 0 || id >= size())
    throw CorpusError("token id " + std::to_string(id) + " outside vocabulary of " +
                      std::to_string(size()));
  return words_[static_cast<size_t>(id)];
}

std::vector<int> Vocab::encode(const std::vector<std::string>& words) const {
  std::vector<int> out;
  out.reserve(words.size());
  for (const auto& w : words) out.push_back(id(w));
  return out;
}

std::vector<std::string> Vocab::tokenize(const std::string& text) const {
  std::vector<std::string> out;
  std::istringstream ss(text);
  std::string piece;
  while (ss >> piece) {
    size_t b = 0, e = piece.size();
    std::vector<std::string> lead, trail;
    while (b < e && is_punct(piece[b])) lead.emplace_back(1, piece[b++]);
    while (e > b && is_punct(piece[e - 1])) trail.emplace_back(1, piece[--e]);
    for (auto& t : lead) out.push_back(std::move(t));
    if (e > b) out.push_back(piece.substr(b, e - b));
    for (auto it = trail.rbegin(); it != trail.rend(); ++it) out.push_back(std::move(*it));
  }
  return out;
}

std::vector<int> Vocab::encode_text(const std::string& text) const { return encode(tokenize(text)); }

std::string Vocab::decode(const std::vector<int>& ids) const {
  std::string out;
  for (size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += word(ids[i]);
  }
  return out;
}

void Vocab::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw CorpusError("cannot write " + path);
  for (const auto& w : words_) out << w << "\n";
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot read " + path);
  std::vector<std::string> words;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) words.push_back(line);
  }
  return build(words);
}

// ---- generators ----

// Key/value form. Rows sit in a random subset of fixed vertical slots; the
// value words encode their slot, so a reader that knows a row's y position
// knows its value prefix. Value blocks are right-aligned, so the first value
// word's x position reveals how many words the block holds, and each row's
// last word names the slot of the row below it.
OcrDocument synth_form(const std::string& doc_id, Rng& rng, const SynthesisConfig& cfg) {
  using L = FormLayout;
  OcrDocument doc;
  doc.doc_id = doc_id;
  doc.family = "form";
  OcrPage page;
  page.width = L::page_w;
  page.height = L::page_h;

  auto add_block = [&](std::vector<WordBox> words) {
    for (auto& w : words) w.bbox = jittered(w.bbox, rng, cfg, L::page_w, L::page_h);
    page.blocks.push_back(make_block(std::move(words)));
  };

  add_block({word_at("doctype", 60, 40, L::word_w, L::word_h),
             word_at("form", 160, 40, L::word_w, L::word_h)});

  int n_rows = rng.uniform_int(L::min_rows, L::max_rows);
  std::vector<int> slots = rng.sample_without_replacement(L::n_slots, n_rows);
  std::vector<int> key_ids = rng.sample_without_replacement(L::n_keys, n_rows);
  rng.shuffle(key_ids);  // decouple key identity from vertical order

  for (int r = 0; r < n_rows; ++r) {
    int slot = slots[static_cast<size_t>(r)];
    double y0 = L::slot_y(slot);
    std::string key = "key" + two_digits(key_ids[static_cast<size_t>(r)]);
    add_block({word_at(key, L::key_x0, y0, L::word_w, L::word_h)});

    int n_v = rng.uniform_int(2, 3);
    std::string next_word =
        (r + 1 < n_rows) ? "n" + two_digits(slots[static_cast<size_t>(r + 1)]) : "nff";
    std::vector<std::string> value_words;
    for (int j = 0; j < n_v; ++j) {
      if (j > 0 && cfg.token_dropout > 0.0 && rng.bernoulli(cfg.token_dropout)) continue;
      value_words.push_back("v" + two_digits(slot) + "_" + std::to_string(j));
    }
    value_words.push_back(next_word);
    int m = static_cast<int>(value_words.size());
    double x0 = L::value_x1 - m * (L::word_w + L::word_gap) + L::word_gap;
    std::vector<WordBox> vwords;
    for (int j = 0; j < m; ++j)
      vwords.push_back(
          word_at(value_words[static_cast<size_t>(j)], x0 + j * (L::word_w + L::word_gap), y0,
                  L::word_w, L::word_h));
    add_block(std::move(vwords));

    std::string value_str;
    for (int j = 0; j < m; ++j) {
      if (j) value_str += ' ';
      value_str += value_words[static_cast<size_t>(j)];
    }
    doc.ann.kie.push_back({key, value_str});
  }

  add_block({word_at("stamp", 60, 1320, L::word_w, L::word_h)});
  doc.ann.cls = "form";
  doc.pages.push_back(std::move(page));
  return doc;
}

// Grid of cells. Each column carries its own word class; the row/column of a
// cell addresses it for question answering.
OcrDocument synth_table(const std::string& doc_id, Rng& rng, const SynthesisConfig& cfg) {
  OcrDocument doc;
  doc.doc_id = doc_id;
  doc.family = "table";
  OcrPage page;
  page.width = 1000;
  page.height = 1400;

  auto add_block = [&](std::vector<WordBox> words) {
    for (auto& w : words) w.bbox = jittered(w.bbox, rng, cfg, page.width, page.height);
    page.blocks.push_back(make_block(std::move(words)));
  };

  add_block({word_at("doctype", 60, 40, 90, 28), word_at("table", 160, 40, 90, 28)});

  int n_r = rng.uniform_int(3, 5);
  int n_c = rng.uniform_int(3, 4);
  for (int c = 0; c < n_c; ++c)
    add_block({word_at("col" + std::to_string(c), 60 + c * 220, 160, 90, 28)});

  std::vector<std::vector<std::string>> cells(static_cast<size_t>(n_r));
  for (int r = 0; r < n_r; ++r) {
    for (int c = 0; c < n_c; ++c) {
      std::string w = "cell" + std::to_string(c) + "_" + std::to_string(rng.uniform_int(0, 7));
      cells[static_cast<size_t>(r)].push_back(w);
      add_block({word_at(w, 60 + c * 220, 230 + r * 90, 90, 28)});
    }
  }

  for (int q = 0; q < 2; ++q) {
    int r = rng.uniform_int(0, n_r - 1), c = rng.uniform_int(0, n_c - 1);
    doc.ann.vqa.push_back({"row" + std::to_string(r) + " col" + std::to_string(c),
                           cells[static_cast<size_t>(r)][static_cast<size_t>(c)]});
  }
  for (int q = 0; q < 2; ++q) {
    int r = rng.uniform_int(0, n_r - 1), c = rng.uniform_int(0, n_c - 1);
    std::string truth = cells[static_cast<size_t>(r)][static_cast<size_t>(c)];
    bool positive = rng.bernoulli(0.5);
    std::string claim = truth;
    if (!positive) {
      // A wrong word from the same column class makes the negative non-trivial.
      int h = rng.uniform_int(0, 7);
      claim = "cell" + std::to_string(c) + "_" + std::to_string(h);
      if (claim == truth) positive = true;
    }
    doc.ann.nli.push_back(
        {"row" + std::to_string(r) + " col" + std::to_string(c) + " " + claim,
         positive ? "Yes" : "No"});
  }
  doc.ann.cls = "table";
  doc.pages.push_back(std::move(page));
  return doc;
}

// Free-flowing text paragraphs; plain filler with no key/value structure.
OcrDocument synth_letter(const std::string& doc_id, Rng& rng, const SynthesisConfig& cfg) {
  OcrDocument doc;
  doc.doc_id = doc_id;
  doc.family = "letter";
  OcrPage page;
  page.width = 1000;
  page.height = 1400;

  auto add_block = [&](std::vector<WordBox> words) {
    for (auto& w : words) w.bbox = jittered(w.bbox, rng, cfg, page.width, page.height);
    page.blocks.push_back(make_block(std::move(words)));
  };

  add_block({word_at("doctype", 60, 40, 90, 28), word_at("letter", 160, 40, 90, 28)});

  int n_para = rng.uniform_int(2, 3);
  double y = 180;
  for (int p = 0; p < n_para; ++p) {
    int n_words = rng.uniform_int(8, 18);
    std::vector<WordBox> words;
    int emitted = 0;
    for (int w = 0; w < n_words; ++w) {
      if (cfg.token_dropout > 0.0 && rng.bernoulli(cfg.token_dropout) && w > 0) continue;
      std::string text = "lw" + three_digits(rng.uniform_int(0, 199));
      words.push_back(
          word_at(text, 60 + (emitted % 5) * 180, y + (emitted / 5) * 34, 160, 28));
      ++emitted;
    }
    if (words.empty()) words.push_back(word_at("lw000", 60, y, 160, 28));
    add_block(std::move(words));
    y += ((emitted + 4) / 5) * 34 + 40;
  }
  doc.ann.cls = "letter";
  doc.pages.push_back(std::move(page));
  return doc;
}

// ---- corpus assembly ----

Corpus gen_corpus(const SynthesisConfig& cfg) {
  if (cfg.n_docs <= 0) throw CorpusError("corpus needs at least one training document");
  double wsum = cfg.weight_form + cfg.weight_table + cfg.weight_letter;
  if (wsum <= 0) throw CorpusError("family weights sum to zero");

  Corpus corpus;
  int total = cfg.n_docs + cfg.n_heldout;
  for (int i = 0; i < total; ++i) {
    Rng rng(derive_seed(cfg.seed, "doc", static_cast<uint64_t>(i)));
    double pick = rng.uniform() * wsum;
    std::string doc_id = "doc" + three_digits(i / 1000) + three_digits(i % 1000);
    OcrDocument doc;
    if (pick < cfg.weight_form)
      doc = synth_form(doc_id, rng, cfg);
    else if (pick < cfg.weight_form + cfg.weight_table)
      doc = synth_table(doc_id, rng, cfg);
    else
      doc = synth_letter(doc_id, rng, cfg);
    doc.validate();
    if (i < cfg.n_docs)
      corpus.train.push_back(std::move(doc));
    else
      corpus.heldout.push_back(std::move(doc));
  }
  for (int i = 0; i < FormLayout::n_keys; ++i) corpus.key_universe.push_back("key" + two_digits(i));
  corpus.class_universe = {"form", "table", "letter"};
  return corpus;
}

void write_corpus(const Corpus& corpus, const SynthesisConfig& cfg, const std::string& dir) {
  fs::create_directories(fs::path(dir) / "train");
  fs::create_directories(fs::path(dir) / "heldout");
  for (const auto& doc : corpus.train)
    save_ocr_document(doc, (fs::path(dir) / "train" / (doc.doc_id + ".json")).string());
  for (const auto& doc : corpus.heldout)
    save_ocr_document(doc, (fs::path(dir) / "heldout" / (doc.doc_id + ".json")).string());
  Vocab::corpus_vocab().save((fs::path(dir) / "vocab.txt").string());
  json meta;
  meta["seed"] = cfg.seed;
  meta["n_docs"] = cfg.n_docs;
  meta["n_heldout"] = cfg.n_heldout;
  meta["weight_form"] = cfg.weight_form;
  meta["weight_table"] = cfg.weight_table;
  meta["weight_letter"] = cfg.weight_letter;
  meta["jitter"] = cfg.jitter;
  meta["token_dropout"] = cfg.token_dropout;
  meta["key_universe"] = corpus.key_universe;
  meta["class_universe"] = corpus.class_universe;
  meta["vocab_file"] = "vocab.txt";
  std::ofstream out(fs::path(dir) / "corpus_meta.json");
  if (!out) throw CorpusError("cannot write corpus_meta.json under " + dir);
  out << meta.dump(1);
}

namespace {

std::vector<TokenizedDoc> load_split(const fs::path& dir) {
  if (!fs::exists(dir)) throw CorpusError("missing corpus split directory: " + dir.string());
  std::vector<fs::path> paths;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.path().extension() == ".json") paths.push_back(entry.path());
  std::sort(paths.begin(), paths.end());
  std::vector<TokenizedDoc> docs;
  docs.reserve(paths.size());
  for (const auto& p : paths) docs.push_back(flatten(load_ocr_document(p.string())));
  return docs;
}

}  // namespace

LoadedCorpus load_corpus(const std::string& dir) {
  fs::path root(dir);
  std::ifstream meta_in(root / "corpus_meta.json");
  if (!meta_in) throw CorpusError("missing corpus_meta.json under " + dir);
  json meta;
  try {
    meta_in >> meta;
  } catch (const json::exception& e) {
    throw CorpusError(std::string("corpus_meta.json is not valid json: ") + e.what());
  }
  LoadedCorpus lc;
  lc.train = load_split(root / "train");
  lc.heldout = load_split(root / "heldout");
  lc.key_universe = meta.at("key_universe").get<std::vector<std::string>>();
  lc.class_universe = meta.at("class_universe").get<std::vector<std::string>>();
  lc.vocab = Vocab::load((root / meta.value("vocab_file", "vocab.txt")).string());
  return lc;
}

}  // namespace boxlm
