#include "postkit/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>

#include "json.hpp"
#include "postkit/error.hpp"
#include "postkit/keyed_random.hpp"
#include "postkit/parallel.hpp"
#include "postkit/utf8.hpp"

namespace postkit {

namespace {

using json = nlohmann::json;

constexpr double kSmoothing = 1.0;
constexpr std::size_t kBatchLines = 4096;

struct ParsedLine {
  bool malformed = false;
  Document doc;
};

ParsedLine parse_doc_line(std::string_view line) {
  ParsedLine out;
  json j = json::parse(line, nullptr, /*allow_exceptions=*/false);
  if (!j.is_object() || !j.contains("id") || !j["id"].is_string() || !j.contains("text") ||
      !j["text"].is_string()) {
    out.malformed = true;
    return out;
  }
  out.doc.id = j["id"].get<std::string>();
  out.doc.text = j["text"].get<std::string>();
  if (j.contains("lang") && !j["lang"].is_null()) {
    if (!j["lang"].is_string()) {
      out.malformed = true;
      return out;
    }
    out.doc.metadata_lang = j["lang"].get<std::string>();
  }
  return out;
}

bool blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](char c) {
    return c == ' ' || c == '\t' || c == '\r' || c == '\n';
  });
}

}  // namespace

std::vector<std::string_view> char_ngrams(std::string_view text) {
  const auto cps = utf8::decode(text);
  std::vector<std::string_view> grams;
  grams.reserve(cps.size() * 3);
  for (std::size_t i = 0; i < cps.size(); ++i) {
    bool all_space = true;
    for (std::size_t n = 1; n <= 3 && i + n <= cps.size(); ++n) {
      all_space = all_space && utf8::is_space(cps[i + n - 1].value);
      if (all_space) continue;
      const std::size_t begin = cps[i].offset;
      const std::size_t end = cps[i + n - 1].offset + cps[i + n - 1].length;
      grams.push_back(text.substr(begin, end - begin));
    }
  }
  return grams;
}

LangIdModel::LangIdModel(std::vector<std::string> labels, std::uint32_t buckets)
    : labels_(std::move(labels)), buckets_(buckets) {
  if (labels_.empty()) throw Error(Errc::kInvalidArgument, "language model needs labels");
  if (buckets_ == 0) throw Error(Errc::kInvalidArgument, "language model needs buckets");
  weights_.assign(labels_.size() * buckets_, 0.0f);
}

LangIdModel LangIdModel::uniform(std::vector<std::string> labels, std::uint32_t buckets) {
  return LangIdModel(std::move(labels), buckets);
}

std::uint32_t LangIdModel::bucket_of(std::string_view ngram) const noexcept {
  return static_cast<std::uint32_t>(fnv1a64(ngram) % buckets_);
}

std::vector<double> LangIdModel::scores(std::string_view text) const {
  const auto grams = char_ngrams(text);
  if (grams.empty()) throw Error(Errc::kEmptyText, "text has no scorable characters");
  std::vector<double> s(labels_.size(), 0.0);
  for (auto g : grams) {
    const std::uint32_t b = bucket_of(g);
    for (std::size_t l = 0; l < labels_.size(); ++l) s[l] += weight(l, b);
  }
  for (auto& v : s) v /= static_cast<double>(grams.size());
  return s;
}

LangIdModel train_langid(std::span<const LabeledText> corpus, std::uint32_t buckets) {
  if (corpus.empty()) throw Error(Errc::kEmptyCorpus, "no training documents");
  std::vector<std::string> labels;
  for (const auto& d : corpus) labels.push_back(d.label);
  std::sort(labels.begin(), labels.end());
  labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
  if (labels.size() < 2) {
    throw Error(Errc::kSingleLabel, "need at least two labels, got '" + labels.front() + "'");
  }

  LangIdModel model(labels, buckets);
  std::vector<std::uint64_t> counts(labels.size() * buckets, 0);
  std::vector<std::uint64_t> totals(labels.size(), 0);
  for (const auto& d : corpus) {
    const auto l = static_cast<std::size_t>(
        std::lower_bound(labels.begin(), labels.end(), d.label) - labels.begin());
    for (auto g : char_ngrams(d.text)) {
      ++counts[l * buckets + model.bucket_of(g)];
      ++totals[l];
    }
  }
  for (std::size_t l = 0; l < labels.size(); ++l) {
    const double denom = static_cast<double>(totals[l]) + kSmoothing * buckets;
    for (std::uint32_t b = 0; b < buckets; ++b) {
      const double c = static_cast<double>(counts[l * buckets + b]);
      model.set_weight(l, b, static_cast<float>(std::log((c + kSmoothing) / denom)));
    }
  }
  return model;
}

Prediction predict_lang(const LangIdModel& model, std::string_view text) {
  const auto s = model.scores(text);
  const auto best = static_cast<std::size_t>(std::max_element(s.begin(), s.end()) - s.begin());
  double z = 0.0;
  for (double v : s) z += std::exp(v - s[best]);
  return {model.labels()[best], 1.0 / z};
}

std::string strip_html(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool in_tag = false;
  for (char c : text) {
    if (in_tag) {
      in_tag = c != '>';
    } else if (c == '<') {
      in_tag = true;
    } else {
      out.push_back(c);
    }
  }
  return out;
}

std::string_view drop_reason_name(DropReason r) noexcept {
  switch (r) {
    case DropReason::kNone: return "retained";
    case DropReason::kMalformed: return "malformed";
    case DropReason::kEmpty: return "empty";
    case DropReason::kNonTargetLanguage: return "non_target_language";
    case DropReason::kLowConfidence: return "low_confidence";
    case DropReason::kMetadataMismatch: return "metadata_mismatch";
  }
  return "?";
}

FilterDecision judge_document(const LangIdModel& model, const Document& doc,
                              const FilterOptions& opts) {
  FilterDecision d;
  d.text = opts.prefilter ? opts.prefilter(doc.text) : doc.text;
  if (char_ngrams(d.text).empty()) {
    d.reason = DropReason::kEmpty;
    return d;
  }
  if (!opts.check_classifier) {
    if (opts.check_metadata &&
        (!doc.metadata_lang || !opts.langs.contains(*doc.metadata_lang))) {
      d.reason = DropReason::kMetadataMismatch;
    }
    return d;
  }
  d.prediction = predict_lang(model, d.text);
  if (!opts.langs.contains(d.prediction->label)) {
    d.reason = DropReason::kNonTargetLanguage;
  } else if (d.prediction->confidence < opts.tau) {
    d.reason = DropReason::kLowConfidence;
  } else if (opts.check_metadata && doc.metadata_lang &&
             *doc.metadata_lang != d.prediction->label) {
    d.reason = DropReason::kMetadataMismatch;
  }
  return d;
}

void FilterStats::record(DropReason r) noexcept {
  ++total;
  switch (r) {
    case DropReason::kNone: ++retained; break;
    case DropReason::kMalformed: ++malformed; break;
    case DropReason::kEmpty: ++empty; break;
    case DropReason::kNonTargetLanguage: ++non_target_language; break;
    case DropReason::kLowConfidence: ++low_confidence; break;
    case DropReason::kMetadataMismatch: ++metadata_mismatch; break;
  }
}

FilterStats& FilterStats::operator+=(const FilterStats& o) noexcept {
  total += o.total;
  retained += o.retained;
  malformed += o.malformed;
  empty += o.empty;
  non_target_language += o.non_target_language;
  low_confidence += o.low_confidence;
  metadata_mismatch += o.metadata_mismatch;
  return *this;
}

std::string stats_to_json(const FilterStats& s) {
  return json{{"total", s.total},
              {"retained", s.retained},
              {"dropped",
               {{"malformed", s.malformed},
                {"empty", s.empty},
                {"non_target_language", s.non_target_language},
                {"low_confidence", s.low_confidence},
                {"metadata_mismatch", s.metadata_mismatch}}}}
      .dump();
}

std::vector<Document> filter_docs(std::span<const Document> docs, const LangIdModel& model,
                                  const FilterOptions& opts, FilterStats& stats) {
  if (!(opts.tau >= 0.0 && opts.tau <= 1.0)) {
    throw Error(Errc::kInvalidArgument, "tau must lie in [0, 1]");
  }
  std::vector<FilterDecision> decisions(docs.size());
  parallel_for(docs.size(), opts.jobs,
               [&](std::size_t i) { decisions[i] = judge_document(model, docs[i], opts); });
  std::vector<Document> kept;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    stats.record(decisions[i].reason);
    if (decisions[i].retained()) {
      kept.push_back({docs[i].id, std::move(decisions[i].text), docs[i].metadata_lang});
    }
  }
  return kept;
}

FilterStats filter_jsonl(std::istream& in, std::ostream& out, const LangIdModel& model,
                         const FilterOptions& opts) {
  if (!(opts.tau >= 0.0 && opts.tau <= 1.0)) {
    throw Error(Errc::kInvalidArgument, "tau must lie in [0, 1]");
  }
  FilterStats stats;
  std::vector<std::string> lines;
  auto flush = [&] {
    std::vector<ParsedLine> parsed(lines.size());
    std::vector<FilterDecision> decisions(lines.size());
    parallel_for(lines.size(), opts.jobs, [&](std::size_t i) {
      parsed[i] = parse_doc_line(lines[i]);
      if (!parsed[i].malformed) decisions[i] = judge_document(model, parsed[i].doc, opts);
    });
    for (std::size_t i = 0; i < lines.size(); ++i) {
      if (parsed[i].malformed) {
        stats.record(DropReason::kMalformed);
        continue;
      }
      stats.record(decisions[i].reason);
      if (!decisions[i].retained()) continue;
      json o{{"id", parsed[i].doc.id}, {"text", decisions[i].text}};
      if (parsed[i].doc.metadata_lang) o["lang"] = *parsed[i].doc.metadata_lang;
      out << o.dump(-1, ' ', false, json::error_handler_t::replace) << '\n';
    }
    lines.clear();
  };
  std::string line;
  while (std::getline(in, line)) {
    if (blank(line)) continue;
    lines.push_back(std::move(line));
    if (lines.size() == kBatchLines) flush();
  }
  flush();
  if (!out) throw Error(Errc::kIoFailure, "failed writing filtered documents");
  return stats;
}

std::vector<LabeledText> read_labeled_jsonl(std::istream& in) {
  std::vector<LabeledText> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (blank(line)) continue;
    json j = json::parse(line, nullptr, false);
    if (!j.is_object() || !j.contains("text") || !j["text"].is_string() || !j.contains("lang") ||
        !j["lang"].is_string()) {
      throw Error(Errc::kInvalidArgument,
                  "training line " + std::to_string(n) + " needs string 'text' and 'lang'");
    }
    out.push_back({j["lang"].get<std::string>(), j["text"].get<std::string>()});
  }
  return out;
}

}  // namespace postkit
