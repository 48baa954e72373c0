#pragma once

// CVE report ingestion and dataset preparation: NVD JSON feed subset, a
// simplified CSV form, temporal/stratified splits, training-count buckets
// and synonym-replacement augmentation.

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "v2w/common.hpp"
#include "v2w/csv.hpp"
#include "v2w/cwe_hierarchy.hpp"

namespace v2w {

struct CveRecord {
  std::string id;
  std::string description;  // cleaned free text
  int year = 0;
  std::set<std::string> labels;  // CWE ids; empty = unlabeled
};

struct DatasetSplit {
  std::vector<CveRecord> train;
  std::vector<CveRecord> test1;
  std::vector<CveRecord> test2;
  std::vector<CveRecord> validation;
};

struct IngestTally {
  std::size_t items = 0;
  std::size_t kept = 0;
  std::size_t labeled = 0;
  std::size_t dropped_missing_description = 0;
  std::size_t dropped_empty_description = 0;
  std::size_t dropped_reject_placeholder = 0;
  std::size_t sentinel_labels = 0;
};

namespace detail {

inline bool is_sentinel_label(const std::string& v) {
  return v == "NVD-CWE-Other" || v == "NVD-CWE-noinfo";
}

}  // namespace detail

// Reads the NVD JSON 1.1 feed subset: CVE_Items[].cve.CVE_data_meta.ID,
// the English description, problemtype CWE values (sentinels discarded) and
// the year from publishedDate. In strict mode any item that would be skipped
// raises an error naming the item instead.
inline std::vector<CveRecord> ingest_nvd(const std::string& json_text,
                                         IngestTally* tally = nullptr,
                                         bool strict = false) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error("nvd: malformed JSON at byte " + std::to_string(e.byte) + ": " + e.what());
  }
  IngestTally local;
  IngestTally& t = tally ? *tally : local;
  std::vector<CveRecord> out;
  if (!doc.contains("CVE_Items") || !doc["CVE_Items"].is_array())
    throw Error("nvd: missing CVE_Items array");
  for (const auto& item : doc["CVE_Items"]) {
    ++t.items;
    std::string id;
    if (item.contains("cve") && item["cve"].contains("CVE_data_meta") &&
        item["cve"]["CVE_data_meta"].contains("ID"))
      id = item["cve"]["CVE_data_meta"]["ID"].get<std::string>();
    if (id.empty()) {
      if (strict) throw Error("nvd: item " + std::to_string(t.items) + " has no CVE id");
      ++t.dropped_missing_description;
      continue;
    }

    std::string description;
    bool has_description_array =
        item.contains("cve") && item["cve"].contains("description") &&
        item["cve"]["description"].contains("description_data") &&
        item["cve"]["description"]["description_data"].is_array();
    if (has_description_array) {
      for (const auto& d : item["cve"]["description"]["description_data"]) {
        if (d.value("lang", "") == "en") {
          description = d.value("value", "");
          break;
        }
      }
    } else {
      if (strict) throw Error("nvd: item " + id + " has no description array");
      ++t.dropped_missing_description;
      continue;
    }

    description = collapse_whitespace(description);
    if (description.empty()) {
      if (strict) throw Error("nvd: item " + id + " has an empty description");
      ++t.dropped_empty_description;
      continue;
    }
    if (starts_with(description, "** REJECT **")) {
      ++t.dropped_reject_placeholder;
      continue;
    }

    CveRecord rec;
    rec.id = id;
    rec.description = description;
    std::string published = item.value("publishedDate", "");
    if (published.size() >= 4) rec.year = std::atoi(published.substr(0, 4).c_str());

    if (item["cve"].contains("problemtype") &&
        item["cve"]["problemtype"].contains("problemtype_data")) {
      for (const auto& pt : item["cve"]["problemtype"]["problemtype_data"]) {
        if (!pt.contains("description")) continue;
        for (const auto& d : pt["description"]) {
          std::string v = d.value("value", "");
          if (v.empty()) continue;
          if (detail::is_sentinel_label(v)) {
            ++t.sentinel_labels;
            continue;
          }
          rec.labels.insert(v);
        }
      }
    }
    if (!rec.labels.empty()) ++t.labeled;
    ++t.kept;
    out.push_back(std::move(rec));
  }
  std::sort(out.begin(), out.end(),
            [](const CveRecord& a, const CveRecord& b) { return a.id < b.id; });
  return out;
}

// Simplified CSV corpus: header id,year,description,labels with labels
// ';'-separated. Used for tests and as the ingest output format.
inline std::string corpus_to_csv(const std::vector<CveRecord>& records) {
  std::string out = "id,year,description,labels\n";
  for (const auto& r : records) {
    std::string labels;
    for (const auto& l : r.labels) {
      if (!labels.empty()) labels.push_back(';');
      labels += l;
    }
    out += csv::format_row({r.id, std::to_string(r.year), r.description, labels});
  }
  return out;
}

inline std::vector<CveRecord> corpus_from_csv(const std::string& text) {
  auto rows = csv::parse(text);
  std::vector<CveRecord> out;
  std::size_t first = 0;
  if (!rows.empty() && !rows[0].empty() && rows[0][0] == "id") first = 1;
  for (std::size_t i = first; i < rows.size(); ++i) {
    const auto& row = rows[i];
    if (row.size() == 1 && row[0].empty()) continue;
    if (row.size() != 4)
      throw Error("corpus: row " + std::to_string(i + 1) + " needs 4 fields");
    CveRecord r;
    r.id = row[0];
    r.year = std::atoi(row[1].c_str());
    r.description = collapse_whitespace(row[2]);
    if (r.description.empty()) throw Error("corpus: row " + std::to_string(i + 1) + " has empty description");
    std::string cur;
    for (char c : row[3]) {
      if (c == ';') {
        if (!cur.empty()) r.labels.insert(cur);
        cur.clear();
      } else {
        cur.push_back(c);
      }
    }
    if (!cur.empty()) r.labels.insert(cur);
    out.push_back(std::move(r));
  }
  return out;
}

// Splits labels into hierarchy members and strays. Records whose labels all
// fall outside the hierarchy stay usable for pretraining only.
struct LabelFilterTally {
  std::size_t dropped_labels = 0;
  std::size_t records_left_unlabeled = 0;
};

inline std::vector<CveRecord> filter_labels_to_hierarchy(std::vector<CveRecord> records,
                                                         const CweHierarchy& h,
                                                         LabelFilterTally* tally = nullptr) {
  LabelFilterTally local;
  LabelFilterTally& t = tally ? *tally : local;
  for (auto& r : records) {
    if (r.labels.empty()) continue;
    std::set<std::string> keep;
    for (const auto& l : r.labels) {
      if (h.contains(l)) keep.insert(l);
      else ++t.dropped_labels;
    }
    if (keep.empty()) ++t.records_left_unlabeled;
    r.labels = std::move(keep);
  }
  return records;
}

struct SplitOutcome {
  DatasetSplit split;                    // labeled records only
  std::vector<CveRecord> pretrain_only;  // unlabeled records, usable for MLM
  std::size_t excluded_out_of_range = 0;
};

// Temporal partition: 1999-2017 train, 2018 test1, 2019-2020 test2. Years
// outside the window are excluded and tallied.
inline SplitOutcome temporal_split(const std::vector<CveRecord>& records) {
  SplitOutcome out;
  for (const auto& r : records) {
    if (r.year < 1999 || r.year > 2020) {
      ++out.excluded_out_of_range;
      continue;
    }
    if (r.labels.empty()) {
      if (r.year <= 2017) out.pretrain_only.push_back(r);
      continue;
    }
    if (r.year <= 2017) out.split.train.push_back(r);
    else if (r.year == 2018) out.split.test1.push_back(r);
    else out.split.test2.push_back(r);
  }
  return out;
}

// Stratified 70/10/20 train/validation/test split, deterministic under seed.
// Records are grouped by their lexicographically smallest label; categories
// with fewer than 3 members go entirely to train and are tallied.
struct RandomSplitOutcome : SplitOutcome {
  std::size_t small_category_count = 0;
};

inline RandomSplitOutcome random_split(const std::vector<CveRecord>& records,
                                       std::uint64_t seed) {
  RandomSplitOutcome out;
  std::map<std::string, std::vector<const CveRecord*>> by_category;
  for (const auto& r : records) {
    if (r.labels.empty()) {
      out.pretrain_only.push_back(r);
      continue;
    }
    by_category[*r.labels.begin()].push_back(&r);
  }
  for (auto& [category, members] : by_category) {
    std::sort(members.begin(), members.end(),
              [](const CveRecord* a, const CveRecord* b) { return a->id < b->id; });
    auto rng = make_rng(derive_seed(seed, "random_split", fnv1a(category)));
    std::shuffle(members.begin(), members.end(), rng);
    std::size_t n = members.size();
    if (n < 3) {
      ++out.small_category_count;
      for (const auto* m : members) out.split.train.push_back(*m);
      continue;
    }
    std::size_t n_val = n / 10;        // floor(0.1 n)
    std::size_t n_test = n * 2 / 10;   // floor(0.2 n)
    std::size_t n_train = n - n_val - n_test;
    for (std::size_t i = 0; i < n; ++i) {
      if (i < n_train) out.split.train.push_back(*members[i]);
      else if (i < n_train + n_val) out.split.validation.push_back(*members[i]);
      else out.split.test1.push_back(*members[i]);
    }
  }
  auto by_id = [](const CveRecord& a, const CveRecord& b) { return a.id < b.id; };
  std::sort(out.split.train.begin(), out.split.train.end(), by_id);
  std::sort(out.split.validation.begin(), out.split.validation.end(), by_id);
  std::sort(out.split.test1.begin(), out.split.test1.end(), by_id);
  return out;
}

// Per-CWE number of training records carrying that label.
inline std::map<std::string, std::size_t> training_counts(const std::vector<CveRecord>& train) {
  std::map<std::string, std::size_t> counts;
  for (const auto& r : train)
    for (const auto& l : r.labels) ++counts[l];
  return counts;
}

// Buckets a test list by the training frequency of each CVE's weakness. A
// multi-label CVE counts by its best-covered label; zero-shot means every
// label is unseen in training. Buckets overlap by design ([1,50] within
// [1,100]).
inline std::map<std::string, std::vector<CveRecord>> bucket_by_training_count(
    const std::vector<CveRecord>& test, const std::vector<CveRecord>& train,
    const CweHierarchy& h) {
  auto counts = training_counts(train);
  std::map<std::string, std::vector<CveRecord>> buckets;
  for (const char* label : {"zero-shot", "[1,50]", "[51,100]", "[101,150]", "[1,100]", ">100"})
    buckets[label];
  for (const auto& r : test) {
    std::size_t freq = 0;
    bool any_label = false;
    for (const auto& l : r.labels) {
      if (!h.contains(l)) continue;
      any_label = true;
      auto it = counts.find(l);
      if (it != counts.end()) freq = std::max(freq, it->second);
    }
    if (!any_label) continue;
    if (freq == 0) buckets["zero-shot"].push_back(r);
    if (freq >= 1 && freq <= 50) buckets["[1,50]"].push_back(r);
    if (freq >= 51 && freq <= 100) buckets["[51,100]"].push_back(r);
    if (freq >= 101 && freq <= 150) buckets["[101,150]"].push_back(r);
    if (freq >= 1 && freq <= 100) buckets["[1,100]"].push_back(r);
    if (freq > 100) buckets[">100"].push_back(r);
  }
  return buckets;
}

// word -> synonyms, loaded from a flat CSV `word,synonym` (one pair per row).
using SynonymLexicon = std::map<std::string, std::vector<std::string>>;

inline SynonymLexicon load_synonyms(const std::string& csv_text) {
  SynonymLexicon lex;
  auto rows = csv::parse(csv_text);
  std::size_t first = 0;
  if (!rows.empty() && !rows[0].empty() && rows[0][0] == "word") first = 1;
  for (std::size_t i = first; i < rows.size(); ++i) {
    const auto& row = rows[i];
    if (row.size() == 1 && row[0].empty()) continue;
    if (row.size() != 2) throw Error("synonyms: row " + std::to_string(i + 1) + " needs 2 fields");
    lex[to_lower(row[0])].push_back(to_lower(row[1]));
  }
  return lex;
}

// Sentence boundary: ". " followed by an uppercase letter.
inline std::vector<std::string> split_sentences(const std::string& text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i + 2 < text.size(); ++i) {
    if (text[i] == '.' && text[i + 1] == ' ' &&
        std::isupper(static_cast<unsigned char>(text[i + 2]))) {
      out.push_back(text.substr(start, i - start + 1));
      start = i + 2;
    }
  }
  if (start < text.size()) out.push_back(text.substr(start));
  return out;
}

struct AugmentTally {
  std::size_t synthetic_records = 0;
  std::size_t skipped_empty_pool = 0;
};

namespace detail {

inline std::string substitute_synonyms(const std::string& sentence, const SynonymLexicon& lex,
                                       std::mt19937_64& rng) {
  std::vector<std::string> words;
  std::string cur;
  for (char c : sentence) {
    if (c == ' ') {
      if (!cur.empty()) words.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) words.push_back(cur);

  // A word matches the lexicon after stripping trailing punctuation.
  std::vector<std::size_t> candidates;
  std::vector<std::pair<std::string, std::string>> stripped;  // (core, tail)
  stripped.resize(words.size());
  for (std::size_t i = 0; i < words.size(); ++i) {
    std::string core = words[i];
    std::string tail;
    while (!core.empty() && std::ispunct(static_cast<unsigned char>(core.back()))) {
      tail.insert(tail.begin(), core.back());
      core.pop_back();
    }
    stripped[i] = {core, tail};
    if (lex.count(to_lower(core))) candidates.push_back(i);
  }
  if (!candidates.empty()) {
    std::size_t forced = candidates[std::uniform_int_distribution<std::size_t>(
        0, candidates.size() - 1)(rng)];
    for (std::size_t idx : candidates) {
      bool replace = idx == forced ||
                     std::uniform_real_distribution<double>(0.0, 1.0)(rng) < 0.3;
      if (!replace) continue;
      const auto& options = lex.at(to_lower(stripped[idx].first));
      const std::string& synonym =
          options[std::uniform_int_distribution<std::size_t>(0, options.size() - 1)(rng)];
      words[idx] = synonym + stripped[idx].second;
    }
  }
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out.push_back(' ');
    out += words[i];
  }
  return out;
}

}  // namespace detail

// For each CWE below `limit` training records, draws sentences from the pool
// of its CVEs' sentences and emits synonym-substituted synthetic records
// labeled with that CWE until the count reaches `limit` (bounded by
// max_per_cwe). Returns only the synthetic records.
inline std::vector<CveRecord> augment(const std::vector<CveRecord>& train,
                                      const CweHierarchy& h, std::size_t limit,
                                      const SynonymLexicon& lex, std::uint64_t seed,
                                      AugmentTally* tally = nullptr,
                                      std::size_t max_per_cwe = 1000) {
  AugmentTally local;
  AugmentTally& t = tally ? *tally : local;
  auto counts = training_counts(train);

  std::map<std::string, std::vector<std::string>> pools;
  std::map<std::string, int> source_year;
  for (const auto& r : train) {
    auto sentences = split_sentences(r.description);
    for (const auto& l : r.labels) {
      if (!h.contains(l)) continue;
      auto& pool = pools[l];
      pool.insert(pool.end(), sentences.begin(), sentences.end());
      source_year[l] = std::max(source_year[l], r.year);
    }
  }

  std::vector<CveRecord> synthetic;
  for (const auto& [cwe, count] : counts) {
    if (!h.contains(cwe)) continue;
    if (count >= limit) continue;
    const auto& pool = pools[cwe];
    if (pool.empty()) {
      ++t.skipped_empty_pool;
      continue;
    }
    std::size_t need = std::min(limit - count, max_per_cwe);
    auto rng = make_rng(derive_seed(seed, "augment", fnv1a(cwe)));
    for (std::size_t k = 0; k < need; ++k) {
      std::size_t n_sentences = std::uniform_int_distribution<std::size_t>(
          1, std::min<std::size_t>(3, pool.size()))(rng);
      std::string text;
      for (std::size_t s = 0; s < n_sentences; ++s) {
        const std::string& sentence =
            pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
        if (!text.empty()) text.push_back(' ');
        text += detail::substitute_synonyms(sentence, lex, rng);
      }
      CveRecord rec;
      rec.id = "SYN-" + cwe + "-" + std::to_string(k);
      rec.description = collapse_whitespace(text);
      rec.year = source_year[cwe];
      rec.labels = {cwe};
      synthetic.push_back(std::move(rec));
      ++t.synthetic_records;
    }
  }
  return synthetic;
}

}  // namespace v2w
