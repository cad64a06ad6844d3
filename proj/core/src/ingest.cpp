#include "mvp/ingest.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <set>

#include <fmt/format.h>

#include "mvp/record_io.hpp"

namespace mvp::ingest {

using collection::PropertyKey;
using nlohmann::json;

ParseResult parse_records(std::istream& is) {
  ParseResult out;
  std::set<std::pair<std::string, std::string>> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) {
      out.rejects.push_back({line_no, "empty line", line});
      continue;
    }
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) {
      out.rejects.push_back({line_no, "malformed json", line});
      continue;
    }
    try {
      auto record = collection::record_from_json(j);
      if (!seen.emplace(record.collection_id, record.token_id).second) {
        out.rejects.push_back({line_no, "duplicate token_id", line});
        continue;
      }
      out.records.push_back(std::move(record));
    } catch (const collection::RecordError& e) {
      out.rejects.push_back({line_no, e.what(), line});
    }
  }
  if (is.bad()) throw std::runtime_error("read error on record stream");
  return out;
}

ParseResult parse_records_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open input: " + path);
  return parse_records(in);
}

void write_rejects(std::ostream& os, const std::vector<Reject>& rejects) {
  for (const auto& r : rejects) {
    os << json{{"line", r.line}, {"reason", r.reason}, {"text", r.text}}.dump() << '\n';
  }
}

namespace {

template <typename Pred>
FilterResult partition_records(const std::vector<NftRecord>& records, Pred remove) {
  FilterResult out;
  for (const auto& r : records) {
    (remove(r) ? out.removed : out.kept).push_back(r);
  }
  return out;
}

template <typename Pred>
FilterResult partition_collections(const std::vector<Collection>& collections, Pred remove) {
  FilterResult out;
  for (const auto& c : collections) {
    auto& dst = remove(c) ? out.removed : out.kept;
    dst.insert(dst.end(), c.items().begin(), c.items().end());
  }
  return out;
}

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

}  // namespace

FilterResult filter_non_image(const std::vector<NftRecord>& records) {
  return partition_records(records, [](const NftRecord& r) {
    return r.media_type != collection::MediaType::kImage;
  });
}

FilterResult filter_resolution(const std::vector<NftRecord>& records, long min_side) {
  return partition_records(records, [min_side](const NftRecord& r) {
    return std::min(r.width, r.height) < min_side || r.width != r.height;
  });
}

double median_property_count(const Collection& c) {
  if (c.empty()) return 0.0;
  std::vector<std::size_t> counts;
  counts.reserve(c.size());
  for (const auto& item : c.items()) counts.push_back(item.properties.size());
  std::sort(counts.begin(), counts.end());
  const std::size_t n = counts.size();
  if (n % 2 == 1) return static_cast<double>(counts[n / 2]);
  return 0.5 * static_cast<double>(counts[n / 2 - 1] + counts[n / 2]);
}

FilterResult filter_min_properties(const std::vector<Collection>& collections,
                                   std::size_t min_props) {
  return partition_collections(collections, [min_props](const Collection& c) {
    return median_property_count(c) < static_cast<double>(min_props);
  });
}

std::vector<std::string> default_blocklist() { return {"http", "0x", "www"}; }

ContentPredicate blocklist_predicate(std::vector<std::string> blocklist) {
  std::vector<std::string> needles;
  for (auto& b : blocklist) {
    if (!b.empty()) needles.push_back(lower(b));
  }
  return [needles = std::move(needles)](const NftRecord& r) {
    for (const auto& p : r.properties) {
      const auto value = lower(p.value);
      for (const auto& n : needles) {
        if (value.find(n) != std::string::npos) return true;
      }
    }
    return false;
  };
}

FilterResult filter_content(const std::vector<NftRecord>& records, const ContentPredicate& reject) {
  return partition_records(records, reject);
}

FilterResult filter_content(const std::vector<NftRecord>& records,
                            const std::vector<std::string>& blocklist) {
  return filter_content(records, blocklist_predicate(blocklist));
}

double duplicate_ratio(const Collection& c) {
  if (c.empty()) return 0.0;
  std::map<std::set<PropertyKey>, std::size_t> groups;
  for (const auto& item : c.items()) ++groups[item.properties];
  std::size_t duplicated = 0;
  for (const auto& [props, n] : groups) {
    if (n > 1) duplicated += n;
  }
  return static_cast<double>(duplicated) / static_cast<double>(c.size());
}

FilterResult filter_duplicates(const std::vector<Collection>& collections, double dup_ratio_max) {
  return partition_collections(collections, [dup_ratio_max](const Collection& c) {
    return duplicate_ratio(c) > dup_ratio_max;
  });
}

std::size_t CleanStats::records_in() const {
  return stages.empty() ? 0 : stages.front().records_in;
}

std::size_t CleanStats::records_out() const {
  return stages.empty() ? 0 : stages.back().records_in - stages.back().records_removed;
}

bool CleanStats::conserved() const {
  for (std::size_t k = 0; k < stages.size(); ++k) {
    const auto& s = stages[k];
    if (s.records_removed > s.records_in) return false;
    if (s.fraction_removed < 0.0 || s.fraction_removed > 1.0) return false;
    if (k + 1 < stages.size() && stages[k + 1].records_in != s.records_in - s.records_removed) {
      return false;
    }
  }
  return true;
}

namespace {

std::size_t count_collections(const std::vector<NftRecord>& records) {
  std::set<std::string> ids;
  for (const auto& r : records) ids.insert(r.collection_id);
  return ids.size();
}

}  // namespace

PipelineRun run_pipeline(const std::vector<NftRecord>& records, const PipelineOptions& options) {
  if (options.stages < 1 || options.stages > 5) {
    throw std::invalid_argument("pipeline stage count must be in 1..5");
  }
  const auto content =
      options.content_predicate ? options.content_predicate : blocklist_predicate(options.blocklist);

  using Stage = std::function<FilterResult(const std::vector<NftRecord>&)>;
  const std::vector<std::pair<std::string, Stage>> stages = {
      {"non_image", [](const auto& in) { return filter_non_image(in); }},
      {"resolution", [&](const auto& in) { return filter_resolution(in, options.min_side); }},
      {"min_properties",
       [&](const auto& in) {
         return filter_min_properties(collection::group_by_collection(in), options.min_props);
       }},
      {"content", [&](const auto& in) { return filter_content(in, content); }},
      {"duplicates",
       [&](const auto& in) {
         return filter_duplicates(collection::group_by_collection(in), options.dup_ratio_max);
       }},
  };

  PipelineRun run;
  std::vector<NftRecord> current = records;
  for (int k = 0; k < options.stages; ++k) {
    const auto& [name, apply] = stages[static_cast<std::size_t>(k)];
    auto result = apply(current);
    StageStats s;
    s.stage = name;
    s.records_in = current.size();
    s.records_removed = result.removed.size();
    s.fraction_removed =
        s.records_in == 0 ? 0.0
                          : static_cast<double>(s.records_removed) / static_cast<double>(s.records_in);
    s.collections_in = count_collections(current);
    s.collections_removed = s.collections_in - count_collections(result.kept);
    run.stats.stages.push_back(std::move(s));
    run.removed.insert(run.removed.end(), result.removed.begin(), result.removed.end());
    current = std::move(result.kept);
  }
  run.kept = std::move(current);
  return run;
}

const CleanStats& clean_stats(const PipelineRun& run) { return run.stats; }

json to_json(const CleanStats& stats) {
  json stages = json::array();
  for (const auto& s : stats.stages) {
    stages.push_back({{"stage", s.stage},
                      {"records_in", s.records_in},
                      {"records_removed", s.records_removed},
                      {"fraction_removed", s.fraction_removed},
                      {"collections_in", s.collections_in},
                      {"collections_removed", s.collections_removed}});
  }
  return {{"stages", std::move(stages)},
          {"records_in", stats.records_in()},
          {"records_out", stats.records_out()}};
}

void write_stats_text(std::ostream& os, const CleanStats& stats) {
  os << fmt::format("{:<16}{:>12}{:>12}{:>10}{:>14}\n", "stage", "records_in", "removed",
                    "fraction", "coll_removed");
  for (const auto& s : stats.stages) {
    os << fmt::format("{:<16}{:>12}{:>12}{:>9.2f}%{:>14}\n", s.stage, s.records_in,
                      s.records_removed, 100.0 * s.fraction_removed, s.collections_removed);
  }
  os << fmt::format("{:<16}{:>12}\n", "kept", stats.records_out());
}

void write_stats_csv(std::ostream& os, const CleanStats& stats) {
  os << "stage,records_in,records_removed,fraction_removed,collections_in,collections_removed\n";
  for (const auto& s : stats.stages) {
    os << fmt::format("{},{},{},{:.6f},{},{}\n", s.stage, s.records_in, s.records_removed,
                      s.fraction_removed, s.collections_in, s.collections_removed);
  }
}

// ---------------------------------------------------------------------------

GroupSampler::GroupSampler(std::vector<std::size_t> group_sizes, std::vector<double> group_weights,
                           std::uint64_t seed)
    : sizes_(std::move(group_sizes)), rng_(seed) {
  if (sizes_.empty()) throw std::invalid_argument("sampler needs at least one group");
  if (group_weights.size() != sizes_.size()) {
    throw std::invalid_argument("sampler weights and groups differ in length");
  }
  double total = 0.0;
  for (std::size_t g = 0; g < sizes_.size(); ++g) {
    if (sizes_[g] == 0) throw std::invalid_argument(fmt::format("group {} is empty", g));
    if (!(group_weights[g] >= 0.0)) throw std::invalid_argument("negative group weight");
    total += group_weights[g];
  }
  if (!(total > 0.0)) throw std::invalid_argument("group weights sum to zero");
  probs_.reserve(sizes_.size());
  for (double w : group_weights) probs_.push_back(w / total);
}

ItemRef GroupSampler::next() {
  const std::size_t g = rng_.discrete(probs_);
  return {g, rng_.uniform_index(sizes_[g])};
}

GroupSampler collection_weighted_sampler(const std::vector<std::size_t>& collection_sizes,
                                         double alpha, std::uint64_t seed) {
  if (!(alpha > 0.0 && alpha <= 1.0)) {
    throw std::invalid_argument(fmt::format("alpha must be in (0, 1], got {}", alpha));
  }
  std::vector<double> weights;
  weights.reserve(collection_sizes.size());
  for (auto n : collection_sizes) weights.push_back(std::pow(static_cast<double>(n), alpha));
  return GroupSampler(collection_sizes, std::move(weights), seed);
}

GroupSampler collection_weighted_sampler(const std::vector<Collection>& collections, double alpha,
                                         std::uint64_t seed) {
  std::vector<std::size_t> sizes;
  for (const auto& c : collections) sizes.push_back(c.size());
  return collection_weighted_sampler(sizes, alpha, seed);
}

namespace {

std::vector<std::vector<std::size_t>> group_labels(const std::vector<int>& labels, int n) {
  if (n < 1) throw std::invalid_argument("need at least one category");
  std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= n) {
      throw std::invalid_argument(fmt::format("label {} outside [0, {})", labels[i], n));
    }
    members[static_cast<std::size_t>(labels[i])].push_back(i);
  }
  for (int c = 0; c < n; ++c) {
    if (members[static_cast<std::size_t>(c)].empty()) {
      throw std::invalid_argument(fmt::format("category {} is empty", c));
    }
  }
  return members;
}

std::vector<std::size_t> sizes_of(const std::vector<std::vector<std::size_t>>& members) {
  std::vector<std::size_t> out;
  for (const auto& m : members) out.push_back(m.size());
  return out;
}

}  // namespace

CategoryBalancedSampler::CategoryBalancedSampler(const std::vector<int>& labels, int n_categories,
                                                 std::uint64_t seed)
    : members_(group_labels(labels, n_categories)),
      groups_(sizes_of(members_), std::vector<double>(members_.size(), 1.0), seed) {}

std::size_t CategoryBalancedSampler::next() {
  const auto ref = groups_.next();
  return members_[ref.group][ref.item];
}

CategoryBalancedSampler category_balanced_sampler(const std::vector<int>& labels,
                                                  int n_categories, std::uint64_t seed) {
  return CategoryBalancedSampler(labels, n_categories, seed);
}

// ---------------------------------------------------------------------------

std::vector<double> zipf_weights(std::size_t values_per_type, double skew) {
  std::vector<double> w(values_per_type);
  double total = 0.0;
  for (std::size_t j = 0; j < values_per_type; ++j) {
    w[j] = std::pow(static_cast<double>(j + 1), -skew);
    total += w[j];
  }
  for (auto& x : w) x /= total;
  return w;
}

Collection synth_collection(const SynthOptions& o) {
  if (o.n_items == 0 || o.n_trait_types == 0 || o.values_per_type == 0) {
    throw std::invalid_argument("synth_collection sizes must be positive");
  }
  if (!(o.presence_prob > 0.0 && o.presence_prob <= 1.0)) {
    throw std::invalid_argument("presence_prob must be in (0, 1]");
  }
  const std::string id = o.collection_id.empty() ? fmt::format("synth-{}", o.seed) : o.collection_id;
  const auto weights = zipf_weights(o.values_per_type, o.zipf_skew);
  Rng rng(derive_seed(o.seed, 0x53594e5448ULL));

  Collection out(id);
  for (std::size_t i = 0; i < o.n_items; ++i) {
    NftRecord r;
    r.collection_id = id;
    r.token_id = fmt::format("{:06d}", i);
    for (std::size_t t = 0; t < o.n_trait_types; ++t) {
      const bool present = rng.bernoulli(o.presence_prob);
      const std::size_t v = rng.discrete(weights);
      if (present) {
        r.properties.insert(PropertyKey{fmt::format("trait_{}", t), fmt::format("v{}", v)});
      }
    }
    r.width = o.side;
    r.height = o.side;
    r.media_type = collection::MediaType::kImage;
    out.add(std::move(r));
  }
  return out;
}

}  // namespace mvp::ingest
