#pragma once

// Metadata ingestion and the staged cleaning pipeline.
//
// Stages always run in this order:
//   1. non_image       drop records whose media type is not an image
//   2. resolution      drop low-resolution or non-square images
//   3. min_properties  drop collections whose median property count is too low
//   4. content         drop records whose property values match the blocklist
//   5. duplicates      drop collections with too many repeated property sets

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mvp/collection.hpp"
#include "mvp/rng.hpp"

namespace mvp::ingest {

using collection::Collection;
using collection::NftRecord;

struct Reject {
  std::size_t line = 0;  // 1-based
  std::string reason;
  std::string text;
};

struct ParseResult {
  std::vector<NftRecord> records;
  std::vector<Reject> rejects;
};

/// Lenient reader: every line yields either a record or a reject (blank lines
/// included), so records.size() + rejects.size() equals the line count. A
/// repeated (collection_id, token_id) is rejected as "duplicate token_id".
ParseResult parse_records(std::istream& is);
/// Throws std::runtime_error if the file cannot be opened.
ParseResult parse_records_file(const std::string& path);

void write_rejects(std::ostream& os, const std::vector<Reject>& rejects);

struct FilterResult {
  std::vector<NftRecord> kept;
  std::vector<NftRecord> removed;
};

FilterResult filter_non_image(const std::vector<NftRecord>& records);

FilterResult filter_resolution(const std::vector<NftRecord>& records, long min_side = 512);

/// Median of the per-item property counts (mean of the middle pair for even sizes).
double median_property_count(const Collection& c);

/// Drops whole collections whose median property count is below `min_props`.
FilterResult filter_min_properties(const std::vector<Collection>& collections,
                                   std::size_t min_props = 3);

/// Record predicate for the content stage: true means "remove".
using ContentPredicate = std::function<bool(const NftRecord&)>;

std::vector<std::string> default_blocklist();

/// Case-insensitive substring match of any blocklist entry against property values.
ContentPredicate blocklist_predicate(std::vector<std::string> blocklist);

FilterResult filter_content(const std::vector<NftRecord>& records, const ContentPredicate& reject);
FilterResult filter_content(const std::vector<NftRecord>& records,
                            const std::vector<std::string>& blocklist);

/// Fraction of items whose full property set equals another item's.
double duplicate_ratio(const Collection& c);

/// Drops collections whose duplicate ratio exceeds `dup_ratio_max`.
FilterResult filter_duplicates(const std::vector<Collection>& collections,
                               double dup_ratio_max = 0.5);

struct StageStats {
  std::string stage;
  std::size_t records_in = 0;
  std::size_t records_removed = 0;
  double fraction_removed = 0.0;
  std::size_t collections_in = 0;
  std::size_t collections_removed = 0;

  bool operator==(const StageStats&) const = default;
};

struct CleanStats {
  std::vector<StageStats> stages;

  std::size_t records_in() const;
  std::size_t records_out() const;
  /// records_in of stage k+1 == records_in - records_removed of stage k, and
  /// every fraction lies in [0, 1].
  bool conserved() const;
};

struct PipelineOptions {
  long min_side = 512;
  std::size_t min_props = 3;
  double dup_ratio_max = 0.5;
  std::vector<std::string> blocklist = default_blocklist();
  /// Overrides the blocklist when set (e.g. a clustering-based filter).
  ContentPredicate content_predicate;
  /// Number of stages to run, 1..5, always starting from stage 1.
  int stages = 5;
};

struct PipelineRun {
  std::vector<NftRecord> kept;
  std::vector<NftRecord> removed;
  CleanStats stats;
};

PipelineRun run_pipeline(const std::vector<NftRecord>& records, const PipelineOptions& options = {});

/// Statistics of a finished run (stored on the run itself).
const CleanStats& clean_stats(const PipelineRun& run);

nlohmann::json to_json(const CleanStats& stats);
void write_stats_text(std::ostream& os, const CleanStats& stats);
void write_stats_csv(std::ostream& os, const CleanStats& stats);

// ---------------------------------------------------------------------------
// Sampling

enum class SamplerMode { kCollectionWeighted, kCategoryBalanced, kUniform };

struct SamplerSpec {
  SamplerMode mode = SamplerMode::kUniform;
  double alpha = 0.5;
  std::uint64_t seed = 0;
};

/// Position of an item: (group index, index within group).
struct ItemRef {
  std::size_t group = 0;
  std::size_t item = 0;
  bool operator==(const ItemRef&) const = default;
};

/// Two-level sampler: pick a group by weight, then an item uniformly inside it.
class GroupSampler {
 public:
  GroupSampler(std::vector<std::size_t> group_sizes, std::vector<double> group_weights,
               std::uint64_t seed);

  ItemRef next();
  /// Normalized group probabilities.
  const std::vector<double>& probabilities() const { return probs_; }
  const std::vector<std::size_t>& group_sizes() const { return sizes_; }

 private:
  std::vector<std::size_t> sizes_;
  std::vector<double> probs_;
  Rng rng_;
};

/// Collection weight proportional to size^alpha. alpha must lie in (0, 1].
GroupSampler collection_weighted_sampler(const std::vector<std::size_t>& collection_sizes,
                                         double alpha, std::uint64_t seed);
GroupSampler collection_weighted_sampler(const std::vector<Collection>& collections, double alpha,
                                         std::uint64_t seed);

/// Items grouped by label; every category is drawn with probability 1/N_c.
/// `labels[i]` in [0, n_categories). Throws if any category is empty.
class CategoryBalancedSampler {
 public:
  CategoryBalancedSampler(const std::vector<int>& labels, int n_categories, std::uint64_t seed);

  /// Index into the original label vector.
  std::size_t next();
  const std::vector<std::vector<std::size_t>>& members() const { return members_; }

 private:
  std::vector<std::vector<std::size_t>> members_;
  GroupSampler groups_;
};

CategoryBalancedSampler category_balanced_sampler(const std::vector<int>& labels,
                                                  int n_categories, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Synthetic collections

struct SynthOptions {
  std::size_t n_items = 1000;
  std::size_t n_trait_types = 8;
  std::size_t values_per_type = 8;
  /// Value j of a trait type has probability proportional to 1/(j+1)^zipf_skew.
  double zipf_skew = 1.0;
  /// Probability that an item carries a given trait type at all.
  double presence_prob = 0.75;
  std::uint64_t seed = 0;
  std::string collection_id;  // default "synth-<seed>"
  long side = 512;
};

/// Trait type names are "trait_<t>", values "v<j>". Same options, same collection.
Collection synth_collection(const SynthOptions& options);

/// Configured probability of value j within a trait type.
std::vector<double> zipf_weights(std::size_t values_per_type, double skew);

}  // namespace mvp::ingest
