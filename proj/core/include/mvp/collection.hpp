#pragma once

// Collection data model and rarity-based valuation.
//
// Rarity of an item is the sum, over its properties, of the inverse fraction
// of items in the same collection that carry that property. Items are ranked
// by rarity within their collection and bucketed into price tiers by rank.

#include <compare>
#include <cstddef>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mvp::collection {

/// A (trait_type, value) label. Fields are stored trimmed and non-empty.
struct PropertyKey {
  std::string trait_type;
  std::string value;

  /// Trims both fields; throws std::invalid_argument if either ends up empty.
  static PropertyKey make(std::string_view trait_type, std::string_view value);

  /// "trait_type:value", used as a display label.
  std::string label() const;

  auto operator<=>(const PropertyKey&) const = default;
  bool operator==(const PropertyKey&) const = default;
};

enum class MediaType { kImage, kVideo, kAnimation, kOther };

std::string_view to_string(MediaType t);
/// Parses "image" / "video" / "animation" / "other".
std::optional<MediaType> parse_media_type(std::string_view s);

struct NftRecord {
  std::string collection_id;
  std::string token_id;
  std::set<PropertyKey> properties;
  long width = 0;
  long height = 0;
  MediaType media_type = MediaType::kImage;
  std::optional<double> last_price_eth;

  bool operator==(const NftRecord&) const = default;
};

/// Records sharing one collection id, with unique token ids.
class Collection {
 public:
  Collection() = default;
  explicit Collection(std::string id) : id_(std::move(id)) {}
  /// Validates that every record belongs to `id` and token ids are unique.
  Collection(std::string id, std::vector<NftRecord> items);

  /// Appends a record; throws on a collection id mismatch or duplicate token id.
  void add(NftRecord record);

  const std::string& id() const { return id_; }
  const std::vector<NftRecord>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }

 private:
  std::string id_;
  std::vector<NftRecord> items_;
  std::set<std::string> token_ids_;
};

/// Groups records by collection id, preserving first-appearance order.
/// Duplicate token ids within a collection throw.
std::vector<Collection> group_by_collection(const std::vector<NftRecord>& records);

/// Exact per-property counts over a collection.
class FrequencyTable {
 public:
  FrequencyTable(std::map<PropertyKey, std::size_t> counts, std::size_t total_items);

  std::size_t total_items() const { return total_; }
  std::size_t count(const PropertyKey& key) const;
  bool contains(const PropertyKey& key) const { return counts_.contains(key); }
  /// Fraction of items holding `key`; throws std::out_of_range if absent.
  double eta(const PropertyKey& key) const;
  const std::map<PropertyKey, std::size_t>& counts() const { return counts_; }

 private:
  std::map<PropertyKey, std::size_t> counts_;
  std::size_t total_;
};

/// Throws std::invalid_argument("empty collection") on an empty collection.
FrequencyTable build_frequency_table(const Collection& collection);

/// Sum of 1/eta over the record's properties. Zero for a property-less record.
/// Throws std::out_of_range("unknown property: ...") when a key is missing.
double rarity_score(const NftRecord& record, const FrequencyTable& table);

/// Same sum for a bare property set.
double rarity_score(const std::set<PropertyKey>& properties, const FrequencyTable& table);

/// Rarity rounded to 13 significant digits, the form stored in reports and
/// compared when ranking.
double snap_score(double x);

enum class Tier { kHigh, kMedium, kLow };

std::string_view to_string(Tier t);
std::optional<Tier> parse_tier(std::string_view s);

/// Class index used by the market classifier: Low=0, Medium=1, High=2.
int tier_class(Tier t);
Tier tier_from_class(int cls);

struct RarityEntry {
  std::string token_id;
  double rarity = 0.0;
  std::size_t rank = 0;      // 1 = rarest
  double percentile = 0.0;   // rank / N
  Tier tier = Tier::kLow;
};

struct TierCuts {
  double high_cut = 0.05;
  double med_cut = 0.60;
};

struct RarityReport {
  std::string collection_id;
  std::vector<RarityEntry> entries;  // ordered by rank

  std::size_t count(Tier t) const;
  /// Entry for a token id; throws std::out_of_range if absent.
  const RarityEntry& at(std::string_view token_id) const;
};

/// Ranks by descending rarity, ties by ascending token id, and assigns the
/// default tiers. Scores are rounded to 13 significant digits first, so sums
/// that are equal as fractions tie exactly. Throws on an empty collection.
RarityReport rank_collection(const Collection& collection);

/// Number of items in the top `cut` fraction, rounded up.
std::size_t tier_boundary(double cut, std::size_t n);

/// Re-tiers a ranked report: rank <= ceil(high_cut*N) is High, rank <=
/// ceil(med_cut*N) is Medium, the rest Low. Requires 0 < high < med < 1.
RarityReport assign_tiers(RarityReport report, TierCuts cuts = {});

/// Writes token_id,rarity,rank,percentile,tier.
void write_report_csv(std::ostream& os, const RarityReport& report);

}  // namespace mvp::collection
