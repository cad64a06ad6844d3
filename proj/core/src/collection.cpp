#include "mvp/collection.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <ostream>

#include <fmt/format.h>

namespace mvp::collection {

namespace {

std::string_view trim(std::string_view s) {
  const auto* ws = " \t\r\n\f\v";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

}  // namespace

PropertyKey PropertyKey::make(std::string_view trait_type, std::string_view value) {
  auto t = trim(trait_type);
  auto v = trim(value);
  if (t.empty()) throw std::invalid_argument("empty trait_type");
  if (v.empty()) throw std::invalid_argument("empty property value");
  return PropertyKey{std::string(t), std::string(v)};
}

std::string PropertyKey::label() const { return trait_type + ":" + value; }

std::string_view to_string(MediaType t) {
  switch (t) {
    case MediaType::kImage: return "image";
    case MediaType::kVideo: return "video";
    case MediaType::kAnimation: return "animation";
    case MediaType::kOther: return "other";
  }
  return "other";
}

std::optional<MediaType> parse_media_type(std::string_view s) {
  if (s == "image") return MediaType::kImage;
  if (s == "video") return MediaType::kVideo;
  if (s == "animation") return MediaType::kAnimation;
  if (s == "other") return MediaType::kOther;
  return std::nullopt;
}

Collection::Collection(std::string id, std::vector<NftRecord> items) : id_(std::move(id)) {
  items_.reserve(items.size());
  for (auto& r : items) add(std::move(r));
}

void Collection::add(NftRecord record) {
  if (record.collection_id != id_) {
    throw std::invalid_argument(
        fmt::format("record {} belongs to collection '{}', not '{}'", record.token_id,
                    record.collection_id, id_));
  }
  if (!token_ids_.insert(record.token_id).second) {
    throw std::invalid_argument(
        fmt::format("duplicate token_id '{}' in collection '{}'", record.token_id, id_));
  }
  items_.push_back(std::move(record));
}

std::vector<Collection> group_by_collection(const std::vector<NftRecord>& records) {
  std::vector<Collection> out;
  std::map<std::string, std::size_t> index;
  for (const auto& r : records) {
    auto [it, inserted] = index.try_emplace(r.collection_id, out.size());
    if (inserted) out.emplace_back(r.collection_id);
    out[it->second].add(r);
  }
  return out;
}

FrequencyTable::FrequencyTable(std::map<PropertyKey, std::size_t> counts, std::size_t total_items)
    : counts_(std::move(counts)), total_(total_items) {
  if (total_ == 0) throw std::invalid_argument("empty collection");
  for (const auto& [key, n] : counts_) {
    if (n == 0 || n > total_) {
      throw std::invalid_argument("frequency count out of range for " + key.label());
    }
  }
}

std::size_t FrequencyTable::count(const PropertyKey& key) const {
  auto it = counts_.find(key);
  return it == counts_.end() ? 0 : it->second;
}

double FrequencyTable::eta(const PropertyKey& key) const {
  auto it = counts_.find(key);
  if (it == counts_.end()) throw std::out_of_range("unknown property: " + key.label());
  return static_cast<double>(it->second) / static_cast<double>(total_);
}

FrequencyTable build_frequency_table(const Collection& collection) {
  if (collection.empty()) throw std::invalid_argument("empty collection");
  std::map<PropertyKey, std::size_t> counts;
  for (const auto& item : collection.items()) {
    for (const auto& key : item.properties) ++counts[key];
  }
  return FrequencyTable(std::move(counts), collection.size());
}

double rarity_score(const std::set<PropertyKey>& properties, const FrequencyTable& table) {
  std::vector<double> terms;
  terms.reserve(properties.size());
  for (const auto& key : properties) {
    const std::size_t n = table.count(key);
    if (n == 0) throw std::out_of_range("unknown property: " + key.label());
    // 1/eta == total/count, computed from the exact pair.
    terms.push_back(static_cast<double>(table.total_items()) / static_cast<double>(n));
  }
  // Summation order is fixed so the score is independent of how the caller
  // built the set.
  std::sort(terms.begin(), terms.end());
  double sum = 0.0;
  for (double t : terms) sum += t;
  return sum;
}

double rarity_score(const NftRecord& record, const FrequencyTable& table) {
  return rarity_score(record.properties, table);
}

std::string_view to_string(Tier t) {
  switch (t) {
    case Tier::kHigh: return "High";
    case Tier::kMedium: return "Medium";
    case Tier::kLow: return "Low";
  }
  return "Low";
}

std::optional<Tier> parse_tier(std::string_view s) {
  if (s == "High") return Tier::kHigh;
  if (s == "Medium") return Tier::kMedium;
  if (s == "Low") return Tier::kLow;
  return std::nullopt;
}

int tier_class(Tier t) {
  switch (t) {
    case Tier::kLow: return 0;
    case Tier::kMedium: return 1;
    case Tier::kHigh: return 2;
  }
  return 0;
}

Tier tier_from_class(int cls) {
  switch (cls) {
    case 0: return Tier::kLow;
    case 1: return Tier::kMedium;
    case 2: return Tier::kHigh;
  }
  throw std::out_of_range(fmt::format("no tier for class {}", cls));
}

std::size_t RarityReport::count(Tier t) const {
  return static_cast<std::size_t>(
      std::count_if(entries.begin(), entries.end(), [t](const auto& e) { return e.tier == t; }));
}

const RarityEntry& RarityReport::at(std::string_view token_id) const {
  for (const auto& e : entries) {
    if (e.token_id == token_id) return e;
  }
  throw std::out_of_range(fmt::format("token_id '{}' not in report", token_id));
}

// Different property mixes can have equal rational sums (7/2 + 7/2 + 7/6 and
// 7 + 7/6) whose floating-point sums differ in the last bit. Rounding to 13
// significant digits turns those into exact ties.
double snap_score(double x) { return std::strtod(fmt::format("{:.13g}", x).c_str(), nullptr); }

RarityReport rank_collection(const Collection& collection) {
  const auto table = build_frequency_table(collection);
  RarityReport report;
  report.collection_id = collection.id();
  report.entries.reserve(collection.size());
  for (const auto& item : collection.items()) {
    report.entries.push_back(
        RarityEntry{item.token_id, snap_score(rarity_score(item, table)), 0, 0.0, Tier::kLow});
  }
  std::sort(report.entries.begin(), report.entries.end(), [](const auto& a, const auto& b) {
    if (a.rarity != b.rarity) return a.rarity > b.rarity;
    return a.token_id < b.token_id;
  });
  const double n = static_cast<double>(report.entries.size());
  for (std::size_t i = 0; i < report.entries.size(); ++i) {
    report.entries[i].rank = i + 1;
    report.entries[i].percentile = static_cast<double>(i + 1) / n;
  }
  return assign_tiers(std::move(report));
}

std::size_t tier_boundary(double cut, std::size_t n) {
  // The epsilon keeps exact products such as 0.05*1000 from rounding up to 51.
  const double raw = std::ceil(cut * static_cast<double>(n) - 1e-9);
  return static_cast<std::size_t>(std::max(raw, 0.0));
}

RarityReport assign_tiers(RarityReport report, TierCuts cuts) {
  if (!(cuts.high_cut > 0.0 && cuts.high_cut < cuts.med_cut && cuts.med_cut < 1.0)) {
    throw std::invalid_argument(fmt::format(
        "invalid tier cuts: need 0 < high_cut < med_cut < 1, got {} and {}", cuts.high_cut,
        cuts.med_cut));
  }
  const std::size_t n = report.entries.size();
  const std::size_t n_high = std::max<std::size_t>(1, tier_boundary(cuts.high_cut, n));
  const std::size_t n_med = tier_boundary(cuts.med_cut, n);
  for (auto& e : report.entries) {
    if (e.rank <= n_high) {
      e.tier = Tier::kHigh;
    } else if (e.rank <= n_med) {
      e.tier = Tier::kMedium;
    } else {
      e.tier = Tier::kLow;
    }
  }
  return report;
}

void write_report_csv(std::ostream& os, const RarityReport& report) {
  os << "token_id,rarity,rank,percentile,tier\n";
  for (const auto& e : report.entries) {
    os << fmt::format("{},{:.12g},{},{:.12g},{}\n", csv_field(e.token_id), e.rarity, e.rank, e.percentile,
                      to_string(e.tier));
  }
}

}  // namespace mvp::collection
