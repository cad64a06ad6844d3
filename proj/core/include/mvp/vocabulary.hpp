#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mvp/collection.hpp"

namespace mvp::policy {

using collection::PropertyKey;

/// Text of the separator token placed between the user input and the completion.
inline constexpr std::string_view kSeparatorText = ". Add details:";
inline constexpr std::string_view kBosText = "<bos>";
inline constexpr std::string_view kEosText = "<eos>";

/// Attribute tokens occupy indices [0, attribute_count()); the three control
/// tokens BOS, SEP and EOS follow in that order.
class Vocabulary {
 public:
  Vocabulary() = default;
  /// Throws on duplicate attributes.
  explicit Vocabulary(std::vector<PropertyKey> attributes);

  /// Every distinct property of the records, sorted.
  static Vocabulary from_records(const std::vector<collection::NftRecord>& records);

  std::size_t size() const { return attributes_.size() + 3; }
  std::size_t attribute_count() const { return attributes_.size(); }

  int bos() const { return static_cast<int>(attributes_.size()); }
  int sep() const { return bos() + 1; }
  int eos() const { return bos() + 2; }

  bool contains(int token) const { return token >= 0 && token < static_cast<int>(size()); }
  bool is_attribute(int token) const {
    return token >= 0 && token < static_cast<int>(attributes_.size());
  }

  std::optional<int> find(const PropertyKey& key) const;
  /// Throws std::out_of_range for an unknown key.
  int index_of(const PropertyKey& key) const;
  const PropertyKey& attribute(int token) const;
  const std::vector<PropertyKey>& attributes() const { return attributes_; }

  /// Attribute label or control text.
  std::string text(int token) const;

  nlohmann::json to_json() const;
  static Vocabulary from_json(const nlohmann::json& j);

  bool operator==(const Vocabulary& o) const { return attributes_ == o.attributes_; }

 private:
  std::vector<PropertyKey> attributes_;
  std::map<PropertyKey, int> index_;
};

/// Sidecar file: one JSON object per line, {"index":i,"trait_type":..,"value":..}
/// for attributes and {"index":i,"control":"SEP","text":". Add details:"} for
/// control tokens.
void write_vocabulary(std::ostream& os, const Vocabulary& vocab);
Vocabulary read_vocabulary(std::istream& is);

}  // namespace mvp::policy
