#include "mvp/vocabulary.hpp"

#include <istream>
#include <ostream>
#include <set>
#include <stdexcept>

#include <fmt/format.h>

namespace mvp::policy {

using nlohmann::json;

Vocabulary::Vocabulary(std::vector<PropertyKey> attributes) : attributes_(std::move(attributes)) {
  for (std::size_t i = 0; i < attributes_.size(); ++i) {
    if (!index_.emplace(attributes_[i], static_cast<int>(i)).second) {
      throw std::invalid_argument("duplicate vocabulary attribute " + attributes_[i].label());
    }
  }
}

Vocabulary Vocabulary::from_records(const std::vector<collection::NftRecord>& records) {
  std::set<PropertyKey> keys;
  for (const auto& r : records) keys.insert(r.properties.begin(), r.properties.end());
  return Vocabulary(std::vector<PropertyKey>(keys.begin(), keys.end()));
}

std::optional<int> Vocabulary::find(const PropertyKey& key) const {
  auto it = index_.find(key);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

int Vocabulary::index_of(const PropertyKey& key) const {
  auto it = index_.find(key);
  if (it == index_.end()) throw std::out_of_range("attribute not in vocabulary: " + key.label());
  return it->second;
}

const PropertyKey& Vocabulary::attribute(int token) const {
  if (!is_attribute(token)) throw std::out_of_range(fmt::format("token {} is not an attribute", token));
  return attributes_[static_cast<std::size_t>(token)];
}

std::string Vocabulary::text(int token) const {
  if (is_attribute(token)) return attributes_[static_cast<std::size_t>(token)].label();
  if (token == bos()) return std::string(kBosText);
  if (token == sep()) return std::string(kSeparatorText);
  if (token == eos()) return std::string(kEosText);
  throw std::out_of_range(fmt::format("token {} outside vocabulary", token));
}

json Vocabulary::to_json() const {
  json attrs = json::array();
  for (const auto& a : attributes_) attrs.push_back({a.trait_type, a.value});
  return {{"attributes", std::move(attrs)}};
}

Vocabulary Vocabulary::from_json(const json& j) {
  std::vector<PropertyKey> attrs;
  for (const auto& a : j.at("attributes")) {
    attrs.push_back(PropertyKey::make(a.at(0).get<std::string>(), a.at(1).get<std::string>()));
  }
  return Vocabulary(std::move(attrs));
}

void write_vocabulary(std::ostream& os, const Vocabulary& vocab) {
  for (std::size_t i = 0; i < vocab.attribute_count(); ++i) {
    const auto& a = vocab.attributes()[i];
    os << json{{"index", i}, {"trait_type", a.trait_type}, {"value", a.value}}.dump() << '\n';
  }
  const std::pair<int, const char*> controls[] = {
      {vocab.bos(), "BOS"}, {vocab.sep(), "SEP"}, {vocab.eos(), "EOS"}};
  for (const auto& [index, name] : controls) {
    os << json{{"index", index}, {"control", name}, {"text", vocab.text(index)}}.dump() << '\n';
  }
}

Vocabulary read_vocabulary(std::istream& is) {
  std::vector<PropertyKey> attrs;
  std::string line;
  int expected = 0;
  int controls = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto j = json::parse(line);
    if (j.at("index").get<int>() != expected) {
      throw std::runtime_error("vocabulary indices must be dense and ordered");
    }
    ++expected;
    if (j.contains("control")) {
      ++controls;
      continue;
    }
    if (controls > 0) throw std::runtime_error("attribute listed after control tokens");
    attrs.push_back(PropertyKey::make(j.at("trait_type").get<std::string>(),
                                      j.at("value").get<std::string>()));
  }
  if (controls != 3) throw std::runtime_error("vocabulary must list exactly three control tokens");
  return Vocabulary(std::move(attrs));
}

}  // namespace mvp::policy
