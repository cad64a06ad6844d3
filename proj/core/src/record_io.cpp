#include "mvp/record_io.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>

#include <fmt/format.h>

namespace mvp::collection {

using nlohmann::json;

json to_json(const NftRecord& record) {
  json props = json::array();
  for (const auto& p : record.properties) {
    props.push_back({{"trait_type", p.trait_type}, {"value", p.value}});
  }
  json j = {
      {"collection_id", record.collection_id},
      {"token_id", record.token_id},
      {"properties", std::move(props)},
      {"width", record.width},
      {"height", record.height},
      {"media_type", std::string(to_string(record.media_type))},
  };
  if (record.last_price_eth) j["last_price_eth"] = *record.last_price_eth;
  return j;
}

namespace {

std::string required_text(const json& j, const char* field) {
  auto it = j.find(field);
  if (it == j.end() || it->is_null()) throw RecordError(fmt::format("missing {}", field));
  if (it->is_string()) {
    auto s = it->get<std::string>();
    if (s.empty()) throw RecordError(fmt::format("empty {}", field));
    return s;
  }
  if (it->is_number_integer()) return it->dump();
  throw RecordError(fmt::format("invalid {}", field));
}

long required_pixels(const json& j, const char* field) {
  auto it = j.find(field);
  if (it == j.end() || it->is_null()) throw RecordError(fmt::format("missing {}", field));
  if (!it->is_number()) throw RecordError(fmt::format("invalid {}", field));
  const double v = it->get<double>();
  if (!(v >= 0.0) || v != std::floor(v)) throw RecordError(fmt::format("invalid {}", field));
  return static_cast<long>(v);
}

std::string label_text(const json& v, const char* field) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number() || v.is_boolean()) return v.dump();
  throw RecordError(fmt::format("invalid {}", field));
}

}  // namespace

NftRecord record_from_json(const json& j) {
  if (!j.is_object()) throw RecordError("not an object");
  NftRecord r;
  r.collection_id = required_text(j, "collection_id");
  r.token_id = required_text(j, "token_id");

  auto props = j.find("properties");
  if (props == j.end() || props->is_null()) throw RecordError("missing properties");
  if (!props->is_array()) throw RecordError("invalid properties");
  for (const auto& p : *props) {
    if (!p.is_object() || !p.contains("trait_type") || !p.contains("value")) {
      throw RecordError("invalid property");
    }
    PropertyKey key;
    try {
      key = PropertyKey::make(label_text(p["trait_type"], "trait_type"),
                              label_text(p["value"], "value"));
    } catch (const std::invalid_argument& e) {
      throw RecordError(e.what());
    }
    if (!r.properties.insert(std::move(key)).second) throw RecordError("duplicate property");
  }

  r.width = required_pixels(j, "width");
  r.height = required_pixels(j, "height");

  auto media = j.find("media_type");
  if (media == j.end() || !media->is_string()) throw RecordError("missing media_type");
  auto mt = parse_media_type(media->get<std::string>());
  if (!mt) throw RecordError("invalid media_type");
  r.media_type = *mt;

  auto price = j.find("last_price_eth");
  if (price != j.end() && !price->is_null()) {
    if (!price->is_number() || price->get<double>() < 0.0) {
      throw RecordError("invalid last_price_eth");
    }
    r.last_price_eth = price->get<double>();
  }
  return r;
}

void write_records(std::ostream& os, const std::vector<NftRecord>& records) {
  for (const auto& r : records) os << to_json(r).dump() << '\n';
}

std::vector<NftRecord> read_records(std::istream& is) {
  std::vector<NftRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) throw RecordError(fmt::format("line {}: malformed json", line_no));
    try {
      out.push_back(record_from_json(j));
    } catch (const RecordError& e) {
      throw RecordError(fmt::format("line {}: {}", line_no, e.what()));
    }
  }
  return out;
}

std::vector<NftRecord> read_records_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open record file: " + path);
  return read_records(in);
}

}  // namespace mvp::collection
