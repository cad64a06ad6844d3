#pragma once

// Line-delimited JSON record files: one NftRecord object per line.
//
//   {"collection_id":"c","token_id":"1","properties":[{"trait_type":"Hat","value":"Cap"}],
//    "width":512,"height":512,"media_type":"image","last_price_eth":0.4}
//
// last_price_eth is optional (absent or null). Property values that arrive as
// JSON numbers or booleans are kept as their JSON text.

#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mvp/collection.hpp"

namespace mvp::collection {

/// A record that failed validation; what() is a short reason such as
/// "missing token_id".
class RecordError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

nlohmann::json to_json(const NftRecord& record);
NftRecord record_from_json(const nlohmann::json& j);

void write_records(std::ostream& os, const std::vector<NftRecord>& records);

/// Strict reader: throws RecordError naming the first bad line.
std::vector<NftRecord> read_records(std::istream& is);
std::vector<NftRecord> read_records_file(const std::string& path);

}  // namespace mvp::collection
