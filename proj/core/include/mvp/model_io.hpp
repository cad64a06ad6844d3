#pragma once

// Self-describing model container shared by the market classifier and the
// prompt policy.
//
// Layout, all integers and floats little-endian:
//   char[8]  magic "MVPMODEL"
//   u32      container format version (currently 1)
//   str      kind                      (str = u32 byte length + UTF-8 bytes)
//   u32      header entry count, then per entry: str key, str value
//   u32      tensor count, then per tensor:
//              str name, u64 rows, u64 cols, rows*cols IEEE-754 f64 (row-major)

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace mvp::io {

inline constexpr std::uint32_t kContainerVersion = 1;

struct ModelContainer {
  std::string kind;
  std::vector<std::pair<std::string, std::string>> header;
  std::vector<std::pair<std::string, Eigen::MatrixXd>> tensors;

  void set(std::string key, std::string value);
  /// Throws std::runtime_error when missing.
  const std::string& get(const std::string& key) const;
  long get_int(const std::string& key) const;
  double get_double(const std::string& key) const;

  void add_tensor(std::string name, Eigen::MatrixXd m);
  const Eigen::MatrixXd& tensor(const std::string& name) const;
};

void write_container(std::ostream& os, const ModelContainer& c);
ModelContainer read_container(std::istream& is);

void save_container(const std::string& path, const ModelContainer& c);
ModelContainer load_container(const std::string& path);

}  // namespace mvp::io
