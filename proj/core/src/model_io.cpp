#include "mvp/model_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>

#include <fmt/format.h>

namespace mvp::io {

namespace {

constexpr char kMagic[8] = {'M', 'V', 'P', 'M', 'O', 'D', 'E', 'L'};

template <typename U>
void put_le(std::ostream& os, U v) {
  unsigned char buf[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(buf), sizeof(U));
}

template <typename U>
U get_le(std::istream& is) {
  unsigned char buf[sizeof(U)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(U))) {
    throw std::runtime_error("truncated model container");
  }
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
  return v;
}

void put_str(std::ostream& os, const std::string& s) {
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_str(std::istream& is) {
  const auto n = get_le<std::uint32_t>(is);
  if (n > (1u << 24)) throw std::runtime_error("implausible string length in model container");
  std::string s(n, '\0');
  if (n > 0 && !is.read(s.data(), n)) throw std::runtime_error("truncated model container");
  return s;
}

}  // namespace

void ModelContainer::set(std::string key, std::string value) {
  for (auto& [k, v] : header) {
    if (k == key) {
      v = std::move(value);
      return;
    }
  }
  header.emplace_back(std::move(key), std::move(value));
}

const std::string& ModelContainer::get(const std::string& key) const {
  for (const auto& [k, v] : header) {
    if (k == key) return v;
  }
  throw std::runtime_error(fmt::format("model header has no '{}'", key));
}

long ModelContainer::get_int(const std::string& key) const { return std::stol(get(key)); }

double ModelContainer::get_double(const std::string& key) const { return std::stod(get(key)); }

void ModelContainer::add_tensor(std::string name, Eigen::MatrixXd m) {
  tensors.emplace_back(std::move(name), std::move(m));
}

const Eigen::MatrixXd& ModelContainer::tensor(const std::string& name) const {
  for (const auto& [n, m] : tensors) {
    if (n == name) return m;
  }
  throw std::runtime_error(fmt::format("model has no tensor '{}'", name));
}

void write_container(std::ostream& os, const ModelContainer& c) {
  os.write(kMagic, sizeof(kMagic));
  put_le<std::uint32_t>(os, kContainerVersion);
  put_str(os, c.kind);
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(c.header.size()));
  for (const auto& [k, v] : c.header) {
    put_str(os, k);
    put_str(os, v);
  }
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& [name, m] : c.tensors) {
    put_str(os, name);
    put_le<std::uint64_t>(os, static_cast<std::uint64_t>(m.rows()));
    put_le<std::uint64_t>(os, static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index col = 0; col < m.cols(); ++col) {
        put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(m(r, col)));
      }
    }
  }
  if (!os) throw std::runtime_error("failed writing model container");
}

ModelContainer read_container(std::istream& is) {
  char magic[sizeof(kMagic)];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("not a model container (bad magic)");
  }
  const auto version = get_le<std::uint32_t>(is);
  if (version != kContainerVersion) {
    throw std::runtime_error(fmt::format("unsupported model container version {}", version));
  }
  ModelContainer c;
  c.kind = get_str(is);
  const auto n_header = get_le<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < n_header; ++i) {
    auto k = get_str(is);
    auto v = get_str(is);
    c.header.emplace_back(std::move(k), std::move(v));
  }
  const auto n_tensors = get_le<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    auto name = get_str(is);
    const auto rows = get_le<std::uint64_t>(is);
    const auto cols = get_le<std::uint64_t>(is);
    if (rows > (1u << 20) || cols > (1u << 20)) throw std::runtime_error("implausible tensor shape");
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index col = 0; col < m.cols(); ++col) {
        m(r, col) = std::bit_cast<double>(get_le<std::uint64_t>(is));
      }
    }
    c.tensors.emplace_back(std::move(name), std::move(m));
  }
  return c;
}

void save_container(const std::string& path, const ModelContainer& c) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write model file: " + path);
  write_container(out, c);
}

ModelContainer load_container(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open model file: " + path);
  return read_container(in);
}

}  // namespace mvp::io
