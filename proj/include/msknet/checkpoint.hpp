#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "msknet/common.hpp"

// Self-describing tensor container: a JSON header carrying run metadata and a
// shape table, followed by raw row-major 64-bit floats in table order. The
// byte stream depends only on the stored values, so identical runs produce
// identical files and a save/load cycle is bit-exact.

namespace msknet {

using Eigen::MatrixXd;

struct Checkpoint {
  nlohmann::ordered_json meta;
  std::vector<std::pair<std::string, MatrixXd>> tensors;

  void add(const std::string& name, const MatrixXd& value) {
    require(find(name) < 0, "checkpoint: duplicate tensor '" + name + "'");
    tensors.emplace_back(name, value);
  }

  bool has(const std::string& name) const { return find(name) >= 0; }

  const MatrixXd& tensor(const std::string& name) const {
    int i = find(name);
    require(i >= 0, "checkpoint: no tensor named '" + name + "'");
    return tensors[static_cast<std::size_t>(i)].second;
  }

 private:
  int find(const std::string& name) const {
    for (std::size_t i = 0; i < tensors.size(); ++i)
      if (tensors[i].first == name) return static_cast<int>(i);
    return -1;
  }
};

namespace detail {

constexpr char kCkptMagic[8] = {'M', 'S', 'K', 'C', 'K', 'P', 'T', '1'};

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint64_t get_u64(const char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ckpt) {
  nlohmann::ordered_json header;
  header["meta"] = ckpt.meta;
  header["tensors"] = nlohmann::ordered_json::array();
  for (const auto& [name, value] : ckpt.tensors) {
    header["tensors"].push_back({{"name", name},
                                 {"rows", static_cast<long>(value.rows())},
                                 {"cols", static_cast<long>(value.cols())}});
  }
  std::string hs = header.dump();

  std::string out;
  out.append(detail::kCkptMagic, sizeof(detail::kCkptMagic));
  detail::put_u64(out, hs.size());
  out += hs;
  for (const auto& [name, value] : ckpt.tensors) {
    for (Eigen::Index r = 0; r < value.rows(); ++r)
      for (Eigen::Index c = 0; c < value.cols(); ++c) {
        double d = value(r, c);
        char buf[sizeof(double)];
        std::memcpy(buf, &d, sizeof(double));
        out.append(buf, sizeof(double));
      }
  }
  return out;
}

inline Checkpoint deserialize_checkpoint(const std::string& bytes) {
  require(bytes.size() >= sizeof(detail::kCkptMagic) + 8, "checkpoint: truncated file");
  require(std::memcmp(bytes.data(), detail::kCkptMagic, sizeof(detail::kCkptMagic)) == 0,
          "checkpoint: bad magic");
  std::uint64_t hlen = detail::get_u64(bytes.data() + sizeof(detail::kCkptMagic));
  std::size_t off = sizeof(detail::kCkptMagic) + 8;
  require(bytes.size() >= off + hlen, "checkpoint: truncated header");
  nlohmann::ordered_json header;
  try {
    header = nlohmann::ordered_json::parse(bytes.substr(off, hlen));
  } catch (const std::exception& e) {
    throw Error(std::string("checkpoint: corrupt header: ") + e.what());
  }
  off += hlen;

  Checkpoint ckpt;
  ckpt.meta = header.value("meta", nlohmann::ordered_json::object());
  for (const auto& t : header.value("tensors", nlohmann::ordered_json::array())) {
    std::string name = t.at("name").get<std::string>();
    long rows = t.at("rows").get<long>();
    long cols = t.at("cols").get<long>();
    require(rows >= 0 && cols >= 0, "checkpoint: negative tensor shape");
    std::size_t n = static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
    require(bytes.size() >= off + n * sizeof(double),
            "checkpoint: truncated tensor data for '" + name + "'");
    MatrixXd value(rows, cols);
    for (long r = 0; r < rows; ++r)
      for (long c = 0; c < cols; ++c) {
        double d;
        std::memcpy(&d, bytes.data() + off, sizeof(double));
        off += sizeof(double);
        value(r, c) = d;
      }
    ckpt.add(name, value);
  }
  require(off == bytes.size(), "checkpoint: trailing bytes after tensor data");
  return ckpt;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::string bytes = serialize_checkpoint(ckpt);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  require(f.good(), "checkpoint: cannot open for writing: " + path);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(f.good(), "checkpoint: write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), "checkpoint: cannot open: " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace msknet
