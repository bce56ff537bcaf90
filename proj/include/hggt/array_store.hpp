// SPDX-License-Identifier: Apache-2.0
//
// Self-describing container of named numeric arrays.
//
// Layout: 8-byte magic "HGGTARR1", little-endian uint64 header length, a JSON
// header {"meta": {...}, "arrays": [{"name", "dtype", "shape", "offset"}]},
// then the raw array payload. Offsets are relative to the payload start.
#pragma once

#include "hggt/autodiff.hpp"

#include <json.hpp>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace hggt {

class ArrayStoreError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ArrayStore {
 public:
  struct Entry {
    std::string dtype;  // "f32", "f64" or "i64"
    std::vector<std::int64_t> shape;
    std::vector<char> bytes;
  };

  nlohmann::json meta = nlohmann::json::object();

  template <typename Derived>
  void put(const std::string& name, const Eigen::MatrixBase<Derived>& m) {
    using Scalar = typename Derived::Scalar;
    static_assert(std::is_same_v<Scalar, float> || std::is_same_v<Scalar, double>);
    const ad::Mat<Scalar> rm = m;  // row-major copy
    Entry e;
    e.dtype = std::is_same_v<Scalar, float> ? "f32" : "f64";
    e.shape = {static_cast<std::int64_t>(rm.rows()), static_cast<std::int64_t>(rm.cols())};
    e.bytes.resize(static_cast<std::size_t>(rm.size()) * sizeof(Scalar));
    std::memcpy(e.bytes.data(), rm.data(), e.bytes.size());
    entries_[name] = std::move(e);
  }

  void put_ints(const std::string& name, const std::vector<std::int64_t>& v) {
    Entry e;
    e.dtype = "i64";
    e.shape = {static_cast<std::int64_t>(v.size())};
    e.bytes.resize(v.size() * sizeof(std::int64_t));
    std::memcpy(e.bytes.data(), v.data(), e.bytes.size());
    entries_[name] = std::move(e);
  }

  [[nodiscard]] bool contains(const std::string& name) const { return entries_.count(name) != 0; }

  [[nodiscard]] const Entry& entry(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ArrayStoreError("missing array '" + name + "'");
    return it->second;
  }

  [[nodiscard]] std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : entries_) out.push_back(k);
    return out;
  }

  // Reads a 2-D float array as scalar type T; the stored dtype must match T
  // exactly so that weights round-trip bit for bit. A negative expected
  // dimension is not checked.
  template <typename T>
  [[nodiscard]] ad::Mat<T> get(const std::string& name, Eigen::Index rows = -1, Eigen::Index cols = -1) const {
    const Entry& e = entry(name);
    const std::string want = std::is_same_v<T, float> ? "f32" : "f64";
    if (e.dtype != want) throw ArrayStoreError("array '" + name + "' has dtype " + e.dtype + ", expected " + want);
    if (e.shape.size() != 2) throw ArrayStoreError("array '" + name + "' is not 2-D");
    if ((rows >= 0 && e.shape[0] != rows) || (cols >= 0 && e.shape[1] != cols)) {
      throw ArrayStoreError("array '" + name + "' has shape " + std::to_string(e.shape[0]) + "x" +
                            std::to_string(e.shape[1]) + ", expected " + std::to_string(rows) + "x" +
                            std::to_string(cols));
    }
    ad::Mat<T> m(e.shape[0], e.shape[1]);
    std::memcpy(m.data(), e.bytes.data(), e.bytes.size());
    return m;
  }

  [[nodiscard]] std::vector<std::int64_t> get_ints(const std::string& name) const {
    const Entry& e = entry(name);
    if (e.dtype != "i64" || e.shape.size() != 1) throw ArrayStoreError("array '" + name + "' is not a 1-D i64 array");
    std::vector<std::int64_t> v(static_cast<std::size_t>(e.shape[0]));
    std::memcpy(v.data(), e.bytes.data(), e.bytes.size());
    return v;
  }

  void save(const std::string& path) const {
    nlohmann::json header;
    header["meta"] = meta;
    header["arrays"] = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& [name, e] : entries_) {
      header["arrays"].push_back({{"name", name}, {"dtype", e.dtype}, {"shape", e.shape}, {"offset", offset}});
      offset += e.bytes.size();
    }
    const std::string h = header.dump();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ArrayStoreError("cannot open '" + path + "' for writing");
    out.write(kMagic, 8);
    const std::uint64_t len = h.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(h.data(), static_cast<std::streamsize>(h.size()));
    for (const auto& [name, e] : entries_) out.write(e.bytes.data(), static_cast<std::streamsize>(e.bytes.size()));
    if (!out) throw ArrayStoreError("write to '" + path + "' failed");
  }

  static ArrayStore load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ArrayStoreError("cannot open '" + path + "'");
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0) throw ArrayStoreError("'" + path + "' is not an array store");
    std::uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    if (!in || len > (1ull << 31)) throw ArrayStoreError("corrupt header in '" + path + "'");
    std::string h(len, '\0');
    in.read(h.data(), static_cast<std::streamsize>(len));
    nlohmann::json header;
    try {
      header = nlohmann::json::parse(h);
    } catch (const nlohmann::json::exception& ex) {
      throw ArrayStoreError("corrupt header in '" + path + "': " + ex.what());
    }
    std::vector<char> payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    ArrayStore store;
    store.meta = header.value("meta", nlohmann::json::object());
    for (const auto& a : header.at("arrays")) {
      Entry e;
      e.dtype = a.at("dtype").get<std::string>();
      e.shape = a.at("shape").get<std::vector<std::int64_t>>();
      std::size_t elem = e.dtype == "f32" ? 4 : (e.dtype == "f64" || e.dtype == "i64") ? 8 : 0;
      if (elem == 0) throw ArrayStoreError("unknown dtype '" + e.dtype + "'");
      std::size_t n = 1;
      for (auto d : e.shape) {
        if (d < 0) throw ArrayStoreError("negative dimension");
        n *= static_cast<std::size_t>(d);
      }
      const auto off = a.at("offset").get<std::uint64_t>();
      if (off + n * elem > payload.size()) throw ArrayStoreError("array '" + a.at("name").get<std::string>() + "' truncated");
      e.bytes.assign(payload.begin() + static_cast<std::ptrdiff_t>(off),
                     payload.begin() + static_cast<std::ptrdiff_t>(off + n * elem));
      store.entries_[a.at("name").get<std::string>()] = std::move(e);
    }
    return store;
  }

 private:
  static constexpr char kMagic[9] = "HGGTARR1";
  std::map<std::string, Entry> entries_;
};

}  // namespace hggt
