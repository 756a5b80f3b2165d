// Copyright 2026 The grex Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "grex/core/error.hpp"
#include "grex/model/config.hpp"
#include "grex/model/rela.hpp"

namespace grex::model {

/// Binary checkpoint layout, all integers little-endian:
///   "GREXCKPT" | u32 version | str config_text | u32 n_words, str word... |
///   u32 n_arrays, { str name | u32 rows | u32 cols | f64 data (row-major) }...
/// where str is a u32 byte length followed by the bytes.
inline constexpr char kCheckpointMagic[8] = {'G', 'R', 'E', 'X', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig config;
  Vocabulary vocab;
  std::map<std::string, nn::Mat<double>> arrays;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

inline void put_str(std::string& out, const std::string& s) {
  put_u32(out, std::uint32_t(s.size()));
  out += s;
}

inline void put_f64(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  for (int i = 0; i < 8; ++i) out.push_back(char((bits >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(const std::string& data, std::string where) : data_(data), where_(std::move(where)) {}

  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw SchemaError(where_ + ": truncated checkpoint");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(std::uint8_t(data_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string str() {
    const auto n = u32();
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  double f64() {
    need(8);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= std::uint64_t(std::uint8_t(data_[pos_ + i])) << (8 * i);
    pos_ += 8;
    double v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
  }
  std::string raw(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  const std::string& data_;
  std::string where_;
  std::size_t pos_ = 0;
};

}  // namespace detail

template <typename T>
std::string encode_checkpoint(const Rela<T>& model, const Vocabulary& vocab) {
  if (vocab.size() != model.vocab_size())
    throw DimensionMismatch("vocabulary has " + std::to_string(vocab.size()) +
                            " words but the model embeds " + std::to_string(model.vocab_size()));
  std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
  detail::put_u32(out, kCheckpointVersion);
  detail::put_str(out, model.config().to_text());
  detail::put_u32(out, std::uint32_t(vocab.size()));
  for (const auto& w : vocab.words()) detail::put_str(out, w);
  const auto& params = model.params().params;
  detail::put_u32(out, std::uint32_t(params.size()));
  for (const auto& [name, p] : params) {
    detail::put_str(out, name);
    detail::put_u32(out, std::uint32_t(p.value.rows()));
    detail::put_u32(out, std::uint32_t(p.value.cols()));
    for (Eigen::Index i = 0; i < p.value.size(); ++i) detail::put_f64(out, double(p.value.data()[i]));
  }
  return out;
}

inline Checkpoint decode_checkpoint(const std::string& data, const std::string& where = "checkpoint") {
  detail::Reader r(data, where);
  if (r.raw(sizeof kCheckpointMagic) != std::string(kCheckpointMagic, sizeof kCheckpointMagic))
    throw SchemaError(where + ": not a grex checkpoint");
  const auto version = r.u32();
  if (version != kCheckpointVersion)
    throw SchemaError(where + ": unsupported checkpoint version " + std::to_string(version));
  Checkpoint c;
  c.config = ModelConfig::from_text(r.str());
  std::vector<std::string> words(r.u32());
  for (auto& w : words) w = r.str();
  c.vocab = Vocabulary::from_words(words);
  const auto n = r.u32();
  for (std::uint32_t k = 0; k < n; ++k) {
    std::string name = r.str();
    const auto rows = r.u32(), cols = r.u32();
    r.need(std::size_t(rows) * cols * 8);
    nn::Mat<double> m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = r.f64();
    if (!c.arrays.emplace(std::move(name), std::move(m)).second)
      throw SchemaError(where + ": duplicate array");
  }
  if (!r.done()) throw SchemaError(where + ": trailing bytes after the last array");
  return c;
}

template <typename T>
void save_checkpoint(const std::string& path, const Rela<T>& model, const Vocabulary& vocab) {
  const auto bytes = encode_checkpoint(model, vocab);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path);
  f.write(bytes.data(), std::streamsize(bytes.size()));
  if (!f) throw Error("write failed for " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw NotFound("cannot open " + path);
  std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_checkpoint(data, path);
}

/// Builds a model from a checkpoint. Every parameter the architecture
/// defines must be present with the same shape, and nothing else.
template <typename T>
Rela<T> model_from_checkpoint(const Checkpoint& c) {
  Rela<T> model(c.config, c.vocab.size());
  model.init(0);
  ParamStore<T> store;
  for (const auto& [name, p] : model.params().params) {
    const auto it = c.arrays.find(name);
    if (it == c.arrays.end()) throw SchemaError("checkpoint lacks parameter " + name);
    if (it->second.rows() != p.value.rows() || it->second.cols() != p.value.cols())
      throw DimensionMismatch("checkpoint parameter " + name + " is " +
                              std::to_string(it->second.rows()) + "x" + std::to_string(it->second.cols()) +
                              ", config expects " + std::to_string(p.value.rows()) + "x" +
                              std::to_string(p.value.cols()));
    store.add(name, it->second.template cast<T>());
  }
  for (const auto& [name, _] : c.arrays)
    if (!model.params().params.count(name)) throw SchemaError("checkpoint has unknown parameter " + name);
  model.set_params(std::move(store));
  return model;
}

}  // namespace grex::model
