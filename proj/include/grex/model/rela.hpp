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

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "grex/core/mask.hpp"
#include "grex/dataset/image.hpp"
#include "grex/dataset/sample.hpp"
#include "grex/model/autograd.hpp"
#include "grex/model/config.hpp"
#include "grex/model/hungarian.hpp"
#include "grex/text/tokenize.hpp"

namespace grex::model {

/// Word to id table; id 0 is reserved for unknown words.
class Vocabulary {
 public:
  static constexpr int kUnknown = 0;

  Vocabulary() : words_{"<unk>"} {}

  static Vocabulary build(const std::vector<GrexSample>& samples) {
    Vocabulary v;
    std::map<std::string, int> seen;
    for (const auto& s : samples)
      for (const auto& w : text::tokenize(s.expression)) seen.emplace(w, 0);
    for (const auto& [w, _] : seen) v.add(w);
    return v;
  }

  int add(const std::string& w) {
    if (auto it = ids_.find(w); it != ids_.end()) return it->second;
    const int id = static_cast<int>(words_.size());
    words_.push_back(w);
    ids_.emplace(w, id);
    return id;
  }

  int id(const std::string& w) const {
    const auto it = ids_.find(w);
    return it == ids_.end() ? kUnknown : it->second;
  }

  std::vector<int> encode(std::string_view expression) const {
    std::vector<int> out;
    for (const auto& w : text::tokenize(expression)) out.push_back(id(w));
    return out;
  }

  std::size_t size() const { return words_.size(); }
  const std::vector<std::string>& words() const { return words_; }

  static Vocabulary from_words(const std::vector<std::string>& words) {
    if (words.empty() || words[0] != "<unk>") throw InvalidArgument("vocabulary must start with <unk>");
    Vocabulary v;
    for (std::size_t i = 1; i < words.size(); ++i) v.add(words[i]);
    return v;
  }

 private:
  std::vector<std::string> words_;
  std::map<std::string, int> ids_;
};

/// Named parameter arrays with gradient buffers.
template <typename T>
struct ParamStore {
  struct Param {
    nn::Mat<T> value;
    nn::Mat<T> grad;
  };
  std::map<std::string, Param> params;

  void add(const std::string& name, nn::Mat<T> value) {
    nn::Mat<T> g = nn::Mat<T>::Zero(value.rows(), value.cols());
    params[name] = Param{std::move(value), std::move(g)};
  }
  nn::Mat<T>& value(const std::string& name) { return params.at(name).value; }
  const nn::Mat<T>& value(const std::string& name) const { return params.at(name).value; }
  void zero_grad() {
    for (auto& [_, p] : params) p.grad.setZero();
  }
  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& [_, p] : params) n += std::size_t(p.value.size());
    return n;
  }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& [name, p] : params) out.add(name, p.value.template cast<U>());
    return out;
  }
};

/// Fraction of foreground pixels inside each of the P x P cells, row-major.
/// Cell i spans rows [floor(i H / P), floor((i + 1) H / P)), likewise for columns.
inline std::vector<double> minimap_target(const BinaryMask& gt, int regions_per_side) {
  const int p = regions_per_side;
  if (p < 1 || p > gt.height() || p > gt.width())
    throw InvalidArgument("regions_per_side must be in [1, min(height, width)]");
  std::vector<double> out(std::size_t(p) * p, 0.0);
  for (int cy = 0; cy < p; ++cy) {
    const int y0 = cy * gt.height() / p, y1 = (cy + 1) * gt.height() / p;
    for (int cx = 0; cx < p; ++cx) {
      const int x0 = cx * gt.width() / p, x1 = (cx + 1) * gt.width() / p;
      std::size_t fg = 0;
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) fg += gt.at(y, x);
      out[std::size_t(cy) * p + cx] = double(fg) / double((y1 - y0) * (x1 - x0));
    }
  }
  return out;
}

/// Bilinear upsampling by an integer factor (half-pixel centers, edge clamp)
/// as a sparse (H f W f) x (H W) operator over row-major positions.
template <typename T>
nn::SparseMat<T> bilinear_upsample_op(int h, int w, int factor) {
  std::vector<Eigen::Triplet<T>> trips;
  const int ho = h * factor, wo = w * factor;
  auto axis = [factor](int dst, int n, int& i0, int& i1, T& f1) {
    double src = (dst + 0.5) / factor - 0.5;
    if (src < 0) src = 0;
    i0 = static_cast<int>(src);
    if (i0 > n - 1) i0 = n - 1;
    i1 = std::min(i0 + 1, n - 1);
    f1 = T(src - i0);
  };
  for (int y = 0; y < ho; ++y) {
    int y0, y1;
    T fy;
    axis(y, h, y0, y1, fy);
    for (int x = 0; x < wo; ++x) {
      int x0, x1;
      T fx;
      axis(x, w, x0, x1, fx);
      const int row = y * wo + x;
      trips.emplace_back(row, y0 * w + x0, (1 - fy) * (1 - fx));
      trips.emplace_back(row, y0 * w + x1, (1 - fy) * fx);
      trips.emplace_back(row, y1 * w + x0, fy * (1 - fx));
      trips.emplace_back(row, y1 * w + x1, fy * fx);
    }
  }
  nn::SparseMat<T> op(ho * wo, h * w);
  op.setFromTriplets(trips.begin(), trips.end());  // duplicates are summed
  return op;
}

/// Every region whose minimap cell holds some foreground, paired with the
/// ground-truth box that overlaps the cell most (the smaller box on ties).
/// Several regions cover one object, so each of them is taught its box and
/// duplicate suppression at inference keeps one.
inline std::vector<std::pair<int, std::size_t>> dense_box_targets(const GrexSample& gt,
                                                                  int regions_per_side) {
  std::vector<std::pair<int, std::size_t>> out;
  if (gt.gt_boxes.empty()) return out;
  const auto mini = minimap_target(gt.gt_mask, regions_per_side);
  const int p = regions_per_side;
  for (int cy = 0; cy < p; ++cy)
    for (int cx = 0; cx < p; ++cx) {
      const int n = cy * p + cx;
      if (mini[std::size_t(n)] <= 0) continue;
      const Box cell{double(cx * gt.width / p), double(cy * gt.height / p),
                     double((cx + 1) * gt.width / p), double((cy + 1) * gt.height / p)};
      std::optional<std::size_t> best;
      double best_overlap = 0;
      for (std::size_t i = 0; i < gt.gt_boxes.size(); ++i) {
        const double ov = intersection_area(cell, gt.gt_boxes[i]);
        if (ov <= 0) continue;
        if (!best || ov > best_overlap ||
            (ov == best_overlap && gt.gt_boxes[i].area() < gt.gt_boxes[*best].area())) {
          best = i;
          best_overlap = ov;
        }
      }
      if (best) out.emplace_back(n, *best);
    }
  return out;
}

/// Mask aggregation: sum over regions of x_r[n] * M_r[n]. `region_masks` holds
/// one flattened map per row.
inline nn::Mat<double> aggregate_mask(const std::vector<double>& x_r,
                                      const nn::Mat<double>& region_masks) {
  if (region_masks.rows() != Eigen::Index(x_r.size()))
    throw DimensionMismatch("aggregate_mask: one weight per region mask required");
  nn::Mat<double> out = nn::Mat<double>::Zero(1, region_masks.cols());
  for (std::size_t n = 0; n < x_r.size(); ++n) out += x_r[n] * region_masks.row(Eigen::Index(n));
  return out;
}

/// Values produced by one forward pass, detached from the graph.
struct ModelOutput {
  int mask_size = 0;
  int image_size = 0;
  nn::Mat<double> mask_logits;     // mask_size x mask_size
  nn::Mat<double> image_logits;    // image_size x image_size, bilinear from mask_logits
  nn::Mat<double> region_masks;    // regions x (mask_size^2)
  std::vector<double> x_r;         // region probabilities
  std::vector<Box> boxes;          // per region, normalized corner form
  std::vector<double> count_logits;

  int predicted_count_class() const {
    return int(std::max_element(count_logits.begin(), count_logits.end()) - count_logits.begin());
  }
};

struct LossBreakdown {
  double mask = 0;
  double box = 0;
  double minimap = 0;
  double count = 0;
  double total = 0;
};

/// Toy region-based referring model: a strided conv image encoder, an
/// embedding text encoder, region-image and region-language attention, and
/// mask, region-probability, box and count heads.
template <typename T>
class Rela {
 public:
  using M = nn::Mat<T>;
  using G = nn::Graph<T>;
  using Var = nn::Var;

  static constexpr int kStage1 = 16;
  static constexpr double kQueryGain = 8.0;
  static constexpr int kStage2 = 32;
  static constexpr int kInputChannels = 5;  // RGB + x/y coordinates

  Rela(ModelConfig cfg, std::size_t vocab_size) : cfg_(cfg), vocab_size_(vocab_size) {
    cfg_.validate();
    if (vocab_size_ < 1) throw InvalidArgument("vocabulary must not be empty");
    up_feature_ = bilinear_upsample_op<T>(cfg_.feature_size, cfg_.feature_size, 2);
    box_reference_ = M::Zero(cfg_.regions(), 4);
    const int p = cfg_.regions_per_side;
    for (int n = 0; n < cfg_.regions(); ++n) {
      const T cx = (T(n % p) + T(0.5)) / T(p), cy = (T(n / p) + T(0.5)) / T(p);
      box_reference_(n, 0) = std::log(cx / (1 - cx));
      box_reference_(n, 1) = std::log(cy / (1 - cy));
    }
    up_mask_ = bilinear_upsample_op<T>(cfg_.mask_size, cfg_.mask_size,
                                       cfg_.image_size / cfg_.mask_size);
  }

  const ModelConfig& config() const { return cfg_; }
  std::size_t vocab_size() const { return vocab_size_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }

  /// Random initialization, deterministic in the seed.
  void init(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    auto randn = [&](int r, int c, double std) {
      M m(r, c);
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = T(normal(rng) * std);
      return m;
    };
    auto linear = [&](const std::string& name, int in, int out) {
      params_.add(name + ".w", randn(in, out, 1.0 / std::sqrt(double(in))));
      params_.add(name + ".b", M::Zero(1, out));
    };
    const int c = cfg_.channels, p2 = cfg_.regions();
    linear("enc.c1", 9 * kInputChannels, kStage1);
    linear("enc.c2", 9 * kStage1, kStage2);
    linear("enc.c3", 9 * kStage2, c);
    params_.add("enc.pos", randn(cfg_.feature_size * cfg_.feature_size, c, 1.0));
    params_.add("txt.emb", randn(int(vocab_size_), c, 1.0));
    params_.add("txt.pos", randn(cfg_.text_len, c, 0.1));
    linear("txt.proj", c, c);
    linear("pix.up", c, c);
    linear("pix.out", c, c);
    params_.add("pix.skip", randn(kStage1, c, 1.0 / std::sqrt(double(kStage1))));
    params_.add("ria.queries", M::Zero(p2, c));
    params_.add("ria.wk", randn(c, c, 1.0 / std::sqrt(double(c))));
    params_.add("ria.wv", randn(c, c, 1.0 / std::sqrt(double(c))));
    params_.add("rla.self_q", randn(c, c, 1.0 / std::sqrt(double(c))));
    params_.add("rla.self_k", randn(c, c, 1.0 / std::sqrt(double(c))));
    params_.add("rla.self_v", randn(c, c, 1.0 / std::sqrt(double(c))));
    params_.add("rla.lang_q", randn(c, c, 1.0 / std::sqrt(double(c))));
    params_.add("rla.lang_k", randn(c, c, 1.0 / std::sqrt(double(c))));
    linear("rla.mlp1", c, c);
    linear("rla.mlp2", c, c);
    linear("head.filter", c, c);
    linear("head.xr", c, 1);
    linear("head.box1", c, c);
    linear("head.box2", c, 4);
    linear("head.count1", c, c);
    linear("head.count2", c, kCountClasses);
    params_.params.at("ria.queries").value = cell_queries();
  }

  /// Query n starts as the mean positional key over the feature positions
  /// whose centers fall in cell n, scaled so that it attends mostly there.
  M cell_queries() const {
    const int fs = cfg_.feature_size, p = cfg_.regions_per_side;
    const M& pos = params_.params.at("enc.pos").value;
    const M& wk = params_.params.at("ria.wk").value;
    M keys = pos * wk;
    keys = keys.unaryExpr([](T v) { return T(0.5) * v * (T(1) + std::erf(v / std::sqrt(T(2)))); });
    M q = M::Zero(cfg_.regions(), keys.cols());
    std::vector<int> members(std::size_t(cfg_.regions()), 0);
    for (int y = 0; y < fs; ++y)
      for (int x = 0; x < fs; ++x) {
        const int n = ((2 * y + 1) * p / (2 * fs)) * p + (2 * x + 1) * p / (2 * fs);
        q.row(n) += keys.row(y * fs + x);
        ++members[std::size_t(n)];
      }
    for (int n = 0; n < q.rows(); ++n) {
      if (members[std::size_t(n)] > 0) q.row(n) /= T(members[std::size_t(n)]);
      const T norm = q.row(n).norm();
      if (norm > 0) q.row(n) *= T(kQueryGain) / (norm * norm);
    }
    return q;
  }

  void set_params(ParamStore<T> p) { params_ = std::move(p); }

  /// Parameters bound as leaves of one graph.
  struct Bound {
    std::map<std::string, Var> vars;
    Var operator[](const std::string& name) const { return vars.at(name); }
  };

  Bound bind(G& g) {
    Bound b;
    for (auto& [name, p] : params_.params) b.vars.emplace(name, g.param(p.value, &p.grad));
    return b;
  }

  /// (H W) x 5 input: RGB in [0, 1] and x/y coordinates in [-1, 1].
  M image_tensor(const RgbImage& img) const {
    if (img.height != cfg_.image_size || img.width != cfg_.image_size)
      throw DimensionMismatch("image must be " + std::to_string(cfg_.image_size) + "x" +
                              std::to_string(cfg_.image_size));
    const int n = cfg_.image_size;
    M x(n * n, kInputChannels);
    for (int y = 0; y < n; ++y)
      for (int xx = 0; xx < n; ++xx) {
        const int r = y * n + xx;
        for (int c = 0; c < 3; ++c) x(r, c) = T(img.at(y, xx, c)) / T(255);
        x(r, 3) = T(2.0 * (xx + 0.5) / n - 1.0);
        x(r, 4) = T(2.0 * (y + 0.5) / n - 1.0);
      }
    return x;
  }

  struct ImageFeatures {
    Var f_i;     // feature_size^2 x C
    Var stage1;  // mask_size^2 x 16
  };

  ImageFeatures encode_image(G& g, const Bound& b, const RgbImage& img) const {
    const int n = cfg_.image_size;
    Var x = g.constant(image_tensor(img));
    Var s1 = g.gelu(conv(g, b, "enc.c1", x, n, n, 2));
    Var s2 = g.gelu(conv(g, b, "enc.c2", s1, n / 2, n / 2, 2));
    Var f = conv(g, b, "enc.c3", s2, n / 4, n / 4, 1);
    return {f, s1};
  }

  Var encode_text(G& g, const Bound& b, const std::vector<int>& tokens) const {
    if (tokens.empty()) throw InvalidArgument("expression has no tokens");
    if (int(tokens.size()) > cfg_.text_len)
      throw InvalidArgument("expression has " + std::to_string(tokens.size()) +
                            " tokens, text_len is " + std::to_string(cfg_.text_len));
    std::vector<int> positions(tokens.size());
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (tokens[i] < 0 || std::size_t(tokens[i]) >= vocab_size_)
        throw InvalidArgument("token id " + std::to_string(tokens[i]) + " outside vocabulary");
      positions[i] = int(i);
    }
    Var e = g.add(g.gather_rows(b["txt.emb"], tokens), g.gather_rows(b["txt.pos"], positions));
    return g.gelu(linear(g, b, "txt.proj", e));
  }

  /// Two blocks: a projection at feature resolution followed by bilinear
  /// upsampling, then a projection merged with the stride-2 encoder stage.
  Var pixel_decoder(G& g, const Bound& b, const ImageFeatures& f) const {
    Var h = g.gelu(linear(g, b, "pix.up", f.f_i));
    Var up = g.apply_sparse(&up_feature_, h);
    return g.add(linear(g, b, "pix.out", up), g.matmul(f.stage1, b["pix.skip"]));
  }

  struct RiaOut {
    Var attention;  // P^2 x HW, rows sum to 1
    Var regions;    // P^2 x C
  };

  /// Region-image attention: softmax(Q gelu((F_i + pos) W_k)^T) gelu(F_i W_v).
  /// The learned position embedding enters the keys only.
  RiaOut ria_forward(G& g, const Bound& b, Var f_i) const {
    Var k = g.gelu(g.matmul(g.add(f_i, b["enc.pos"]), b["ria.wk"]));
    Var v = g.gelu(g.matmul(f_i, b["ria.wv"]));
    Var a = g.softmax_rows(g.matmul_nt(b["ria.queries"], k));
    return {a, g.matmul(a, v)};
  }

  struct RlaOut {
    Var self_attention;  // P^2 x P^2
    Var f_r1;
    Var lang_attention;  // P^2 x N_t
    Var f_r2;
    Var f_r;
  };

  /// Region-language attention: region self-attention plus cross attention
  /// from regions to words, fused by an MLP.
  RlaOut rla_forward(G& g, const Bound& b, Var regions, Var f_t) const {
    const T inv_sqrt_c = T(1) / std::sqrt(T(cfg_.channels));
    Var q = g.matmul(regions, b["rla.self_q"]);
    Var k = g.matmul(regions, b["rla.self_k"]);
    Var v = g.matmul(regions, b["rla.self_v"]);
    Var sa = g.softmax_rows(g.scale(g.matmul_nt(q, k), inv_sqrt_c));
    Var f_r1 = g.matmul(sa, v);
    Var lq = g.gelu(g.matmul(regions, b["rla.lang_q"]));
    Var lk = g.gelu(g.matmul(f_t, b["rla.lang_k"]));
    Var al = g.softmax_rows(g.matmul_nt(lq, lk));
    Var f_r2 = g.matmul(al, f_t);
    Var sum = g.add(g.add(regions, f_r1), f_r2);
    Var f_r = linear(g, b, "rla.mlp2", g.gelu(linear(g, b, "rla.mlp1", sum)));
    return {sa, f_r1, al, f_r2, f_r};
  }

  Var region_filter(G& g, const Bound& b, Var f_r) const { return linear(g, b, "head.filter", f_r); }

  struct HeadVars {
    Var xr_logits;      // P^2 x 1
    Var x_r;            // P^2 x 1
    Var boxes;          // P^2 x 4, normalized (cx, cy, w, h)
    Var count_logits;   // 1 x 7
    Var mask_logits;    // mask_size^2 x 1
    Var image_logits;   // image_size^2 x 1
  };

  /// Heads on top of the fused region features. The aggregated mask is
  /// evaluated as F_m (F_f^T x_r), which equals sum_n x_r[n] (F_m f_f[n]).
  HeadVars decode_heads(G& g, const Bound& b, Var f_r, Var f_f, Var f_m) const {
    HeadVars h;
    h.xr_logits = linear(g, b, "head.xr", f_r);
    h.x_r = g.sigmoid(h.xr_logits);
    Var box_raw = linear(g, b, "head.box2", g.gelu(linear(g, b, "head.box1", f_r)));
    h.boxes = g.sigmoid(g.add(box_raw, g.constant(box_reference_)));
    h.count_logits =
        linear(g, b, "head.count2", g.gelu(linear(g, b, "head.count1", g.mean_rows(f_r))));
    h.mask_logits = g.matmul(f_m, g.matmul_tn(f_f, h.x_r));
    h.image_logits = g.apply_sparse(&up_mask_, h.mask_logits);
    return h;
  }

  struct ForwardVars {
    ImageFeatures image;
    Var f_t;
    Var f_m;
    RiaOut ria;
    RlaOut rla;
    Var f_f;
    HeadVars heads;
  };

  ForwardVars forward(G& g, const Bound& b, const RgbImage& img, const std::vector<int>& tokens) const {
    ForwardVars f;
    f.image = encode_image(g, b, img);
    f.f_t = encode_text(g, b, tokens);
    f.f_m = pixel_decoder(g, b, f.image);
    f.ria = ria_forward(g, b, f.image.f_i);
    f.rla = rla_forward(g, b, f.ria.regions, f.f_t);
    f.f_f = region_filter(g, b, f.rla.f_r);
    f.heads = decode_heads(g, b, f.rla.f_r, f.f_f, f.f_m);
    return f;
  }

  /// Weighted multi-task loss for one sample. Returns the scalar loss node.
  Var loss(G& g, const ForwardVars& f, const GrexSample& gt, LossBreakdown* parts = nullptr) const {
    const int n = cfg_.image_size;
    if (gt.gt_mask.height() != n || gt.gt_mask.width() != n)
      throw DimensionMismatch("ground-truth mask must match the model image size");
    M mask_t(n * n, 1);
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) mask_t(y * n + x, 0) = gt.gt_mask.at(y, x) ? T(1) : T(0);
    Var l_mask = g.bce_with_logits(f.heads.image_logits, std::move(mask_t));

    const auto mini = minimap_target(gt.gt_mask, cfg_.regions_per_side);
    M mini_t(cfg_.regions(), 1);
    for (int i = 0; i < cfg_.regions(); ++i) mini_t(i, 0) = T(mini[std::size_t(i)]);
    Var l_xr = g.bce_with_logits(f.heads.xr_logits, std::move(mini_t));

    Var l_count = g.cross_entropy(f.heads.count_logits, count_class(gt.target_ids.size()));

    const M& bv = g.value(f.heads.boxes);
    std::vector<Box> preds;
    for (Eigen::Index r = 0; r < bv.rows(); ++r)
      preds.push_back(Box::from_cxcywh(double(bv(r, 0)), double(bv(r, 1)), double(bv(r, 2)),
                                       double(bv(r, 3))));
    std::vector<Box> gts;
    for (const auto& gb : gt.gt_boxes)
      gts.push_back({gb.x1 / gt.width, gb.y1 / gt.height, gb.x2 / gt.width, gb.y2 / gt.height});
    std::vector<std::pair<int, std::array<T, 4>>> targets;
    for (const auto& a : match_for_box_loss(preds, gts)) {
      const Box& t = gts[a.gt];
      targets.push_back({int(a.pred),
                         {T((t.x1 + t.x2) / 2), T((t.y1 + t.y2) / 2), T(t.width()), T(t.height())}});
    }
    Var l_match = g.box_loss(f.heads.boxes, std::move(targets), T(std::max<std::size_t>(1, gts.size())));
    std::vector<std::pair<int, std::array<T, 4>>> dense;
    for (const auto& [region, gi] : dense_box_targets(gt, cfg_.regions_per_side)) {
      const Box& t = gts[gi];
      dense.push_back({region,
                       {T((t.x1 + t.x2) / 2), T((t.y1 + t.y2) / 2), T(t.width()), T(t.height())}});
    }
    const T n_dense = T(std::max<std::size_t>(1, dense.size()));
    Var l_dense = g.box_loss(f.heads.boxes, std::move(dense), n_dense);
    Var l_box = g.sum_scalars({{T(1), l_match}, {T(1), l_dense}});

    const auto& lw = cfg_.lambda;
    Var total = g.sum_scalars({{T(lw.mask), l_mask},
                               {T(lw.box), l_box},
                               {T(lw.minimap), l_xr},
                               {T(lw.count), l_count}});
    if (parts) {
      parts->mask = double(g.value(l_mask)(0, 0));
      parts->box = double(g.value(l_box)(0, 0));
      parts->minimap = double(g.value(l_xr)(0, 0));
      parts->count = double(g.value(l_count)(0, 0));
      parts->total = double(g.value(total)(0, 0));
    }
    return total;
  }

  /// Forward pass on frozen parameters. Safe to call concurrently.
  ModelOutput predict(const RgbImage& img, const std::vector<int>& tokens) const {
    G g;
    Bound b;
    for (const auto& [name, p] : params_.params) b.vars.emplace(name, g.constant(p.value));
    const auto f = forward(g, b, img, tokens);
    ModelOutput out;
    out.mask_size = cfg_.mask_size;
    out.image_size = cfg_.image_size;
    const int ms = cfg_.mask_size, is = cfg_.image_size;
    out.mask_logits = g.value(f.heads.mask_logits).template cast<double>().template reshaped<Eigen::RowMajor>(ms, ms);
    out.image_logits =
        g.value(f.heads.image_logits).template cast<double>().template reshaped<Eigen::RowMajor>(is, is);
    out.region_masks =
        (g.value(f.f_m) * g.value(f.f_f).transpose()).transpose().template cast<double>();
    const M& xr = g.value(f.heads.x_r);
    for (Eigen::Index i = 0; i < xr.rows(); ++i) out.x_r.push_back(double(xr(i, 0)));
    const M& bx = g.value(f.heads.boxes);
    for (Eigen::Index i = 0; i < bx.rows(); ++i)
      out.boxes.push_back(Box::from_cxcywh(double(bx(i, 0)), double(bx(i, 1)), double(bx(i, 2)),
                                           double(bx(i, 3))));
    const M& cl = g.value(f.heads.count_logits);
    for (Eigen::Index i = 0; i < cl.cols(); ++i) out.count_logits.push_back(double(cl(0, i)));
    return out;
  }

 private:
  Var linear(G& g, const Bound& b, const std::string& name, Var x) const {
    return g.add_row(g.matmul(x, b[name + ".w"]), b[name + ".b"]);
  }

  Var conv(G& g, const Bound& b, const std::string& name, Var x, int h, int w, int stride) const {
    return linear(g, b, name, g.im2col(x, h, w, 3, stride, 1));
  }

  ModelConfig cfg_;
  std::size_t vocab_size_;
  ParamStore<T> params_;
  nn::SparseMat<T> up_feature_;
  nn::SparseMat<T> up_mask_;
  M box_reference_;  // logit of each cell center, added before the box sigmoid
};

}  // namespace grex::model
