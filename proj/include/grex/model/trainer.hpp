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
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "grex/dataset/io.hpp"
#include "grex/metrics/det.hpp"
#include "grex/metrics/seg.hpp"
#include "grex/model/rela.hpp"
#include "grex/model/strategy.hpp"

namespace grex::model {

struct TrainExample {
  RgbImage image;
  std::vector<int> tokens;
  GrexSample sample;
};

/// Pairs every sample with its image pixels and token ids.
inline std::vector<TrainExample> make_examples(const std::vector<GrexSample>& samples,
                                               const std::map<Id, RgbImage>& pixels,
                                               const Vocabulary& vocab) {
  std::vector<TrainExample> out;
  for (const auto& s : samples) {
    const auto it = pixels.find(s.image_id);
    if (it == pixels.end()) throw NotFound("no pixels for image " + std::to_string(s.image_id));
    out.push_back({it->second, vocab.encode(s.expression), s});
  }
  return out;
}

class TrainingDiverged : public Error {
 public:
  TrainingDiverged(int iteration, const std::string& what)
      : Error("non-finite loss at iteration " + std::to_string(iteration) + ": " + what),
        iteration_(iteration) {}
  int iteration() const { return iteration_; }

 private:
  int iteration_;
};

/// Adam with optional decoupled weight decay.
template <typename T>
class Adam {
 public:
  struct Options {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
  };

  explicit Adam(Options o) : o_(o) {}

  void step(ParamStore<T>& store, double lr_scale = 1.0) {
    ++t_;
    const double c1 = 1 - std::pow(o_.beta1, t_);
    const double c2 = 1 - std::pow(o_.beta2, t_);
    const double lr = o_.lr * lr_scale;
    for (auto& [name, p] : store.params) {
      auto& st = state_[name];
      if (st.m.size() == 0) {
        st.m = nn::Mat<T>::Zero(p.value.rows(), p.value.cols());
        st.v = st.m;
      }
      st.m = T(o_.beta1) * st.m + T(1 - o_.beta1) * p.grad;
      st.v = T(o_.beta2) * st.v + T(1 - o_.beta2) * p.grad.cwiseProduct(p.grad);
      const auto mhat = st.m.array() / T(c1);
      const auto vhat = st.v.array() / T(c2);
      p.value.array() -= T(lr) * (mhat / (vhat.sqrt() + T(o_.eps)) +
                                   T(o_.weight_decay) * p.value.array());
    }
  }

 private:
  struct State {
    nn::Mat<T> m, v;
  };
  Options o_;
  int t_ = 0;
  std::map<std::string, State> state_;
};

struct TrainOptions {
  int iterations = 2000;
  int batch_size = 16;
  double lr = 3e-3;
  /// Learning rate is multiplied by 0.1 after this fraction of iterations.
  double decay_at = 0.8;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
  int eval_every = 100;
  Strategy eval_strategy = Strategy::count_driven();
  /// Stop at an evaluation point once both targets are met.
  std::optional<double> stop_giou;
  std::optional<double> stop_pr_f1;
  std::function<void(int, const LossBreakdown&)> on_iteration;
};

struct EvalPoint {
  int iteration = 0;
  double giou = 0;
  double ciou = 0;
  double pr_f1 = 0;
  double mean_loss = 0;
};

struct TrainResult {
  std::vector<LossBreakdown> trace;  // batch-mean loss per iteration
  std::vector<EvalPoint> evals;
  int iterations_run = 0;
};

struct Evaluation {
  metrics::SegReport seg;
  metrics::DetReport det;
  double mean_loss = 0;
};

template <typename T>
Evaluation evaluate_model(const Rela<T>& model, const std::vector<TrainExample>& examples,
                          const Strategy& strategy) {
  std::vector<metrics::SegPair> seg;
  std::vector<metrics::DetPair> det;
  double loss = 0;
  for (const auto& ex : examples) {
    const auto out = model.predict(ex.image, ex.tokens);
    auto sel = select_outputs(out, strategy);
    seg.push_back({{ex.sample.ref_id, std::move(sel.mask), std::nullopt}, ex.sample});
    det.push_back({{ex.sample.ref_id, std::move(sel.boxes)}, ex.sample});
    nn::Graph<T> g;
    typename Rela<T>::Bound b;
    for (const auto& [name, p] : model.params().params) b.vars.emplace(name, g.constant(p.value));
    LossBreakdown parts;
    model.loss(g, model.forward(g, b, ex.image, ex.tokens), ex.sample, &parts);
    loss += parts.total;
  }
  Evaluation e;
  e.seg = metrics::evaluate_gres(seg);
  e.det = metrics::evaluate_grec(det);
  e.mean_loss = loss / double(examples.size());
  return e;
}

/// Trains `model` in place. Deterministic in (initial parameters, options.seed).
template <typename T>
TrainResult train_toy(Rela<T>& model, const std::vector<TrainExample>& examples,
                      const TrainOptions& opt) {
  if (examples.empty()) throw InvalidArgument("training set is empty");
  if (opt.iterations < 0 || opt.batch_size < 1)
    throw InvalidArgument("iterations must be >= 0 and batch_size >= 1");
  std::mt19937_64 rng(opt.seed);
  Adam<T> adam({opt.lr, 0.9, 0.999, 1e-8, opt.weight_decay});
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = order.size();
  TrainResult result;
  const int decay_iter = static_cast<int>(opt.decay_at * opt.iterations);

  for (int it = 1; it <= opt.iterations; ++it) {
    model.params().zero_grad();
    LossBreakdown mean;
    const std::size_t bs = std::min<std::size_t>(std::size_t(opt.batch_size), examples.size());
    for (std::size_t k = 0; k < bs; ++k) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const auto& ex = examples[order[cursor++]];
      nn::Graph<T> g;
      const auto b = model.bind(g);
      LossBreakdown parts;
      const auto f = model.forward(g, b, ex.image, ex.tokens);
      nn::Var l = g.scale(model.loss(g, f, ex.sample, &parts), T(1) / T(bs));
      if (!std::isfinite(parts.total))
        throw TrainingDiverged(it, "ref_id " + std::to_string(ex.sample.ref_id));
      g.backward(l);
      mean.mask += parts.mask / double(bs);
      mean.box += parts.box / double(bs);
      mean.minimap += parts.minimap / double(bs);
      mean.count += parts.count / double(bs);
      mean.total += parts.total / double(bs);
    }
    adam.step(model.params(), it > decay_iter ? 0.1 : 1.0);
    result.trace.push_back(mean);
    result.iterations_run = it;
    if (opt.on_iteration) opt.on_iteration(it, mean);

    if (opt.eval_every > 0 && (it % opt.eval_every == 0 || it == opt.iterations)) {
      const auto e = evaluate_model(model, examples, opt.eval_strategy);
      result.evals.push_back({it, e.seg.giou, e.seg.ciou, e.det.pr_f1, e.mean_loss});
      const bool giou_ok = !opt.stop_giou || e.seg.giou >= *opt.stop_giou;
      const bool pr_ok = !opt.stop_pr_f1 || e.det.pr_f1 >= *opt.stop_pr_f1;
      if ((opt.stop_giou || opt.stop_pr_f1) && giou_ok && pr_ok) break;
    }
  }
  return result;
}

}  // namespace grex::model
