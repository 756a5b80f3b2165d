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

// Quickstart: generate a small synthetic GRES set, train the tiny toy model
// for a few hundred iterations and score it with the segmentation and
// detection metrics.
//
//   ./quickstart [iterations]

#include <cstdio>
#include <cstdlib>

#include "grex/dataset/synthetic.hpp"
#include "grex/model/trainer.hpp"

int main(int argc, char** argv) {
  using namespace grex;
  const int iterations = argc > 1 ? std::atoi(argv[1]) : 300;

  // 32x32 scenes on a 2x2 grid match the tiny model's input.
  synthetic::SceneConfig sc;
  sc.image_size = 32;
  sc.grid = 2;
  sc.shape_size = 10;
  sc.min_objects = 2;
  sc.max_objects = 4;
  sc.n_single = 4;
  sc.n_multi = 4;
  sc.n_no_target = 2;
  const auto ds = synthetic::generate_synthetic(sc, 42);
  const auto& samples = ds.data.samples;
  std::printf("%zu samples, for example \"%s\" -> %zu target(s)\n", samples.size(), samples[0].expression.c_str(),
              samples[0].target_ids.size());

  model::ModelConfig cfg = model::ModelConfig::tiny();
  cfg.text_len = 8;  // synthetic expressions run up to 6 words
  const auto vocab = model::Vocabulary::build(samples);
  const auto examples = model::make_examples(samples, ds.data.pixels, vocab);

  model::Rela<float> net(cfg, vocab.size());
  net.init(1);
  model::TrainOptions opt;
  opt.iterations = iterations;
  opt.batch_size = int(examples.size());
  opt.eval_every = 100;
  const auto run = model::train_toy(net, examples, opt);
  for (const auto& e : run.evals)
    std::printf("iter %4d  loss %.4f  gIoU %.3f  cIoU %.3f  Pr@F1 %.3f\n", e.iteration, e.mean_loss, e.giou, e.ciou,
                e.pr_f1);

  const auto final_eval = model::evaluate_model(net, examples, model::Strategy::count_driven());
  std::printf("N-acc %.3f  T-acc %.3f\n", final_eval.seg.n_acc.value_or(0), final_eval.seg.t_acc.value_or(0));
  return 0;
}
