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

// The `grex` command-line tool. Every subcommand prints a human table to
// `out` and, when --out is given, writes a JSON document with the same
// numbers. Exit codes: 0 success, 2 input error, 3 degenerate metric input,
// 1 anything else (for instance a diverged training run).

#include <algorithm>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "grex/annotation/http.hpp"
#include "grex/annotation/service.hpp"
#include "grex/core/error.hpp"
#include "grex/dataset/io.hpp"
#include "grex/dataset/stats.hpp"
#include "grex/dataset/synthetic.hpp"
#include "grex/metrics/det.hpp"
#include "grex/metrics/gen.hpp"
#include "grex/metrics/report_io.hpp"
#include "grex/metrics/seg.hpp"
#include "grex/model/checkpoint.hpp"
#include "grex/model/strategy.hpp"
#include "grex/model/trainer.hpp"

namespace grex::cli {

using json = nlohmann::json;
namespace fs = std::filesystem;

inline constexpr const char* kDataRootEnv = "GREX_DATA_ROOT";

enum ExitCode : int { kOk = 0, kFailure = 1, kInputError = 2, kDegenerate = 3 };

namespace detail {

// Two-column table; numbers are printed as given.
class Table {
 public:
  explicit Table(std::string title) : title_(std::move(title)) {}
  void row(std::string key, std::string value) { rows_.push_back({std::move(key), std::move(value)}); }
  void print(std::ostream& out) const {
    std::size_t w = 0;
    for (const auto& [k, v] : rows_) w = std::max(w, k.size());
    out << title_ << "\n";
    for (const auto& [k, v] : rows_) out << "  " << std::left << std::setw(int(w)) << k << "  " << v << "\n";
  }

 private:
  std::string title_;
  std::vector<std::pair<std::string, std::string>> rows_;
};

inline std::string pct(double v) {
  std::ostringstream o;
  o << std::fixed << std::setprecision(2) << 100.0 * v;
  return o.str();
}

inline std::string pct(const std::optional<double>& v) { return v ? pct(*v) : "n/a"; }

inline std::string num(double v, int digits = 4) {
  std::ostringstream o;
  o << std::fixed << std::setprecision(digits) << v;
  return o.str();
}

inline void write_out(const std::string& path, const json& doc) {
  if (path.empty()) return;
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary);
  if (!f) throw InvalidArgument("cannot write " + path);
  f << doc.dump(2) << "\n";
  if (!f) throw Error("write failed: " + path);
}

inline json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw NotFound("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw SchemaError(path + ": " + e.what());
  }
}

inline std::map<Id, RgbImage> load_pixels(const fs::path& root, const std::vector<GrexSample>& samples) {
  const auto idx = load_instances(root);
  std::map<Id, RgbImage> px;
  for (const auto& s : samples) {
    if (px.count(s.image_id)) continue;
    px.emplace(s.image_id, load_image(root, idx.images.at(s.image_id)));
  }
  return px;
}

// Accepts [{"ref_id", "count"}] or {"<ref_id>": count}.
inline std::map<Id, int> read_counts(const std::string& path) {
  const json doc = read_json(path);
  std::map<Id, int> out;
  if (doc.is_object()) {
    for (const auto& [k, v] : doc.items()) out[std::stoll(k)] = v.get<int>();
  } else if (doc.is_array()) {
    for (const auto& r : doc) out[r.at("ref_id").get<Id>()] = r.at("count").get<int>();
  } else {
    throw SchemaError(path + ": expected an object or an array of {ref_id, count}");
  }
  return out;
}

struct Common {
  std::string data;
  std::string split = "val";
  std::string out;
  std::size_t workers = 1;
};

inline void add_data(CLI::App* c, Common& o) {
  c->add_option("--data", o.data, std::string("dataset root (default: $") + kDataRootEnv + ")");
  c->add_option("--split", o.split, "split name")->capture_default_str();
}

inline std::string data_root(const Common& o) {
  if (!o.data.empty()) return o.data;
  if (const char* env = std::getenv(kDataRootEnv); env && *env) return env;
  throw InvalidArgument(std::string("no dataset root: pass --data or set ") + kDataRootEnv);
}

// Subcommands ---------------------------------------------------------------

// Scene layout for a given canvas. Shapes shrink with small canvases so
// that they still fit one grid slot.
inline synthetic::SceneConfig scene_for(int image_size) {
  synthetic::SceneConfig sc;
  sc.image_size = image_size;
  if (image_size > 0) sc.shape_size = std::min(sc.shape_size, image_size / sc.grid * 3 / 4);
  return sc;
}

struct EvalGresOpts : Common {
  std::string pred;
  bool fifty_pixel = false;
  std::size_t min_pixels = 50;
};

inline int eval_gres(const EvalGresOpts& o, std::ostream& out) {
  const auto samples = load_dataset(data_root(o), o.split);
  auto preds = metrics::parse_seg_predictions(read_json(o.pred), o.pred);
  for (auto& p : preds) {
    p = metrics::apply_declared_no_target(std::move(p));
    if (o.fifty_pixel && p.mask.count() < o.min_pixels) p.mask.clear();
  }
  const auto pairs = metrics::align(std::move(preds), samples);
  const auto r = metrics::evaluate_gres(pairs, o.workers);

  Table t("GRES " + o.split + " (" + std::to_string(pairs.size()) + " samples" +
          (o.fifty_pixel ? ", masks under " + std::to_string(o.min_pixels) + " px cleared" : "") + ")");
  t.row("gIoU", pct(r.giou));
  t.row("cIoU", pct(r.ciou) + (r.ciou_degenerate ? "  (degenerate: total union is 0)" : ""));
  for (const auto& [thr, v] : r.pr_at) t.row("Pr@" + num(thr, 1), pct(v));
  t.row("N-acc", pct(r.n_acc));
  t.row("T-acc", pct(r.t_acc));
  t.print(out);

  json doc = metrics::to_json(r);
  doc["split"] = o.split;
  doc["samples"] = pairs.size();
  doc["fifty_pixel"] = o.fifty_pixel;
  write_out(o.out, doc);
  return r.ciou_degenerate ? kDegenerate : kOk;
}

struct EvalGrecOpts : Common {
  std::string pred;
  std::string strategy = "none";
  double tau = 0.7;
  int k = 1;
  std::string counts;
  bool ap = false;
  double iou = 0.5;
};

inline metrics::BoxSelectionOptions box_selection(const EvalGrecOpts& o) {
  metrics::BoxSelectionOptions s;
  s.tau = o.tau;
  s.k = o.k;
  const std::string& n = o.strategy;
  if (n == "none") {
    s.mode = metrics::BoxSelection::kAsGiven;
  } else if (n == "threshold") {
    s.mode = metrics::BoxSelection::kThreshold;
  } else if (n == "top-k") {
    s.mode = metrics::BoxSelection::kTopK;
  } else if (n.starts_with("top-")) {
    s.mode = metrics::BoxSelection::kTopK;
    try {
      std::size_t pos = 0;
      s.k = std::stoi(n.substr(4), &pos);
      if (pos != n.size() - 4 || s.k < 1) throw std::invalid_argument(n);
    } catch (const std::exception&) {
      throw InvalidArgument("bad strategy '" + n + "'");
    }
  } else if (n == "count") {
    if (o.counts.empty()) throw InvalidArgument("--strategy count needs --counts");
    s.mode = metrics::BoxSelection::kCount;
    s.counts = read_counts(o.counts);
  } else {
    throw InvalidArgument("unknown strategy '" + n + "' (expected none, threshold, top-k, top-<k> or count)");
  }
  return s;
}

inline int eval_grec(const EvalGrecOpts& o, std::ostream& out) {
  const auto samples = load_dataset(data_root(o), o.split);
  const auto sel = box_selection(o);
  auto raw = metrics::align(metrics::parse_det_predictions(read_json(o.pred), o.pred), samples);
  if (o.ap)
    for (const auto& [p, s] : raw)
      for (const auto& b : p.boxes)
        if (std::isnan(b.score))
          throw InvalidArgument("--ap needs a score on every box (ref_id " + std::to_string(p.ref_id) + ")");
  std::vector<metrics::DetPair> selected;
  for (const auto& [p, s] : raw) selected.push_back({{p.ref_id, metrics::select_boxes(p, sel)}, s});
  auto r = metrics::evaluate_grec(selected, o.iou);
  // AP ranks every raw box by score, so it sees the list before selection.
  if (o.ap) r.ap = metrics::average_precision(raw);

  Table t("GREC " + o.split + " (" + std::to_string(raw.size()) + " samples, strategy " + o.strategy + ")");
  t.row("Pr@(F1=1, IoU>=" + num(o.iou, 2) + ")", pct(r.pr_f1));
  t.row("N-acc", pct(r.n_acc));
  t.row("T-acc", pct(r.t_acc));
  if (o.ap) t.row("AP", pct(r.ap));
  t.print(out);

  json doc = metrics::to_json(r);
  doc["split"] = o.split;
  doc["samples"] = raw.size();
  doc["strategy"] = o.strategy;
  doc["iou_threshold"] = o.iou;
  if (sel.mode == metrics::BoxSelection::kThreshold) doc["tau"] = o.tau;
  if (sel.mode == metrics::BoxSelection::kTopK) doc["k"] = sel.k;
  write_out(o.out, doc);
  return kOk;
}

struct EvalGregOpts : Common {
  std::string pred;
};

inline int eval_greg(const EvalGregOpts& o, std::ostream& out) {
  const auto samples = load_dataset(data_root(o), o.split);
  const auto items = metrics::greg_items(metrics::parse_candidates(read_json(o.pred), o.pred), samples);
  const auto r = metrics::evaluate_greg(items);
  Table t("GREG " + o.split + " (" + std::to_string(items.size()) + " items)");
  auto row = [&](const char* name, const metrics::GregSubset& s) {
    t.row(name, "n=" + std::to_string(s.count) + "  METEOR " + num(s.meteor) + "  CIDEr " + num(s.cider));
  };
  row("single-target", r.single_target);
  row("multi-target", r.multi_target);
  row("overall", r.overall);
  t.print(out);
  json doc = metrics::to_json(r);
  doc["split"] = o.split;
  write_out(o.out, doc);
  return kOk;
}

struct TrainOpts : Common {
  std::string config;
  std::string out_dir;
  std::uint64_t seed = 0;
  int iterations = 2000;
  int batch = 16;
  double lr = 3e-3;
  int eval_every = 100;
  bool synthetic = false;
  int n_single = 6, n_multi = 6, n_no_target = 4;
  std::optional<double> stop_giou, stop_pr_f1;
  int log_every = 100;
};

inline int train(TrainOpts o, std::ostream& out) {
  if (o.out_dir.empty()) throw InvalidArgument("--out-dir is required");
  const auto cfg = o.config.empty() ? model::ModelConfig{} : model::ModelConfig::load(o.config);
  cfg.validate();
  std::vector<GrexSample> samples;
  std::map<Id, RgbImage> pixels;
  if (o.synthetic) {
    auto sc = scene_for(cfg.image_size);
    sc.n_single = o.n_single;
    sc.n_multi = o.n_multi;
    sc.n_no_target = o.n_no_target;
    auto ds = synthetic::generate_synthetic(sc, o.seed);
    samples = std::move(ds.data.samples);
    pixels = std::move(ds.data.pixels);
  } else {
    const auto root = data_root(o);
    samples = load_dataset(root, o.split);
    pixels = load_pixels(root, samples);
  }
  for (const auto& [id, img] : pixels)
    if (img.width != cfg.image_size || img.height != cfg.image_size)
      throw DimensionMismatch("image " + std::to_string(id) + " is " + std::to_string(img.width) + "x" +
                              std::to_string(img.height) + " but image_size is " +
                              std::to_string(cfg.image_size));
  const auto vocab = model::Vocabulary::build(samples);
  const auto examples = model::make_examples(samples, pixels, vocab);
  model::Rela<float> m(cfg, vocab.size());
  m.init(o.seed);

  model::TrainOptions t;
  t.iterations = o.iterations;
  t.batch_size = o.batch;
  t.lr = o.lr;
  t.seed = o.seed;
  t.eval_every = o.eval_every;
  t.stop_giou = o.stop_giou;
  t.stop_pr_f1 = o.stop_pr_f1;
  t.on_iteration = [&](int it, const model::LossBreakdown& l) {
    if (o.log_every > 0 && it % o.log_every == 0)
      out << "iter " << it << "  loss " << num(l.total) << "  (mask " << num(l.mask) << ", box "
          << num(l.box) << ", minimap " << num(l.minimap) << ", count " << num(l.count) << ")\n";
  };
  const auto r = model::train_toy(m, examples, t);

  fs::create_directories(o.out_dir);
  model::save_checkpoint((fs::path(o.out_dir) / "checkpoint.grex").string(), m, vocab);
  json loss = json::array();
  for (std::size_t i = 0; i < r.trace.size(); ++i) {
    const auto& l = r.trace[i];
    loss.push_back({{"iteration", i + 1}, {"total", l.total}, {"mask", l.mask}, {"box", l.box},
                    {"minimap", l.minimap}, {"count", l.count}});
  }
  json evals = json::array();
  for (const auto& e : r.evals)
    evals.push_back({{"iteration", e.iteration}, {"giou", e.giou}, {"ciou", e.ciou},
                     {"pr_f1", e.pr_f1}, {"mean_loss", e.mean_loss}});
  json doc{{"iterations_run", r.iterations_run}, {"seed", o.seed}, {"samples", samples.size()},
           {"loss", loss}, {"evals", evals}};
  write_out((fs::path(o.out_dir) / "trace.json").string(), doc);

  Table tab("train-toy (" + std::to_string(samples.size()) + " samples, " +
            std::to_string(r.iterations_run) + " iterations)");
  if (!r.trace.empty()) tab.row("final batch loss", num(r.trace.back().total, 6));
  if (!r.evals.empty()) {
    tab.row("gIoU", pct(r.evals.back().giou));
    tab.row("Pr@F1", pct(r.evals.back().pr_f1));
  }
  tab.row("checkpoint", (fs::path(o.out_dir) / "checkpoint.grex").string());
  tab.print(out);
  return kOk;
}

struct PredictOpts : Common {
  std::string checkpoint;
  std::string out_dir;
  std::string strategy = "count";
  double tau = 0.7;
};

inline int predict(const PredictOpts& o, std::ostream& out) {
  if (o.out_dir.empty()) throw InvalidArgument("--out-dir is required");
  const auto ck = model::load_checkpoint(o.checkpoint);
  const auto m = model::model_from_checkpoint<float>(ck);
  auto strategy = model::Strategy::parse(o.strategy);
  strategy.tau = o.tau;
  const auto root = data_root(o);
  const auto samples = load_dataset(root, o.split);
  const auto pixels = load_pixels(root, samples);
  for (const auto& [id, img] : pixels)
    if (img.width != ck.config.image_size || img.height != ck.config.image_size)
      throw DimensionMismatch("image " + std::to_string(id) + " is " + std::to_string(img.width) + "x" +
                              std::to_string(img.height) + " but the checkpoint expects " +
                              std::to_string(ck.config.image_size));
  json gres = json::array(), grec = json::array(), counts = json::array();
  std::size_t n_boxes = 0, n_empty = 0;
  for (const auto& s : samples) {
    const auto outp = m.predict(pixels.at(s.image_id), ck.vocab.encode(s.expression));
    const auto sel = model::select_outputs(outp, strategy);
    json rec{{"ref_id", s.ref_id}, {"mask", rle_to_json(rle_encode(sel.mask))}};
    if (strategy.kind == model::StrategyKind::kCountDriven) rec["no_target"] = sel.count_class == 0;
    gres.push_back(rec);
    json boxes = json::array();
    for (const auto& b : sel.boxes) boxes.push_back({{"bbox", box_to_json(b.box)}, {"score", b.score}});
    n_boxes += sel.boxes.size();
    if (sel.boxes.empty()) ++n_empty;
    grec.push_back({{"ref_id", s.ref_id}, {"boxes", boxes}});
    counts.push_back({{"ref_id", s.ref_id}, {"count", sel.count_class}});
  }
  const fs::path dir(o.out_dir);
  write_out((dir / "gres.json").string(), gres);
  write_out((dir / "grec.json").string(), grec);
  write_out((dir / "counts.json").string(), counts);
  Table t("predict " + o.split + " (" + std::to_string(samples.size()) + " samples, strategy " + o.strategy + ")");
  t.row("boxes emitted", std::to_string(n_boxes));
  t.row("empty box lists", std::to_string(n_empty));
  t.row("written to", dir.string());
  t.print(out);
  return kOk;
}

struct StatsOpts : Common {
  std::size_t top = 25;
};

inline int stats(const StatsOpts& o, std::ostream& out) {
  const auto samples = load_dataset(data_root(o), o.split);
  const auto c = taxonomy_counts(samples);
  const auto words = vocab_stats(samples);
  Table t("stats " + o.split);
  t.row("single-target", std::to_string(c.single_target));
  t.row("multi-target", std::to_string(c.multi_target));
  t.row("no-target", std::to_string(c.no_target));
  t.row("total", std::to_string(c.total()));
  t.print(out);
  Table w("top words");
  json jw = json::array();
  for (std::size_t i = 0; i < words.size() && i < o.top; ++i) {
    w.row(words[i].word, std::to_string(words[i].count) + "  " + num(words[i].frequency));
    jw.push_back({{"word", words[i].word}, {"count", words[i].count}, {"frequency", words[i].frequency}});
  }
  w.print(out);
  write_out(o.out, {{"split", o.split},
                    {"single_target", c.single_target},
                    {"multi_target", c.multi_target},
                    {"no_target", c.no_target},
                    {"total", c.total()},
                    {"words", jw}});
  return kOk;
}

struct SynthOpts {
  std::string out_dir;
  std::uint64_t seed = 0;
  std::vector<std::string> splits{"train"};
  int n_single = 6, n_multi = 6, n_no_target = 4;
  int image_size = 64;
};

inline int generate(const SynthOpts& o, std::ostream& out) {
  if (o.out_dir.empty()) throw InvalidArgument("--out-dir is required");
  Dataset all;
  Id next_image = 1, next_ann = 1, next_ref = 1;
  Table t("generate-synthetic (seed " + std::to_string(o.seed) + ")");
  for (std::size_t i = 0; i < o.splits.size(); ++i) {
    auto sc = scene_for(o.image_size);
    sc.n_single = o.n_single;
    sc.n_multi = o.n_multi;
    sc.n_no_target = o.n_no_target;
    sc.split = parse_split(o.splits[i]);
    sc.first_image_id = next_image;
    sc.first_ann_id = next_ann;
    sc.first_ref_id = next_ref;
    // Each split draws from its own stream so adding a split leaves the
    // earlier ones unchanged.
    auto ds = synthetic::generate_synthetic(sc, o.seed + i).data;
    for (const auto& im : ds.images) next_image = std::max(next_image, im.id + 1);
    for (const auto& in : ds.instances) next_ann = std::max(next_ann, in.ann_id + 1);
    for (const auto& s : ds.samples) next_ref = std::max(next_ref, s.ref_id + 1);
    t.row(o.splits[i], std::to_string(ds.samples.size()) + " samples, " + std::to_string(ds.images.size()) + " images");
    all.images.insert(all.images.end(), ds.images.begin(), ds.images.end());
    all.instances.insert(all.instances.end(), ds.instances.begin(), ds.instances.end());
    all.samples.insert(all.samples.end(), ds.samples.begin(), ds.samples.end());
    all.pixels.merge(ds.pixels);
  }
  write_dataset(o.out_dir, all);
  t.row("written to", o.out_dir);
  t.print(out);
  return kOk;
}

struct ServeOpts {
  std::string project;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string ui;
  std::uint64_t seed = 0;
  std::size_t snapshot_every = 200;
};

// Blocks until SIGINT or SIGTERM.
inline int serve(const ServeOpts& o, std::ostream& out) {
  if (o.project.empty()) throw InvalidArgument("--project is required");
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);  // server threads inherit the mask
  auto svc = annotation::AnnotationService::open(o.project, o.seed, o.snapshot_every);
  std::optional<fs::path> ui;
  if (!o.ui.empty()) ui = o.ui;
  annotation::AnnotationHttp http(svc, ui);
  const int port = http.bind(o.host, o.port);
  http.start();
  out << "serving " << o.project << " on http://" << o.host << ":" << port << "/api/v1/"
      << (ui && fs::is_directory(*ui) ? " with UI from " + ui->string() : std::string()) << std::endl;
  int sig = 0;
  sigwait(&set, &sig);
  http.stop();
  out << "stopped" << std::endl;
  return kOk;
}

}  // namespace detail

/// Parses arguments and runs one subcommand. Reports go to `out`,
/// diagnostics to `err`.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
  using namespace detail;
  CLI::App app{"grex: generalized referring expression toolkit"};
  app.require_subcommand(1);

  EvalGresOpts gres;
  auto* c = app.add_subcommand("eval-gres", "score segmentation predictions");
  add_data(c, gres);
  c->add_option("--pred", gres.pred, "prediction file")->required();
  c->add_flag("--fifty-pixel", gres.fifty_pixel, "clear predicted masks under --min-pixels before scoring");
  c->add_option("--min-pixels", gres.min_pixels)->capture_default_str();
  c->add_option("--workers", gres.workers, "worker threads")->capture_default_str()->check(CLI::PositiveNumber);
  c->add_option("--out", gres.out, "JSON report path");

  EvalGrecOpts grec;
  c = app.add_subcommand("eval-grec", "score box predictions");
  add_data(c, grec);
  c->add_option("--pred", grec.pred, "prediction file")->required();
  c->add_option("--strategy", grec.strategy, "none, threshold, top-k, top-<k> or count")->capture_default_str();
  c->add_option("--tau", grec.tau, "score threshold")->capture_default_str();
  c->add_option("--k", grec.k, "boxes kept by top-k")->capture_default_str();
  c->add_option("--counts", grec.counts, "per-ref box counts for --strategy count");
  c->add_option("--iou", grec.iou, "IoU threshold for a match")->capture_default_str();
  c->add_flag("--ap", grec.ap, "also report AP over IoU 0.50:0.95");
  c->add_option("--workers", grec.workers)->check(CLI::PositiveNumber);
  c->add_option("--out", grec.out, "JSON report path");

  EvalGregOpts greg;
  c = app.add_subcommand("eval-greg", "score generated expressions");
  add_data(c, greg);
  c->add_option("--pred", greg.pred, "candidate file")->required();
  c->add_option("--workers", greg.workers)->check(CLI::PositiveNumber);
  c->add_option("--out", greg.out, "JSON report path");

  TrainOpts tr;
  tr.split = "train";
  c = app.add_subcommand("train-toy", "train the toy model");
  add_data(c, tr);
  c->add_option("--config", tr.config, "model config file (default: built-in toy config)");
  c->add_flag("--synthetic", tr.synthetic, "train on a generated set instead of --data");
  c->add_option("--single", tr.n_single)->capture_default_str();
  c->add_option("--multi", tr.n_multi)->capture_default_str();
  c->add_option("--no-target", tr.n_no_target)->capture_default_str();
  c->add_option("--seed", tr.seed)->capture_default_str();
  c->add_option("--iterations", tr.iterations)->capture_default_str();
  c->add_option("--batch", tr.batch)->capture_default_str();
  c->add_option("--lr", tr.lr)->capture_default_str();
  c->add_option("--eval-every", tr.eval_every)->capture_default_str();
  c->add_option("--stop-giou", tr.stop_giou, "stop once gIoU reaches this");
  c->add_option("--stop-pr-f1", tr.stop_pr_f1, "stop once Pr@F1 reaches this");
  c->add_option("--log-every", tr.log_every)->capture_default_str();
  c->add_option("--out-dir", tr.out_dir, "writes checkpoint.grex and trace.json")->required();

  PredictOpts pr;
  c = app.add_subcommand("predict", "run a checkpoint over a split");
  add_data(c, pr);
  c->add_option("--checkpoint", pr.checkpoint)->required();
  c->add_option("--strategy", pr.strategy, "count, threshold, top-<k> or fifty_pixel")->capture_default_str();
  c->add_option("--tau", pr.tau)->capture_default_str();
  c->add_option("--out-dir", pr.out_dir, "writes gres.json, grec.json and counts.json")->required();

  StatsOpts st;
  c = app.add_subcommand("stats", "taxonomy counts and word frequencies");
  add_data(c, st);
  c->add_option("--top", st.top)->capture_default_str();
  c->add_option("--out", st.out, "JSON report path");

  SynthOpts sy;
  c = app.add_subcommand("generate-synthetic", "write a synthetic dataset");
  c->add_option("--out-dir", sy.out_dir)->required();
  c->add_option("--seed", sy.seed)->capture_default_str();
  c->add_option("--splits", sy.splits, "splits to generate")->delimiter(',')->capture_default_str();
  c->add_option("--single", sy.n_single, "single-target samples per split")->capture_default_str();
  c->add_option("--multi", sy.n_multi, "multi-target samples per split")->capture_default_str();
  c->add_option("--no-target", sy.n_no_target, "no-target samples per split")->capture_default_str();
  c->add_option("--image-size", sy.image_size)->capture_default_str();

  ServeOpts sv;
  c = app.add_subcommand("serve-annotation", "run the annotation service");
  c->add_option("--project", sv.project, "project directory")->required();
  c->add_option("--host", sv.host)->capture_default_str();
  c->add_option("--port", sv.port, "0 picks a free port")->capture_default_str();
  c->add_option("--ui", sv.ui, "static UI bundle directory");
  c->add_option("--seed", sv.seed)->capture_default_str();
  c->add_option("--snapshot-every", sv.snapshot_every)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kInputError;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    if (name == "eval-gres") return eval_gres(gres, out);
    if (name == "eval-grec") return eval_grec(grec, out);
    if (name == "eval-greg") return eval_greg(greg, out);
    if (name == "train-toy") return train(tr, out);
    if (name == "predict") return predict(pr, out);
    if (name == "stats") return stats(st, out);
    if (name == "generate-synthetic") return generate(sy, out);
    if (name == "serve-annotation") return serve(sv, out);
  } catch (const model::TrainingDiverged& e) {
    err << "error: training diverged: " << e.what() << "\n";
    return kFailure;
  } catch (const InvalidArgument& e) {
    err << "error: " << e.what() << "\n";
    return kInputError;
  } catch (const SchemaError& e) {
    err << "error: " << e.what() << "\n";
    return kInputError;
  } catch (const NotFound& e) {
    err << "error: " << e.what() << "\n";
    return kInputError;
  } catch (const DimensionMismatch& e) {
    err << "error: " << e.what() << "\n";
    return kInputError;
  } catch (const MalformedRle& e) {
    err << "error: " << e.what() << "\n";
    return kInputError;
  } catch (const json::exception& e) {
    err << "error: " << e.what() << "\n";
    return kInputError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return name == "serve-annotation" ? kInputError : kFailure;
  }
  return kFailure;
}

}  // namespace grex::cli
