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

// Small builders shared by the test suites.

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "grex/core/geometry.hpp"
#include "grex/core/mask.hpp"
#include "grex/dataset/io.hpp"
#include "grex/dataset/sample.hpp"

namespace grex::testing {

namespace fs = std::filesystem;

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    path_ = fs::temp_directory_path() /
            ("grex_test_" + std::to_string(stamp) + "_" + std::to_string(counter++));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& s) const { return path_ / s; }

 private:
  fs::path path_;
};

inline std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void spit(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  out << s;
}

/// Filled rectangle [x1, x2) x [y1, y2) on an h x w canvas.
inline BinaryMask rect_mask(int h, int w, int x1, int y1, int x2, int y2) {
  BinaryMask m(h, w);
  for (int y = y1; y < y2; ++y)
    for (int x = x1; x < x2; ++x) m.set(y, x);
  return m;
}

inline BinaryMask random_mask(std::mt19937_64& rng, int h, int w, double density) {
  std::bernoulli_distribution on(density);
  BinaryMask m(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (on(rng)) m.set(y, x);
  return m;
}

/// Sample whose targets are the given rectangles (pixel corner form, integer
/// coordinates). The mask is the union of the filled rectangles.
inline GrexSample box_sample(Id ref_id, const std::vector<Box>& targets, int size = 32,
                             std::string expression = "the thing") {
  GrexSample s;
  s.ref_id = ref_id;
  s.image_id = ref_id;
  s.height = s.width = size;
  s.expression = std::move(expression);
  s.gt_mask = BinaryMask(size, size);
  Id ann = ref_id * 100;
  for (const auto& b : targets) {
    s.gt_mask |= rect_mask(size, size, int(b.x1), int(b.y1), int(b.x2), int(b.y2));
    s.gt_boxes.push_back(b);
    s.target_ids.push_back(ann++);
  }
  s.no_target = targets.empty();
  return s;
}

/// Writes a minimal dataset with one image per ref. `refs` lists, per ref,
/// the rectangles it targets; every rectangle becomes one instance.
struct FixtureRef {
  std::string sentence;
  std::vector<Box> targets;
};

inline Dataset fixture_dataset(const std::vector<FixtureRef>& refs, Split split = Split::kVal,
                               int size = 32) {
  Dataset ds;
  Id ann = 1;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const Id ref_id = Id(i + 1);
    ImageInfo info{ref_id, size, size, ""};
    ds.images.push_back(info);
    std::vector<InstanceRecord> insts;
    for (const auto& b : refs[i].targets) {
      InstanceRecord r;
      r.ann_id = ann++;
      r.image_id = ref_id;
      r.box = b;
      r.mask = rle_encode(rect_mask(size, size, int(b.x1), int(b.y1), int(b.x2), int(b.y2)));
      r.category = "thing";
      insts.push_back(r);
      ds.instances.push_back(r);
    }
    std::vector<const InstanceRecord*> ptrs;
    for (const auto& r : insts) ptrs.push_back(&r);
    ds.samples.push_back(make_sample(ref_id, info, refs[i].sentence, ptrs, split));
  }
  return ds;
}

}  // namespace grex::testing
