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
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "grex/core/error.hpp"
#include "grex/core/mask.hpp"
#include "grex/dataset/image.hpp"
#include "grex/dataset/sample.hpp"

namespace grex {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline constexpr const char* kInstanceFile = "instances.json";

inline std::string refs_file_name(Split s) {
  return "refs_" + std::string(to_string(s)) + ".json";
}

/// A gRefCOCO-format corpus held in memory. `pixels` is optional and only
/// populated for synthetic data or when images are loaded explicitly.
struct Dataset {
  std::vector<ImageInfo> images;
  std::vector<InstanceRecord> instances;
  std::vector<GrexSample> samples;
  std::map<Id, RgbImage> pixels;
};

// JSON codecs for the shared record types.

inline json rle_to_json(const RleMask& rle) {
  return json{{"size", {rle.height, rle.width}}, {"counts", rle.counts}};
}

inline RleMask rle_from_json(const json& j, const std::string& where) {
  if (!j.is_object() || !j.contains("size") || !j.contains("counts"))
    throw SchemaError(where + ": segmentation needs 'size' and 'counts'");
  const auto& size = j.at("size");
  if (!size.is_array() || size.size() != 2)
    throw SchemaError(where + ".size: expected [height, width]");
  RleMask rle;
  try {
    rle.height = size[0].get<int>();
    rle.width = size[1].get<int>();
    rle.counts = j.at("counts").get<std::vector<std::uint32_t>>();
  } catch (const json::exception& e) {
    throw SchemaError(where + ": " + e.what());
  }
  return rle;
}

inline json box_to_json(const Box& b) {
  const auto xywh = b.to_xywh();
  return json::array({xywh[0], xywh[1], xywh[2], xywh[3]});
}

inline Box box_from_json(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 4 || !std::all_of(j.begin(), j.end(), [](const json& v) {
        return v.is_number();
      }))
    throw SchemaError(where + ": bbox must be [x, y, w, h]");
  const double w = j[2].get<double>(), h = j[3].get<double>();
  if (w < 0 || h < 0) throw SchemaError(where + ": negative bbox extent");
  return Box::from_xywh(j[0].get<double>(), j[1].get<double>(), w, h);
}

namespace detail {

inline json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw NotFound("missing file: " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
}

inline void write_json_file(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(1) << "\n";
  if (!out) throw Error("write failed: " + path.string());
}

template <typename T>
T field(const json& rec, const char* key, const std::string& where) {
  if (!rec.contains(key)) throw SchemaError(where + ": missing field '" + key + "'");
  try {
    return rec.at(key).get<T>();
  } catch (const json::exception& e) {
    throw SchemaError(where + "." + key + ": " + e.what());
  }
}

inline bool box_tightly_bounds(const Box& box, const BinaryMask& mask) {
  const Box tight = mask.bounding_box();
  return std::abs(box.x1 - tight.x1) <= 1.0 && std::abs(box.y1 - tight.y1) <= 1.0 &&
         std::abs(box.x2 - tight.x2) <= 1.0 && std::abs(box.y2 - tight.y2) <= 1.0;
}

}  // namespace detail

struct InstanceIndex {
  std::map<Id, ImageInfo> images;
  std::map<Id, InstanceRecord> instances;
};

/// Reads and validates `instances.json`.
inline InstanceIndex load_instances(const fs::path& root) {
  const fs::path path = root / kInstanceFile;
  const json doc = detail::read_json_file(path);
  const std::string file = path.filename().string();
  if (!doc.is_object() || !doc.contains("images") || !doc.contains("annotations"))
    throw SchemaError(file + ": expected object with 'images' and 'annotations'");
  InstanceIndex idx;
  const auto& images = doc.at("images");
  for (std::size_t i = 0; i < images.size(); ++i) {
    const std::string where = file + ": images[" + std::to_string(i) + "]";
    ImageInfo info;
    info.id = detail::field<Id>(images[i], "id", where);
    info.height = detail::field<int>(images[i], "height", where);
    info.width = detail::field<int>(images[i], "width", where);
    info.file_name = images[i].value("file_name", std::string{});
    if (info.height < 1 || info.width < 1) throw SchemaError(where + ": non-positive size");
    if (!idx.images.emplace(info.id, info).second)
      throw SchemaError(where + ": duplicate image id " + std::to_string(info.id));
  }
  const auto& anns = doc.at("annotations");
  for (std::size_t i = 0; i < anns.size(); ++i) {
    const std::string where = file + ": annotations[" + std::to_string(i) + "]";
    const auto& a = anns[i];
    InstanceRecord rec;
    rec.ann_id = detail::field<Id>(a, "ann_id", where);
    rec.image_id = detail::field<Id>(a, "image_id", where);
    rec.category = a.value("category", std::string{});
    if (!a.contains("bbox")) throw SchemaError(where + ": missing field 'bbox'");
    rec.box = box_from_json(a.at("bbox"), where + ".bbox");
    if (!a.contains("segmentation")) throw SchemaError(where + ": missing field 'segmentation'");
    rec.mask = rle_from_json(a.at("segmentation"), where + ".segmentation");
    const auto img = idx.images.find(rec.image_id);
    if (img == idx.images.end())
      throw SchemaError(where + ": unknown image_id " + std::to_string(rec.image_id));
    if (rec.mask.height != img->second.height || rec.mask.width != img->second.width)
      throw SchemaError(where + ": segmentation size differs from image size");
    BinaryMask m;
    try {
      m = rle_decode(rec.mask);
    } catch (const MalformedRle& e) {
      throw SchemaError(where + ".segmentation: " + e.what());
    }
    if (!detail::box_tightly_bounds(rec.box, m))
      throw SchemaError(where + ": bbox does not bound the mask foreground");
    if (!idx.instances.emplace(rec.ann_id, rec).second)
      throw SchemaError(where + ": duplicate ann_id " + std::to_string(rec.ann_id));
  }
  return idx;
}

/// Builds a validated sample from a reference and its instances.
inline GrexSample make_sample(Id ref_id, const ImageInfo& image, std::string expression,
                              const std::vector<const InstanceRecord*>& targets, Split split) {
  GrexSample s;
  s.ref_id = ref_id;
  s.image_id = image.id;
  s.height = image.height;
  s.width = image.width;
  s.expression = std::move(expression);
  s.gt_mask = BinaryMask(image.height, image.width);
  s.split = split;
  for (const auto* inst : targets) {
    s.target_ids.push_back(inst->ann_id);
    s.gt_mask |= rle_decode(inst->mask);
    s.gt_boxes.push_back(inst->box);
  }
  s.no_target = targets.empty();
  return s;
}

/// Loads `refs_<split>.json` against `instances.json` under `root`.
inline std::vector<GrexSample> load_dataset(const fs::path& root, Split split) {
  const InstanceIndex idx = load_instances(root);
  const fs::path path = root / refs_file_name(split);
  const json doc = detail::read_json_file(path);
  const std::string file = path.filename().string();
  const json* refs = &doc;
  if (doc.is_object()) {
    if (!doc.contains("refs")) throw SchemaError(file + ": missing 'refs' array");
    refs = &doc.at("refs");
  }
  if (!refs->is_array()) throw SchemaError(file + ": 'refs' must be an array");

  std::vector<GrexSample> out;
  std::set<Id> seen;
  for (std::size_t i = 0; i < refs->size(); ++i) {
    const auto& r = (*refs)[i];
    const std::string where = file + ": refs[" + std::to_string(i) + "]";
    const auto rec_split = parse_split(detail::field<std::string>(r, "split", where));
    if (rec_split != split) continue;
    const Id ref_id = detail::field<Id>(r, "ref_id", where);
    const Id image_id = detail::field<Id>(r, "image_id", where);
    auto sentence = detail::field<std::string>(r, "sentence", where);
    const auto ann_ids = detail::field<std::vector<Id>>(r, "ann_ids", where);
    if (!seen.insert(ref_id).second)
      throw SchemaError(where + ": duplicate ref_id " + std::to_string(ref_id));
    const auto img = idx.images.find(image_id);
    if (img == idx.images.end())
      throw SchemaError(where + ": unknown image_id " + std::to_string(image_id));
    std::vector<const InstanceRecord*> targets;
    std::set<Id> unique_ids;
    for (std::size_t k = 0; k < ann_ids.size(); ++k) {
      const auto it = idx.instances.find(ann_ids[k]);
      if (it == idx.instances.end())
        throw SchemaError(where + ".ann_ids[" + std::to_string(k) + "]: unknown ann_id " +
                          std::to_string(ann_ids[k]));
      if (it->second.image_id != image_id)
        throw SchemaError(where + ".ann_ids[" + std::to_string(k) + "]: instance " +
                          std::to_string(ann_ids[k]) + " belongs to another image");
      if (!unique_ids.insert(ann_ids[k]).second)
        throw SchemaError(where + ".ann_ids: duplicate id " + std::to_string(ann_ids[k]));
      targets.push_back(&it->second);
    }
    GrexSample s = make_sample(ref_id, img->second, std::move(sentence), targets, split);
    if (r.contains("mask")) {
      BinaryMask declared;
      try {
        declared = rle_decode(rle_from_json(r.at("mask"), where + ".mask"));
      } catch (const MalformedRle& e) {
        throw SchemaError(where + ".mask: " + e.what());
      }
      if (declared != s.gt_mask)
        throw SchemaError(where + ".mask: stored union mask disagrees with the union of "
                                  "its instance masks");
    }
    if (r.contains("no_target") && r.at("no_target").get<bool>() != s.no_target)
      throw SchemaError(where + ".no_target: flag disagrees with ann_ids");
    if (auto why = sample_invariant_violation(s); !why.empty())
      throw SchemaError(where + ": " + why);
    out.push_back(std::move(s));
  }
  return out;
}

inline std::vector<GrexSample> load_dataset(const fs::path& root, std::string_view split) {
  return load_dataset(root, parse_split(split));
}

inline RgbImage load_image(const fs::path& root, const ImageInfo& info) {
  const std::string name =
      info.file_name.empty() ? std::to_string(info.id) + ".ppm" : info.file_name;
  return read_ppm(root / "images" / name);
}

inline json sample_to_ref_json(const GrexSample& s) {
  return json{{"ref_id", s.ref_id},
              {"image_id", s.image_id},
              {"split", std::string(to_string(s.split))},
              {"sentence", s.expression},
              {"ann_ids", s.target_ids},
              {"no_target", s.no_target}};
}

/// Writes `instances.json`, one refs file per split (empty arrays for absent
/// splits) and, when present, `images/<id>.ppm`.
inline void write_dataset(const fs::path& root, const Dataset& ds) {
  fs::create_directories(root);
  json images = json::array();
  for (const auto& im : ds.images) {
    images.push_back({{"id", im.id},
                      {"height", im.height},
                      {"width", im.width},
                      {"file_name", im.file_name}});
  }
  json anns = json::array();
  for (const auto& inst : ds.instances) {
    anns.push_back({{"ann_id", inst.ann_id},
                    {"image_id", inst.image_id},
                    {"category", inst.category},
                    {"bbox", box_to_json(inst.box)},
                    {"segmentation", rle_to_json(inst.mask)}});
  }
  detail::write_json_file(root / kInstanceFile, {{"images", images}, {"annotations", anns}});
  for (auto split : kAllSplits) {
    json refs = json::array();
    for (const auto& s : ds.samples)
      if (s.split == split) refs.push_back(sample_to_ref_json(s));
    detail::write_json_file(root / refs_file_name(split),
                            {{"split", std::string(to_string(split))}, {"refs", refs}});
  }
  if (!ds.pixels.empty()) {
    fs::create_directories(root / "images");
    for (const auto& im : ds.images) {
      const auto it = ds.pixels.find(im.id);
      if (it == ds.pixels.end()) continue;
      const std::string name = im.file_name.empty() ? std::to_string(im.id) + ".ppm" : im.file_name;
      write_ppm(root / "images" / name, it->second);
    }
  }
}

/// Image ids that occur in more than one split. Training must never see an
/// evaluation image, and evaluation splits must not share images.
inline std::vector<Id> split_leakage(const std::vector<GrexSample>& samples) {
  std::map<Id, std::set<Split>> where;
  for (const auto& s : samples) where[s.image_id].insert(s.split);
  std::vector<Id> leaked;
  for (const auto& [id, splits] : where)
    if (splits.size() > 1) leaked.push_back(id);
  return leaked;
}

}  // namespace grex
