#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "voxelinst/baseline.hpp"
#include "voxelinst/eval.hpp"
#include "voxelinst/trainer.hpp"
#include "voxelinst/volume.hpp"

namespace voxelinst {

struct SynthSection {
  SynthConfig generator;
  int stacks = 20;
  double mask_fraction = 1.0;
};

struct EvalSection {
  double detection_iou = 0.4;
  double segmentation_iou = 0.5;
  double marker_distance = 5.0;
};

struct CostSection {
  CostModel model;
  std::size_t n_instances = 1;
  std::vector<double> mask_fractions{0.2};
  // When set, box_unit_time is derived so that masks on every instance cost this much.
  double full_annotation_hours = 0.0;
};

struct PathSection {
  std::string data_dir;
  std::string checkpoint;
  std::string stack;
  std::string pred_dir;
  std::string gt_dir;
  std::string classmap;
};

// Single JSON document with one section per command. Missing keys take their
// defaults; unknown keys are rejected.
struct RunConfig {
  std::uint64_t seed = 0;
  SynthSection synth;
  TrainConfig train;
  EvalSection eval;
  BaselineConfig baseline;
  CostSection cost;
  PathSection paths;

  // Throws ConfigError carrying the JSON pointer of the offending key.
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::string& path);
  nlohmann::json to_json() const;
  void validate() const;
};

}  // namespace voxelinst
