#include "voxelinst/config.hpp"

#include <fstream>
#include <set>

#include "voxelinst/errors.hpp"

namespace voxelinst {

using nlohmann::json;

namespace {

// Strict reader over one JSON object: remembers which keys were consumed so
// that leftovers can be reported as unknown.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "/" : path_, "expected an object");
  }

  std::string at(const std::string& key) const { return path_ + "/" + key; }

  const json* find(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void integer(const std::string& key, int& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_integer()) throw ConfigError(at(key), "expected an integer");
      out = v->get<int>();
    }
  }
  void size(const std::string& key, std::size_t& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_integer() || v->get<long long>() < 0) {
        throw ConfigError(at(key), "expected a non-negative integer");
      }
      out = v->get<std::size_t>();
    }
  }
  void seed(const std::string& key, std::uint64_t& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_integer() || v->get<long long>() < 0) {
        throw ConfigError(at(key), "expected a non-negative integer");
      }
      out = v->get<std::uint64_t>();
    }
  }
  void real(const std::string& key, double& out) {
    if (const json* v = find(key)) {
      if (!v->is_number()) throw ConfigError(at(key), "expected a number");
      out = v->get<double>();
    }
  }
  void boolean(const std::string& key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) throw ConfigError(at(key), "expected a boolean");
      out = v->get<bool>();
    }
  }
  void string(const std::string& key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) throw ConfigError(at(key), "expected a string");
      out = v->get<std::string>();
    }
  }
  void triple(const std::string& key, Vec3& out) {
    if (const json* v = find(key)) out = parse_triple(*v, at(key));
  }
  void shape(const std::string& key, Shape3& out) {
    if (const json* v = find(key)) {
      if (!v->is_array() || v->size() != 3) throw ConfigError(at(key), "expected [D, H, W]");
      for (std::size_t i = 0; i < 3; ++i) {
        if (!(*v)[i].is_number_integer()) throw ConfigError(at(key) + "/" + std::to_string(i), "expected an integer");
      }
      out = {(*v)[0].get<int>(), (*v)[1].get<int>(), (*v)[2].get<int>()};
    }
  }
  void reals(const std::string& key, std::vector<double>& out) {
    if (const json* v = find(key)) {
      if (!v->is_array()) throw ConfigError(at(key), "expected an array of numbers");
      out.clear();
      for (std::size_t i = 0; i < v->size(); ++i) {
        if (!(*v)[i].is_number()) throw ConfigError(at(key) + "/" + std::to_string(i), "expected a number");
        out.push_back((*v)[i].get<double>());
      }
    }
  }

  static Vec3 parse_triple(const json& v, const std::string& path) {
    if (!v.is_array() || v.size() != 3) throw ConfigError(path, "expected a 3-element array");
    Vec3 out{};
    for (std::size_t i = 0; i < 3; ++i) {
      if (!v[i].is_number()) throw ConfigError(path + "/" + std::to_string(i), "expected a number");
      out[i] = v[i].get<double>();
    }
    return out;
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError(at(key), "unknown key");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void require(bool ok, const std::string& path, const std::string& what) {
  if (!ok) throw ConfigError(path, what);
}

bool open_unit(double v) { return v > 0.0 && v < 1.0; }

}  // namespace

RunConfig RunConfig::from_json(const json& j) {
  RunConfig cfg;
  Section root(j, "");
  root.seed("seed", cfg.seed);

  if (const json* s = root.find("synth")) {
    Section sec(*s, "/synth");
    auto& g = cfg.synth.generator;
    sec.integer("stacks", cfg.synth.stacks);
    sec.real("mask_fraction", cfg.synth.mask_fraction);
    sec.shape("shape", g.shape);
    if (const json* c = sec.find("count")) {
      if (!c->is_array() || c->size() != 2 || !(*c)[0].is_number_integer() || !(*c)[1].is_number_integer()) {
        throw ConfigError("/synth/count", "expected [min, max] integers");
      }
      g.min_count = (*c)[0].get<int>();
      g.max_count = (*c)[1].get<int>();
    }
    sec.triple("radius_min", g.radius_min);
    sec.triple("radius_max", g.radius_max);
    sec.real("min_separation", g.min_separation);
    sec.real("foreground_mean", g.foreground_mean);
    sec.real("background_mean", g.background_mean);
    sec.real("noise_sigma", g.noise_sigma);
    sec.integer("class_count", g.class_count);
    sec.finish();
  }

  if (const json* t = root.find("train")) {
    Section sec(*t, "/train");
    auto& tc = cfg.train;
    sec.integer("batch_size", tc.batch_size);
    sec.integer("crop_size", tc.crop_size);
    sec.real("learning_rate", tc.learning_rate);
    sec.real("momentum", tc.momentum);
    sec.integer("steps", tc.steps);
    sec.real("lambda", tc.lambda);
    sec.real("pos_thresh", tc.pos_thresh);
    sec.real("nms_thresh", tc.nms_thresh);
    sec.real("score_thresh", tc.score_thresh);
    sec.real("mask_thresh", tc.mask_thresh);
    sec.real("min_visible_fraction", tc.min_visible_fraction);
    sec.boolean("flips", tc.flips);
    sec.real("grad_clip", tc.grad_clip);
    sec.integer("lr_drop_step", tc.lr_drop_step);
    sec.real("lr_drop_factor", tc.lr_drop_factor);
    if (const json* n = sec.find("network")) {
      Section net(*n, "/train/network");
      auto& nc = tc.network;
      if (const json* w = net.find("widths")) {
        if (!w->is_array() || w->size() != 3) throw ConfigError("/train/network/widths", "expected 3 integers");
        for (std::size_t i = 0; i < 3; ++i) {
          if (!(*w)[i].is_number_integer()) {
            throw ConfigError("/train/network/widths/" + std::to_string(i), "expected an integer");
          }
          nc.widths[i] = (*w)[i].get<int>();
        }
      }
      net.integer("blocks_per_stage", nc.blocks_per_stage);
      net.integer("roi_size", nc.roi_size);
      net.integer("mask_hidden", nc.mask_hidden);
      if (const json* a = net.find("anchor_templates")) {
        if (!a->is_array() || a->empty()) {
          throw ConfigError("/train/network/anchor_templates", "expected a nonempty array of [d, h, w]");
        }
        nc.anchor_templates.clear();
        for (std::size_t i = 0; i < a->size(); ++i) {
          nc.anchor_templates.push_back(
              Section::parse_triple((*a)[i], "/train/network/anchor_templates/" + std::to_string(i)));
        }
      }
      net.finish();
    }
    sec.finish();
  }

  if (const json* e = root.find("eval")) {
    Section sec(*e, "/eval");
    sec.real("detection_iou", cfg.eval.detection_iou);
    sec.real("segmentation_iou", cfg.eval.segmentation_iou);
    sec.real("marker_distance", cfg.eval.marker_distance);
    sec.finish();
  }

  if (const json* b = root.find("baseline")) {
    Section sec(*b, "/baseline");
    int conn = static_cast<int>(cfg.baseline.connectivity);
    sec.integer("connectivity", conn);
    if (conn != 6 && conn != 26) throw ConfigError("/baseline/connectivity", "expected 6 or 26");
    cfg.baseline.connectivity = static_cast<Connectivity>(conn);
    sec.size("min_volume", cfg.baseline.min_volume);
    sec.finish();
  }

  if (const json* c = root.find("cost")) {
    Section sec(*c, "/cost");
    sec.real("box_unit_time", cfg.cost.model.box_unit_time);
    sec.real("mask_to_box_ratio", cfg.cost.model.mask_to_box_ratio);
    sec.size("n_instances", cfg.cost.n_instances);
    sec.reals("mask_fractions", cfg.cost.mask_fractions);
    sec.real("full_annotation_hours", cfg.cost.full_annotation_hours);
    sec.finish();
  }

  if (const json* p = root.find("paths")) {
    Section sec(*p, "/paths");
    sec.string("data_dir", cfg.paths.data_dir);
    sec.string("checkpoint", cfg.paths.checkpoint);
    sec.string("stack", cfg.paths.stack);
    sec.string("pred_dir", cfg.paths.pred_dir);
    sec.string("gt_dir", cfg.paths.gt_dir);
    sec.string("classmap", cfg.paths.classmap);
    sec.finish();
  }
  root.finish();

  cfg.train.seed = cfg.seed;
  cfg.train.network.init_seed = cfg.seed;
  cfg.train.network.class_count = cfg.synth.generator.class_count;
  cfg.validate();
  return cfg;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("/", "cannot open config file '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("/", std::string("config is not valid JSON: ") + e.what());
  }
  return from_json(j);
}

void RunConfig::validate() const {
  const auto& g = synth.generator;
  require(synth.stacks >= 1, "/synth/stacks", "must be >= 1");
  require(synth.mask_fraction >= 0.0 && synth.mask_fraction <= 1.0, "/synth/mask_fraction", "must lie in [0, 1]");
  require(g.shape.depth >= 1 && g.shape.height >= 1 && g.shape.width >= 1, "/synth/shape", "components must be >= 1");
  require(g.min_count >= 0 && g.max_count >= g.min_count, "/synth/count", "expected 0 <= min <= max");
  for (int a = 0; a < 3; ++a) {
    require(g.radius_min[a] > 0.0, "/synth/radius_min/" + std::to_string(a), "must be positive");
    require(g.radius_max[a] >= g.radius_min[a], "/synth/radius_max/" + std::to_string(a), "must be >= radius_min");
  }
  require(g.min_separation > 0.0, "/synth/min_separation", "must be positive");
  require(g.noise_sigma >= 0.0, "/synth/noise_sigma", "must be non-negative");
  require(g.class_count >= 2, "/synth/class_count", "must be >= 2");

  const auto& t = train;
  require(t.batch_size >= 1, "/train/batch_size", "must be >= 1");
  require(t.crop_size >= NetworkConfig::kTotalStride, "/train/crop_size", "must be >= 4");
  require(t.learning_rate > 0.0, "/train/learning_rate", "must be positive");
  require(t.momentum >= 0.0 && t.momentum < 1.0, "/train/momentum", "must lie in [0, 1)");
  require(t.grad_clip >= 0.0, "/train/grad_clip", "must be >= 0");
  require(t.lr_drop_step >= 0, "/train/lr_drop_step", "must be >= 0");
  require(t.lr_drop_factor > 0.0 && t.lr_drop_factor <= 1.0, "/train/lr_drop_factor", "must lie in (0, 1]");
  require(t.steps >= 1, "/train/steps", "must be positive");
  require(t.lambda > 0.0, "/train/lambda", "must be positive");
  require(open_unit(t.pos_thresh), "/train/pos_thresh", "must lie in (0, 1)");
  require(open_unit(t.nms_thresh), "/train/nms_thresh", "must lie in (0, 1)");
  require(open_unit(t.score_thresh), "/train/score_thresh", "must lie in (0, 1)");
  require(open_unit(t.mask_thresh), "/train/mask_thresh", "must lie in (0, 1)");
  require(t.min_visible_fraction >= 0.0 && t.min_visible_fraction <= 1.0, "/train/min_visible_fraction",
          "must lie in [0, 1]");
  for (int i = 0; i < 3; ++i) {
    require(t.network.widths[i] >= 1, "/train/network/widths/" + std::to_string(i), "must be >= 1");
  }
  require(t.network.blocks_per_stage >= 0, "/train/network/blocks_per_stage", "must be >= 0");
  require(t.network.roi_size >= 1, "/train/network/roi_size", "must be >= 1");
  require(t.network.mask_hidden >= 1, "/train/network/mask_hidden", "must be >= 1");
  for (std::size_t i = 0; i < t.network.anchor_templates.size(); ++i) {
    const auto& a = t.network.anchor_templates[i];
    require(a[0] > 0 && a[1] > 0 && a[2] > 0, "/train/network/anchor_templates/" + std::to_string(i),
            "sizes must be positive");
  }

  require(open_unit(eval.detection_iou), "/eval/detection_iou", "must lie in (0, 1)");
  require(eval.segmentation_iou > 0.0 && eval.segmentation_iou <= 1.0, "/eval/segmentation_iou",
          "must lie in (0, 1]");
  require(eval.marker_distance > 0.0, "/eval/marker_distance", "must be positive");

  require(cost.model.box_unit_time > 0.0, "/cost/box_unit_time", "must be positive");
  require(cost.model.mask_to_box_ratio > 0.0, "/cost/mask_to_box_ratio", "must be positive");
  require(cost.n_instances >= 1, "/cost/n_instances", "must be >= 1");
  require(cost.full_annotation_hours >= 0.0, "/cost/full_annotation_hours", "must be non-negative");
  for (std::size_t i = 0; i < cost.mask_fractions.size(); ++i) {
    require(cost.mask_fractions[i] >= 0.0 && cost.mask_fractions[i] <= 1.0,
            "/cost/mask_fractions/" + std::to_string(i), "must lie in [0, 1]");
  }
}

json RunConfig::to_json() const {
  const auto& g = synth.generator;
  const auto& t = train;
  json templates = json::array();
  for (const auto& a : t.network.anchor_templates) templates.push_back({a[0], a[1], a[2]});
  return json{
      {"seed", seed},
      {"synth",
       {{"stacks", synth.stacks},
        {"mask_fraction", synth.mask_fraction},
        {"shape", {g.shape.depth, g.shape.height, g.shape.width}},
        {"count", {g.min_count, g.max_count}},
        {"radius_min", {g.radius_min[0], g.radius_min[1], g.radius_min[2]}},
        {"radius_max", {g.radius_max[0], g.radius_max[1], g.radius_max[2]}},
        {"min_separation", g.min_separation},
        {"foreground_mean", g.foreground_mean},
        {"background_mean", g.background_mean},
        {"noise_sigma", g.noise_sigma},
        {"class_count", g.class_count}}},
      {"train",
       {{"batch_size", t.batch_size},
        {"crop_size", t.crop_size},
        {"learning_rate", t.learning_rate},
        {"momentum", t.momentum},
        {"steps", t.steps},
        {"lambda", t.lambda},
        {"pos_thresh", t.pos_thresh},
        {"nms_thresh", t.nms_thresh},
        {"score_thresh", t.score_thresh},
        {"mask_thresh", t.mask_thresh},
        {"min_visible_fraction", t.min_visible_fraction},
        {"flips", t.flips},
        {"grad_clip", t.grad_clip},
        {"lr_drop_step", t.lr_drop_step},
        {"lr_drop_factor", t.lr_drop_factor},
        {"network",
         {{"widths", {t.network.widths[0], t.network.widths[1], t.network.widths[2]}},
          {"blocks_per_stage", t.network.blocks_per_stage},
          {"roi_size", t.network.roi_size},
          {"mask_hidden", t.network.mask_hidden},
          {"anchor_templates", templates}}}}},
      {"eval",
       {{"detection_iou", eval.detection_iou},
        {"segmentation_iou", eval.segmentation_iou},
        {"marker_distance", eval.marker_distance}}},
      {"baseline",
       {{"connectivity", static_cast<int>(baseline.connectivity)}, {"min_volume", baseline.min_volume}}},
      {"cost",
       {{"box_unit_time", cost.model.box_unit_time},
        {"mask_to_box_ratio", cost.model.mask_to_box_ratio},
        {"n_instances", cost.n_instances},
        {"mask_fractions", cost.mask_fractions},
        {"full_annotation_hours", cost.full_annotation_hours}}},
      {"paths",
       {{"data_dir", paths.data_dir},
        {"checkpoint", paths.checkpoint},
        {"stack", paths.stack},
        {"pred_dir", paths.pred_dir},
        {"gt_dir", paths.gt_dir},
        {"classmap", paths.classmap}}},
  };
}

}  // namespace voxelinst
