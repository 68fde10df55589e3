#include "voxelinst/commands.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "voxelinst/baseline.hpp"
#include "voxelinst/errors.hpp"
#include "voxelinst/eval.hpp"
#include "voxelinst/instance.hpp"
#include "voxelinst/parallel.hpp"
#include "voxelinst/trainer.hpp"

namespace voxelinst {

using nlohmann::json;

namespace {

constexpr const char* kAnnoSuffix = ".annos.json";
constexpr const char* kLabelSuffix = "_labels";

void require_exists(const fs::path& p) {
  if (!fs::exists(p)) throw MissingFileError(p.string());
}

void write_json(const json& j, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out << j.dump(2) << '\n';
}

std::string stack_name(int i) {
  std::ostringstream s;
  s << "stack_" << std::setw(3) << std::setfill('0') << i;
  return s.str();
}

json metrics_json(const MetricReport& m) {
  return json{{"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1},
              {"tp", m.tp},               {"fp", m.fp},         {"fn", m.fn}};
}

std::vector<BBox3D> boxes_of(std::span<const InstanceAnnotation> annos) {
  std::vector<BBox3D> out;
  for (const auto& a : annos) out.push_back(a.box);
  return out;
}

}  // namespace

StackFiles StackFiles::in(const fs::path& dir, const std::string& name) {
  return {dir / name, dir / (name + kLabelSuffix), dir / (name + kAnnoSuffix)};
}

std::vector<std::string> list_stacks(const fs::path& dir) {
  require_exists(dir);
  const std::string suffix = kAnnoSuffix;
  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string f = entry.path().filename().string();
    if (f.size() > suffix.size() && f.ends_with(suffix)) names.push_back(f.substr(0, f.size() - suffix.size()));
  }
  std::sort(names.begin(), names.end());
  return names;
}

Stack load_stack(const fs::path& dir, const std::string& name) {
  const auto files = StackFiles::in(dir, name);
  require_exists(files.annotations);
  Stack st;
  st.name = name;
  st.image = load_volume(files.image);
  if (fs::exists(files.labels.string() + ".json")) st.labels = load_labels(files.labels);
  st.annotations = load_annotations(files.annotations);
  return st;
}

Dataset load_dataset(const fs::path& dir, int class_count) {
  Dataset ds;
  ds.class_count = class_count;
  for (const auto& name : list_stacks(dir)) ds.stacks.push_back(load_stack(dir, name));
  if (ds.stacks.empty()) throw MissingFileError((dir / ("*" + std::string(kAnnoSuffix))).string());
  ds.validate();
  return ds;
}

void save_instances(const InstanceSet& set, const Shape3& shape, const fs::path& dir, const std::string& name) {
  const auto files = StackFiles::in(dir, name);
  save_labels(rasterize_instances(set, shape), files.labels);
  save_annotations(annotations_for(set), files.annotations);
}

void write_resolved_config(const RunConfig& cfg, const fs::path& out_dir) {
  write_json(cfg.to_json(), out_dir / "resolved_config.json");
}

void cmd_synth(const RunConfig& cfg, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  std::vector<SynthSample> samples(static_cast<std::size_t>(cfg.synth.stacks));
  parallel_for(samples.size(), [&](std::size_t i) {
    samples[i] = synth_generate(cfg.synth.generator, cfg.seed + i);
    samples[i].annotations = subsample_masks(std::move(samples[i].annotations), cfg.synth.mask_fraction,
                                             cfg.seed ^ (0x9e3779b97f4a7c15ULL + i));
  });
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto files = StackFiles::in(out_dir, stack_name(static_cast<int>(i)));
    save_volume(samples[i].image, files.image);
    save_labels(samples[i].labels, files.labels);
    save_annotations(samples[i].annotations, files.annotations);
  }
  write_resolved_config(cfg, out_dir);
}

void cmd_train(const RunConfig& cfg, const fs::path& data_dir, const fs::path& out_dir) {
  const Dataset ds = load_dataset(data_dir, cfg.synth.generator.class_count);
  fs::create_directories(out_dir);
  std::ofstream log(out_dir / "train_log.jsonl");
  const auto result = train(ds, cfg.train, [&](std::size_t step, const LossReport& r) {
    log << json{{"step", step}, {"l_cls", r.l_cls}, {"l_reg", r.l_reg}, {"l_mask", r.l_mask}, {"total", r.total}}
               .dump()
        << '\n';
  });
  save_checkpoint(result.model, out_dir / "model");
  write_resolved_config(cfg, out_dir);
}

void cmd_infer(const RunConfig& cfg, const fs::path& checkpoint, const fs::path& stack, const fs::path& out_dir) {
  require_exists(checkpoint.string() + ".json");
  const Model model = load_checkpoint(checkpoint);
  std::vector<std::pair<std::string, Volume3D>> inputs;
  if (fs::is_directory(stack)) {
    for (const auto& name : list_stacks(stack)) inputs.emplace_back(name, load_volume(stack / name));
  } else {
    require_exists(stack.string() + ".json");
    inputs.emplace_back(stack.filename().string(), load_volume(stack));
  }
  fs::create_directories(out_dir);
  std::vector<InstanceSet> results(inputs.size());
  parallel_for(inputs.size(), [&](std::size_t i) { results[i] = infer(inputs[i].second, model, cfg.train); });
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    save_instances(results[i], inputs[i].second.shape, out_dir, inputs[i].first);
  }
  write_resolved_config(cfg, out_dir);
}

json cmd_eval(const RunConfig& cfg, const fs::path& pred_dir, const fs::path& gt_dir, const fs::path& out_dir) {
  const auto names = list_stacks(gt_dir);
  require_exists(pred_dir);
  MetricReport det, seg, marker;
  json per_stack = json::array();
  for (const auto& name : names) {
    const auto gt_files = StackFiles::in(gt_dir, name);
    const auto pred_files = StackFiles::in(pred_dir, name);
    require_exists(gt_files.labels.string() + ".json");
    require_exists(pred_files.annotations);
    require_exists(pred_files.labels.string() + ".json");
    const auto gt_annos = load_annotations(gt_files.annotations);
    const auto gt_labels = load_labels(gt_files.labels);
    const auto pred_annos = load_annotations(pred_files.annotations);
    const auto pred = instances_from_labels(load_labels(pred_files.labels), pred_annos);

    const auto pred_boxes = boxes_of(pred_annos);
    const auto gt_boxes = boxes_of(gt_annos);
    std::vector<Vec3> markers;
    for (const auto& b : gt_boxes) markers.push_back(b.center);
    const auto d = detection_f1(pred_boxes, gt_boxes, cfg.eval.detection_iou);
    const auto s = segmentation_f1(pred, gt_labels, gt_annos, cfg.eval.segmentation_iou);
    const auto m = marker_f1(pred_boxes, markers, cfg.eval.marker_distance);
    det += d;
    seg += s;
    marker += m;
    per_stack.push_back(
        json{{"stack", name}, {"detection", metrics_json(d)}, {"segmentation", metrics_json(s)}, {"marker", metrics_json(m)}});
  }
  json report{{"stacks", per_stack},
              {"aggregate",
               {{"detection", metrics_json(det)}, {"segmentation", metrics_json(seg)}, {"marker", metrics_json(marker)}}}};
  fs::create_directories(out_dir);
  write_json(report, out_dir / "eval_report.json");
  write_resolved_config(cfg, out_dir);
  return report;
}

void cmd_baseline(const RunConfig& cfg, const fs::path& classmap, const fs::path& out_dir) {
  require_exists(classmap.string() + ".json");
  const auto map = VoxelClassMap::from_labels(load_labels(classmap));
  const auto set = voxel_to_instances(map, cfg.baseline);
  fs::create_directories(out_dir);
  save_instances(set, map.shape, out_dir, classmap.filename().string());
  write_resolved_config(cfg, out_dir);
}

json cmd_cost(const RunConfig& cfg, const fs::path& out_dir) {
  CostModel model = cfg.cost.model;
  const std::size_t n = cfg.cost.n_instances;
  if (cfg.cost.full_annotation_hours > 0.0) {
    model.box_unit_time = cfg.cost.full_annotation_hours / (static_cast<double>(n) * model.mask_to_box_ratio);
  }
  const double full = annotation_cost(n, 1.0, false, model);
  json rows = json::array();
  for (double f : cfg.cost.mask_fractions) {
    const double weak = annotation_cost(n, f, true, model);
    rows.push_back(json{{"mask_fraction", f}, {"weak_hours", weak}, {"full_hours", full}, {"ratio", weak / full}});
  }
  json table{{"n_instances", n},
             {"box_unit_time", model.box_unit_time},
             {"mask_to_box_ratio", model.mask_to_box_ratio},
             {"rows", rows}};
  fs::create_directories(out_dir);
  write_json(table, out_dir / "cost_table.json");
  write_resolved_config(cfg, out_dir);
  return table;
}

int run_cli(const CliRequest& req) {
  try {
    RunConfig cfg = RunConfig::load(req.config_path);
    auto pick = [](const std::string& flag, std::string& slot) {
      if (!flag.empty()) slot = flag;
    };
    pick(req.overrides.data_dir, cfg.paths.data_dir);
    pick(req.overrides.checkpoint, cfg.paths.checkpoint);
    pick(req.overrides.stack, cfg.paths.stack);
    pick(req.overrides.pred_dir, cfg.paths.pred_dir);
    pick(req.overrides.gt_dir, cfg.paths.gt_dir);
    pick(req.overrides.classmap, cfg.paths.classmap);
    auto need = [](const std::string& value, const char* key) {
      if (value.empty()) throw ConfigError(std::string("/paths/") + key, "required by this command");
      return fs::path(value);
    };
    const fs::path out = req.out_dir;
    const auto& p = cfg.paths;
    if (req.command == "synth") {
      cmd_synth(cfg, out);
    } else if (req.command == "train") {
      cmd_train(cfg, need(p.data_dir, "data_dir"), out);
    } else if (req.command == "infer") {
      cmd_infer(cfg, need(p.checkpoint, "checkpoint"), need(p.stack, "stack"), out);
    } else if (req.command == "eval") {
      const auto report = cmd_eval(cfg, need(p.pred_dir, "pred_dir"), need(p.gt_dir, "gt_dir"), out);
      const auto& agg = report["aggregate"];
      std::cout << "detection F1 " << agg["detection"]["f1"].get<double>() << ", segmentation F1 "
                << agg["segmentation"]["f1"].get<double>() << ", marker F1 " << agg["marker"]["f1"].get<double>()
                << '\n';
    } else if (req.command == "baseline") {
      cmd_baseline(cfg, need(p.classmap, "classmap"), out);
    } else if (req.command == "cost") {
      const auto table = cmd_cost(cfg, out);
      for (const auto& row : table["rows"]) {
        std::cout << "mask fraction " << row["mask_fraction"].get<double>() << ": weak "
                  << row["weak_hours"].get<double>() << " h, full " << row["full_hours"].get<double>() << " h\n";
      }
    } else {
      std::cerr << "error: unknown command '" << req.command << "'\n";
      return 1;
    }
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error at " << e.what() << '\n';
    return 1;
  } catch (const MissingFileError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const MissingSidecarError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << '\n';
    return 1;
  } catch (const ContractError& e) {
    std::cerr << "invalid input: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << '\n';
    return 2;
  }
}

}  // namespace voxelinst
