#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "voxelinst/config.hpp"
#include "voxelinst/network.hpp"
#include "voxelinst/volume.hpp"

namespace voxelinst {

namespace fs = std::filesystem;

// On-disk layout of one stack inside a data directory:
//   <name>.f32/.json           image
//   <name>_labels.u16/.json    instance ids (optional)
//   <name>.annos.json          annotation list
struct StackFiles {
  fs::path image;
  fs::path labels;
  fs::path annotations;
  static StackFiles in(const fs::path& dir, const std::string& name);
};

// Stack names in a directory, from its *.annos.json files, sorted.
std::vector<std::string> list_stacks(const fs::path& dir);
Stack load_stack(const fs::path& dir, const std::string& name);
Dataset load_dataset(const fs::path& dir, int class_count);
void save_instances(const InstanceSet& set, const Shape3& shape, const fs::path& dir, const std::string& name);

void write_resolved_config(const RunConfig& cfg, const fs::path& out_dir);

void cmd_synth(const RunConfig& cfg, const fs::path& out_dir);
void cmd_train(const RunConfig& cfg, const fs::path& data_dir, const fs::path& out_dir);
// stack is either a volume stem or a data directory (every listed stack is segmented).
void cmd_infer(const RunConfig& cfg, const fs::path& checkpoint, const fs::path& stack, const fs::path& out_dir);
nlohmann::json cmd_eval(const RunConfig& cfg, const fs::path& pred_dir, const fs::path& gt_dir,
                        const fs::path& out_dir);
void cmd_baseline(const RunConfig& cfg, const fs::path& classmap, const fs::path& out_dir);
nlohmann::json cmd_cost(const RunConfig& cfg, const fs::path& out_dir);

// Loads the config, applies path overrides, dispatches, and maps failures to
// exit codes: 0 success, 1 invalid input, 2 runtime failure.
struct CliRequest {
  std::string command;
  std::string config_path;
  std::string out_dir = ".";
  PathSection overrides;
};
int run_cli(const CliRequest& req);

}  // namespace voxelinst
