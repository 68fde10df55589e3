#include <string>

#include "CLI11.hpp"
#include "voxelinst/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Weakly annotated 3D instance segmentation"};
  app.require_subcommand(1);
  voxelinst::CliRequest req;
  for (const char* name : {"synth", "train", "infer", "eval", "baseline", "cost"}) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", req.config_path, "JSON run configuration")->required();
    sub->add_option("--out", req.out_dir, "output directory");
    sub->add_option("--data", req.overrides.data_dir, "training data directory");
    sub->add_option("--checkpoint", req.overrides.checkpoint, "checkpoint stem");
    sub->add_option("--stack", req.overrides.stack, "volume stem or data directory");
    sub->add_option("--pred", req.overrides.pred_dir, "prediction directory");
    sub->add_option("--gt", req.overrides.gt_dir, "ground-truth directory");
    sub->add_option("--classmap", req.overrides.classmap, "voxel class map stem");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  req.command = app.get_subcommands().front()->get_name();
  return voxelinst::run_cli(req);
}
