// Command-line front end. Talks to the core exclusively through the C API in
// sam_c.h; configuration edits happen here as plain JSON before handing the
// text to sam_config_parse.
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "nlohmann/json.hpp"
#include "sam_c.h"

namespace {

using nlohmann::json;

struct CommonOpts {
  std::string config_path;
  std::string data_root;
  std::string output_dir;
  std::string checkpoint;
  std::vector<std::uint64_t> seeds;
};

void add_common(CLI::App* sub, CommonOpts& o, bool config_required = true) {
  auto* c = sub->add_option("-c,--config", o.config_path, "JSON configuration file");
  if (config_required) c->required()->check(CLI::ExistingFile);
  sub->add_option("--data-root", o.data_root, "dataset root (overrides config and SAM_DATA_ROOT)");
  sub->add_option("--output", o.output_dir, "output directory (overrides config)");
  sub->add_option("--checkpoint", o.checkpoint, "meta-trained checkpoint path (overrides config)");
  sub->add_option("--seeds", o.seeds, "seed list (overrides config)");
}

// Loads the config file (or "{}" when absent), applies command-line overrides,
// and returns the merged JSON text.
std::string merged_config(const CommonOpts& o) {
  json j = json::object();
  if (!o.config_path.empty()) {
    std::ifstream f(o.config_path);
    if (!f) throw CLI::RuntimeError("cannot read " + o.config_path, 1);
    std::ostringstream ss;
    ss << f.rdbuf();
    j = json::parse(ss.str());
  }
  if (!o.data_root.empty()) j["data_root"] = o.data_root;
  if (!o.output_dir.empty()) j["output_dir"] = o.output_dir;
  if (!o.checkpoint.empty()) j["checkpoint"] = o.checkpoint;
  if (!o.seeds.empty()) j["seeds"] = o.seeds;
  return j.dump();
}

int run(const CommonOpts& o, sam_status (*cmd)(const sam_config*)) {
  sam_config* cfg = nullptr;
  std::string text = merged_config(o);
  sam_status st = sam_config_parse(text.c_str(), &cfg);
  if (st == SAM_OK) st = cmd(cfg);
  sam_config_free(cfg);
  if (st != SAM_OK) {
    std::fprintf(stderr, "error: %s\n", sam_last_error());
    return static_cast<int>(st);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continual-learning toolkit: meta-attention trunks with per-task heads"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(sam_version()));

  CommonOpts meta_o, cl_o, ab_o, fwt_o, viz_o, rep_o;
  auto* meta = app.add_subcommand("meta-train", "meta-train an attention trunk on the episodic corpus");
  add_common(meta, meta_o);
  auto* cl = app.add_subcommand("cl-run", "run a continual-learning strategy over the task sequence");
  add_common(cl, cl_o);
  auto* ab = app.add_subcommand("ablate", "compare attention placements none/last/all");
  add_common(ab, ab_o);
  auto* fw = app.add_subcommand("fwt", "forward-transfer evaluation across trunk depths");
  add_common(fw, fwt_o);
  auto* vz = app.add_subcommand("visualize", "dump attention pre/gate/post panels for test samples");
  add_common(vz, viz_o);
  auto* rp = app.add_subcommand("report", "validate produced CSVs and write a plain-text summary");
  add_common(rp, rep_o);

  std::string gen_root = "data";
  std::uint64_t gen_seed = 7;
  bool gen_reduced = false;
  auto* gen = app.add_subcommand("generate-data", "write the procedural stand-in corpora");
  gen->add_option("--root", gen_root, "destination directory");
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_flag("--reduced", gen_reduced, "small smoke-scale variant");

  CLI11_PARSE(app, argc, argv);

  if (gen->parsed()) {
    sam_status st = sam_generate_data(gen_root.c_str(), gen_seed, gen_reduced ? 1 : 0);
    if (st != SAM_OK) {
      std::fprintf(stderr, "error: %s\n", sam_last_error());
      return static_cast<int>(st);
    }
    return 0;
  }
  if (meta->parsed()) return run(meta_o, sam_meta_train);
  if (cl->parsed()) return run(cl_o, sam_cl_run);
  if (ab->parsed()) return run(ab_o, sam_ablate);
  if (fw->parsed()) return run(fwt_o, sam_fwt);
  if (vz->parsed()) return run(viz_o, sam_visualize);
  if (rp->parsed()) return run(rep_o, sam_report);
  return 0;
}
