#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sam/continual.hpp"
#include "sam/meta.hpp"
#include "sam/nn.hpp"
#include "sam/strategies.hpp"

namespace sam::cfg {

// One experiment, fully determined together with the dataset manifests.
// Parsed from a JSON file; unknown keys anywhere are fatal.
struct MetaSection {
  std::string arch = "mlp";  // mlp | conv
  int iterations = 1000;
  int meta_batch = 32;
  int n_way = 5;
  int k_shot = 1;
  int query_per_class = 15;
  int inner_steps = 5;
  float alpha = 0.4f;
  float beta = 0.001f;
  bool second_order = true;
  int train_classes = 1200;  // seeded meta-train/meta-test class split
};

struct StrategySection {
  std::string name = "frozen";  // frozen | fine_tune | si | scratch_ta
  std::string trunk = "meta";   // meta | random | task1
  float si_c = 0.1f;
  float si_xi = 0.1f;
};

struct TrainSection {
  int epochs = 5;
  int batch = 64;
  std::string optimizer = "sgd";  // sgd | adam
  float lr = 0.01f;
  float momentum = 0.9f;
};

struct ReducedSection {
  bool enabled = false;
  int train_per_class = 0;
  int test_per_class = 0;
};

struct VisualizeSection {
  std::string checkpoint;
  std::string compare_checkpoint;  // optional second model for the contrast
  int samples = 3;
};

struct ExperimentConfig {
  std::string benchmark = "split_mnist";  // split_mnist | split_cifar
  std::string data_root;                  // empty -> SAM_DATA_ROOT -> "data"
  std::string output_dir = "out";
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::string attention = "all";  // all | last | none
  int shared_blocks = 2;          // split_cifar trunk split
  std::string checkpoint;         // trunk source for meta init
  MetaSection meta;
  StrategySection strategy;
  TrainSection train;
  ReducedSection reduced;
  VisualizeSection visualize;
};

ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::string& path);

nn::AttentionPlacement placement_of(const std::string& name);
strat::Strategy strategy_of(const std::string& name);
strat::TrunkInit trunk_init_of(const std::string& name);
cl::TrainConfig train_config_of(const TrainSection& t);
meta::MetaConfig meta_config_of(const MetaSection& m, std::uint64_t seed);

}  // namespace sam::cfg
