#include "sam/config.hpp"

#include <fstream>

#include "nlohmann/json.hpp"
#include "sam/error.hpp"

using nlohmann::json;

namespace sam::cfg {

namespace {

void check_keys(const json& j, const std::string& where,
                std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed) ok = ok || it.key() == k;
    if (!ok) throw ConfigError("unknown key \"" + it.key() + "\" in " + where);
  }
}

template <class T>
void get(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void one_of(const std::string& v, const std::string& what,
            std::initializer_list<const char*> allowed) {
  for (const char* a : allowed)
    if (v == a) return;
  std::string opts;
  for (const char* a : allowed) opts += std::string(opts.empty() ? "" : ", ") + a;
  throw ConfigError(what + " must be one of {" + opts + "}, got \"" + v + "\"");
}

}  // namespace

ExperimentConfig parse_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(j, "config",
             {"benchmark", "data_root", "output_dir", "seeds", "attention", "shared_blocks",
              "checkpoint", "meta", "strategy", "train", "reduced", "visualize"});
  ExperimentConfig c;
  get(j, "benchmark", c.benchmark);
  get(j, "data_root", c.data_root);
  get(j, "output_dir", c.output_dir);
  get(j, "seeds", c.seeds);
  get(j, "attention", c.attention);
  get(j, "shared_blocks", c.shared_blocks);
  get(j, "checkpoint", c.checkpoint);
  one_of(c.benchmark, "benchmark", {"split_mnist", "split_cifar"});
  one_of(c.attention, "attention", {"all", "last", "none"});
  if (c.shared_blocks != 2 && c.shared_blocks != 4)
    throw ConfigError("shared_blocks must be 2 or 4");
  if (c.seeds.empty()) throw ConfigError("seeds must not be empty");

  if (j.contains("meta")) {
    const json& m = j.at("meta");
    check_keys(m, "meta",
               {"arch", "iterations", "meta_batch", "n_way", "k_shot", "query_per_class",
                "inner_steps", "alpha", "beta", "second_order", "train_classes"});
    get(m, "arch", c.meta.arch);
    get(m, "iterations", c.meta.iterations);
    get(m, "meta_batch", c.meta.meta_batch);
    get(m, "n_way", c.meta.n_way);
    get(m, "k_shot", c.meta.k_shot);
    get(m, "query_per_class", c.meta.query_per_class);
    get(m, "inner_steps", c.meta.inner_steps);
    get(m, "alpha", c.meta.alpha);
    get(m, "beta", c.meta.beta);
    get(m, "second_order", c.meta.second_order);
    get(m, "train_classes", c.meta.train_classes);
    one_of(c.meta.arch, "meta.arch", {"mlp", "conv"});
    if (c.meta.iterations < 0) throw ConfigError("meta.iterations must be >= 0");
  }
  if (j.contains("strategy")) {
    const json& s = j.at("strategy");
    check_keys(s, "strategy", {"name", "trunk", "si_c", "si_xi"});
    get(s, "name", c.strategy.name);
    get(s, "trunk", c.strategy.trunk);
    get(s, "si_c", c.strategy.si_c);
    get(s, "si_xi", c.strategy.si_xi);
    one_of(c.strategy.name, "strategy.name", {"frozen", "fine_tune", "si", "scratch_ta"});
    one_of(c.strategy.trunk, "strategy.trunk", {"meta", "random", "task1"});
  }
  if (j.contains("train")) {
    const json& t = j.at("train");
    check_keys(t, "train", {"epochs", "batch", "optimizer", "lr", "momentum"});
    get(t, "epochs", c.train.epochs);
    get(t, "batch", c.train.batch);
    get(t, "optimizer", c.train.optimizer);
    get(t, "lr", c.train.lr);
    get(t, "momentum", c.train.momentum);
    one_of(c.train.optimizer, "train.optimizer", {"sgd", "adam"});
    if (c.train.epochs < 0) throw ConfigError("train.epochs must be >= 0");
    if (c.train.batch < 1) throw ConfigError("train.batch must be >= 1");
  }
  if (j.contains("reduced")) {
    const json& r = j.at("reduced");
    check_keys(r, "reduced", {"enabled", "train_per_class", "test_per_class"});
    get(r, "enabled", c.reduced.enabled);
    get(r, "train_per_class", c.reduced.train_per_class);
    get(r, "test_per_class", c.reduced.test_per_class);
    if (c.reduced.enabled && (c.reduced.train_per_class < 1 || c.reduced.test_per_class < 1))
      throw ConfigError("reduced mode needs positive per-class counts");
  }
  if (j.contains("visualize")) {
    const json& v = j.at("visualize");
    check_keys(v, "visualize", {"checkpoint", "compare_checkpoint", "samples"});
    get(v, "checkpoint", c.visualize.checkpoint);
    get(v, "compare_checkpoint", c.visualize.compare_checkpoint);
    get(v, "samples", c.visualize.samples);
    if (c.visualize.samples < 1) throw ConfigError("visualize.samples must be >= 1");
  }
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_config(text);
}

nn::AttentionPlacement placement_of(const std::string& name) {
  if (name == "all") return nn::AttentionPlacement::AllBlocks;
  if (name == "last") return nn::AttentionPlacement::LastBlockOnly;
  if (name == "none") return nn::AttentionPlacement::None;
  throw ConfigError("unknown attention placement: " + name);
}

strat::Strategy strategy_of(const std::string& name) {
  if (name == "frozen") return strat::Strategy::Frozen;
  if (name == "fine_tune") return strat::Strategy::FineTune;
  if (name == "si") return strat::Strategy::SI;
  throw ConfigError("unknown strategy: " + name);
}

strat::TrunkInit trunk_init_of(const std::string& name) {
  if (name == "meta") return strat::TrunkInit::Meta;
  if (name == "random") return strat::TrunkInit::Random;
  if (name == "task1") return strat::TrunkInit::Task1;
  throw ConfigError("unknown trunk init: " + name);
}

cl::TrainConfig train_config_of(const TrainSection& t) {
  cl::TrainConfig out;
  out.epochs = t.epochs;
  out.batch_size = t.batch;
  out.adam = t.optimizer == "adam";
  out.lr = t.lr;
  out.momentum = t.momentum;
  return out;
}

meta::MetaConfig meta_config_of(const MetaSection& m, std::uint64_t seed) {
  meta::MetaConfig out;
  out.episode = {m.n_way, m.k_shot, m.query_per_class};
  out.meta_batch = m.meta_batch;
  out.inner_steps = m.inner_steps;
  out.alpha = m.alpha;
  out.beta = m.beta;
  out.iterations = m.iterations;
  out.second_order = m.second_order;
  out.seed = seed;
  return out;
}

}  // namespace sam::cfg
