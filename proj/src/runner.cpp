#include "sam/runner.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "sam/checkpoint.hpp"
#include "sam/report.hpp"
#include "sam/synth.hpp"
#include "sam/viz.hpp"

namespace fs = std::filesystem;

namespace sam::run {

namespace {

std::string data_root(const cfg::ExperimentConfig& c) {
  std::string root = data::resolve_data_root(c.data_root);
  if (!fs::exists(root))
    throw IoError("dataset root not found: " + root +
                  " (set data_root in the config or SAM_DATA_ROOT)");
  // Integrity gate before any compute, when a manifest is present.
  if (fs::exists(fs::path(root) / "manifest.json"))
    data::verify_manifest(root, data::load_manifest(root));
  return root;
}

void ensure_dir(const std::string& dir) { fs::create_directories(dir); }

// Omniglot pool reshaped for the conv meta model: grayscale replicated to
// three channels and zero-padded from 28x28 to 32x32.
data::ClassImages pool_to_rgb32(const data::ClassImages& pool) {
  data::ClassImages out;
  out.rows = 32;
  out.cols = 32;
  out.class_names = pool.class_names;
  for (const auto& cls : pool.images) {
    std::vector<std::vector<float>> inst;
    for (const auto& im : cls) {
      std::vector<float> big(3 * 32 * 32, 0.0f);
      for (int r = 0; r < 28; ++r)
        for (int col = 0; col < 28; ++col) {
          float v = im[static_cast<std::size_t>(r) * 28 + col];
          for (int ch = 0; ch < 3; ++ch)
            big[(static_cast<std::size_t>(ch) * 32 + r + 2) * 32 + col + 2] = v;
        }
      inst.push_back(std::move(big));
    }
    out.images.push_back(std::move(inst));
  }
  return out;
}

nn::NetworkSpec meta_spec_of(const std::string& arch, nn::AttentionPlacement p) {
  if (arch == "mlp") return nn::mlp_trunk(p, /*with_bn=*/true);
  if (arch == "conv") return nn::conv_meta(p, 8, 3, 32);
  throw ConfigError("unknown meta architecture: " + arch);
}

struct LoadedTrunk {
  nn::NetworkSpec spec;  // continual-phase spec
  ParamStore shared;
};

ckpt::Checkpoint load_checkpoint_for(const std::string& path, const std::string& want_arch,
                                     const std::string& want_attention) {
  if (path.empty()) throw ConfigError("this run needs a checkpoint path");
  auto ck = ckpt::load(path);
  auto need = [&](const char* key) {
    auto it = ck.meta.find(key);
    if (it == ck.meta.end())
      throw IoError("checkpoint " + path + " lacks manifest key \"" + key + "\"");
    return it->second;
  };
  if (need("arch") != want_arch)
    throw ConfigError("checkpoint/architecture mismatch: " + path + " holds a " +
                      ck.meta["arch"] + " trunk, run needs " + want_arch);
  if (need("attention") != want_attention)
    throw ConfigError("checkpoint/attention mismatch: " + path + " was trained with \"" +
                      ck.meta["attention"] + "\", config says \"" + want_attention + "\"");
  return ck;
}

// Continual trunk for Split MNIST from an mlp meta checkpoint: batch-norm
// statistics folded into the dense layers, meta head dropped.
LoadedTrunk mnist_trunk_from_checkpoint(const cfg::ExperimentConfig& c) {
  auto ck = load_checkpoint_for(c.checkpoint, "mlp", c.attention);
  auto meta_spec = meta_spec_of("mlp", cfg::placement_of(c.attention));
  auto [folded_spec, folded] = nn::fold_batchnorm(meta_spec, ck.params, "t");
  return {folded_spec, folded};
}

// Continual trunk for Split CIFAR from a conv meta checkpoint: the first
// shared_blocks parameter-bearing blocks are copied across.
LoadedTrunk cifar_trunk_from_checkpoint(const cfg::ExperimentConfig& c) {
  auto ck = load_checkpoint_for(c.checkpoint, "conv", c.attention);
  auto meta_spec = meta_spec_of("conv", cfg::placement_of(c.attention));
  nn::NetworkSpec spec = nn::cifar_net(c.shared_blocks, cfg::placement_of(c.attention));
  Rng rng(0);
  ParamStore shared = cl::init_shared(spec, rng);
  nn::copy_shared(meta_spec, ck.params, "t", spec, shared, "t");
  return {spec, shared};
}

data::CLSequence load_sequence(const cfg::ExperimentConfig& c, const std::string& root) {
  data::CLSequence seq;
  if (c.benchmark == "split_mnist") {
    auto train = data::load_mnist_split(root, true);
    auto test = data::load_mnist_split(root, false);
    seq = data::make_split_mnist(train, test);
  } else {
    auto c10tr = data::load_cifar_split(root, 10, true);
    auto c10te = data::load_cifar_split(root, 10, false);
    auto c100tr = data::load_cifar_split(root, 100, true);
    auto c100te = data::load_cifar_split(root, 100, false);
    seq = data::make_split_cifar(c10tr, c10te, c100tr, c100te);
  }
  if (c.reduced.enabled) {
    Rng rng(c.seeds.front());
    Rng sub = rng.substream("subsample");
    for (auto& t : seq.tasks)
      t = data::subsample_task(t, c.reduced.train_per_class, c.reduced.test_per_class, sub);
  }
  return seq;
}

struct SeedRun {
  std::uint64_t seed;
  cl::RunReport report;
};

std::vector<SeedRun> run_all_seeds(const cfg::ExperimentConfig& c,
                                   const data::CLSequence& seq, const LoadedTrunk* trunk,
                                   const nn::NetworkSpec& spec) {
  std::vector<SeedRun> runs;
  cl::TrainConfig train = cfg::train_config_of(c.train);
  for (std::uint64_t seed : c.seeds) {
    cl::RunReport r;
    if (c.strategy.name == "scratch_ta") {
      r = strat::run_scratch_ta(spec, seq, train, seed);
    } else {
      strat::StrategyConfig sc;
      sc.strategy = cfg::strategy_of(c.strategy.name);
      sc.init = cfg::trunk_init_of(c.strategy.trunk);
      sc.train = train;
      sc.si_c = c.strategy.si_c;
      sc.si_xi = c.strategy.si_xi;
      sc.seed = seed;
      r = strat::run_strategy(spec, trunk ? &trunk->shared : nullptr, seq, sc);
    }
    std::cout << "seed " << seed << ": agnostic avg "
              << r.average(cl::Protocol::Agnostic) << ", conditioned avg "
              << r.average(cl::Protocol::Conditioned) << "\n";
    runs.push_back({seed, std::move(r)});
  }
  return runs;
}

std::string attention_checkpoint_path(const std::string& pattern,
                                      const std::string& attention) {
  std::string out = pattern;
  const std::string key = "{attention}";
  auto pos = out.find(key);
  if (pos != std::string::npos) out.replace(pos, key.size(), attention);
  return out;
}

int benchmark_tasks(const cfg::ExperimentConfig& c) {
  return c.benchmark == "split_mnist" ? 5 : 6;
}

}  // namespace

void cmd_meta_train(const cfg::ExperimentConfig& c) {
  std::string root = data_root(c);
  ensure_dir(c.output_dir);
  auto pool = data::load_omniglot(root + "/omniglot");
  for (const auto& w : pool.warnings) std::cout << "warning: " << w << "\n";
  if (c.meta.arch == "conv") pool = pool_to_rgb32(pool);

  std::uint64_t seed = c.seeds.front();
  int n_train = std::min(c.meta.train_classes, pool.num_classes() - 1);
  auto split = data::split_classes(pool.num_classes(), n_train, seed);

  auto spec = meta_spec_of(c.meta.arch, cfg::placement_of(c.attention));
  Rng rng(seed);
  ParamStore params = meta::init_meta_params(spec, c.meta.n_way, rng);
  meta::MetaConfig mc = cfg::meta_config_of(c.meta, seed);

  double before = meta::evaluate_episodes(spec, params, pool, split.test_classes,
                                          mc.episode, mc.inner_steps, mc.alpha, 20, seed + 1);

  std::ofstream log(fs::path(c.output_dir) / "meta_log.csv");
  if (!log) throw IoError("cannot write meta log under " + c.output_dir);
  log << "iteration,meta_loss,query_accuracy\n";
  meta::meta_train(spec, params, pool, split.train_classes, mc,
                   [&](const meta::MetaLogRow& row) {
                     char buf[96];
                     std::snprintf(buf, sizeof buf, "%d,%.6f,%.6f", row.iteration,
                                   row.meta_loss, row.query_accuracy);
                     log << buf << "\n";
                     if (row.iteration % 50 == 0)
                       std::cout << "iter " << row.iteration << " loss " << row.meta_loss
                                 << " qacc " << row.query_accuracy << "\n";
                   });

  double after = meta::evaluate_episodes(spec, params, pool, split.test_classes, mc.episode,
                                         mc.inner_steps, mc.alpha, 20, seed + 1);
  {
    std::ofstream ev(fs::path(c.output_dir) / "meta_eval.csv");
    ev << "phase,query_accuracy\n";
    char buf[64];
    std::snprintf(buf, sizeof buf, "before,%.6f\nafter,%.6f\n", before, after);
    ev << buf;
  }
  std::cout << "held-out query accuracy: before " << before << ", after " << after << "\n";

  ckpt::save((fs::path(c.output_dir) / "checkpoint.bin").string(), params,
             {{"network", spec.name},
              {"arch", c.meta.arch},
              {"attention", c.attention},
              {"seed", std::to_string(seed)},
              {"n_way", std::to_string(c.meta.n_way)}});
}

void cmd_cl_run(const cfg::ExperimentConfig& c) {
  std::string root = data_root(c);
  ensure_dir(c.output_dir);
  auto seq = load_sequence(c, root);

  LoadedTrunk trunk;
  bool have_trunk = false;
  nn::AttentionPlacement p = cfg::placement_of(c.attention);
  nn::NetworkSpec spec;
  if (c.strategy.trunk == "meta" && c.strategy.name != "scratch_ta") {
    trunk = c.benchmark == "split_mnist" ? mnist_trunk_from_checkpoint(c)
                                         : cifar_trunk_from_checkpoint(c);
    spec = trunk.spec;
    have_trunk = true;
  } else {
    spec = c.benchmark == "split_mnist" ? nn::mlp_trunk(p, false)
                                        : nn::cifar_net(c.shared_blocks, p);
  }

  auto runs = run_all_seeds(c, seq, have_trunk ? &trunk : nullptr, spec);

  std::vector<std::pair<std::uint64_t, cl::RunReport>> curves;
  report::SummaryRow ag{c.strategy.name + "+" + c.strategy.trunk, "agnostic", {}};
  report::SummaryRow cond{ag.label, "conditioned", {}};
  for (const auto& r : runs) {
    report::write_matrix_csv(
        (fs::path(c.output_dir) / ("seed" + std::to_string(r.seed) + "_matrix.csv")).string(),
        r.report);
    ag.per_seed.push_back(r.report.average(cl::Protocol::Agnostic));
    cond.per_seed.push_back(r.report.average(cl::Protocol::Conditioned));
    curves.emplace_back(r.seed, r.report);
  }
  report::write_summary_csv((fs::path(c.output_dir) / "summary.csv").string(), {ag, cond});
  report::write_curves_csv((fs::path(c.output_dir) / "curves.csv").string(), curves);
}

void cmd_ablate(const cfg::ExperimentConfig& c) {
  std::string root = data_root(c);
  ensure_dir(c.output_dir);
  auto seq = load_sequence(c, root);

  std::vector<report::AblationRow> rows;
  for (const std::string attention : {"none", "last", "all"}) {
    cfg::ExperimentConfig cc = c;
    cc.attention = attention;
    cc.checkpoint = attention_checkpoint_path(c.checkpoint, attention);
    LoadedTrunk trunk;
    bool have_trunk = false;
    nn::NetworkSpec spec;
    nn::AttentionPlacement p = cfg::placement_of(attention);
    if (c.strategy.trunk == "meta") {
      trunk = c.benchmark == "split_mnist" ? mnist_trunk_from_checkpoint(cc)
                                           : cifar_trunk_from_checkpoint(cc);
      spec = trunk.spec;
      have_trunk = true;
    } else {
      spec = c.benchmark == "split_mnist" ? nn::mlp_trunk(p, false)
                                          : nn::cifar_net(c.shared_blocks, p);
    }
    auto runs = run_all_seeds(cc, seq, have_trunk ? &trunk : nullptr, spec);
    std::vector<double> ag, cond;
    for (const auto& r : runs) {
      ag.push_back(r.report.average(cl::Protocol::Agnostic));
      cond.push_back(r.report.average(cl::Protocol::Conditioned));
    }
    rows.push_back({c.benchmark, attention, report::mean(ag), report::mean(cond)});
    std::cout << "ablation " << attention << ": agnostic " << report::mean(ag) << "\n";
  }
  report::write_ablation_csv((fs::path(c.output_dir) / "ablation.csv").string(), rows);
}

void cmd_fwt(const cfg::ExperimentConfig& c) {
  std::string root = data_root(c);
  ensure_dir(c.output_dir);
  auto c10tr = data::load_cifar_split(root, 10, true);
  auto c10te = data::load_cifar_split(root, 10, false);
  auto probes = data::make_fwt_probes(c10tr, c10te);
  if (c.reduced.enabled) {
    Rng rng(c.seeds.front());
    Rng sub = rng.substream("subsample");
    for (auto& t : probes)
      t = data::subsample_task(t, c.reduced.train_per_class, c.reduced.test_per_class, sub);
  }

  cl::TrainConfig train = cfg::train_config_of(c.train);
  std::uint64_t seed = c.seeds.front();
  std::vector<report::FwtRow> rows;
  for (int split : {2, 4}) {
    cfg::ExperimentConfig cc = c;
    cc.shared_blocks = split;
    auto sam_trunk = cifar_trunk_from_checkpoint(cc);
    ParamStore std_trunk =
        strat::task1_trunk(sam_trunk.spec, probes[0], train, seed);
    std::vector<data::TaskDataset> targets{probes[1], probes[2]};
    auto sam_acc = cl::fwt_eval(sam_trunk.spec, sam_trunk.shared, targets, train, seed);
    auto std_acc = cl::fwt_eval(sam_trunk.spec, std_trunk, targets, train, seed);
    for (int k = 0; k < 2; ++k) {
      rows.push_back({"sam", split, targets[k].id, sam_acc[k]});
      rows.push_back({"standard", split, targets[k].id, std_acc[k]});
      std::cout << "fwt split " << split << " task " << targets[k].id << ": sam "
                << sam_acc[k] << " standard " << std_acc[k] << "\n";
    }
  }
  report::write_fwt_csv((fs::path(c.output_dir) / "fwt.csv").string(), rows);
}

void cmd_visualize(const cfg::ExperimentConfig& c) {
  std::string root = data_root(c);
  ensure_dir(c.output_dir);
  auto test = data::load_mnist_split(root, false);
  int n = std::min(c.visualize.samples, test.count);
  if (n < 1) throw ConfigError("no samples to visualize");

  auto probe_model = [&](const std::string& path, const std::string& tag) {
    cfg::ExperimentConfig cc = c;
    cc.checkpoint = path;
    auto trunk = mnist_trunk_from_checkpoint(cc);
    std::vector<double> sp;
    for (int k = 0; k < n; ++k) {
      ad::Tape<float> t;
      auto sh = lift(t, trunk.shared, false);
      std::vector<float> img(test.image(k), test.image(k) + test.image_size());
      auto x = t.constant({1, test.image_size()}, std::move(img));
      nn::Probe<float> probe;
      nn::ForwardOpts<float> opts;
      opts.probe = &probe;
      std::size_t cursor = 0;
      nn::forward_layers(t, trunk.spec, 0, static_cast<int>(trunk.spec.layers.size()),
                         sh.vars, cursor, x, opts);
      viz::write_probe(c.output_dir, tag, k, probe);
      for (const auto& blk : probe.blocks) sp.push_back(viz::sparsity(blk.post));
    }
    return report::mean(sp);
  };

  double main_sparsity = probe_model(c.visualize.checkpoint, "main");
  std::ofstream f(fs::path(c.output_dir) / "sparsity.csv");
  f << "model,post_sparsity\n";
  char buf[64];
  std::snprintf(buf, sizeof buf, "main,%.6f\n", main_sparsity);
  f << buf;
  if (!c.visualize.compare_checkpoint.empty()) {
    double cmp = probe_model(c.visualize.compare_checkpoint, "compare");
    std::snprintf(buf, sizeof buf, "compare,%.6f\n", cmp);
    f << buf;
  }
}

void cmd_report(const cfg::ExperimentConfig& c) {
  int tasks = benchmark_tasks(c);
  int matrix_rows = tasks * (tasks + 1);  // 2 protocols * T(T+1)/2
  std::ofstream out(fs::path(c.output_dir) / "report.txt");
  if (!out) throw IoError("cannot write report under " + c.output_dir);
  int checked = 0;
  for (std::uint64_t seed : c.seeds) {
    std::string path =
        (fs::path(c.output_dir) / ("seed" + std::to_string(seed) + "_matrix.csv")).string();
    int n = report::csv_rows(path, "stage,task,protocol,accuracy");
    if (n != matrix_rows)
      throw IoError(path + " has " + std::to_string(n) + " rows, expected " +
                    std::to_string(matrix_rows));
    out << "ok " << path << " rows=" << n << "\n";
    ++checked;
  }
  {
    std::string path = (fs::path(c.output_dir) / "summary.csv").string();
    int n = report::csv_rows(path, "label,protocol,mean,std,n_seeds");
    if (n < 2) throw IoError(path + " lacks the two protocol rows");
    out << "ok " << path << " rows=" << n << "\n";
  }
  {
    std::string path = (fs::path(c.output_dir) / "curves.csv").string();
    int n = report::csv_rows(path, "seed,stage,protocol,average");
    int want = static_cast<int>(c.seeds.size()) * tasks * 2;
    if (n != want)
      throw IoError(path + " has " + std::to_string(n) + " rows, expected " +
                    std::to_string(want));
    out << "ok " << path << " rows=" << n << "\n";
  }
  if (fs::exists(fs::path(c.output_dir) / "ablation.csv")) {
    int n = report::csv_rows((fs::path(c.output_dir) / "ablation.csv").string(),
                             "benchmark,attention,agnostic_mean,conditioned_mean");
    if (n != 3) throw IoError("ablation.csv should hold 3 rows, has " + std::to_string(n));
    out << "ok ablation.csv rows=" << n << "\n";
  }
  if (fs::exists(fs::path(c.output_dir) / "fwt.csv")) {
    int n = report::csv_rows((fs::path(c.output_dir) / "fwt.csv").string(),
                             "source,shared_blocks,task,accuracy");
    if (n != 8) throw IoError("fwt.csv should hold 8 rows, has " + std::to_string(n));
    out << "ok fwt.csv rows=" << n << "\n";
  }
  out << "checked seeds: " << checked << "\n";
  std::cout << "report checks passed for " << checked << " seeds\n";
}

void cmd_generate_data(const std::string& root, std::uint64_t seed, bool reduced) {
  synth::write_all(root, seed, reduced);
  std::cout << "wrote stand-in corpora under " << root << "\n";
}

}  // namespace sam::run
