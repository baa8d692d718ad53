#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "doctest.h"
#include "sam/checkpoint.hpp"
#include "sam/meta.hpp"

using namespace sam;
namespace fs = std::filesystem;

namespace {

// Pool of `classes` synthetic classes whose instances are constant images
// tagged with (class, instance), so episode membership is observable.
data::ClassImages tagged_pool(int classes, int instances, int pixels) {
  data::ClassImages pool;
  pool.rows = 1;
  pool.cols = pixels;
  for (int c = 0; c < classes; ++c) {
    pool.class_names.push_back("c" + std::to_string(c));
    std::vector<std::vector<float>> inst;
    for (int i = 0; i < instances; ++i) {
      std::vector<float> im(pixels, 0.0f);
      im[0] = static_cast<float>(c);
      im[1] = static_cast<float>(i);
      inst.push_back(std::move(im));
    }
    pool.images.push_back(std::move(inst));
  }
  return pool;
}

std::vector<int> all_classes(const data::ClassImages& pool) {
  std::vector<int> v(pool.num_classes());
  for (int i = 0; i < pool.num_classes(); ++i) v[i] = i;
  return v;
}

}  // namespace

TEST_CASE("episode sampling keeps support and query disjoint with dense labels") {
  auto pool = tagged_pool(9, 8, 4);
  meta::EpisodeSpec es{5, 2, 3};
  Rng rng(42);
  auto ep = meta::sample_episode(pool, all_classes(pool), es, rng);
  CHECK(ep.support_count == 10);
  CHECK(ep.query_count == 15);
  CHECK(ep.support_x.size() == 10u * 4);
  std::set<int> sup_labels(ep.support_y.begin(), ep.support_y.end());
  CHECK(sup_labels == std::set<int>{0, 1, 2, 3, 4});

  // Same episode-local label must map to one underlying class, and the
  // (class, instance) tags must never repeat across support and query.
  std::set<std::pair<int, int>> seen;
  std::map<int, int> label_to_class;
  auto scan = [&](const std::vector<float>& xs, const std::vector<int>& ys) {
    for (std::size_t i = 0; i < ys.size(); ++i) {
      int c = static_cast<int>(xs[i * 4]);
      int inst = static_cast<int>(xs[i * 4 + 1]);
      CHECK(seen.insert({c, inst}).second);
      auto it = label_to_class.find(ys[i]);
      if (it == label_to_class.end())
        label_to_class[ys[i]] = c;
      else
        CHECK(it->second == c);
    }
  };
  scan(ep.support_x, ep.support_y);
  scan(ep.query_x, ep.query_y);
  CHECK(label_to_class.size() == 5);

  // Seeded: same rng state, same episode.
  Rng r1(7), r2(7);
  auto a = meta::sample_episode(pool, all_classes(pool), es, r1);
  auto b = meta::sample_episode(pool, all_classes(pool), es, r2);
  CHECK(a.support_x == b.support_x);
  CHECK(a.query_y == b.query_y);
}

TEST_CASE("episode sampling rejects impossible requests") {
  auto pool = tagged_pool(4, 5, 4);
  Rng rng(0);
  CHECK_THROWS_AS(meta::sample_episode(pool, all_classes(pool), {5, 1, 2}, rng),
                  ConfigError);
  CHECK_THROWS_AS(meta::sample_episode(pool, all_classes(pool), {3, 2, 4}, rng),
                  ConfigError);
  CHECK_THROWS_AS(meta::sample_episode(pool, all_classes(pool), {1, 1, 1}, rng),
                  ConfigError);
  CHECK_THROWS_AS(meta::sample_episode(pool, all_classes(pool), {3, 0, 1}, rng),
                  ConfigError);
}

TEST_CASE("one-step outer gradient matches finite differences of the adapted loss") {
  // Tiny attention-bearing net in double precision. The analytic outer
  // gradient flows through the inner update; the oracle recomputes
  // L(theta - alpha grad L(theta, support), query) at perturbed theta.
  auto spec = nn::mlp_trunk(nn::AttentionPlacement::AllBlocks, /*with_bn=*/false,
                            /*r=*/2, /*input_dim=*/3, /*hidden=*/4);
  Rng rng(5);
  ParamStoreT<double> params;
  Rng init = rng.substream("init");
  nn::init_layers(params, spec, 0, static_cast<int>(spec.layers.size()), "t", init);
  nn::init_head(params, 4, 2, init);

  meta::EpisodeT<double> ep;
  Rng drng = rng.substream("data");
  for (int i = 0; i < 4; ++i) {
    for (int k = 0; k < 3; ++k) ep.support_x.push_back(drng.normal());
    ep.support_y.push_back(i % 2);
  }
  for (int i = 0; i < 6; ++i) {
    for (int k = 0; k < 3; ++k) ep.query_x.push_back(drng.normal());
    ep.query_y.push_back(i % 2);
  }
  ep.support_count = 4;
  ep.query_count = 6;
  const double alpha = 0.1;

  auto eval = [&]() {
    ad::Tape<double> t;
    TapedParams<double> p = lift(t, params);
    double v = meta::adapted_query_loss(t, spec, p, ep, 1, alpha, false).scalar();
    return v;
  };

  ad::Tape<double> t;
  TapedParams<double> p = lift(t, params);
  ad::Var<double> loss = meta::adapted_query_loss(t, spec, p, ep, 1, alpha, false);
  auto grads = t.backward(loss, p.vars);
  auto gv = grad_values(params, grads);

  double h = 1e-6, worst = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (std::size_t k = 0; k < params.entry(i).value.v.size(); ++k) {
      double& x = params.entry(i).value.v[k];
      double keep = x;
      x = keep + h;
      double up = eval();
      x = keep - h;
      double dn = eval();
      x = keep;
      double fd = (up - dn) / (2 * h);
      double g = gv[i].v[k];
      double rel = std::abs(fd - g) / std::max({std::abs(fd), std::abs(g), 1e-6});
      worst = std::max(worst, rel);
    }
  }
  CHECK(worst < 1e-4);

  // First-order mode drops the second-order path, so its gradient differs.
  ad::Tape<double> t1;
  TapedParams<double> p1 = lift(t1, params);
  ad::Var<double> loss1 = meta::adapted_query_loss(t1, spec, p1, ep, 1, alpha, true);
  auto gv1 = grad_values(params, t1.backward(loss1, p1.vars));
  double diff = 0;
  for (std::size_t i = 0; i < gv.size(); ++i)
    for (std::size_t k = 0; k < gv[i].v.size(); ++k)
      diff = std::max(diff, std::abs(gv[i].v[k] - gv1[i].v[k]));
  CHECK(diff > 1e-8);
}

TEST_CASE("zero meta-iterations is a no-op") {
  auto spec = nn::mlp_trunk(nn::AttentionPlacement::AllBlocks, true, 10, 16, 20);
  Rng rng(3);
  auto params = meta::init_meta_params(spec, 5, rng);
  std::uint64_t before = params.checksum();
  auto pool = tagged_pool(8, 6, 16);
  meta::MetaConfig cfg;
  cfg.iterations = 0;
  cfg.episode = {5, 1, 3};
  auto log = meta::meta_train(spec, params, pool, all_classes(pool), cfg);
  CHECK(log.empty());
  CHECK(params.checksum() == before);
}

TEST_CASE("meta-training a separable pool is deterministic and learns") {
  // Classes are constant, well-separated vectors plus noise; a handful of
  // outer iterations must beat chance on held-out episodes.
  const int dim = 16;
  data::ClassImages pool;
  pool.rows = 1;
  pool.cols = dim;
  Rng gen(9);
  for (int c = 0; c < 10; ++c) {
    pool.class_names.push_back("c" + std::to_string(c));
    std::vector<float> proto(dim);
    for (auto& v : proto) v = static_cast<float>(gen.normal());
    std::vector<std::vector<float>> inst;
    for (int i = 0; i < 6; ++i) {
      std::vector<float> im(dim);
      for (int k = 0; k < dim; ++k)
        im[k] = proto[k] + 0.05f * static_cast<float>(gen.normal());
      inst.push_back(std::move(im));
    }
    pool.images.push_back(std::move(inst));
  }
  std::vector<int> train_classes{0, 1, 2, 3, 4, 5, 6}, test_classes{7, 8, 9, 0, 1};

  auto spec = nn::mlp_trunk(nn::AttentionPlacement::AllBlocks, true, 10, dim, 20);
  meta::MetaConfig cfg;
  cfg.episode = {5, 1, 4};
  cfg.meta_batch = 4;
  cfg.inner_steps = 3;
  cfg.alpha = 0.4f;
  cfg.beta = 0.05f;
  cfg.iterations = 25;
  cfg.seed = 17;

  Rng rng(17);
  auto params = meta::init_meta_params(spec, 5, rng);
  double before = meta::evaluate_episodes(spec, params, pool, test_classes, cfg.episode,
                                          cfg.inner_steps, cfg.alpha, 20, 99);
  auto log = meta::meta_train(spec, params, pool, train_classes, cfg);
  REQUIRE(log.size() == 25);
  CHECK(log.front().iteration == 0);
  CHECK(log.back().iteration == 24);
  double after = meta::evaluate_episodes(spec, params, pool, test_classes, cfg.episode,
                                         cfg.inner_steps, cfg.alpha, 20, 99);
  CHECK(after > before);
  CHECK(after > 0.5);
  CHECK(log.back().meta_loss < log.front().meta_loss);

  // Bit-identical re-run from the same seed.
  Rng rng2(17);
  auto params2 = meta::init_meta_params(spec, 5, rng2);
  auto log2 = meta::meta_train(spec, params2, pool, train_classes, cfg);
  CHECK(params2.checksum() == params.checksum());
  CHECK(log2.back().meta_loss == log.back().meta_loss);

  // Checkpoint round-trip reproduces bit-identical forward outputs.
  fs::path ck = fs::temp_directory_path() / "sam-meta-ckpt.bin";
  ckpt::save(ck.string(), params, {{"network", spec.name}, {"seed", "17"}});
  auto loaded = ckpt::load(ck.string());
  CHECK(loaded.meta.at("network") == spec.name);
  CHECK(loaded.params.checksum() == params.checksum());

  Rng erng(5);
  auto ep = meta::sample_episode(pool, test_classes, cfg.episode, erng);
  auto forward_vals = [&](const ParamStore& ps) {
    ad::Tape<float> t;
    TapedParams<float> p = lift(t, ps, false);
    ad::Var<float> x = nn::input_batch(t, spec, ep.query_x, ep.query_count);
    nn::ForwardOpts<float> opts;  // frozen statistics
    return meta::episode_logits(t, spec, p, x, opts).val();
  };
  CHECK(forward_vals(params) == forward_vals(loaded.params));
}

TEST_CASE("divergence aborts with the failing iteration in the message") {
  auto pool = tagged_pool(6, 4, 8);
  // Huge inner step on raw class tags overflows the exponentials quickly.
  auto spec = nn::mlp_trunk(nn::AttentionPlacement::None, false, 10, 8, 10);
  Rng rng(1);
  auto params = meta::init_meta_params(spec, 3, rng);
  for (std::size_t i = 0; i < params.size(); ++i)
    for (auto& v : params.entry(i).value.v) v *= 1e8f;
  meta::MetaConfig cfg;
  cfg.episode = {3, 1, 2};
  cfg.meta_batch = 2;
  cfg.inner_steps = 2;
  cfg.alpha = 1e12f;
  cfg.iterations = 3;
  CHECK_THROWS_WITH_AS(meta::meta_train(spec, params, pool, all_classes(pool), cfg),
                       doctest::Contains("iteration"), NumericError);
}
