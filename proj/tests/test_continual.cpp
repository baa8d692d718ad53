#include <cmath>

#include "doctest.h"
#include "sam/continual.hpp"

using namespace sam;

namespace {

// Five two-class tasks over ten separable Gaussian clusters in `dim` inputs.
data::CLSequence toy_sequence(int dim, int train_per_class, int test_per_class,
                              std::uint64_t seed) {
  Rng gen(seed);
  std::vector<std::vector<float>> protos;
  for (int c = 0; c < 10; ++c) {
    std::vector<float> p(dim);
    for (auto& v : p) v = static_cast<float>(gen.normal()) * 2.0f;
    protos.push_back(std::move(p));
  }
  data::CLSequence seq;
  seq.input_shape = {dim};
  seq.total_classes = 10;
  for (int task = 0; task < 5; ++task) {
    data::TaskDataset t;
    t.id = task;
    t.nclasses = 2;
    t.global_labels = {2 * task, 2 * task + 1};
    t.input_shape = {dim};
    auto emit = [&](int per_class, std::vector<float>& xs, std::vector<int>& ys) {
      for (int local = 0; local < 2; ++local)
        for (int i = 0; i < per_class; ++i) {
          const auto& p = protos[2 * task + local];
          for (int k = 0; k < dim; ++k)
            xs.push_back(p[k] + 0.15f * static_cast<float>(gen.normal()));
          ys.push_back(local);
        }
    };
    emit(train_per_class, t.train_x, t.train_y);
    emit(test_per_class, t.test_x, t.test_y);
    seq.tasks.push_back(std::move(t));
  }
  return seq;
}

cl::Model toy_model(int dim, std::uint64_t seed) {
  cl::Model m;
  m.spec = nn::mlp_trunk(nn::AttentionPlacement::AllBlocks, false, 2, dim, 8);
  Rng rng(seed);
  m.shared = cl::init_shared(m.spec, rng);
  return m;
}

}  // namespace

TEST_CASE("concatenated-logit decision matches the written examples") {
  auto [h1, j1] = cl::decide_concat({{0.2f, 0.9f}, {0.5f, 0.1f}});
  CHECK(h1 == 0);
  CHECK(j1 == 1);

  auto [h2, j2] = cl::decide_concat({{0.3f, 0.1f, 0.25f}});
  CHECK(h2 == 0);
  CHECK(j2 == 0);

  // Uniform logits: lowest concatenated index wins.
  auto [h3, j3] = cl::decide_concat({{1.0f, 1.0f}, {1.0f, 1.0f}});
  CHECK(h3 == 0);
  CHECK(j3 == 0);

  CHECK_THROWS_AS(cl::decide_concat({}), Error);
}

TEST_CASE("decision module agrees with an exhaustive scan over random logits") {
  Rng rng(77);
  for (int trial = 0; trial < 1000; ++trial) {
    int nheads = 1 + static_cast<int>(rng.uniform_int(4));
    std::vector<std::vector<float>> outputs;
    std::vector<float> flat;
    for (int h = 0; h < nheads; ++h) {
      int width = 2 + static_cast<int>(rng.uniform_int(4));
      std::vector<float> v(width);
      // Coarse quantization forces frequent exact ties.
      for (auto& x : v) x = std::floor(static_cast<float>(rng.normal()) * 2.0f) / 2.0f;
      flat.insert(flat.end(), v.begin(), v.end());
      outputs.push_back(std::move(v));
    }
    int want = 0;
    for (int i = 1; i < static_cast<int>(flat.size()); ++i)
      if (flat[i] > flat[want]) want = i;
    auto [h, j] = cl::decide_concat(outputs);
    int got = j;
    for (int k = 0; k < h; ++k) got += static_cast<int>(outputs[k].size());
    CHECK(got == want);
  }
}

TEST_CASE("zero epochs leaves the freshly initialized head untouched") {
  auto seq = toy_sequence(6, 8, 4, 1);
  auto m = toy_model(6, 2);
  cl::TrainConfig cfg;
  cfg.epochs = 0;
  Rng task_rng(5);
  auto head = cl::train_task(m, seq.tasks[0], cfg, task_rng);
  Rng again(5);
  Rng init = again.substream("init");
  auto fresh = cl::init_specific(m.spec, 2, init);
  CHECK(head.phi.checksum() == fresh.checksum());
  CHECK(head.global_labels == std::vector<int>{0, 1});
}

TEST_CASE("frozen-trunk sequence: no forgetting, theta immutable, monotone agnostic") {
  auto seq = toy_sequence(6, 30, 20, 3);
  auto m = toy_model(6, 4);
  std::uint64_t theta_before = m.shared.checksum();
  cl::TrainConfig cfg;
  cfg.epochs = 8;
  cfg.batch_size = 16;
  cfg.lr = 0.05f;
  auto report = cl::run_sequence(m, seq, cfg, 11);

  CHECK(m.shared.checksum() == theta_before);
  REQUIRE(report.conditioned.size() == 5);

  // Conditioned accuracy of task i is exactly the same at every later stage.
  for (int i = 0; i < 5; ++i)
    for (int j = i; j < 5; ++j) {
      CHECK(report.conditioned[j][i] == report.conditioned[i][i]);
      if (j > i) CHECK(report.agnostic[j][i] <= report.agnostic[j - 1][i]);
    }

  // Separable clusters: the per-task heads should fit their own task well,
  // and conditioning can only remove cross-task confusions.
  for (int i = 0; i < 5; ++i) {
    CHECK(report.conditioned[4][i] >= 80.0);
    CHECK(report.conditioned[4][i] >= report.agnostic[4][i]);
  }
  double avg = report.average(cl::Protocol::Conditioned);
  CHECK(avg >= 80.0);

  // Stage-0 average is just A[0][0].
  CHECK(report.average(cl::Protocol::Agnostic, 0) == report.agnostic[0][0]);

  // Bit-reproducible re-run.
  auto m2 = toy_model(6, 4);
  auto report2 = cl::run_sequence(m2, seq, cfg, 11);
  CHECK(report2.agnostic == report.agnostic);
  CHECK(report2.conditioned == report.conditioned);
  for (std::size_t h = 0; h < m.heads.size(); ++h)
    CHECK(m2.heads[h].phi.checksum() == m.heads[h].phi.checksum());
}

TEST_CASE("evaluation protocols handle missing heads and bad labels") {
  auto seq = toy_sequence(6, 8, 4, 1);
  auto m = toy_model(6, 2);
  CHECK_THROWS_AS(cl::evaluate_task(m, seq.tasks[0], cl::Protocol::Agnostic), Error);

  // A label outside the head's class range is a training-time error.
  auto bad = seq.tasks[0];
  bad.train_y[0] = 7;
  cl::TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 4;
  CHECK_THROWS_AS(cl::train_task(m, bad, cfg, Rng(1)), Error);
}

TEST_CASE("forward-transfer probes train heads against a fixed trunk") {
  auto seq = toy_sequence(6, 20, 12, 9);
  auto m = toy_model(6, 4);
  std::vector<data::TaskDataset> probes{seq.tasks[0], seq.tasks[2]};
  cl::TrainConfig cfg;
  cfg.epochs = 8;
  cfg.batch_size = 16;
  cfg.lr = 0.05f;
  std::uint64_t theta_before = m.shared.checksum();
  auto acc = cl::fwt_eval(m.spec, m.shared, probes, cfg, 13);
  REQUIRE(acc.size() == 2);
  for (double a : acc) {
    CHECK(a >= 60.0);
    CHECK(a <= 100.0);
  }
  CHECK(m.shared.checksum() == theta_before);
  auto acc2 = cl::fwt_eval(m.spec, m.shared, probes, cfg, 13);
  CHECK(acc2 == acc);
}
