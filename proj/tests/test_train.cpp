#include "mmadv/train.hpp"

#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>

using namespace mmadv;

namespace {

PairedDataset small_world(int groups, int captions, uint64_t seed) {
  WorldConfig w;
  return generate_dataset(w, groups, 1, captions, seed);
}

bool params_equal(const ModelParams& a, const ModelParams& b) {
  auto ta = a.tensors(), tb = b.tensors();
  for (size_t i = 0; i < ta.size(); ++i)
    if ((*ta[i] - *tb[i]).cwiseAbs().maxCoeff() != 0.0) return false;
  return true;
}

}  // namespace

TEST_CASE("cosine learning-rate schedule") {
  CHECK(lr_schedule(0, 100, 0.5) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(lr_schedule(100, 100, 0.5) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(std::abs(lr_schedule(50, 100, 0.5) - 0.25) < 1e-12);
  CHECK_THROWS_AS(lr_schedule(-1, 100, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(lr_schedule(101, 100, 0.5), std::invalid_argument);
}

TEST_CASE("sample_batch") {
  PairedDataset d = small_world(32, 5, 3);

  SUBCASE("deterministic for a fixed seed and step") {
    BatchPair a = sample_batch(d, PairingPolicy::kOneToMany, 8, 7, 5);
    BatchPair b = sample_batch(d, PairingPolicy::kOneToMany, 8, 7, 5);
    CHECK((a.images - b.images).cwiseAbs().maxCoeff() == 0.0);
    CHECK(a.texts == b.texts);
    CHECK(a.group_ids == b.group_ids);
    BatchPair c = sample_batch(d, PairingPolicy::kOneToMany, 8, 7, 6);
    CHECK(a.group_ids != c.group_ids);
  }

  SUBCASE("group ids are distinct within a batch") {
    for (int step = 0; step < 20; ++step) {
      BatchPair b = sample_batch(d, PairingPolicy::kFirstOnly11, 16, 1, step);
      std::set<int> ids(b.group_ids.begin(), b.group_ids.end());
      CHECK(ids.size() == b.group_ids.size());
    }
  }

  SUBCASE("one-to-many picks captions uniformly") {
    // 50k caption draws; each of the five captions should appear with
    // frequency 1/5 within +-0.02.
    std::map<TextSample, long> counts;
    long total = 0;
    for (int step = 0; step < 3125; ++step) {
      BatchPair b = sample_batch(d, PairingPolicy::kOneToMany, 16, 11, step);
      for (const auto& t : b.texts) {
        ++counts[t];
        ++total;
      }
    }
    CHECK(total == 50000);
    // Aggregate per caption slot: captions are distinct across groups, so
    // pool by matching each drawn caption to its index within its group.
    std::map<int, long> slot_counts;
    std::map<TextSample, int> slot_of;
    for (const auto& g : d.groups)
      for (size_t ci = 0; ci < g.captions.size(); ++ci)
        slot_of[g.captions[ci].text] = static_cast<int>(ci);
    for (const auto& [text, c] : counts) slot_counts[slot_of.at(text)] += c;
    for (const auto& [slot, c] : slot_counts) {
      double freq = static_cast<double>(c) / total;
      INFO("caption slot ", slot, " freq ", freq);
      CHECK(std::abs(freq - 0.2) <= 0.02);
    }
  }

  SUBCASE("oversized batch is rejected") {
    CHECK_THROWS_AS(sample_batch(d, PairingPolicy::kFirstOnly11, 64, 1, 0),
                    std::invalid_argument);
  }
}

TEST_CASE("optimizer steps match hand-computed updates") {
  SUBCASE("sgd with momentum") {
    Mat p = Mat::Constant(1, 1, 1.0);
    Optimizer opt(OptimizerKind::kSgdMomentum, {&p}, {true}, 0.0, 0.9);
    Mat g = Mat::Constant(1, 1, 0.5);
    opt.step({g}, 0.1);
    CHECK(p(0, 0) == doctest::Approx(1.0 - 0.1 * 0.5).epsilon(1e-15));
    opt.step({g}, 0.1);
    // velocity = 0.9*0.5 + 0.5 = 0.95
    CHECK(p(0, 0) == doctest::Approx(0.95 - 0.1 * 0.95).epsilon(1e-12));
  }

  SUBCASE("adamw bias correction and decoupled decay") {
    Mat p = Mat::Constant(1, 1, 1.0);
    Optimizer opt(OptimizerKind::kAdamW, {&p}, {true}, 0.1, 0.9);
    Mat g = Mat::Constant(1, 1, 0.5);
    opt.step({g}, 0.01);
    // mhat = g, vhat = g^2 -> update = lr * g/(|g|+eps) ~ lr, then decay.
    double expect = 1.0 - 0.01 * (0.5 / (0.5 + 1e-8));
    expect -= 0.01 * 0.1 * expect;
    CHECK(p(0, 0) == doctest::Approx(expect).epsilon(1e-10));
  }

  SUBCASE("decay mask skips masked tensors") {
    Mat p = Mat::Constant(1, 1, 2.0);
    Optimizer opt(OptimizerKind::kAdamW, {&p}, {false}, 10.0, 0.9);
    Mat g = Mat::Constant(1, 1, 1.0);
    opt.step({g}, 0.01);
    CHECK(p(0, 0) == doctest::Approx(2.0 - 0.01).epsilon(1e-8));
  }
}

TEST_CASE("clean training reduces the loss from ln n") {
  PairedDataset d = small_world(48, 3, 5);
  TrainConfig tc;
  tc.steps = 120;
  tc.batch_size = 32;
  tc.lr = 3e-3;
  tc.seed = 1;
  TrainResult r = train_clean(tc, d);
  REQUIRE(!r.log.entries.empty());
  // Cold start is anchored at ln(batch); at this embedding width the
  // similarity spread adds an O(1) offset on top of it.
  CHECK(r.log.entries.front().loss >= std::log(32.0) - 0.2);
  CHECK(r.log.entries.front().loss <= std::log(32.0) + 3.0);
  CHECK(r.log.entries.back().loss < r.log.entries.front().loss - 0.5);
  CHECK(r.log.entries.back().step == tc.steps - 1);
}

TEST_CASE("degenerate budgets collapse to clean training") {
  PairedDataset d = small_world(24, 2, 9);
  TrainConfig tc;
  tc.steps = 25;
  tc.batch_size = 8;
  tc.lr = 1e-3;
  tc.seed = 4;

  PerturbationBudget zero;
  zero.epsilon = 0.0;
  zero.step_size = 0.0;
  zero.max_edits = 0;

  TrainResult clean = train_clean(tc, d);

  SUBCASE("tecoa-itr with epsilon 0") {
    TrainConfig t2 = tc;
    t2.budget = zero;
    TrainResult r = train_unimodal_at(t2, d, Regime::kTecoaItr);
    REQUIRE(r.log.entries.size() == clean.log.entries.size());
    for (size_t i = 0; i < r.log.entries.size(); ++i)
      CHECK(r.log.entries[i].loss == clean.log.entries[i].loss);
    CHECK(params_equal(r.params, clean.params));
  }

  SUBCASE("mat with zero budgets") {
    TrainConfig t2 = tc;
    t2.budget = zero;
    TrainResult r = train_mat(t2, d);
    CHECK(params_equal(r.params, clean.params));
  }
}

TEST_CASE("fare needs a reference and trains toward it") {
  PairedDataset d = small_world(24, 2, 13);
  TrainConfig tc;
  tc.steps = 10;
  tc.batch_size = 8;
  tc.regime = Regime::kFare;
  CHECK_THROWS_AS(train(tc, d), std::invalid_argument);

  ModelParams ref = ModelParams::init(d.world.model_dims(), 5);
  TrainResult r = train(tc, d, &ref);
  CHECK(r.log.entries.front().loss >= 0.0);  // squared distance loss
}

TEST_CASE("mat attacks both modalities during training") {
  PairedDataset d = small_world(16, 2, 21);
  TrainConfig tc;
  tc.steps = 6;
  tc.batch_size = 4;
  tc.seed = 2;
  TrainResult clean = train_clean(tc, d);
  TrainResult mat = train_mat(tc, d);
  // Any nonzero budget must change the trajectory.
  CHECK(!params_equal(mat.params, clean.params));
}

TEST_CASE("training is deterministic") {
  PairedDataset d = small_world(16, 2, 31);
  TrainConfig tc;
  tc.steps = 8;
  tc.batch_size = 4;
  tc.seed = 6;
  TrainResult a = train_mat(tc, d);
  TrainResult b = train_mat(tc, d);
  CHECK(params_equal(a.params, b.params));
  REQUIRE(a.log.entries.size() == b.log.entries.size());
  for (size_t i = 0; i < a.log.entries.size(); ++i)
    CHECK(a.log.entries[i].loss == b.log.entries[i].loss);
}

TEST_CASE("runlog serialization") {
  RunLog log;
  log.config_hash = 12345;
  log.total_seconds = 1.5;
  log.entries.push_back({0, 4.85, 1e-4, 2.0});
  log.entries.push_back({100, 3.2, 9e-5, 2.1});
  std::string path = "runlog_test.csv";
  log.save(path);
  std::ifstream in(path);
  std::string header, columns, row;
  std::getline(in, header);
  std::getline(in, columns);
  std::getline(in, row);
  CHECK(header.find("config_hash=12345") != std::string::npos);
  CHECK(columns == "step,loss,lr,wall_ms");
  CHECK(row.substr(0, 2) == "0,");
  CHECK(log.mean_step_ms() == doctest::Approx(2.05));
  std::remove(path.c_str());
}

TEST_CASE("config validation and strings") {
  TrainConfig tc;
  tc.steps = 0;
  CHECK_THROWS_AS(tc.validate(), std::invalid_argument);
  tc = {};
  tc.batch_size = 1;
  CHECK_THROWS_AS(tc.validate(), std::invalid_argument);
  tc = {};
  tc.lr = 0.0;
  CHECK_THROWS_AS(tc.validate(), std::invalid_argument);

  for (auto r : {Regime::kClean, Regime::kTecoaItr, Regime::kFare, Regime::kMat})
    CHECK(regime_from_string(to_string(r)) == r);
  CHECK_THROWS(regime_from_string("bogus"));
  for (auto o : {OptimizerKind::kSgdMomentum, OptimizerKind::kAdamW})
    CHECK(optimizer_from_string(to_string(o)) == o);
  CHECK_THROWS(optimizer_from_string("bogus"));
}
