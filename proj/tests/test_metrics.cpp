#include "mmadv/metrics.hpp"

#include <doctest.h>

#include "mmadv/augment.hpp"
#include "mmadv/train.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

using namespace mmadv;

namespace {

// A model overfit on a handful of groups: the "perfect retrieval" fixture.
TrainResult overfit_model(const PairedDataset& d, uint64_t seed) {
  TrainConfig tc;
  tc.steps = 800;
  tc.batch_size = static_cast<int>(d.groups.size());
  tc.lr = 3e-3;
  tc.seed = seed;
  return train_clean(tc, d);
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("recall_at_k") {
  WorldConfig w;

  SUBCASE("overfit model retrieves perfectly") {
    PairedDataset d = generate_dataset(w, 4, 1, 2, 3);
    TrainResult r = overfit_model(d, 1);
    CHECK(recall_at_k(r.params, d, 1, Direction::kImageToText) == 1.0);
    CHECK(recall_at_k(r.params, d, 1, Direction::kTextToImage) == 1.0);
  }

  SUBCASE("random model sits at chance over 128 groups") {
    PairedDataset d = generate_dataset(w, 128, 1, 1, 5);
    ModelParams p = ModelParams::init(w.model_dims(), 9);
    double r1 = recall_at_k(p, d, 1, Direction::kImageToText);
    // Chance 1/128; 3-sigma binomial band over 128 queries.
    CHECK(r1 <= 1.0 / 128.0 + 3.0 * std::sqrt(127.0) / 128.0 / std::sqrt(128.0));
  }

  SUBCASE("recall is non-decreasing in k") {
    PairedDataset d = generate_dataset(w, 32, 1, 1, 7);
    ModelParams p = ModelParams::init(w.model_dims(), 11);
    double prev = 0.0;
    for (int k : {1, 5, 10, 32}) {
      double r = recall_at_k(p, d, k, Direction::kImageToText);
      CHECK(r >= prev);
      prev = r;
    }
    CHECK(prev == 1.0);  // k = gallery size retrieves everything
  }
}

TEST_CASE("robust_eval") {
  WorldConfig w;
  PairedDataset d = generate_dataset(w, 24, 1, 2, 11);
  TrainResult r = overfit_model(d, 3);

  SUBCASE("zero budget equals clean recall exactly") {
    PerturbationBudget zero;
    zero.epsilon = 0.0;
    zero.step_size = 0.0;
    zero.max_edits = 0;
    auto m = robust_eval(r.params, d, EvalAttack::kPgdOnly, zero);
    CHECK(m.at("tr1") == recall_at_k(r.params, d, 1, Direction::kImageToText));
    CHECK(m.at("ir1") == recall_at_k(r.params, d, 1, Direction::kTextToImage));
    auto mt = robust_eval(r.params, d, EvalAttack::kTextOnly, zero);
    CHECK(mt.at("tr1") == m.at("tr1"));
  }

  SUBCASE("attacks never improve recall, keys are complete") {
    PerturbationBudget b = PerturbationBudget::evaluation_default();
    double clean_tr1 = recall_at_k(r.params, d, 1, Direction::kImageToText);
    double clean_ir1 = recall_at_k(r.params, d, 1, Direction::kTextToImage);
    for (auto a : {EvalAttack::kPgdOnly, EvalAttack::kTextOnly,
                   EvalAttack::kCoAttack, EvalAttack::kSgaAnalog}) {
      auto m = robust_eval(r.params, d, a, b, 1);
      for (const char* k : {"tr1", "tr5", "tr10", "ir1", "ir5", "ir10"})
        CHECK(m.count(k) == 1);
      CHECK(m.at("tr1") <= clean_tr1);
      CHECK(m.at("ir1") <= clean_ir1);
      CHECK(m.at("tr1") <= m.at("tr5"));
      CHECK(m.at("tr5") <= m.at("tr10"));
    }
  }

  SUBCASE("eval attack strings round-trip") {
    for (auto a : {EvalAttack::kPgdOnly, EvalAttack::kTextOnly,
                   EvalAttack::kCoAttack, EvalAttack::kSgaAnalog})
      CHECK(eval_attack_from_string(to_string(a)) == a);
    CHECK_THROWS(eval_attack_from_string("bogus"));
  }
}

TEST_CASE("alignment_score") {
  WorldConfig w;
  PairedDataset d = generate_dataset(w, 24, 1, 2, 13);
  TrainResult ref = overfit_model(d, 5);

  auto orig = original_pairs(d);
  double a_orig = alignment_score(ref.params, orig);
  CHECK(a_orig > 0.0);

  SUBCASE("duplication leaves the mean unchanged") {
    auto doubled = orig;
    doubled.insert(doubled.end(), orig.begin(), orig.end());
    CHECK(alignment_score(ref.params, doubled) ==
          doctest::Approx(a_orig).epsilon(1e-12));
  }

  SUBCASE("misaligned-control pairs score below the originals") {
    AugmenterSpec spec = AugmenterSpec::with(AugTechnique::kMisalignedControl);
    PairedDataset aug =
        build_augmented_dataset(d, {spec}, Assembly::kOneToMany, ref.params);
    double a_mis = alignment_score(ref.params, augmented_pairs(aug));
    CHECK(a_mis < a_orig);
  }
}

TEST_CASE("diversity_kl") {
  Rng rng(7);
  Mat a(40, 6);
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) a(i, j) = rng.normal();

  SUBCASE("identical sets have zero divergence") {
    CHECK(diversity_kl(a, a, KlEstimator::kPerPairCategorical) ==
          doctest::Approx(0.0).epsilon(1e-12));
    CHECK(diversity_kl(a, a, KlEstimator::kGaussianFit) ==
          doctest::Approx(0.0).epsilon(1e-12));
  }

  SUBCASE("gaussian fit matches the closed form") {
    Mat b(40, 6);
    for (int i = 0; i < b.rows(); ++i)
      for (int j = 0; j < b.cols(); ++j) b(i, j) = 0.5 + 1.7 * rng.normal();
    double got = diversity_kl(a, b, KlEstimator::kGaussianFit);
    // Closed-form KL between the diagonal Gaussians fitted to the data.
    double expect = 0.0;
    for (int j = 0; j < 6; ++j) {
      double ma = a.col(j).mean(), mb = b.col(j).mean();
      double va = (a.col(j).array() - ma).square().sum() / (a.rows() - 1);
      double vb = (b.col(j).array() - mb).square().sum() / (b.rows() - 1);
      expect += 0.5 * (std::log(vb / va) + (va + (ma - mb) * (ma - mb)) / vb -
                       1.0);
    }
    CHECK(std::abs(got - expect) < 1e-8);
  }
}

TEST_CASE("psd_sqrt") {
  SUBCASE("identity and diagonal cases") {
    CHECK((psd_sqrt(Mat::Identity(3, 3)) - Mat::Identity(3, 3))
              .cwiseAbs()
              .maxCoeff() < 1e-12);
    Mat d = Mat::Zero(2, 2);
    d(0, 0) = 4.0;
    d(1, 1) = 9.0;
    Mat s = psd_sqrt(d);
    CHECK(s(0, 0) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(s(1, 1) == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(std::abs(s(0, 1)) < 1e-12);
  }

  SUBCASE("random 32x32 PSD reconstruction") {
    Rng rng(21);
    Mat m(32, 32);
    for (int i = 0; i < 32; ++i)
      for (int j = 0; j < 32; ++j) m(i, j) = rng.normal();
    Mat a = m * m.transpose();
    Mat s = psd_sqrt(a);
    CHECK((s * s - a).norm() / a.norm() < 1e-8);
    CHECK((s - s.transpose()).cwiseAbs().maxCoeff() < 1e-10);
  }

  SUBCASE("indefinite input is rejected") {
    Mat bad = -Mat::Identity(2, 2);
    CHECK_THROWS(psd_sqrt(bad));
  }
}

TEST_CASE("frechet_gap_features") {
  Rng rng(31);
  Mat a(64, 8);
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) a(i, j) = rng.normal();

  SUBCASE("identical datasets give zero") {
    CHECK(frechet_gap_features(a, a) <= 1e-8);
  }

  SUBCASE("pure mean shift gives the squared shift norm") {
    Eigen::RowVectorXd delta(8);
    for (int j = 0; j < 8; ++j) delta(j) = 0.1 * (j + 1);
    Mat b = a;
    b.rowwise() += delta;
    CHECK(std::abs(frechet_gap_features(a, b) - delta.squaredNorm()) < 1e-6);
  }

  SUBCASE("too few rows raise") {
    Mat tiny(3, 8);
    tiny.setZero();
    CHECK_THROWS(frechet_gap_features(tiny, tiny));
  }
}

TEST_CASE("t2i shift knob raises the frechet gap") {
  WorldConfig w;
  PairedDataset d = generate_dataset(w, 96, 1, 2, 17);
  ModelParams ref = ModelParams::init(w.model_dims(), 19);

  auto gap_for = [&](double shift) {
    AugmenterSpec spec = AugmenterSpec::with(AugTechnique::kT2iOracle);
    spec.shift = shift;
    PairedDataset aug =
        build_augmented_dataset(d, {spec}, Assembly::kManyToOne, ref);
    return frechet_gap(ref, original_pairs(d), augmented_pairs(aug));
  };
  double base = gap_for(0.0);
  double shifted = gap_for(0.15);
  INFO("gap base ", base, " shifted ", shifted);
  CHECK(shifted > base);
}

TEST_CASE("report serialization") {
  std::vector<MetricsReport> reports(2);
  reports[0].values = {{"clean_tr1", 0.9}, {"robust_pgd-only_tr1", 0.4}};
  reports[0].config_hash = 7;
  reports[0].seed = 1;
  reports[0].model_tag = "clean";
  reports[1].values = {{"clean_tr1", 0.8}, {"loss_final", 1.2}};
  reports[1].config_hash = 7;
  reports[1].seed = 2;
  reports[1].model_tag = "mat";

  std::string jpath = "reports_test.jsonl";
  std::string cpath = "reports_test.csv";
  save_reports_jsonl(reports, jpath);
  auto loaded = load_reports_jsonl(jpath);
  REQUIRE(loaded.size() == 2);
  CHECK(loaded[0].values == reports[0].values);
  CHECK(loaded[1].model_tag == "mat");
  CHECK(loaded[0].config_hash == 7);

  save_reports_csv(reports, cpath);
  std::string csv = slurp(cpath);
  // Sorted union of keys, one row per report.
  CHECK(csv.find("clean_tr1") != std::string::npos);
  CHECK(csv.find("loss_final") != std::string::npos);
  std::string csv2 = csv;
  save_reports_csv(reports, cpath);
  CHECK(slurp(cpath) == csv2);

  CHECK(reports[0].at("clean_tr1") == 0.9);
  CHECK_THROWS(reports[0].at("missing_key"));

  std::remove(jpath.c_str());
  std::remove(cpath.c_str());
}
