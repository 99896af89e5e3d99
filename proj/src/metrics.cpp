#include "mmadv/metrics.hpp"

#include <json.hpp>

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>

namespace mmadv {

using json = nlohmann::ordered_json;

std::string to_string(EvalAttack a) {
  switch (a) {
    case EvalAttack::kPgdOnly: return "pgd-only";
    case EvalAttack::kTextOnly: return "text-only";
    case EvalAttack::kCoAttack: return "coattack";
    case EvalAttack::kSgaAnalog: return "sga-analog";
  }
  throw std::logic_error("unknown eval attack");
}

EvalAttack eval_attack_from_string(const std::string& s) {
  if (s == "pgd-only") return EvalAttack::kPgdOnly;
  if (s == "text-only") return EvalAttack::kTextOnly;
  if (s == "coattack") return EvalAttack::kCoAttack;
  if (s == "sga-analog") return EvalAttack::kSgaAnalog;
  throw std::invalid_argument("unknown eval attack: " + s);
}

double MetricsReport::at(const std::string& key) const {
  auto it = values.find(key);
  if (it == values.end())
    throw std::out_of_range("metrics report has no key " + key);
  return it->second;
}

namespace {

// Rank of the correct gallery row for each query row, ties by index.
std::vector<int> hit_ranks(const Mat& queries, const Mat& gallery) {
  std::vector<int> ranks(queries.rows());
  for (int q = 0; q < queries.rows(); ++q) {
    Eigen::VectorXd sims = gallery * queries.row(q).transpose();
    double own = sims(q);
    int rank = 0;
    for (int c = 0; c < sims.size(); ++c) {
      if (c == q) continue;
      if (sims(c) > own || (sims(c) == own && c < q)) ++rank;
    }
    ranks[q] = rank;
  }
  return ranks;
}

// As hit_ranks, but query q's own gallery element is taken from
// `own_gallery` (its perturbed counterpart) while every other candidate
// stays clean.
std::vector<int> hit_ranks_paired(const Mat& queries, const Mat& gallery,
                                  const Mat& own_gallery) {
  std::vector<int> ranks(queries.rows());
  for (int q = 0; q < queries.rows(); ++q) {
    Eigen::VectorXd sims = gallery * queries.row(q).transpose();
    double own = own_gallery.row(q).dot(queries.row(q));
    int rank = 0;
    for (int c = 0; c < sims.size(); ++c) {
      if (c == q) continue;
      if (sims(c) > own || (sims(c) == own && c < q)) ++rank;
    }
    ranks[q] = rank;
  }
  return ranks;
}

double recall_from_ranks(const std::vector<int>& ranks, int k) {
  int hits = 0;
  for (int r : ranks) hits += r < k ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(ranks.size());
}

}  // namespace

double recall_at_k(const ModelParams& params, const PairedDataset& test, int k,
                   Direction dir) {
  if (test.groups.empty())
    throw std::invalid_argument("recall: empty test set");
  int n = static_cast<int>(test.groups.size());
  Mat images(n, test.world.image_dim);
  std::vector<TextSample> caps;
  for (int i = 0; i < n; ++i) {
    images.row(i) = test.groups[i].first_image();
    caps.push_back(test.groups[i].first_caption());
  }
  Mat ei = encode_image(params, images);
  Mat et = encode_text(params, caps);
  auto ranks = dir == Direction::kImageToText ? hit_ranks(ei, et)
                                              : hit_ranks(et, ei);
  return recall_from_ranks(ranks, k);
}

std::map<std::string, double> robust_eval(const ModelParams& params,
                                          const PairedDataset& test,
                                          EvalAttack attack,
                                          const PerturbationBudget& budget,
                                          uint64_t seed) {
  if (test.groups.empty())
    throw std::invalid_argument("robust_eval: empty test set");
  int n = static_cast<int>(test.groups.size());
  Mat clean_images(n, test.world.image_dim);
  std::vector<TextSample> clean_caps;
  for (int i = 0; i < n; ++i) {
    clean_images.row(i) = test.groups[i].first_image();
    clean_caps.push_back(test.groups[i].first_caption());
  }

  Mat adv_images = clean_images;
  std::vector<TextSample> adv_caps = clean_caps;
  switch (attack) {
    case EvalAttack::kPgdOnly:
      adv_images = pgd_image_attack(params, clean_images, clean_caps, budget)
                       .images;
      break;
    case EvalAttack::kTextOnly:
      for (int i = 0; i < n; ++i)
        adv_caps[i] = text_attack_greedy(params, clean_caps[i],
                                         ImageSample(clean_images.row(i)),
                                         budget)
                          .text;
      break;
    case EvalAttack::kCoAttack:
      for (int i = 0; i < n; ++i) {
        auto r = eval_attack_coattack(params, ImageSample(clean_images.row(i)),
                                      clean_caps[i], budget);
        adv_images.row(i) = r.image.row(0);
        adv_caps[i] = r.text;
      }
      break;
    case EvalAttack::kSgaAnalog:
      for (int i = 0; i < n; ++i) {
        auto r = eval_attack_sga(params, test.groups[i], budget, 2,
                                 {0.75, 1.0, 1.25},
                                 derive_seed(seed, "sga/" + std::to_string(i)));
        adv_images.row(i) = r.image.row(0);
        adv_caps[i] = r.text;
      }
      break;
  }

  Mat ei_adv = encode_image(params, adv_images);
  Mat et_adv = encode_text(params, adv_caps);
  Mat ei_clean = encode_image(params, clean_images);
  Mat et_clean = encode_text(params, clean_caps);
  // Each query ranks against the clean galleries of the other groups, but
  // its own ground-truth element is the attacked pair's perturbed
  // counterpart: a multimodal attack degrades both the query and the
  // element it has to retrieve, so composed attacks rank strictly at or
  // below their image-only stage.
  auto tr_ranks = hit_ranks_paired(ei_adv, et_clean, et_adv);
  auto ir_ranks = hit_ranks_paired(et_adv, ei_clean, ei_adv);
  return {{"tr1", recall_from_ranks(tr_ranks, 1)},
          {"tr5", recall_from_ranks(tr_ranks, 5)},
          {"tr10", recall_from_ranks(tr_ranks, 10)},
          {"ir1", recall_from_ranks(ir_ranks, 1)},
          {"ir5", recall_from_ranks(ir_ranks, 5)},
          {"ir10", recall_from_ranks(ir_ranks, 10)}};
}

double alignment_score(
    const ModelParams& reference,
    const std::vector<std::pair<ImageSample, TextSample>>& pairs) {
  if (pairs.empty()) throw std::invalid_argument("alignment: no pairs");
  double sum = 0.0;
  for (const auto& [img, txt] : pairs) sum += similarity(reference, img, txt);
  return sum / static_cast<double>(pairs.size());
}

double diversity_kl(const Mat& original_emb, const Mat& augment_emb,
                    KlEstimator estimator) {
  if (original_emb.rows() != augment_emb.rows() ||
      original_emb.cols() != augment_emb.cols())
    throw std::invalid_argument("diversity: mismatched original/augment sets");
  if (original_emb.rows() == 0)
    throw std::invalid_argument("diversity: empty sets");
  if (estimator == KlEstimator::kPerPairCategorical) {
    double total = 0.0;
    for (int i = 0; i < original_emb.rows(); ++i) {
      Eigen::ArrayXd p = original_emb.row(i).array();
      Eigen::ArrayXd q = augment_emb.row(i).array();
      p = (p - p.maxCoeff()).exp();
      p /= p.sum();
      q = (q - q.maxCoeff()).exp();
      q /= q.sum();
      total += (p * (p.log() - q.log())).sum();
    }
    return total / static_cast<double>(original_emb.rows());
  }
  // Diagonal-Gaussian fit per set.
  auto fit = [](const Mat& m) {
    Eigen::ArrayXd mu = m.colwise().mean().array();
    Eigen::ArrayXd var = Eigen::ArrayXd::Zero(m.cols());
    for (int i = 0; i < m.rows(); ++i)
      var += (m.row(i).array() - mu.transpose()).square().transpose();
    var /= std::max(1.0, static_cast<double>(m.rows() - 1));
    var += 1e-12;
    return std::pair{mu, var};
  };
  auto [mu_p, var_p] = fit(original_emb);
  auto [mu_q, var_q] = fit(augment_emb);
  double kl = 0.0;
  for (int d = 0; d < mu_p.size(); ++d) {
    kl += std::log(std::sqrt(var_q(d) / var_p(d))) +
          (var_p(d) + (mu_p(d) - mu_q(d)) * (mu_p(d) - mu_q(d))) /
              (2.0 * var_q(d)) -
          0.5;
  }
  return std::max(0.0, kl);
}

Mat psd_sqrt(const Mat& a) {
  if (a.rows() != a.cols())
    throw std::invalid_argument("psd_sqrt: matrix not square");
  if ((a - a.transpose()).cwiseAbs().maxCoeff() > 1e-10)
    throw std::invalid_argument("psd_sqrt: matrix not symmetric");
  Eigen::SelfAdjointEigenSolver<Mat> es(a);
  Eigen::VectorXd ev = es.eigenvalues();
  for (int i = 0; i < ev.size(); ++i) {
    if (ev(i) < -1e-10)
      throw std::domain_error("psd_sqrt: eigenvalue " + std::to_string(ev(i)) +
                              " below tolerance");
    ev(i) = std::sqrt(std::max(0.0, ev(i)));
  }
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

double frechet_gap_features(const Mat& fa, const Mat& fb) {
  if (fa.rows() < fa.cols() + 1 || fb.rows() < fb.cols() + 1)
    throw std::invalid_argument(
        "frechet: need at least dim+1 samples per dataset");
  auto fit = [](const Mat& f) {
    Eigen::RowVectorXd mu = f.colwise().mean();
    Mat centered = f.rowwise() - mu;
    Mat cov = centered.transpose() * centered /
              static_cast<double>(f.rows() - 1);
    cov += 1e-6 * Mat::Identity(f.cols(), f.cols());
    return std::pair{mu, cov};
  };
  auto [mu1, s1] = fit(fa);
  auto [mu2, s2] = fit(fb);
  Mat s2_half = psd_sqrt(s2);
  Mat inner = s2_half * s1 * s2_half;
  inner = 0.5 * (inner + inner.transpose());
  Mat cross;
  try {
    cross = psd_sqrt(inner);
  } catch (const std::domain_error& e) {
    Eigen::SelfAdjointEigenSolver<Mat> es(inner);
    throw std::runtime_error(
        std::string("frechet: covariance product not PSD (") + e.what() +
        "; min eigenvalue " + std::to_string(es.eigenvalues().minCoeff()) +
        ")");
  }
  double gap = (mu1 - mu2).squaredNorm() +
               (s1 + s2).trace() - 2.0 * cross.trace();
  return std::max(0.0, gap);
}

Mat embed_pairs(const ModelParams& reference,
                const std::vector<std::pair<ImageSample, TextSample>>& pairs) {
  if (pairs.empty()) throw std::invalid_argument("embed_pairs: no pairs");
  int n = static_cast<int>(pairs.size());
  Mat images(n, reference.dims.image_dim);
  std::vector<TextSample> caps;
  for (int i = 0; i < n; ++i) {
    images.row(i) = pairs[i].first;
    caps.push_back(pairs[i].second);
  }
  Mat ei = encode_image(reference, images);
  Mat et = encode_text(reference, caps);
  Mat f(n, ei.cols() + et.cols());
  f << ei, et;
  return f;
}

double frechet_gap(const ModelParams& reference,
                   const std::vector<std::pair<ImageSample, TextSample>>& a,
                   const std::vector<std::pair<ImageSample, TextSample>>& b) {
  return frechet_gap_features(embed_pairs(reference, a),
                              embed_pairs(reference, b));
}

std::vector<std::pair<ImageSample, TextSample>> original_pairs(
    const PairedDataset& d) {
  std::vector<std::pair<ImageSample, TextSample>> out;
  for (const SampleGroup& g : d.groups) {
    const TaggedImage* img = nullptr;
    const TaggedText* txt = nullptr;
    for (const TaggedImage& ti : g.images)
      if (ti.is_original()) {
        img = &ti;
        break;
      }
    for (const TaggedText& tt : g.captions)
      if (tt.is_original()) {
        txt = &tt;
        break;
      }
    if (img && txt) out.push_back({img->image, txt->text});
  }
  return out;
}

std::vector<std::pair<ImageSample, TextSample>> augmented_pairs(
    const PairedDataset& d) {
  std::vector<std::pair<ImageSample, TextSample>> out;
  for (const SampleGroup& g : d.groups) {
    for (const TaggedText& tt : g.captions)
      if (!tt.is_original()) out.push_back({g.first_image(), tt.text});
    for (const TaggedImage& ti : g.images)
      if (!ti.is_original()) out.push_back({ti.image, g.first_caption()});
  }
  return out;
}

void save_reports_jsonl(const std::vector<MetricsReport>& reports,
                        const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("metrics: cannot open " + path);
  for (const MetricsReport& r : reports) {
    json j{{"model", r.model_tag},
           {"config_hash", r.config_hash},
           {"seed", r.seed},
           {"values", json::object()}};
    for (const auto& [k, v] : r.values) j["values"][k] = v;
    os << j.dump() << "\n";
  }
}

std::vector<MetricsReport> load_reports_jsonl(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("metrics: cannot open " + path);
  std::vector<MetricsReport> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      json j = json::parse(line);
      MetricsReport r;
      r.model_tag = j.at("model");
      r.config_hash = j.at("config_hash");
      r.seed = j.at("seed");
      for (auto& [k, v] : j.at("values").items()) r.values[k] = v;
      out.push_back(std::move(r));
    } catch (const std::exception& e) {
      throw std::runtime_error("metrics parse error at " + path + ":" +
                               std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void save_reports_csv(const std::vector<MetricsReport>& reports,
                      const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("metrics: cannot open " + path);
  // Union of keys, sorted, for a stable column order.
  std::set<std::string> keys;
  for (const MetricsReport& r : reports)
    for (const auto& [k, v] : r.values) keys.insert(k);
  os << "model,seed,config_hash";
  for (const std::string& k : keys) os << "," << k;
  os << "\n";
  os.precision(17);
  for (const MetricsReport& r : reports) {
    os << r.model_tag << "," << r.seed << "," << r.config_hash;
    for (const std::string& k : keys) {
      os << ",";
      auto it = r.values.find(k);
      if (it != r.values.end()) os << it->second;
    }
    os << "\n";
  }
}

}  // namespace mmadv
