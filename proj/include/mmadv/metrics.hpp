#pragma once

#include "mmadv/attacks.hpp"
#include "mmadv/data.hpp"

#include <map>
#include <string>
#include <vector>

namespace mmadv {

enum class Direction { kImageToText, kTextToImage };

enum class EvalAttack { kPgdOnly, kTextOnly, kCoAttack, kSgaAnalog };
std::string to_string(EvalAttack a);
EvalAttack eval_attack_from_string(const std::string& s);

// One row of the evaluation output: clean and per-attack recalls plus the
// augmentation-quality measures, keyed for CSV emission.
struct MetricsReport {
  std::map<std::string, double> values;  // e.g. "clean_tr1", "robust_sga-analog_tr1"
  uint64_t config_hash = 0;
  uint64_t seed = 0;
  std::string model_tag;

  double at(const std::string& key) const;
};

// Retrieval recall with one gallery element per group (the first
// original); a query scores a hit if its own group's element appears in
// the top k. Ties break by the stable candidate index.
double recall_at_k(const ModelParams& params, const PairedDataset& test, int k,
                   Direction dir);

// Attacks every test pair at evaluation strength, then ranks the
// perturbed queries against the clean galleries of the other modality.
// Returns "tr1/tr5/tr10/ir1/ir5/ir10" keyed values.
std::map<std::string, double> robust_eval(const ModelParams& params,
                                          const PairedDataset& test,
                                          EvalAttack attack,
                                          const PerturbationBudget& budget,
                                          uint64_t seed = 0);

// Mean cosine similarity of (image, text) pairs under a frozen reference
// model; the alignment axis.
double alignment_score(const ModelParams& reference,
                       const std::vector<std::pair<ImageSample, TextSample>>& pairs);

enum class KlEstimator { kPerPairCategorical, kGaussianFit };

// Diversity between matched original/augment embedding sets. Per-pair:
// KL between softmax-normalized reference embeddings, averaged.
// Gaussian: KL between diagonal-Gaussian fits of the two sets.
double diversity_kl(const Mat& original_emb, const Mat& augment_emb,
                    KlEstimator estimator);

// Symmetric PSD square root via eigendecomposition; eigenvalues below
// -1e-10 reject, tiny negatives clamp to zero.
Mat psd_sqrt(const Mat& a);

// Fréchet distance between Gaussian fits of concatenated (image ||
// text) embeddings of the two datasets' pairs under the reference model.
double frechet_gap(const ModelParams& reference,
                   const std::vector<std::pair<ImageSample, TextSample>>& a,
                   const std::vector<std::pair<ImageSample, TextSample>>& b);
// The same distance on already-extracted feature rows.
double frechet_gap_features(const Mat& fa, const Mat& fb);

// Pair extraction helpers for the metric inputs: the annotated originals,
// and each augmented element paired with its group's first original
// counterpart.
std::vector<std::pair<ImageSample, TextSample>> original_pairs(
    const PairedDataset& d);
std::vector<std::pair<ImageSample, TextSample>> augmented_pairs(
    const PairedDataset& d);

Mat embed_pairs(const ModelParams& reference,
                const std::vector<std::pair<ImageSample, TextSample>>& pairs);

void save_reports_jsonl(const std::vector<MetricsReport>& reports,
                        const std::string& path);
std::vector<MetricsReport> load_reports_jsonl(const std::string& path);
void save_reports_csv(const std::vector<MetricsReport>& reports,
                      const std::string& path);

}  // namespace mmadv
