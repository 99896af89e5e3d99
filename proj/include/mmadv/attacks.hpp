#pragma once

#include "mmadv/data.hpp"
#include "mmadv/model.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace mmadv {

enum class AttackObjective { kCrossModal, kUnimodal };

// Allowed perturbation sets for both modalities. Image: L-inf ball of
// radius epsilon with signed-gradient steps; text: at most max_edits
// token substitutions drawn from the top-k embedding neighbors.
struct PerturbationBudget {
  double epsilon = 2.0 / 255.0;
  int steps = 2;                  // 10 for evaluation
  double step_size = 1.0 / 255.0;
  int max_edits = 1;
  int candidates = 10;
  AttackObjective image_objective = AttackObjective::kCrossModal;
  AttackObjective text_objective = AttackObjective::kCrossModal;
  // Importance ranking for the text attack: neutral-filler masking by
  // default, gradient saliency as the alternative.
  bool gradient_saliency = false;

  void validate(int caption_len = 1) const;

  static PerturbationBudget training_default();
  static PerturbationBudget evaluation_default();
};

struct ImageAttackResult {
  Mat images;       // one adversarial image per row
  std::vector<double> initial_objective;
  std::vector<double> final_objective;
  int steps_taken = 0;
};

struct TextAttackResult {
  TextSample text;
  double initial_objective = 0.0;
  double final_objective = 0.0;
  int edits = 0;
};

enum class AttackOrder { kTextThenImage, kImageThenText,
                         kTextImageText, kImageTextImage };
std::string to_string(AttackOrder o);
AttackOrder attack_order_from_string(const std::string& s);

// PGD over a batch of images. Cross-modal: minimize S(I+d, T_i) against
// the paired target text (one per row). Unimodal: maximize the embedding
// distance to the frozen reference embedding of the clean image. Keeps
// the best iterate per sample under the objective.
ImageAttackResult pgd_image_attack(const ModelParams& params, const Mat& images,
                                   const std::vector<TextSample>& targets,
                                   const PerturbationBudget& budget);

// Generalized PGD against a weighted set of target text embeddings and a
// set of coordinate-resampling views (scale 1.0 = identity); used by the
// set-level evaluation attack. Objective: minimize the mean similarity
// over targets and views.
ImageAttackResult pgd_image_attack_set(const ModelParams& params,
                                       const Mat& images,
                                       const Mat& target_embeddings,
                                       const std::vector<double>& image_scales,
                                       const PerturbationBudget& budget);

// Greedy token substitution: rank positions by importance, score the k
// embedding-neighbor candidates per position, repeatedly accept the
// globally best substitution while it strictly lowers S(I_target, T').
TextAttackResult text_attack_greedy(const ModelParams& params,
                                    const TextSample& text,
                                    const ImageSample& image_target,
                                    const PerturbationBudget& budget);

// Random EDA edits (embedding-neighbor replacement, insertion, swap,
// deletion; each token touched with probability alpha); returns the draw
// with the lowest scorer value.
TextSample eda_perturb_attack(const ModelParams& params, const TextSample& text,
                              double alpha, int n_samples,
                              const std::function<double(const TextSample&)>& scorer,
                              Rng& rng, int max_len);

// A single random EDA edit pass (no selection); shared with the augmenter.
TextSample eda_edit(const ModelParams& params, const TextSample& text,
                    double alpha, Rng& rng, int max_len);
TextSample eda_edit(const ModelParams& params, const TextSample& text,
                    double alpha, Rng& rng, int max_len, int* edits_out);

enum class TextAttackKind { kGreedy, kEda };

struct ComposeResult {
  Mat image;  // [1, d]
  TextSample text;
  double initial_similarity = 0.0;
  double final_similarity = 0.0;
};

// Sequential multimodal attack; each stage targets the current
// adversarial counterpart of the other modality.
ComposeResult compose_multimodal(const ModelParams& params,
                                 const ImageSample& image,
                                 const TextSample& text,
                                 const PerturbationBudget& budget,
                                 AttackOrder order,
                                 TextAttackKind text_kind = TextAttackKind::kGreedy,
                                 double eda_alpha = 0.3, int eda_samples = 1,
                                 Rng* rng = nullptr);

// Image-then-text composition at evaluation strength.
ComposeResult eval_attack_coattack(const ModelParams& params,
                                   const ImageSample& image,
                                   const TextSample& text,
                                   const PerturbationBudget& budget);

// Set-level analog: image attack against all group captions plus
// n_text_views extra EDA views, across rescaled copies; text attack then
// targets the adversarial image.
ComposeResult eval_attack_sga(const ModelParams& params,
                              const SampleGroup& group,
                              const PerturbationBudget& budget,
                              int n_text_views = 2,
                              std::vector<double> image_scales = {0.75, 1.0,
                                                                  1.25},
                              uint64_t seed = 0);

// Linear-interpolation coordinate resampling of a flat image vector by
// `scale`, as a [d, d] matrix acting on row vectors (out = in * R^T).
Mat resample_matrix(int dim, double scale);

// Top-k nearest tokens to `token` in the embedding table (excluding the
// token itself), by Euclidean distance, ties by index.
std::vector<int> embedding_neighbors(const ModelParams& params, int token,
                                     int k);

}  // namespace mmadv
