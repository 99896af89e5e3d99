#pragma once

#include "mmadv/tensor.hpp"

#include <string>
#include <vector>

namespace mmadv {

// One image is a flat vector of image_dim values in [0,1]; one text is a
// nonempty sequence of token ids below vocab.
using ImageSample = Eigen::VectorXd;
using TextSample = std::vector<int>;

struct ModelDims {
  int image_dim = 32;
  int hidden = 64;
  int embed_dim = 16;
  int vocab = 64;
  int tok_dim = 32;
  int max_len = 12;

  bool operator==(const ModelDims&) const = default;
};

// All trainable tensors of the dual encoder. Image side is a two-layer
// tanh MLP, text side a token-embedding table with mean pooling and an
// affine head; both sides end in row-wise L2 normalization so cosine
// similarity is a plain dot product. Temperature is stored as
// log-temperature and clamped into [1e-3, 1] when used.
struct ModelParams {
  ModelDims dims;
  Mat w1, b1, w2, b2;    // image encoder
  Mat tok_emb, wt, bt;   // text encoder
  Mat log_tau;           // [1,1]

  static ModelParams init(const ModelDims& dims, uint64_t seed);

  std::vector<Mat*> tensors();
  std::vector<const Mat*> tensors() const;
  static std::vector<std::string> tensor_names();
  // Weight decay skips the temperature scalar.
  static std::vector<bool> decay_mask();

  double tau() const;
};

constexpr double kTauMin = 1e-3;
constexpr double kTauMax = 1.0;

// Node ids of the parameters once placed on a tape.
struct ModelGraph {
  int w1, b1, w2, b2, tok_emb, wt, bt, log_tau;
};

ModelGraph put_params(Tape& tape, const ModelParams& p,
                      bool requires_grad = true);

// Image batch as rows of a [n, image_dim] matrix node -> [n, embed_dim]
// unit-row embeddings. Differentiable w.r.t. both params and the input.
int encode_image_node(Tape& tape, const ModelGraph& g, const ModelDims& dims,
                      int images);

// Text batch -> [n, embed_dim] unit-row embeddings. Token ids are discrete;
// gradients flow to the embedding table only.
int encode_text_node(Tape& tape, const ModelGraph& g, const ModelDims& dims,
                     const std::vector<TextSample>& texts);

// Symmetric InfoNCE over n pairs: logits = E_I E_T^T / tau, loss =
// (mean row cross-entropy + mean column cross-entropy) / 2.
int info_nce_node(Tape& tape, const ModelGraph& g, int img_emb, int txt_emb);

void validate_images(const Mat& images, const ModelDims& dims);
void validate_texts(const std::vector<TextSample>& texts,
                    const ModelDims& dims);

// Tape-free forward passes for evaluation loops. Tested for equality
// against the tape path.
Mat encode_image(const ModelParams& p, const Mat& images);
Mat encode_text(const ModelParams& p, const std::vector<TextSample>& texts);
double similarity(const ModelParams& p, const ImageSample& image,
                  const TextSample& text);
double info_nce_loss(const ModelParams& p, const Mat& images,
                     const std::vector<TextSample>& texts);

// Incremental single-caption encoder for token-substitution scans: the
// pooled mean is maintained so that swapping one token costs O(tok_dim).
class TextEncodeCache {
 public:
  TextEncodeCache(const ModelParams& p, const TextSample& text);

  // Embedding of the cached caption with position `pos` replaced by
  // `token` (original caption if token matches). Does not mutate state.
  Eigen::VectorXd embed_with(int pos, int token) const;
  Eigen::VectorXd embed() const { return embed_with(0, text_[0]); }
  void commit(int pos, int token);
  const TextSample& text() const { return text_; }

 private:
  const ModelParams& params_;
  TextSample text_;
  Eigen::VectorXd pooled_;  // mean of token embedding rows
};

// Versioned checkpoint container: named tensors plus the owning run's
// config hash. Byte layout documented in the README.
void save_checkpoint(const ModelParams& p, const std::string& path,
                     uint64_t config_hash);
ModelParams load_checkpoint(const std::string& path,
                            uint64_t* config_hash = nullptr);

}  // namespace mmadv
