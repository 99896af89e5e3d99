#include "mmadv/model.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace mmadv {

namespace {
Mat random_mat(int rows, int cols, double scale, Rng& rng) {
  Mat m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = scale * rng.normal();
  return m;
}
}  // namespace

ModelParams ModelParams::init(const ModelDims& dims, uint64_t seed) {
  Rng rng(derive_seed(seed, "model-init"));
  ModelParams p;
  p.dims = dims;
  p.w1 = random_mat(dims.image_dim, dims.hidden,
                    1.0 / std::sqrt(dims.image_dim), rng);
  p.b1 = Mat::Zero(1, dims.hidden);
  p.w2 = random_mat(dims.hidden, dims.embed_dim, 1.0 / std::sqrt(dims.hidden),
                    rng);
  p.b2 = Mat::Zero(1, dims.embed_dim);
  p.tok_emb =
      random_mat(dims.vocab, dims.tok_dim, 1.0, rng);
  p.wt = random_mat(dims.tok_dim, dims.embed_dim,
                    1.0 / std::sqrt(dims.tok_dim), rng);
  p.bt = Mat::Zero(1, dims.embed_dim);
  p.log_tau = Mat::Constant(1, 1, std::log(0.07));
  return p;
}

std::vector<Mat*> ModelParams::tensors() {
  return {&w1, &b1, &w2, &b2, &tok_emb, &wt, &bt, &log_tau};
}

std::vector<const Mat*> ModelParams::tensors() const {
  return {&w1, &b1, &w2, &b2, &tok_emb, &wt, &bt, &log_tau};
}

std::vector<std::string> ModelParams::tensor_names() {
  return {"img.w1", "img.b1", "img.w2", "img.b2",
          "txt.emb", "txt.w", "txt.b", "log_tau"};
}

std::vector<bool> ModelParams::decay_mask() {
  return {true, true, true, true, true, true, true, false};
}

double ModelParams::tau() const {
  return std::min(kTauMax, std::max(kTauMin, std::exp(log_tau(0, 0))));
}

ModelGraph put_params(Tape& tape, const ModelParams& p, bool requires_grad) {
  ModelGraph g;
  g.w1 = tape.input(p.w1, requires_grad);
  g.b1 = tape.input(p.b1, requires_grad);
  g.w2 = tape.input(p.w2, requires_grad);
  g.b2 = tape.input(p.b2, requires_grad);
  g.tok_emb = tape.input(p.tok_emb, requires_grad);
  g.wt = tape.input(p.wt, requires_grad);
  g.bt = tape.input(p.bt, requires_grad);
  g.log_tau = tape.input(p.log_tau, requires_grad);
  return g;
}

void validate_images(const Mat& images, const ModelDims& dims) {
  if (images.cols() != dims.image_dim)
    throw std::invalid_argument("image batch has " +
                                std::to_string(images.cols()) +
                                " columns, expected " +
                                std::to_string(dims.image_dim));
  if ((images.array() < -1e-12).any() || (images.array() > 1.0 + 1e-12).any())
    throw std::invalid_argument("image values outside [0,1]");
}

void validate_texts(const std::vector<TextSample>& texts,
                    const ModelDims& dims) {
  for (const TextSample& t : texts) {
    if (t.empty()) throw std::invalid_argument("empty caption");
    for (int id : t)
      if (id < 0 || id >= dims.vocab)
        throw std::invalid_argument("token id " + std::to_string(id) +
                                    " outside vocabulary of " +
                                    std::to_string(dims.vocab));
  }
}

int encode_image_node(Tape& tape, const ModelGraph& g, const ModelDims& dims,
                      int images) {
  validate_images(tape.value(images), dims);
  int h = tape.tanh_op(tape.add_rowvec(tape.matmul(images, g.w1), g.b1));
  int e = tape.add_rowvec(tape.matmul(h, g.w2), g.b2);
  return tape.l2_normalize_rows(e);
}

int encode_text_node(Tape& tape, const ModelGraph& g, const ModelDims& dims,
                     const std::vector<TextSample>& texts) {
  validate_texts(texts, dims);
  std::vector<int> flat;
  for (const TextSample& t : texts) flat.insert(flat.end(), t.begin(), t.end());
  int rows = tape.gather_rows(g.tok_emb, flat);
  // Constant pooling matrix: row i averages caption i's token rows.
  Mat pool = Mat::Zero(static_cast<int>(texts.size()),
                       static_cast<int>(flat.size()));
  int off = 0;
  for (size_t i = 0; i < texts.size(); ++i) {
    double w = 1.0 / static_cast<double>(texts[i].size());
    for (size_t j = 0; j < texts[i].size(); ++j)
      pool(static_cast<int>(i), off++) = w;
  }
  int pooled = tape.matmul(tape.input(std::move(pool)), rows);
  int e = tape.add_rowvec(tape.matmul(pooled, g.wt), g.bt);
  return tape.l2_normalize_rows(e);
}

int info_nce_node(Tape& tape, const ModelGraph& g, int img_emb, int txt_emb) {
  int n = static_cast<int>(tape.value(img_emb).rows());
  if (n < 1 || tape.value(txt_emb).rows() != n)
    throw std::invalid_argument("info_nce: batch is empty or mismatched");
  int log_tau = tape.clamp_scalar(g.log_tau, std::log(kTauMin),
                                  std::log(kTauMax));
  int inv_tau = tape.exp_op(tape.scale(log_tau, -1.0));
  int logits = tape.mul_scalar(tape.matmul_nt(img_emb, txt_emb), inv_tau);
  int diag_sum = tape.sum_all(tape.take_diag(logits));
  int loss_rows = tape.sub(tape.sum_all(tape.logsumexp_rows(logits)), diag_sum);
  int loss_cols = tape.sub(tape.sum_all(tape.logsumexp_cols(logits)), diag_sum);
  int total = tape.add(loss_rows, loss_cols);
  return tape.scale(total, 0.5 / static_cast<double>(n));
}

Mat encode_image(const ModelParams& p, const Mat& images) {
  validate_images(images, p.dims);
  Mat h = ((images * p.w1).rowwise() + p.b1.row(0)).array().tanh();
  Mat e = (h * p.w2).rowwise() + p.b2.row(0);
  for (int i = 0; i < e.rows(); ++i) {
    double n = e.row(i).norm();
    if (n <= 1e-12)
      throw std::domain_error("encode_image: near-zero embedding norm");
    e.row(i) /= n;
  }
  return e;
}

Mat encode_text(const ModelParams& p, const std::vector<TextSample>& texts) {
  validate_texts(texts, p.dims);
  Mat e(static_cast<int>(texts.size()), p.dims.embed_dim);
  for (size_t i = 0; i < texts.size(); ++i) {
    Eigen::VectorXd pooled = Eigen::VectorXd::Zero(p.dims.tok_dim);
    for (int id : texts[i]) pooled += p.tok_emb.row(id);
    pooled /= static_cast<double>(texts[i].size());
    Eigen::VectorXd v = p.wt.transpose() * pooled + p.bt.row(0).transpose();
    double n = v.norm();
    if (n <= 1e-12)
      throw std::domain_error("encode_text: near-zero embedding norm");
    e.row(static_cast<int>(i)) = v / n;
  }
  return e;
}

double similarity(const ModelParams& p, const ImageSample& image,
                  const TextSample& text) {
  Mat img(1, image.size());
  img.row(0) = image;
  Mat ei = encode_image(p, img);
  Mat et = encode_text(p, {text});
  return ei.row(0).dot(et.row(0));
}

double info_nce_loss(const ModelParams& p, const Mat& images,
                     const std::vector<TextSample>& texts) {
  Tape tape;
  ModelGraph g = put_params(tape, p, false);
  int img = tape.input(images);
  int ei = encode_image_node(tape, g, p.dims, img);
  int et = encode_text_node(tape, g, p.dims, texts);
  return tape.value(info_nce_node(tape, g, ei, et))(0, 0);
}

TextEncodeCache::TextEncodeCache(const ModelParams& p, const TextSample& text)
    : params_(p), text_(text) {
  validate_texts({text}, p.dims);
  pooled_ = Eigen::VectorXd::Zero(p.dims.tok_dim);
  for (int id : text_) pooled_ += p.tok_emb.row(id);
  pooled_ /= static_cast<double>(text_.size());
}

Eigen::VectorXd TextEncodeCache::embed_with(int pos, int token) const {
  Eigen::VectorXd pooled = pooled_;
  if (token != text_[pos]) {
    pooled += (params_.tok_emb.row(token) - params_.tok_emb.row(text_[pos]))
                  .transpose() /
              static_cast<double>(text_.size());
  }
  Eigen::VectorXd v =
      params_.wt.transpose() * pooled + params_.bt.row(0).transpose();
  double n = v.norm();
  if (n <= 1e-12)
    throw std::domain_error("text embed: near-zero embedding norm");
  return v / n;
}

void TextEncodeCache::commit(int pos, int token) {
  if (token == text_[pos]) return;
  pooled_ += (params_.tok_emb.row(token) - params_.tok_emb.row(text_[pos]))
                 .transpose() /
             static_cast<double>(text_.size());
  text_[pos] = token;
}

namespace {
constexpr char kCkptMagic[8] = {'M', 'M', 'C', 'K', 'P', 'T', '0', '1'};

void write_u64(std::ofstream& os, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<char*>(b), 8);
}

uint64_t read_u64(std::ifstream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}
}  // namespace

void save_checkpoint(const ModelParams& p, const std::string& path,
                     uint64_t config_hash) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path);
  os.write(kCkptMagic, 8);
  write_u64(os, config_hash);
  int dims[6] = {p.dims.image_dim, p.dims.hidden, p.dims.embed_dim,
                 p.dims.vocab, p.dims.tok_dim, p.dims.max_len};
  for (int d : dims) write_u64(os, static_cast<uint64_t>(d));
  auto names = ModelParams::tensor_names();
  auto tensors = p.tensors();
  write_u64(os, names.size());
  for (size_t i = 0; i < names.size(); ++i) {
    write_u64(os, names[i].size());
    os.write(names[i].data(), static_cast<std::streamsize>(names[i].size()));
    const Mat& m = *tensors[i];
    write_u64(os, static_cast<uint64_t>(m.rows()));
    write_u64(os, static_cast<uint64_t>(m.cols()));
    for (int r = 0; r < m.rows(); ++r)
      for (int c = 0; c < m.cols(); ++c) {
        double v = m(r, c);
        uint64_t bits;
        std::memcpy(&bits, &v, 8);
        write_u64(os, bits);
      }
  }
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

ModelParams load_checkpoint(const std::string& path, uint64_t* config_hash) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kCkptMagic, 8) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  uint64_t hash = read_u64(is);
  if (config_hash) *config_hash = hash;
  ModelParams p;
  p.dims.image_dim = static_cast<int>(read_u64(is));
  p.dims.hidden = static_cast<int>(read_u64(is));
  p.dims.embed_dim = static_cast<int>(read_u64(is));
  p.dims.vocab = static_cast<int>(read_u64(is));
  p.dims.tok_dim = static_cast<int>(read_u64(is));
  p.dims.max_len = static_cast<int>(read_u64(is));
  uint64_t count = read_u64(is);
  auto names = ModelParams::tensor_names();
  if (count != names.size())
    throw std::runtime_error("checkpoint: unexpected tensor count");
  auto tensors = p.tensors();
  for (size_t i = 0; i < count; ++i) {
    uint64_t len = read_u64(is);
    std::string name(len, '\0');
    is.read(name.data(), static_cast<std::streamsize>(len));
    if (!is || name != names[i])
      throw std::runtime_error("checkpoint: unexpected tensor name " + name);
    int rows = static_cast<int>(read_u64(is));
    int cols = static_cast<int>(read_u64(is));
    Mat m(rows, cols);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) {
        uint64_t bits = read_u64(is);
        double v;
        std::memcpy(&v, &bits, 8);
        m(r, c) = v;
      }
    *tensors[i] = std::move(m);
  }
  return p;
}

}  // namespace mmadv
