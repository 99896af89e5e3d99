#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace mmadv {

using Mat = Eigen::MatrixXd;

// Reverse-mode tape over dense double matrices. Every operation appends a
// node; backward() walks the tape once in reverse creation order, so the
// topological invariant holds by construction. Nothing is mutated in place
// after it is recorded.
class Tape {
 public:
  // Registers a leaf value. Leaves with requires_grad accumulate gradients.
  int input(Mat value, bool requires_grad = false);

  const Mat& value(int id) const { return nodes_[id].value; }
  const Mat& grad(int id) const { return nodes_[id].grad; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  int size() const { return static_cast<int>(nodes_.size()); }

  // Seeds d(loss)/d(loss) = 1 and accumulates gradients into every
  // requires_grad node reachable from `loss`. Throws if loss is not 1x1.
  void backward(int loss);
  void zero_grad();

  int matmul(int a, int b);     // [n,k] x [k,m]
  int matmul_nt(int a, int b);  // a * b^T
  int add(int a, int b);
  int sub(int a, int b);
  int scale(int a, double s);
  int cmul(int a, int b);  // elementwise
  int tanh_op(int a);
  int add_rowvec(int a, int b);  // b is [1,m], broadcast over rows of a
  int gather_rows(int table, std::vector<int> rows);
  int l2_normalize_rows(int a);
  int logsumexp_rows(int a);  // [n,m] -> [n,1]
  int logsumexp_cols(int a);  // [n,m] -> [1,m]
  int sum_all(int a);         // -> [1,1]
  int mean_rows(int a);       // [n,m] -> [1,m]
  int take_diag(int a);       // square [n,n] -> [n,1]
  int mul_scalar(int a, int s);  // s is [1,1]
  int exp_op(int a);
  int clamp_scalar(int a, double lo, double hi);  // [1,1]; zero grad outside

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool requires_grad = false;
    std::function<void(Tape&, int)> backprop;  // may be empty for leaves
  };

  int push(Mat value, bool requires_grad, std::function<void(Tape&, int)> bp);
  void check(int id) const;

  std::vector<Node> nodes_;
};

// Central-difference check of d(f)/d(point) against an analytic gradient.
// `f` evaluates the scalar objective at a given point matrix; `analytic`
// is the gradient to verify. Returns the Frobenius-norm relative error
// ||fd - g|| / max(||g||, ||fd||, 1e-8).
double finite_diff_check(const std::function<double(const Mat&)>& f,
                         const Mat& point, const Mat& analytic,
                         double h = 1e-3);

// Deterministic splittable RNG helpers (own kernels so that streams are
// identical across platforms and standard-library versions).
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed ^ 0x9e3779b97f4a7c15ULL) {}

  uint64_t next_u64();
  double uniform();                    // [0,1)
  double uniform(double lo, double hi);
  double normal();                     // standard Gaussian
  int uniform_int(int n);              // [0,n)

 private:
  uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// FNV-1a over a byte string; used for config hashes and seed derivation.
uint64_t fnv1a(const std::string& bytes, uint64_t seed = 0xcbf29ce484222325ULL);

// Per-stage seed: mixing the stage name in means adding a stage never
// changes the stream any other stage sees.
uint64_t derive_seed(uint64_t base_seed, const std::string& stage);

}  // namespace mmadv
