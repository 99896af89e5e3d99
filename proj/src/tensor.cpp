#include "mmadv/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <utility>

namespace mmadv {

namespace {
std::string shape_str(const Mat& m) {
  std::ostringstream os;
  os << "[" << m.rows() << "x" << m.cols() << "]";
  return os.str();
}
}  // namespace

int Tape::push(Mat value, bool requires_grad,
               std::function<void(Tape&, int)> bp) {
  Node n;
  n.grad = Mat::Zero(value.rows(), value.cols());
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.backprop = std::move(bp);
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

void Tape::check(int id) const {
  if (id < 0 || id >= size()) throw std::logic_error("tape: bad node id");
}

int Tape::input(Mat value, bool requires_grad) {
  return push(std::move(value), requires_grad, nullptr);
}

void Tape::backward(int loss) {
  check(loss);
  const Mat& lv = nodes_[loss].value;
  if (lv.rows() != 1 || lv.cols() != 1)
    throw std::invalid_argument("backward: loss must be a scalar, got " +
                                shape_str(lv));
  nodes_[loss].grad(0, 0) += 1.0;
  for (int id = loss; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.requires_grad || !n.backprop) continue;
    n.backprop(*this, id);
  }
}

void Tape::zero_grad() {
  for (Node& n : nodes_) n.grad.setZero();
}

int Tape::matmul(int a, int b) {
  check(a);
  check(b);
  const Mat& av = nodes_[a].value;
  const Mat& bv = nodes_[b].value;
  if (av.cols() != bv.rows())
    throw std::invalid_argument("matmul: inner dimensions disagree: " +
                                shape_str(av) + " x " + shape_str(bv));
  bool rg = nodes_[a].requires_grad || nodes_[b].requires_grad;
  return push(av * bv, rg, [a, b](Tape& t, int out) {
    const Mat& g = t.nodes_[out].grad;
    if (t.nodes_[a].requires_grad)
      t.nodes_[a].grad += g * t.nodes_[b].value.transpose();
    if (t.nodes_[b].requires_grad)
      t.nodes_[b].grad += t.nodes_[a].value.transpose() * g;
  });
}

int Tape::matmul_nt(int a, int b) {
  check(a);
  check(b);
  const Mat& av = nodes_[a].value;
  const Mat& bv = nodes_[b].value;
  if (av.cols() != bv.cols())
    throw std::invalid_argument("matmul_nt: inner dimensions disagree: " +
                                shape_str(av) + " x " + shape_str(bv) + "^T");
  bool rg = nodes_[a].requires_grad || nodes_[b].requires_grad;
  return push(av * bv.transpose(), rg, [a, b](Tape& t, int out) {
    const Mat& g = t.nodes_[out].grad;
    if (t.nodes_[a].requires_grad) t.nodes_[a].grad += g * t.nodes_[b].value;
    if (t.nodes_[b].requires_grad)
      t.nodes_[b].grad += g.transpose() * t.nodes_[a].value;
  });
}

int Tape::add(int a, int b) {
  check(a);
  check(b);
  const Mat& av = nodes_[a].value;
  const Mat& bv = nodes_[b].value;
  if (av.rows() != bv.rows() || av.cols() != bv.cols())
    throw std::invalid_argument("add: shape mismatch: " + shape_str(av) +
                                " vs " + shape_str(bv));
  bool rg = nodes_[a].requires_grad || nodes_[b].requires_grad;
  return push(av + bv, rg, [a, b](Tape& t, int out) {
    const Mat& g = t.nodes_[out].grad;
    if (t.nodes_[a].requires_grad) t.nodes_[a].grad += g;
    if (t.nodes_[b].requires_grad) t.nodes_[b].grad += g;
  });
}

int Tape::sub(int a, int b) {
  check(a);
  check(b);
  const Mat& av = nodes_[a].value;
  const Mat& bv = nodes_[b].value;
  if (av.rows() != bv.rows() || av.cols() != bv.cols())
    throw std::invalid_argument("sub: shape mismatch: " + shape_str(av) +
                                " vs " + shape_str(bv));
  bool rg = nodes_[a].requires_grad || nodes_[b].requires_grad;
  return push(av - bv, rg, [a, b](Tape& t, int out) {
    const Mat& g = t.nodes_[out].grad;
    if (t.nodes_[a].requires_grad) t.nodes_[a].grad += g;
    if (t.nodes_[b].requires_grad) t.nodes_[b].grad -= g;
  });
}

int Tape::scale(int a, double s) {
  check(a);
  return push(nodes_[a].value * s, nodes_[a].requires_grad,
              [a, s](Tape& t, int out) {
                if (t.nodes_[a].requires_grad)
                  t.nodes_[a].grad += t.nodes_[out].grad * s;
              });
}

int Tape::cmul(int a, int b) {
  check(a);
  check(b);
  const Mat& av = nodes_[a].value;
  const Mat& bv = nodes_[b].value;
  if (av.rows() != bv.rows() || av.cols() != bv.cols())
    throw std::invalid_argument("cmul: shape mismatch: " + shape_str(av) +
                                " vs " + shape_str(bv));
  bool rg = nodes_[a].requires_grad || nodes_[b].requires_grad;
  return push(av.cwiseProduct(bv), rg, [a, b](Tape& t, int out) {
    const Mat& g = t.nodes_[out].grad;
    if (t.nodes_[a].requires_grad)
      t.nodes_[a].grad += g.cwiseProduct(t.nodes_[b].value);
    if (t.nodes_[b].requires_grad)
      t.nodes_[b].grad += g.cwiseProduct(t.nodes_[a].value);
  });
}

int Tape::tanh_op(int a) {
  check(a);
  Mat y = nodes_[a].value.array().tanh();
  return push(std::move(y), nodes_[a].requires_grad, [a](Tape& t, int out) {
    if (!t.nodes_[a].requires_grad) return;
    const Mat& y = t.nodes_[out].value;
    t.nodes_[a].grad +=
        t.nodes_[out].grad.cwiseProduct((1.0 - y.array().square()).matrix());
  });
}

int Tape::add_rowvec(int a, int b) {
  check(a);
  check(b);
  const Mat& av = nodes_[a].value;
  const Mat& bv = nodes_[b].value;
  if (bv.rows() != 1 || bv.cols() != av.cols())
    throw std::invalid_argument("add_rowvec: expected [1x" +
                                std::to_string(av.cols()) + "], got " +
                                shape_str(bv));
  bool rg = nodes_[a].requires_grad || nodes_[b].requires_grad;
  Mat y = av;
  y.rowwise() += bv.row(0);
  return push(std::move(y), rg, [a, b](Tape& t, int out) {
    const Mat& g = t.nodes_[out].grad;
    if (t.nodes_[a].requires_grad) t.nodes_[a].grad += g;
    if (t.nodes_[b].requires_grad) t.nodes_[b].grad += g.colwise().sum();
  });
}

int Tape::gather_rows(int table, std::vector<int> rows) {
  check(table);
  const Mat& tv = nodes_[table].value;
  Mat y(static_cast<int>(rows.size()), tv.cols());
  for (size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= tv.rows())
      throw std::out_of_range("gather_rows: row " + std::to_string(rows[i]) +
                              " outside table of " + std::to_string(tv.rows()));
    y.row(static_cast<int>(i)) = tv.row(rows[i]);
  }
  return push(std::move(y), nodes_[table].requires_grad,
              [table, rows = std::move(rows)](Tape& t, int out) {
                if (!t.nodes_[table].requires_grad) return;
                const Mat& g = t.nodes_[out].grad;
                for (size_t i = 0; i < rows.size(); ++i)
                  t.nodes_[table].grad.row(rows[i]) +=
                      g.row(static_cast<int>(i));
              });
}

int Tape::l2_normalize_rows(int a) {
  check(a);
  const Mat& av = nodes_[a].value;
  constexpr double kMinNorm = 1e-12;
  Eigen::VectorXd norms = av.rowwise().norm();
  for (int i = 0; i < norms.size(); ++i)
    if (norms(i) <= kMinNorm)
      throw std::domain_error("l2_normalize: row " + std::to_string(i) +
                              " has near-zero norm");
  Mat y = norms.cwiseInverse().asDiagonal() * av;
  return push(std::move(y), nodes_[a].requires_grad,
              [a, norms = std::move(norms)](Tape& t, int out) {
                if (!t.nodes_[a].requires_grad) return;
                const Mat& u = t.nodes_[out].value;
                const Mat& g = t.nodes_[out].grad;
                // Per row: (g - (g.u) u) / ||v||
                for (int i = 0; i < u.rows(); ++i) {
                  double gu = g.row(i).dot(u.row(i));
                  t.nodes_[a].grad.row(i) +=
                      (g.row(i) - gu * u.row(i)) / norms(i);
                }
              });
}

int Tape::logsumexp_rows(int a) {
  check(a);
  const Mat& av = nodes_[a].value;
  Mat y(av.rows(), 1);
  for (int i = 0; i < av.rows(); ++i) {
    double m = av.row(i).maxCoeff();
    y(i, 0) = m + std::log((av.row(i).array() - m).exp().sum());
  }
  return push(std::move(y), nodes_[a].requires_grad, [a](Tape& t, int out) {
    if (!t.nodes_[a].requires_grad) return;
    const Mat& av = t.nodes_[a].value;
    const Mat& y = t.nodes_[out].value;
    const Mat& g = t.nodes_[out].grad;
    for (int i = 0; i < av.rows(); ++i)
      t.nodes_[a].grad.row(i) +=
          g(i, 0) * (av.row(i).array() - y(i, 0)).exp().matrix();
  });
}

int Tape::logsumexp_cols(int a) {
  check(a);
  const Mat& av = nodes_[a].value;
  Mat y(1, av.cols());
  for (int j = 0; j < av.cols(); ++j) {
    double m = av.col(j).maxCoeff();
    y(0, j) = m + std::log((av.col(j).array() - m).exp().sum());
  }
  return push(std::move(y), nodes_[a].requires_grad, [a](Tape& t, int out) {
    if (!t.nodes_[a].requires_grad) return;
    const Mat& av = t.nodes_[a].value;
    const Mat& y = t.nodes_[out].value;
    const Mat& g = t.nodes_[out].grad;
    for (int j = 0; j < av.cols(); ++j)
      t.nodes_[a].grad.col(j) +=
          g(0, j) * (av.col(j).array() - y(0, j)).exp().matrix();
  });
}

int Tape::sum_all(int a) {
  check(a);
  Mat y(1, 1);
  y(0, 0) = nodes_[a].value.sum();
  return push(std::move(y), nodes_[a].requires_grad, [a](Tape& t, int out) {
    if (!t.nodes_[a].requires_grad) return;
    t.nodes_[a].grad.array() += t.nodes_[out].grad(0, 0);
  });
}

int Tape::mean_rows(int a) {
  check(a);
  const Mat& av = nodes_[a].value;
  Mat y = av.colwise().mean();
  return push(std::move(y), nodes_[a].requires_grad, [a](Tape& t, int out) {
    if (!t.nodes_[a].requires_grad) return;
    const Mat& g = t.nodes_[out].grad;
    double inv = 1.0 / static_cast<double>(t.nodes_[a].value.rows());
    for (int i = 0; i < t.nodes_[a].value.rows(); ++i)
      t.nodes_[a].grad.row(i) += inv * g.row(0);
  });
}

int Tape::take_diag(int a) {
  check(a);
  const Mat& av = nodes_[a].value;
  if (av.rows() != av.cols())
    throw std::invalid_argument("take_diag: matrix not square: " +
                                shape_str(av));
  Mat y = av.diagonal();
  return push(std::move(y), nodes_[a].requires_grad, [a](Tape& t, int out) {
    if (!t.nodes_[a].requires_grad) return;
    t.nodes_[a].grad.diagonal() += t.nodes_[out].grad.col(0);
  });
}

int Tape::mul_scalar(int a, int s) {
  check(a);
  check(s);
  const Mat& sv = nodes_[s].value;
  if (sv.rows() != 1 || sv.cols() != 1)
    throw std::invalid_argument("mul_scalar: scalar operand is " +
                                shape_str(sv));
  bool rg = nodes_[a].requires_grad || nodes_[s].requires_grad;
  return push(nodes_[a].value * sv(0, 0), rg, [a, s](Tape& t, int out) {
    const Mat& g = t.nodes_[out].grad;
    if (t.nodes_[a].requires_grad)
      t.nodes_[a].grad += g * t.nodes_[s].value(0, 0);
    if (t.nodes_[s].requires_grad)
      t.nodes_[s].grad(0, 0) += g.cwiseProduct(t.nodes_[a].value).sum();
  });
}

int Tape::exp_op(int a) {
  check(a);
  Mat y = nodes_[a].value.array().exp();
  return push(std::move(y), nodes_[a].requires_grad, [a](Tape& t, int out) {
    if (!t.nodes_[a].requires_grad) return;
    t.nodes_[a].grad +=
        t.nodes_[out].grad.cwiseProduct(t.nodes_[out].value);
  });
}

int Tape::clamp_scalar(int a, double lo, double hi) {
  check(a);
  const Mat& av = nodes_[a].value;
  if (av.rows() != 1 || av.cols() != 1)
    throw std::invalid_argument("clamp_scalar: operand is " + shape_str(av));
  double v = av(0, 0);
  Mat y(1, 1);
  y(0, 0) = std::min(hi, std::max(lo, v));
  bool inside = v >= lo && v <= hi;
  return push(std::move(y), nodes_[a].requires_grad,
              [a, inside](Tape& t, int out) {
                if (!t.nodes_[a].requires_grad || !inside) return;
                t.nodes_[a].grad += t.nodes_[out].grad;
              });
}

double finite_diff_check(const std::function<double(const Mat&)>& f,
                         const Mat& point, const Mat& analytic, double h) {
  Mat fd(point.rows(), point.cols());
  Mat x = point;
  for (int i = 0; i < x.rows(); ++i) {
    for (int j = 0; j < x.cols(); ++j) {
      double orig = x(i, j);
      x(i, j) = orig + h;
      double fp = f(x);
      x(i, j) = orig - h;
      double fm = f(x);
      x(i, j) = orig;
      fd(i, j) = (fp - fm) / (2.0 * h);
    }
  }
  double denom = std::max({analytic.norm(), fd.norm(), 1e-8});
  return (fd - analytic).norm() / denom;
}

uint64_t Rng::next_u64() {
  // splitmix64
  uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  double u1 = 0.0;
  do {
    u1 = uniform();
  } while (u1 <= 1e-300);
  double u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double a = 2.0 * M_PI * u2;
  spare_ = r * std::sin(a);
  have_spare_ = true;
  return r * std::cos(a);
}

int Rng::uniform_int(int n) {
  if (n <= 0) throw std::invalid_argument("uniform_int: n must be positive");
  return static_cast<int>(next_u64() % static_cast<uint64_t>(n));
}

uint64_t fnv1a(const std::string& bytes, uint64_t seed) {
  uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

uint64_t derive_seed(uint64_t base_seed, const std::string& stage) {
  std::string key = std::to_string(base_seed) + "/" + stage;
  return fnv1a(key);
}

}  // namespace mmadv
