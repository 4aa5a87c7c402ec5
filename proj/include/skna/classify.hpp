#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "skna/error.hpp"
#include "skna/random.hpp"
#include "skna/stats.hpp"

namespace skna::ml {

using Matrix = Eigen::MatrixXd;  // one sample per row
using Vector = Eigen::VectorXd;

struct ColumnStats {
  std::vector<double> mean;
  std::vector<double> std;
  std::vector<std::size_t> constant_columns;  // mapped to all-zero
};

/// Per-column z-score fitted on `train`, applied to both matrices in place.
inline ColumnStats standardize_features(Matrix& train, Matrix& test) {
  if (train.cols() != test.cols()) throw Error(ErrorKind::invalid_argument, "train and test column counts differ");
  if (train.rows() == 0) throw Error(ErrorKind::invalid_argument, "empty training matrix");
  ColumnStats s;
  const auto n = static_cast<double>(train.rows());
  for (Eigen::Index j = 0; j < train.cols(); ++j) {
    const double m = train.col(j).mean();
    const double sd = std::sqrt((train.col(j).array() - m).square().sum() / n);
    s.mean.push_back(m);
    s.std.push_back(sd);
    if (sd == 0) {
      s.constant_columns.push_back(static_cast<std::size_t>(j));
      train.col(j).setZero();
      test.col(j).setZero();
    } else {
      train.col(j) = (train.col(j).array() - m) / sd;
      test.col(j) = (test.col(j).array() - m) / sd;
    }
  }
  return s;
}

enum class ClassifierKind { random_forest, svm_rbf, logistic_regression };

inline std::string_view to_string(ClassifierKind k) {
  switch (k) {
    case ClassifierKind::random_forest: return "rf";
    case ClassifierKind::svm_rbf: return "svm";
    case ClassifierKind::logistic_regression: return "lr";
  }
  return "?";
}

inline ClassifierKind classifier_from_string(std::string_view s) {
  if (s == "rf" || s == "random_forest") return ClassifierKind::random_forest;
  if (s == "svm" || s == "svm_rbf") return ClassifierKind::svm_rbf;
  if (s == "lr" || s == "logistic_regression") return ClassifierKind::logistic_regression;
  throw Error(ErrorKind::config, "unknown classifier '" + std::string(s) + "'");
}

struct ClassifierSpec {
  ClassifierKind kind = ClassifierKind::random_forest;
  // random forest
  std::size_t n_trees = 100;
  // svm
  double C = 1.0;
  double gamma = 0.0;  // 0 selects 1 / (d * pooled feature variance)
  double smo_tol = 1e-3;
  std::size_t platt_iters = 100;
  // logistic regression
  double l2 = 1.0;
  std::size_t max_iter = 1000;
  double tol = 1e-6;
  std::uint64_t seed = 0;

  static ClassifierSpec of(ClassifierKind k, std::uint64_t seed = 0) {
    ClassifierSpec s;
    s.kind = k;
    s.seed = seed;
    return s;
  }
};

/// Binary classifier over standardized features; labels are 0/1 with 1 the
/// positive (stimulation) class.
class Classifier {
 public:
  virtual ~Classifier() = default;
  virtual void fit(const Matrix& X, const std::vector<int>& y) = 0;
  /// Positive-class probability per row, in [0, 1].
  virtual std::vector<double> predict_proba(const Matrix& X) const = 0;
};

namespace detail {

inline void check_training_set(const Matrix& X, const std::vector<int>& y) {
  if (static_cast<std::size_t>(X.rows()) != y.size()) throw Error(ErrorKind::invalid_argument, "X/y size mismatch");
  std::size_t pos = 0;
  for (int v : y) {
    if (v != 0 && v != 1) throw Error(ErrorKind::invalid_argument, "labels must be 0 or 1");
    pos += static_cast<std::size_t>(v);
  }
  if (pos == 0 || pos == y.size()) throw Error(ErrorKind::single_class, "training set holds a single class");
}

inline double sigmoid(double z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

}  // namespace detail

/// CART tree grown to purity with Gini splits over a random feature subset at
/// each node. Splits send x <= t left where t is an observed training value,
/// so predictions depend on feature order only.
class DecisionTree {
 public:
  void fit(const Matrix& X, const std::vector<int>& y, const std::vector<std::size_t>& sample, std::size_t mtry,
           Rng& rng) {
    nodes_.clear();
    std::vector<std::size_t> idx = sample;
    build(X, y, idx, 0, idx.size(), mtry, rng);
  }

  double predict(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
    std::size_t k = 0;
    while (nodes_[k].feature >= 0) k = x[nodes_[k].feature] <= nodes_[k].threshold ? nodes_[k].left : nodes_[k].right;
    return nodes_[k].value;
  }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    int feature = -1;
    double threshold = 0;
    std::size_t left = 0, right = 0;
    double value = 0;  // positive fraction at a leaf
  };

  std::size_t build(const Matrix& X, const std::vector<int>& y, std::vector<std::size_t>& idx, std::size_t lo,
                    std::size_t hi, std::size_t mtry, Rng& rng) {
    const std::size_t me = nodes_.size();
    nodes_.push_back({});
    const std::size_t n = hi - lo;
    std::size_t pos = 0;
    for (std::size_t i = lo; i < hi; ++i) pos += static_cast<std::size_t>(y[idx[i]]);
    nodes_[me].value = static_cast<double>(pos) / static_cast<double>(n);
    if (pos == 0 || pos == n) return me;

    const auto d = static_cast<std::size_t>(X.cols());
    std::vector<std::size_t> feats(d);
    std::iota(feats.begin(), feats.end(), 0);
    // partial Fisher-Yates: first mtry entries are a uniform subset
    for (std::size_t i = 0; i < mtry; ++i) std::swap(feats[i], feats[i + uniform_index(rng, d - i)]);

    auto gini = [](double p, double m) { return m > 0 ? 1.0 - (p / m) * (p / m) - ((m - p) / m) * ((m - p) / m) : 0.0; };
    double best = gini(static_cast<double>(pos), static_cast<double>(n)) * static_cast<double>(n) - 1e-12;
    int best_f = -1;
    double best_t = 0;
    std::vector<std::pair<double, int>> col(n);
    for (std::size_t fi = 0; fi < mtry; ++fi) {
      const auto f = static_cast<Eigen::Index>(feats[fi]);
      for (std::size_t i = 0; i < n; ++i) col[i] = {X(static_cast<Eigen::Index>(idx[lo + i]), f), y[idx[lo + i]]};
      std::sort(col.begin(), col.end());
      double lp = 0;
      for (std::size_t i = 0; i + 1 < n; ++i) {
        lp += col[i].second;
        if (col[i].first == col[i + 1].first) continue;
        const double nl = static_cast<double>(i + 1), nr = static_cast<double>(n - i - 1);
        const double score = gini(lp, nl) * nl + gini(static_cast<double>(pos) - lp, nr) * nr;
        if (score < best) {
          best = score;
          best_f = static_cast<int>(f);
          best_t = col[i].first;
        }
      }
    }
    if (best_f < 0) return me;
    auto mid = std::partition(idx.begin() + static_cast<std::ptrdiff_t>(lo), idx.begin() + static_cast<std::ptrdiff_t>(hi),
                              [&](std::size_t s) { return X(static_cast<Eigen::Index>(s), best_f) <= best_t; });
    const auto split = static_cast<std::size_t>(mid - idx.begin());
    nodes_[me].feature = best_f;
    nodes_[me].threshold = best_t;
    const std::size_t l = build(X, y, idx, lo, split, mtry, rng);
    const std::size_t r = build(X, y, idx, split, hi, mtry, rng);
    nodes_[me].left = l;
    nodes_[me].right = r;
    return me;
  }

  std::vector<Node> nodes_;
};

/// Bootstrap-aggregated trees with floor(sqrt(d)) candidate features per split.
/// Each tree draws from its own derived seed, so the forest does not depend on
/// how trees are scheduled.
class RandomForest final : public Classifier {
 public:
  explicit RandomForest(const ClassifierSpec& spec) : spec_(spec) {}

  void fit(const Matrix& X, const std::vector<int>& y) override {
    detail::check_training_set(X, y);
    const auto n = static_cast<std::size_t>(X.rows());
    const auto d = static_cast<std::size_t>(X.cols());
    const std::size_t mtry = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(d)))));
    trees_.assign(spec_.n_trees, {});
    for (std::size_t t = 0; t < spec_.n_trees; ++t) {
      Rng rng(derive_seed(spec_.seed, t));
      std::vector<std::size_t> sample(n);
      for (auto& s : sample) s = uniform_index(rng, n);
      trees_[t].fit(X, y, sample, mtry, rng);
    }
  }

  std::vector<double> predict_proba(const Matrix& X) const override {
    std::vector<double> p(static_cast<std::size_t>(X.rows()), 0.0);
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      double s = 0;
      for (const auto& t : trees_) s += t.predict(X.row(i));
      p[static_cast<std::size_t>(i)] = s / static_cast<double>(trees_.size());
    }
    return p;
  }

  const std::vector<DecisionTree>& trees() const { return trees_; }

 private:
  ClassifierSpec spec_;
  std::vector<DecisionTree> trees_;
};

/// Soft-margin RBF SVM solved by SMO (maximal violating pair), with Platt
/// scaling of the training decision values.
class SvmRbf final : public Classifier {
 public:
  explicit SvmRbf(const ClassifierSpec& spec) : spec_(spec) {}

  void fit(const Matrix& X, const std::vector<int>& y) override {
    detail::check_training_set(X, y);
    const auto n = static_cast<Eigen::Index>(X.rows());
    gamma_ = spec_.gamma;
    if (gamma_ <= 0) {
      const double m = X.mean();
      const double var = (X.array() - m).square().mean();
      gamma_ = var > 0 ? 1.0 / (static_cast<double>(X.cols()) * var) : 1.0;
    }
    X_ = X;
    Matrix K = kernel(X, X);
    Vector yy(n);
    for (Eigen::Index i = 0; i < n; ++i) yy[i] = y[static_cast<std::size_t>(i)] ? 1.0 : -1.0;

    // dual: min 1/2 a'Qa - 1'a, 0 <= a <= C, y'a = 0, Q = yy' .* K
    Vector alpha = Vector::Zero(n);
    Vector grad = -Vector::Ones(n);
    const double C = spec_.C;
    const std::size_t max_iter = std::max<std::size_t>(10'000'000, 100 * static_cast<std::size_t>(n));
    for (std::size_t it = 0; it < max_iter; ++it) {
      Eigen::Index i = -1, j = -1;
      double gmax = -std::numeric_limits<double>::infinity(), gmin = std::numeric_limits<double>::infinity();
      for (Eigen::Index t = 0; t < n; ++t) {
        const double v = -yy[t] * grad[t];
        const bool up = (yy[t] > 0 && alpha[t] < C) || (yy[t] < 0 && alpha[t] > 0);
        const bool low = (yy[t] > 0 && alpha[t] > 0) || (yy[t] < 0 && alpha[t] < C);
        if (up && v > gmax) gmax = v, i = t;
        if (low && v < gmin) gmin = v, j = t;
      }
      if (i < 0 || j < 0 || gmax - gmin < spec_.smo_tol) break;
      const double quad = std::max(K(i, i) + K(j, j) - 2 * K(i, j), 1e-12);
      // move along y_i e_i - y_j e_j
      double step = (gmax - gmin) / quad;
      const double ai = alpha[i], aj = alpha[j];
      const double room_i = yy[i] > 0 ? C - ai : ai;
      const double room_j = yy[j] > 0 ? aj : C - aj;
      step = std::min({step, room_i, room_j});
      alpha[i] += yy[i] * step;
      alpha[j] -= yy[j] * step;
      const double di = alpha[i] - ai, dj = alpha[j] - aj;
      grad += (yy.array() * (K.col(i).array() * yy[i] * di + K.col(j).array() * yy[j] * dj)).matrix();
    }
    // bias from free vectors, else midpoint of the bounds
    double bsum = 0;
    std::size_t nfree = 0;
    double ub = std::numeric_limits<double>::infinity(), lb = -std::numeric_limits<double>::infinity();
    for (Eigen::Index t = 0; t < n; ++t) {
      const double v = -yy[t] * grad[t];
      if (alpha[t] > 0 && alpha[t] < C) {
        bsum += v;
        ++nfree;
      } else if ((yy[t] > 0 && alpha[t] == 0) || (yy[t] < 0 && alpha[t] == C)) {
        ub = std::min(ub, v);
      } else {
        lb = std::max(lb, v);
      }
    }
    b_ = nfree ? bsum / static_cast<double>(nfree) : (std::isfinite(ub) && std::isfinite(lb) ? (ub + lb) / 2 : 0.0);
    coef_ = (alpha.array() * yy.array()).matrix();

    const Vector f = K * coef_ + Vector::Constant(n, b_);
    fit_platt(f, y);
  }

  std::vector<double> decision_function(const Matrix& X) const {
    const Vector f = kernel(X, X_) * coef_;
    std::vector<double> out(static_cast<std::size_t>(X.rows()));
    for (Eigen::Index i = 0; i < X.rows(); ++i) out[static_cast<std::size_t>(i)] = f[i] + b_;
    return out;
  }

  std::vector<double> predict_proba(const Matrix& X) const override {
    auto f = decision_function(X);
    for (double& v : f) v = detail::sigmoid(-(platt_a_ * v + platt_b_));
    return f;
  }

  double gamma() const { return gamma_; }

 private:
  Matrix kernel(const Matrix& A, const Matrix& B) const {
    const Vector an = A.rowwise().squaredNorm(), bn = B.rowwise().squaredNorm();
    Matrix D = (-2.0 * A * B.transpose()).colwise() + an;
    D.rowwise() += bn.transpose();
    return (-gamma_ * D.array().max(0.0)).exp().matrix();
  }

  // Newton's method with backtracking on the regularized-target Platt objective.
  void fit_platt(const Vector& f, const std::vector<int>& y) {
    const auto n = static_cast<std::size_t>(f.size());
    double np = 0, nn = 0;
    for (int v : y) (v ? np : nn) += 1;
    const double hi = (np + 1) / (np + 2), lo = 1 / (nn + 2);
    std::vector<double> t(n);
    for (std::size_t i = 0; i < n; ++i) t[i] = y[i] ? hi : lo;
    double A = 0, B = std::log((nn + 1) / (np + 1));
    auto objective = [&](double a, double b) {
      double s = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const double z = f[static_cast<Eigen::Index>(i)] * a + b;
        s += z >= 0 ? t[i] * z + std::log1p(std::exp(-z)) : (t[i] - 1) * z + std::log1p(std::exp(z));
      }
      return s;
    };
    double fval = objective(A, B);
    for (std::size_t it = 0; it < spec_.platt_iters; ++it) {
      double h11 = 1e-12, h22 = 1e-12, h21 = 0, g1 = 0, g2 = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const double fi = f[static_cast<Eigen::Index>(i)];
        const double z = fi * A + B;
        const double p = detail::sigmoid(-z);  // P(y = 1)
        const double q = 1 - p;
        const double d2 = p * q;
        h11 += fi * fi * d2;
        h22 += d2;
        h21 += fi * d2;
        const double d1 = t[i] - p;
        g1 += fi * d1;
        g2 += d1;
      }
      if (std::abs(g1) < 1e-5 && std::abs(g2) < 1e-5) break;
      const double det = h11 * h22 - h21 * h21;
      const double dA = -(h22 * g1 - h21 * g2) / det;
      const double dB = -(-h21 * g1 + h11 * g2) / det;
      const double gd = g1 * dA + g2 * dB;
      double step = 1;
      while (step >= 1e-10) {
        const double na = A + step * dA, nb = B + step * dB;
        const double nf = objective(na, nb);
        if (nf < fval + 1e-4 * step * gd) {
          A = na;
          B = nb;
          fval = nf;
          break;
        }
        step /= 2;
      }
      if (step < 1e-10) break;
    }
    platt_a_ = A;
    platt_b_ = B;
  }

  ClassifierSpec spec_;
  double gamma_ = 1;
  Matrix X_;
  Vector coef_;
  double b_ = 0;
  double platt_a_ = -1, platt_b_ = 0;
};

/// L2-penalized logistic regression (intercept unpenalized) fitted by IRLS,
/// falling back to gradient descent when a Newton system cannot be solved.
class LogisticRegression final : public Classifier {
 public:
  explicit LogisticRegression(const ClassifierSpec& spec) : spec_(spec) {}

  void fit(const Matrix& X, const std::vector<int>& y) override {
    detail::check_training_set(X, y);
    const auto n = X.rows(), d = X.cols();
    Matrix Xa(n, d + 1);
    Xa << X, Vector::Ones(n);
    Vector yy(n);
    for (Eigen::Index i = 0; i < n; ++i) yy[i] = y[static_cast<std::size_t>(i)];
    Vector w = Vector::Zero(d + 1);
    Vector pen = Vector::Constant(d + 1, spec_.l2);
    pen[d] = 0;
    used_fallback_ = false;
    iterations_ = 0;
    for (std::size_t it = 0; it < spec_.max_iter; ++it) {
      ++iterations_;
      const Vector z = Xa * w;
      Vector p(n), s(n);
      for (Eigen::Index i = 0; i < n; ++i) {
        p[i] = detail::sigmoid(z[i]);
        s[i] = p[i] * (1 - p[i]);
      }
      const Vector g = Xa.transpose() * (p - yy) + pen.cwiseProduct(w);
      Matrix H = Xa.transpose() * s.asDiagonal() * Xa;
      H.diagonal() += pen;
      Eigen::LDLT<Matrix> ldlt(H);
      Vector step;
      if (ldlt.info() == Eigen::Success && ldlt.isPositive() && ldlt.rcond() > 1e-12) {
        step = ldlt.solve(g);
      } else {
        used_fallback_ = true;
        step = 0.1 * g / static_cast<double>(n);
      }
      w -= step;
      if (step.cwiseAbs().maxCoeff() < spec_.tol) break;
    }
    w_ = w;
  }

  std::vector<double> predict_proba(const Matrix& X) const override {
    const auto d = X.cols();
    std::vector<double> out(static_cast<std::size_t>(X.rows()));
    for (Eigen::Index i = 0; i < X.rows(); ++i)
      out[static_cast<std::size_t>(i)] = detail::sigmoid(X.row(i).dot(w_.head(d)) + w_[d]);
    return out;
  }

  /// Coefficients followed by the intercept.
  const Vector& coefficients() const { return w_; }
  bool used_fallback() const { return used_fallback_; }
  std::size_t iterations() const { return iterations_; }

 private:
  ClassifierSpec spec_;
  Vector w_;
  bool used_fallback_ = false;
  std::size_t iterations_ = 0;
};

inline std::unique_ptr<Classifier> make_classifier(const ClassifierSpec& spec) {
  switch (spec.kind) {
    case ClassifierKind::random_forest: return std::make_unique<RandomForest>(spec);
    case ClassifierKind::svm_rbf: return std::make_unique<SvmRbf>(spec);
    case ClassifierKind::logistic_regression: return std::make_unique<LogisticRegression>(spec);
  }
  throw Error(ErrorKind::invalid_argument, "unknown classifier kind");
}

inline std::unique_ptr<Classifier> train_classifier(const ClassifierSpec& spec, const Matrix& X, const std::vector<int>& y) {
  auto c = make_classifier(spec);
  c->fit(X, y);
  return c;
}

struct FoldMetrics {
  double auc = std::numeric_limits<double>::quiet_NaN();  // NaN when the test set lacks a class
  double accuracy = 0;
  double sensitivity = std::numeric_limits<double>::quiet_NaN();
  double specificity = std::numeric_limits<double>::quiet_NaN();
  double f1 = 0;
  std::size_t tp = 0, fn = 0, tn = 0, fp = 0;
  std::vector<double> probabilities;
  std::vector<int> labels;
};

/// Scores probabilities at threshold 0.5 (p >= 0.5 is positive). Percent units
/// for accuracy, sensitivity, specificity and F1.
inline FoldMetrics evaluate_scores(const std::vector<double>& prob, const std::vector<int>& y) {
  if (prob.size() != y.size() || y.empty()) throw Error(ErrorKind::invalid_argument, "empty or mismatched test set");
  FoldMetrics m;
  m.probabilities = prob;
  m.labels = y;
  std::vector<double> pos, neg;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const bool pred = prob[i] >= 0.5;
    if (y[i]) {
      pos.push_back(prob[i]);
      pred ? ++m.tp : ++m.fn;
    } else {
      neg.push_back(prob[i]);
      pred ? ++m.fp : ++m.tn;
    }
  }
  const auto pct = [](std::size_t a, std::size_t b) { return 100.0 * static_cast<double>(a) / static_cast<double>(b); };
  m.accuracy = pct(m.tp + m.tn, y.size());
  if (m.tp + m.fn) m.sensitivity = pct(m.tp, m.tp + m.fn);
  if (m.tn + m.fp) m.specificity = pct(m.tn, m.tn + m.fp);
  m.f1 = (2 * m.tp + m.fp + m.fn) ? pct(2 * m.tp, 2 * m.tp + m.fp + m.fn) : 0.0;
  if (!pos.empty() && !neg.empty()) m.auc = stats::auroc(pos, neg);
  return m;
}

inline FoldMetrics evaluate_fold(const Classifier& model, const Matrix& X_test, const std::vector<int>& y_test) {
  return evaluate_scores(model.predict_proba(X_test), y_test);
}

struct RocPoint {
  double fpr = 0;
  double tpr = 0;
  double threshold = 0;
};

/// ROC points from the strictest threshold down; tied scores move together.
inline std::vector<RocPoint> roc_curve(const std::vector<double>& prob, const std::vector<int>& y) {
  std::size_t P = 0;
  for (int v : y) P += v ? 1 : 0;
  const std::size_t N = y.size() - P;
  if (!P || !N) throw Error(ErrorKind::single_class, "ROC needs both classes");
  std::vector<std::size_t> idx(prob.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return prob[a] > prob[b]; });
  std::vector<RocPoint> out{{0.0, 0.0, std::numeric_limits<double>::infinity()}};
  std::size_t tp = 0, fp = 0;
  for (std::size_t k = 0; k < idx.size();) {
    const double t = prob[idx[k]];
    for (; k < idx.size() && prob[idx[k]] == t; ++k) y[idx[k]] ? ++tp : ++fp;
    out.push_back({static_cast<double>(fp) / static_cast<double>(N), static_cast<double>(tp) / static_cast<double>(P), t});
  }
  return out;
}

}  // namespace skna::ml
