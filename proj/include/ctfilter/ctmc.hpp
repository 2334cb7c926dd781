#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "error.hpp"
#include "linalg.hpp"
#include "rng.hpp"

namespace ctfilter {

/* Probability vector over chain states.  The plain constructor validates the
   input (entries >= 0 up to -1e-14, total within 1e-12 of one); renormalized()
   additionally rescales so downstream code can hand in raw nonnegative
   weights. */
class Distribution {
 public:
  explicit Distribution(Vector p) : p_(std::move(p)) {
    if (p_.empty()) fail(ErrorCode::ShapeError, "empty distribution");
    double total = 0.0;
    for (double& x : p_) {
      if (x < 0.0) {
        if (x < -1e-14)
          fail(ErrorCode::DomainError, "negative probability entry");
        x = 0.0;
      }
      total += x;
    }
    if (std::abs(total - 1.0) > 1e-12)
      fail(ErrorCode::DomainError, "probabilities must sum to 1");
  }

  static Distribution renormalized(Vector p) {
    if (p.empty()) fail(ErrorCode::ShapeError, "empty distribution");
    double total = 0.0;
    for (double& x : p) {
      if (x < 0.0) {
        if (x < -1e-14)
          fail(ErrorCode::DomainError, "negative probability entry");
        x = 0.0;
      }
      total += x;
    }
    if (!(total > 0.0))
      fail(ErrorCode::DomainError, "probability mass vanished");
    for (double& x : p) x /= total;
    return Distribution(std::move(p), 0);
  }

  std::size_t size() const { return p_.size(); }
  double operator[](std::size_t i) const { return p_[i]; }
  const Vector& vec() const { return p_; }

 private:
  Distribution(Vector p, int) : p_(std::move(p)) {}
  Vector p_;
};

/* Validated intensity matrix: off-diagonal rates nonnegative, diagonals
   recomputed so each row sums to exactly zero. */
class GeneratorMatrix {
 public:
  static GeneratorMatrix validated(Matrix raw) {
    if (!raw.square()) fail(ErrorCode::NonSquare, "generator must be square");
    const std::size_t d = raw.rows();
    if (d < 2) fail(ErrorCode::ShapeError, "generator needs at least 2 states");
    double scale = 0.0;
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j)
        scale = std::max(scale, std::abs(raw(i, j)));
    const double row_tol = 1e-8 * std::max(1.0, scale);
    for (std::size_t i = 0; i < d; ++i) {
      double row_sum = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        if (i != j && raw(i, j) < 0.0) {
          if (raw(i, j) < -1e-14)
            fail(ErrorCode::NegativeOffDiagonal, "negative off-diagonal rate");
          raw(i, j) = 0.0;
        }
        row_sum += raw(i, j);
      }
      if (std::abs(row_sum) > row_tol)
        fail(ErrorCode::InconsistentGenerator,
             "generator row does not sum to zero");
      double off = 0.0;
      for (std::size_t j = 0; j < d; ++j)
        if (i != j) off += raw(i, j);
      raw(i, i) = -off;
    }
    return GeneratorMatrix(std::move(raw));
  }

  std::size_t dim() const { return q_.rows(); }
  double operator()(std::size_t i, std::size_t j) const { return q_(i, j); }
  double exit_rate(std::size_t i) const { return -q_(i, i); }
  const Matrix& matrix() const { return q_; }

 private:
  explicit GeneratorMatrix(Matrix q) : q_(std::move(q)) {}
  Matrix q_;
};

/* Step transition probabilities; rows on the probability simplex. */
class StochasticMatrix {
 public:
  static StochasticMatrix validated(Matrix raw) {
    if (!raw.square())
      fail(ErrorCode::NonSquare, "transition matrix must be square");
    const std::size_t d = raw.rows();
    for (std::size_t i = 0; i < d; ++i) {
      double row_sum = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        double& x = raw(i, j);
        if (x < 0.0) {
          if (x < -1e-14)
            fail(ErrorCode::DomainError, "negative transition probability");
          x = 0.0;
        }
        if (x > 1.0) {
          if (x > 1.0 + 1e-12)
            fail(ErrorCode::DomainError, "transition probability above 1");
          x = 1.0;
        }
        row_sum += x;
      }
      if (std::abs(row_sum - 1.0) > 1e-10)
        fail(ErrorCode::DomainError, "transition row does not sum to 1");
    }
    return StochasticMatrix(std::move(raw));
  }

  std::size_t dim() const { return p_.rows(); }
  double operator()(std::size_t i, std::size_t j) const { return p_(i, j); }
  const Matrix& matrix() const { return p_; }

 private:
  explicit StochasticMatrix(Matrix p) : p_(std::move(p)) {}
  Matrix p_;
};

inline StochasticMatrix transition_matrix(const GeneratorMatrix& gen,
                                          double t) {
  if (!(t >= 0.0) || !std::isfinite(t))
    fail(ErrorCode::InvalidTime, "transition time must be nonnegative");
  return StochasticMatrix::validated(expm(gen.matrix() * t));
}

/* Marginal law p(t): row vector p0^T e^{Qt}, clipped and renormalized. */
inline Distribution marginal(const GeneratorMatrix& gen,
                             const Distribution& p0, double t) {
  if (p0.size() != gen.dim())
    fail(ErrorCode::ShapeError, "initial law dimension mismatch");
  const StochasticMatrix p = transition_matrix(gen, t);
  return Distribution::renormalized(vec_matmul(p0.vec(), p.matrix()));
}

/* Jump-chain decomposition: exit rates plus the conditional jump matrix.
   Rows of absorbing states (exit rate ~ 0) are left all-zero and flagged. */
struct EmbeddedChain {
  Vector exit_rates;
  Matrix jump_probs;
  std::vector<std::uint8_t> absorbing;
};

inline EmbeddedChain embedded_chain(const GeneratorMatrix& gen) {
  const std::size_t d = gen.dim();
  EmbeddedChain e{Vector(d, 0.0), Matrix(d, d, 0.0),
                  std::vector<std::uint8_t>(d, 0)};
  for (std::size_t i = 0; i < d; ++i) {
    const double rate = gen.exit_rate(i);
    e.exit_rates[i] = rate;
    if (rate <= 1e-14) {
      e.absorbing[i] = 1;
      continue;
    }
    for (std::size_t j = 0; j < d; ++j)
      if (i != j) e.jump_probs(i, j) = gen(i, j) / rate;
  }
  return e;
}

/* Piecewise-constant trajectory: states[k] holds on
   [jump_times[k], jump_times[k+1]) and the last state holds to the horizon. */
struct CtmcPath {
  double horizon = 0.0;
  std::vector<double> jump_times;  // first entry 0
  std::vector<int> states;         // same length as jump_times

  int jump_count() const { return static_cast<int>(states.size()) - 1; }

  int state_at(double t) const {
    if (t < 0.0 || t > horizon)
      fail(ErrorCode::InvalidTime, "query outside path horizon");
    auto it = std::upper_bound(jump_times.begin(), jump_times.end(), t);
    return states[static_cast<std::size_t>(it - jump_times.begin()) - 1];
  }
};

inline CtmcPath sample_path(const GeneratorMatrix& gen, const Distribution& p0,
                            double horizon, Rng& rng) {
  if (!(horizon > 0.0))
    fail(ErrorCode::InvalidTime, "path horizon must be positive");
  if (p0.size() != gen.dim())
    fail(ErrorCode::ShapeError, "initial law dimension mismatch");
  const EmbeddedChain emb = embedded_chain(gen);
  const std::size_t d = gen.dim();

  CtmcPath path;
  path.horizon = horizon;
  int s = rng.categorical(p0.vec());
  double t = 0.0;
  path.jump_times.push_back(0.0);
  path.states.push_back(s);
  while (true) {
    if (emb.absorbing[static_cast<std::size_t>(s)]) break;
    t += rng.exponential(emb.exit_rates[static_cast<std::size_t>(s)]);
    if (t >= horizon) break;
    s = rng.categorical(emb.jump_probs.row(static_cast<std::size_t>(s)), d);
    path.jump_times.push_back(t);
    path.states.push_back(s);
  }
  return path;
}

}  // namespace ctfilter
