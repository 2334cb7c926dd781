#pragma once

#include <cmath>
#include <utility>

#include "ctmc.hpp"
#include "error.hpp"

namespace ctfilter {

/* Hidden-chain observation model: state i drifts the observed integral at
   rate alpha[i]; the increment over a step of length h is observed through
   independent Gaussian noise of standard deviation sigma*sqrt(h). */
class ModelSpec {
 public:
  ModelSpec(Vector alphas, GeneratorMatrix q, Distribution p0, double sigma)
      : alphas_(std::move(alphas)),
        q_(std::move(q)),
        p0_(std::move(p0)),
        sigma_(sigma) {
    if (alphas_.size() != q_.dim() || p0_.size() != q_.dim())
      fail(ErrorCode::ShapeError, "model dimensions disagree");
    for (double a : alphas_)
      if (!std::isfinite(a)) fail(ErrorCode::DomainError, "non-finite drift");
    if (!(sigma_ > 0.0) || !std::isfinite(sigma_))
      fail(ErrorCode::DomainError, "noise scale must be positive");
  }

  std::size_t dim() const { return q_.dim(); }
  const Vector& alphas() const { return alphas_; }
  double alpha(std::size_t i) const { return alphas_[i]; }
  const GeneratorMatrix& generator() const { return q_; }
  const Distribution& initial() const { return p0_; }
  double sigma() const { return sigma_; }

 private:
  Vector alphas_;
  GeneratorMatrix q_;
  Distribution p0_;
  double sigma_;
};

}  // namespace ctfilter
