#pragma once

// Brute-force ground truth. Everything here evaluates classifiers as plain
// functions; nothing reads Lipschitz metadata or certificate internals
// beyond the claimed ball.

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <vector>

#include "mixcert/certification.hpp"
#include "mixcert/classifier.hpp"
#include "mixcert/parallel.hpp"

namespace mixcert {

inline constexpr std::size_t kMaxGridDim = 3;
inline constexpr std::size_t kMaxGridResolution = 401;
inline constexpr std::size_t kMaxGridPoints = 10'000'000;

/// Regular grid over the linf box of half-width `radius`, masked to the l2
/// ball for Norm::l2. Always contains the center and the 2d axis extremes.
class BallGrid {
 public:
  BallGrid(Vector center, double radius, Norm norm, std::size_t resolution)
      : center_(std::move(center)), radius_(radius), norm_(norm), resolution_(resolution) {
    const std::size_t d = center_.size();
    if (d == 0 || d > kMaxGridDim) {
      throw InputError("ball grids support 1 <= d <= 3, got d = " + std::to_string(d));
    }
    if (resolution_ < 1 || resolution_ > kMaxGridResolution) {
      throw InputError("grid resolution must lie in [1, 401]");
    }
    if (!(radius_ >= 0.0) || !std::isfinite(radius_)) throw InputError("grid radius must be finite and >= 0");
    double total = 1.0;
    for (std::size_t j = 0; j < d; ++j) total *= static_cast<double>(resolution_);
    if (total > static_cast<double>(kMaxGridPoints)) throw InputError("grid exceeds 10^7 points");

    offsets_.resize(resolution_);
    if (resolution_ == 1) {
      offsets_[0] = 0.0;
    } else {
      for (std::size_t k = 0; k < resolution_; ++k) {
        offsets_[k] = radius_ * (2.0 * static_cast<double>(k) / static_cast<double>(resolution_ - 1) - 1.0);
      }
      // Odd resolutions hit 0 exactly in exact arithmetic; pin it.
      if (resolution_ % 2 == 1) offsets_[resolution_ / 2] = 0.0;
    }
    // Center and axis extremes are on the tensor grid only for odd resolutions.
    if (resolution_ % 2 == 0) {
      extras_.push_back(center_);
      for (std::size_t j = 0; j < d; ++j) {
        for (double s : {-1.0, 1.0}) {
          Vector e = center_;
          e[j] += s * radius_;
          extras_.push_back(std::move(e));
        }
      }
    }
  }

  const Vector& center() const { return center_; }
  double radius() const { return radius_; }
  Norm norm() const { return norm_; }
  std::size_t resolution() const { return resolution_; }
  std::size_t dim() const { return center_.size(); }

  /// Tensor-grid cells (before masking) plus extras.
  std::size_t candidate_count() const {
    std::size_t total = 1;
    for (std::size_t j = 0; j < dim(); ++j) total *= resolution_;
    return total + extras_.size();
  }

  /// Writes candidate `k` into `point`; returns false when it is masked out.
  bool point(std::size_t k, std::span<double> point) const {
    const std::size_t d = dim();
    std::size_t tensor = 1;
    for (std::size_t j = 0; j < d; ++j) tensor *= resolution_;
    if (k < tensor) {
      double n2 = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double off = offsets_[k % resolution_];
        k /= resolution_;
        point[j] = center_[j] + off;
        n2 += off * off;
      }
      return norm_ == Norm::linf || std::sqrt(n2) <= radius_;
    }
    const Vector& e = extras_[k - tensor];
    for (std::size_t j = 0; j < d; ++j) point[j] = e[j];
    return true;
  }

 private:
  Vector center_;
  double radius_;
  Norm norm_;
  std::size_t resolution_;
  Vector offsets_;
  std::vector<Vector> extras_;
};

struct MarginSearch {
  double min_margin = std::numeric_limits<double>::infinity();
  Vector argmin;
  std::size_t points = 0;
};

/// min over the grid of f_y - max_{i != y} f_i, with f the classifier's
/// probabilities. Negative means an argmax change exists on the grid.
inline MarginSearch exhaustive_min_margin(const Classifier& f, const BallGrid& grid, std::size_t y,
                                          std::size_t workers = 1) {
  if (grid.dim() != f.input_dim()) throw InputError("grid dimension does not match classifier");
  if (y >= f.class_count()) throw InputError("class index out of range");
  const std::size_t total = grid.candidate_count();
  const std::size_t chunks = std::min<std::size_t>(total, 64);
  std::vector<MarginSearch> partial(chunks);
  parallel_for(chunks, workers, [&](std::size_t c) {
    const std::size_t begin = total * c / chunks;
    const std::size_t end = total * (c + 1) / chunks;
    Vector point(grid.dim());
    MarginSearch& best = partial[c];
    for (std::size_t k = begin; k < end; ++k) {
      if (!grid.point(k, point)) continue;
      ++best.points;
      const double m = margin_of(f.probs(point), y);
      if (m < best.min_margin) {
        best.min_margin = m;
        best.argmin = point;
      }
    }
  });
  MarginSearch out;
  for (const MarginSearch& p : partial) {
    out.points += p.points;
    if (p.min_margin < out.min_margin) {
      out.min_margin = p.min_margin;
      out.argmin = p.argmin;
    }
  }
  return out;
}

struct Verdict {
  bool verified = true;
  double min_margin = std::numeric_limits<double>::infinity();
  std::size_t points = 0;
  std::optional<Vector> counterexample;
};

/// Checks that the mixture keeps the certificate's prediction at every grid
/// point of the claimed ball, shrunk by 1e-9. Ties (margin exactly 0) pass.
inline Verdict verify_certificate(const Classifier& mixed, const Certificate& cert, VectorView x,
                                  std::size_t resolution, std::size_t workers = 1) {
  if (cert.method == CertMethod::lipschitz_local) {
    throw InputError("heuristic local-Lipschitz certificates are not verifiable claims");
  }
  if (x.size() > kMaxGridDim) throw InputError("verification supports d <= 3");
  Verdict verdict;
  if (cert.radius <= 0.0) return verdict;
  if (!std::isfinite(cert.radius)) throw InputError("cannot grid an unbounded certificate radius");
  const double r = std::max(0.0, cert.radius - 1e-9);
  const BallGrid grid(Vector(x.begin(), x.end()), r, cert.norm, resolution);
  const MarginSearch search = exhaustive_min_margin(mixed, grid, cert.predicted, workers);
  verdict.min_margin = search.min_margin;
  verdict.points = search.points;
  if (search.min_margin < 0.0) {
    verdict.verified = false;
    verdict.counterexample = search.argmin;
  }
  return verdict;
}

/// Central differences, one coordinate at a time.
inline Vector finite_diff_gradient(const std::function<double(VectorView)>& fn, VectorView x,
                                   double step) {
  if (!(step > 0.0)) throw InputError("finite-difference step must be positive");
  Vector z(x.begin(), x.end());
  Vector g(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) {
    z[j] = x[j] + step;
    const double up = fn(z);
    z[j] = x[j] - step;
    const double down = fn(z);
    z[j] = x[j];
    g[j] = (up - down) / (2.0 * step);
  }
  return g;
}

}  // namespace mixcert
