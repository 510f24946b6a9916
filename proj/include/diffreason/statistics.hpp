#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>

#include <boost/math/special_functions/beta.hpp>

#include "diffreason/error.hpp"

namespace diffreason {

/// <a, b> / (|a| |b|), clamped to [-1, 1].
inline double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw Error(Errc::DimensionMismatch,
                "embedding sizes differ (" + std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
  }
  double dot = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) throw Error(Errc::ZeroVector, "cosine similarity of a zero vector");
  const double c = dot / (std::sqrt(aa) * std::sqrt(bb));
  return std::clamp(c, -1.0, 1.0);
}

inline double sample_mean(std::span<const double> x) {
  return std::accumulate(x.begin(), x.end(), 0.0) / double(x.size());
}

/// Unbiased sample variance (n - 1 denominator).
inline double sample_variance(std::span<const double> x) {
  const double m = sample_mean(x);
  double ss = 0.0;
  for (double v : x) ss += (v - m) * (v - m);
  return ss / double(x.size() - 1);
}

/// Two-sided tail probability P(|T| >= |t|) for Student's t with `dof` degrees of freedom.
inline double student_t_two_sided_p(double t, double dof) {
  const double x = dof / (dof + t * t);
  return boost::math::ibeta(dof / 2.0, 0.5, x);
}

struct WelchResult {
  double t = 0.0;
  double dof = 0.0;
  double p = 1.0;
  bool reject = false;
};

/**
 * @brief Welch's unequal-variance two-sample t-test, two-sided.
 *
 * t = (mean_a - mean_b) / sqrt(var_a/n_a + var_b/n_b), with
 * Welch-Satterthwaite degrees of freedom. Rejects when p < alpha.
 */
inline WelchResult welch_t_test(std::span<const double> a, std::span<const double> b, double alpha) {
  if (a.size() < 2 || b.size() < 2) {
    throw Error(Errc::SampleTooSmall, "each sample needs at least 2 values (got " + std::to_string(a.size()) +
                                          " and " + std::to_string(b.size()) + ")");
  }
  const double va = sample_variance(a) / double(a.size());
  const double vb = sample_variance(b) / double(b.size());
  const double se2 = va + vb;
  if (se2 == 0.0) throw Error(Errc::DegenerateVariance, "both samples have zero variance");
  WelchResult r;
  r.t = (sample_mean(a) - sample_mean(b)) / std::sqrt(se2);
  r.dof = se2 * se2 / (va * va / double(a.size() - 1) + vb * vb / double(b.size() - 1));
  r.p = student_t_two_sided_p(r.t, r.dof);
  r.reject = r.p < alpha;
  return r;
}

}  // namespace diffreason
