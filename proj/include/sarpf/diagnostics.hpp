#pragma once

// Numeric summaries of pyramid feature maps and of attention behaviour:
// per-channel statistics, per-pixel energy, high-norm token share and the
// concentration (Gini) of attention mass.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "sarpf/attention.hpp"
#include "sarpf/tensor.hpp"

namespace sarpf {

struct LevelStats {
  std::string level;
  Shape4 shape;
  std::vector<double> channel_mean;  // over batch and spatial positions
  std::vector<double> channel_std;   // population std
  Tensor4 energy;                    // (B, 1, H, W): sqrt(sum_c x^2)
  double min = 0.0;
  double max = 0.0;
};

inline LevelStats level_stats(const Tensor4& x, std::string level = {}) {
  const Shape4& s = x.shape();
  LevelStats st;
  st.level = std::move(level);
  st.shape = s;
  st.channel_mean.assign(s.c, 0.0);
  st.channel_std.assign(s.c, 0.0);
  st.energy = Tensor4({s.n, 1, s.h, s.w});
  if (x.empty()) return st;

  const double count = static_cast<double>(s.n * s.plane());
  for (std::size_t c = 0; c < s.c; ++c) {
    double total = 0.0;
    for (std::size_t b = 0; b < s.n; ++b)
      for (double v : x.plane(b, c)) total += v;
    const double mean = total / count;
    double sq = 0.0;
    for (std::size_t b = 0; b < s.n; ++b)
      for (double v : x.plane(b, c)) sq += (v - mean) * (v - mean);
    st.channel_mean[c] = mean;
    st.channel_std[c] = std::sqrt(sq / count);
  }
  for (std::size_t b = 0; b < s.n; ++b) {
    auto e = st.energy.plane(b, 0);
    for (std::size_t c = 0; c < s.c; ++c) {
      const auto p = x.plane(b, c);
      for (std::size_t t = 0; t < p.size(); ++t) e[t] += p[t] * p[t];
    }
    for (double& v : e) v = std::sqrt(v);
  }
  const auto [lo, hi] = std::minmax_element(x.data().begin(), x.data().end());
  st.min = *lo;
  st.max = *hi;
  return st;
}

/// Gini concentration of a nonnegative vector; 0 for all-equal (or all-zero)
/// input, (n-1)/n for a point mass.
inline double gini(std::span<const double> values) {
  const std::size_t n = values.size();
  if (n == 0) return 0.0;
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double total = std::accumulate(sorted.begin(), sorted.end(), 0.0);
  if (total <= 0.0) return 0.0;
  double weighted = 0.0;
  for (std::size_t i = 0; i < n; ++i) weighted += static_cast<double>(i + 1) * sorted[i];
  const double nd = static_cast<double>(n);
  const double g = 2.0 * weighted / (nd * total) - (nd + 1.0) / nd;
  return std::clamp(g, 0.0, 1.0);
}

struct ArtifactReport {
  std::vector<double> token_norms;     // per (batch, position), batch-major
  double norm_mean = 0.0;
  double norm_std = 0.0;
  double threshold = 0.0;              // mean + k * std
  double high_norm_fraction = 0.0;     // share of tokens with norm > threshold
  std::vector<double> attention_mass;  // per position, averaged over all matrices
  double gini = 0.0;
};

/// Per-token output norms, with a token counted as high-norm when its norm
/// strictly exceeds mean + k * std over all tokens.
inline ArtifactReport artifact_report(std::span<const Matrix> attention, const Tensor4& mhsa_output, double k = 3.0) {
  if (!(k > 0)) throw ContractError("artifact_report: k must be positive");
  ArtifactReport r;
  const Shape4& s = mhsa_output.shape();
  r.token_norms.assign(s.n * s.plane(), 0.0);
  for (std::size_t b = 0; b < s.n; ++b) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const auto p = mhsa_output.plane(b, c);
      for (std::size_t t = 0; t < p.size(); ++t) r.token_norms[b * s.plane() + t] += p[t] * p[t];
    }
  }
  for (double& v : r.token_norms) v = std::sqrt(v);
  if (!r.token_norms.empty()) {
    const double n = static_cast<double>(r.token_norms.size());
    r.norm_mean = std::accumulate(r.token_norms.begin(), r.token_norms.end(), 0.0) / n;
    double sq = 0.0;
    for (double v : r.token_norms) sq += (v - r.norm_mean) * (v - r.norm_mean);
    r.norm_std = std::sqrt(sq / n);
    const auto [lo, hi] = std::minmax_element(r.token_norms.begin(), r.token_norms.end());
    if (*lo == *hi) {
      // Exact degenerate case; the summed mean may be off by an ulp.
      r.norm_mean = *lo;
      r.norm_std = 0.0;
    }
    r.threshold = r.norm_mean + k * r.norm_std;
    const auto above = std::count_if(r.token_norms.begin(), r.token_norms.end(),
                                     [&](double v) { return v > r.threshold; });
    r.high_norm_fraction = static_cast<double>(above) / n;
  }

  if (!attention.empty()) {
    r.attention_mass.assign(attention.front().cols(), 0.0);
    for (const Matrix& a : attention) {
      if (a.cols() != r.attention_mass.size()) throw ShapeError("artifact_report: attention matrices differ in size");
      const auto mass = attention_mass(a);
      for (std::size_t j = 0; j < mass.size(); ++j) r.attention_mass[j] += mass[j];
    }
    for (double& v : r.attention_mass) v /= static_cast<double>(attention.size());
    r.gini = gini(r.attention_mass);
  }
  return r;
}

}  // namespace sarpf
