#ifndef DROPNAS_DIAG_LINALG_HPP
#define DROPNAS_DIAG_LINALG_HPP

#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "dropnas/core/errors.hpp"
#include "dropnas/core/rng.hpp"
#include "dropnas/core/tensor.hpp"

// Small exact numerics for the analysis procedures: a handful of points in a
// handful of dimensions, so plain cyclic Jacobi and Lloyd iterations are fine.

namespace dropnas::diag {

using Point = std::vector<Real>;

// ---------------------------------------------------------------- jacobi

struct SymEigen {
  std::vector<Real> values;               // descending
  std::vector<std::vector<Real>> vectors; // vectors[i] is the i-th eigenvector
};

inline SymEigen symmetric_eigen(std::vector<std::vector<Real>> a) {
  const int n = static_cast<int>(a.size());
  std::vector<std::vector<Real>> v(static_cast<size_t>(n),
                                   std::vector<Real>(static_cast<size_t>(n), Real(0)));
  for (int i = 0; i < n; ++i) v[static_cast<size_t>(i)][static_cast<size_t>(i)] = Real(1);

  for (int sweep = 0; sweep < 200; ++sweep) {
    Real off = 0;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) off += a[static_cast<size_t>(p)][static_cast<size_t>(q)] *
                                              a[static_cast<size_t>(p)][static_cast<size_t>(q)];
    if (off < Real(1e-28)) break;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) {
        const Real apq = a[static_cast<size_t>(p)][static_cast<size_t>(q)];
        if (std::abs(apq) < Real(1e-300)) continue;
        const Real app = a[static_cast<size_t>(p)][static_cast<size_t>(p)];
        const Real aqq = a[static_cast<size_t>(q)][static_cast<size_t>(q)];
        const Real theta = (aqq - app) / (2 * apq);
        const Real t = (theta >= 0 ? Real(1) : Real(-1)) /
                       (std::abs(theta) + std::sqrt(theta * theta + 1));
        const Real c = Real(1) / std::sqrt(t * t + 1);
        const Real s = t * c;
        for (int k = 0; k < n; ++k) {
          const Real akp = a[static_cast<size_t>(k)][static_cast<size_t>(p)];
          const Real akq = a[static_cast<size_t>(k)][static_cast<size_t>(q)];
          a[static_cast<size_t>(k)][static_cast<size_t>(p)] = c * akp - s * akq;
          a[static_cast<size_t>(k)][static_cast<size_t>(q)] = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const Real apk = a[static_cast<size_t>(p)][static_cast<size_t>(k)];
          const Real aqk = a[static_cast<size_t>(q)][static_cast<size_t>(k)];
          a[static_cast<size_t>(p)][static_cast<size_t>(k)] = c * apk - s * aqk;
          a[static_cast<size_t>(q)][static_cast<size_t>(k)] = s * apk + c * aqk;
        }
        for (int k = 0; k < n; ++k) {
          const Real vkp = v[static_cast<size_t>(k)][static_cast<size_t>(p)];
          const Real vkq = v[static_cast<size_t>(k)][static_cast<size_t>(q)];
          v[static_cast<size_t>(k)][static_cast<size_t>(p)] = c * vkp - s * vkq;
          v[static_cast<size_t>(k)][static_cast<size_t>(q)] = s * vkp + c * vkq;
        }
      }
  }
  std::vector<int> order(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
  std::sort(order.begin(), order.end(), [&](int x, int y) {
    return a[static_cast<size_t>(x)][static_cast<size_t>(x)] >
           a[static_cast<size_t>(y)][static_cast<size_t>(y)];
  });
  SymEigen out;
  for (int i : order) {
    out.values.push_back(a[static_cast<size_t>(i)][static_cast<size_t>(i)]);
    std::vector<Real> vec(static_cast<size_t>(n));
    for (int k = 0; k < n; ++k) vec[static_cast<size_t>(k)] = v[static_cast<size_t>(k)][static_cast<size_t>(i)];
    out.vectors.push_back(std::move(vec));
  }
  return out;
}

// ---------------------------------------------------------------- k-means

struct KMeansResult {
  std::vector<int> assign;
  std::vector<Point> centers;
  Real inertia = 0;
  bool collapsed = false;  // some cluster ended empty
  int iterations = 0;
};

namespace detail {

inline Real sqdist(const Point& a, const Point& b) {
  Real d = 0;
  for (size_t i = 0; i < a.size(); ++i) d += (a[i] - b[i]) * (a[i] - b[i]);
  return d;
}

inline KMeansResult kmeans_once(const std::vector<Point>& pts, int k, RngStream& rng,
                                int max_iters) {
  const int n = static_cast<int>(pts.size());
  KMeansResult res;
  // k-means++ seeding
  res.centers.push_back(pts[rng.uniform_int(static_cast<std::uint64_t>(n))]);
  while (static_cast<int>(res.centers.size()) < k) {
    std::vector<Real> d2(static_cast<size_t>(n));
    Real total = 0;
    for (int i = 0; i < n; ++i) {
      Real best = std::numeric_limits<Real>::max();
      for (const Point& c : res.centers) best = std::min(best, sqdist(pts[static_cast<size_t>(i)], c));
      d2[static_cast<size_t>(i)] = best;
      total += best;
    }
    if (total <= Real(0)) {
      // all remaining mass at existing centers: pick uniformly
      res.centers.push_back(pts[rng.uniform_int(static_cast<std::uint64_t>(n))]);
      continue;
    }
    Real target = static_cast<Real>(rng.uniform()) * total;
    int pick = n - 1;
    for (int i = 0; i < n; ++i) {
      target -= d2[static_cast<size_t>(i)];
      if (target <= 0) {
        pick = i;
        break;
      }
    }
    res.centers.push_back(pts[static_cast<size_t>(pick)]);
  }

  res.assign.assign(static_cast<size_t>(n), -1);
  Real prev_inertia = std::numeric_limits<Real>::max();
  for (int iter = 0; iter < max_iters; ++iter) {
    res.iterations = iter + 1;
    bool changed = false;
    Real inertia = 0;
    for (int i = 0; i < n; ++i) {
      int best = 0;
      Real bestd = sqdist(pts[static_cast<size_t>(i)], res.centers[0]);
      for (int c = 1; c < k; ++c) {
        const Real d = sqdist(pts[static_cast<size_t>(i)], res.centers[static_cast<size_t>(c)]);
        if (d < bestd) {
          bestd = d;
          best = c;
        }
      }
      if (res.assign[static_cast<size_t>(i)] != best) changed = true;
      res.assign[static_cast<size_t>(i)] = best;
      inertia += bestd;
    }
    if (inertia > prev_inertia + Real(1e-12))
      throw ContractError("k-means objective increased");
    prev_inertia = inertia;
    res.inertia = inertia;
    if (!changed && iter > 0) break;
    // recompute centers
    std::vector<Point> sums(static_cast<size_t>(k),
                            Point(pts[0].size(), Real(0)));
    std::vector<int> counts(static_cast<size_t>(k), 0);
    for (int i = 0; i < n; ++i) {
      const int c = res.assign[static_cast<size_t>(i)];
      ++counts[static_cast<size_t>(c)];
      for (size_t d = 0; d < pts[0].size(); ++d)
        sums[static_cast<size_t>(c)][d] += pts[static_cast<size_t>(i)][d];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<size_t>(c)] == 0) {
        res.collapsed = true;  // keep the stale center, flag it
        continue;
      }
      for (size_t d = 0; d < pts[0].size(); ++d)
        res.centers[static_cast<size_t>(c)][d] =
            sums[static_cast<size_t>(c)][d] / static_cast<Real>(counts[static_cast<size_t>(c)]);
    }
  }
  return res;
}

}  // namespace detail

// seeded k-means++ with restarts; the best run by inertia wins
inline KMeansResult kmeans(const std::vector<Point>& pts, int k, RngStream& rng,
                           int restarts = 10, int max_iters = 300) {
  if (pts.empty() || k < 1) throw ConfigError("k-means needs points and k >= 1");
  if (static_cast<int>(pts.size()) < k)
    throw ConfigError("k-means needs at least k points");
  KMeansResult best;
  bool have = false;
  for (int r = 0; r < restarts; ++r) {
    KMeansResult cur = detail::kmeans_once(pts, k, rng, max_iters);
    if (!have || cur.inertia < best.inertia) {
      best = std::move(cur);
      have = true;
    }
  }
  return best;
}

// ---------------------------------------------------------------- PCA

struct PcaResult {
  std::vector<std::array<Real, 2>> coords;     // one 2-d coordinate per point
  std::array<std::vector<Real>, 2> components; // orthonormal
  std::vector<Real> mean;
  std::array<Real, 2> explained;               // eigenvalues
};

inline PcaResult pca2(const std::vector<Point>& pts) {
  if (pts.size() < 2) throw ConfigError("PCA needs at least two points");
  const size_t n = pts.size(), d = pts[0].size();
  PcaResult res;
  res.mean.assign(d, Real(0));
  for (const Point& p : pts)
    for (size_t i = 0; i < d; ++i) res.mean[i] += p[i];
  for (Real& m : res.mean) m /= static_cast<Real>(n);

  std::vector<std::vector<Real>> cov(d, std::vector<Real>(d, Real(0)));
  for (const Point& p : pts)
    for (size_t i = 0; i < d; ++i)
      for (size_t j = 0; j < d; ++j)
        cov[i][j] += (p[i] - res.mean[i]) * (p[j] - res.mean[j]);
  for (auto& row : cov)
    for (Real& v : row) v /= static_cast<Real>(n);

  SymEigen eig = symmetric_eigen(cov);
  for (int c = 0; c < 2; ++c)
    res.components[static_cast<size_t>(c)] =
        c < static_cast<int>(eig.vectors.size()) ? eig.vectors[static_cast<size_t>(c)]
                                                 : std::vector<Real>(d, Real(0));
  res.explained = {eig.values.size() > 0 ? eig.values[0] : Real(0),
                   eig.values.size() > 1 ? eig.values[1] : Real(0)};
  for (const Point& p : pts) {
    std::array<Real, 2> xy{Real(0), Real(0)};
    for (int c = 0; c < 2; ++c)
      for (size_t i = 0; i < d; ++i)
        xy[static_cast<size_t>(c)] += (p[i] - res.mean[i]) * res.components[static_cast<size_t>(c)][i];
    res.coords.push_back(xy);
  }
  return res;
}

// max-abs reconstruction error from the 2-d projection
inline Real pca2_reconstruction_error(const PcaResult& res, const std::vector<Point>& pts) {
  Real worst = 0;
  for (size_t p = 0; p < pts.size(); ++p)
    for (size_t i = 0; i < pts[p].size(); ++i) {
      Real rec = res.mean[i];
      for (int c = 0; c < 2; ++c)
        rec += res.coords[p][static_cast<size_t>(c)] * res.components[static_cast<size_t>(c)][i];
      worst = std::max(worst, std::abs(rec - pts[p][i]));
    }
  return worst;
}

// ---------------------------------------------------------------- pearson

// nullopt when fewer than 3 pairs or either side has (near-)zero variance
inline std::optional<double> pearson(const std::vector<double>& xs,
                                     const std::vector<double>& ys) {
  if (xs.size() != ys.size() || xs.size() < 3) return std::nullopt;
  const double n = static_cast<double>(xs.size());
  double mx = 0, my = 0;
  for (size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0, syy = 0, sxy = 0;
  for (size_t i = 0; i < xs.size(); ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    syy += (ys[i] - my) * (ys[i] - my);
    sxy += (xs[i] - mx) * (ys[i] - my);
  }
  if (sxx < 1e-30 || syy < 1e-30) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace dropnas::diag

#endif
