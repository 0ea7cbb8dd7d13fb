#ifndef DROPNAS_DROPSCHED_HPP
#define DROPNAS_DROPSCHED_HPP

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dropnas/core/errors.hpp"
#include "dropnas/core/rng.hpp"
#include "dropnas/space.hpp"

namespace dropnas {

// Per-op drop probability for a group of the given size: p_d = r^(1/size),
// so the chance of the whole group being dropped in one draw is exactly r.
inline Real drop_prob(Real r, int group_size) {
  if (!(r >= Real(0) && r < Real(1)))
    throw ConfigError("drop path rate must be in [0,1), got " + std::to_string(r));
  if (group_size < 1) throw ConfigError("group size must be positive");
  if (r == Real(0)) return Real(0);
  return std::pow(r, Real(1) / static_cast<Real>(group_size));
}

struct DropConfig {
  Real r = Real(3e-5);
  std::optional<Real> rate_p;   // per-group overrides; fall back to the
  std::optional<Real> rate_np;  // space-level override, then to r
  int resample_cap = 100;
  bool grouping = true;  // single group over all ops when false
};

struct DropMask {
  std::vector<std::uint8_t> keep;

  bool all_kept() const {
    for (std::uint8_t k : keep)
      if (!k) return false;
    return true;
  }
  int kept_count() const {
    int n = 0;
    for (std::uint8_t k : keep) n += k ? 1 : 0;
    return n;
  }
};

namespace detail {

// drop each op in the group independently; groups that come up empty are
// resampled (group-locally) up to the cap, then one op is force-kept
inline void sample_group(std::vector<std::uint8_t>& keep, const std::vector<int>& group,
                         Real p_d, int cap, RngStream& rng) {
  for (int attempt = 0; attempt < cap; ++attempt) {
    bool any = false;
    for (int idx : group) {
      const bool kept = !rng.bernoulli(p_d);
      keep[static_cast<size_t>(idx)] = kept ? 1 : 0;
      any = any || kept;
    }
    if (any) return;
  }
  for (int idx : group) keep[static_cast<size_t>(idx)] = 0;
  const int lucky = group[static_cast<size_t>(rng.uniform_int(group.size()))];
  keep[static_cast<size_t>(lucky)] = 1;
}

}  // namespace detail

inline Real effective_rate(const SearchSpace& space, const DropConfig& cfg, OpGroup g) {
  if (g == OpGroup::Parameterized)
    return cfg.rate_p ? *cfg.rate_p : (space.rate_p ? *space.rate_p : cfg.r);
  return cfg.rate_np ? *cfg.rate_np : (space.rate_np ? *space.rate_np : cfg.r);
}

inline DropMask sample_mask(const SearchSpace& space, const DropConfig& cfg, RngStream& rng) {
  DropMask mask;
  mask.keep.assign(static_cast<size_t>(space.size()), 1);
  if (cfg.grouping) {
    const Real pd_p =
        drop_prob(effective_rate(space, cfg, OpGroup::Parameterized),
                  static_cast<int>(space.param_idx.size()));
    const Real pd_np =
        drop_prob(effective_rate(space, cfg, OpGroup::NonParameterized),
                  static_cast<int>(space.nonparam_idx.size()));
    detail::sample_group(mask.keep, space.param_idx, pd_p, cfg.resample_cap, rng);
    detail::sample_group(mask.keep, space.nonparam_idx, pd_np, cfg.resample_cap, rng);
  } else {
    // ungrouped ablation: one group over all ops, p_d = r^(1/|O|)
    const Real pd = drop_prob(cfg.r, space.size());
    std::vector<int> all = space.all_indices();
    detail::sample_group(mask.keep, all, pd, cfg.resample_cap, rng);
  }
  return mask;
}

// keep-at-least-one per group (or overall when grouping is off)
inline bool mask_valid(const SearchSpace& space, const DropMask& mask, bool grouping = true) {
  if (static_cast<int>(mask.keep.size()) != space.size()) return false;
  auto group_ok = [&](const std::vector<int>& group) {
    for (int idx : group)
      if (mask.keep[static_cast<size_t>(idx)]) return true;
    return false;
  };
  if (!grouping) return mask.kept_count() >= 1;
  return group_ok(space.param_idx) && group_ok(space.nonparam_idx);
}

// Informational label for reports: which published search scheme a given
// per-op drop probability corresponds to.
inline std::string regime_of(Real p_d) {
  if (!(p_d >= Real(0) && p_d < Real(1)))
    throw ConfigError("p_d must be in [0,1)");
  const Real tol = Real(1e-12);
  if (std::abs(p_d - Real(0)) < tol) return "darts";
  if (std::abs(p_d - Real(0.75)) < tol) return "proxylessnas";
  if (std::abs(p_d - Real(0.875)) < tol) return "snas";
  return "dropnas";
}

}  // namespace dropnas

#endif
