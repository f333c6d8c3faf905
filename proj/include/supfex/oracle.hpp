#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "supfex/interpret.hpp"
#include "supfex/supfex.hpp"
#include "supfex/verifier.hpp"

namespace supfex {

/// Smallest nonempty feature set that keeps the property verified, found by
/// enumerating subsets in increasing cardinality (lexicographic within each
/// size). Returns nothing when no subset works. Exponential; guarded.
inline std::optional<std::vector<std::size_t>> exhaustive_min_sufficient(
    const Network& net, const InputRegion& region, const Property& prop,
    Domain domain) {
  const std::size_t d = net.penultimate_dim();
  if (d > 20)
    throw GuardError("oracle: refusing exhaustive search over width " +
                     std::to_string(d) + " (limit 20)");
  const Analysis analysis = analyze(net, region, domain);

  std::vector<std::size_t> subset;
  for (std::size_t k = 1; k <= d; ++k) {
    subset.resize(k);
    for (std::size_t i = 0; i < k; ++i) subset[i] = i;
    while (true) {
      if (check_property(analysis, net, prop, subset).verified) return subset;
      // Advance to the next k-combination of 0..d-1.
      std::size_t pos = k;
      while (pos-- > 0) {
        if (subset[pos] + (k - pos) < d) {
          ++subset[pos];
          for (std::size_t j = pos + 1; j < k; ++j)
            subset[j] = subset[j - 1] + 1;
          break;
        }
        if (pos == 0) goto next_size;
      }
    }
  next_size:;
  }
  return std::nullopt;
}

/// Largest signed excursion of sampled concrete activations outside the
/// concretized per-layer bounds. Negative means strictly inside everywhere;
/// any positive value is a soundness violation.
inline double max_containment_violation(
    const Network& net, const std::vector<Vector>& samples,
    const std::vector<AbstractElement>& layers) {
  double worst = -std::numeric_limits<double>::infinity();
  for (const Vector& x : samples) {
    const std::vector<Vector> trace = forward_trace(net, x);
    for (std::size_t li = 0; li < layers.size(); ++li) {
      const IntervalVector box = concretize(layers[li]);
      const Vector& v = trace[li];
      for (std::size_t i = 0; i < v.size(); ++i) {
        worst = std::max(worst, box.lo[i] - v[i]);
        worst = std::max(worst, v[i] - box.hi[i]);
      }
    }
  }
  return worst;
}

inline double sampling_soundness(const Network& net, const InputRegion& region,
                                 Domain domain, std::size_t count,
                                 std::uint64_t seed) {
  const std::vector<AbstractElement> layers =
      propagate_all(net, region, domain);
  const std::vector<Vector> samples = sample_region(region, count, seed);
  return max_containment_violation(net, samples, layers);
}

/// Exact priority of feature i: the largest margin shift its removal causes
/// across every sufficient set containing it, by full enumeration.
inline double exact_priority(const Network& net, const InputRegion& region,
                             const Property& prop, Domain domain,
                             std::size_t i) {
  const std::size_t d = net.penultimate_dim();
  if (d > 12)
    throw GuardError("oracle: refusing priority enumeration over width " +
                     std::to_string(d) + " (limit 12)");
  if (i >= d)
    throw IndexError("oracle: neuron " + std::to_string(i) + " out of range");
  const Analysis analysis = analyze(net, region, domain);

  bool any = false;
  double best = 0.0;
  const std::size_t masks = std::size_t(1) << d;
  for (std::size_t m = 0; m < masks; ++m) {
    if (!(m & (std::size_t(1) << i))) continue;
    std::vector<std::size_t> s;
    for (std::size_t b = 0; b < d; ++b)
      if (m & (std::size_t(1) << b)) s.push_back(b);
    if (!check_property(analysis, net, prop, s).verified) continue;
    any = true;
    best = std::max(best, compute_delta(analysis, net, prop, s, i));
  }
  if (!any)
    throw ValidationError("oracle: no sufficient set contains neuron " +
                          std::to_string(i));
  return best;
}

}  // namespace supfex
