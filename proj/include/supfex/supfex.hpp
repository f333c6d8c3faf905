#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "supfex/verifier.hpp"

namespace supfex {

/// One penultimate neuron's verifier-derived output interval together with
/// the computable upper bound on its influence on the certified margin.
struct ProofFeature {
  std::size_t neuron = 0;
  double lo = 0.0;
  double hi = 0.0;
  double priority = 0.0;
};

struct ProofFeatureSet {
  std::vector<ProofFeature> features;  // one per neuron, by neuron index

  std::size_t size() const { return features.size(); }
  const ProofFeature& operator[](std::size_t i) const { return features[i]; }

  double max_priority() const {
    double m = 0.0;
    for (const ProofFeature& f : features) m = std::max(m, f.priority);
    return m;
  }
};

/// Neuron indices ordered by decreasing priority, ties by lower index.
inline std::vector<std::size_t> ranked_indices(const ProofFeatureSet& fs) {
  std::vector<std::size_t> order(fs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (fs[a].priority != fs[b].priority)
      return fs[a].priority > fs[b].priority;
    return a < b;
  });
  return order;
}

/// priority_i = max_j |c_j^T W_l[:,i]| * max(|lo_i|, |hi_i|), the bound on
/// how much pruning feature i can move any row's margin.
inline ProofFeatureSet compute_priorities(const Analysis& analysis,
                                          const Network& net,
                                          const Property& prop) {
  const Layer& fin = net.decision_layer();
  const std::size_t d = net.penultimate_dim();
  ProofFeatureSet fs;
  fs.features.resize(d);
  for (std::size_t i = 0; i < d; ++i) {
    ProofFeature& f = fs.features[i];
    f.neuron = i;
    f.lo = analysis.features.lo[i];
    f.hi = analysis.features.hi[i];
    double coef = 0.0;
    for (std::size_t j = 0; j < prop.num_rows(); ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < fin.out_dim(); ++k)
        acc += prop.rows(j, k) * fin.weights(k, i);
      coef = std::max(coef, std::abs(acc));
    }
    f.priority = coef * std::max(std::abs(f.lo), std::abs(f.hi));
  }
  return fs;
}

/// |Lambda(S) - Lambda(S \ {i})| via two cached-element evaluations.
inline double compute_delta(const Analysis& analysis, const Network& net,
                            const Property& prop,
                            std::span<const std::size_t> s, std::size_t i) {
  std::vector<std::size_t> with(s.begin(), s.end());
  if (std::find(with.begin(), with.end(), i) == with.end())
    throw IndexError("delta: feature " + std::to_string(i) +
                     " not in the set");
  std::vector<std::size_t> without;
  without.reserve(with.size() - 1);
  for (std::size_t k : with)
    if (k != i) without.push_back(k);
  const double a = check_property(analysis, net, prop, with).lambda;
  const double b = check_property(analysis, net, prop, without).lambda;
  return std::abs(a - b);
}

/// delta(F_S) = |Lambda(full) - Lambda(S)|.
inline double delta_set(const Analysis& analysis, const Network& net,
                        const Property& prop,
                        std::span<const std::size_t> s) {
  const double full =
      check_property(analysis, net, prop).lambda;
  const double pruned = check_property(analysis, net, prop, s).lambda;
  return std::abs(full - pruned);
}

/// Features whose priority is (up to `threshold`, default exactly) zero.
/// They can never move the margin and are always prunable.
inline std::vector<std::size_t> zero_features(const ProofFeatureSet& fs,
                                              double threshold = 0.0) {
  std::vector<std::size_t> out;
  for (const ProofFeature& f : fs.features)
    if (f.priority <= threshold) out.push_back(f.neuron);
  return out;
}

/// Upper bound on the kept-set size: d - |Z(F)| - floor(lambda / P_max),
/// clamped at zero. When every priority is zero the empty set is sufficient
/// and the bound is zero.
inline std::size_t theorem2_bound(const ProofFeatureSet& fs,
                                  double lambda_full,
                                  double zero_threshold = 0.0) {
  if (!(lambda_full >= 0.0))
    throw ValidationError("bound: lambda must be >= 0");
  const double pmax = fs.max_priority();
  if (pmax == 0.0) return 0;
  const std::size_t d = fs.size();
  const std::size_t zeros = zero_features(fs, zero_threshold).size();
  const double slack = std::floor(lambda_full / pmax);
  if (slack >= double(d - zeros)) return 0;
  return d - zeros - std::size_t(slack);
}

struct SupfexOptions {
  double zero_threshold = 0.0;
  // Re-check that S0 union S stays sufficient at every iteration head.
  // Diagnostic only; the extra checks are not counted as verifier calls.
  bool check_loop_invariant = false;
};

struct SupfexOutcome {
  bool verified = false;           // full property verified before pruning
  std::vector<std::size_t> kept;   // S_0, sorted by neuron index
  std::size_t verifier_calls = 0;  // including the initial full check
  double lambda_full = 0.0;
  std::size_t bound_thm2 = 0;
  std::size_t zero_count = 0;
  bool bias_sufficient = false;    // property holds with every feature pruned
  ProofFeatureSet features;        // full-network features with priorities
};

/// Iterative-halving search for a small sufficient feature set. Keeps two
/// sets: S0 (committed) and S (candidates, ordered by priority). Each round
/// checks whether S0 plus the top half of S suffices; if so the bottom half
/// is pruned, otherwise the top half is committed and the bottom half becomes
/// the candidate pool. One property check per round.
inline SupfexOutcome supfex_extract(const Network& net,
                                    const InputRegion& region,
                                    const Property& prop, Domain domain,
                                    const SupfexOptions& opts = {}) {
  SupfexOutcome out;
  const Analysis analysis = analyze(net, region, domain);
  const VerificationResult full = check_property(analysis, net, prop);
  out.verifier_calls = 1;
  out.lambda_full = full.lambda;
  if (!full.verified) return out;

  out.verified = true;
  out.features = compute_priorities(analysis, net, prop);
  out.zero_count = zero_features(out.features, opts.zero_threshold).size();
  out.bound_thm2 =
      theorem2_bound(out.features, full.lambda, opts.zero_threshold);

  // S stays a contiguous window of the priority order throughout: both
  // update rules replace it with one of its halves.
  const std::vector<std::size_t> order = ranked_indices(out.features);
  std::vector<std::size_t> committed;  // S_0
  std::size_t begin = 0, end = order.size();

  auto sufficient = [&](std::size_t half_end) {
    std::vector<std::size_t> trial = committed;
    trial.insert(trial.end(), order.begin() + std::ptrdiff_t(begin),
                 order.begin() + std::ptrdiff_t(half_end));
    return check_property(analysis, net, prop, trial).verified;
  };

  while (begin < end) {
    if (opts.check_loop_invariant) {
      std::vector<std::size_t> all = committed;
      all.insert(all.end(), order.begin() + std::ptrdiff_t(begin),
                 order.begin() + std::ptrdiff_t(end));
      if (!check_property(analysis, net, prop, all).verified)
        throw Error("supfex: loop invariant broken (S0 u S not sufficient)");
    }
    const std::size_t size = end - begin;
    if (size == 1) {
      // Top half is empty; decide the last candidate directly.
      ++out.verifier_calls;
      if (sufficient(begin)) {
        // S0 alone suffices, the final feature is pruned.
      } else {
        committed.push_back(order[begin]);
      }
      begin = end;
      break;
    }
    const std::size_t mid = begin + size / 2;  // top floor(|S|/2) by priority
    ++out.verifier_calls;
    if (sufficient(mid)) {
      end = mid;  // prune the bottom half
    } else {
      committed.insert(committed.end(), order.begin() + std::ptrdiff_t(begin),
                       order.begin() + std::ptrdiff_t(mid));
      begin = mid;
    }
  }

  out.kept = committed;
  std::sort(out.kept.begin(), out.kept.end());
  out.bias_sufficient = out.kept.empty();
  return out;
}

}  // namespace supfex
