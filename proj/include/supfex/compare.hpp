#pragma once

#include <algorithm>
#include <cstddef>
#include <optional>
#include <vector>

#include "supfex/supfex.hpp"

namespace supfex {

/// How two verifiers' kept feature sets relate for one property.
struct ProofAgreement {
  bool same_top1 = false;
  bool same_top5 = false;
  bool same_full_set = false;
  std::size_t size_a = 0;
  std::size_t size_b = 0;
};

/// One property run under both domains. `agreement` is set only when both
/// proofs exist; otherwise the record is skipped for agreement statistics.
struct CompareRecord {
  SupfexOutcome ibp;
  SupfexOutcome deepz;
  std::optional<ProofAgreement> agreement;

  bool skipped() const { return !agreement.has_value(); }
};

namespace detail {

/// Kept features ranked by the outcome's own priorities, truncated to k.
/// Ties broken by neuron index, matching the extraction order.
inline std::vector<std::size_t> top_kept(const SupfexOutcome& o,
                                         std::size_t k) {
  std::vector<std::size_t> s = o.kept;
  std::sort(s.begin(), s.end(), [&](std::size_t a, std::size_t b) {
    const double pa = o.features[a].priority;
    const double pb = o.features[b].priority;
    if (pa != pb) return pa > pb;
    return a < b;
  });
  if (s.size() > k) s.resize(k);
  std::sort(s.begin(), s.end());  // set comparison is order-free
  return s;
}

}  // namespace detail

/// Each side contributes its top-k kept features (all of them when it has
/// fewer than k); the truncated sets are compared as unordered sets.
inline bool same_top_features(const SupfexOutcome& a, const SupfexOutcome& b,
                              std::size_t k) {
  return detail::top_kept(a, k) == detail::top_kept(b, k);
}

inline ProofAgreement agree(const SupfexOutcome& a, const SupfexOutcome& b) {
  ProofAgreement pa;
  pa.size_a = a.kept.size();
  pa.size_b = b.kept.size();
  pa.same_top1 = same_top_features(a, b, 1);
  pa.same_top5 = same_top_features(a, b, 5);
  std::vector<std::size_t> sa = a.kept, sb = b.kept;
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  pa.same_full_set = sa == sb;
  return pa;
}

inline CompareRecord compare_verifiers(const Network& net,
                                       const InputRegion& region,
                                       const Property& prop,
                                       const SupfexOptions& opts = {}) {
  CompareRecord rec;
  rec.ibp = supfex_extract(net, region, prop, Domain::ibp, opts);
  rec.deepz = supfex_extract(net, region, prop, Domain::deepz, opts);
  if (rec.ibp.verified && rec.deepz.verified)
    rec.agreement = agree(rec.ibp, rec.deepz);
  return rec;
}

struct AgreementSummary {
  std::size_t total = 0;
  std::size_t ibp_verified = 0;
  std::size_t deepz_verified = 0;
  std::size_t compared = 0;  // verified by both; the percentage denominator
  double pct_same_top1 = 0.0;
  double pct_same_top5 = 0.0;
  double pct_same_full_set = 0.0;
};

inline AgreementSummary aggregate_agreement(
    const std::vector<CompareRecord>& records) {
  AgreementSummary s;
  s.total = records.size();
  std::size_t top1 = 0, top5 = 0, full = 0;
  for (const CompareRecord& r : records) {
    if (r.ibp.verified) ++s.ibp_verified;
    if (r.deepz.verified) ++s.deepz_verified;
    if (r.skipped()) continue;
    ++s.compared;
    if (r.agreement->same_top1) ++top1;
    if (r.agreement->same_top5) ++top5;
    if (r.agreement->same_full_set) ++full;
  }
  if (s.compared > 0) {
    s.pct_same_top1 = 100.0 * double(top1) / double(s.compared);
    s.pct_same_top5 = 100.0 * double(top5) / double(s.compared);
    s.pct_same_full_set = 100.0 * double(full) / double(s.compared);
  }
  return s;
}

}  // namespace supfex
