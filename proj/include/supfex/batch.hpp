#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "supfex/compare.hpp"
#include "supfex/supfex.hpp"

namespace supfex {

inline constexpr const char* kToolVersion = "0.1.0";

struct Sample {
  std::size_t label = 0;
  Vector pixels;
};

struct Dataset {
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }
  std::size_t dim() const {
    return samples.empty() ? 0 : samples.front().pixels.size();
  }
};

/// CSV rows of `label, pixel_0, ..., pixel_{d-1}` with pixels in [0, 1].
inline Dataset load_dataset_csv(const std::string& text) {
  Dataset ds;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string ctx = "dataset: line " + std::to_string(lineno);
    Sample s;
    std::istringstream cells(line);
    std::string cell;
    bool first = true;
    while (std::getline(cells, cell, ',')) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(cell, &used);
      } catch (const std::exception&) {
        throw ParseError(ctx + ": not a number: \"" + cell + "\"");
      }
      while (used < cell.size() &&
             (cell[used] == ' ' || cell[used] == '\t'))
        ++used;
      if (used != cell.size())
        throw ParseError(ctx + ": trailing junk in \"" + cell + "\"");
      if (!std::isfinite(v)) throw ParseError(ctx + ": non-finite value");
      if (first) {
        if (v < 0.0 || v != double(std::size_t(v)))
          throw ParseError(ctx + ": label must be a non-negative integer");
        s.label = std::size_t(v);
        first = false;
      } else {
        if (v < 0.0 || v > 1.0)
          throw ParseError(ctx + ": pixel outside [0, 1]");
        s.pixels.push_back(v);
      }
    }
    if (first) throw ParseError(ctx + ": empty row");
    if (s.pixels.empty()) throw ParseError(ctx + ": row has no pixels");
    if (!ds.samples.empty() && s.pixels.size() != ds.dim())
      throw ParseError(ctx + ": row width " + std::to_string(s.pixels.size()) +
                       " differs from first row " + std::to_string(ds.dim()));
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

/// One robustness property's outcome, ready for reporting.
struct PropertyRecord {
  std::size_t image_index = 0;
  std::size_t label = 0;
  double epsilon = 0.0;
  Domain domain = Domain::ibp;
  bool verified = false;
  double lambda = 0.0;
  std::size_t feature_count_full = 0;
  std::size_t feature_count_thm2 = 0;
  std::size_t feature_count_supfex = 0;
  std::size_t verifier_calls = 0;
  std::vector<std::size_t> kept_indices;
  bool bias_sufficient = false;
};

inline PropertyRecord make_record(std::size_t image_index, std::size_t label,
                                  double epsilon, Domain domain,
                                  const Network& net,
                                  const SupfexOutcome& out) {
  PropertyRecord r;
  r.image_index = image_index;
  r.label = label;
  r.epsilon = epsilon;
  r.domain = domain;
  r.verified = out.verified;
  r.lambda = out.lambda_full;
  r.feature_count_full = net.penultimate_dim();
  r.feature_count_thm2 = out.bound_thm2;
  r.feature_count_supfex = out.kept.size();
  r.verifier_calls = out.verifier_calls;
  r.kept_indices = out.kept;
  r.bias_sufficient = out.bias_sufficient;
  return r;
}

struct BatchSummary {
  std::size_t considered = 0;     // images taken from the dataset
  std::size_t misclassified = 0;  // skipped: no property to verify
  std::size_t attempted = 0;
  std::size_t proved_count = 0;
  double mean_thm2 = 0.0;
  double median_thm2 = 0.0;
  double mean_supfex = 0.0;
  double median_supfex = 0.0;
  std::size_t kept_le5 = 0;
  std::size_t kept_le10 = 0;
  std::map<std::size_t, std::size_t> kept_histogram;  // size -> proofs
};

namespace detail {

inline double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / double(v.size());
}

inline double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t mid = v.size() / 2;
  if (v.size() % 2 == 1) return v[mid];
  return (v[mid - 1] + v[mid]) / 2.0;
}

/// Run fn(i) for i in [0, n) on up to `jobs` threads; the first exception
/// wins and is rethrown after all workers stop.
template <typename Fn>
inline void parallel_for(std::size_t n, std::size_t jobs, Fn&& fn) {
  if (jobs < 1) jobs = 1;
  jobs = std::min(jobs, n);
  if (jobs <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        next.store(n);
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(jobs);
  for (std::size_t t = 0; t < jobs; ++t) pool.emplace_back(worker);
  for (std::thread& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace detail

inline BatchSummary summarize(const std::vector<PropertyRecord>& records,
                              std::size_t considered,
                              std::size_t misclassified) {
  BatchSummary s;
  s.considered = considered;
  s.misclassified = misclassified;
  s.attempted = records.size();
  std::vector<double> thm2, kept;
  for (const PropertyRecord& r : records) {
    if (!r.verified) continue;
    ++s.proved_count;
    thm2.push_back(double(r.feature_count_thm2));
    kept.push_back(double(r.feature_count_supfex));
    if (r.feature_count_supfex <= 5) ++s.kept_le5;
    if (r.feature_count_supfex <= 10) ++s.kept_le10;
    ++s.kept_histogram[r.feature_count_supfex];
  }
  s.mean_thm2 = detail::mean_of(thm2);
  s.median_thm2 = detail::median_of(thm2);
  s.mean_supfex = detail::mean_of(kept);
  s.median_supfex = detail::median_of(kept);
  return s;
}

struct BatchResult {
  std::vector<PropertyRecord> records;  // input order, attempted images only
  BatchSummary summary;
};

/// Verify + extract for the first `count` dataset images (all when count is
/// larger). Images the network misclassifies carry no property and are
/// skipped; everything else yields one record, in dataset order.
inline BatchResult batch_run(const Network& net, const Dataset& ds,
                             double epsilon, Domain domain, std::size_t count,
                             std::size_t jobs = 1,
                             const SupfexOptions& opts = {}) {
  const std::size_t n = std::min(count, ds.size());
  std::vector<std::optional<PropertyRecord>> slots(n);
  detail::parallel_for(n, jobs, [&](std::size_t i) {
    const Sample& sample = ds.samples[i];
    if (sample.pixels.size() != net.input_dim())
      throw ShapeError("batch: image " + std::to_string(i) + " has " +
                       std::to_string(sample.pixels.size()) +
                       " pixels, network expects " +
                       std::to_string(net.input_dim()));
    if (sample.label >= net.output_dim())
      throw ValidationError("batch: image " + std::to_string(i) + " label " +
                            std::to_string(sample.label) + " out of range");
    const Vector scores = forward(net, sample.pixels);
    const std::size_t predicted = std::size_t(
        std::max_element(scores.begin(), scores.end()) - scores.begin());
    if (predicted != sample.label) return;  // misclassified: skip
    const InputRegion region = build_region(sample.pixels, epsilon);
    const Property prop = robustness_property(net.output_dim(), sample.label);
    const SupfexOutcome out = supfex_extract(net, region, prop, domain, opts);
    slots[i] = make_record(i, sample.label, epsilon, domain, net, out);
  });

  BatchResult res;
  std::size_t misclassified = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (slots[i])
      res.records.push_back(std::move(*slots[i]));
    else
      ++misclassified;
  }
  res.summary = summarize(res.records, n, misclassified);
  return res;
}

struct CompareRunRecord {
  std::size_t image_index = 0;
  std::size_t label = 0;
  CompareRecord result;
};

struct CompareRunResult {
  std::vector<CompareRunRecord> records;  // attempted images only
  AgreementSummary summary;
  std::size_t considered = 0;
  std::size_t misclassified = 0;
};

inline CompareRunResult compare_run(const Network& net, const Dataset& ds,
                                    double epsilon, std::size_t count,
                                    std::size_t jobs = 1,
                                    const SupfexOptions& opts = {}) {
  const std::size_t n = std::min(count, ds.size());
  std::vector<std::optional<CompareRunRecord>> slots(n);
  detail::parallel_for(n, jobs, [&](std::size_t i) {
    const Sample& sample = ds.samples[i];
    if (sample.pixels.size() != net.input_dim())
      throw ShapeError("compare: image " + std::to_string(i) + " has " +
                       std::to_string(sample.pixels.size()) +
                       " pixels, network expects " +
                       std::to_string(net.input_dim()));
    if (sample.label >= net.output_dim())
      throw ValidationError("compare: image " + std::to_string(i) +
                            " label " + std::to_string(sample.label) +
                            " out of range");
    const Vector scores = forward(net, sample.pixels);
    const std::size_t predicted = std::size_t(
        std::max_element(scores.begin(), scores.end()) - scores.begin());
    if (predicted != sample.label) return;
    const InputRegion region = build_region(sample.pixels, epsilon);
    const Property prop = robustness_property(net.output_dim(), sample.label);
    CompareRunRecord rec;
    rec.image_index = i;
    rec.label = sample.label;
    rec.result = compare_verifiers(net, region, prop, opts);
    slots[i] = std::move(rec);
  });

  CompareRunResult res;
  res.considered = n;
  for (std::size_t i = 0; i < n; ++i) {
    if (slots[i])
      res.records.push_back(std::move(*slots[i]));
    else
      ++res.misclassified;
  }
  std::vector<CompareRecord> bare;
  bare.reserve(res.records.size());
  for (const CompareRunRecord& r : res.records) bare.push_back(r.result);
  res.summary = aggregate_agreement(bare);
  return res;
}

// ---- report emission ----

inline nlohmann::ordered_json record_to_json(const PropertyRecord& r) {
  nlohmann::ordered_json j;
  j["image_index"] = r.image_index;
  j["label"] = r.label;
  j["epsilon"] = r.epsilon;
  j["domain"] = domain_name(r.domain);
  j["verified"] = r.verified;
  j["lambda"] = r.lambda;
  j["feature_count_full"] = r.feature_count_full;
  j["feature_count_thm2"] = r.feature_count_thm2;
  j["feature_count_supfex"] = r.feature_count_supfex;
  j["verifier_calls"] = r.verifier_calls;
  j["kept_indices"] = r.kept_indices;
  j["bias_sufficient"] = r.bias_sufficient;
  return j;
}

inline nlohmann::ordered_json summary_to_json(const BatchSummary& s) {
  nlohmann::ordered_json j;
  j["considered"] = s.considered;
  j["misclassified"] = s.misclassified;
  j["attempted"] = s.attempted;
  j["proved_count"] = s.proved_count;
  j["mean_thm2"] = s.mean_thm2;
  j["median_thm2"] = s.median_thm2;
  j["mean_supfex"] = s.mean_supfex;
  j["median_supfex"] = s.median_supfex;
  j["kept_le5"] = s.kept_le5;
  j["kept_le10"] = s.kept_le10;
  nlohmann::ordered_json hist = nlohmann::ordered_json::array();
  for (const auto& [size, cnt] : s.kept_histogram)
    hist.push_back({{"size", size}, {"count", cnt}});
  j["kept_histogram"] = hist;
  return j;
}

inline nlohmann::ordered_json agreement_to_json(const AgreementSummary& s) {
  nlohmann::ordered_json j;
  j["total"] = s.total;
  j["ibp_verified"] = s.ibp_verified;
  j["deepz_verified"] = s.deepz_verified;
  j["compared"] = s.compared;
  j["pct_same_top1"] = s.pct_same_top1;
  j["pct_same_top5"] = s.pct_same_top5;
  j["pct_same_full_set"] = s.pct_same_full_set;
  return j;
}

/// Common report envelope: every report names the tool version, the network,
/// and the flags that produced it, so runs are reproducible from the file.
inline nlohmann::ordered_json report_envelope(
    const std::string& command, const Network& net,
    const nlohmann::ordered_json& flags) {
  nlohmann::ordered_json j;
  j["tool"] = "supfex";
  j["version"] = kToolVersion;
  j["command"] = command;
  j["network"] = net.name;
  j["flags"] = flags;
  return j;
}

inline std::string histogram_csv(const BatchSummary& s) {
  std::ostringstream out;
  out << "size,count\n";
  for (const auto& [size, cnt] : s.kept_histogram)
    out << size << "," << cnt << "\n";
  return out.str();
}

}  // namespace supfex
