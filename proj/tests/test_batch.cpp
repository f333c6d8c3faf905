#include <catch2/catch_amalgamated.hpp>

#include <atomic>
#include <string>
#include <vector>

#include "supfex/batch.hpp"
#include "supfex/oracle.hpp"
#include "testutil.hpp"

using namespace supfex;

namespace {

/// d=3 passthrough with margin h0+h1+h2 - 1.5: verified at label 0, and the
/// minimum sufficient set is any feature pair.
Network pair_net() {
  Network net;
  net.input_shape = {3};
  net.layers.push_back(Layer{Matrix::identity(3), Vector(3, 0.0),
                             Activation::relu});
  Matrix w(2, 3);
  for (std::size_t i = 0; i < 3; ++i) w(0, i) = 1.0;
  net.layers.push_back(Layer{std::move(w), {0.0, 1.5}, Activation::none});
  return net;
}

PropertyRecord verified_record(std::size_t supfex_count,
                               std::size_t thm2_count) {
  PropertyRecord r;
  r.verified = true;
  r.feature_count_full = 16;
  r.feature_count_thm2 = thm2_count;
  r.feature_count_supfex = supfex_count;
  return r;
}

}  // namespace

TEST_CASE("load_dataset_csv parses labels and pixels", "[batch]") {
  const Dataset ds = load_dataset_csv("1,0.5,0.25\n0,1,0\n\n7,0.125,1\n");
  REQUIRE(ds.size() == 3);
  CHECK(ds.dim() == 2);
  CHECK(ds.samples[0].label == 1);
  CHECK(ds.samples[0].pixels == Vector{0.5, 0.25});
  CHECK(ds.samples[1].pixels == Vector{1.0, 0.0});
  CHECK(ds.samples[2].label == 7);
}

TEST_CASE("load_dataset_csv tolerates windows line endings", "[batch]") {
  const Dataset ds = load_dataset_csv("2,0.5\r\n3,0.25\r\n");
  REQUIRE(ds.size() == 2);
  CHECK(ds.samples[0].label == 2);
  CHECK(ds.samples[1].pixels == Vector{0.25});
}

TEST_CASE("load_dataset_csv rejects malformed rows with line numbers",
          "[batch]") {
  SECTION("ragged width") {
    CHECK_THROWS_WITH(load_dataset_csv("0,0.5,0.5\n1,0.5\n"),
                      Catch::Matchers::ContainsSubstring("line 2"));
  }
  SECTION("trailing junk") {
    CHECK_THROWS_WITH(load_dataset_csv("0,0.5x\n"),
                      Catch::Matchers::ContainsSubstring("trailing junk"));
  }
  SECTION("not a number") {
    CHECK_THROWS_AS(load_dataset_csv("zero,0.5\n"), ParseError);
  }
  SECTION("fractional label") {
    CHECK_THROWS_AS(load_dataset_csv("1.5,0.5\n"), ParseError);
  }
  SECTION("negative label") {
    CHECK_THROWS_AS(load_dataset_csv("-1,0.5\n"), ParseError);
  }
  SECTION("pixel out of range") {
    CHECK_THROWS_AS(load_dataset_csv("0,1.5\n"), ParseError);
    CHECK_THROWS_AS(load_dataset_csv("0,-0.25\n"), ParseError);
  }
  SECTION("non-finite pixel") {
    CHECK_THROWS_AS(load_dataset_csv("0,nan\n"), ParseError);
  }
  SECTION("label without pixels") {
    CHECK_THROWS_AS(load_dataset_csv("3\n"), ParseError);
  }
}

TEST_CASE("batch_run produces one deterministic record per attempted image",
          "[batch]") {
  const Network net = pair_net();
  const Dataset ds = load_dataset_csv("0,1,1,1\n0,1,1,1\n0,1,1,1\n");

  const BatchResult res = batch_run(net, ds, 0.0, Domain::deepz, 10);
  REQUIRE(res.records.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    const PropertyRecord& r = res.records[i];
    CHECK(r.image_index == i);
    CHECK(r.verified);
    CHECK(r.lambda == 1.5);
    CHECK(r.feature_count_full == 3);
    CHECK(r.feature_count_thm2 == 2);
    CHECK(r.feature_count_supfex == 2);
    CHECK(r.kept_indices == std::vector<std::size_t>{0, 1});
    CHECK(r.verifier_calls == 4);
    CHECK_FALSE(r.bias_sufficient);
  }
  CHECK(res.summary.proved_count == 3);
  CHECK(res.summary.mean_supfex == 2.0);

  // The frozen kept pair is also what exhaustive enumeration finds minimal.
  const InputRegion region = build_region({1.0, 1.0, 1.0}, 0.0);
  const auto min_set = exhaustive_min_sufficient(
      net, region, robustness_property(2, 0), Domain::deepz);
  REQUIRE(min_set.has_value());
  CHECK(min_set->size() == 2);
}

TEST_CASE("batch_run skips misclassified images", "[batch]") {
  const Network net = pair_net();
  // Scores are (3, 1.5): label 1 is a misclassification, label 0 is not.
  const Dataset ds = load_dataset_csv("1,1,1,1\n0,1,1,1\n");
  const BatchResult res = batch_run(net, ds, 0.0, Domain::ibp, 10);
  REQUIRE(res.records.size() == 1);
  CHECK(res.records[0].image_index == 1);
  CHECK(res.summary.considered == 2);
  CHECK(res.summary.misclassified == 1);
  CHECK(res.summary.attempted == 1);
}

TEST_CASE("batch_run honors the count limit and empty runs", "[batch]") {
  const Network net = pair_net();
  const Dataset ds = load_dataset_csv("0,1,1,1\n0,1,1,1\n0,1,1,1\n");
  const BatchResult res = batch_run(net, ds, 0.0, Domain::deepz, 2);
  CHECK(res.records.size() == 2);
  CHECK(res.summary.considered == 2);

  const BatchResult empty = batch_run(net, ds, 0.0, Domain::deepz, 0);
  CHECK(empty.records.empty());
  CHECK(empty.summary.considered == 0);
  CHECK(empty.summary.proved_count == 0);
  CHECK(empty.summary.mean_supfex == 0.0);
}

TEST_CASE("batch_run validates dataset geometry", "[batch]") {
  const Network net = pair_net();
  CHECK_THROWS_AS(
      batch_run(net, load_dataset_csv("0,1,1\n"), 0.0, Domain::ibp, 1),
      ShapeError);
  CHECK_THROWS_AS(
      batch_run(net, load_dataset_csv("5,1,1,1\n"), 0.0, Domain::ibp, 1),
      ValidationError);
}

TEST_CASE("parallel batches match serial ones and keep input order",
          "[batch]") {
  testutil::Rng rng(81);
  const Network net = testutil::random_network(rng, {4, 8, 6, 3});
  std::string csv;
  for (int i = 0; i < 24; ++i) {
    const Vector x = testutil::random_image(rng, 4);
    csv += std::to_string(i % 3);
    for (double v : x) csv += "," + std::to_string(v);
    csv += "\n";
  }
  const Dataset ds = load_dataset_csv(csv);

  const BatchResult serial = batch_run(net, ds, 0.01, Domain::deepz, 24, 1);
  const BatchResult parallel = batch_run(net, ds, 0.01, Domain::deepz, 24, 4);
  REQUIRE(serial.records.size() == parallel.records.size());
  for (std::size_t i = 0; i < serial.records.size(); ++i) {
    CHECK(serial.records[i].image_index == parallel.records[i].image_index);
    CHECK(serial.records[i].lambda == parallel.records[i].lambda);
    CHECK(serial.records[i].kept_indices == parallel.records[i].kept_indices);
    CHECK(serial.records[i].verified == parallel.records[i].verified);
  }

  nlohmann::ordered_json ja = nlohmann::ordered_json::array();
  nlohmann::ordered_json jb = nlohmann::ordered_json::array();
  for (const PropertyRecord& r : serial.records) ja.push_back(record_to_json(r));
  for (const PropertyRecord& r : parallel.records)
    jb.push_back(record_to_json(r));
  CHECK(ja.dump() == jb.dump());

  // Invariant on every verified record: kept <= bound <= width.
  for (const PropertyRecord& r : serial.records) {
    if (!r.verified) continue;
    CHECK(r.feature_count_supfex <= r.feature_count_thm2);
    CHECK(r.feature_count_thm2 <= r.feature_count_full);
  }
}

TEST_CASE("parallel_for propagates the first worker exception", "[batch]") {
  std::atomic<int> ran{0};
  CHECK_THROWS_AS(detail::parallel_for(100, 4,
                                       [&](std::size_t i) {
                                         ran.fetch_add(1);
                                         if (i == 7)
                                           throw ValidationError("boom");
                                       }),
                  ValidationError);
  CHECK(ran.load() >= 1);
}

TEST_CASE("summarize reference cases", "[batch]") {
  SECTION("odd and even medians over verified records only") {
    std::vector<PropertyRecord> recs = {
        verified_record(1, 4), verified_record(2, 6), verified_record(4, 8)};
    PropertyRecord failed;
    failed.verified = false;
    failed.feature_count_supfex = 99;
    recs.push_back(failed);

    const BatchSummary odd = summarize(recs, 5, 1);
    CHECK(odd.considered == 5);
    CHECK(odd.misclassified == 1);
    CHECK(odd.attempted == 4);
    CHECK(odd.proved_count == 3);
    CHECK(odd.median_supfex == 2.0);
    CHECK(odd.median_thm2 == 6.0);
    CHECK_THAT(odd.mean_supfex,
               Catch::Matchers::WithinAbs(7.0 / 3.0, 1e-12));

    recs.push_back(verified_record(10, 12));
    const BatchSummary even = summarize(recs, 6, 1);
    CHECK(even.median_supfex == 3.0);  // (2 + 4) / 2
    CHECK(even.median_thm2 == 7.0);
  }
  SECTION("threshold counters and histogram") {
    const std::vector<PropertyRecord> recs = {
        verified_record(2, 3), verified_record(2, 3), verified_record(3, 4),
        verified_record(8, 9), verified_record(12, 14)};
    const BatchSummary s = summarize(recs, 5, 0);
    CHECK(s.kept_le5 == 3);
    CHECK(s.kept_le10 == 4);
    REQUIRE(s.kept_histogram.size() == 4);
    CHECK(s.kept_histogram.at(2) == 2);
    CHECK(s.kept_histogram.at(3) == 1);
    CHECK(s.kept_histogram.at(8) == 1);
    CHECK(s.kept_histogram.at(12) == 1);
    CHECK(histogram_csv(s) == "size,count\n2,2\n3,1\n8,1\n12,1\n");
  }
}

TEST_CASE("report json carries the full record", "[batch]") {
  const Network net = pair_net();
  const Dataset ds = load_dataset_csv("0,1,1,1\n");
  const BatchResult res = batch_run(net, ds, 0.0, Domain::deepz, 1);
  REQUIRE(res.records.size() == 1);

  const nlohmann::ordered_json j = record_to_json(res.records[0]);
  CHECK(j.at("image_index") == 0);
  CHECK(j.at("label") == 0);
  CHECK(j.at("epsilon") == 0.0);
  CHECK(j.at("domain") == "deepz");
  CHECK(j.at("verified") == true);
  CHECK(j.at("lambda") == 1.5);
  CHECK(j.at("feature_count_full") == 3);
  CHECK(j.at("feature_count_thm2") == 2);
  CHECK(j.at("feature_count_supfex") == 2);
  CHECK(j.at("verifier_calls") == 4);
  CHECK(j.at("kept_indices") == nlohmann::ordered_json({0, 1}));
  CHECK(j.at("bias_sufficient") == false);

  const nlohmann::ordered_json s = summary_to_json(res.summary);
  CHECK(s.at("proved_count") == 1);
  CHECK(s.at("kept_histogram")[0].at("size") == 2);

  const nlohmann::ordered_json env =
      report_envelope("batch", net, {{"epsilon", 0.0}});
  CHECK(env.at("tool") == "supfex");
  CHECK(env.at("version") == std::string(kToolVersion));
  CHECK(env.at("command") == "batch");
  CHECK(env.at("network") == net.name);
  CHECK(env.at("flags").at("epsilon") == 0.0);
}

TEST_CASE("compare_run aggregates per-image agreement", "[batch]") {
  const Network net = pair_net();
  const Dataset ds = load_dataset_csv("0,1,1,1\n1,1,1,1\n");
  const CompareRunResult res = compare_run(net, ds, 0.0, 10);
  CHECK(res.considered == 2);
  CHECK(res.misclassified == 1);
  REQUIRE(res.records.size() == 1);
  CHECK(res.records[0].image_index == 0);
  REQUIRE_FALSE(res.records[0].result.skipped());
  CHECK(res.summary.total == 1);
  CHECK(res.summary.compared == 1);
  CHECK(res.summary.pct_same_full_set == 100.0);
}

TEST_CASE("agreement summaries serialize every column", "[batch]") {
  AgreementSummary s;
  s.total = 10;
  s.ibp_verified = 6;
  s.deepz_verified = 8;
  s.compared = 5;
  s.pct_same_top1 = 80.0;
  s.pct_same_top5 = 60.0;
  s.pct_same_full_set = 40.0;
  const nlohmann::ordered_json j = agreement_to_json(s);
  CHECK(j.at("total") == 10);
  CHECK(j.at("ibp_verified") == 6);
  CHECK(j.at("deepz_verified") == 8);
  CHECK(j.at("compared") == 5);
  CHECK(j.at("pct_same_top1") == 80.0);
  CHECK(j.at("pct_same_top5") == 60.0);
  CHECK(j.at("pct_same_full_set") == 40.0);
}
