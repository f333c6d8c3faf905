#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "supfex/oracle.hpp"
#include "supfex/supfex.hpp"
#include "testutil.hpp"

using namespace supfex;

namespace {

/// Identity-hidden-layer net: penultimate activations equal the (clipped)
/// inputs, so feature intervals can be dialed in through the region.
Network passthrough_net(Matrix decision_weights, Vector decision_bias) {
  Network net;
  const std::size_t d = decision_weights.cols();
  net.input_shape = {d};
  net.layers.push_back(Layer{Matrix::identity(d), Vector(d, 0.0),
                             Activation::relu});
  net.layers.push_back(Layer{std::move(decision_weights),
                             std::move(decision_bias), Activation::none});
  return net;
}

ProofFeatureSet make_features(const std::vector<double>& priorities) {
  ProofFeatureSet fs;
  fs.features.resize(priorities.size());
  for (std::size_t i = 0; i < priorities.size(); ++i) {
    fs.features[i].neuron = i;
    fs.features[i].priority = priorities[i];
  }
  return fs;
}

}  // namespace

TEST_CASE("compute_priorities reference cases", "[supfex]") {
  SECTION("column orthogonal to every row has priority exactly zero") {
    // c = (1,-1); the second decision column is (0.7, 0.7), so c.W[:,1] = 0.
    const Network net =
        passthrough_net(Matrix(2, 2, {1.0, 0.7, -1.0, 0.7}), {0.0, 0.0});
    const InputRegion region = build_region({0.5, 0.5}, 0.1);
    const Analysis a = analyze(net, region, Domain::deepz);
    const ProofFeatureSet fs =
        compute_priorities(a, net, robustness_property(2, 0));
    CHECK(fs[1].priority == 0.0);
    CHECK(fs[0].priority > 0.0);
  }
  SECTION("coefficient two with interval [-1, 3] gives priority six") {
    const Network net = passthrough_net(Matrix(2, 1, {1.0, -1.0}), {0.0, 0.0});
    Analysis a;
    a.features = IntervalVector{{-1.0}, {3.0}};
    const ProofFeatureSet fs =
        compute_priorities(a, net, robustness_property(2, 0));
    REQUIRE(fs.size() == 1);
    CHECK(fs[0].lo == -1.0);
    CHECK(fs[0].hi == 3.0);
    CHECK(fs[0].priority == 6.0);
  }
  SECTION("multi-row property takes the worst row") {
    // Rows (1,-1,0) and (1,0,-1) against a single penultimate neuron.
    const Network net =
        passthrough_net(Matrix(3, 1, {1.0, 0.5, -2.0}), {0.0, 0.0, 0.0});
    Analysis a;
    a.features = IntervalVector{{0.0}, {2.0}};
    const ProofFeatureSet fs =
        compute_priorities(a, net, robustness_property(3, 0));
    // |1-0.5| = 0.5 and |1-(-2)| = 3; max coefficient 3, times max(|0|,|2|).
    CHECK(fs[0].priority == 6.0);
  }
}

TEST_CASE("priority bounds the single-feature margin shift", "[supfex]") {
  testutil::Rng rng(51);
  std::size_t done = 0;
  while (done < 500) {
    const Network net = testutil::random_network(
        rng, testutil::random_widths(rng, 2, 3, 2, 6));
    if (net.output_dim() != 2) continue;  // single-row property
    ++done;
    const InputRegion region =
        testutil::random_region(rng, net.input_dim(), 0.03);
    const Property prop = testutil::predicted_class_property(net, region);
    const Analysis a = analyze(net, region, Domain::deepz);
    const ProofFeatureSet fs = compute_priorities(a, net, prop);
    const std::vector<std::size_t> full =
        all_features(net.penultimate_dim());
    for (std::size_t i = 0; i < fs.size(); ++i) {
      const double delta = compute_delta(a, net, prop, full, i);
      CHECK(delta <= fs[i].priority + 1e-9);
    }
  }
}

TEST_CASE("compute_delta reference cases", "[supfex]") {
  SECTION("zero-priority feature never moves the margin") {
    const Network net =
        passthrough_net(Matrix(2, 2, {1.0, 0.7, -1.0, 0.7}), {0.5, 0.0});
    const InputRegion region = build_region({0.5, 0.5}, 0.1);
    const Analysis a = analyze(net, region, Domain::deepz);
    const Property prop = robustness_property(2, 0);
    const std::vector<std::size_t> full = {0, 1};
    CHECK(compute_delta(a, net, prop, full, 1) == 0.0);
  }
  SECTION("singleton set on a bias-free net") {
    const Network net =
        passthrough_net(Matrix(2, 2, {1.0, 0.5, -1.0, 0.25}), {0.0, 0.0});
    const InputRegion region = build_region({0.5, 0.5}, 0.1);
    const Analysis a = analyze(net, region, Domain::deepz);
    const Property prop = robustness_property(2, 0);
    const std::vector<std::size_t> s = {0};
    // Lambda(empty) is exactly the bias margin, zero here.
    const double lambda_s = check_property(a, net, prop, s).lambda;
    CHECK(compute_delta(a, net, prop, s, 0) == std::abs(lambda_s));
  }
  SECTION("feature must be a member of the set") {
    const Network net = passthrough_net(Matrix(2, 2, {1.0, 0.0, 0.0, 1.0}),
                                        {0.0, 0.0});
    const InputRegion region = build_region({0.5, 0.5}, 0.1);
    const Analysis a = analyze(net, region, Domain::deepz);
    const Property prop = robustness_property(2, 0);
    const std::vector<std::size_t> s = {0};
    CHECK_THROWS_AS(compute_delta(a, net, prop, s, 1), IndexError);
  }
}

TEST_CASE("delta never exceeds the priority bound", "[supfex]") {
  testutil::Rng rng(52);
  for (int t = 0; t < 500; ++t) {
    const testutil::Instance inst = testutil::random_instance(rng, 2, 6);
    const Domain dom = t % 2 ? Domain::ibp : Domain::deepz;
    const Analysis a = analyze(inst.net, inst.region, dom);
    const ProofFeatureSet fs = compute_priorities(a, inst.net, inst.prop);
    const std::size_t d = inst.net.penultimate_dim();

    std::vector<std::size_t> s;
    for (std::size_t i = 0; i < d; ++i)
      if (testutil::uniform(rng, 0.0, 1.0) < 0.7) s.push_back(i);
    if (s.empty()) s.push_back(testutil::uniform_index(rng, 0, d - 1));
    const std::size_t i =
        s[testutil::uniform_index(rng, 0, s.size() - 1)];
    const double delta = compute_delta(a, inst.net, inst.prop, s, i);
    CHECK(delta <= fs[i].priority + 1e-9);
  }
}

TEST_CASE("delta_set reference cases", "[supfex]") {
  testutil::Rng rng(53);
  const testutil::Instance inst = testutil::random_instance(rng, 3, 6);
  const Analysis a = analyze(inst.net, inst.region, Domain::deepz);
  const std::size_t d = inst.net.penultimate_dim();

  SECTION("full set changes nothing") {
    const std::vector<std::size_t> full = all_features(d);
    CHECK(delta_set(a, inst.net, inst.prop, full) == 0.0);
  }
  SECTION("empty set leaves the bias margin") {
    const double lambda_full =
        check_property(a, inst.net, inst.prop).lambda;
    const Vector& b = inst.net.layers.back().bias;
    double bias_margin = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < inst.prop.num_rows(); ++j) {
      double m = 0.0;
      for (std::size_t k = 0; k < b.size(); ++k)
        m += inst.prop.rows(j, k) * b[k];
      bias_margin = std::min(bias_margin, m);
    }
    CHECK(delta_set(a, inst.net, inst.prop, std::vector<std::size_t>{}) ==
          std::abs(lambda_full - bias_margin));
  }
}

TEST_CASE("pruning cost is bounded by the dropped priorities", "[supfex]") {
  testutil::Rng rng(54);
  for (int t = 0; t < 1000; ++t) {
    const testutil::Instance inst = testutil::random_instance(rng, 2, 6);
    const Domain dom = t % 2 ? Domain::ibp : Domain::deepz;
    const Analysis a = analyze(inst.net, inst.region, dom);
    const ProofFeatureSet fs = compute_priorities(a, inst.net, inst.prop);
    const std::size_t d = inst.net.penultimate_dim();

    std::vector<std::size_t> s;
    double dropped = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      if (testutil::uniform(rng, 0.0, 1.0) < 0.6)
        s.push_back(i);
      else
        dropped += fs[i].priority;
    }
    const double delta = delta_set(a, inst.net, inst.prop, s);
    CHECK(delta <= dropped + 1e-9);
  }
}

TEST_CASE("zero_features reference cases", "[supfex]") {
  SECTION("all-positive priorities give an empty set") {
    const ProofFeatureSet fs = make_features({0.5, 1.0, 0.1});
    CHECK(zero_features(fs).empty());
  }
  SECTION("degenerate zero interval is included") {
    ProofFeatureSet fs = make_features({0.5, 0.0});
    fs.features[1].lo = 0.0;
    fs.features[1].hi = 0.0;
    CHECK(zero_features(fs) == std::vector<std::size_t>{1});
  }
  SECTION("threshold widens the set") {
    const ProofFeatureSet fs = make_features({0.5, 0.0, 0.05});
    CHECK(zero_features(fs, 0.1) == std::vector<std::size_t>{1, 2});
  }
}

TEST_CASE("pruning exactly the zero features never moves lambda", "[supfex]") {
  testutil::Rng rng(55);
  std::size_t with_zero = 0;
  for (int t = 0; t < 200; ++t) {
    // Dead penultimate neurons (negative bias, inputs in [0,1]) yield
    // degenerate [0,0] features; orthogonal columns yield zero coefficients.
    testutil::Instance inst = testutil::random_instance(rng, 2, 6);
    Network& net = inst.net;
    if (testutil::uniform(rng, 0.0, 1.0) < 0.7) {
      Layer& pen = net.layers[net.layers.size() - 2];
      const std::size_t kill = testutil::uniform_index(
          rng, 0, pen.bias.size() - 1);
      pen.bias[kill] = -100.0;
    }
    const Domain dom = t % 2 ? Domain::ibp : Domain::deepz;
    const Analysis a = analyze(net, inst.region, dom);
    const ProofFeatureSet fs = compute_priorities(a, net, inst.prop);
    const std::vector<std::size_t> zeros = zero_features(fs);
    if (!zeros.empty()) ++with_zero;

    std::vector<std::size_t> complement;
    for (std::size_t i = 0; i < fs.size(); ++i)
      if (std::find(zeros.begin(), zeros.end(), i) == zeros.end())
        complement.push_back(i);
    CHECK(delta_set(a, net, inst.prop, complement) == 0.0);
  }
  CHECK(with_zero > 50);  // the construction actually exercised the case
}

TEST_CASE("theorem2_bound reference cases", "[supfex]") {
  SECTION("direct substitution") {
    std::vector<double> priorities(256, 0.0);
    for (std::size_t i = 230; i < 256; ++i)
      priorities[i] = 0.2 + 0.8 * double(i - 230) / 25.0;  // max exactly 1.0
    const ProofFeatureSet fs = make_features(priorities);
    REQUIRE(fs.max_priority() == 1.0);
    CHECK(theorem2_bound(fs, 3.5) == 23);
  }
  SECTION("all-zero priorities") {
    CHECK(theorem2_bound(make_features({0.0, 0.0, 0.0}), 1.0) == 0);
  }
  SECTION("slack larger than the feature count clamps at zero") {
    CHECK(theorem2_bound(make_features({1.0, 1.0}), 10.0) == 0);
  }
  SECTION("negative lambda is rejected") {
    CHECK_THROWS_AS(theorem2_bound(make_features({1.0}), -0.5),
                    ValidationError);
  }
}

TEST_CASE("supfex_extract keeps everything when nothing is prunable",
          "[supfex]") {
  // margin = h0 + h1 - 1.9 over h in [1,1]^2: both features are needed.
  const Network net =
      passthrough_net(Matrix(2, 2, {1.0, 1.0, 0.0, 0.0}), {0.0, 1.9});
  const InputRegion region = build_region({1.0, 1.0}, 0.0);
  const Property prop = robustness_property(2, 0);
  const SupfexOutcome out =
      supfex_extract(net, region, prop, Domain::deepz);
  REQUIRE(out.verified);
  CHECK_THAT(out.lambda_full, Catch::Matchers::WithinAbs(0.1, 1e-12));
  CHECK(out.kept == std::vector<std::size_t>{0, 1});
  CHECK_FALSE(out.bias_sufficient);
  CHECK(out.verifier_calls <= 4);  // 2*ceil(log2(2)) + 2
}

TEST_CASE("supfex_extract flags bias-sufficient proofs", "[supfex]") {
  const Network net = passthrough_net(Matrix(2, 3), {1.0, 0.0});
  const InputRegion region = build_region({0.5, 0.5, 0.5}, 0.1);
  const Property prop = robustness_property(2, 0);
  const SupfexOutcome out = supfex_extract(net, region, prop, Domain::ibp);
  REQUIRE(out.verified);
  CHECK(out.kept.empty());
  CHECK(out.bias_sufficient);
  CHECK(out.zero_count == 3);
  CHECK(out.bound_thm2 == 0);
  CHECK(out.lambda_full == 1.0);
}

TEST_CASE("supfex_extract reports unverified properties without features",
          "[supfex]") {
  // margin = h0 - 10 < 0 over h in [0.4, 0.6].
  const Network net =
      passthrough_net(Matrix(2, 1, {1.0, 0.0}), {0.0, 10.0});
  const InputRegion region = build_region({0.5}, 0.1);
  const SupfexOutcome out =
      supfex_extract(net, region, robustness_property(2, 0), Domain::deepz);
  CHECK_FALSE(out.verified);
  CHECK(out.kept.empty());
  CHECK(out.verifier_calls == 1);
  CHECK(out.features.size() == 0);
  CHECK(out.lambda_full < 0.0);
}

TEST_CASE("kept sets are sufficient, minimal-bounded, and within budget",
          "[supfex]") {
  testutil::Rng rng(56);
  for (int t = 0; t < 200; ++t) {
    const Domain dom = t % 2 ? Domain::ibp : Domain::deepz;
    const testutil::Instance inst = testutil::verified_instance(rng, dom, 2, 12);
    const SupfexOutcome out =
        supfex_extract(inst.net, inst.region, inst.prop, dom);
    REQUIRE(out.verified);

    const std::size_t d = inst.net.penultimate_dim();
    const double budget =
        2.0 * std::ceil(std::log2(double(d))) + 2.0;
    CHECK(double(out.verifier_calls) <= budget);
    CHECK(out.kept.size() <= out.bound_thm2);

    // The kept set must itself re-verify.
    const Analysis a = analyze(inst.net, inst.region, dom);
    CHECK(check_property(a, inst.net, inst.prop, out.kept).verified);

    // The exhaustive minimum (over nonempty sets) can be no larger.
    const auto min_set =
        exhaustive_min_sufficient(inst.net, inst.region, inst.prop, dom);
    REQUIRE(min_set.has_value());
    if (out.bias_sufficient)
      CHECK(check_property(a, inst.net, inst.prop,
                           std::vector<std::size_t>{})
                .verified);
    else
      CHECK(out.kept.size() >= min_set->size());
  }
}

TEST_CASE("loop invariant checking changes nothing observable", "[supfex]") {
  testutil::Rng rng(57);
  for (int t = 0; t < 50; ++t) {
    const Domain dom = t % 2 ? Domain::ibp : Domain::deepz;
    const testutil::Instance inst = testutil::verified_instance(rng, dom, 2, 10);
    const SupfexOutcome plain =
        supfex_extract(inst.net, inst.region, inst.prop, dom);
    SupfexOptions opts;
    opts.check_loop_invariant = true;
    SupfexOutcome checked;
    REQUIRE_NOTHROW(checked = supfex_extract(inst.net, inst.region, inst.prop,
                                             dom, opts));
    CHECK(checked.kept == plain.kept);
    CHECK(checked.verifier_calls == plain.verifier_calls);
    CHECK(checked.lambda_full == plain.lambda_full);
  }
}

TEST_CASE("small pruning cost implies the set still verifies", "[supfex]") {
  testutil::Rng rng(58);
  std::size_t hits = 0;
  for (int t = 0; t < 1000; ++t) {
    const Domain dom = t % 2 ? Domain::ibp : Domain::deepz;
    const testutil::Instance inst = testutil::verified_instance(rng, dom, 2, 8);
    const Analysis a = analyze(inst.net, inst.region, dom);
    const double lambda_full =
        check_property(a, inst.net, inst.prop).lambda;
    REQUIRE(lambda_full >= 0.0);

    const std::size_t d = inst.net.penultimate_dim();
    std::vector<std::size_t> s;
    for (std::size_t i = 0; i < d; ++i)
      if (testutil::uniform(rng, 0.0, 1.0) < 0.7) s.push_back(i);
    const double delta = delta_set(a, inst.net, inst.prop, s);
    if (delta <= lambda_full) {
      ++hits;
      CHECK(check_property(a, inst.net, inst.prop, s).verified);
    }
  }
  CHECK(hits > 100);  // the hypothesis held often enough to mean something
}
