// Builds a small ReLU classifier in code, certifies an input box around a
// point, and shrinks the proof to its essential penultimate features.
#include <iostream>

#include "supfex/compare.hpp"
#include "supfex/supfex.hpp"

using namespace supfex;

int main() {
  // 2 inputs -> 4 hidden -> 3 hidden -> 2 classes.
  Network net;
  net.name = "demo";
  net.input_shape = {2};
  net.layers.push_back(Layer{
      Matrix(4, 2, {1.0, 0.5, -0.5, 1.0, 0.8, -0.3, 0.2, 0.9}),
      {0.1, 0.0, -0.1, 0.2},
      Activation::relu,
  });
  net.layers.push_back(Layer{
      Matrix(3, 4, {0.7, -0.2, 0.4, 0.1, -0.3, 0.6, 0.2, -0.5, 0.5, 0.5,
                    -0.1, 0.3}),
      {0.0, 0.1, -0.2},
      Activation::relu,
  });
  net.layers.push_back(Layer{
      Matrix(2, 3, {1.2, -0.4, 0.6, -0.8, 0.9, -0.2}),
      {0.0, 1.0},
      Activation::none,
  });
  net.validate();

  const Vector point = {0.6, 0.4};
  const double epsilon = 0.03;
  const InputRegion region = build_region(point, epsilon);
  const Property prop = robustness_property(2, 0);

  for (Domain domain : {Domain::ibp, Domain::deepz}) {
    const SupfexOutcome out = supfex_extract(net, region, prop, domain);
    std::cout << domain_name(domain) << ": "
              << (out.verified ? "verified" : "not verified")
              << ", margin " << out.lambda_full << "\n";
    if (!out.verified) continue;
    std::cout << "  kept " << out.kept.size() << " of "
              << out.features.size() << " features (bound "
              << out.bound_thm2 << "):";
    for (std::size_t i : out.kept)
      std::cout << " n" << i << " [" << out.features[i].lo << ", "
                << out.features[i].hi << "]";
    std::cout << "\n  verifier calls: " << out.verifier_calls << "\n";
  }

  const CompareRecord rec = compare_verifiers(net, region, prop);
  if (!rec.skipped()) {
    std::cout << "agreement: top1=" << rec.agreement->same_top1
              << " top5=" << rec.agreement->same_top5
              << " full=" << rec.agreement->same_full_set << "\n";
  }
  return 0;
}
