#pragma once

#include <algorithm>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "supfex/domains.hpp"
#include "supfex/model.hpp"
#include "supfex/numerics.hpp"

namespace supfex {

enum class Domain : std::uint8_t { ibp, deepz };

inline const char* domain_name(Domain d) {
  return d == Domain::ibp ? "ibp" : "deepz";
}

inline Domain domain_from_name(const std::string& s) {
  if (s == "ibp") return Domain::ibp;
  if (s == "deepz") return Domain::deepz;
  throw ValidationError("unknown domain \"" + s + "\" (expected ibp or deepz)");
}

/// L-inf ball around an input point, clipped to the valid pixel range [0,1].
struct InputRegion {
  Vector center;
  double epsilon = 0.0;
  Vector lo;
  Vector hi;

  std::size_t dim() const { return center.size(); }
};

inline InputRegion build_region(const Vector& image, double epsilon) {
  if (!(epsilon >= 0.0))
    throw ValidationError("region: epsilon must be >= 0");
  require_finite(image, "region");
  InputRegion r;
  r.center = image;
  r.epsilon = epsilon;
  r.lo.resize(image.size());
  r.hi.resize(image.size());
  for (std::size_t i = 0; i < image.size(); ++i) {
    if (image[i] < 0.0 || image[i] > 1.0)
      throw ValidationError("region: pixel " + std::to_string(i) +
                            " outside [0,1]");
    r.lo[i] = std::max(0.0, image[i] - epsilon);
    r.hi[i] = std::min(1.0, image[i] + epsilon);
  }
  return r;
}

/// Conjunction of linear output constraints; row j holds iff c_j . Y >= 0.
struct Property {
  Matrix rows;  // num_rows x output_dim

  std::size_t num_rows() const { return rows.rows(); }
  std::size_t output_dim() const { return rows.cols(); }
};

/// Local robustness: one row e_label - e_j per competing class j.
inline Property robustness_property(std::size_t num_classes,
                                    std::size_t label) {
  if (num_classes < 2)
    throw ValidationError("property: need at least 2 classes");
  if (label >= num_classes)
    throw IndexError("property: label " + std::to_string(label) +
                     " out of range for " + std::to_string(num_classes) +
                     " classes");
  Property p;
  p.rows = Matrix(num_classes - 1, num_classes);
  std::size_t r = 0;
  for (std::size_t j = 0; j < num_classes; ++j) {
    if (j == label) continue;
    p.rows(r, label) = 1.0;
    p.rows(r, j) = -1.0;
    ++r;
  }
  return p;
}

namespace detail {

inline AbstractElement initial_element(const InputRegion& region,
                                       Domain domain) {
  IntervalVector box{region.lo, region.hi};
  if (domain == Domain::ibp) return box;
  return Zonotope::from_box(box);
}

inline AbstractElement apply_layer(const AbstractElement& elem,
                                   const Layer& layer) {
  if (const auto* iv = std::get_if<IntervalVector>(&elem)) {
    IntervalVector out = interval_affine(*iv, layer.weights, layer.bias);
    if (layer.activation == Activation::relu) out = interval_relu(out);
    return out;
  }
  const Zonotope& z = std::get<Zonotope>(elem);
  Zonotope out = zono_affine(z, layer.weights, layer.bias);
  if (layer.activation == Activation::relu) out = zono_relu(out);
  return out;
}

}  // namespace detail

/// Abstract element after each layer (post-activation), decision layer
/// included. Used by soundness checks.
inline std::vector<AbstractElement> propagate_all(const Network& net,
                                                  const InputRegion& region,
                                                  Domain domain) {
  if (region.dim() != net.input_dim())
    throw ShapeError("propagate: region dimension != network input");
  std::vector<AbstractElement> out;
  out.reserve(net.layers.size());
  AbstractElement cur = detail::initial_element(region, domain);
  for (const Layer& l : net.layers) {
    cur = detail::apply_layer(cur, l);
    out.push_back(cur);
  }
  return out;
}

/// Cached result of pushing the input region through the first l-1 layers:
/// the penultimate abstract element plus its per-neuron interval projection
/// (the proof feature intervals).
struct Analysis {
  Domain domain = Domain::deepz;
  AbstractElement penultimate;
  IntervalVector features;
};

inline Analysis analyze(const Network& net, const InputRegion& region,
                        Domain domain) {
  if (region.dim() != net.input_dim())
    throw ShapeError("analyze: region dimension != network input");
  Analysis a;
  a.domain = domain;
  AbstractElement cur = detail::initial_element(region, domain);
  for (std::size_t i = 0; i + 1 < net.layers.size(); ++i)
    cur = detail::apply_layer(cur, net.layers[i]);
  a.features = concretize(cur);
  a.penultimate = std::move(cur);
  return a;
}

struct VerificationResult {
  bool verified = false;
  double lambda = 0.0;
  Vector per_row_lambda;
};

inline std::vector<std::size_t> all_features(std::size_t d) {
  std::vector<std::size_t> out(d);
  for (std::size_t i = 0; i < d; ++i) out[i] = i;
  return out;
}

/// Evaluate the property against the cached penultimate element with the
/// decision layer pruned down to `keep`. No re-propagation happens: the
/// element is unchanged by pruning, only the final affine functional varies.
inline VerificationResult check_property(const Analysis& analysis,
                                         const Network& net,
                                         const Property& prop,
                                         std::span<const std::size_t> keep) {
  const Layer& fin = net.decision_layer();
  const std::size_t d = net.penultimate_dim();
  if (prop.output_dim() != fin.out_dim())
    throw ShapeError("check: property width != network output");
  if (prop.num_rows() < 1)
    throw ValidationError("check: property has no rows");

  std::vector<std::uint8_t> mask(d, 0);
  for (std::size_t i : keep) {
    if (i >= d)
      throw IndexError("check: feature index " + std::to_string(i) +
                       " out of range");
    mask[i] = 1;
  }

  VerificationResult res;
  res.per_row_lambda.resize(prop.num_rows());
  res.lambda = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < prop.num_rows(); ++j) {
    // a_i = c_j^T W_l[:,i] for kept columns, 0 for pruned ones.
    Vector a(d, 0.0);
    for (std::size_t i = 0; i < d; ++i) {
      if (!mask[i]) continue;
      double acc = 0.0;
      for (std::size_t k = 0; k < fin.out_dim(); ++k)
        acc += prop.rows(j, k) * fin.weights(k, i);
      a[i] = acc;
    }
    double offset = 0.0;
    for (std::size_t k = 0; k < fin.out_dim(); ++k)
      offset += prop.rows(j, k) * fin.bias[k];
    res.per_row_lambda[j] = min_linear(analysis.penultimate, a, offset);
    res.lambda = std::min(res.lambda, res.per_row_lambda[j]);
  }
  res.verified = res.lambda >= 0.0;
  return res;
}

inline VerificationResult check_property(const Analysis& analysis,
                                         const Network& net,
                                         const Property& prop) {
  const std::vector<std::size_t> keep = all_features(net.penultimate_dim());
  return check_property(analysis, net, prop, keep);
}

}  // namespace supfex
