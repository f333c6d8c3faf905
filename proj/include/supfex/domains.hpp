#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <variant>
#include <vector>

#include "supfex/numerics.hpp"

namespace supfex {

/// Per-dimension bounds [lo_i, hi_i].
struct IntervalVector {
  Vector lo;
  Vector hi;

  std::size_t dim() const { return lo.size(); }

  void validate() const {
    if (lo.size() != hi.size())
      throw ShapeError("interval: lo/hi length mismatch");
    for (std::size_t i = 0; i < lo.size(); ++i)
      if (!(lo[i] <= hi[i]))
        throw ValidationError("interval: lo > hi at dimension " +
                              std::to_string(i));
  }
};

/// Affine image of the unit cube: { center + generators * e : e in [-1,1]^g }.
/// Generators are stored one column per noise symbol.
struct Zonotope {
  Vector center;
  Matrix generators;  // dim() x num_generators()

  std::size_t dim() const { return center.size(); }
  std::size_t num_generators() const { return generators.cols(); }

  static Zonotope from_box(const IntervalVector& box) {
    const std::size_t d = box.dim();
    Zonotope z;
    z.center.resize(d);
    z.generators = Matrix(d, d);
    for (std::size_t i = 0; i < d; ++i) {
      z.center[i] = (box.hi[i] + box.lo[i]) / 2.0;
      z.generators(i, i) = (box.hi[i] - box.lo[i]) / 2.0;
    }
    return z;
  }
};

inline IntervalVector interval_affine(const IntervalVector& iv,
                                      const Matrix& m, const Vector& b) {
  if (m.cols() != iv.dim())
    throw ShapeError("interval_affine: dimension mismatch");
  if (m.rows() != b.size())
    throw ShapeError("interval_affine: bias length mismatch");
  IntervalVector out;
  out.lo.resize(m.rows());
  out.hi.resize(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    double lo = b[r], hi = b[r];
    for (std::size_t c = 0; c < m.cols(); ++c) {
      const double a = m(r, c) * iv.lo[c];
      const double d = m(r, c) * iv.hi[c];
      lo += std::min(a, d);
      hi += std::max(a, d);
    }
    out.lo[r] = lo;
    out.hi[r] = hi;
  }
  return out;
}

inline IntervalVector interval_relu(const IntervalVector& iv) {
  IntervalVector out = iv;
  for (double& v : out.lo) v = std::max(v, 0.0);
  for (double& v : out.hi) v = std::max(v, 0.0);
  return out;
}

inline Zonotope zono_affine(const Zonotope& z, const Matrix& m,
                            const Vector& b) {
  if (m.cols() != z.dim()) throw ShapeError("zono_affine: dimension mismatch");
  if (m.rows() != b.size())
    throw ShapeError("zono_affine: bias length mismatch");
  Zonotope out;
  out.center = affine(m, z.center, b);
  const std::size_t g = z.num_generators();
  out.generators = Matrix(m.rows(), g);
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t k = 0; k < m.cols(); ++k) {
      const double mk = m(r, k);
      if (mk == 0.0) continue;
      for (std::size_t c = 0; c < g; ++c)
        out.generators(r, c) += mk * z.generators(k, c);
    }
  return out;
}

inline IntervalVector concretize(const Zonotope& z) {
  IntervalVector out;
  const std::size_t d = z.dim();
  out.lo.resize(d);
  out.hi.resize(d);
  for (std::size_t i = 0; i < d; ++i) {
    double radius = 0.0;
    for (std::size_t c = 0; c < z.num_generators(); ++c)
      radius += std::abs(z.generators(i, c));
    out.lo[i] = z.center[i] - radius;
    out.hi[i] = z.center[i] + radius;
  }
  return out;
}

/// Minimal-area zonotope ReLU. Per neuron with bounds [l, u]:
///   l >= 0        identity
///   u <= 0        zero
///   otherwise     lambda = u/(u-l), mu = -lambda*l/2; the output row is
///                 lambda * (input row), mu is added to the center and one
///                 fresh generator with coefficient mu covers the error.
inline Zonotope zono_relu(const Zonotope& z) {
  const IntervalVector bounds = concretize(z);
  const std::size_t d = z.dim();
  const std::size_t g = z.num_generators();

  std::size_t unstable = 0;
  for (std::size_t i = 0; i < d; ++i)
    if (bounds.lo[i] < 0.0 && bounds.hi[i] > 0.0) ++unstable;

  Zonotope out;
  out.center.assign(d, 0.0);
  out.generators = Matrix(d, g + unstable);
  std::size_t fresh = g;
  for (std::size_t i = 0; i < d; ++i) {
    const double l = bounds.lo[i];
    const double u = bounds.hi[i];
    if (l >= 0.0) {
      out.center[i] = z.center[i];
      for (std::size_t c = 0; c < g; ++c)
        out.generators(i, c) = z.generators(i, c);
    } else if (u <= 0.0) {
      // center and row stay zero
    } else {
      const double lambda = u / (u - l);
      const double mu = -lambda * l / 2.0;
      out.center[i] = lambda * z.center[i] + mu;
      for (std::size_t c = 0; c < g; ++c)
        out.generators(i, c) = lambda * z.generators(i, c);
      out.generators(i, fresh) = mu;
      ++fresh;
    }
  }
  return out;
}

/// Exact minimum of a.x + c over the concretization of the element.
inline double min_linear(const Zonotope& z, const Vector& a, double c) {
  if (a.size() != z.dim()) throw ShapeError("min_linear: dimension mismatch");
  double acc = c;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * z.center[i];
  for (std::size_t col = 0; col < z.num_generators(); ++col) {
    double proj = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
      proj += a[i] * z.generators(i, col);
    acc -= std::abs(proj);
  }
  return acc;
}

inline double min_linear(const IntervalVector& iv, const Vector& a, double c) {
  if (a.size() != iv.dim()) throw ShapeError("min_linear: dimension mismatch");
  double acc = c;
  for (std::size_t i = 0; i < a.size(); ++i)
    acc += std::min(a[i] * iv.lo[i], a[i] * iv.hi[i]);
  return acc;
}

using AbstractElement = std::variant<IntervalVector, Zonotope>;

inline IntervalVector concretize(const AbstractElement& elem) {
  if (const auto* iv = std::get_if<IntervalVector>(&elem)) return *iv;
  return concretize(std::get<Zonotope>(elem));
}

inline double min_linear(const AbstractElement& elem, const Vector& a,
                         double c) {
  if (const auto* iv = std::get_if<IntervalVector>(&elem))
    return min_linear(*iv, a, c);
  return min_linear(std::get<Zonotope>(elem), a, c);
}

}  // namespace supfex
