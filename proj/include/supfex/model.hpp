#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "supfex/numerics.hpp"

namespace supfex {

enum class Activation : std::uint8_t { relu, none };

struct Layer {
  Matrix weights;
  Vector bias;
  Activation activation = Activation::none;

  std::size_t in_dim() const { return weights.cols(); }
  std::size_t out_dim() const { return weights.rows(); }
};

/// Feedforward network: a chain of affine+activation layers where the final
/// layer is purely affine (the decision layer).
struct Network {
  std::string name;
  std::vector<std::size_t> input_shape;  // [d0] or [channels, height, width]
  std::vector<Layer> layers;

  std::size_t input_dim() const { return layers.front().in_dim(); }
  std::size_t output_dim() const { return layers.back().out_dim(); }
  std::size_t penultimate_dim() const {
    return layers[layers.size() - 2].out_dim();
  }
  const Layer& decision_layer() const { return layers.back(); }
  std::size_t num_hidden() const { return layers.size() - 1; }

  void validate() const {
    if (layers.size() < 2) throw ValidationError("network: needs >= 2 layers");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const Layer& l = layers[i];
      if (l.weights.rows() != l.bias.size())
        throw ValidationError("network: layer " + std::to_string(i) +
                              " bias length != weight rows");
      if (i > 0 && l.in_dim() != layers[i - 1].out_dim())
        throw ValidationError("network: layer " + std::to_string(i) +
                              " expects " + std::to_string(l.in_dim()) +
                              " inputs, previous layer emits " +
                              std::to_string(layers[i - 1].out_dim()));
    }
    if (layers.back().activation != Activation::none)
      throw ValidationError("network: decision layer must have no activation");
    if (penultimate_dim() < 1)
      throw ValidationError("network: empty penultimate layer");
  }
};

/// Decision layer with a subset of input columns kept; pruned columns behave
/// as zero vectors, the bias is retained unchanged.
struct PrunedDecisionLayer {
  Layer base;
  std::vector<std::uint8_t> keep_mask;  // one flag per penultimate neuron

  bool keeps(std::size_t i) const { return keep_mask[i] != 0; }

  std::vector<std::size_t> keep_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < keep_mask.size(); ++i)
      if (keep_mask[i]) out.push_back(i);
    return out;
  }

  Matrix effective_weights() const {
    Matrix w(base.weights.rows(), base.weights.cols());
    for (std::size_t r = 0; r < w.rows(); ++r)
      for (std::size_t c = 0; c < w.cols(); ++c)
        if (keep_mask[c]) w(r, c) = base.weights(r, c);
    return w;
  }

  // Mirrors affine()'s accumulation order so that pruning here and literally
  // zeroing weight columns produce equal outputs, not merely close ones.
  Vector apply(const Vector& penultimate) const {
    if (penultimate.size() != base.weights.cols())
      throw ShapeError("pruned layer: penultimate vector has wrong length");
    Vector out(base.weights.rows(), 0.0);
    for (std::size_t r = 0; r < base.weights.rows(); ++r) {
      double acc = 0.0;
      for (std::size_t c = 0; c < base.weights.cols(); ++c)
        if (keep_mask[c]) acc += base.weights(r, c) * penultimate[c];
      out[r] = acc + base.bias[r];
    }
    return out;
  }
};

inline PrunedDecisionLayer prune_decision_layer(
    const Network& net, const std::vector<std::size_t>& keep) {
  const std::size_t d = net.penultimate_dim();
  PrunedDecisionLayer pl;
  pl.base = net.decision_layer();
  pl.keep_mask.assign(d, 0);
  for (std::size_t i : keep) {
    if (i >= d)
      throw IndexError("prune: neuron index " + std::to_string(i) +
                       " out of range (penultimate width " +
                       std::to_string(d) + ")");
    pl.keep_mask[i] = 1;
  }
  return pl;
}

inline Vector forward(const Network& net, const Vector& x) {
  if (x.size() != net.input_dim())
    throw ShapeError("forward: input has " + std::to_string(x.size()) +
                     " entries, network expects " +
                     std::to_string(net.input_dim()));
  Vector cur = x;
  for (const Layer& l : net.layers) {
    cur = affine(l.weights, cur, l.bias);
    if (l.activation == Activation::relu)
      for (double& v : cur) v = std::max(v, 0.0);
  }
  return cur;
}

/// Post-activation values of every layer, in order. Used by gradient and
/// soundness checks; the last entry is the network output.
inline std::vector<Vector> forward_trace(const Network& net, const Vector& x) {
  if (x.size() != net.input_dim())
    throw ShapeError("forward_trace: wrong input length");
  std::vector<Vector> acts;
  acts.reserve(net.layers.size());
  Vector cur = x;
  for (const Layer& l : net.layers) {
    cur = affine(l.weights, cur, l.bias);
    if (l.activation == Activation::relu)
      for (double& v : cur) v = std::max(v, 0.0);
    acts.push_back(cur);
  }
  return acts;
}

/// Gradient of the post-activation output of one penultimate neuron with
/// respect to the input, by reverse accumulation. ReLU subgradient at 0 is 0.
inline Vector gradient_wrt_input(const Network& net, const Vector& x,
                                 std::size_t neuron) {
  if (neuron >= net.penultimate_dim())
    throw IndexError("gradient: neuron " + std::to_string(neuron) +
                     " out of range");
  if (x.size() != net.input_dim())
    throw ShapeError("gradient: wrong input length");

  const std::size_t hidden = net.num_hidden();
  std::vector<Vector> pre(hidden);  // pre-activation of each hidden layer
  Vector cur = x;
  for (std::size_t i = 0; i < hidden; ++i) {
    const Layer& l = net.layers[i];
    cur = affine(l.weights, cur, l.bias);
    pre[i] = cur;
    if (l.activation == Activation::relu)
      for (double& v : cur) v = std::max(v, 0.0);
  }

  // Seed at the penultimate post-activation, walk back to the input.
  Vector grad(net.penultimate_dim(), 0.0);
  grad[neuron] = 1.0;
  for (std::size_t i = hidden; i-- > 0;) {
    const Layer& l = net.layers[i];
    if (l.activation == Activation::relu)
      for (std::size_t j = 0; j < grad.size(); ++j)
        if (pre[i][j] <= 0.0) grad[j] = 0.0;
    Vector prev(l.in_dim(), 0.0);
    for (std::size_t r = 0; r < l.out_dim(); ++r) {
      const double g = grad[r];
      if (g == 0.0) continue;
      for (std::size_t c = 0; c < l.in_dim(); ++c)
        prev[c] += g * l.weights(r, c);
    }
    grad = std::move(prev);
  }
  return grad;
}

namespace detail {

inline double json_finite_number(const nlohmann::json& j,
                                 const std::string& ctx) {
  if (!j.is_number()) throw ParseError(ctx + ": expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) throw ParseError(ctx + ": non-finite value");
  return v;
}

inline void reject_unknown_fields(const nlohmann::json& obj,
                                  std::initializer_list<const char*> allowed,
                                  const std::string& ctx) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool known = false;
    for (const char* a : allowed)
      if (it.key() == a) known = true;
    if (!known) throw ParseError(ctx + ": unknown field \"" + it.key() + "\"");
  }
}

inline Activation parse_activation(const nlohmann::json& j,
                                   const std::string& ctx) {
  if (!j.is_string()) throw ParseError(ctx + ": activation must be a string");
  const std::string s = j.get<std::string>();
  if (s == "relu") return Activation::relu;
  if (s == "none") return Activation::none;
  throw ParseError(ctx + ": unknown activation \"" + s + "\"");
}

inline Layer parse_dense(const nlohmann::json& j, const std::string& ctx) {
  reject_unknown_fields(j, {"type", "weights", "bias", "activation"}, ctx);
  if (!j.contains("weights") || !j.contains("bias") ||
      !j.contains("activation"))
    throw ParseError(ctx + ": dense layer needs weights, bias, activation");
  const auto& jw = j.at("weights");
  if (!jw.is_array() || jw.empty())
    throw ParseError(ctx + ": weights must be a non-empty array of rows");
  const std::size_t rows = jw.size();
  std::size_t cols = 0;
  std::vector<double> entries;
  for (std::size_t r = 0; r < rows; ++r) {
    const auto& row = jw.at(r);
    if (!row.is_array()) throw ParseError(ctx + ": weight row is not an array");
    if (r == 0) {
      cols = row.size();
      if (cols == 0) throw ParseError(ctx + ": empty weight row");
      entries.reserve(rows * cols);
    } else if (row.size() != cols) {
      throw ParseError(ctx + ": ragged weight rows");
    }
    for (const auto& e : row)
      entries.push_back(json_finite_number(e, ctx + " weights"));
  }
  const auto& jb = j.at("bias");
  if (!jb.is_array()) throw ParseError(ctx + ": bias must be an array");
  Vector bias;
  for (const auto& e : jb)
    bias.push_back(json_finite_number(e, ctx + " bias"));
  if (bias.size() != rows)
    throw ParseError(ctx + ": bias length " + std::to_string(bias.size()) +
                     " != weight rows " + std::to_string(rows));
  Layer l;
  l.weights = Matrix(rows, cols, std::move(entries));
  l.bias = std::move(bias);
  l.activation = parse_activation(j.at("activation"), ctx);
  return l;
}

struct ConvSpec {
  // kernel[out_ch][in_ch][kh][kw]
  std::size_t out_ch = 0, in_ch = 0, kh = 0, kw = 0;
  std::vector<double> kernel;
  Vector bias;
  std::size_t stride = 1, padding = 0;
  Activation activation = Activation::relu;

  double k(std::size_t oc, std::size_t ic, std::size_t r,
           std::size_t c) const {
    return kernel[((oc * in_ch + ic) * kh + r) * kw + c];
  }
};

inline ConvSpec parse_conv(const nlohmann::json& j, const std::string& ctx) {
  reject_unknown_fields(
      j, {"type", "kernel", "bias", "stride", "padding", "activation"}, ctx);
  if (!j.contains("kernel") || !j.contains("bias") || !j.contains("stride") ||
      !j.contains("padding") || !j.contains("activation"))
    throw ParseError(ctx +
                     ": conv2d layer needs kernel, bias, stride, padding, "
                     "activation");
  const auto& jk = j.at("kernel");
  if (!jk.is_array() || jk.empty())
    throw ParseError(ctx + ": kernel must be a 4-d nested array");
  ConvSpec cs;
  cs.out_ch = jk.size();
  for (std::size_t oc = 0; oc < cs.out_ch; ++oc) {
    const auto& jic = jk.at(oc);
    if (!jic.is_array() || jic.empty())
      throw ParseError(ctx + ": kernel must be a 4-d nested array");
    if (oc == 0) cs.in_ch = jic.size();
    if (jic.size() != cs.in_ch) throw ParseError(ctx + ": ragged kernel");
    for (std::size_t ic = 0; ic < cs.in_ch; ++ic) {
      const auto& jr = jic.at(ic);
      if (!jr.is_array() || jr.empty())
        throw ParseError(ctx + ": kernel must be a 4-d nested array");
      if (oc == 0 && ic == 0) cs.kh = jr.size();
      if (jr.size() != cs.kh) throw ParseError(ctx + ": ragged kernel");
      for (std::size_t r = 0; r < cs.kh; ++r) {
        const auto& jc = jr.at(r);
        if (!jc.is_array() || jc.empty())
          throw ParseError(ctx + ": kernel must be a 4-d nested array");
        if (oc == 0 && ic == 0 && r == 0) {
          cs.kw = jc.size();
          cs.kernel.reserve(cs.out_ch * cs.in_ch * cs.kh * cs.kw);
        }
        if (jc.size() != cs.kw) throw ParseError(ctx + ": ragged kernel");
        for (const auto& e : jc)
          cs.kernel.push_back(json_finite_number(e, ctx + " kernel"));
      }
    }
  }
  const auto& jb = j.at("bias");
  if (!jb.is_array()) throw ParseError(ctx + ": bias must be an array");
  for (const auto& e : jb)
    cs.bias.push_back(json_finite_number(e, ctx + " bias"));
  if (cs.bias.size() != cs.out_ch)
    throw ParseError(ctx + ": bias length != output channels");
  const auto& js = j.at("stride");
  if (!js.is_number_integer() || js.get<long long>() < 1)
    throw ParseError(ctx + ": stride must be a positive integer");
  cs.stride = js.get<std::size_t>();
  const auto& jp = j.at("padding");
  if (!jp.is_number_integer() || jp.get<long long>() < 0)
    throw ParseError(ctx + ": padding must be a non-negative integer");
  cs.padding = jp.get<std::size_t>();
  cs.activation = parse_activation(j.at("activation"), ctx);
  return cs;
}

/// Materialize the conv as a dense layer over row-major (channel, row, col)
/// flattened inputs. Input spatial shape must be known.
inline Layer lower_conv(const ConvSpec& cs, std::size_t in_h, std::size_t in_w,
                        const std::string& ctx, std::size_t& out_h,
                        std::size_t& out_w) {
  const std::ptrdiff_t oh =
      (std::ptrdiff_t(in_h) + 2 * std::ptrdiff_t(cs.padding) -
       std::ptrdiff_t(cs.kh)) /
          std::ptrdiff_t(cs.stride) +
      1;
  const std::ptrdiff_t ow =
      (std::ptrdiff_t(in_w) + 2 * std::ptrdiff_t(cs.padding) -
       std::ptrdiff_t(cs.kw)) /
          std::ptrdiff_t(cs.stride) +
      1;
  if (oh < 1 || ow < 1)
    throw ParseError(ctx + ": kernel does not fit the input plane");
  out_h = std::size_t(oh);
  out_w = std::size_t(ow);

  const std::size_t in_dim = cs.in_ch * in_h * in_w;
  const std::size_t out_dim = cs.out_ch * out_h * out_w;
  Layer l;
  l.weights = Matrix(out_dim, in_dim);
  l.bias.assign(out_dim, 0.0);
  for (std::size_t oc = 0; oc < cs.out_ch; ++oc) {
    for (std::size_t y = 0; y < out_h; ++y) {
      for (std::size_t x = 0; x < out_w; ++x) {
        const std::size_t row = (oc * out_h + y) * out_w + x;
        l.bias[row] = cs.bias[oc];
        for (std::size_t ic = 0; ic < cs.in_ch; ++ic) {
          for (std::size_t r = 0; r < cs.kh; ++r) {
            const std::ptrdiff_t iy = std::ptrdiff_t(y * cs.stride + r) -
                                      std::ptrdiff_t(cs.padding);
            if (iy < 0 || iy >= std::ptrdiff_t(in_h)) continue;
            for (std::size_t c = 0; c < cs.kw; ++c) {
              const std::ptrdiff_t ix = std::ptrdiff_t(x * cs.stride + c) -
                                        std::ptrdiff_t(cs.padding);
              if (ix < 0 || ix >= std::ptrdiff_t(in_w)) continue;
              const std::size_t col =
                  (ic * in_h + std::size_t(iy)) * in_w + std::size_t(ix);
              l.weights(row, col) += cs.k(oc, ic, r, c);
            }
          }
        }
      }
    }
  }
  l.activation = cs.activation;
  return l;
}

}  // namespace detail

/// Parse a network document. Conv layers are lowered to equivalent dense
/// layers at load time; pooling or any other layer type is rejected.
inline Network parse_network(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("network: invalid document: ") + e.what());
  }
  if (!doc.is_object()) throw ParseError("network: top level must be an object");
  detail::reject_unknown_fields(doc, {"name", "input_shape", "layers"},
                                "network");
  if (!doc.contains("name") || !doc.contains("input_shape") ||
      !doc.contains("layers"))
    throw ParseError("network: needs name, input_shape, layers");
  if (!doc.at("name").is_string())
    throw ParseError("network: name must be a string");

  Network net;
  net.name = doc.at("name").get<std::string>();
  const auto& jshape = doc.at("input_shape");
  if (!jshape.is_array() || jshape.empty())
    throw ParseError("network: input_shape must be a non-empty array");
  for (const auto& e : jshape) {
    if (!e.is_number_integer() || e.get<long long>() < 1)
      throw ParseError("network: input_shape entries must be positive ints");
    net.input_shape.push_back(e.get<std::size_t>());
  }

  const auto& jlayers = doc.at("layers");
  if (!jlayers.is_array() || jlayers.empty())
    throw ParseError("network: layers must be a non-empty array");

  // Track the spatial shape while lowering; dense layers flatten it.
  bool have_spatial = net.input_shape.size() == 3;
  std::size_t ch = have_spatial ? net.input_shape[0] : 0;
  std::size_t h = have_spatial ? net.input_shape[1] : 0;
  std::size_t w = have_spatial ? net.input_shape[2] : 0;

  for (std::size_t i = 0; i < jlayers.size(); ++i) {
    const std::string ctx = "network: layer " + std::to_string(i);
    const auto& jl = jlayers.at(i);
    if (!jl.is_object()) throw ParseError(ctx + ": not an object");
    if (!jl.contains("type") || !jl.at("type").is_string())
      throw ParseError(ctx + ": missing type");
    const std::string type = jl.at("type").get<std::string>();
    if (type == "dense") {
      net.layers.push_back(detail::parse_dense(jl, ctx));
      have_spatial = false;
    } else if (type == "conv2d") {
      if (!have_spatial)
        throw ParseError(ctx +
                         ": conv2d needs a [channels, height, width] shape "
                         "at this point");
      detail::ConvSpec cs = detail::parse_conv(jl, ctx);
      if (cs.in_ch != ch)
        throw ParseError(ctx + ": kernel expects " + std::to_string(cs.in_ch) +
                         " input channels, got " + std::to_string(ch));
      std::size_t oh = 0, ow = 0;
      net.layers.push_back(detail::lower_conv(cs, h, w, ctx, oh, ow));
      ch = cs.out_ch;
      h = oh;
      w = ow;
    } else {
      throw ParseError(ctx + ": unknown layer type \"" + type + "\"");
    }
  }

  std::size_t flat = 1;
  for (std::size_t d : net.input_shape) flat *= d;
  if (flat != net.input_dim())
    throw ParseError("network: input_shape does not match first layer width");
  try {
    net.validate();
  } catch (const ValidationError& e) {
    throw ParseError(e.what());
  }
  return net;
}

}  // namespace supfex
