#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "gcame/tensor.hpp"

namespace gcame {

enum class LayerKind { Conv, Linear };

/// Architectural role of a layer. Target-layer selection and the sanity
/// module use it to tell classification from regression branches.
enum class LayerRole {
  Backbone,
  Neck,       // FPN laterals and outputs
  ClsBranch,  // classification-branch convolutions
  RegBranch,  // regression-branch convolutions
  ClsPred,
  RegPred,
  ObjPred,
  Rpn,
  RoiHead,
};

std::string_view to_string(LayerRole role);
LayerRole layer_role_from_string(std::string_view s);

/// A parametrised layer: 2-D convolution (weights out x in x k x k) or
/// fully connected (weights out x in).
struct Layer {
  std::string name;
  LayerKind kind = LayerKind::Conv;
  LayerRole role = LayerRole::Backbone;
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 1;
  int stride = 1;
  int padding = 0;
  bool relu = false;
  std::vector<double> weight;
  std::vector<double> bias;

  std::size_t fan_in() const {
    return static_cast<std::size_t>(in_channels) * kernel * kernel;
  }
  int output_size(int input) const { return (input + 2 * padding - kernel) / stride + 1; }
  bool is_regression() const {
    return role == LayerRole::RegBranch || role == LayerRole::RegPred ||
           role == LayerRole::ObjPred;
  }
};

Layer make_conv(std::string name, LayerRole role, int in, int out, int kernel, int stride,
                bool relu);
Layer make_linear(std::string name, LayerRole role, int in, int out);

/// He-normal weights and zero bias drawn from `rng`.
void init_he_normal(Layer& layer, std::mt19937_64& rng);
/// Weights and bias redrawn from N(0, std^2).
void init_normal(Layer& layer, double std, std::mt19937_64& rng);

/// FNV-1a over the raw bytes of weights and bias.
std::uint64_t hash_layer(const Layer& layer);

// Convolution primitives. Activation is applied by the caller.
Tensor conv_forward(const Layer& layer, const Tensor& input);
/// Gradient w.r.t. the input given the gradient w.r.t. the pre-activation output.
Tensor conv_backward_input(const Layer& layer, const Tensor& grad_out, int in_h, int in_w);
/// Accumulates weight and bias gradients into `grad_w` / `grad_b`.
void conv_backward_params(const Layer& layer, const Tensor& input, const Tensor& grad_out,
                          std::vector<double>& grad_w, std::vector<double>& grad_b);

std::vector<double> linear_forward(const Layer& layer, std::span<const double> input);
std::vector<double> linear_backward_input(const Layer& layer, std::span<const double> grad_out);

}  // namespace gcame
