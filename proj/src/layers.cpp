#include "gcame/layers.hpp"

#include <Eigen/Core>
#include <cmath>
#include <cstring>

#include "gcame/error.hpp"

namespace gcame {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

constexpr std::pair<LayerRole, std::string_view> kRoleNames[] = {
    {LayerRole::Backbone, "backbone"},   {LayerRole::Neck, "neck"},
    {LayerRole::ClsBranch, "cls_branch"}, {LayerRole::RegBranch, "reg_branch"},
    {LayerRole::ClsPred, "cls_pred"},     {LayerRole::RegPred, "reg_pred"},
    {LayerRole::ObjPred, "obj_pred"},     {LayerRole::Rpn, "rpn"},
    {LayerRole::RoiHead, "roi_head"},
};

// Columns are output positions; rows walk (channel, ky, kx).
RowMatrix im2col(const Layer& l, const Tensor& in, int out_h, int out_w) {
  const int k = l.kernel;
  RowMatrix cols(static_cast<Eigen::Index>(l.fan_in()), out_h * out_w);
  for (int c = 0; c < in.channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double* row = cols.row((c * k + ky) * k + kx).data();
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * l.stride - l.padding + ky;
          double* dst = row + oy * out_w;
          if (iy < 0 || iy >= in.height) {
            std::fill(dst, dst + out_w, 0.0);
            continue;
          }
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * l.stride - l.padding + kx;
            dst[ox] = (ix >= 0 && ix < in.width) ? in.at(c, iy, ix) : 0.0;
          }
        }
      }
    }
  }
  return cols;
}

void col2im(const Layer& l, const RowMatrix& cols, Tensor& out, int out_h, int out_w) {
  const int k = l.kernel;
  for (int c = 0; c < out.channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double* row = cols.row((c * k + ky) * k + kx).data();
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * l.stride - l.padding + ky;
          if (iy < 0 || iy >= out.height) continue;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * l.stride - l.padding + kx;
            if (ix >= 0 && ix < out.width) out.at(c, iy, ix) += row[oy * out_w + ox];
          }
        }
      }
    }
  }
}

std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

std::string_view to_string(LayerRole role) {
  for (const auto& [r, name] : kRoleNames)
    if (r == role) return name;
  return "unknown";
}

LayerRole layer_role_from_string(std::string_view s) {
  for (const auto& [r, name] : kRoleNames)
    if (name == s) return r;
  throw FormatError("unknown layer role '" + std::string(s) + "'");
}

Layer make_conv(std::string name, LayerRole role, int in, int out, int kernel, int stride,
                bool relu) {
  Layer l;
  l.name = std::move(name);
  l.kind = LayerKind::Conv;
  l.role = role;
  l.in_channels = in;
  l.out_channels = out;
  l.kernel = kernel;
  l.stride = stride;
  l.padding = kernel / 2;
  l.relu = relu;
  l.weight.assign(static_cast<std::size_t>(out) * in * kernel * kernel, 0.0);
  l.bias.assign(static_cast<std::size_t>(out), 0.0);
  return l;
}

Layer make_linear(std::string name, LayerRole role, int in, int out) {
  Layer l;
  l.name = std::move(name);
  l.kind = LayerKind::Linear;
  l.role = role;
  l.in_channels = in;
  l.out_channels = out;
  l.weight.assign(static_cast<std::size_t>(out) * in, 0.0);
  l.bias.assign(static_cast<std::size_t>(out), 0.0);
  return l;
}

void init_he_normal(Layer& layer, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(layer.fan_in())));
  for (double& w : layer.weight) w = dist(rng);
  std::fill(layer.bias.begin(), layer.bias.end(), 0.0);
}

void init_normal(Layer& layer, double std, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std);
  for (double& w : layer.weight) w = dist(rng);
  for (double& b : layer.bias) b = dist(rng);
}

std::uint64_t hash_layer(const Layer& layer) {
  std::uint64_t h = 1469598103934665603ULL;
  h = fnv1a(h, layer.weight.data(), layer.weight.size() * sizeof(double));
  h = fnv1a(h, layer.bias.data(), layer.bias.size() * sizeof(double));
  return h;
}

Tensor conv_forward(const Layer& l, const Tensor& in) {
  if (in.channels != l.in_channels)
    throw ConfigError("layer '" + l.name + "' expects " + std::to_string(l.in_channels) +
                      " input channels, got " + std::to_string(in.channels));
  const int out_h = l.output_size(in.height);
  const int out_w = l.output_size(in.width);
  Tensor out(l.out_channels, out_h, out_w);
  const ConstMatrixMap w(l.weight.data(), l.out_channels, static_cast<Eigen::Index>(l.fan_in()));
  MatrixMap o(out.data.data(), l.out_channels, out_h * out_w);
  if (l.kernel == 1 && l.stride == 1) {
    const ConstMatrixMap x(in.data.data(), in.channels, out_h * out_w);
    o.noalias() = w * x;
  } else {
    o.noalias() = w * im2col(l, in, out_h, out_w);
  }
  for (int c = 0; c < l.out_channels; ++c) o.row(c).array() += l.bias[c];
  return out;
}

Tensor conv_backward_input(const Layer& l, const Tensor& grad_out, int in_h, int in_w) {
  Tensor grad_in(l.in_channels, in_h, in_w);
  const ConstMatrixMap w(l.weight.data(), l.out_channels, static_cast<Eigen::Index>(l.fan_in()));
  const ConstMatrixMap g(grad_out.data.data(), l.out_channels,
                         grad_out.height * grad_out.width);
  if (l.kernel == 1 && l.stride == 1) {
    MatrixMap gi(grad_in.data.data(), l.in_channels, in_h * in_w);
    gi.noalias() = w.transpose() * g;
  } else {
    const RowMatrix cols = w.transpose() * g;
    col2im(l, cols, grad_in, grad_out.height, grad_out.width);
  }
  return grad_in;
}

void conv_backward_params(const Layer& l, const Tensor& input, const Tensor& grad_out,
                          std::vector<double>& grad_w, std::vector<double>& grad_b) {
  const ConstMatrixMap g(grad_out.data.data(), l.out_channels,
                         grad_out.height * grad_out.width);
  MatrixMap gw(grad_w.data(), l.out_channels, static_cast<Eigen::Index>(l.fan_in()));
  if (l.kernel == 1 && l.stride == 1) {
    const ConstMatrixMap x(input.data.data(), input.channels, input.height * input.width);
    gw.noalias() += g * x.transpose();
  } else {
    gw.noalias() += g * im2col(l, input, grad_out.height, grad_out.width).transpose();
  }
  for (int c = 0; c < l.out_channels; ++c) grad_b[c] += g.row(c).sum();
}

std::vector<double> linear_forward(const Layer& l, std::span<const double> input) {
  if (static_cast<int>(input.size()) != l.in_channels)
    throw ConfigError("layer '" + l.name + "' expects " + std::to_string(l.in_channels) +
                      " inputs, got " + std::to_string(input.size()));
  std::vector<double> out(l.bias);
  for (int o = 0; o < l.out_channels; ++o) {
    const double* row = l.weight.data() + static_cast<std::size_t>(o) * l.in_channels;
    double acc = 0.0;
    for (int i = 0; i < l.in_channels; ++i) acc += row[i] * input[i];
    out[o] += acc;
  }
  return out;
}

std::vector<double> linear_backward_input(const Layer& l, std::span<const double> grad_out) {
  std::vector<double> grad_in(static_cast<std::size_t>(l.in_channels), 0.0);
  for (int o = 0; o < l.out_channels; ++o) {
    if (grad_out[o] == 0.0) continue;
    const double* row = l.weight.data() + static_cast<std::size_t>(o) * l.in_channels;
    for (int i = 0; i < l.in_channels; ++i) grad_in[i] += row[i] * grad_out[o];
  }
  return grad_in;
}

}  // namespace gcame
