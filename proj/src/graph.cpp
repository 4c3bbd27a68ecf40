#include "gcame/graph.hpp"

#include <algorithm>

#include "gcame/error.hpp"

namespace gcame {

namespace {

void accumulate(Tensor& dst, const Tensor& src) {
  if (dst.empty()) {
    dst = src;
    return;
  }
  for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}

}  // namespace

void relu_inplace(Tensor& t) {
  for (double& v : t.data) v = std::max(v, 0.0);
}

int ConvGraph::add_conv(Layer layer, int input) {
  if (input != kImage && (input < 0 || input >= static_cast<int>(nodes_.size())))
    throw ConfigError("conv node '" + layer.name + "' references unknown input");
  Node n;
  n.op = Op::Conv;
  n.name = layer.name;
  n.input = input;
  n.layer = static_cast<int>(layers_.size());
  layers_.push_back(std::move(layer));
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

int ConvGraph::add_upsample_add(std::string name, int same_res, int coarse) {
  const int n_nodes = static_cast<int>(nodes_.size());
  if (same_res < 0 || same_res >= n_nodes || coarse < 0 || coarse >= n_nodes)
    throw ConfigError("merge node '" + name + "' references unknown input");
  Node n;
  n.op = Op::UpsampleAdd;
  n.name = std::move(name);
  n.input = same_res;
  n.coarse = coarse;
  nodes_.push_back(std::move(n));
  return n_nodes;
}

std::optional<int> ConvGraph::find_node(const std::string& name) const {
  for (std::size_t i = 0; i < nodes_.size(); ++i)
    if (nodes_[i].name == name) return static_cast<int>(i);
  return std::nullopt;
}

std::vector<Tensor> ConvGraph::forward(const Tensor& image) const {
  std::vector<Tensor> out(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    const Tensor& src = n.input == kImage ? image : out[n.input];
    if (n.op == Op::Conv) {
      const Layer& l = layers_[n.layer];
      out[i] = conv_forward(l, src);
      if (l.relu) relu_inplace(out[i]);
    } else {
      const Tensor& coarse = out[n.coarse];
      Tensor merged = src;
      for (int c = 0; c < merged.channels; ++c)
        for (int y = 0; y < merged.height; ++y)
          for (int x = 0; x < merged.width; ++x)
            merged.at(c, y, x) += coarse.at(c, std::min(y / 2, coarse.height - 1),
                                            std::min(x / 2, coarse.width - 1));
      out[i] = std::move(merged);
    }
  }
  return out;
}

std::vector<ConvGraph::ParamGrad> ConvGraph::zero_param_grads() const {
  std::vector<ParamGrad> g(layers_.size());
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    g[i].weight.assign(layers_[i].weight.size(), 0.0);
    g[i].bias.assign(layers_[i].bias.size(), 0.0);
  }
  return g;
}

void ConvGraph::backward(const Tensor& image, const std::vector<Tensor>& outputs,
                         std::vector<Tensor>& node_grads,
                         std::vector<ParamGrad>* param_grads) const {
  node_grads.resize(nodes_.size());
  for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
    const Node& n = nodes_[i];
    if (node_grads[i].empty()) continue;
    if (n.op == Op::Conv) {
      const Layer& l = layers_[n.layer];
      Tensor g = node_grads[i];
      if (l.relu) {
        const Tensor& y = outputs[i];
        for (std::size_t j = 0; j < g.data.size(); ++j)
          if (y.data[j] <= 0.0) g.data[j] = 0.0;
      }
      const Tensor& src = n.input == kImage ? image : outputs[n.input];
      if (param_grads)
        conv_backward_params(l, src, g, (*param_grads)[n.layer].weight,
                             (*param_grads)[n.layer].bias);
      if (n.input != kImage)
        accumulate(node_grads[n.input], conv_backward_input(l, g, src.height, src.width));
    } else {
      const Tensor& g = node_grads[i];
      accumulate(node_grads[n.input], g);
      const Tensor& coarse = outputs[n.coarse];
      Tensor gc(coarse.channels, coarse.height, coarse.width);
      for (int c = 0; c < g.channels; ++c)
        for (int y = 0; y < g.height; ++y)
          for (int x = 0; x < g.width; ++x)
            gc.at(c, std::min(y / 2, coarse.height - 1), std::min(x / 2, coarse.width - 1)) +=
                g.at(c, y, x);
      accumulate(node_grads[n.coarse], gc);
    }
  }
  for (std::size_t i = 0; i < nodes_.size(); ++i)
    if (node_grads[i].empty()) {
      const Tensor& y = outputs[i];
      node_grads[i] = Tensor(y.channels, y.height, y.width);
    }
}

}  // namespace gcame
