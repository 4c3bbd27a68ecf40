#pragma once

#include <optional>
#include <string>
#include <vector>

#include "gcame/layers.hpp"
#include "gcame/tensor.hpp"

namespace gcame {

/// Feed-forward DAG of convolution and FPN merge nodes, evaluated in
/// insertion order. Node outputs are post-activation.
class ConvGraph {
 public:
  static constexpr int kImage = -1;

  enum class Op { Conv, UpsampleAdd };

  struct Node {
    Op op = Op::Conv;
    std::string name;
    int input = kImage;  // Conv: source node; UpsampleAdd: same-resolution operand
    int coarse = kImage; // UpsampleAdd: half-resolution operand, nearest-upsampled x2
    int layer = -1;      // Conv: index into layers()
  };

  /// Per-layer parameter gradients, shaped like Layer::weight / Layer::bias.
  struct ParamGrad {
    std::vector<double> weight;
    std::vector<double> bias;
  };

  int add_conv(Layer layer, int input);
  int add_upsample_add(std::string name, int same_res, int coarse);

  /// Forward pass; returns one output tensor per node.
  std::vector<Tensor> forward(const Tensor& image) const;

  /// Reverse-mode pass. `node_grads` holds dL/d(node output) seeds (empty
  /// tensors mean zero) and is completed in place for every node. When
  /// `param_grads` is non-null it receives accumulated weight gradients.
  void backward(const Tensor& image, const std::vector<Tensor>& outputs,
                std::vector<Tensor>& node_grads, std::vector<ParamGrad>* param_grads) const;

  std::vector<ParamGrad> zero_param_grads() const;

  const std::vector<Node>& nodes() const { return nodes_; }
  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Layer>& layers() { return layers_; }
  std::optional<int> find_node(const std::string& name) const;
  const Layer& layer_of(int node) const { return layers_.at(nodes_.at(node).layer); }

 private:
  std::vector<Node> nodes_;
  std::vector<Layer> layers_;
};

void relu_inplace(Tensor& t);

}  // namespace gcame
