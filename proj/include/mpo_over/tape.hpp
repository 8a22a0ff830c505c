// Copyright (c) 2026 the mpo-over authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "mpo_over/mpo.hpp"
#include "mpo_over/tensor.hpp"

namespace mpo_over::autodiff {

enum class OpKind {
    Leaf,
    MatMul,
    Reshape,
    Add,
    Scale,
    Tanh,
    MseLoss,
    ChainContract,
};

struct Node {
    OpKind kind = OpKind::Leaf;
    std::vector<int> inputs;
    DenseTensor value;
    DenseTensor grad;  // allocated lazily during backward
    bool requires_grad = false;
    double scalar = 0.0;        // Scale only
    mpo::MpoShapePlan plan;     // ChainContract only
};

// Define-by-run reverse-mode tape. Nodes are appended in forward order, so
// reverse iteration is already a topological order for backward.
class Tape {
  public:
    int leaf(DenseTensor value, bool requires_grad);
    int matmul(int a, int b);
    int reshape(int a, std::vector<std::int64_t> dims);
    int add(int a, int b);
    int scale(int a, double s);
    int tanh(int a);
    // mean squared error over all elements
    int mse_loss(int pred, int target);
    int chain_contract(std::vector<int> factors, const mpo::MpoShapePlan& plan);

    const DenseTensor& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
    // zero tensor of the node's shape when it received no gradient
    DenseTensor gradient(int id) const;
    bool requires_grad(int id) const {
        return nodes_[static_cast<std::size_t>(id)].requires_grad;
    }
    std::size_t size() const { return nodes_.size(); }

    // Seeds d(loss)/d(loss) = 1 and propagates; returns the loss value.
    // The loss node must hold a single element.
    double backward(int loss_id);

  private:
    int push(Node node);
    void accumulate(int id, const DenseTensor& g);

    std::vector<Node> nodes_;
};

}  // namespace mpo_over::autodiff
