// Copyright (c) 2026 the mpo-over authors
// SPDX-License-Identifier: Apache-2.0
#include "mpo_over/tape.hpp"

#include <cmath>

#include "mpo_over/kernels.hpp"

namespace mpo_over::autodiff {

int Tape::push(Node node) {
    nodes_.push_back(std::move(node));
    return static_cast<int>(nodes_.size()) - 1;
}

int Tape::leaf(DenseTensor value, bool requires_grad) {
    Node n;
    n.kind = OpKind::Leaf;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    return push(std::move(n));
}

int Tape::matmul(int a, int b) {
    Node n;
    n.kind = OpKind::MatMul;
    n.inputs = {a, b};
    n.value = mpo_over::matmul(value(a), value(b));
    n.requires_grad = requires_grad(a) || requires_grad(b);
    return push(std::move(n));
}

int Tape::reshape(int a, std::vector<std::int64_t> dims) {
    Node n;
    n.kind = OpKind::Reshape;
    n.inputs = {a};
    n.value = mpo_over::reshape(value(a), std::move(dims));
    n.requires_grad = requires_grad(a);
    return push(std::move(n));
}

int Tape::add(int a, int b) {
    Node n;
    n.kind = OpKind::Add;
    n.inputs = {a, b};
    n.value = mpo_over::add(value(a), value(b));
    n.requires_grad = requires_grad(a) || requires_grad(b);
    return push(std::move(n));
}

int Tape::scale(int a, double s) {
    Node n;
    n.kind = OpKind::Scale;
    n.inputs = {a};
    n.scalar = s;
    n.value = scaled(value(a), s);
    n.requires_grad = requires_grad(a);
    return push(std::move(n));
}

int Tape::tanh(int a) {
    Node n;
    n.kind = OpKind::Tanh;
    n.inputs = {a};
    DenseTensor out(value(a).dims());
    kernels::tanh_map(value(a).data().data(), out.data().data(), out.size());
    n.value = std::move(out);
    n.requires_grad = requires_grad(a);
    return push(std::move(n));
}

int Tape::mse_loss(int pred, int target) {
    const DenseTensor& p = value(pred);
    const DenseTensor& t = value(target);
    if (!p.same_dims(t)) throw ShapeMismatch("mse_loss: dims differ");
    DenseTensor diff = sub(p, t);
    const double mse = kernels::sum_squares(diff.data().data(), diff.size()) /
                       static_cast<double>(diff.size());
    Node n;
    n.kind = OpKind::MseLoss;
    n.inputs = {pred, target};
    n.value = DenseTensor({1}, {mse});
    n.requires_grad = requires_grad(pred) || requires_grad(target);
    return push(std::move(n));
}

int Tape::chain_contract(std::vector<int> factors, const mpo::MpoShapePlan& plan) {
    if (factors.size() != static_cast<std::size_t>(plan.factor_count()))
        throw PlanMismatch("chain_contract: factor count differs from plan");
    mpo::MpoChain chain;
    chain.plan = plan;
    chain.truncation_errors.assign(factors.size(), 0.0);
    bool needs_grad = false;
    for (int id : factors) {
        chain.factors.push_back(value(id));
        needs_grad = needs_grad || requires_grad(id);
    }
    Node n;
    n.kind = OpKind::ChainContract;
    n.inputs = std::move(factors);
    n.value = mpo::contract(chain);
    n.requires_grad = needs_grad;
    n.plan = plan;
    return push(std::move(n));
}

DenseTensor Tape::gradient(int id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.empty()) return DenseTensor(n.value.dims());
    return n.grad;
}

void Tape::accumulate(int id, const DenseTensor& g) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad) return;
    if (n.grad.empty())
        n.grad = g;
    else
        n.grad = mpo_over::add(n.grad, g);
}

double Tape::backward(int loss_id) {
    Node& loss = nodes_[static_cast<std::size_t>(loss_id)];
    if (loss.value.size() != 1)
        throw ShapeMismatch("backward: loss node must hold a single element");
    const double loss_value = loss.value.data()[0];
    if (!std::isfinite(loss_value))
        throw NonFinite("backward: loss is not finite");
    loss.grad = DenseTensor({1}, {1.0});

    for (int id = loss_id; id >= 0; --id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (!n.requires_grad || n.grad.empty()) continue;
        const DenseTensor& g = n.grad;
        switch (n.kind) {
            case OpKind::Leaf:
                break;
            case OpKind::MatMul: {
                const DenseTensor& a = value(n.inputs[0]);
                const DenseTensor& b = value(n.inputs[1]);
                if (requires_grad(n.inputs[0]))
                    accumulate(n.inputs[0], mpo_over::matmul(g, transpose(b)));
                if (requires_grad(n.inputs[1]))
                    accumulate(n.inputs[1], mpo_over::matmul(transpose(a), g));
                break;
            }
            case OpKind::Reshape:
                accumulate(n.inputs[0],
                           mpo_over::reshape(g, value(n.inputs[0]).dims()));
                break;
            case OpKind::Add:
                accumulate(n.inputs[0], g);
                accumulate(n.inputs[1], g);
                break;
            case OpKind::Scale:
                accumulate(n.inputs[0], scaled(g, n.scalar));
                break;
            case OpKind::Tanh: {
                DenseTensor dg(n.value.dims());
                auto y = n.value.data();
                auto gin = g.data();
                auto out = dg.data();
                for (std::size_t i = 0; i < out.size(); ++i)
                    out[i] = gin[i] * (1.0 - y[i] * y[i]);
                accumulate(n.inputs[0], dg);
                break;
            }
            case OpKind::MseLoss: {
                const DenseTensor& p = value(n.inputs[0]);
                const DenseTensor& t = value(n.inputs[1]);
                const double gs = g.data()[0] * 2.0 / static_cast<double>(p.size());
                if (requires_grad(n.inputs[0]))
                    accumulate(n.inputs[0], scaled(sub(p, t), gs));
                if (requires_grad(n.inputs[1]))
                    accumulate(n.inputs[1], scaled(sub(t, p), gs));
                break;
            }
            case OpKind::ChainContract: {
                std::vector<DenseTensor> factors;
                factors.reserve(n.inputs.size());
                for (int in : n.inputs) factors.push_back(value(in));
                std::vector<DenseTensor> grads =
                    mpo::contract_backward(n.plan, factors, g);
                for (std::size_t k = 0; k < n.inputs.size(); ++k)
                    accumulate(n.inputs[static_cast<std::size_t>(k)], grads[k]);
                break;
            }
        }
    }
    return loss_value;
}

}  // namespace mpo_over::autodiff
