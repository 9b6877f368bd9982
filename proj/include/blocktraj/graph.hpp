#pragma once

// Reverse-mode computation graph over Tensor. The op set is exactly what
// the denoiser and road network encoder need; every op has a hand-written
// backward that the finite-difference checker in optim.hpp validates.

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "blocktraj/tensor.hpp"

namespace blocktraj {

class Graph;

struct Node {
    const Tensor* external = nullptr;  // set for leaves that view outside storage
    Tensor owned;
    Tensor grad;  // allocated on first accumulation during backward
    bool requires_grad = false;
    std::function<void()> backprop;  // accumulates into parents' grads

    const Tensor& value() const { return external ? *external : owned; }

    void accumulate(const Tensor& g) {
        if (grad.numel() == 0) grad = Tensor(value().rows(), value().cols());
        for (std::size_t i = 0; i < g.numel(); ++i) grad[i] += g[i];
    }

    // grad access with lazy allocation, for backprop closures
    Tensor& grad_buf() {
        if (grad.numel() == 0) grad = Tensor(value().rows(), value().cols());
        return grad;
    }
};

class Graph {
public:
    explicit Graph(bool check_finite = true) : check_finite_(check_finite) {}

    // ---- leaves -------------------------------------------------------

    // View of external storage (parameters, cached encoder output).
    Node* leaf(const Tensor* t, bool requires_grad);
    // Owned constant (inputs, masks, feature columns).
    Node* constant(Tensor t);

    // ---- ops ----------------------------------------------------------

    Node* matmul(Node* a, Node* b, bool trans_a = false, bool trans_b = false);
    Node* add(Node* a, Node* b);                 // same shape
    Node* add_rowvec(Node* a, Node* b);          // (n,m) + (1,m) broadcast over rows
    Node* scale(Node* a, double c);
    Node* gelu(Node* x);                         // exact erf form
    Node* leaky_relu(Node* x, double slope);
    Node* softmax_rows(Node* x);
    Node* layer_norm(Node* x, Node* gain, Node* bias, double eps = 1e-5);
    Node* concat_cols(const std::vector<Node*>& parts);
    Node* slice_cols(Node* x, std::size_t start, std::size_t len);
    Node* slice_rows(Node* x, std::size_t start, std::size_t len);
    Node* gather_rows(Node* table, std::vector<std::uint32_t> ids);

    // Token embedding where road tokens come from the encoder output and
    // all other tokens from the ordinary table. road_rows may be null
    // (then every token resolves through the table).
    Node* embed_tokens(Node* table, Node* road_rows, const std::vector<std::uint32_t>& tokens,
                       std::uint32_t road_base, std::uint32_t n_roads);

    // Softmax over contiguous segments of a (p,1) score column; offsets has
    // n_seg+1 entries delimiting each segment's pair range.
    Node* segment_softmax(Node* scores, std::vector<std::size_t> offsets);

    // out[i] = sum over pairs p in segment i of alpha[p] * source[j_idx[p]].
    Node* segment_weighted_rows(Node* alpha, Node* source, std::vector<std::uint32_t> j_idx,
                                std::vector<std::size_t> offsets);

    // Weighted cross-entropy averaged over mask-selected rows:
    //   sum_i mask[i] * weight[i] * CE(logits[i], target[i]) / sum_i mask[i]
    Node* cross_entropy(Node* logits, const std::vector<std::uint32_t>& targets,
                        const std::vector<std::uint8_t>& mask, const std::vector<double>& weights);

    Node* sum_scalars(const std::vector<Node*>& terms);

    // ---- engine -------------------------------------------------------

    // Populates grads of every reachable requires_grad node. loss must be scalar.
    void backward(Node* loss);

    std::size_t size() const { return nodes_.size(); }
    bool check_finite() const { return check_finite_; }

private:
    Node* make(Tensor value, std::vector<Node*> parents);
    void finish(Node* n);

    std::vector<std::unique_ptr<Node>> nodes_;
    bool check_finite_;
    bool backward_done_ = false;
};

double gelu_scalar(double x);

}  // namespace blocktraj
