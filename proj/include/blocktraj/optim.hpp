#pragma once

// Named parameter store with gradient slots and Adam moments, the AdamW
// update, and the central-finite-difference gradient checker.

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "blocktraj/graph.hpp"

namespace blocktraj {

class ParamStore {
public:
    Tensor& add(const std::string& name, Tensor init);

    bool has(const std::string& name) const { return index_.count(name) > 0; }
    Tensor& value(const std::string& name) { return entry(name).value; }
    const Tensor& value(const std::string& name) const;
    Tensor& grad(const std::string& name) { return entry(name).grad; }

    const std::vector<std::string>& names() const { return order_; }
    std::size_t total_params() const;

    void zero_grads();

    std::uint64_t step_count() const { return step_; }

    friend void adam_step(ParamStore& params, double lr, double beta1, double beta2, double eps,
                          double weight_decay);

private:
    struct Entry {
        Tensor value;
        Tensor grad;
        Tensor m;
        Tensor v;
    };
    Entry& entry(const std::string& name);
    const Entry& entry(const std::string& name) const;

    std::vector<std::string> order_;
    std::map<std::string, Entry> index_;
    std::uint64_t step_ = 0;
};

// Decoupled weight decay (AdamW) with bias correction.
void adam_step(ParamStore& params, double lr, double beta1 = 0.9, double beta2 = 0.999,
               double eps = 1e-8, double weight_decay = 0.0);

// Ties graph leaves to store entries; one leaf per parameter per graph.
// After Graph::backward, harvest() accumulates leaf grads into the store.
class ParamBinder {
public:
    ParamBinder(Graph& graph, ParamStore& store, bool trainable = true)
        : graph_(graph), store_(store), trainable_(trainable) {}

    Node* operator()(const std::string& name);
    void harvest();

private:
    Graph& graph_;
    ParamStore& store_;
    bool trainable_;
    std::map<std::string, Node*> leaves_;
};

// ----------------------------------------------------------------------
// Gradient checking
// ----------------------------------------------------------------------

using LossBuilder = std::function<Node*(Graph&, ParamBinder&)>;

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0.0;
    std::size_t worst_index = 0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> per_param;
    double tolerance = 0.0;
    bool passed = false;
    std::string worst_param;
    double worst_err = 0.0;
};

// Compares analytic gradients against central differences (step h) for
// every element of every parameter. post_backward, when set, runs after
// the analytic pass and may perturb store gradients (fault injection in
// tests). Requires deterministic builders: the same loss for the same
// parameter values.
GradCheckReport grad_check(ParamStore& params, const LossBuilder& builder, double tolerance,
                           double h = 1e-5,
                           const std::function<void(ParamStore&)>& post_backward = nullptr);

}  // namespace blocktraj
