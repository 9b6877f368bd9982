#include "blocktraj/optim.hpp"

#include <cmath>

namespace blocktraj {

Tensor& ParamStore::add(const std::string& name, Tensor init) {
    if (index_.count(name)) throw ContractError("duplicate parameter name: " + name);
    Entry e;
    e.grad = Tensor(init.rows(), init.cols());
    e.m = Tensor(init.rows(), init.cols());
    e.v = Tensor(init.rows(), init.cols());
    e.value = std::move(init);
    auto [it, ok] = index_.emplace(name, std::move(e));
    (void)ok;
    order_.push_back(name);
    return it->second.value;
}

ParamStore::Entry& ParamStore::entry(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter: " + name);
    return it->second;
}

const ParamStore::Entry& ParamStore::entry(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter: " + name);
    return it->second;
}

const Tensor& ParamStore::value(const std::string& name) const { return entry(name).value; }

std::size_t ParamStore::total_params() const {
    std::size_t n = 0;
    for (const auto& [k, e] : index_) n += e.value.numel();
    return n;
}

void ParamStore::zero_grads() {
    for (auto& [k, e] : index_) e.grad.fill(0.0);
}

void adam_step(ParamStore& params, double lr, double beta1, double beta2, double eps,
               double weight_decay) {
    params.step_ += 1;
    const double t = static_cast<double>(params.step_);
    const double bc1 = 1.0 - std::pow(beta1, t);
    const double bc2 = 1.0 - std::pow(beta2, t);
    for (auto& [name, e] : params.index_) {
        for (std::size_t i = 0; i < e.value.numel(); ++i) {
            const double g = e.grad[i];
            e.m[i] = beta1 * e.m[i] + (1.0 - beta1) * g;
            e.v[i] = beta2 * e.v[i] + (1.0 - beta2) * g * g;
            const double mhat = e.m[i] / bc1;
            const double vhat = e.v[i] / bc2;
            e.value[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * e.value[i]);
        }
    }
}

Node* ParamBinder::operator()(const std::string& name) {
    auto it = leaves_.find(name);
    if (it != leaves_.end()) return it->second;
    Node* leaf = graph_.leaf(&store_.value(name), trainable_);
    leaves_.emplace(name, leaf);
    return leaf;
}

void ParamBinder::harvest() {
    for (auto& [name, leaf] : leaves_) {
        if (leaf->grad.numel() == 0) continue;  // parameter unreachable from the loss
        Tensor& g = store_.grad(name);
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] += leaf->grad[i];
    }
}

GradCheckReport grad_check(ParamStore& params, const LossBuilder& builder, double tolerance,
                           double h, const std::function<void(ParamStore&)>& post_backward) {
    GradCheckReport report;
    report.tolerance = tolerance;

    params.zero_grads();
    {
        Graph g(true);
        ParamBinder bind(g, params);
        Node* loss = builder(g, bind);
        g.backward(loss);
        bind.harvest();
    }
    if (post_backward) post_backward(params);

    auto eval_loss = [&]() {
        Graph g(true);
        ParamBinder bind(g, params);
        return builder(g, bind)->value().item();
    };

    for (const std::string& name : params.names()) {
        GradCheckEntry entry;
        entry.name = name;
        Tensor& value = params.value(name);
        const Tensor analytic = params.grad(name);
        for (std::size_t i = 0; i < value.numel(); ++i) {
            const double saved = value[i];
            value[i] = saved + h;
            const double lp = eval_loss();
            value[i] = saved - h;
            const double lm = eval_loss();
            value[i] = saved;
            const double fd = (lp - lm) / (2.0 * h);
            const double denom = std::max({std::abs(analytic[i]), std::abs(fd), 1e-6});
            const double rel = std::abs(analytic[i] - fd) / denom;
            if (rel > entry.max_rel_err) {
                entry.max_rel_err = rel;
                entry.worst_index = i;
            }
        }
        if (entry.max_rel_err > report.worst_err) {
            report.worst_err = entry.max_rel_err;
            report.worst_param = name;
        }
        report.per_param.push_back(std::move(entry));
    }
    report.passed = report.worst_err <= tolerance;
    return report;
}

}  // namespace blocktraj
