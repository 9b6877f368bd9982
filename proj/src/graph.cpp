#include "blocktraj/graph.hpp"

#include <algorithm>
#include <cmath>

namespace blocktraj {

namespace {
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;
}  // namespace

double gelu_scalar(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

Node* Graph::make(Tensor value, std::vector<Node*> parents) {
    auto node = std::make_unique<Node>();
    node->owned = std::move(value);
    for (Node* p : parents) node->requires_grad = node->requires_grad || p->requires_grad;
    Node* raw = node.get();
    nodes_.push_back(std::move(node));
    return raw;
}

void Graph::finish(Node* n) {
    if (check_finite_ && !n->value().all_finite())
        throw NumericalError("non-finite values in op output " + n->value().shape_str());
}

Node* Graph::leaf(const Tensor* t, bool requires_grad) {
    auto node = std::make_unique<Node>();
    node->external = t;
    node->requires_grad = requires_grad;
    Node* raw = node.get();
    nodes_.push_back(std::move(node));
    return raw;
}

Node* Graph::constant(Tensor t) {
    Node* n = make(std::move(t), {});
    finish(n);
    return n;
}

Node* Graph::matmul(Node* a, Node* b, bool trans_a, bool trans_b) {
    Tensor out;
    matmul_into(out, a->value(), b->value(), trans_a, trans_b, false);
    Node* n = make(std::move(out), {a, b});
    if (n->requires_grad) {
        n->backprop = [n, a, b, trans_a, trans_b]() {
            const Tensor& dc = n->grad;
            if (a->requires_grad) {
                if (!trans_a && !trans_b)
                    matmul_into(a->grad_buf(), dc, b->value(), false, true, true);
                else if (!trans_a && trans_b)
                    matmul_into(a->grad_buf(), dc, b->value(), false, false, true);
                else if (trans_a && !trans_b)
                    matmul_into(a->grad_buf(), b->value(), dc, false, true, true);
                else
                    matmul_into(a->grad_buf(), b->value(), dc, true, true, true);
            }
            if (b->requires_grad) {
                if (!trans_a && !trans_b)
                    matmul_into(b->grad_buf(), a->value(), dc, true, false, true);
                else if (!trans_a && trans_b)
                    matmul_into(b->grad_buf(), dc, a->value(), true, false, true);
                else if (trans_a && !trans_b)
                    matmul_into(b->grad_buf(), a->value(), dc, false, false, true);
                else
                    matmul_into(b->grad_buf(), dc, a->value(), true, true, true);
            }
        };
    }
    finish(n);
    return n;
}

Node* Graph::add(Node* a, Node* b) {
    const Tensor& av = a->value();
    const Tensor& bv = b->value();
    if (!av.same_shape(bv))
        throw ContractError("add: shape mismatch " + av.shape_str() + " vs " + bv.shape_str());
    Tensor out = av;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
    Node* n = make(std::move(out), {a, b});
    if (n->requires_grad) {
        n->backprop = [n, a, b]() {
            if (a->requires_grad) a->accumulate(n->grad);
            if (b->requires_grad) b->accumulate(n->grad);
        };
    }
    finish(n);
    return n;
}

Node* Graph::add_rowvec(Node* a, Node* b) {
    const Tensor& av = a->value();
    const Tensor& bv = b->value();
    if (bv.rows() != 1 || bv.cols() != av.cols())
        throw ContractError("add_rowvec: " + av.shape_str() + " + " + bv.shape_str());
    Tensor out = av;
    for (std::size_t i = 0; i < out.rows(); ++i) {
        double* orow = out.row(i);
        for (std::size_t j = 0; j < out.cols(); ++j) orow[j] += bv[j];
    }
    Node* n = make(std::move(out), {a, b});
    if (n->requires_grad) {
        n->backprop = [n, a, b]() {
            if (a->requires_grad) a->accumulate(n->grad);
            if (b->requires_grad) {
                Tensor& gb = b->grad_buf();
                for (std::size_t i = 0; i < n->grad.rows(); ++i) {
                    const double* grow = n->grad.row(i);
                    for (std::size_t j = 0; j < n->grad.cols(); ++j) gb[j] += grow[j];
                }
            }
        };
    }
    finish(n);
    return n;
}

Node* Graph::scale(Node* a, double c) {
    Tensor out = a->value();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= c;
    Node* n = make(std::move(out), {a});
    if (n->requires_grad) {
        n->backprop = [n, a, c]() {
            Tensor& ga = a->grad_buf();
            for (std::size_t i = 0; i < n->grad.numel(); ++i) ga[i] += c * n->grad[i];
        };
    }
    finish(n);
    return n;
}

Node* Graph::gelu(Node* x) {
    const Tensor& xv = x->value();
    Tensor out(xv.rows(), xv.cols());
    for (std::size_t i = 0; i < xv.numel(); ++i) out[i] = gelu_scalar(xv[i]);
    Node* n = make(std::move(out), {x});
    if (n->requires_grad) {
        n->backprop = [n, x]() {
            const Tensor& xv = x->value();
            Tensor& gx = x->grad_buf();
            for (std::size_t i = 0; i < xv.numel(); ++i) {
                const double v = xv[i];
                const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
                const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
                gx[i] += n->grad[i] * (cdf + v * pdf);
            }
        };
    }
    finish(n);
    return n;
}

Node* Graph::leaky_relu(Node* x, double slope) {
    const Tensor& xv = x->value();
    Tensor out(xv.rows(), xv.cols());
    for (std::size_t i = 0; i < xv.numel(); ++i) out[i] = xv[i] > 0.0 ? xv[i] : slope * xv[i];
    Node* n = make(std::move(out), {x});
    if (n->requires_grad) {
        n->backprop = [n, x, slope]() {
            const Tensor& xv = x->value();
            Tensor& gx = x->grad_buf();
            for (std::size_t i = 0; i < xv.numel(); ++i)
                gx[i] += n->grad[i] * (xv[i] > 0.0 ? 1.0 : slope);
        };
    }
    finish(n);
    return n;
}

Node* Graph::softmax_rows(Node* x) {
    const Tensor& xv = x->value();
    Tensor out(xv.rows(), xv.cols());
    for (std::size_t i = 0; i < xv.rows(); ++i) {
        const double* xr = xv.row(i);
        double* orow = out.row(i);
        double mx = xr[0];
        for (std::size_t j = 1; j < xv.cols(); ++j) mx = std::max(mx, xr[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < xv.cols(); ++j) {
            orow[j] = std::exp(xr[j] - mx);
            z += orow[j];
        }
        for (std::size_t j = 0; j < xv.cols(); ++j) orow[j] /= z;
    }
    Node* n = make(std::move(out), {x});
    if (n->requires_grad) {
        n->backprop = [n, x]() {
            const Tensor& y = n->value();
            Tensor& gx = x->grad_buf();
            for (std::size_t i = 0; i < y.rows(); ++i) {
                const double* yr = y.row(i);
                const double* gr = n->grad.row(i);
                double dot = 0.0;
                for (std::size_t j = 0; j < y.cols(); ++j) dot += yr[j] * gr[j];
                double* gxr = gx.row(i);
                for (std::size_t j = 0; j < y.cols(); ++j) gxr[j] += yr[j] * (gr[j] - dot);
            }
        };
    }
    finish(n);
    return n;
}

Node* Graph::layer_norm(Node* x, Node* gain, Node* bias, double eps) {
    const Tensor& xv = x->value();
    const std::size_t m = xv.cols();
    if (gain->value().numel() != m || bias->value().numel() != m)
        throw ContractError("layer_norm: gain/bias size must match feature dim " +
                            xv.shape_str());
    Tensor out(xv.rows(), m);
    Tensor xhat(xv.rows(), m);
    Tensor inv_sd(xv.rows(), 1);
    for (std::size_t i = 0; i < xv.rows(); ++i) {
        const double* xr = xv.row(i);
        double mu = 0.0;
        for (std::size_t j = 0; j < m; ++j) mu += xr[j];
        mu /= static_cast<double>(m);
        double var = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            const double d = xr[j] - mu;
            var += d * d;
        }
        var /= static_cast<double>(m);
        const double isd = 1.0 / std::sqrt(var + eps);
        inv_sd[i] = isd;
        double* hr = xhat.row(i);
        double* orow = out.row(i);
        for (std::size_t j = 0; j < m; ++j) {
            hr[j] = (xr[j] - mu) * isd;
            orow[j] = hr[j] * gain->value()[j] + bias->value()[j];
        }
    }
    Node* n = make(std::move(out), {x, gain, bias});
    if (n->requires_grad) {
        auto xh = std::make_shared<Tensor>(std::move(xhat));
        auto isd = std::make_shared<Tensor>(std::move(inv_sd));
        n->backprop = [n, x, gain, bias, xh, isd]() {
            const std::size_t m = xh->cols();
            const double invm = 1.0 / static_cast<double>(m);
            for (std::size_t i = 0; i < xh->rows(); ++i) {
                const double* hr = xh->row(i);
                const double* gr = n->grad.row(i);
                if (gain->requires_grad) {
                    Tensor& gg = gain->grad_buf();
                    for (std::size_t j = 0; j < m; ++j) gg[j] += gr[j] * hr[j];
                }
                if (bias->requires_grad) {
                    Tensor& gb = bias->grad_buf();
                    for (std::size_t j = 0; j < m; ++j) gb[j] += gr[j];
                }
                if (x->requires_grad) {
                    double sum_dh = 0.0, sum_dh_h = 0.0;
                    for (std::size_t j = 0; j < m; ++j) {
                        const double dh = gr[j] * gain->value()[j];
                        sum_dh += dh;
                        sum_dh_h += dh * hr[j];
                    }
                    Tensor& gx = x->grad_buf();
                    double* gxr = gx.row(i);
                    for (std::size_t j = 0; j < m; ++j) {
                        const double dh = gr[j] * gain->value()[j];
                        gxr[j] += (*isd)[i] * (dh - invm * sum_dh - hr[j] * invm * sum_dh_h);
                    }
                }
            }
        };
    }
    finish(n);
    return n;
}

Node* Graph::concat_cols(const std::vector<Node*>& parts) {
    if (parts.empty()) throw ContractError("concat_cols: empty input");
    const std::size_t rows = parts[0]->value().rows();
    std::size_t total = 0;
    for (Node* p : parts) {
        if (p->value().rows() != rows)
            throw ContractError("concat_cols: row mismatch " + p->value().shape_str());
        total += p->value().cols();
    }
    Tensor out(rows, total);
    std::size_t off = 0;
    for (Node* p : parts) {
        const Tensor& pv = p->value();
        for (std::size_t i = 0; i < rows; ++i)
            std::copy(pv.row(i), pv.row(i) + pv.cols(), out.row(i) + off);
        off += pv.cols();
    }
    Node* n = make(std::move(out), parts);
    if (n->requires_grad) {
        std::vector<Node*> ps = parts;
        n->backprop = [n, ps]() {
            std::size_t off = 0;
            for (Node* p : ps) {
                const std::size_t pc = p->value().cols();
                if (p->requires_grad) {
                    Tensor& gp = p->grad_buf();
                    for (std::size_t i = 0; i < gp.rows(); ++i) {
                        const double* grow = n->grad.row(i) + off;
                        double* gprow = gp.row(i);
                        for (std::size_t j = 0; j < pc; ++j) gprow[j] += grow[j];
                    }
                }
                off += pc;
            }
        };
    }
    finish(n);
    return n;
}

Node* Graph::slice_cols(Node* x, std::size_t start, std::size_t len) {
    const Tensor& xv = x->value();
    if (start + len > xv.cols()) throw ContractError("slice_cols: out of range");
    Tensor out(xv.rows(), len);
    for (std::size_t i = 0; i < xv.rows(); ++i)
        std::copy(xv.row(i) + start, xv.row(i) + start + len, out.row(i));
    Node* n = make(std::move(out), {x});
    if (n->requires_grad) {
        n->backprop = [n, x, start, len]() {
            Tensor& gx = x->grad_buf();
            for (std::size_t i = 0; i < n->grad.rows(); ++i) {
                const double* grow = n->grad.row(i);
                double* gxr = gx.row(i) + start;
                for (std::size_t j = 0; j < len; ++j) gxr[j] += grow[j];
            }
        };
    }
    finish(n);
    return n;
}

Node* Graph::slice_rows(Node* x, std::size_t start, std::size_t len) {
    const Tensor& xv = x->value();
    if (start + len > xv.rows()) throw ContractError("slice_rows: out of range");
    Tensor out(len, xv.cols());
    for (std::size_t i = 0; i < len; ++i)
        std::copy(xv.row(start + i), xv.row(start + i) + xv.cols(), out.row(i));
    Node* n = make(std::move(out), {x});
    if (n->requires_grad) {
        n->backprop = [n, x, start, len]() {
            Tensor& gx = x->grad_buf();
            for (std::size_t i = 0; i < len; ++i) {
                const double* grow = n->grad.row(i);
                double* gxr = gx.row(start + i);
                for (std::size_t j = 0; j < n->grad.cols(); ++j) gxr[j] += grow[j];
            }
        };
    }
    finish(n);
    return n;
}

Node* Graph::gather_rows(Node* table, std::vector<std::uint32_t> ids) {
    const Tensor& tv = table->value();
    Tensor out(ids.size(), tv.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] >= tv.rows())
            throw ContractError("gather_rows: id " + std::to_string(ids[i]) + " out of " +
                                std::to_string(tv.rows()));
        std::copy(tv.row(ids[i]), tv.row(ids[i]) + tv.cols(), out.row(i));
    }
    Node* n = make(std::move(out), {table});
    if (n->requires_grad) {
        auto idv = std::make_shared<std::vector<std::uint32_t>>(std::move(ids));
        n->backprop = [n, table, idv]() {
            Tensor& gt = table->grad_buf();
            for (std::size_t i = 0; i < idv->size(); ++i) {
                const double* grow = n->grad.row(i);
                double* trow = gt.row((*idv)[i]);
                for (std::size_t j = 0; j < n->grad.cols(); ++j) trow[j] += grow[j];
            }
        };
    }
    finish(n);
    return n;
}

Node* Graph::embed_tokens(Node* table, Node* road_rows, const std::vector<std::uint32_t>& tokens,
                          std::uint32_t road_base, std::uint32_t n_roads) {
    const Tensor& tv = table->value();
    Tensor out(tokens.size(), tv.cols());
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        const std::uint32_t t = tokens[i];
        const bool is_road = road_rows && t >= road_base && t < road_base + n_roads;
        const Tensor& src = is_road ? road_rows->value() : tv;
        const std::uint32_t r = is_road ? t - road_base : t;
        if (r >= src.rows())
            throw ContractError("embed_tokens: token " + std::to_string(t) + " out of range");
        std::copy(src.row(r), src.row(r) + src.cols(), out.row(i));
    }
    std::vector<Node*> parents{table};
    if (road_rows) parents.push_back(road_rows);
    Node* n = make(std::move(out), parents);
    if (n->requires_grad) {
        auto toks = std::make_shared<std::vector<std::uint32_t>>(tokens);
        n->backprop = [n, table, road_rows, toks, road_base, n_roads]() {
            for (std::size_t i = 0; i < toks->size(); ++i) {
                const std::uint32_t t = (*toks)[i];
                const bool is_road = road_rows && t >= road_base && t < road_base + n_roads;
                Node* dst = is_road ? road_rows : table;
                if (!dst->requires_grad) continue;
                const std::uint32_t r = is_road ? t - road_base : t;
                const double* grow = n->grad.row(i);
                double* drow = dst->grad_buf().row(r);
                for (std::size_t j = 0; j < n->grad.cols(); ++j) drow[j] += grow[j];
            }
        };
    }
    finish(n);
    return n;
}

Node* Graph::segment_softmax(Node* scores, std::vector<std::size_t> offsets) {
    const Tensor& sv = scores->value();
    if (sv.cols() != 1) throw ContractError("segment_softmax expects a column vector");
    if (offsets.empty() || offsets.back() != sv.rows())
        throw ContractError("segment_softmax: offsets do not cover scores");
    Tensor out(sv.rows(), 1);
    for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
        const std::size_t lo = offsets[s], hi = offsets[s + 1];
        if (lo == hi) continue;
        double mx = sv[lo];
        for (std::size_t p = lo + 1; p < hi; ++p) mx = std::max(mx, sv[p]);
        double z = 0.0;
        for (std::size_t p = lo; p < hi; ++p) {
            out[p] = std::exp(sv[p] - mx);
            z += out[p];
        }
        for (std::size_t p = lo; p < hi; ++p) out[p] /= z;
    }
    Node* n = make(std::move(out), {scores});
    if (n->requires_grad) {
        auto offs = std::make_shared<std::vector<std::size_t>>(std::move(offsets));
        n->backprop = [n, scores, offs]() {
            const Tensor& y = n->value();
            Tensor& gs = scores->grad_buf();
            for (std::size_t s = 0; s + 1 < offs->size(); ++s) {
                const std::size_t lo = (*offs)[s], hi = (*offs)[s + 1];
                double dot = 0.0;
                for (std::size_t p = lo; p < hi; ++p) dot += y[p] * n->grad[p];
                for (std::size_t p = lo; p < hi; ++p) gs[p] += y[p] * (n->grad[p] - dot);
            }
        };
    }
    finish(n);
    return n;
}

Node* Graph::segment_weighted_rows(Node* alpha, Node* source, std::vector<std::uint32_t> j_idx,
                                   std::vector<std::size_t> offsets) {
    const Tensor& av = alpha->value();
    const Tensor& mv = source->value();
    if (av.cols() != 1 || av.rows() != j_idx.size())
        throw ContractError("segment_weighted_rows: alpha/j_idx mismatch");
    const std::size_t n_seg = offsets.size() - 1;
    Tensor out(n_seg, mv.cols());
    for (std::size_t s = 0; s < n_seg; ++s) {
        double* orow = out.row(s);
        for (std::size_t p = offsets[s]; p < offsets[s + 1]; ++p) {
            const double w = av[p];
            const double* srow = mv.row(j_idx[p]);
            for (std::size_t j = 0; j < mv.cols(); ++j) orow[j] += w * srow[j];
        }
    }
    Node* n = make(std::move(out), {alpha, source});
    if (n->requires_grad) {
        auto jd = std::make_shared<std::vector<std::uint32_t>>(std::move(j_idx));
        auto offs = std::make_shared<std::vector<std::size_t>>(std::move(offsets));
        n->backprop = [n, alpha, source, jd, offs]() {
            const Tensor& av = alpha->value();
            const Tensor& mv = source->value();
            for (std::size_t s = 0; s + 1 < offs->size(); ++s) {
                const double* grow = n->grad.row(s);
                for (std::size_t p = (*offs)[s]; p < (*offs)[s + 1]; ++p) {
                    const std::uint32_t j = (*jd)[p];
                    if (alpha->requires_grad) {
                        double acc = 0.0;
                        const double* srow = mv.row(j);
                        for (std::size_t c = 0; c < mv.cols(); ++c) acc += grow[c] * srow[c];
                        alpha->grad_buf()[p] += acc;
                    }
                    if (source->requires_grad) {
                        double* drow = source->grad_buf().row(j);
                        for (std::size_t c = 0; c < mv.cols(); ++c) drow[c] += av[p] * grow[c];
                    }
                }
            }
        };
    }
    finish(n);
    return n;
}

Node* Graph::cross_entropy(Node* logits, const std::vector<std::uint32_t>& targets,
                           const std::vector<std::uint8_t>& mask,
                           const std::vector<double>& weights) {
    const Tensor& lv = logits->value();
    if (targets.size() != lv.rows() || mask.size() != lv.rows() || weights.size() != lv.rows())
        throw ContractError("cross_entropy: per-row vectors must match logits rows " +
                            lv.shape_str());
    double selected = 0.0;
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask[i]) selected += 1.0;
    const double denom = std::max(1.0, selected);
    double loss = 0.0;
    // per-row log-sum-exp, saved for backward
    auto lse = std::make_shared<std::vector<double>>(lv.rows(), 0.0);
    auto mx = std::make_shared<std::vector<double>>(lv.rows(), 0.0);
    for (std::size_t i = 0; i < lv.rows(); ++i) {
        if (!mask[i]) continue;
        if (targets[i] >= lv.cols())
            throw ContractError("cross_entropy: target " + std::to_string(targets[i]) +
                                " out of vocab " + std::to_string(lv.cols()));
        const double* row = lv.row(i);
        double m = row[0];
        for (std::size_t j = 1; j < lv.cols(); ++j) m = std::max(m, row[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < lv.cols(); ++j) z += std::exp(row[j] - m);
        (*mx)[i] = m;
        (*lse)[i] = m + std::log(z);
        loss += weights[i] * ((*lse)[i] - row[targets[i]]);
    }
    loss /= denom;
    Node* n = make(Tensor::scalar(loss), {logits});
    if (n->requires_grad) {
        auto tg = std::make_shared<std::vector<std::uint32_t>>(targets);
        auto mk = std::make_shared<std::vector<std::uint8_t>>(mask);
        auto wt = std::make_shared<std::vector<double>>(weights);
        n->backprop = [n, logits, tg, mk, wt, lse, mx, denom]() {
            const double g = n->grad[0] / denom;
            const Tensor& lv = logits->value();
            Tensor& gl = logits->grad_buf();
            for (std::size_t i = 0; i < lv.rows(); ++i) {
                if (!(*mk)[i]) continue;
                const double wg = g * (*wt)[i];
                const double* row = lv.row(i);
                double* grow = gl.row(i);
                for (std::size_t j = 0; j < lv.cols(); ++j)
                    grow[j] += wg * std::exp(row[j] - (*lse)[i]);
                grow[(*tg)[i]] -= wg;
            }
        };
    }
    finish(n);
    return n;
}

Node* Graph::sum_scalars(const std::vector<Node*>& terms) {
    if (terms.empty()) return constant(Tensor::scalar(0.0));
    double total = 0.0;
    for (Node* t : terms) total += t->value().item();
    Node* n = make(Tensor::scalar(total), terms);
    if (n->requires_grad) {
        std::vector<Node*> ts = terms;
        n->backprop = [n, ts]() {
            for (Node* t : ts)
                if (t->requires_grad) t->grad_buf()[0] += n->grad[0];
        };
    }
    finish(n);
    return n;
}

void Graph::backward(Node* loss) {
    if (nodes_.empty() || !loss) throw ContractError("backward called before any forward op");
    if (loss->value().numel() != 1)
        throw ContractError("backward requires a scalar loss, got " + loss->value().shape_str());
    loss->grad_buf()[0] = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        Node* n = it->get();
        if (!n->requires_grad || n->grad.numel() == 0 || !n->backprop) continue;
        n->backprop();
    }
    backward_done_ = true;
}

}  // namespace blocktraj
