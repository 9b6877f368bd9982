#include "blocktraj/diffusion.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>

namespace blocktraj {

using nlohmann::json;

CorruptedBlock corrupt_block(const TokenId* block, std::size_t len, double t, Rng& rng) {
    if (!(t > 0.0 && t <= 1.0)) throw ContractError("corrupt_block: t must be in (0, 1]");
    CorruptedBlock out;
    out.noisy.assign(block, block + len);
    out.mask.assign(len, 0);
    for (std::size_t i = 0; i < len; ++i) {
        if (block[i] == kPad) continue;
        if (rng.uniform01() < t) {
            out.noisy[i] = kMask;
            out.mask[i] = 1;
        }
    }
    return out;
}

Node* nelbo_loss(Graph& g, Node* logits, const std::vector<TokenId>& clean_block,
                 const std::vector<std::uint8_t>& mask, double weight) {
    if (clean_block.size() != mask.size() || logits->value().rows() != mask.size())
        throw ContractError("nelbo_loss: row count mismatch");
    return g.cross_entropy(logits, clean_block, mask, std::vector<double>(mask.size(), weight));
}

json TrainConfig::to_json() const {
    return json{{"l_prime", l_prime},       {"batch_size", batch_size},
                {"epochs", epochs},         {"max_steps", max_steps},
                {"lr", lr},                 {"beta1", beta1},
                {"beta2", beta2},           {"adam_eps", adam_eps},
                {"weight_decay", weight_decay}, {"warmup_frac", warmup_frac},
                {"grad_clip", grad_clip},
                {"cond_dropout", cond_dropout}, {"t_min", t_min},
                {"eval_interval", eval_interval}, {"val_subset", val_subset},
                {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const json& j) {
    TrainConfig c;
    c.l_prime = j.value("l_prime", c.l_prime);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.max_steps = j.value("max_steps", c.max_steps);
    c.lr = j.value("lr", c.lr);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.warmup_frac = j.value("warmup_frac", c.warmup_frac);
    c.grad_clip = j.value("grad_clip", c.grad_clip);
    c.cond_dropout = j.value("cond_dropout", c.cond_dropout);
    c.t_min = j.value("t_min", c.t_min);
    c.eval_interval = j.value("eval_interval", c.eval_interval);
    c.val_subset = j.value("val_subset", c.val_subset);
    c.seed = j.value("seed", c.seed);
    return c;
}

namespace {

struct WindowItem {
    std::vector<TokenId> window;
    std::size_t block_start = 0;
    std::vector<TokenId> clean_block;
    std::vector<std::uint8_t> mask;
    double weight = 1.0;
    std::size_t masked_count = 0;
};

// t ~ U(t_min, 1]; u = 0 maps to exactly 1 so full corruption is reachable.
double sample_time(double t_min, Rng& rng) { return 1.0 - (1.0 - t_min) * rng.uniform01(); }

// Stratified draw: batch slot k of n samples its t from the k-th stratum.
// Marginally uniform over the batch, but every batch covers the whole
// noise range, which tames the variance of the 1/t loss weights.
double sample_time_stratified(double t_min, std::size_t k, std::size_t n, Rng& rng) {
    const double u = (static_cast<double>(k) + rng.uniform01()) / static_cast<double>(n);
    return 1.0 - (1.0 - t_min) * u;
}

WindowItem build_window_item(const EncodedRecord& enc, bool use_null_prompt, std::size_t b,
                             double t, double t_min, Rng& rng) {
    const std::size_t lp = enc.target.l_prime;
    WindowItem item;
    const Prompt prompt = use_null_prompt ? null_prompt(enc.prompt) : enc.prompt;
    item.window.assign(prompt.tokens.begin(), prompt.tokens.end());
    item.window.insert(item.window.end(), enc.target.tokens.begin(),
                       enc.target.tokens.begin() + static_cast<std::ptrdiff_t>(b * lp));
    item.block_start = item.window.size();
    CorruptedBlock cb = corrupt_block(enc.target.tokens.data() + b * lp, lp, t, rng);
    item.window.insert(item.window.end(), cb.noisy.begin(), cb.noisy.end());
    item.clean_block.assign(enc.target.tokens.begin() + static_cast<std::ptrdiff_t>(b * lp),
                            enc.target.tokens.begin() + static_cast<std::ptrdiff_t>((b + 1) * lp));
    item.mask = std::move(cb.mask);
    for (std::uint8_t m : item.mask) item.masked_count += m;
    item.weight = 1.0 / std::max(t, t_min);
    return item;
}

double eval_item_loss(const ModelBundle& model, const Tensor* z, const WindowItem& item,
                      bool unweighted) {
    Graph g(false);
    ParamBinder bind(g, const_cast<ParamStore&>(model.params), /*trainable=*/false);
    Node* road_rows = z ? g.leaf(z, false) : nullptr;
    Node* logits = denoiser_forward(g, bind, model.dcfg, item.window, item.block_start,
                                    item.clean_block.size(), road_rows);
    Node* loss = nelbo_loss(g, logits, item.clean_block, item.mask,
                            unweighted ? 1.0 : item.weight);
    return loss->value().item();
}

}  // namespace

TrainResult train(ModelBundle& model, const std::vector<TripRecord>& train_records,
                  const std::vector<TripRecord>& val_records, const BinTable& bins,
                  const TrainConfig& cfg, const std::function<void(const TrainLogRow&)>& on_log,
                  const std::function<void(std::size_t)>& save_best,
                  const std::function<void(std::size_t)>& save_last) {
    if (train_records.empty()) throw DataError("train: empty training corpus");

    std::vector<EncodedRecord> encoded;
    encoded.reserve(train_records.size());
    for (const TripRecord& r : train_records) encoded.push_back(encode(r, model.vocab, bins, cfg.l_prime));

    const std::size_t steps_per_epoch =
        (train_records.size() + cfg.batch_size - 1) / cfg.batch_size;
    const std::size_t total_steps =
        cfg.max_steps > 0 ? cfg.max_steps : cfg.epochs * steps_per_epoch;
    const std::size_t warmup_steps =
        std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(cfg.warmup_frac *
                                                                       static_cast<double>(total_steps))));

    Rng rng_data(stream_seed(cfg.seed, "data"));
    Rng rng_corrupt(stream_seed(cfg.seed, "corruption"));
    Rng rng_dropout(stream_seed(cfg.seed, "cfg_dropout"));

    std::vector<std::size_t> order(train_records.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng_data.shuffle(order);
    std::size_t cursor = 0;

    TrainResult result;
    result.best_val = std::numeric_limits<double>::infinity();
    std::size_t last_saved_step = 0;
    const auto t_start = std::chrono::steady_clock::now();

    for (std::size_t step = 1; step <= total_steps; ++step) {
        // per-op finite checks stay off here; the loss value is checked instead
        Graph g(false);
        ParamBinder bind(g, model.params, true);
        Node* z = model.dcfg.use_rne ? rne_forward(g, bind, model.rcfg, model.rne_ctx) : nullptr;

        std::vector<Node*> losses;
        losses.reserve(cfg.batch_size);
        double train_loss = 0.0;
        try {
            for (std::size_t k = 0; k < cfg.batch_size; ++k) {
                if (cursor >= order.size()) {
                    rng_data.shuffle(order);
                    cursor = 0;
                }
                const EncodedRecord& enc = encoded[order[cursor++]];
                const bool drop = rng_dropout.uniform01() < cfg.cond_dropout;
                WindowItem item;
                for (int attempt = 0;; ++attempt) {
                    const std::size_t b = rng_corrupt.below(enc.target.n_blocks);
                    const double t = sample_time_stratified(cfg.t_min, k, cfg.batch_size,
                                                            rng_corrupt);
                    item = build_window_item(enc, drop, b, t, cfg.t_min, rng_corrupt);
                    if (item.masked_count > 0) break;
                    ++result.skipped_items;
                    if (attempt >= 100)
                        throw DataError("could not draw a non-empty corruption mask");
                }
                Node* logits = denoiser_forward(g, bind, model.dcfg, item.window, item.block_start,
                                                item.clean_block.size(), z);
                losses.push_back(nelbo_loss(g, logits, item.clean_block, item.mask, item.weight));
            }
            Node* total = g.scale(g.sum_scalars(losses), 1.0 / static_cast<double>(cfg.batch_size));
            train_loss = total->value().item();
            if (!std::isfinite(train_loss)) throw NumericalError("training loss is not finite");

            model.params.zero_grads();
            g.backward(total);
            bind.harvest();
        } catch (const NumericalError& e) {
            throw NumericalError(std::string(e.what()) + " at step " + std::to_string(step) +
                                 "; last good checkpoint was saved at step " +
                                 std::to_string(last_saved_step));
        }

        if (cfg.grad_clip > 0.0) {
            double sq = 0.0;
            for (const std::string& name : model.params.names()) {
                const Tensor& g = model.params.grad(name);
                for (std::size_t i = 0; i < g.numel(); ++i) sq += g[i] * g[i];
            }
            const double norm = std::sqrt(sq);
            if (std::getenv("BLOCKTRAJ_DEBUG_GRAD") && step % 50 == 1)
                std::fprintf(stderr, "[grad] step %zu norm %.4f loss %.4f\n", step, norm,
                             train_loss);
            if (norm > cfg.grad_clip) {
                const double scale = cfg.grad_clip / norm;
                for (const std::string& name : model.params.names()) {
                    Tensor& g = model.params.grad(name);
                    for (std::size_t i = 0; i < g.numel(); ++i) g[i] *= scale;
                }
            }
        }

        const double lr_t = step <= warmup_steps
                                ? cfg.lr * static_cast<double>(step) / static_cast<double>(warmup_steps)
                                : cfg.lr;
        adam_step(model.params, lr_t, cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay);
        result.steps = step;

        if (step % cfg.eval_interval == 0 || step == total_steps) {
            double val = std::numeric_limits<double>::quiet_NaN();
            if (!val_records.empty()) {
                val = eval_nelbo(model, val_records, bins, cfg.l_prime, cfg.t_min, cfg.seed,
                                 cfg.val_subset);
                if (val < result.best_val) {
                    result.best_val = val;
                    result.best_val_step = step;
                    if (save_best) save_best(step);
                    last_saved_step = step;
                }
            }
            if (on_log) {
                const double wall_ms = std::chrono::duration<double, std::milli>(
                                           std::chrono::steady_clock::now() - t_start)
                                           .count();
                on_log({step, train_loss, val, lr_t, wall_ms});
            }
        }
    }
    if (val_records.empty() && save_best) save_best(result.steps);
    if (save_last) save_last(result.steps);
    return result;
}

double eval_nelbo(const ModelBundle& model, const std::vector<TripRecord>& records,
                  const BinTable& bins, std::size_t l_prime, double t_min, std::uint64_t seed,
                  std::size_t limit) {
    const std::size_t n = limit > 0 ? std::min(limit, records.size()) : records.size();
    if (n == 0) throw DataError("eval_nelbo: no records");
    Tensor z;
    const Tensor* zp = nullptr;
    if (model.dcfg.use_rne) {
        z = rne_infer(const_cast<ParamStore&>(model.params), model.rcfg, model.rne_ctx);
        zp = &z;
    }
    double total = 0.0;
    std::size_t counted = 0;
    for (std::size_t i = 0; i < n; ++i) {
        Rng rng(stream_seed(seed, "eval", i));
        const EncodedRecord enc = encode(records[i], model.vocab, bins, l_prime);
        for (int attempt = 0; attempt < 100; ++attempt) {
            const std::size_t b = rng.below(enc.target.n_blocks);
            const double t = sample_time(t_min, rng);
            WindowItem item = build_window_item(enc, false, b, t, t_min, rng);
            if (item.masked_count == 0) continue;
            total += eval_item_loss(model, zp, item, false);
            ++counted;
            break;
        }
    }
    if (counted == 0) throw DataError("eval_nelbo: all draws produced empty masks");
    return total / static_cast<double>(counted);
}

double eval_masked_ce(const ModelBundle& model, const std::vector<TripRecord>& records,
                      const BinTable& bins, std::size_t l_prime, double t_min, std::uint64_t seed,
                      std::size_t limit) {
    const std::size_t n = limit > 0 ? std::min(limit, records.size()) : records.size();
    if (n == 0) throw DataError("eval_masked_ce: no records");
    Tensor z;
    const Tensor* zp = nullptr;
    if (model.dcfg.use_rne) {
        z = rne_infer(const_cast<ParamStore&>(model.params), model.rcfg, model.rne_ctx);
        zp = &z;
    }
    double ce_sum = 0.0;
    std::size_t position_count = 0;
    for (std::size_t i = 0; i < n; ++i) {
        Rng rng(stream_seed(seed, "eval", i));
        const EncodedRecord enc = encode(records[i], model.vocab, bins, l_prime);
        for (int attempt = 0; attempt < 100; ++attempt) {
            const std::size_t b = rng.below(enc.target.n_blocks);
            const double t = sample_time(t_min, rng);
            WindowItem item = build_window_item(enc, false, b, t, t_min, rng);
            if (item.masked_count == 0) continue;
            ce_sum += eval_item_loss(model, zp, item, true) *
                      static_cast<double>(item.masked_count);
            position_count += item.masked_count;
            break;
        }
    }
    if (position_count == 0) throw DataError("eval_masked_ce: all draws produced empty masks");
    return ce_sum / static_cast<double>(position_count);
}

double nelbo_single_block(const ModelBundle& model, const TripRecord& record, const BinTable& bins,
                          std::size_t l_prime, std::size_t block_index, double t,
                          std::uint64_t seed) {
    const EncodedRecord enc = encode(record, model.vocab, bins, l_prime);
    if (block_index >= enc.target.n_blocks) throw ContractError("block index out of range");
    Tensor z;
    const Tensor* zp = nullptr;
    if (model.dcfg.use_rne) {
        z = rne_infer(const_cast<ParamStore&>(model.params), model.rcfg, model.rne_ctx);
        zp = &z;
    }
    Rng rng(stream_seed(seed, "exhaustive", block_index));
    WindowItem item = build_window_item(enc, false, block_index, t, t, rng);
    return eval_item_loss(model, zp, item, false);
}

std::vector<double> nelbo_exhaustive(const ModelBundle& model, const TripRecord& record,
                                     const BinTable& bins, std::size_t l_prime, double t,
                                     std::uint64_t seed) {
    const EncodedRecord enc = encode(record, model.vocab, bins, l_prime);
    std::vector<double> losses;
    losses.reserve(enc.target.n_blocks);
    for (std::size_t b = 0; b < enc.target.n_blocks; ++b)
        losses.push_back(nelbo_single_block(model, record, bins, l_prime, b, t, seed));
    return losses;
}

}  // namespace blocktraj
