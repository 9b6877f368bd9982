// blocktraj command-line surface: reproducible pipelines from city
// generation through training, sampling, and evaluation.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

#include "blocktraj/pipeline.hpp"

namespace {

using namespace blocktraj;

// --config is applied before flag parsing so every CLI flag overrides its
// config-file field.
RunConfig preload_config(int argc, char** argv) {
    for (int i = 1; i + 1 < argc; ++i) {
        if (std::string(argv[i]) == "--config") {
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(read_text_file(argv[i + 1]));
            } catch (const nlohmann::json::exception& e) {
                throw UsageError(std::string("bad config file: ") + e.what());
            }
            return RunConfig::from_json(j);
        }
    }
    return RunConfig{};
}

void add_common(CLI::App* cmd, RunConfig& cfg) {
    std::string ignored;
    cmd->add_option("--config", ignored, "JSON config file (flags override fields)");
    cmd->add_option("--seed", cfg.seed, "run seed; all sub-streams derive from it");
    cmd->add_option("--workers", cfg.workers, "parallel workers for sample/eval");
    cmd->add_flag("--non-deterministic{false}", cfg.deterministic,
                  "allow wall-clock fields in artifacts");
}

int dispatch(int argc, char** argv) {
    RunConfig cfg = preload_config(argc, argv);

    CLI::App app{"topology-aware block-diffusion trajectory generator"};
    app.require_subcommand(1);

    auto* gen_city = app.add_subcommand("gen-city", "generate a grid-city road network");
    gen_city->add_option("--rows", cfg.rows);
    gen_city->add_option("--cols", cfg.cols);
    gen_city->add_option("--block-len-m", cfg.block_len_m);
    gen_city->add_option("--drop", cfg.edge_drop_prob, "edge drop probability");
    gen_city->add_option("--out", cfg.out_path)->required();
    add_common(gen_city, cfg);

    auto* gen_data = app.add_subcommand("gen-data", "synthesize an oracle trajectory corpus");
    gen_data->add_option("--network", cfg.network_path)->required();
    gen_data->add_option("--corpus-prefix", cfg.corpus_prefix)->required();
    gen_data->add_option("--bins", cfg.bins_path);
    gen_data->add_option("--n", cfg.n_records);
    gen_data->add_option("--min-len", cfg.min_len);
    gen_data->add_option("--max-len", cfg.max_len);
    add_common(gen_data, cfg);

    auto* train_cmd = app.add_subcommand("train", "train the denoiser");
    train_cmd->add_option("--network", cfg.network_path)->required();
    train_cmd->add_option("--corpus-prefix", cfg.corpus_prefix)->required();
    train_cmd->add_option("--bins", cfg.bins_path);
    train_cmd->add_option("--checkpoint", cfg.checkpoint_path)->required();
    train_cmd->add_option("--d-model", cfg.d_model);
    train_cmd->add_option("--layers", cfg.n_layers);
    train_cmd->add_option("--heads", cfg.n_heads);
    train_cmd->add_option("--ffn-mult", cfg.ffn_mult);
    train_cmd->add_flag("--no-rne{false}", cfg.use_rne, "plain learned table instead of the RNE");
    train_cmd->add_option("--rne-dim", cfg.rne_dim);
    train_cmd->add_option("--rne-layers", cfg.rne_layers);
    train_cmd->add_option("--block-len", cfg.train.l_prime, "training block length L'");
    train_cmd->add_option("--epochs", cfg.train.epochs);
    train_cmd->add_option("--steps", cfg.train.max_steps, "step cap overriding --epochs");
    train_cmd->add_option("--batch", cfg.train.batch_size);
    train_cmd->add_option("--lr", cfg.train.lr);
    train_cmd->add_option("--grad-clip", cfg.train.grad_clip);
    train_cmd->add_option("--weight-decay", cfg.train.weight_decay);
    train_cmd->add_option("--warmup", cfg.train.warmup_frac);
    train_cmd->add_option("--cond-dropout", cfg.train.cond_dropout);
    train_cmd->add_option("--eval-interval", cfg.train.eval_interval);
    add_common(train_cmd, cfg);

    auto* sample_cmd = app.add_subcommand("sample", "generate trajectories for request tuples");
    sample_cmd->add_option("--network", cfg.network_path)->required();
    sample_cmd->add_option("--checkpoint", cfg.checkpoint_path)->required();
    sample_cmd->add_option("--bins", cfg.bins_path);
    sample_cmd->add_option("--corpus-prefix", cfg.corpus_prefix);
    sample_cmd->add_option("--requests", cfg.requests_path)->required();
    sample_cmd->add_option("--out", cfg.out_path)->required();
    sample_cmd->add_option("--decoder", cfg.decoder, "block | ar | mdlm");
    std::string tcs_mode = "on";
    sample_cmd->add_option("--tcs", tcs_mode, "on | off")
        ->check(CLI::IsMember({"on", "off"}));
    sample_cmd->add_option("--cfg-w", cfg.cfg_w, "guidance scale w");
    sample_cmd->add_option("--temp", cfg.temperature, "Gumbel temperature lambda");
    sample_cmd->add_option("--block-len", cfg.sample_block_len, "inference block length L'");
    sample_cmd->add_option("--steps", cfg.sample_steps, "denoising steps per block T");
    sample_cmd->add_option("--blocks", cfg.sample_blocks);
    sample_cmd->add_option("--limit", cfg.sample_limit, "use only the first N requests");
    add_common(sample_cmd, cfg);

    auto* eval_cmd = app.add_subcommand("eval", "score generated trajectories");
    eval_cmd->add_option("--network", cfg.network_path)->required();
    eval_cmd->add_option("--requests", cfg.requests_path, "real test split")->required();
    eval_cmd->add_option("--generated", cfg.generated_path)->required();
    eval_cmd->add_option("--out", cfg.out_path);
    eval_cmd->add_option("--eps", cfg.eval_eps, "EDR tolerance; 0 = cell size");
    add_common(eval_cmd, cfg);

    auto* bench_cmd = app.add_subcommand("bench", "NFE and timing for all three decoders");
    bench_cmd->add_option("--network", cfg.network_path)->required();
    bench_cmd->add_option("--checkpoint", cfg.checkpoint_path)->required();
    bench_cmd->add_option("--bins", cfg.bins_path);
    bench_cmd->add_option("--corpus-prefix", cfg.corpus_prefix);
    bench_cmd->add_option("--requests", cfg.requests_path)->required();
    bench_cmd->add_option("--n", cfg.sample_limit, "number of requests");
    bench_cmd->add_option("--steps", cfg.sample_steps);
    bench_cmd->add_option("--cfg-w", cfg.cfg_w);
    bench_cmd->add_option("--out", cfg.out_path);
    add_common(bench_cmd, cfg);

    auto* gc_cmd = app.add_subcommand("grad-check", "finite-difference gradient oracle");
    std::size_t gc_dim = 16, gc_layers = 1, gc_vocab = 32;
    double gc_tol = 1e-4, gc_h = 1e-5;
    gc_cmd->add_option("--d-model", gc_dim);
    gc_cmd->add_option("--layers", gc_layers);
    gc_cmd->add_option("--vocab", gc_vocab);
    gc_cmd->add_option("--tol", gc_tol);
    gc_cmd->add_option("--fd-step", gc_h);
    add_common(gc_cmd, cfg);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return kExitUsage;
    }

    if (gen_city->parsed()) {
        run_gen_city(cfg);
        std::cout << "wrote " << cfg.out_path << "\n";
    } else if (gen_data->parsed()) {
        run_gen_data(cfg);
        std::cout << "wrote " << cfg.corpus_prefix << ".{train,val,test} and bin table\n";
    } else if (train_cmd->parsed()) {
        const TrainSummary s = run_train(cfg);
        std::cout << "trained " << s.steps << " steps; best val " << s.best_val
                  << "; held-out masked CE " << s.final_masked_ce << "\n"
                  << "checkpoint: " << s.checkpoint << "\nmetrics: " << s.metrics_csv << "\n";
    } else if (sample_cmd->parsed()) {
        cfg.tcs = tcs_mode == "on";
        const SampleSummary s = run_sample(cfg);
        std::cout << "generated " << s.n << " trajectories; nfe " << s.nfe_total
                  << "; dest reached " << s.dest_reached_rate << "; dead ends " << s.dead_ends
                  << "\n" << s.output << "\n";
    } else if (eval_cmd->parsed()) {
        const MetricReport r = run_eval(cfg);
        std::printf("jsd_distance %.6f  jsd_radius %.6f\n", r.jsd_distance, r.jsd_radius);
        std::printf("hausdorff %.4f  dtw %.4f  edr %.4f  coverage %.4f (%zu/%zu)\n",
                    r.hausdorff_mean, r.dtw_mean, r.edr_mean, r.coverage, r.n_matched,
                    r.n_generated);
    } else if (bench_cmd->parsed()) {
        run_bench(cfg);
    } else if (gc_cmd->parsed()) {
        const GradCheckReport r = run_model_grad_check(gc_dim, gc_layers, gc_vocab, gc_tol, gc_h,
                                                       cfg.seed);
        std::printf("grad-check: worst %s rel err %.3e (tolerance %.1e) -> %s\n",
                    r.worst_param.c_str(), r.worst_err, r.tolerance,
                    r.passed ? "PASS" : "FAIL");
        if (!r.passed) return kExitNumerical;
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return dispatch(argc, argv);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const IntegrityError& e) {
        std::cerr << "integrity error: " << e.what() << "\n";
        return kExitIntegrity;
    } catch (const NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitFailure;
    }
}
