// comflp: correlation-based layer-pruning search.
//
//   comflp corr      ACTIVATIONS --measure svcca|dc --out MATRIX
//   comflp coarse    MATRIX --num-prune N [--beam K] [--reverse] --out PROPOSALS
//   comflp fine      PROPOSALS --evaluator CMD --out REPORT
//   comflp baseline  --strategy top|random|greedy -L L --num-prune N --out PROPOSALS
//   comflp pipeline  ACTIVATIONS --measure ... --num-prune N --evaluator CMD --out REPORT
//
// Exit codes: 0 ok, 2 validation error, 3 evaluator failure, 4 I/O error.

#include "comflp/error.hpp"
#include "comflp/log.hpp"
#include "comflp/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

struct EvaluatorFlags {
    std::string command;
    double timeout = 600.0;
    int max_parallel = 1;
    std::string direction = "lower";

    void attach(CLI::App* app, bool required) {
        auto* opt = app->add_option("--evaluator", command, "Evaluator command, run through /bin/sh -c");
        if (required)
            opt->required();
        app->add_option("--timeout", timeout, "Per-evaluation timeout in seconds")->capture_default_str();
        app->add_option("--max-parallel", max_parallel, "Concurrent evaluator processes")->capture_default_str();
        app->add_option("--direction", direction, "Metric direction: lower|higher")->capture_default_str();
    }

    comflp::EvaluatorSpec spec() const {
        comflp::EvaluatorSpec ev = comflp::EvaluatorSpec::shell(command);
        ev.timeout_seconds = timeout;
        ev.max_parallel = max_parallel;
        ev.direction = comflp::parse_direction(direction);
        return ev;
    }
};

struct CorrFlags {
    std::string activations;
    std::string measure = "svcca";
    double variance_ratio = 0.99;
    int dc_batch_size = 4;
    int dc_num_batch = 10;
    std::optional<std::uint64_t> dc_shuffle_seed;
    unsigned threads = 0;

    void attach(CLI::App* app) {
        app->add_option("activations", activations, "Activation-set directory (manifest.json + layer blobs)")
            ->required();
        app->add_option("--measure", measure, "Similarity measure: svcca|dc")->capture_default_str();
        app->add_option("--variance-ratio", variance_ratio, "SVCCA: fraction of variance kept by the SVD")
            ->capture_default_str();
        app->add_option("--dc-batch-size", dc_batch_size, "DC: samples per batch")->capture_default_str();
        app->add_option("--dc-num-batch", dc_num_batch, "DC: number of averaged batches")->capture_default_str();
        app->add_option("--dc-shuffle-seed", dc_shuffle_seed, "DC: shuffle samples with this seed before batching");
        app->add_option("--threads", threads, "Worker threads (0 = all cores)")->capture_default_str();
    }

    comflp::CorrOptions options() const {
        comflp::CorrOptions o;
        o.activations = activations;
        o.measure = comflp::parse_measure(measure);
        o.variance_ratio = variance_ratio;
        o.dc_batch_size = dc_batch_size;
        o.dc_num_batch = dc_num_batch;
        o.dc_shuffle_seed = dc_shuffle_seed;
        o.threads = threads;
        return o;
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Correlation-based fast layer-pruning search"};
    app.require_subcommand(1);

    CorrFlags corr_flags;
    std::string corr_out;
    auto* corr = app.add_subcommand("corr", "Compute the layer correlation matrix");
    corr_flags.attach(corr);
    corr->add_option("--out", corr_out, "Output matrix file")->required();

    comflp::CoarseOptions coarse_opts;
    std::string coarse_matrix, coarse_out;
    auto* coarse = app.add_subcommand("coarse", "Beam search over pruning proposals");
    coarse->add_option("matrix", coarse_matrix, "Correlation-matrix file")->required();
    coarse->add_option("--num-prune,-N", coarse_opts.num_prune, "Number of layers to prune")->required();
    coarse->add_option("--beam,-K", coarse_opts.beam, "Beam size")->capture_default_str();
    coarse->add_flag("--reverse", coarse_opts.reverse, "Keep the worst proposals instead of the best");
    coarse->add_option("--out", coarse_out, "Output proposal file")->required();

    std::string fine_proposals, fine_out;
    EvaluatorFlags fine_eval;
    auto* fine = app.add_subcommand("fine", "Rank proposals with an external evaluator");
    fine->add_option("proposals", fine_proposals, "Proposal file")->required();
    fine_eval.attach(fine, true);
    fine->add_option("--out", fine_out, "Output report (a .json mirror is written beside it)")->required();

    std::string strategy, base_matrix, base_out;
    comflp::BaselineOptions base_opts;
    EvaluatorFlags base_eval;
    auto* baseline = app.add_subcommand("baseline", "Top-drop, random, or greedy baseline proposals");
    baseline->add_option("--strategy", strategy, "top|random|greedy")->required();
    baseline->add_option("-L,--layers", base_opts.num_layers, "Total number of layers");
    baseline->add_option("--num-prune,-N", base_opts.num_prune, "Number of layers to prune")->required();
    baseline->add_option("--count", base_opts.count, "random: number of proposals")->capture_default_str();
    baseline->add_option("--seed", base_opts.seed, "random: seed")->capture_default_str();
    baseline->add_option("--matrix", base_matrix, "Score proposals against this matrix");
    base_eval.attach(baseline, false);
    baseline->add_option("--out", base_out, "Output proposal file")->required();

    CorrFlags pipe_corr;
    comflp::PipelineOptions pipe_opts;
    std::string pipe_out;
    EvaluatorFlags pipe_eval;
    auto* pipeline = app.add_subcommand("pipeline", "corr -> coarse -> fine in one run");
    pipe_corr.attach(pipeline);
    pipeline->add_option("--num-prune,-N", pipe_opts.num_prune, "Number of layers to prune")->required();
    pipeline->add_option("--beam,-K", pipe_opts.beam, "Beam size")->capture_default_str();
    pipe_eval.attach(pipeline, true);
    pipeline->add_option("--out", pipe_out, "Output report; matrix and proposals are written beside it")
        ->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : comflp::exit_code_for(comflp::ErrorKind::validation);
    }

    try {
        if (*corr) {
            auto o = corr_flags.options();
            o.out = corr_out;
            const auto m = comflp::cmd_corr(o);
            std::cout << "wrote " << corr_out << " (" << comflp::to_string(m.measure()) << ", L=" << m.num_layers()
                      << ")\n";
        } else if (*coarse) {
            coarse_opts.matrix = coarse_matrix;
            coarse_opts.out = coarse_out;
            const auto f = comflp::cmd_coarse(coarse_opts);
            for (std::size_t i = 0; i < f.records.size(); ++i)
                std::cout << (i + 1) << ' ' << comflp::format_real(*f.records[i].quality) << ' '
                          << f.records[i].proposal.to_string() << '\n';
        } else if (*fine) {
            comflp::FineOptions o;
            o.proposals = fine_proposals;
            o.evaluator = fine_eval.spec();
            o.evaluator_label = fine_eval.command;
            o.out = fine_out;
            const auto r = comflp::cmd_fine(o);
            std::cout << "selected " << r.fine->best.proposal.to_string() << " metric "
                      << comflp::format_real(r.fine->best.metric) << " (" << r.evaluator_calls
                      << " evaluations)\n";
        } else if (*baseline) {
            base_opts.strategy = comflp::parse_strategy(strategy);
            if (!base_matrix.empty())
                base_opts.matrix = base_matrix;
            if (!base_eval.command.empty()) {
                base_opts.evaluator = base_eval.spec();
                base_opts.evaluator_label = base_eval.command;
            }
            base_opts.out = base_out;
            const auto f = comflp::cmd_baseline(base_opts);
            if (auto calls = f.get("evaluator_calls"))
                std::cout << "evaluator_calls " << *calls << '\n';
            for (const auto& rec : f.records)
                std::cout << rec.proposal.to_string() << '\n';
        } else if (*pipeline) {
            pipe_opts.corr = pipe_corr.options();
            pipe_opts.evaluator = pipe_eval.spec();
            pipe_opts.evaluator_label = pipe_eval.command;
            pipe_opts.out = pipe_out;
            const auto r = comflp::cmd_pipeline(pipe_opts);
            std::cout << "selected " << r.fine->best.proposal.to_string() << " metric "
                      << comflp::format_real(r.fine->best.metric) << " (" << r.evaluator_calls
                      << " evaluations; greedy would need " << r.greedy_equivalent_calls << ")\n";
        }
    } catch (const comflp::Error& e) {
        std::cerr << "comflp: " << e.what() << '\n';
        return comflp::exit_code_for(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "comflp: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
