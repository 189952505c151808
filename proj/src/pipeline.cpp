#include "comflp/pipeline.hpp"

#include "comflp/error.hpp"
#include "comflp/log.hpp"

#include <json.hpp>

#include <chrono>
#include <fstream>
#include <sstream>

namespace comflp {

namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

// Re-throws any comflp::Error with the stage name prefixed, keeping its kind.
template <typename Fn>
auto run_stage(const std::string& stage, Fn&& fn) {
    try {
        return fn();
    } catch (const Error& e) {
        const std::string what = "[" + stage + "] " + e.what();
        switch (e.kind()) {
        case ErrorKind::validation:
            throw ValidationError(what);
        case ErrorKind::evaluator:
            throw EvaluatorError(what);
        case ErrorKind::io:
            throw IoError(what);
        }
        throw;
    }
}

void check_num_prune(int num_prune, int num_layers) {
    if (num_prune < 1 || num_prune >= num_layers)
        throw ValidationError("--num-prune must lie in [1, " + std::to_string(num_layers - 1) + "] for L=" +
                              std::to_string(num_layers) + ", got " + std::to_string(num_prune));
}

CorrelationConfig correlation_config(const CorrOptions& o) {
    CorrelationConfig cfg;
    cfg.svcca.variance_ratio = o.variance_ratio;
    cfg.dc.batch_size = o.dc_batch_size;
    cfg.dc.num_batch = o.dc_num_batch;
    cfg.dc.shuffle_seed = o.dc_shuffle_seed;
    cfg.threads = o.threads;
    return cfg;
}

// Validates the measure settings against the manifest before any blob is loaded.
ActivationManifest precheck_corr(const CorrOptions& o) {
    const ActivationManifest manifest = read_manifest(o.activations);
    const CorrelationConfig cfg = correlation_config(o);
    if (o.measure == Measure::svcca) {
        validate(cfg.svcca);
    } else {
        validate(cfg.dc);
        const std::size_t required = static_cast<std::size_t>(o.dc_batch_size) * static_cast<std::size_t>(o.dc_num_batch);
        if (manifest.num_samples < required)
            throw ValidationError("DC with batch size " + std::to_string(o.dc_batch_size) + " x " +
                                  std::to_string(o.dc_num_batch) + " batches requires " + std::to_string(required) +
                                  " samples, " + o.activations.string() + " has " +
                                  std::to_string(manifest.num_samples));
    }
    return manifest;
}

std::vector<std::pair<std::string, std::string>> corr_config_echo(const CorrOptions& o) {
    std::vector<std::pair<std::string, std::string>> c;
    c.emplace_back("activations", o.activations.string());
    c.emplace_back("measure", std::string(to_string(o.measure)));
    if (o.measure == Measure::svcca) {
        c.emplace_back("variance_ratio", format_real(o.variance_ratio));
    } else {
        c.emplace_back("dc_batch_size", std::to_string(o.dc_batch_size));
        c.emplace_back("dc_num_batch", std::to_string(o.dc_num_batch));
        if (o.dc_shuffle_seed)
            c.emplace_back("dc_shuffle_seed", std::to_string(*o.dc_shuffle_seed));
    }
    return c;
}

std::vector<std::pair<std::string, std::string>> evaluator_echo(const EvaluatorSpec& ev, const std::string& label) {
    return {{"evaluator", label},
            {"timeout", format_real(ev.timeout_seconds)},
            {"direction", std::string(to_string(ev.direction))},
            {"max_parallel", std::to_string(ev.max_parallel)}};
}

std::string opt_real(const std::optional<double>& v) {
    return v ? format_real(*v) : "-";
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw IoError("cannot write " + path.string());
    out << text;
    if (!out)
        throw IoError("write failed for " + path.string());
}

ProposalFile coarse_file(const std::vector<ScoredProposal>& found, const CoarseOptions& o, const CorrelationMatrix& m) {
    ProposalFile f;
    f.header = {{"source", o.reverse ? "coarse-reverse" : "coarse"},
                {"matrix", o.matrix.string()},
                {"measure", std::string(to_string(m.measure()))},
                {"L", std::to_string(m.num_layers())},
                {"num_prune", std::to_string(o.num_prune)},
                {"beam", std::to_string(o.beam)},
                {"mode", o.reverse ? "reverse" : "best"}};
    for (const auto& s : found)
        f.records.push_back({s.proposal, s.quality, std::nullopt, o.matrix.string()});
    return f;
}

std::uint64_t greedy_equivalent(const std::vector<FineCandidate>& candidates) {
    if (candidates.empty())
        return 0;
    const auto& first = candidates.front().proposal;
    for (const auto& c : candidates)
        if (c.proposal.size() != first.size() || c.proposal.num_layers() != first.num_layers())
            return 0;
    if (first.empty())
        return 0;
    return greedy_evaluation_count(first.num_layers(), static_cast<int>(first.size()));
}

RunReport fine_report(std::vector<FineCandidate> candidates, const EvaluatorSpec& ev, std::vector<StageTiming>& timings) {
    RunReport r;
    const auto start = Clock::now();
    r.fine = run_stage("fine", [&] { return fine_search(candidates, ev); });
    timings.push_back({"fine", seconds_since(start)});
    r.evaluator_calls = r.fine->evaluator_log.size();
    r.greedy_equivalent_calls = greedy_equivalent(candidates);
    r.coarse = std::move(candidates);
    return r;
}

}  // namespace

fs::path sibling_path(const fs::path& path, const std::string& suffix) {
    return path.parent_path() / (path.stem().string() + suffix);
}

std::string format_report(const RunReport& r, bool include_timings) {
    std::ostringstream os;
    os << "comflp-report 1\n";
    os << "\n[config]\n";
    for (const auto& [k, v] : r.config)
        os << k << '=' << v << '\n';
    os << "\n[inputs]\n";
    os << "matrix=" << r.matrix_path << '\n';
    os << "proposals=" << r.proposals_path << '\n';

    os << "\n[coarse]\n# rank quality prune intervals\n";
    for (std::size_t i = 0; i < r.coarse.size(); ++i) {
        const auto& c = r.coarse[i];
        os << (i + 1) << ' ' << opt_real(c.quality) << ' ' << c.proposal.to_string() << ' '
           << format_intervals(to_intervals(c.proposal)) << '\n';
    }

    if (r.fine) {
        os << "\n[fine]\n# rank metric quality prune\n";
        for (std::size_t i = 0; i < r.fine->ranked.size(); ++i) {
            const auto& f = r.fine->ranked[i];
            os << (i + 1) << ' ' << format_real(f.metric) << ' ' << opt_real(f.quality) << ' '
               << f.proposal.to_string() << '\n';
        }
        os << "\n[evaluations]\n# prune status exit_code metric\n";
        for (const auto& e : r.fine->evaluator_log)
            os << e.proposal.to_string() << ' ' << to_string(e.status) << ' ' << e.exit_code << ' '
               << opt_real(e.metric) << '\n';
        const auto& b = r.fine->best;
        os << "\n[selected]\n";
        os << "prune=" << b.proposal.to_string() << '\n';
        os << "intervals=" << format_intervals(to_intervals(b.proposal)) << '\n';
        os << "metric=" << format_real(b.metric) << '\n';
        os << "quality=" << opt_real(b.quality) << '\n';
    }

    os << "\n[counts]\n";
    os << "coarse_candidates=" << r.coarse.size() << '\n';
    os << "evaluator_calls=" << r.evaluator_calls << '\n';
    os << "greedy_equivalent_calls=" << r.greedy_equivalent_calls << '\n';

    if (include_timings) {
        os << "\n[timings]\n";
        for (const auto& t : r.timings)
            os << t.name << "_seconds=" << format_real(t.seconds) << '\n';
        if (r.fine)
            for (std::size_t i = 0; i < r.fine->evaluator_log.size(); ++i)
                os << "evaluation_" << (i + 1) << "_seconds=" << format_real(r.fine->evaluator_log[i].seconds)
                   << '\n';
    }
    return os.str();
}

std::string format_report_json(const RunReport& r) {
    using json = nlohmann::ordered_json;
    auto layers = [](const PruningProposal& p) { return p.layers(); };
    json j;
    j["format"] = "comflp-report";
    j["version"] = 1;
    json config = json::object();
    for (const auto& [k, v] : r.config)
        config[k] = v;
    j["config"] = config;
    j["matrix"] = r.matrix_path;
    j["proposals"] = r.proposals_path;
    j["coarse"] = json::array();
    for (const auto& c : r.coarse) {
        json e;
        e["L"] = c.proposal.num_layers();
        e["prune"] = layers(c.proposal);
        e["quality"] = c.quality ? json(*c.quality) : json(nullptr);
        j["coarse"].push_back(e);
    }
    if (r.fine) {
        j["fine"] = json::array();
        for (const auto& f : r.fine->ranked) {
            json e;
            e["prune"] = layers(f.proposal);
            e["metric"] = f.metric;
            e["quality"] = f.quality ? json(*f.quality) : json(nullptr);
            j["fine"].push_back(e);
        }
        j["evaluations"] = json::array();
        for (const auto& ev : r.fine->evaluator_log) {
            json e;
            e["prune"] = layers(ev.proposal);
            e["status"] = std::string(to_string(ev.status));
            e["exit_code"] = ev.exit_code;
            e["metric"] = ev.metric ? json(*ev.metric) : json(nullptr);
            e["detail"] = ev.detail;
            j["evaluations"].push_back(e);
        }
        json sel;
        sel["prune"] = layers(r.fine->best.proposal);
        sel["metric"] = r.fine->best.metric;
        sel["quality"] = r.fine->best.quality ? json(*r.fine->best.quality) : json(nullptr);
        j["selected"] = sel;
    }
    j["counts"] = {{"coarse_candidates", r.coarse.size()},
                   {"evaluator_calls", r.evaluator_calls},
                   {"greedy_equivalent_calls", r.greedy_equivalent_calls}};
    json timings = json::object();
    for (const auto& t : r.timings)
        timings[t.name + "_seconds"] = t.seconds;
    j["timings"] = timings;
    return j.dump(2) + "\n";
}

void write_report(const RunReport& r, const fs::path& path) {
    write_text(path, format_report(r));
    write_text(sibling_path(path, ".json"), format_report_json(r));
}

BaselineStrategy parse_strategy(std::string_view name) {
    if (name == "top")
        return BaselineStrategy::top;
    if (name == "random")
        return BaselineStrategy::random;
    if (name == "greedy")
        return BaselineStrategy::greedy;
    throw ValidationError("unknown baseline strategy '" + std::string(name) + "' (expected top, random or greedy)");
}

CorrelationMatrix cmd_corr(const CorrOptions& o) {
    precheck_corr(o);
    const ActivationSet set = read_activation_set(o.activations);
    log::info("computing ", to_string(o.measure), " matrix over ", set.num_layers() + 1, " layers, B=",
              set.num_samples());
    CorrelationMatrix m = build_correlation_matrix(set, o.measure, correlation_config(o));
    if (!o.out.empty())
        write_matrix(m, o.out);
    return m;
}

ProposalFile cmd_coarse(const CoarseOptions& o) {
    const CorrelationMatrix m = read_matrix(o.matrix);
    check_num_prune(o.num_prune, m.num_layers());
    const BeamConfig cfg{o.beam, o.reverse ? BeamMode::reverse : BeamMode::best};
    const auto found = coarse_search(m, o.num_prune, cfg);
    ProposalFile f = coarse_file(found, o, m);
    if (!o.out.empty())
        write_proposal_file(f, o.out);
    return f;
}

RunReport cmd_fine(const FineOptions& o) {
    validate(o.evaluator);
    const ProposalFile in = read_proposal_file(o.proposals);
    if (in.records.empty())
        throw ValidationError(o.proposals.string() + " holds no proposals");
    std::vector<FineCandidate> candidates;
    for (const auto& rec : in.records)
        candidates.push_back({rec.proposal, rec.quality});

    std::vector<StageTiming> timings;
    RunReport r = fine_report(std::move(candidates), o.evaluator, timings);
    r.config = {{"command", "fine"}};
    for (auto& kv : evaluator_echo(o.evaluator, o.evaluator_label))
        r.config.push_back(std::move(kv));
    r.proposals_path = o.proposals.string();
    r.matrix_path = in.get("matrix").value_or("");
    r.timings = std::move(timings);
    if (!o.out.empty())
        write_report(r, o.out);
    return r;
}

ProposalFile cmd_baseline(const BaselineOptions& o) {
    std::optional<CorrelationMatrix> m;
    if (o.matrix)
        m = read_matrix(*o.matrix);
    const int num_layers = o.num_layers > 0 ? o.num_layers : (m ? m->num_layers() : 0);
    if (num_layers < 2)
        throw ValidationError("baseline needs L >= 2 (give -L or --matrix)");
    if (m && m->num_layers() != num_layers)
        throw ValidationError("L=" + std::to_string(num_layers) + " disagrees with the matrix (L=" +
                              std::to_string(m->num_layers()) + ")");
    check_num_prune(o.num_prune, num_layers);
    if (o.strategy == BaselineStrategy::greedy && !o.evaluator)
        throw ValidationError("the greedy baseline requires --evaluator");

    ProposalFile f;
    const std::string matrix_path = o.matrix ? o.matrix->string() : "";
    auto add = [&](const PruningProposal& p, std::optional<double> metric) {
        std::optional<double> q;
        if (m)
            q = quality_metric(p, *m);
        f.records.push_back({p, q, metric, matrix_path});
    };

    switch (o.strategy) {
    case BaselineStrategy::top:
        f.header = {{"source", "top"}};
        break;
    case BaselineStrategy::random:
        f.header = {{"source", "random"}, {"count", std::to_string(o.count)}, {"seed", std::to_string(o.seed)}};
        break;
    case BaselineStrategy::greedy:
        f.header = {{"source", "greedy"}, {"evaluator", o.evaluator_label}};
        break;
    }
    if (o.matrix)
        f.header.emplace_back("matrix", matrix_path);
    f.header.emplace_back("L", std::to_string(num_layers));
    f.header.emplace_back("num_prune", std::to_string(o.num_prune));

    switch (o.strategy) {
    case BaselineStrategy::top:
        add(top_drop(num_layers, o.num_prune), std::nullopt);
        break;
    case BaselineStrategy::random:
        for (const auto& p : random_proposals(num_layers, o.num_prune, o.count, o.seed))
            add(p, std::nullopt);
        break;
    case BaselineStrategy::greedy: {
        const GreedyResult g = greedy_search(num_layers, o.num_prune, *o.evaluator);
        log::info("greedy baseline: ", g.evaluator_log.size(), " evaluator invocations");
        f.header.emplace_back("evaluator_calls", std::to_string(g.evaluator_log.size()));
        for (const auto& s : g.steps)
            add(s.proposal, s.metric);
        break;
    }
    }
    if (!o.out.empty())
        write_proposal_file(f, o.out);
    return f;
}

RunReport cmd_pipeline(const PipelineOptions& o) {
    // Everything cheap is validated before the first heavy stage.
    run_stage("config", [&] {
        validate(o.evaluator);
        if (o.beam < 1)
            throw ValidationError("--beam must be >= 1");
        if (o.out.empty())
            throw ValidationError("--out is required");
        return 0;
    });
    const ActivationManifest manifest = run_stage("corr", [&] { return precheck_corr(o.corr); });
    run_stage("coarse", [&] {
        check_num_prune(o.num_prune, manifest.num_layers);
        return 0;
    });

    std::vector<StageTiming> timings;
    const fs::path matrix_path = sibling_path(o.out, ".matrix.txt");
    const fs::path proposals_path = sibling_path(o.out, ".proposals.txt");

    auto start = Clock::now();
    CorrOptions corr = o.corr;
    corr.out = matrix_path;
    const CorrelationMatrix m = run_stage("corr", [&] { return cmd_corr(corr); });
    timings.push_back({"corr", seconds_since(start)});

    start = Clock::now();
    const CoarseOptions coarse{matrix_path, o.num_prune, o.beam, false, proposals_path};
    const ProposalFile proposals = run_stage("coarse", [&] { return cmd_coarse(coarse); });
    timings.push_back({"coarse", seconds_since(start)});

    std::vector<FineCandidate> candidates;
    for (const auto& rec : proposals.records)
        candidates.push_back({rec.proposal, rec.quality});
    RunReport r = fine_report(std::move(candidates), o.evaluator, timings);

    r.config = {{"command", "pipeline"}};
    for (auto& kv : corr_config_echo(o.corr))
        r.config.push_back(std::move(kv));
    r.config.emplace_back("L", std::to_string(m.num_layers()));
    r.config.emplace_back("num_prune", std::to_string(o.num_prune));
    r.config.emplace_back("beam", std::to_string(o.beam));
    for (auto& kv : evaluator_echo(o.evaluator, o.evaluator_label))
        r.config.push_back(std::move(kv));
    r.matrix_path = matrix_path.string();
    r.proposals_path = proposals_path.string();
    r.greedy_equivalent_calls = greedy_evaluation_count(m.num_layers(), o.num_prune);
    r.timings = std::move(timings);
    run_stage("report", [&] {
        write_report(r, o.out);
        return 0;
    });
    return r;
}

}  // namespace comflp
