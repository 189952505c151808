#pragma once

#include "comflp/search.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace comflp {

enum class MetricDirection { lower_is_better, higher_is_better };

std::string_view to_string(MetricDirection d);
MetricDirection parse_direction(std::string_view name);

// External program mapping a proposal to a scalar task metric.
//
// Protocol: the proposal record "L=<int>\nprune=<i,j,...>\n" is written to the
// child's stdin, and COMFLP_PROPOSAL_JSON holds {"L":..,"prune":[..]}. The child
// prints one decimal number on stdout and exits 0.
struct EvaluatorSpec {
    std::vector<std::string> command;  // argv; command[0] is resolved via PATH
    double timeout_seconds = 600.0;
    MetricDirection direction = MetricDirection::lower_is_better;
    int max_parallel = 1;

    // Runs `cmd` through /bin/sh -c.
    static EvaluatorSpec shell(const std::string& cmd);
};

void validate(const EvaluatorSpec& ev);

std::string evaluator_record(const PruningProposal& p);
std::string evaluator_record_json(const PruningProposal& p);

enum class EvalStatus { ok, nonzero_exit, timeout, unparseable_output, spawn_failed };

std::string_view to_string(EvalStatus s);

struct EvaluationOutcome {
    PruningProposal proposal;
    EvalStatus status = EvalStatus::spawn_failed;
    std::optional<double> metric;
    int exit_code = -1;
    double seconds = 0.0;
    std::string detail;

    bool ok() const { return status == EvalStatus::ok; }
};

// Runs the evaluator once; never throws for evaluator-side failures.
EvaluationOutcome run_evaluator(const PruningProposal& p, const EvaluatorSpec& ev);

// Throws EvaluatorError naming the failure (exit status, timeout, bad output).
double evaluate_proposal(const PruningProposal& p, const EvaluatorSpec& ev);

struct FineCandidate {
    PruningProposal proposal;
    std::optional<double> quality;
};

struct RankedProposal {
    PruningProposal proposal;
    double metric;
    std::optional<double> quality;
};

struct FineSearchResult {
    std::vector<RankedProposal> ranked;  // best first
    RankedProposal best;
    std::vector<EvaluationOutcome> evaluator_log;  // candidate order
};

// Evaluates every candidate (up to max_parallel at once), drops failures with
// a warning, and ranks by metric; ties go to the higher coarse quality, then
// to the smaller layer list. Throws EvaluatorError if every evaluation failed.
FineSearchResult fine_search(const std::vector<FineCandidate>& candidates, const EvaluatorSpec& ev);
FineSearchResult fine_search(const std::vector<ScoredProposal>& candidates, const EvaluatorSpec& ev);

struct GreedyStep {
    int step;
    PruningProposal proposal;
    double metric;
};

struct GreedyResult {
    std::vector<GreedyStep> steps;  // step n holds the best n-layer proposal
    std::vector<EvaluationOutcome> evaluator_log;
};

// Greedy layer pruning: step n extends the best (n-1)-layer set by each of
// the L-n+1 remaining layers and keeps the best by metric.
GreedyResult greedy_search(int num_layers, int num_prune, const EvaluatorSpec& ev);

// Number of evaluator calls greedy_search makes: sum_{n=1..N} (L-n+1).
std::uint64_t greedy_evaluation_count(int num_layers, int num_prune);

}  // namespace comflp
