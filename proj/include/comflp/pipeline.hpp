#pragma once

#include "comflp/correlation.hpp"
#include "comflp/evaluation.hpp"
#include "comflp/proposal_file.hpp"
#include "comflp/search.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace comflp {

struct StageTiming {
    std::string name;
    double seconds;
};

// Outputs of a fine search or full pipeline run.
struct RunReport {
    std::vector<std::pair<std::string, std::string>> config;
    std::string matrix_path;
    std::string proposals_path;
    std::vector<FineCandidate> coarse;
    std::optional<FineSearchResult> fine;
    std::uint64_t evaluator_calls = 0;
    std::uint64_t greedy_equivalent_calls = 0;
    std::vector<StageTiming> timings;
};

// Key/value text with ranked tables; the [timings] section comes last so the
// rest is reproducible byte for byte.
std::string format_report(const RunReport& r, bool include_timings = true);
std::string format_report_json(const RunReport& r);

// Writes `path` and a JSON mirror next to it (same stem, .json).
void write_report(const RunReport& r, const std::filesystem::path& path);

// <dir>/<stem><suffix>, used for the files a pipeline run writes beside its report.
std::filesystem::path sibling_path(const std::filesystem::path& path, const std::string& suffix);

struct CorrOptions {
    std::filesystem::path activations;
    Measure measure = Measure::svcca;
    double variance_ratio = 0.99;
    int dc_batch_size = 4;
    int dc_num_batch = 10;
    std::optional<std::uint64_t> dc_shuffle_seed;
    unsigned threads = 0;
    std::filesystem::path out;
};

struct CoarseOptions {
    std::filesystem::path matrix;
    int num_prune = 0;
    int beam = 10;
    bool reverse = false;
    std::filesystem::path out;
};

struct FineOptions {
    std::filesystem::path proposals;
    EvaluatorSpec evaluator;
    std::string evaluator_label;  // as typed by the user, echoed in the report
    std::filesystem::path out;
};

enum class BaselineStrategy { top, random, greedy };

BaselineStrategy parse_strategy(std::string_view name);

struct BaselineOptions {
    BaselineStrategy strategy = BaselineStrategy::top;
    int num_layers = 0;  // may come from `matrix` instead
    int num_prune = 0;
    int count = 10;
    std::uint64_t seed = 0;
    std::optional<EvaluatorSpec> evaluator;
    std::string evaluator_label;
    std::optional<std::filesystem::path> matrix;  // scores the proposals when given
    std::filesystem::path out;
};

struct PipelineOptions {
    CorrOptions corr;  // corr.out is ignored; the matrix goes beside the report
    int num_prune = 0;
    int beam = 10;
    EvaluatorSpec evaluator;
    std::string evaluator_label;
    std::filesystem::path out;
};

CorrelationMatrix cmd_corr(const CorrOptions& o);
ProposalFile cmd_coarse(const CoarseOptions& o);
RunReport cmd_fine(const FineOptions& o);
ProposalFile cmd_baseline(const BaselineOptions& o);
RunReport cmd_pipeline(const PipelineOptions& o);

}  // namespace comflp
