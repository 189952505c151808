#pragma once

#include "comflp/search.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace comflp {

struct ProposalRecord {
    PruningProposal proposal;
    std::optional<double> quality;  // correlation quality, when scored against a matrix
    std::optional<double> metric;   // task metric, when evaluated
    std::string matrix;             // matrix file the quality refers to
};

// Text handoff between the search commands and the evaluation stage:
//
//   comflp-proposals 1
//   source=coarse
//   ...header key=value lines...
//
//   [proposal 1]
//   L=12
//   prune=3,4,8,9
//   intervals=3-4,8-9
//   quality=0.97...
//   matrix=corr.txt
struct ProposalFile {
    std::vector<std::pair<std::string, std::string>> header;
    std::vector<ProposalRecord> records;

    // Value of a header key, if present.
    std::optional<std::string> get(const std::string& key) const;
};

std::string format_proposal_file(const ProposalFile& f);
ProposalFile parse_proposal_file(const std::string& text, const std::string& origin = "<memory>");

void write_proposal_file(const ProposalFile& f, const std::filesystem::path& path);
ProposalFile read_proposal_file(const std::filesystem::path& path);

std::string format_real(double v);  // shortest decimal that round-trips

}  // namespace comflp
