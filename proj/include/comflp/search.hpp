#pragma once

#include "comflp/correlation.hpp"

#include <compare>
#include <cstdint>
#include <string>
#include <vector>

namespace comflp {

// Set of layers to remove from an L-layer stack. Layer indices are 1-based
// (0 is the encoder input and never prunable); the set is kept sorted and
// must leave at least one layer.
class PruningProposal {
public:
    PruningProposal(int num_layers, std::vector<int> layers);

    int num_layers() const { return num_layers_; }
    const std::vector<int>& layers() const { return layers_; }
    std::size_t size() const { return layers_.size(); }
    bool empty() const { return layers_.empty(); }
    bool contains(int layer) const;

    // Copy with one more pruned layer.
    PruningProposal with_layer(int layer) const;

    // "3,4,8,9"; empty for the unpruned model.
    std::string to_string() const;
    static PruningProposal parse(int num_layers, const std::string& csv);

    friend bool operator==(const PruningProposal&, const PruningProposal&) = default;
    friend auto operator<=>(const PruningProposal& a, const PruningProposal& b) {
        if (auto c = a.num_layers_ <=> b.num_layers_; c != 0)
            return c;
        return a.layers_ <=> b.layers_;
    }

private:
    int num_layers_;
    std::vector<int> layers_;
};

struct Interval {
    int start;
    int end;
    friend bool operator==(const Interval&, const Interval&) = default;
};

// Maximal runs of consecutive pruned layers.
std::vector<Interval> to_intervals(const PruningProposal& p);
std::string format_intervals(const std::vector<Interval>& intervals);  // "3-4,8-9"

// Mean over maximal intervals [s, e] of M[s-1][e].
double quality_metric(const PruningProposal& p, const CorrelationMatrix& m);

struct ScoredProposal {
    PruningProposal proposal;
    double quality;
};

enum class BeamMode { best, reverse };

struct BeamConfig {
    int beam_size = 10;
    BeamMode mode = BeamMode::best;
};

// Level-by-level beam search over proposals of 1..num_prune layers. Each
// level expands every retained proposal by one layer, deduplicates, and keeps
// the beam_size best (or worst, in reverse mode) by quality. Equal qualities
// are ordered by layer list; a candidate only displaces the current worst
// beam entry when its quality is strictly better. Output is sorted best-first
// (worst-first in reverse mode). num_prune == 0 yields an empty list.
std::vector<ScoredProposal> coarse_search(const CorrelationMatrix& m, int num_prune, const BeamConfig& cfg = {});

// Drops the topmost num_prune layers.
PruningProposal top_drop(int num_layers, int num_prune);

// `count` distinct, uniformly drawn num_prune-subsets of [1, L]; reproducible
// for a fixed seed.
std::vector<PruningProposal> random_proposals(int num_layers, int num_prune, int count, std::uint64_t seed);

// C(n, k), saturating at UINT64_MAX.
std::uint64_t binomial(int n, int k);

}  // namespace comflp
