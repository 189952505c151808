#include "comflp/search.hpp"

#include "comflp/error.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace comflp {

PruningProposal::PruningProposal(int num_layers, std::vector<int> layers)
    : num_layers_(num_layers), layers_(std::move(layers)) {
    if (num_layers_ < 1)
        throw ValidationError("a proposal needs L >= 1, got " + std::to_string(num_layers_));
    std::sort(layers_.begin(), layers_.end());
    if (std::adjacent_find(layers_.begin(), layers_.end()) != layers_.end())
        throw ValidationError("duplicate layer in proposal");
    if (!layers_.empty() && (layers_.front() < 1 || layers_.back() > num_layers_))
        throw ValidationError("pruned layers must lie in [1, " + std::to_string(num_layers_) + "]");
    if (layers_.size() >= static_cast<std::size_t>(num_layers_))
        throw ValidationError("cannot prune all " + std::to_string(num_layers_) + " layers");
}

bool PruningProposal::contains(int layer) const {
    return std::binary_search(layers_.begin(), layers_.end(), layer);
}

PruningProposal PruningProposal::with_layer(int layer) const {
    std::vector<int> next = layers_;
    next.push_back(layer);
    return PruningProposal(num_layers_, std::move(next));
}

std::string PruningProposal::to_string() const {
    std::string out;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        if (i > 0)
            out += ',';
        out += std::to_string(layers_[i]);
    }
    return out;
}

PruningProposal PruningProposal::parse(int num_layers, const std::string& csv) {
    std::vector<int> layers;
    std::istringstream in(csv);
    std::string tok;
    while (std::getline(in, tok, ',')) {
        tok.erase(0, tok.find_first_not_of(" \t"));
        tok.erase(tok.find_last_not_of(" \t\r") + 1);
        if (tok.empty())
            continue;
        std::size_t used = 0;
        int v = 0;
        try {
            v = std::stoi(tok, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != tok.size())
            throw ValidationError("bad layer index '" + tok + "'");
        layers.push_back(v);
    }
    return PruningProposal(num_layers, std::move(layers));
}

std::vector<Interval> to_intervals(const PruningProposal& p) {
    std::vector<Interval> out;
    for (int layer : p.layers()) {
        if (!out.empty() && out.back().end + 1 == layer)
            out.back().end = layer;
        else
            out.push_back({layer, layer});
    }
    return out;
}

std::string format_intervals(const std::vector<Interval>& intervals) {
    std::string out;
    for (std::size_t i = 0; i < intervals.size(); ++i) {
        if (i > 0)
            out += ',';
        out += std::to_string(intervals[i].start) + "-" + std::to_string(intervals[i].end);
    }
    return out;
}

double quality_metric(const PruningProposal& p, const CorrelationMatrix& m) {
    if (p.empty())
        throw ValidationError("quality is undefined for an empty proposal");
    if (p.num_layers() + 1 != m.size())
        throw ValidationError("proposal is for L=" + std::to_string(p.num_layers()) + " but the matrix covers L=" +
                              std::to_string(m.num_layers()));
    const auto intervals = to_intervals(p);
    double sum = 0.0;
    for (const auto& iv : intervals)
        sum += m(iv.start - 1, iv.end);
    return sum / static_cast<double>(intervals.size());
}

namespace {

// Orders entries best-first: by quality in the search direction, then by
// layer list.
struct BeamOrder {
    BeamMode mode;
    bool operator()(const ScoredProposal& a, const ScoredProposal& b) const {
        if (a.quality != b.quality)
            return mode == BeamMode::best ? a.quality > b.quality : a.quality < b.quality;
        return a.proposal.layers() < b.proposal.layers();
    }
};

class Beam {
public:
    Beam(std::size_t capacity, BeamMode mode) : capacity_(capacity), mode_(mode), entries_(BeamOrder{mode}) {}

    void offer(ScoredProposal candidate) {
        if (entries_.size() < capacity_) {
            entries_.insert(std::move(candidate));
            return;
        }
        const auto worst = std::prev(entries_.end());
        const bool better = mode_ == BeamMode::best ? candidate.quality > worst->quality
                                                    : candidate.quality < worst->quality;
        if (!better)
            return;
        entries_.erase(worst);
        entries_.insert(std::move(candidate));
    }

    std::vector<ScoredProposal> take() && {
        return {std::make_move_iterator(entries_.begin()), std::make_move_iterator(entries_.end())};
    }

private:
    std::size_t capacity_;
    BeamMode mode_;
    std::multiset<ScoredProposal, BeamOrder> entries_;
};

}  // namespace

std::vector<ScoredProposal> coarse_search(const CorrelationMatrix& m, int num_prune, const BeamConfig& cfg) {
    const int num_layers = m.num_layers();
    if (cfg.beam_size < 1)
        throw ValidationError("beam size must be >= 1, got " + std::to_string(cfg.beam_size));
    if (num_prune < 0 || num_prune >= num_layers)
        throw ValidationError("number of pruned layers must lie in [1, " + std::to_string(num_layers - 1) +
                              "] for L=" + std::to_string(num_layers) + ", got " + std::to_string(num_prune));
    if (num_prune == 0)
        return {};

    std::vector<PruningProposal> frontier{PruningProposal(num_layers, {})};
    std::vector<ScoredProposal> level;
    for (int n = 1; n <= num_prune; ++n) {
        // Ordered set: dedup and a fixed (lexicographic) admission order.
        std::set<std::vector<int>> expansions;
        for (const auto& p : frontier) {
            for (int layer = 1; layer <= num_layers; ++layer) {
                if (p.contains(layer))
                    continue;
                std::vector<int> next = p.layers();
                next.insert(std::upper_bound(next.begin(), next.end(), layer), layer);
                expansions.insert(std::move(next));
            }
        }
        Beam beam(static_cast<std::size_t>(cfg.beam_size), cfg.mode);
        for (const auto& layers : expansions) {
            PruningProposal candidate(num_layers, layers);
            const double q = quality_metric(candidate, m);
            beam.offer({std::move(candidate), q});
        }
        level = std::move(beam).take();
        frontier.clear();
        for (const auto& s : level)
            frontier.push_back(s.proposal);
    }
    return level;
}

PruningProposal top_drop(int num_layers, int num_prune) {
    if (num_prune < 1 || num_prune >= num_layers)
        throw ValidationError("top drop needs 1 <= N < L, got N=" + std::to_string(num_prune) +
                              " L=" + std::to_string(num_layers));
    std::vector<int> layers(static_cast<std::size_t>(num_prune));
    std::iota(layers.begin(), layers.end(), num_layers - num_prune + 1);
    return PruningProposal(num_layers, std::move(layers));
}

std::uint64_t binomial(int n, int k) {
    if (k < 0 || n < 0 || k > n)
        return 0;
    k = std::min(k, n - k);
    std::uint64_t result = 1;
    for (int i = 1; i <= k; ++i) {
        const std::uint64_t num = static_cast<std::uint64_t>(n - k + i);
        // result * num / i is exact at every step; guard the multiplication.
        if (result > std::numeric_limits<std::uint64_t>::max() / num)
            return std::numeric_limits<std::uint64_t>::max();
        result = result * num / static_cast<std::uint64_t>(i);
    }
    return result;
}

namespace {

void enumerate_subsets(int num_layers, int k, int start, std::vector<int>& current,
                       std::vector<std::vector<int>>& out) {
    if (static_cast<int>(current.size()) == k) {
        out.push_back(current);
        return;
    }
    for (int l = start; l <= num_layers; ++l) {
        current.push_back(l);
        enumerate_subsets(num_layers, k, l + 1, current, out);
        current.pop_back();
    }
}

}  // namespace

std::vector<PruningProposal> random_proposals(int num_layers, int num_prune, int count, std::uint64_t seed) {
    if (num_prune < 1 || num_prune >= num_layers)
        throw ValidationError("random proposals need 1 <= N < L, got N=" + std::to_string(num_prune) +
                              " L=" + std::to_string(num_layers));
    if (count < 1)
        throw ValidationError("proposal count must be >= 1");
    const std::uint64_t available = binomial(num_layers, num_prune);
    if (static_cast<std::uint64_t>(count) > available)
        throw ValidationError("requested " + std::to_string(count) + " distinct proposals but only " +
                              std::to_string(available) + " exist for L=" + std::to_string(num_layers) +
                              ", N=" + std::to_string(num_prune));

    std::mt19937_64 rng(seed);
    std::vector<PruningProposal> out;
    out.reserve(static_cast<std::size_t>(count));

    constexpr std::uint64_t kEnumerateLimit = 4096;
    if (available <= kEnumerateLimit) {
        std::vector<std::vector<int>> all;
        std::vector<int> current;
        enumerate_subsets(num_layers, num_prune, 1, current, all);
        std::shuffle(all.begin(), all.end(), rng);
        for (int i = 0; i < count; ++i)
            out.emplace_back(num_layers, std::move(all[static_cast<std::size_t>(i)]));
        return out;
    }

    std::set<std::vector<int>> seen;
    std::vector<int> pool(static_cast<std::size_t>(num_layers));
    while (static_cast<int>(out.size()) < count) {
        std::iota(pool.begin(), pool.end(), 1);
        // Partial Fisher-Yates: the first num_prune entries form a uniform subset.
        for (int i = 0; i < num_prune; ++i) {
            std::uniform_int_distribution<int> pick(i, num_layers - 1);
            std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(pick(rng))]);
        }
        std::vector<int> subset(pool.begin(), pool.begin() + num_prune);
        std::sort(subset.begin(), subset.end());
        if (seen.insert(subset).second)
            out.emplace_back(num_layers, std::move(subset));
    }
    return out;
}

}  // namespace comflp
