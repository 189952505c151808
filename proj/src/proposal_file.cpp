#include "comflp/proposal_file.hpp"

#include "comflp/error.hpp"

#include <charconv>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

namespace comflp {

std::string format_real(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::optional<std::string> ProposalFile::get(const std::string& key) const {
    for (const auto& [k, v] : header)
        if (k == key)
            return v;
    return std::nullopt;
}

std::string format_proposal_file(const ProposalFile& f) {
    std::ostringstream os;
    os << "comflp-proposals 1\n";
    for (const auto& [k, v] : f.header)
        os << k << '=' << v << '\n';
    for (std::size_t i = 0; i < f.records.size(); ++i) {
        const auto& r = f.records[i];
        os << "\n[proposal " << (i + 1) << "]\n";
        os << "L=" << r.proposal.num_layers() << '\n';
        os << "prune=" << r.proposal.to_string() << '\n';
        os << "intervals=" << format_intervals(to_intervals(r.proposal)) << '\n';
        if (r.quality)
            os << "quality=" << format_real(*r.quality) << '\n';
        if (r.metric)
            os << "metric=" << format_real(*r.metric) << '\n';
        if (!r.matrix.empty())
            os << "matrix=" << r.matrix << '\n';
    }
    return os.str();
}

namespace {

double parse_real(const std::string& s, const std::string& what) {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
        throw ValidationError("bad number '" + s + "' for " + what);
    return v;
}

}  // namespace

ProposalFile parse_proposal_file(const std::string& text, const std::string& origin) {
    std::istringstream in(text);
    std::string line;
    auto fail = [&](const std::string& msg) { return ValidationError("format error in " + origin + ": " + msg); };
    if (!std::getline(in, line) || line != "comflp-proposals 1")
        throw fail("missing 'comflp-proposals 1' header");

    ProposalFile f;
    std::vector<std::map<std::string, std::string>> raw;
    std::map<std::string, std::string>* current = nullptr;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (line.empty() || line[0] == '#')
            continue;
        if (line.rfind("[proposal", 0) == 0) {
            raw.emplace_back();
            current = &raw.back();
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw fail("expected key=value, got '" + line + "'");
        std::string key = line.substr(0, eq);
        std::string value = line.substr(eq + 1);
        if (current)
            (*current)[key] = value;
        else
            f.header.emplace_back(std::move(key), std::move(value));
    }

    for (std::size_t i = 0; i < raw.size(); ++i) {
        const auto& r = raw[i];
        const std::string what = "proposal " + std::to_string(i + 1);
        const auto l = r.find("L");
        const auto prune = r.find("prune");
        if (l == r.end() || prune == r.end())
            throw fail(what + " lacks L or prune");
        const double num_layers = parse_real(l->second, what + " L");
        try {
            ProposalRecord rec{PruningProposal::parse(static_cast<int>(num_layers), prune->second), {}, {}, {}};
            if (auto it = r.find("quality"); it != r.end())
                rec.quality = parse_real(it->second, what + " quality");
            if (auto it = r.find("metric"); it != r.end())
                rec.metric = parse_real(it->second, what + " metric");
            if (auto it = r.find("matrix"); it != r.end())
                rec.matrix = it->second;
            if (auto it = r.find("intervals"); it != r.end() &&
                                               it->second != format_intervals(to_intervals(rec.proposal)))
                throw ValidationError("interval form disagrees with the layer list");
            f.records.push_back(std::move(rec));
        } catch (const ValidationError& e) {
            throw fail(what + ": " + e.what());
        }
    }
    return f;
}

void write_proposal_file(const ProposalFile& f, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw IoError("cannot write " + path.string());
    out << format_proposal_file(f);
    if (!out)
        throw IoError("write failed for " + path.string());
}

ProposalFile read_proposal_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open " + path.string());
    return parse_proposal_file(std::string(std::istreambuf_iterator<char>(in), {}), path.string());
}

}  // namespace comflp
