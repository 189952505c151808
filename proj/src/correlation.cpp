#include "comflp/correlation.hpp"

#include "comflp/error.hpp"
#include "parallel.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace comflp {

namespace {

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

// Grid entries: 17 significant digits, always.
std::string format_grid(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::scientific, 16);
    return std::string(buf, res.ptr);
}

void require_pair(const ActivationMatrix& x, const ActivationMatrix& y) {
    if (x.samples() != y.samples())
        throw ValidationError("sample counts differ: " + std::to_string(x.samples()) + " vs " +
                              std::to_string(y.samples()));
    if (x.samples() < 2)
        throw ValidationError("at least 2 samples are required, got " + std::to_string(x.samples()));
    if (x.dims() < 1 || y.dims() < 1)
        throw ValidationError("zero-dimensional activation matrix");
}

Eigen::MatrixXd center_columns(const Eigen::MatrixXd& x) {
    return x.rowwise() - x.colwise().mean();
}

}  // namespace

std::string_view to_string(Measure m) {
    return m == Measure::svcca ? "svcca" : "dc";
}

Measure parse_measure(std::string_view name) {
    if (name == "svcca")
        return Measure::svcca;
    if (name == "dc")
        return Measure::dc;
    throw ValidationError("unknown measure '" + std::string(name) + "' (expected svcca or dc)");
}

void validate(const SvccaConfig& cfg) {
    if (!(cfg.variance_ratio > 0.0 && cfg.variance_ratio <= 1.0))
        throw ValidationError("variance ratio must lie in (0, 1], got " + format_double(cfg.variance_ratio));
}

void validate(const DcConfig& cfg) {
    if (cfg.batch_size < 2)
        throw ValidationError("DC batch size must be >= 2, got " + std::to_string(cfg.batch_size));
    if (cfg.num_batch < 1)
        throw ValidationError("DC num_batch must be >= 1, got " + std::to_string(cfg.num_batch));
}

CorrelationMatrix::CorrelationMatrix(Eigen::MatrixXd values, Measure measure,
                                     std::map<std::string, std::string> meta)
    : values_(std::move(values)), measure_(measure), meta_(std::move(meta)) {
    if (values_.rows() != values_.cols())
        throw ValidationError("correlation matrix is not square");
    if (values_.rows() < 2)
        throw ValidationError("correlation matrix must cover at least layers 0 and 1");
    if (!values_.allFinite())
        throw ValidationError("correlation matrix has non-finite entries");
    const Eigen::Index n = values_.rows();
    for (Eigen::Index i = 0; i < n; ++i) {
        if (std::abs(values_(i, i) - 1.0) > kDiagonalTolerance)
            throw ValidationError("diagonal entry [" + std::to_string(i) + "][" + std::to_string(i) +
                                  "] = " + format_double(values_(i, i)) + " is not 1");
        for (Eigen::Index j = 0; j < n; ++j) {
            const double v = values_(i, j);
            if (v < -kRangeTolerance || v > 1.0 + kRangeTolerance)
                throw ValidationError("entry [" + std::to_string(i) + "][" + std::to_string(j) + "] = " +
                                      format_double(v) + " is outside [0, 1]");
            if (std::abs(v - values_(j, i)) > kSymmetryTolerance)
                throw ValidationError("matrix is not symmetric at [" + std::to_string(i) + "][" +
                                      std::to_string(j) + "]");
        }
    }
}

namespace detail {

Eigen::MatrixXd svd_truncate(const Eigen::MatrixXd& x, double variance_ratio) {
    const Eigen::MatrixXd centered = center_columns(x);
    Eigen::BDCSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
    const Eigen::VectorXd& s = svd.singularValues();

    Eigen::VectorXd cumulative(s.size());
    double running = 0.0;
    for (Eigen::Index k = 0; k < s.size(); ++k) {
        running += s(k) * s(k);
        cumulative(k) = running;
    }
    const double total = running;
    if (total <= 0.0)
        return Eigen::MatrixXd(x.rows(), 0);

    Eigen::Index keep = s.size();
    for (Eigen::Index k = 0; k < s.size(); ++k) {
        if (cumulative(k) >= variance_ratio * total) {
            keep = k + 1;
            break;
        }
    }
    return centered * svd.matrixV().leftCols(keep);
}

Eigen::MatrixXd orthonormal_basis(const Eigen::MatrixXd& centered) {
    if (centered.cols() == 0)
        return Eigen::MatrixXd(centered.rows(), 0);
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(centered);
    const auto& r = qr.matrixQR();
    const Eigen::Index diag = std::min(r.rows(), r.cols());
    const double largest = diag > 0 ? std::abs(r(0, 0)) : 0.0;
    Eigen::Index rank = 0;
    if (largest > 0.0)
        while (rank < diag && std::abs(r(rank, rank)) >= 1e-10 * largest)
            ++rank;
    Eigen::MatrixXd q = Eigen::MatrixXd::Identity(centered.rows(), rank);
    q.applyOnTheLeft(qr.householderQ());
    return q;
}

double mean_canonical_correlation(const Eigen::MatrixXd& qx, const Eigen::MatrixXd& qy) {
    const Eigen::Index count = std::min(qx.cols(), qy.cols());
    if (count == 0)
        return 0.0;
    const Eigen::MatrixXd cross = qx.transpose() * qy;
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(cross);
    const Eigen::VectorXd& rho = svd.singularValues();
    double sum = 0.0;
    for (Eigen::Index k = 0; k < count; ++k)
        sum += std::clamp(rho(k), 0.0, 1.0);
    return std::clamp(sum / static_cast<double>(count), 0.0, 1.0);
}

Eigen::MatrixXd double_centered_distances(const Eigen::MatrixXd& x) {
    const Eigen::Index n = x.rows();
    Eigen::MatrixXd a(n, n);
    for (Eigen::Index k = 0; k < n; ++k) {
        a(k, k) = 0.0;
        for (Eigen::Index l = k + 1; l < n; ++l) {
            const double d = (x.row(k) - x.row(l)).norm();
            a(k, l) = d;
            a(l, k) = d;
        }
    }
    const Eigen::VectorXd row_mean = a.rowwise().mean();
    const Eigen::RowVectorXd col_mean = a.colwise().mean();
    const double grand = a.mean();
    for (Eigen::Index k = 0; k < n; ++k)
        for (Eigen::Index l = 0; l < n; ++l)
            a(k, l) = a(k, l) - row_mean(k) - col_mean(l) + grand;
    return a;
}

double distance_covariance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    const double n = static_cast<double>(a.rows());
    return a.cwiseProduct(b).sum() / (n * n);
}

double distance_correlation(double vxy, double vxx, double vyy) {
    if (vxx <= 0.0 || vyy <= 0.0)
        return 0.0;
    const double ratio = vxy / std::sqrt(vxx * vyy);
    return std::sqrt(std::clamp(ratio, 0.0, 1.0));
}

}  // namespace detail

double svcca_score(const ActivationMatrix& x, const ActivationMatrix& y, const SvccaConfig& cfg) {
    validate(cfg);
    require_pair(x, y);
    const Eigen::MatrixXd qx = detail::orthonormal_basis(detail::svd_truncate(x.data(), cfg.variance_ratio));
    const Eigen::MatrixXd qy = detail::orthonormal_basis(detail::svd_truncate(y.data(), cfg.variance_ratio));
    return detail::mean_canonical_correlation(qx, qy);
}

double dc_score(const ActivationMatrix& x, const ActivationMatrix& y) {
    require_pair(x, y);
    const Eigen::MatrixXd a = detail::double_centered_distances(x.data());
    const Eigen::MatrixXd b = detail::double_centered_distances(y.data());
    return detail::distance_correlation(detail::distance_covariance(a, b), detail::distance_covariance(a, a),
                                        detail::distance_covariance(b, b));
}

namespace {

struct Cell {
    int i;
    int j;
};

std::vector<Cell> upper_cells(int n) {
    std::vector<Cell> cells;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
            cells.push_back({i, j});
    return cells;
}

Eigen::MatrixXd build_svcca(const ActivationSet& set, const SvccaConfig& cfg, unsigned threads) {
    const int n = set.num_layers() + 1;
    std::vector<Eigen::MatrixXd> bases(static_cast<std::size_t>(n));
    detail::parallel_for(bases.size(), threads, [&](std::size_t i) {
        bases[i] = detail::orthonormal_basis(
            detail::svd_truncate(set.layer(static_cast<int>(i)).data(), cfg.variance_ratio));
    });
    const auto cells = upper_cells(n);
    Eigen::MatrixXd m = Eigen::MatrixXd::Identity(n, n);
    detail::parallel_for(cells.size(), threads, [&](std::size_t c) {
        const auto [i, j] = cells[c];
        const double v = detail::mean_canonical_correlation(bases[static_cast<std::size_t>(i)],
                                                            bases[static_cast<std::size_t>(j)]);
        m(i, j) = v;
        m(j, i) = v;
    });
    return m;
}

Eigen::MatrixXd dc_for_rows(const ActivationSet& set, const std::vector<Eigen::Index>& rows, unsigned threads) {
    const int n = set.num_layers() + 1;
    std::vector<Eigen::MatrixXd> centered(static_cast<std::size_t>(n));
    std::vector<double> self(static_cast<std::size_t>(n));
    detail::parallel_for(centered.size(), threads, [&](std::size_t i) {
        const Eigen::MatrixXd batch = set.layer(static_cast<int>(i)).data()(rows, Eigen::all);
        centered[i] = detail::double_centered_distances(batch);
        self[i] = detail::distance_covariance(centered[i], centered[i]);
    });
    const auto cells = upper_cells(n);
    Eigen::MatrixXd m = Eigen::MatrixXd::Identity(n, n);
    detail::parallel_for(cells.size(), threads, [&](std::size_t c) {
        const auto [i, j] = cells[c];
        const auto ui = static_cast<std::size_t>(i);
        const auto uj = static_cast<std::size_t>(j);
        const double v = detail::distance_correlation(detail::distance_covariance(centered[ui], centered[uj]),
                                                      self[ui], self[uj]);
        m(i, j) = v;
        m(j, i) = v;
    });
    return m;
}

Eigen::MatrixXd build_dc(const ActivationSet& set, const DcConfig& cfg, unsigned threads) {
    std::vector<Eigen::Index> order(static_cast<std::size_t>(set.num_samples()));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    if (cfg.shuffle_seed) {
        std::mt19937_64 rng(*cfg.shuffle_seed);
        std::shuffle(order.begin(), order.end(), rng);
    }
    const int n = set.num_layers() + 1;
    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(n, n);
    for (int b = 0; b < cfg.num_batch; ++b) {
        const auto first = order.begin() + static_cast<std::ptrdiff_t>(b) * cfg.batch_size;
        const std::vector<Eigen::Index> rows(first, first + cfg.batch_size);
        sum += dc_for_rows(set, rows, threads);
    }
    Eigen::MatrixXd m = sum / static_cast<double>(cfg.num_batch);
    m.diagonal().setOnes();
    return m;
}

}  // namespace

CorrelationMatrix build_correlation_matrix(const ActivationSet& set, Measure measure,
                                           const CorrelationConfig& cfg) {
    const unsigned threads = detail::resolve_threads(cfg.threads);
    std::map<std::string, std::string> meta;
    meta["samples"] = std::to_string(set.num_samples());
    if (measure == Measure::svcca) {
        validate(cfg.svcca);
        meta["variance_ratio"] = format_double(cfg.svcca.variance_ratio);
        return CorrelationMatrix(build_svcca(set, cfg.svcca, threads), measure, std::move(meta));
    }

    validate(cfg.dc);
    const long long required = static_cast<long long>(cfg.dc.batch_size) * cfg.dc.num_batch;
    if (set.num_samples() < required)
        throw ValidationError("DC with batch size " + std::to_string(cfg.dc.batch_size) + " x " +
                              std::to_string(cfg.dc.num_batch) + " batches requires " + std::to_string(required) +
                              " samples, activation set has " + std::to_string(set.num_samples()));
    meta["batch_size"] = std::to_string(cfg.dc.batch_size);
    meta["num_batch"] = std::to_string(cfg.dc.num_batch);
    if (cfg.dc.shuffle_seed)
        meta["shuffle_seed"] = std::to_string(*cfg.dc.shuffle_seed);
    return CorrelationMatrix(build_dc(set, cfg.dc, threads), measure, std::move(meta));
}

void write_matrix(const CorrelationMatrix& m, const std::filesystem::path& path) {
    std::ostringstream os;
    os << "format CMFLPCOR 1\n";
    os << "measure " << to_string(m.measure()) << "\n";
    os << "num_layers " << m.num_layers() << "\n";
    for (const auto& [key, value] : m.meta())
        os << "meta " << key << " " << value << "\n";
    os << "values\n";
    for (int i = 0; i < m.size(); ++i) {
        for (int j = 0; j < m.size(); ++j) {
            if (j > 0)
                os << ' ';
            os << format_grid(m(i, j));
        }
        os << "\n";
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out)
        throw IoError("cannot write " + path.string());
    out << os.str();
    if (!out)
        throw IoError("write failed for " + path.string());
}

CorrelationMatrix read_matrix(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot open " + path.string());
    const std::string where = path.string();
    auto fail = [&](const std::string& msg) -> ValidationError {
        return ValidationError("format error in " + where + ": " + msg);
    };

    std::string line;
    if (!std::getline(in, line) || line != "format CMFLPCOR 1")
        throw fail("missing 'format CMFLPCOR 1' header");

    std::optional<Measure> measure;
    int num_layers = -1;
    std::map<std::string, std::string> meta;
    bool in_values = false;
    while (!in_values && std::getline(in, line)) {
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key.empty() || key[0] == '#')
            continue;
        if (key == "measure") {
            std::string name;
            ls >> name;
            measure = parse_measure(name);
        } else if (key == "num_layers") {
            if (!(ls >> num_layers))
                throw fail("bad num_layers");
        } else if (key == "meta") {
            std::string k, v;
            if (!(ls >> k >> v))
                throw fail("bad meta line '" + line + "'");
            meta[k] = v;
        } else if (key == "values") {
            in_values = true;
        } else {
            throw fail("unknown key '" + key + "'");
        }
    }
    if (!measure || num_layers < 1 || !in_values)
        throw fail("incomplete header");

    const int n = num_layers + 1;
    Eigen::MatrixXd values(n, n);
    for (int i = 0; i < n; ++i) {
        if (!std::getline(in, line))
            throw fail("expected " + std::to_string(n) + " rows, found " + std::to_string(i));
        std::istringstream ls(line);
        for (int j = 0; j < n; ++j) {
            std::string tok;
            if (!(ls >> tok))
                throw fail("row " + std::to_string(i) + " has fewer than " + std::to_string(n) + " values");
            double v = 0.0;
            const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
            if (ec != std::errc() || ptr != tok.data() + tok.size())
                throw fail("bad number '" + tok + "' in row " + std::to_string(i));
            values(i, j) = v;
        }
        std::string extra;
        if (ls >> extra)
            throw fail("row " + std::to_string(i) + " has more than " + std::to_string(n) + " values");
    }
    try {
        return CorrelationMatrix(std::move(values), *measure, std::move(meta));
    } catch (const ValidationError& e) {
        throw ValidationError("invalid matrix in " + where + ": " + e.what());
    }
}

}  // namespace comflp
