#pragma once

#include "comflp/activation_store.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>

namespace comflp {

enum class Measure { svcca, dc };

std::string_view to_string(Measure m);
Measure parse_measure(std::string_view name);

struct SvccaConfig {
    // Fraction of total variance kept by the SVD truncation, in (0, 1].
    double variance_ratio = 0.99;
};

struct DcConfig {
    int batch_size = 4;
    int num_batch = 10;
    // Rows are split contiguously; a seed shuffles them first.
    std::optional<std::uint64_t> shuffle_seed;
};

struct CorrelationConfig {
    SvccaConfig svcca;
    DcConfig dc;
    unsigned threads = 0;  // 0: hardware concurrency
};

void validate(const SvccaConfig& cfg);
void validate(const DcConfig& cfg);

inline constexpr double kSymmetryTolerance = 1e-9;
inline constexpr double kRangeTolerance = 1e-9;
inline constexpr double kDiagonalTolerance = 1e-6;

// Symmetric (L+1) x (L+1) layer-similarity matrix with entries in [0, 1].
class CorrelationMatrix {
public:
    CorrelationMatrix(Eigen::MatrixXd values, Measure measure, std::map<std::string, std::string> meta = {});

    int size() const { return static_cast<int>(values_.rows()); }
    int num_layers() const { return size() - 1; }
    double operator()(int i, int j) const { return values_(i, j); }
    const Eigen::MatrixXd& values() const { return values_; }
    Measure measure() const { return measure_; }
    const std::map<std::string, std::string>& meta() const { return meta_; }

    friend bool operator==(const CorrelationMatrix& a, const CorrelationMatrix& b) {
        return a.measure_ == b.measure_ && a.meta_ == b.meta_ && a.values_.rows() == b.values_.rows() &&
               a.values_ == b.values_;
    }

private:
    Eigen::MatrixXd values_;
    Measure measure_;
    std::map<std::string, std::string> meta_;
};

// SVCCA: column-center, keep the leading singular directions holding
// variance_ratio of the total variance, then average the canonical
// correlations between the two reduced subspaces. Returns 0 when either
// input has no variance.
double svcca_score(const ActivationMatrix& x, const ActivationMatrix& y, const SvccaConfig& cfg);

// Distance correlation from double-centered Euclidean distance matrices.
// Returns 0 when either input has zero distance variance.
double dc_score(const ActivationMatrix& x, const ActivationMatrix& y);

namespace detail {

// Centered data projected onto its leading right singular vectors (B x r).
Eigen::MatrixXd svd_truncate(const Eigen::MatrixXd& x, double variance_ratio);

// Orthonormal basis (B x r) of the column space of an already centered matrix,
// via pivoted QR; directions with |R_ii| < 1e-10 max |R_ii| are dropped.
Eigen::MatrixXd orthonormal_basis(const Eigen::MatrixXd& centered);

// Mean of the canonical correlations between two orthonormal bases.
double mean_canonical_correlation(const Eigen::MatrixXd& qx, const Eigen::MatrixXd& qy);

Eigen::MatrixXd double_centered_distances(const Eigen::MatrixXd& x);

// V_{x,y} = (1/B^2) sum_{k,l} A_{kl} B_{kl}
double distance_covariance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

double distance_correlation(double vxy, double vxx, double vyy);

}  // namespace detail

// M[i][j] = score(H_i, H_j); the diagonal is 1. DC averages the matrices of
// num_batch disjoint batches of batch_size rows.
CorrelationMatrix build_correlation_matrix(const ActivationSet& set, Measure measure,
                                           const CorrelationConfig& cfg = {});

// Text format: header lines (format, measure, num_layers, meta) then the grid,
// written in scientific notation with 17 significant digits.
void write_matrix(const CorrelationMatrix& m, const std::filesystem::path& path);
CorrelationMatrix read_matrix(const std::filesystem::path& path);

}  // namespace comflp
