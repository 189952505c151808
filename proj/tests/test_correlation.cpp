#include "comflp/correlation.hpp"
#include "comflp/error.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>

using namespace comflp;

namespace {

ActivationMatrix am(const Eigen::MatrixXd& m, int index = 0) {
    return ActivationMatrix(index, m);
}

Eigen::MatrixXd random_rotation(Eigen::Index d, std::mt19937_64& rng) {
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(oracle::gaussian(d, d, rng));
    return qr.householderQ();
}

}  // namespace

TEST_CASE("dc: self-score is 1") {
    std::mt19937_64 rng(1);
    for (int t = 0; t < 20; ++t) {
        const auto x = oracle::gaussian(2 + t % 7, 1 + t % 5, rng);
        CHECK(dc_score(am(x), am(x)) == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("dc: constant matrix scores 0") {
    std::mt19937_64 rng(2);
    const Eigen::MatrixXd c = Eigen::MatrixXd::Constant(5, 3, 0.7);
    const auto y = oracle::gaussian(5, 2, rng);
    CHECK(dc_score(am(c), am(y)) == 0.0);
    CHECK(dc_score(am(y), am(c)) == 0.0);
    CHECK(dc_score(am(c), am(c)) == 0.0);
}

TEST_CASE("dc: hand-expanded three-sample example") {
    // x = [0,1,2], y = [0,1,3]: V_xy = 20/27, V_xx = 40/81, V_yy = 32/27,
    // so the score is (V_xy / sqrt(V_xx V_yy))^(1/2) = (15/16)^(1/4).
    Eigen::MatrixXd x(3, 1), y(3, 1);
    x << 0, 1, 2;
    y << 0, 1, 3;
    const double expected = std::pow(15.0 / 16.0, 0.25);
    CHECK(dc_score(am(x), am(y)) == doctest::Approx(expected).epsilon(1e-12));
    CHECK(oracle::naive_dc(x, y) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("dc: matches the double-loop oracle for small B") {
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int> b(2, 8), d(1, 6);
    for (int t = 0; t < 200; ++t) {
        const auto x = oracle::gaussian(b(rng), d(rng), rng);
        const auto y = oracle::gaussian(x.rows(), d(rng), rng);
        CHECK(std::abs(dc_score(am(x), am(y)) - oracle::naive_dc(x, y)) <= 1e-12);
    }
}

TEST_CASE("dc: symmetric, in range, invariant to isometries") {
    std::mt19937_64 rng(4);
    for (int t = 0; t < 50; ++t) {
        const Eigen::Index n = 3 + t % 10, dx = 1 + t % 4;
        const auto x = oracle::gaussian(n, dx, rng);
        const auto y = oracle::gaussian(n, 2, rng);
        const double s = dc_score(am(x), am(y));
        CHECK(s == dc_score(am(y), am(x)));
        CHECK(s >= 0.0);
        CHECK(s <= 1.0);
        const Eigen::RowVectorXd shift = oracle::gaussian(1, dx, rng) * 10.0;
        const Eigen::MatrixXd moved = (x * random_rotation(dx, rng)).rowwise() + shift;
        CHECK(std::abs(dc_score(am(moved), am(y)) - s) <= 1e-9);
    }
}

TEST_CASE("svcca: self-score is 1") {
    std::mt19937_64 rng(5);
    for (double ratio : {0.5, 0.99, 1.0}) {
        const auto x = oracle::gaussian(60, 8, rng);
        CHECK(svcca_score(am(x), am(x), {ratio}) == doctest::Approx(1.0).epsilon(1e-6));
    }
    // more dimensions than samples: rank is capped at B-1
    const auto wide = oracle::gaussian(6, 20, rng);
    CHECK(svcca_score(am(wide), am(wide), {0.99}) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("svcca: invariant to invertible affine maps") {
    std::mt19937_64 rng(6);
    for (int t = 0; t < 10; ++t) {
        const auto x = oracle::gaussian(80, 6, rng);
        Eigen::MatrixXd w = oracle::gaussian(6, 6, rng) + 3.0 * Eigen::MatrixXd::Identity(6, 6);
        const Eigen::RowVectorXd bias = oracle::gaussian(1, 6, rng) * 5.0;
        const Eigen::MatrixXd y = (x * w).rowwise() + bias;
        CHECK(std::abs(svcca_score(am(x), am(y), {1.0}) - 1.0) <= 1e-6);
    }
}

TEST_CASE("svcca: agrees with the covariance-eigen CCA oracle") {
    std::mt19937_64 rng(7);
    for (int t = 0; t < 20; ++t) {
        const auto x = oracle::gaussian(200, 3 + t % 5, rng);
        // partially dependent so the correlations are not all near zero
        const auto y = (x.leftCols(2) * oracle::gaussian(2, 4, rng) + oracle::gaussian(200, 4, rng)).eval();
        for (double ratio : {1.0, 0.99, 0.8}) {
            const double got = svcca_score(am(x), am(y), {ratio});
            CHECK(std::abs(got - oracle::eigen_svcca(x, y, ratio)) <= 1e-6);
        }
    }
}

TEST_CASE("svcca: symmetric and in range") {
    std::mt19937_64 rng(8);
    for (int t = 0; t < 20; ++t) {
        const auto x = oracle::gaussian(40, 5, rng);
        const auto y = oracle::gaussian(40, 3, rng);
        const double a = svcca_score(am(x), am(y), {0.99});
        const double b = svcca_score(am(y), am(x), {0.99});
        CHECK(std::abs(a - b) <= 1e-9);
        CHECK(a >= 0.0);
        CHECK(a <= 1.0);
    }
}

TEST_CASE("svcca: truncation keeps the smallest rank reaching the ratio") {
    // singular values 3, 2, 1 after centering -> variances 9, 4, 1 of 14
    Eigen::MatrixXd x = Eigen::MatrixXd::Zero(6, 3);
    x(0, 0) = 3 / std::sqrt(2.0);
    x(1, 0) = -3 / std::sqrt(2.0);
    x(2, 1) = 2 / std::sqrt(2.0);
    x(3, 1) = -2 / std::sqrt(2.0);
    x(4, 2) = 1 / std::sqrt(2.0);
    x(5, 2) = -1 / std::sqrt(2.0);
    CHECK(detail::svd_truncate(x, 9.0 / 14.0).cols() == 1);
    CHECK(detail::svd_truncate(x, 0.65).cols() == 2);
    CHECK(detail::svd_truncate(x, 13.0 / 14.0 - 1e-12).cols() == 2);
    CHECK(detail::svd_truncate(x, 1.0).cols() == 3);
}

TEST_CASE("svcca and dc reject bad inputs") {
    const Eigen::MatrixXd a = Eigen::MatrixXd::Ones(4, 2), b = Eigen::MatrixXd::Ones(5, 2);
    CHECK_THROWS_AS(dc_score(am(a), am(b)), ValidationError);
    CHECK_THROWS_AS(svcca_score(am(a), am(b), {}), ValidationError);
    const Eigen::MatrixXd one = Eigen::MatrixXd::Ones(1, 2);
    CHECK_THROWS_AS(dc_score(am(one), am(one)), ValidationError);
    CHECK_THROWS_AS(svcca_score(am(a), am(a), {0.0}), ValidationError);
    CHECK_THROWS_AS(svcca_score(am(a), am(a), {1.5}), ValidationError);
    CHECK_THROWS_AS(svcca_score(am(Eigen::MatrixXd(4, 0)), am(a), {}), ValidationError);
}

namespace {

ActivationSet make_set(const std::vector<Eigen::MatrixXd>& layers) {
    std::vector<ActivationMatrix> out;
    for (std::size_t i = 0; i < layers.size(); ++i)
        out.emplace_back(static_cast<int>(i), layers[i]);
    return ActivationSet(std::move(out));
}

}  // namespace

TEST_CASE("matrix of identical layers is all ones") {
    std::mt19937_64 rng(9);
    const auto x = oracle::gaussian(40, 4, rng);
    const auto set = make_set({x, x, x, x});
    for (Measure m : {Measure::svcca, Measure::dc}) {
        const auto cm = build_correlation_matrix(set, m);
        CHECK((cm.values().array() - 1.0).abs().maxCoeff() <= 1e-6);
    }
}

TEST_CASE("duplicated layer gives equal rows against an independent layer") {
    std::mt19937_64 rng(10);
    const auto h0 = oracle::gaussian(40, 4, rng);
    const auto h1 = oracle::gaussian(40, 4, rng);
    const auto set = make_set({h0, h1, h1});
    for (Measure m : {Measure::svcca, Measure::dc}) {
        const auto cm = build_correlation_matrix(set, m);
        CHECK(cm(1, 2) == doctest::Approx(1.0).epsilon(1e-6));
        CHECK(std::abs(cm(0, 1) - cm(0, 2)) <= 1e-6);
    }
}

TEST_CASE("dc matrix averages contiguous per-batch matrices") {
    std::mt19937_64 rng(11);
    std::vector<Eigen::MatrixXd> layers;
    for (int i = 0; i <= 3; ++i)
        layers.push_back(oracle::gaussian(12, 3, rng));
    const auto set = make_set(layers);
    CorrelationConfig cfg;
    cfg.dc = {5, 2, std::nullopt};
    const auto cm = build_correlation_matrix(set, Measure::dc, cfg);
    for (int i = 0; i <= 3; ++i)
        for (int j = 0; j <= 3; ++j) {
            if (i == j) {
                CHECK(cm(i, j) == 1.0);
                continue;
            }
            const double b0 = oracle::naive_dc(layers[i].topRows(5), layers[j].topRows(5));
            const double b1 = oracle::naive_dc(layers[i].middleRows(5, 5), layers[j].middleRows(5, 5));
            CHECK(std::abs(cm(i, j) - 0.5 * (b0 + b1)) <= 1e-12);
        }
    CHECK(cm.meta().at("batch_size") == "5");
    CHECK(cm.meta().at("num_batch") == "2");
}

TEST_CASE("dc batching needs enough samples; shuffling is seeded") {
    std::mt19937_64 rng(12);
    const auto set = make_set({oracle::gaussian(10, 2, rng), oracle::gaussian(10, 2, rng), oracle::gaussian(10, 2, rng)});
    CorrelationConfig cfg;
    cfg.dc = {4, 3, std::nullopt};
    CHECK_THROWS_WITH_AS(build_correlation_matrix(set, Measure::dc, cfg), doctest::Contains("requires 12"),
                         ValidationError);
    cfg.dc = {4, 2, 99};
    const auto a = build_correlation_matrix(set, Measure::dc, cfg);
    const auto b = build_correlation_matrix(set, Measure::dc, cfg);
    CHECK(a == b);
    cfg.dc.shuffle_seed.reset();
    CHECK(build_correlation_matrix(set, Measure::dc, cfg).values() != a.values());
}

TEST_CASE("matrix output does not depend on thread count") {
    std::mt19937_64 rng(13);
    std::vector<Eigen::MatrixXd> layers;
    for (int i = 0; i <= 6; ++i)
        layers.push_back(oracle::gaussian(40, 5, rng));
    const auto set = make_set(layers);
    for (Measure m : {Measure::svcca, Measure::dc}) {
        CorrelationConfig one, many;
        one.threads = 1;
        many.threads = 8;
        CHECK(build_correlation_matrix(set, m, one) == build_correlation_matrix(set, m, many));
    }
}

TEST_CASE("matrix file round-trip and validation") {
    std::mt19937_64 rng(14);
    const auto dir = oracle::temp_dir("matrix");
    const CorrelationMatrix m(oracle::random_correlation(5, rng), Measure::dc, {{"batch_size", "4"}});
    write_matrix(m, dir / "m.txt");
    CHECK(read_matrix(dir / "m.txt") == m);

    auto write_raw = [&](const Eigen::MatrixXd& v) {
        std::ofstream out(dir / "bad.txt");
        out << "format CMFLPCOR 1\nmeasure svcca\nnum_layers " << v.rows() - 1 << "\nvalues\n";
        for (Eigen::Index i = 0; i < v.rows(); ++i) {
            for (Eigen::Index j = 0; j < v.cols(); ++j)
                out << v(i, j) << ' ';
            out << '\n';
        }
    };
    Eigen::MatrixXd v = oracle::random_correlation(3, rng);
    v(0, 1) = v(1, 0) = 1.2;
    write_raw(v);
    CHECK_THROWS_WITH_AS(read_matrix(dir / "bad.txt"), doctest::Contains("outside [0, 1]"), ValidationError);

    v = oracle::random_correlation(3, rng, 0.1, 0.5);
    v(2, 1) = v(1, 2) + 0.1;
    write_raw(v);
    CHECK_THROWS_WITH_AS(read_matrix(dir / "bad.txt"), doctest::Contains("not symmetric"), ValidationError);

    CHECK_THROWS_AS(read_matrix(dir / "missing.txt"), IoError);
    std::filesystem::remove_all(dir);
}
