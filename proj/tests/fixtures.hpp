#pragma once

#include "comflp/activation_store.hpp"
#include "oracles.hpp"

#include <algorithm>
#include <random>
#include <vector>

namespace fixtures {

// L-layer set where each layer in `copies` reproduces its predecessor's
// output plus Gaussian noise of scale `noise`; other layers are independent.
inline comflp::ActivationSet planted_set(int num_layers, const std::vector<int>& copies, Eigen::Index samples,
                                         Eigen::Index dims, std::uint64_t seed, double noise = 1e-3) {
    std::mt19937_64 rng(seed);
    std::vector<Eigen::MatrixXd> raw;
    raw.push_back(oracle::gaussian(samples, dims, rng));
    for (int i = 1; i <= num_layers; ++i) {
        if (std::find(copies.begin(), copies.end(), i) != copies.end())
            raw.push_back(raw.back() + oracle::gaussian(samples, dims, rng, noise));
        else
            raw.push_back(oracle::gaussian(samples, dims, rng));
    }
    std::vector<comflp::ActivationMatrix> layers;
    for (int i = 0; i <= num_layers; ++i)
        layers.emplace_back(i, oracle::as_float(raw[static_cast<std::size_t>(i)]));
    return comflp::ActivationSet(std::move(layers), {{"source", "planted"}});
}

}  // namespace fixtures
