#pragma once

#include <cstdint>
#include <vector>

#include "xcnn/rng.hpp"
#include "xcnn/stats.hpp"
#include "xcnn/tensor.hpp"

namespace xcnn {

struct PerturbationConfig {
    std::size_t samples = 50;
    double sigma = 0.1;
    double mean = 1.0;
    std::uint64_t seed = 0;

    void validate() const {
        if (samples < 2) throw UsageError("perturbation needs at least 2 samples");
        if (!(sigma > 0.0)) throw UsageError("perturbation sigma must be positive");
    }
};

/// Sample i is clamp(image * F_i, 0, 1) with F_i ~ Normal(mean, sigma^2)
/// drawn independently per value from stream i of the master seed. The
/// unperturbed image is not part of the batch.
inline std::vector<Tensor> perturb_batch(const Tensor& image, const PerturbationConfig& cfg) {
    cfg.validate();
    const Rng master(cfg.seed);
    std::vector<Tensor> batch;
    batch.reserve(cfg.samples);
    for (std::size_t i = 0; i < cfg.samples; ++i) {
        Rng rng = master.derive(i);
        const Tensor filter = gaussian_sample(rng, cfg.mean, cfg.sigma, image.shape());
        Tensor sample(image.shape());
        for (std::size_t k = 0; k < image.size(); ++k) {
            const double v = static_cast<double>(image[k]) * static_cast<double>(filter[k]);
            sample[k] = static_cast<float>(v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v));
        }
        batch.push_back(std::move(sample));
    }
    return batch;
}

} // namespace xcnn
