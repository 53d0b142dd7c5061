#pragma once

// Held-out evaluation shared by the command-line tool and the acceptance run.

#include "geodit/dit.hpp"
#include "geodit/repa.hpp"
#include "geodit/sampler.hpp"
#include "geodit/synthetic_data.hpp"

#include <vector>

namespace geodit {

struct EvalExample {
    AnnotatedTile tile;
    SampleCondition condition;
};

/// `count` tiles from a data stream disjoint from training (keyed by `seed`),
/// with the conditions `stage` uses: caption, point prompts with
/// point_min..point_max points, and location.
std::vector<EvalExample> held_out_examples(const ModelConfig &cfg, Stage stage, int count, int point_min,
                                           int point_max, std::uint64_t seed);

/// Samples one image per condition in chunks of `batch`; sample i always uses
/// the noise stream of index i.
std::vector<Image> generate(GeoDiT<double> &model, const std::vector<SampleCondition> &conds,
                            const SamplerConfig &cfg, int batch = 32);

struct FidelityStats {
    std::vector<double> fidelity;
    std::vector<double> ssim_to_tile;
    double fidelity_mean = 0.0;
    double ssim_mean = 0.0;
};

/// Generates from each example's condition, then scores the point prompts
/// with fidelity_oracle at `radius` and SSIM against the example's tile.
FidelityStats fidelity_suite(GeoDiT<double> &model, const std::vector<EvalExample> &examples, double radius,
                             const SamplerConfig &cfg, std::vector<Image> *samples = nullptr);

/// Mean-pooled frozen-encoder features, one row per image.
MatrixXd pooled_features(const std::vector<Image> &images, const TargetEncoder<double> &encoder);

} // namespace geodit
