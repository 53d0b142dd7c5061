#include "geodit/evaluation.hpp"

#include "geodit/metrics.hpp"
#include "geodit/trainer.hpp"

namespace geodit {

std::vector<EvalExample> held_out_examples(const ModelConfig &cfg, Stage stage, int count, int point_min,
                                           int point_max, std::uint64_t seed)
{
    std::vector<EvalExample> out;
    for (int i = 0; i < count; ++i) {
        auto ex = stream_example(derive_seed(seed, hash_name("held-out")), 0, i, cfg.grid_size);
        auto cond = tile_condition(ex.tile, stage, cfg, ex.point_seed, point_min, point_max);
        out.push_back({std::move(ex.tile), std::move(cond)});
    }
    return out;
}

std::vector<Image> generate(GeoDiT<double> &model, const std::vector<SampleCondition> &conds, const SamplerConfig &cfg,
                            int batch)
{
    std::vector<Image> out;
    for (std::size_t at = 0; at < conds.size(); at += static_cast<std::size_t>(batch)) {
        const auto end = std::min(conds.size(), at + static_cast<std::size_t>(batch));
        const std::vector<SampleCondition> chunk(conds.begin() + static_cast<std::ptrdiff_t>(at),
                                                 conds.begin() + static_cast<std::ptrdiff_t>(end));
        auto imgs = integrate(model, chunk, cfg, static_cast<int>(at));
        for (auto &img : imgs) out.push_back(std::move(img));
    }
    return out;
}

FidelityStats fidelity_suite(GeoDiT<double> &model, const std::vector<EvalExample> &examples, double radius,
                             const SamplerConfig &cfg, std::vector<Image> *samples)
{
    std::vector<SampleCondition> conds;
    for (const auto &e : examples) conds.push_back(e.condition);
    auto imgs = generate(model, conds, cfg);
    FidelityStats s;
    for (std::size_t i = 0; i < examples.size(); ++i) {
        s.fidelity.push_back(fidelity_oracle(imgs[i], examples[i].condition.points, radius, model.config().patch_size));
        s.ssim_to_tile.push_back(ssim(imgs[i], examples[i].tile.image));
        s.fidelity_mean += s.fidelity.back();
        s.ssim_mean += s.ssim_to_tile.back();
    }
    if (!examples.empty()) {
        s.fidelity_mean /= static_cast<double>(examples.size());
        s.ssim_mean /= static_cast<double>(examples.size());
    }
    if (samples) *samples = std::move(imgs);
    return s;
}

MatrixXd pooled_features(const std::vector<Image> &images, const TargetEncoder<double> &encoder)
{
    if (images.empty()) return {};
    MatrixXd out(static_cast<Eigen::Index>(images.size()), encoder.patch_kernel().cols());
    for (std::size_t i = 0; i < images.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = encoder.pooled(images[i]);
    return out;
}

} // namespace geodit
