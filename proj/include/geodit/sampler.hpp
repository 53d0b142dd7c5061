#pragma once

// Probability-flow ODE sampling from t = 1 (noise) to t = 0 (data), classifier-
// free guidance, and inpainting by re-noising the known region every step.

#include "geodit/dit.hpp"
#include "geodit/flow.hpp"
#include "geodit/rng.hpp"
#include "geodit/types.hpp"

#include <functional>
#include <vector>

namespace geodit {

enum class Integrator { euler, heun };

struct SamplerConfig {
    int num_steps = 100;
    double cfg_scale = 0.0;
    Integrator integrator = Integrator::euler;
    std::uint64_t seed = 0;

    void validate() const;
};

/// v(x, t) for a batch of states sharing one time.
template <typename Scalar>
using VelocityField = std::function<std::vector<ImageGrid<Scalar>>(const std::vector<ImageGrid<Scalar>> &, Scalar)>;

/// v_cond + s (v_cond - v_uncond), elementwise.
template <typename Scalar>
ImageGrid<Scalar> guide(const ImageGrid<Scalar> &v_cond, const ImageGrid<Scalar> &v_uncond, Scalar scale)
{
    if (!v_cond.same_shape(v_uncond)) throw ShapeError("guide: shape mismatch");
    ImageGrid<Scalar> out = v_cond;
    out.pixels = v_cond.pixels + scale * (v_cond.pixels - v_uncond.pixels);
    return out;
}

/// Every condition group replaced by its null.
SampleCondition null_condition(int max_points);

/// Guided model velocity. Scale 0 is exactly one conditional evaluation; a
/// positive scale also evaluates the null condition and needs a model that
/// was trained with conditions.
template <typename Scalar>
std::vector<ImageGrid<Scalar>> guided_velocity(GeoDiT<Scalar> &model, const std::vector<ImageGrid<Scalar>> &x_t,
                                               Scalar t, const std::vector<SampleCondition> &conds, double cfg_scale);

/// Model velocity field with guidance for a fixed batch of conditions.
template <typename Scalar>
VelocityField<Scalar> model_field(GeoDiT<Scalar> &model, std::vector<SampleCondition> conds, double cfg_scale);

/// Called after each step with the state at t_next and the step index.
template <typename Scalar>
using StepHook = std::function<void(std::vector<ImageGrid<Scalar>> &, Scalar, int)>;

/// Integrates dx/dt = v from t = 1 to 0 over num_steps uniform intervals.
/// Throws std::runtime_error naming the step if the state stops being finite.
template <typename Scalar>
std::vector<ImageGrid<Scalar>> integrate_field(const VelocityField<Scalar> &field, std::vector<ImageGrid<Scalar>> x,
                                               const SamplerConfig &cfg, const StepHook<Scalar> &hook = {});

/// Starting noise of sample `index`: its own stream derived from (seed, index).
template <typename Scalar>
ImageGrid<Scalar> initial_noise(std::uint64_t seed, int index, int h, int w, int c);

/// Samples one image per condition; sample i starts from initial_noise(seed, i).
template <typename Scalar>
std::vector<ImageGrid<Scalar>> integrate(GeoDiT<Scalar> &model, const std::vector<SampleCondition> &conds,
                                         const SamplerConfig &cfg, int first_index = 0);

template <typename Scalar>
struct InpaintTask {
    ImageGrid<Scalar> known;
    Mask mask; // true = regenerate
    SampleCondition condition;
};

/// Inpainting with the same starting noise as integrate(). After every step
/// the unmasked pixels are replaced by the interpolant of the known image at
/// the new time with fresh noise from a separate per-sample stream, so the
/// final unmasked pixels equal the known ones exactly.
template <typename Scalar>
std::vector<ImageGrid<Scalar>> inpaint(GeoDiT<Scalar> &model, const std::vector<InpaintTask<Scalar>> &tasks,
                                       const SamplerConfig &cfg, int first_index = 0);

/// Same procedure over an arbitrary velocity field.
template <typename Scalar>
std::vector<ImageGrid<Scalar>> inpaint_field(const VelocityField<Scalar> &field,
                                             const std::vector<InpaintTask<Scalar>> &tasks, const SamplerConfig &cfg,
                                             int first_index = 0);

/// n ~ Poisson(mean_rate * masked fraction) clamped to [1, max_points] points,
/// uniform over masked pixels, in token coordinates (pixel / patch_size); the
/// tag of each comes from `tag_at(y, x)`.
PointSet build_inpaint_points(const Mask &mask, double mean_rate, Rng &rng, int patch_size, int max_points,
                              const std::function<int(int, int)> &tag_at);

} // namespace geodit
