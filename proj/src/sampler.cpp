#include "geodit/sampler.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace geodit {

void SamplerConfig::validate() const
{
    if (num_steps < 1) throw std::invalid_argument("num_steps must be at least 1");
    if (!(cfg_scale >= 0.0)) throw std::invalid_argument("cfg_scale must be nonnegative");
}

SampleCondition null_condition(int max_points)
{
    SampleCondition c;
    c.points = PointSet(max_points);
    return c;
}

template <typename Scalar>
std::vector<ImageGrid<Scalar>> guided_velocity(GeoDiT<Scalar> &model, const std::vector<ImageGrid<Scalar>> &x_t,
                                               Scalar t, const std::vector<SampleCondition> &conds, double cfg_scale)
{
    const std::vector<Scalar> ts(x_t.size(), t);
    if (cfg_scale == 0.0) return model.velocity(x_t, ts, conds);
    if (model.stage() == Stage::unconditional)
        throw std::invalid_argument("guidance needs a model trained with conditions");
    // Conditional and null branches share one batched evaluation.
    std::vector<ImageGrid<Scalar>> xs = x_t;
    xs.insert(xs.end(), x_t.begin(), x_t.end());
    std::vector<SampleCondition> cs = conds;
    cs.insert(cs.end(), conds.size(), null_condition(model.config().max_points));
    std::vector<Scalar> tt(xs.size(), t);
    auto v = model.velocity(xs, tt, cs);
    std::vector<ImageGrid<Scalar>> out;
    for (std::size_t i = 0; i < x_t.size(); ++i) out.push_back(guide(v[i], v[i + x_t.size()], Scalar(cfg_scale)));
    return out;
}

template <typename Scalar>
VelocityField<Scalar> model_field(GeoDiT<Scalar> &model, std::vector<SampleCondition> conds, double cfg_scale)
{
    return [&model, conds = std::move(conds), cfg_scale](const std::vector<ImageGrid<Scalar>> &x, Scalar t) {
        return guided_velocity(model, x, t, conds, cfg_scale);
    };
}

namespace {

template <typename Scalar>
void axpy(std::vector<ImageGrid<Scalar>> &x, Scalar a, const std::vector<ImageGrid<Scalar>> &v)
{
    if (x.size() != v.size()) throw ShapeError("velocity field returned a different batch size");
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!x[i].same_shape(v[i])) throw ShapeError("velocity field returned a different shape");
        x[i].pixels += a * v[i].pixels;
    }
}

template <typename Scalar>
void check_finite(const std::vector<ImageGrid<Scalar>> &x, int step)
{
    for (const auto &g : x)
        if (!g.pixels.allFinite()) throw std::runtime_error("non-finite state at sampling step " + std::to_string(step));
}

} // namespace

template <typename Scalar>
std::vector<ImageGrid<Scalar>> integrate_field(const VelocityField<Scalar> &field, std::vector<ImageGrid<Scalar>> x,
                                               const SamplerConfig &cfg, const StepHook<Scalar> &hook)
{
    cfg.validate();
    const int n = cfg.num_steps;
    for (int k = 0; k < n; ++k) {
        const Scalar t = Scalar(1) - Scalar(k) / Scalar(n);
        const Scalar t_next = k + 1 == n ? Scalar(0) : Scalar(1) - Scalar(k + 1) / Scalar(n);
        const Scalar dt = t - t_next;
        const auto v = field(x, t);
        if (cfg.integrator == Integrator::euler) {
            axpy(x, -dt, v);
        } else {
            auto pred = x;
            axpy(pred, -dt, v);
            const auto v_next = field(pred, t_next);
            axpy(x, -dt / Scalar(2), v);
            axpy(x, -dt / Scalar(2), v_next);
        }
        check_finite(x, k);
        if (hook) hook(x, t_next, k);
    }
    return x;
}

template <typename Scalar>
ImageGrid<Scalar> initial_noise(std::uint64_t seed, int index, int h, int w, int c)
{
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(index), hash_name("start")));
    return standard_normal_grid<Scalar>(h, w, c, rng);
}

template <typename Scalar>
std::vector<ImageGrid<Scalar>> integrate(GeoDiT<Scalar> &model, const std::vector<SampleCondition> &conds,
                                         const SamplerConfig &cfg, int first_index)
{
    const auto &mc = model.config();
    std::vector<ImageGrid<Scalar>> x;
    for (std::size_t i = 0; i < conds.size(); ++i)
        x.push_back(initial_noise<Scalar>(cfg.seed, first_index + static_cast<int>(i), mc.grid_size, mc.grid_size,
                                          mc.channels));
    return integrate_field(model_field(model, conds, cfg.cfg_scale), std::move(x), cfg);
}

template <typename Scalar>
std::vector<ImageGrid<Scalar>> inpaint_field(const VelocityField<Scalar> &field,
                                             const std::vector<InpaintTask<Scalar>> &tasks, const SamplerConfig &cfg,
                                             int first_index)
{
    std::vector<ImageGrid<Scalar>> x;
    std::vector<Rng> streams;
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        const auto &task = tasks[i];
        if (task.mask.height != task.known.height || task.mask.width != task.known.width)
            throw ShapeError("inpaint: mask and image differ in size");
        const int idx = first_index + static_cast<int>(i);
        x.push_back(initial_noise<Scalar>(cfg.seed, idx, task.known.height, task.known.width, task.known.channels));
        streams.emplace_back(derive_seed(cfg.seed, static_cast<std::uint64_t>(idx), hash_name("inpaint")));
    }
    const auto sched = FlowSchedule<Scalar>::linear();
    StepHook<Scalar> hook = [&](std::vector<ImageGrid<Scalar>> &state, Scalar t, int) {
        for (std::size_t i = 0; i < tasks.size(); ++i) {
            const auto &task = tasks[i];
            const auto &known = task.known;
            auto eps = standard_normal_grid<Scalar>(known.height, known.width, known.channels, streams[i]);
            const auto noisy = interpolate(known, eps, t, sched);
            for (int y = 0; y < known.height; ++y)
                for (int xx = 0; xx < known.width; ++xx)
                    if (!task.mask(y, xx)) state[i].pixels.row(y * known.width + xx) = noisy.x_t.pixels.row(y * known.width + xx);
        }
    };
    return integrate_field(field, std::move(x), cfg, hook);
}

template <typename Scalar>
std::vector<ImageGrid<Scalar>> inpaint(GeoDiT<Scalar> &model, const std::vector<InpaintTask<Scalar>> &tasks,
                                       const SamplerConfig &cfg, int first_index)
{
    std::vector<SampleCondition> conds;
    for (const auto &t : tasks) conds.push_back(t.condition);
    return inpaint_field(model_field(model, std::move(conds), cfg.cfg_scale), tasks, cfg, first_index);
}

PointSet build_inpaint_points(const Mask &mask, double mean_rate, Rng &rng, int patch_size, int max_points,
                              const std::function<int(int, int)> &tag_at)
{
    if (patch_size <= 0 || max_points < 1) throw std::invalid_argument("build_inpaint_points: bad configuration");
    std::vector<int> cells;
    for (int i = 0; i < static_cast<int>(mask.cells.size()); ++i)
        if (mask.cells[static_cast<std::size_t>(i)]) cells.push_back(i);
    PointSet out(max_points);
    if (cells.empty()) {
        if (mean_rate > 0.0) throw std::invalid_argument("build_inpaint_points: empty mask with a positive rate");
        return out;
    }
    const double fraction = static_cast<double>(cells.size()) / static_cast<double>(mask.cells.size());
    const int n = std::clamp(rng.poisson(mean_rate * fraction), 1, max_points);
    for (int i = 0; i < n; ++i) {
        const int cell = cells[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(cells.size()) - 1))];
        const int y = cell / mask.width, x = cell % mask.width;
        out.points.push_back({static_cast<double>(x) / patch_size, static_cast<double>(y) / patch_size, tag_at(y, x)});
    }
    return out;
}

#define GEODIT_INSTANTIATE(S)                                                                                       \
    template std::vector<ImageGrid<S>> guided_velocity<S>(GeoDiT<S> &, const std::vector<ImageGrid<S>> &, S,       \
                                                          const std::vector<SampleCondition> &, double);            \
    template VelocityField<S> model_field<S>(GeoDiT<S> &, std::vector<SampleCondition>, double);                   \
    template std::vector<ImageGrid<S>> integrate_field<S>(const VelocityField<S> &, std::vector<ImageGrid<S>>,      \
                                                          const SamplerConfig &, const StepHook<S> &);              \
    template ImageGrid<S> initial_noise<S>(std::uint64_t, int, int, int, int);                                      \
    template std::vector<ImageGrid<S>> integrate<S>(GeoDiT<S> &, const std::vector<SampleCondition> &,              \
                                                    const SamplerConfig &, int);                                    \
    template std::vector<ImageGrid<S>> inpaint_field<S>(const VelocityField<S> &,                                  \
                                                        const std::vector<InpaintTask<S>> &, const SamplerConfig &, \
                                                        int);                                                       \
    template std::vector<ImageGrid<S>> inpaint<S>(GeoDiT<S> &, const std::vector<InpaintTask<S>> &,                 \
                                                  const SamplerConfig &, int);

GEODIT_INSTANTIATE(double)
GEODIT_INSTANTIATE(float)
#undef GEODIT_INSTANTIATE

} // namespace geodit
