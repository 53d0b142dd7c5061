#pragma once

#include "geodit/rng.hpp"
#include "geodit/types.hpp"

#include <cmath>
#include <functional>
#include <numbers>
#include <vector>

namespace geodit {

/// Interpolant coefficients x_t = alpha(t) x + sigma(t) eps, data at t = 0 and
/// noise at t = 1, with their time derivatives.
template <typename Scalar>
struct FlowSchedule {
    std::function<Scalar(Scalar)> alpha;
    std::function<Scalar(Scalar)> sigma;
    std::function<Scalar(Scalar)> dalpha;
    std::function<Scalar(Scalar)> dsigma;

    static FlowSchedule linear()
    {
        return {[](Scalar t) { return Scalar(1) - t; }, [](Scalar t) { return t; }, [](Scalar) { return Scalar(-1); },
                [](Scalar) { return Scalar(1); }};
    }

    /// Variance-preserving trigonometric path.
    static FlowSchedule cosine()
    {
        constexpr Scalar h = Scalar(std::numbers::pi / 2);
        return {[](Scalar t) { return t >= Scalar(1) ? Scalar(0) : std::cos(h * t); },
                [](Scalar t) { return t >= Scalar(1) ? Scalar(1) : std::sin(h * t); },
                [](Scalar t) { return -h * std::sin(h * t); }, [](Scalar t) { return h * std::cos(h * t); }};
    }
};

template <typename Scalar>
struct FlowSample {
    ImageGrid<Scalar> x_hat;
    ImageGrid<Scalar> eps;
    Scalar t = 0;
    ImageGrid<Scalar> x_t;
    ImageGrid<Scalar> v_target;
};

template <typename Scalar>
FlowSample<Scalar> interpolate(const ImageGrid<Scalar> &x_hat, const ImageGrid<Scalar> &eps, Scalar t,
                               const FlowSchedule<Scalar> &sched)
{
    if (!x_hat.same_shape(eps)) throw ShapeError("interpolate: x_hat and eps differ in shape");
    if (!(t >= Scalar(0) && t <= Scalar(1))) throw DomainError("interpolate: t outside [0, 1]");
    const Scalar a = sched.alpha(t), s = sched.sigma(t), da = sched.dalpha(t), ds = sched.dsigma(t);
    FlowSample<Scalar> out{x_hat, eps, t, ImageGrid<Scalar>(x_hat.height, x_hat.width, x_hat.channels),
                           ImageGrid<Scalar>(x_hat.height, x_hat.width, x_hat.channels)};
    out.x_t.pixels = a * x_hat.pixels + s * eps.pixels;
    out.v_target.pixels = da * x_hat.pixels + ds * eps.pixels;
    return out;
}

/// Mean squared error between a predicted velocity field and the sample's target.
template <typename Scalar>
Scalar velocity_loss(const ImageGrid<Scalar> &v_pred, const FlowSample<Scalar> &sample)
{
    if (!v_pred.same_shape(sample.v_target)) throw ShapeError("velocity_loss: shape mismatch");
    return (v_pred.pixels - sample.v_target.pixels).squaredNorm() / Scalar(v_pred.pixels.size());
}

template <typename Scalar>
ImageGrid<Scalar> standard_normal_grid(int h, int w, int c, Rng &rng)
{
    ImageGrid<Scalar> g(h, w, c);
    for (Eigen::Index i = 0; i < g.pixels.size(); ++i) g.pixels.data()[i] = Scalar(rng.normal());
    return g;
}

/// Draws t ~ U[0, 1] and eps ~ N(0, I) per example, in batch order.
template <typename Scalar>
std::vector<FlowSample<Scalar>> sample_training_batch(const std::vector<ImageGrid<Scalar>> &data, Rng &rng,
                                                      const FlowSchedule<Scalar> &sched)
{
    if (data.empty()) throw std::invalid_argument("sample_training_batch: empty batch");
    std::vector<FlowSample<Scalar>> out;
    out.reserve(data.size());
    for (const auto &x : data) {
        const Scalar t = Scalar(rng.uniform());
        auto eps = standard_normal_grid<Scalar>(x.height, x.width, x.channels, rng);
        out.push_back(interpolate(x, eps, t, sched));
    }
    return out;
}

} // namespace geodit
