#include "geodit/flow.hpp"

#include <doctest.h>

using namespace geodit;

namespace {

Image random_grid(int h, int w, int c, std::uint64_t seed)
{
    Rng rng(seed);
    return standard_normal_grid<double>(h, w, c, rng);
}

} // namespace

TEST_CASE("interpolant endpoints")
{
    const auto sched = FlowSchedule<double>::linear();
    const auto x = random_grid(4, 4, 3, 1), e = random_grid(4, 4, 3, 2);
    CHECK(interpolate(x, e, 0.0, sched).x_t.pixels == x.pixels);
    CHECK(interpolate(x, e, 1.0, sched).x_t.pixels == e.pixels);
}

TEST_CASE("linear schedule hand example")
{
    const auto sched = FlowSchedule<double>::linear();
    const auto s = interpolate(Image::constant(1, 1, 1, 2.0), Image::constant(1, 1, 1, 0.0), 0.5, sched);
    CHECK(s.x_t.pixels(0, 0) == doctest::Approx(1.0));
    CHECK(s.v_target.pixels(0, 0) == doctest::Approx(-2.0));
}

TEST_CASE("linear target is eps minus data at every t")
{
    const auto sched = FlowSchedule<double>::linear();
    const auto x = random_grid(4, 4, 3, 3), e = random_grid(4, 4, 3, 4);
    for (double t : {0.0, 0.13, 0.5, 0.99, 1.0}) CHECK(interpolate(x, e, t, sched).v_target.pixels == e.pixels - x.pixels);
}

TEST_CASE("schedule boundary values and derivatives")
{
    for (const auto &sched : {FlowSchedule<double>::linear(), FlowSchedule<double>::cosine()}) {
        CHECK(sched.alpha(0.0) == 1.0);
        CHECK(sched.sigma(0.0) == 0.0);
        CHECK(sched.alpha(1.0) == doctest::Approx(0.0));
        CHECK(sched.sigma(1.0) == doctest::Approx(1.0));
        const double h = 1e-6;
        for (int i = 0; i < 100; ++i) {
            const double t = h + (1.0 - 2 * h) * i / 99.0;
            CHECK(std::abs((sched.alpha(t + h) - sched.alpha(t - h)) / (2 * h) - sched.dalpha(t)) < 1e-6);
            CHECK(std::abs((sched.sigma(t + h) - sched.sigma(t - h)) / (2 * h) - sched.dsigma(t)) < 1e-6);
            CHECK(sched.alpha(t) >= sched.alpha(t + h));
            CHECK(sched.sigma(t) <= sched.sigma(t + h));
        }
    }
}

TEST_CASE("target velocity is the time derivative of the path")
{
    const double h = 1e-5;
    for (const auto &sched : {FlowSchedule<double>::linear(), FlowSchedule<double>::cosine()}) {
        const auto x = random_grid(2, 2, 3, 5), e = random_grid(2, 2, 3, 6);
        for (double t : {0.1, 0.37, 0.8}) {
            const MatrixXd fd =
                (interpolate(x, e, t + h, sched).x_t.pixels - interpolate(x, e, t - h, sched).x_t.pixels) / (2 * h);
            const MatrixXd v = interpolate(x, e, t, sched).v_target.pixels;
            CHECK((fd - v).norm() / v.norm() < 1e-4);
        }
    }
}

TEST_CASE("interpolate rejects bad input")
{
    const auto sched = FlowSchedule<double>::linear();
    CHECK_THROWS_AS(interpolate(Image(2, 2, 3), Image(2, 2, 1), 0.5, sched), ShapeError);
    CHECK_THROWS_AS(interpolate(Image(2, 2, 3), Image(2, 2, 3), 1.5, sched), DomainError);
    CHECK_THROWS_AS(interpolate(Image(2, 2, 3), Image(2, 2, 3), -0.1, sched), DomainError);
}

TEST_CASE("velocity loss")
{
    const auto sched = FlowSchedule<double>::linear();
    const auto s = interpolate(random_grid(2, 2, 1, 7), random_grid(2, 2, 1, 8), 0.3, sched);
    CHECK(velocity_loss(s.v_target, s) == 0.0);
    Image off = s.v_target;
    off.pixels.array() += 1.0;
    CHECK(velocity_loss(off, s) == doctest::Approx(1.0));

    const auto p = random_grid(2, 2, 1, 9);
    double brute = 0.0;
    for (int y = 0; y < 2; ++y)
        for (int x = 0; x < 2; ++x) {
            const double d = p(y, x, 0) - s.v_target(y, x, 0);
            brute += d * d;
        }
    CHECK(velocity_loss(p, s) == doctest::Approx(brute / 4).epsilon(1e-14));

    // symmetric in its two grids
    auto swapped = s;
    swapped.v_target = p;
    CHECK(velocity_loss(s.v_target, swapped) == doctest::Approx(velocity_loss(p, s)).epsilon(1e-14));
    CHECK_THROWS_AS(velocity_loss(Image(2, 2, 3), s), ShapeError);
}

TEST_CASE("training batch draws")
{
    const auto sched = FlowSchedule<double>::linear();
    Rng empty_rng(0);
    CHECK_THROWS(sample_training_batch<double>({}, empty_rng, sched));

    std::vector<Image> data(4, Image::constant(2, 2, 3, 0.5));
    Rng a(11), b(11);
    const auto ba = sample_training_batch(data, a, sched), bb = sample_training_batch(data, b, sched);
    for (std::size_t i = 0; i < ba.size(); ++i) {
        CHECK(ba[i].t == bb[i].t);
        CHECK(ba[i].eps.pixels == bb[i].eps.pixels);
    }

    std::vector<Image> one(1, Image(1, 1, 1));
    Rng rng(12);
    double tsum = 0.0, esum = 0.0, esq = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        const auto s = sample_training_batch(one, rng, sched).front();
        tsum += s.t;
        esum += s.eps.pixels(0, 0);
        esq += s.eps.pixels(0, 0) * s.eps.pixels(0, 0);
    }
    const double emean = esum / n;
    CHECK(tsum / n >= 0.495);
    CHECK(tsum / n <= 0.505);
    CHECK(std::abs(emean) <= 0.01);
    const double var = esq / n - emean * emean;
    CHECK(var >= 0.98);
    CHECK(var <= 1.02);
}
