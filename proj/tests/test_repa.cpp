#include "geodit/repa.hpp"

#include <doctest.h>

using namespace geodit;

namespace {

Image noise(int size, std::uint64_t seed)
{
    Rng rng(seed);
    Image g(size, size, 3);
    for (Eigen::Index i = 0; i < g.pixels.size(); ++i) g.pixels.data()[i] = rng.uniform(-1.0, 1.0);
    return g;
}

double loss_of(ParameterSet<double> &p, const MatrixXd &hidden, const MatrixXd &target)
{
    ad::Tape<double> tape(false);
    return alignment_loss(tape, p, tape.constant(hidden), target).scalar();
}

} // namespace

TEST_CASE("frozen encoder")
{
    ModelConfig cfg;
    const TargetEncoder<double> enc(cfg), again(cfg);
    const auto x = noise(16, 1);
    const auto f = target_features(x, enc);
    CHECK(f.rows() == cfg.num_tokens());
    CHECK(f.cols() == cfg.feat_dim);
    CHECK(f == target_features(x, again));
    CHECK(f == target_features(x, enc));

    // orthonormal kernels
    const MatrixXd &w1 = enc.patch_kernel();
    CHECK((w1 * w1.transpose() - MatrixXd::Identity(w1.rows(), w1.rows())).cwiseAbs().maxCoeff() < 1e-12);
    const MatrixXd &w2 = enc.grid_kernel();
    CHECK((w2.transpose() * w2 - MatrixXd::Identity(w2.cols(), w2.cols())).cwiseAbs().maxCoeff() < 1e-12);

    // batch form stacks per-image features
    const auto y = noise(16, 2);
    const MatrixXd both = target_features<double>(std::vector<Image>{x, y}, enc);
    CHECK(both.topRows(64) == f);
    CHECK(both.bottomRows(64) == target_features(y, enc));

    CHECK((enc.pooled(x) - f.colwise().mean()).cwiseAbs().maxCoeff() < 1e-15);
    CHECK_THROWS(enc.features(noise(8, 3)));
}

TEST_CASE("changing one patch changes the features at that patch")
{
    ModelConfig cfg;
    const TargetEncoder<double> enc(cfg);
    const auto x = noise(16, 4);
    auto y = x;
    y(10, 6, 1) += 0.5; // token (row 5, col 3)
    const MatrixXd fx = enc.features(x), fy = enc.features(y);
    const int tok = 5 * 8 + 3;
    CHECK((fx.row(tok) - fy.row(tok)).norm() > 1e-6);
    // the 3x3 second layer keeps the change local
    CHECK((fx.row(0) - fy.row(0)).norm() == 0.0);
    CHECK((fx.row(63) - fy.row(63)).norm() == 0.0);
}

TEST_CASE("orthogonal matrix")
{
    const auto tall = orthogonal_matrix<double>(12, 5, 3);
    CHECK((tall.transpose() * tall - MatrixXd::Identity(5, 5)).cwiseAbs().maxCoeff() < 1e-12);
    const auto wide = orthogonal_matrix<double>(4, 9, 3);
    CHECK((wide * wide.transpose() - MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(orthogonal_matrix<double>(6, 6, 1) == orthogonal_matrix<double>(6, 6, 1));
}

TEST_CASE("alignment loss values")
{
    ParameterSet<double> p;
    p.create_linear("repa.proj", 4, 4, Init::zeros, 0);
    p.value("repa.proj.w") = MatrixXd::Identity(4, 4);
    Rng rng(5);
    MatrixXd h(4, 4);
    for (Eigen::Index i = 0; i < h.size(); ++i) h.data()[i] = rng.normal();

    CHECK(loss_of(p, h, h) == doctest::Approx(0.0).epsilon(1e-14));
    CHECK(loss_of(p, h, -h) == doctest::Approx(2.0));

    MatrixXd target(4, 4);
    for (Eigen::Index i = 0; i < target.size(); ++i) target.data()[i] = rng.normal();
    p.value("repa.proj.w") = MatrixXd::Identity(4, 4) * 0.7;
    p.value("repa.proj.b") = RowVectorXd::LinSpaced(4, -0.2, 0.3);
    double brute = 0.0;
    for (int j = 0; j < 4; ++j) {
        const RowVectorXd z = h.row(j) * p.value("repa.proj.w") + p.value("repa.proj.b");
        brute += 1.0 - z.dot(target.row(j)) / (z.norm() * target.row(j).norm());
    }
    CHECK(loss_of(p, h, target) == doctest::Approx(brute / 4).epsilon(1e-13));

    // per-token positive rescaling of the target leaves the loss unchanged
    MatrixXd scaled = target;
    scaled.row(0) *= 3.0;
    scaled.row(2) *= 0.01;
    CHECK(loss_of(p, h, scaled) == doctest::Approx(loss_of(p, h, target)).epsilon(1e-13));

    // zero vectors do not produce NaN
    CHECK(std::isfinite(loss_of(p, h, MatrixXd::Zero(4, 4))));
}

TEST_CASE("total loss")
{
    CHECK(total_loss(1.3, 7.0, 0.0) == 1.3);
    CHECK(total_loss(1.0, 2.0, 0.5) == 2.0);
    CHECK_THROWS(total_loss(1.0, 2.0, -0.1));
}

TEST_CASE("projection gradient of the total is the weighted alignment gradient")
{
    ParameterSet<double> p;
    p.create_linear("repa.proj", 4, 3, Init::xavier, 1);
    p.create("other", 4, 3, Init::normal_1, 2);
    Rng rng(6);
    MatrixXd h(5, 4), target(5, 3);
    for (Eigen::Index i = 0; i < h.size(); ++i) h.data()[i] = rng.normal();
    for (Eigen::Index i = 0; i < target.size(); ++i) target.data()[i] = rng.normal();

    auto grads = [&](bool total) {
        p.zero_grad();
        ad::Tape<double> tape;
        auto hv = tape.constant(h);
        auto a = alignment_loss(tape, p, hv, target);
        auto v = ad::mse(ad::matmul(hv, p.var(tape, "other")), MatrixXd(MatrixXd::Ones(5, 3)));
        tape.backward(total ? total_loss(v, a, 0.5) : a);
        return p.grad_or_zero("repa.proj.w");
    };
    const MatrixXd ga = grads(false), gt = grads(true);
    CHECK(ga.norm() > 0);
    CHECK((gt - 0.5 * ga).cwiseAbs().maxCoeff() < 1e-14);
}
