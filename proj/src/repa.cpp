#include "geodit/repa.hpp"

#include "geodit/dit.hpp"
#include "geodit/rng.hpp"

#include <Eigen/QR>

namespace geodit {

template <typename Scalar>
Matrix<Scalar> orthogonal_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed)
{
    const Eigen::Index tall = std::max(rows, cols), thin = std::min(rows, cols);
    Rng rng(seed);
    Eigen::MatrixXd g(tall, thin);
    for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = rng.normal();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(tall, thin);
    // Fix the sign ambiguity so the draw is a proper Haar sample.
    const Eigen::MatrixXd r = qr.matrixQR();
    for (Eigen::Index j = 0; j < thin; ++j)
        if (r(j, j) < 0) q.col(j) *= -1.0;
    Matrix<Scalar> out = rows >= cols ? Matrix<Scalar>(q.cast<Scalar>()) : Matrix<Scalar>(q.transpose().cast<Scalar>());
    return out;
}

template <typename Scalar>
TargetEncoder<Scalar>::TargetEncoder(const ModelConfig &cfg) : cfg_(cfg)
{
    w1_ = orthogonal_matrix<Scalar>(cfg.patch_dim(), cfg.feat_dim, derive_seed(cfg.init_seed, hash_name("target.conv1")));
    w2_ = orthogonal_matrix<Scalar>(9 * cfg.feat_dim, cfg.feat_dim, derive_seed(cfg.init_seed, hash_name("target.conv2")));
}

template <typename Scalar>
Matrix<Scalar> TargetEncoder<Scalar>::features(const ImageGrid<Scalar> &x) const
{
    if (x.height != cfg_.grid_size || x.width != cfg_.grid_size || x.channels != cfg_.channels)
        throw ShapeError("target_features: image shape does not match the configuration");
    const int side = cfg_.tokens_per_side(), f = cfg_.feat_dim;
    const Matrix<Scalar> h = (patchify_pixels(x, cfg_.patch_size) * w1_).array().tanh().matrix();
    Matrix<Scalar> out = Matrix<Scalar>::Zero(h.rows(), f);
    for (int ty = 0; ty < side; ++ty)
        for (int tx = 0; tx < side; ++tx) {
            auto row = out.row(ty * side + tx);
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const int yy = ty + dy, xx = tx + dx;
                    if (yy < 0 || yy >= side || xx < 0 || xx >= side) continue;
                    const int k = (dy + 1) * 3 + (dx + 1);
                    row.noalias() += h.row(yy * side + xx) * w2_.middleRows(k * f, f);
                }
        }
    return out;
}

template <typename Scalar>
RowVector<Scalar> TargetEncoder<Scalar>::pooled(const ImageGrid<Scalar> &x) const
{
    return features(x).colwise().mean();
}

template <typename Scalar>
Matrix<Scalar> target_features(const std::vector<ImageGrid<Scalar>> &batch, const TargetEncoder<Scalar> &enc)
{
    if (batch.empty()) return {};
    std::vector<Matrix<Scalar>> parts;
    Eigen::Index rows = 0;
    for (const auto &x : batch) {
        parts.push_back(enc.features(x));
        rows += parts.back().rows();
    }
    Matrix<Scalar> out(rows, parts.front().cols());
    Eigen::Index at = 0;
    for (const auto &p : parts) {
        out.middleRows(at, p.rows()) = p;
        at += p.rows();
    }
    return out;
}

template <typename Scalar>
ad::Var<Scalar> alignment_loss(ad::Tape<Scalar> &tape, ParameterSet<Scalar> &params, ad::Var<Scalar> hidden,
                               const Matrix<Scalar> &target)
{
    return ad::cosine_distance(params.linear(tape, "repa.proj", hidden), target, Scalar(1e-12));
}

#define GEODIT_INSTANTIATE(S)                                                                                       \
    template class TargetEncoder<S>;                                                                                \
    template Matrix<S> orthogonal_matrix<S>(Eigen::Index, Eigen::Index, std::uint64_t);                             \
    template Matrix<S> target_features<S>(const std::vector<ImageGrid<S>> &, const TargetEncoder<S> &);             \
    template ad::Var<S> alignment_loss<S>(ad::Tape<S> &, ParameterSet<S> &, ad::Var<S>, const Matrix<S> &);

GEODIT_INSTANTIATE(double)
GEODIT_INSTANTIATE(float)
#undef GEODIT_INSTANTIATE

} // namespace geodit
