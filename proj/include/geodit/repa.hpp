#pragma once

// Representation alignment: hidden tokens of one block are projected into the
// patch-feature space of a frozen encoder applied to the clean image.

#include "geodit/autodiff.hpp"
#include "geodit/config.hpp"
#include "geodit/parameters.hpp"
#include "geodit/types.hpp"

#include <vector>

namespace geodit {

/// Frozen two-layer convolutional feature map: a patch_size x patch_size conv
/// with stride patch_size (patch_dim -> feat_dim), tanh, then a 3x3
/// zero-padded conv on the token grid (feat_dim -> feat_dim). Both kernels have
/// orthonormal rows or columns drawn from a seeded Gaussian via QR.
template <typename Scalar>
class TargetEncoder {
public:
    explicit TargetEncoder(const ModelConfig &cfg);

    /// n_tokens x feat_dim, rows in the model's token order.
    Matrix<Scalar> features(const ImageGrid<Scalar> &x) const;

    /// Per-image mean of the patch features (1 x feat_dim).
    RowVector<Scalar> pooled(const ImageGrid<Scalar> &x) const;

    const Matrix<Scalar> &patch_kernel() const { return w1_; }
    const Matrix<Scalar> &grid_kernel() const { return w2_; }

private:
    ModelConfig cfg_;
    Matrix<Scalar> w1_; // patch_dim x feat_dim
    Matrix<Scalar> w2_; // 9 * feat_dim x feat_dim
};

/// Matrix with orthonormal columns (rows >= cols) or rows (rows < cols).
template <typename Scalar>
Matrix<Scalar> orthogonal_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed);

template <typename Scalar>
Matrix<Scalar> target_features(const ImageGrid<Scalar> &x_hat, const TargetEncoder<Scalar> &enc)
{
    return enc.features(x_hat);
}

/// Stacked features for a batch in row order, (B * n_tokens) x feat_dim.
template <typename Scalar>
Matrix<Scalar> target_features(const std::vector<ImageGrid<Scalar>> &batch, const TargetEncoder<Scalar> &enc);

/// mean_j (1 - cos(hidden_j W + b, target_j)) with projection "repa.proj".
template <typename Scalar>
ad::Var<Scalar> alignment_loss(ad::Tape<Scalar> &tape, ParameterSet<Scalar> &params, ad::Var<Scalar> hidden,
                               const Matrix<Scalar> &target);

/// v_loss + align_weight * a_loss.
template <typename Scalar>
ad::Var<Scalar> total_loss(ad::Var<Scalar> v_loss, ad::Var<Scalar> a_loss, Scalar align_weight)
{
    if (align_weight < Scalar(0)) throw std::invalid_argument("total_loss: negative align_weight");
    return ad::add(v_loss, ad::scale(a_loss, align_weight));
}

inline double total_loss(double v_loss, double a_loss, double align_weight)
{
    if (align_weight < 0.0) throw std::invalid_argument("total_loss: negative align_weight");
    return v_loss + align_weight * a_loss;
}

} // namespace geodit
