#pragma once

// Adaptive local attention: a small self-attention network predicts an
// anisotropic Gaussian footprint (sigma_x, sigma_y) per point prompt, and the
// resulting spatial prior biases cross-attention from image tokens to points.

#include "geodit/autodiff.hpp"
#include "geodit/config.hpp"
#include "geodit/parameters.hpp"
#include "geodit/types.hpp"

#include <string>

namespace geodit {

/// Floor inside log(prior + floor) for the attention bias.
inline constexpr double kPriorLogFloor = 1e-6;

/// Token j sits at (j mod side, j div side): count x 2 of (x, y).
template <typename Scalar>
Matrix<Scalar> token_positions(int count, int side);

/// Point centers as n_points x 2 of (x, y).
template <typename Scalar>
Matrix<Scalar> point_centers(const PointSet &points);

/// Creates `<prefix>.meta.*` and `<prefix>.attn.*`; the attention output
/// projection starts at zero.
template <typename Scalar>
void add_ala_parameters(ParameterSet<Scalar> &params, const std::string &prefix, const ModelConfig &cfg);

/// Spatial extents for each point embedding row: softplus(head(h)) + sigma_min,
/// where h = e + MHA(LN(e)) over the point set. Returns n_points x 2.
template <typename Scalar>
ad::Var<Scalar> meta_rbf(ad::Tape<Scalar> &tape, ParameterSet<Scalar> &params, const std::string &prefix,
                         const ModelConfig &cfg, ad::Var<Scalar> point_embs);

/// Prior likelihoods, n_points x n_tokens:
///   exp(-(jx - xi)^2 / sx_i^2 - (jy - yi)^2 / sy_i^2)
template <typename Scalar>
Matrix<Scalar> rbf_prior(const Matrix<Scalar> &centers, const Matrix<Scalar> &extents,
                         const Matrix<Scalar> &tokens);

/// Cross-attention from tokens (queries) to point embeddings (keys/values).
/// `log_bias` (n_tokens x n_points) is added to the scaled logits of every
/// head; pass nullptr for unbiased attention. Returns the projected delta.
template <typename Scalar>
ad::Var<Scalar> local_attention(ad::Tape<Scalar> &tape, ParameterSet<Scalar> &params, const std::string &prefix,
                                const ModelConfig &cfg, ad::Var<Scalar> tokens, ad::Var<Scalar> point_embs,
                                const ad::Var<Scalar> *log_bias);

/// Fixed-prior overload: bias = log(prior^T + floor), prior as returned by rbf_prior.
template <typename Scalar>
ad::Var<Scalar> local_attention(ad::Tape<Scalar> &tape, ParameterSet<Scalar> &params, const std::string &prefix,
                                const ModelConfig &cfg, ad::Var<Scalar> tokens, ad::Var<Scalar> point_embs,
                                const Matrix<Scalar> &prior);

/// meta_rbf -> rbf prior -> local_attention for one example. `tokens` are the
/// (normalized) image tokens in row-major grid order on a tokens_per_side-wide
/// grid. An empty point set gives a zero delta.
template <typename Scalar>
ad::Var<Scalar> ala_block(ad::Tape<Scalar> &tape, ParameterSet<Scalar> &params, const std::string &prefix,
                          const ModelConfig &cfg, ad::Var<Scalar> tokens, const PointSet &points,
                          ad::Var<Scalar> point_embs);

} // namespace geodit
