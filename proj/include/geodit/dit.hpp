#pragma once

#include "geodit/autodiff.hpp"
#include "geodit/conditioning.hpp"
#include "geodit/config.hpp"
#include "geodit/parameters.hpp"
#include "geodit/types.hpp"

#include <string>
#include <vector>

namespace geodit {

/// Non-overlapping patch_size x patch_size patches in row-major token order;
/// each row is the patch flattened as (py, px, channel). n_tokens x patch_dim.
template <typename Scalar>
Matrix<Scalar> patchify_pixels(const ImageGrid<Scalar> &x, int patch_size);

/// Inverse of patchify_pixels.
template <typename Scalar>
ImageGrid<Scalar> unpatchify_pixels(const Matrix<Scalar> &patches, int height, int width, int channels,
                                    int patch_size);

template <typename Scalar>
struct ForwardOutput {
    ad::Var<Scalar> velocity; // (B * n_tokens) x patch_dim, token layout
    ad::Var<Scalar> hidden;   // (B * n_tokens) x D after block align_block_index
};

/// Flow-matching diffusion transformer with AdaLN-Zero blocks, caption
/// cross-attention (stage >= text) and adaptive local attention to point
/// prompts (stage points_geo). Every branch a later stage adds starts with a
/// zero output projection, so a freshly extended model computes exactly what
/// its predecessor did.
template <typename Scalar>
class GeoDiT {
public:
    GeoDiT(const ModelConfig &cfg, Stage stage);

    const ModelConfig &config() const { return cfg_; }
    Stage stage() const { return stage_; }
    ParameterSet<Scalar> &params() { return params_; }
    const ParameterSet<Scalar> &params() const { return params_; }
    const Matrix<Scalar> &geo_fourier() const { return geo_fourier_; }

    /// Copies every array of `prior` into this model. Arrays absent from this
    /// model or of a different shape are an error.
    void load_arrays(const ParameterSet<Scalar> &prior);

    /// Re-draws every parameter, including zero-initialized ones, from a
    /// normal law. Used by gradient checks so no branch is trivially gated off.
    void randomize(std::uint64_t seed, double stddev);

    /// Embeds patches and adds the fixed 2D sine-cosine position code.
    ad::Var<Scalar> patchify(ad::Tape<Scalar> &tape, const std::vector<ImageGrid<Scalar>> &x);

    ConditioningBundle<Scalar> encode(ad::Tape<Scalar> &tape, ad::Var<Scalar> t,
                                      const std::vector<SampleCondition> &conds);

    /// t_emb plus the stage's projected caption and location embeddings (B x D).
    ad::Var<Scalar> conditioning_vector(ad::Tape<Scalar> &tape, const ConditioningBundle<Scalar> &bundle);

    /// One block over a batch of token sequences stacked row-wise.
    ad::Var<Scalar> dit_block(ad::Tape<Scalar> &tape, int index, ad::Var<Scalar> x, ad::Var<Scalar> cond,
                              const ConditioningBundle<Scalar> &bundle, const std::vector<SampleCondition> &conds);

    ForwardOutput<Scalar> forward(ad::Tape<Scalar> &tape, const std::vector<ImageGrid<Scalar>> &x_t,
                                  const std::vector<Scalar> &t, const std::vector<SampleCondition> &conds);

    /// Inference convenience: predicted velocity fields, no gradient recording.
    std::vector<ImageGrid<Scalar>> velocity(const std::vector<ImageGrid<Scalar>> &x_t, const std::vector<Scalar> &t,
                                            const std::vector<SampleCondition> &conds);

    /// Per-point (sigma_x, sigma_y) predicted by block `index`; n_points x 2.
    Matrix<Scalar> spatial_extents(int index, const PointSet &points);

    /// Number of velocity evaluations since construction.
    long evaluations() const { return evaluations_; }

private:
    std::string block(int i) const { return "blocks." + std::to_string(i); }

    ModelConfig cfg_;
    Stage stage_;
    ParameterSet<Scalar> params_;
    Matrix<Scalar> geo_fourier_;
    Matrix<Scalar> pos_embed_;
    long evaluations_ = 0;
};

extern template class GeoDiT<double>;
extern template class GeoDiT<float>;

} // namespace geodit
