#pragma once

#include "geodit/autodiff.hpp"
#include "geodit/config.hpp"
#include "geodit/parameters.hpp"
#include "geodit/types.hpp"

#include <optional>
#include <vector>

namespace geodit {

/// Raw per-example conditions. An absent caption or location selects the
/// learned null embedding; an empty point set disables local attention.
struct SampleCondition {
    std::optional<int> caption_id;
    PointSet points;
    std::optional<LatLon> location;
};

/// Encoded conditions for a batch, all recorded on one tape.
template <typename Scalar>
struct ConditioningBundle {
    ad::Var<Scalar> t_emb;                              // B x D
    std::optional<ad::Var<Scalar>> caption_pooled;      // B x D
    std::optional<ad::Var<Scalar>> caption_tokens;      // (B * caption_len) x D
    std::optional<ad::Var<Scalar>> point_embs;          // (sum of point counts) x D
    std::vector<int> point_offsets;                     // B + 1 row offsets into point_embs
    std::optional<ad::Var<Scalar>> geo_emb;             // B x D
};

/// [sin(x w_k)..., cos(x w_k)..., sin(y w_k)..., cos(y w_k)...], w_k = 10000^(-4k/dim).
template <typename Scalar>
RowVector<Scalar> sincos2d(double x, double y, int dim);

/// sincos2d for each token of a side x side grid, row-major: n_tokens x dim.
template <typename Scalar>
Matrix<Scalar> grid_sincos2d(int side, int dim);

/// Frozen random Fourier frequencies for the location encoder (geo_frequencies x 4).
template <typename Scalar>
Matrix<Scalar> geo_fourier_frequencies(const ModelConfig &cfg);

/// Parameters for every conditioning encoder active at `stage`.
template <typename Scalar>
void add_conditioning_parameters(ParameterSet<Scalar> &params, const ModelConfig &cfg, Stage stage);

/// Sinusoidal frequency features of 1000 t followed by a two-layer MLP.
/// `t` is B x 1 with entries in [0, 1]; returns B x D.
template <typename Scalar>
ad::Var<Scalar> embed_timestep(ad::Tape<Scalar> &tape, ParameterSet<Scalar> &params, const ModelConfig &cfg,
                               ad::Var<Scalar> t);

/// MLP(sincos2d(x, y)) + tag_table[tag]; returns points.size() x D.
template <typename Scalar>
ad::Var<Scalar> encode_points(ad::Tape<Scalar> &tape, ParameterSet<Scalar> &params, const ModelConfig &cfg,
                              const std::vector<PointQuery> &points);

/// Location embedding for each row; absent rows use the learned null vector.
template <typename Scalar>
ad::Var<Scalar> embed_geolocation(ad::Tape<Scalar> &tape, ParameterSet<Scalar> &params, const ModelConfig &cfg,
                                  const Matrix<Scalar> &fourier, const std::vector<std::optional<LatLon>> &locations);

/// Caption token sequences (B * caption_len x D) from the learned template
/// codebook; absent ids use the null caption. Pooled embedding = token mean.
template <typename Scalar>
ad::Var<Scalar> encode_caption_tokens(ad::Tape<Scalar> &tape, ParameterSet<Scalar> &params, const ModelConfig &cfg,
                                      const std::vector<std::optional<int>> &caption_ids);

/// Longitude folded into [-180, 180).
double wrap_longitude(double lon);

} // namespace geodit
