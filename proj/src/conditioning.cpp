#include "geodit/conditioning.hpp"

#include <cmath>
#include <numbers>

namespace geodit {

double wrap_longitude(double lon)
{
    double w = std::fmod(lon + 180.0, 360.0);
    if (w < 0.0) w += 360.0;
    return w - 180.0;
}

template <typename Scalar>
RowVector<Scalar> sincos2d(double x, double y, int dim)
{
    if (dim <= 0 || dim % 4 != 0) throw std::invalid_argument("sincos2d: dim must be a positive multiple of 4");
    const int quarter = dim / 4;
    RowVector<Scalar> out(dim);
    for (int k = 0; k < quarter; ++k) {
        const double w = std::pow(10000.0, -4.0 * k / dim);
        out(k) = Scalar(std::sin(x * w));
        out(quarter + k) = Scalar(std::cos(x * w));
        out(2 * quarter + k) = Scalar(std::sin(y * w));
        out(3 * quarter + k) = Scalar(std::cos(y * w));
    }
    return out;
}

template <typename Scalar>
Matrix<Scalar> grid_sincos2d(int side, int dim)
{
    Matrix<Scalar> out(side * side, dim);
    for (int j = 0; j < side * side; ++j) out.row(j) = sincos2d<Scalar>(j % side, j / side, dim);
    return out;
}

template <typename Scalar>
Matrix<Scalar> geo_fourier_frequencies(const ModelConfig &cfg)
{
    constexpr double bandwidths[] = {1.0, 4.0, 16.0};
    Rng rng(derive_seed(cfg.init_seed, hash_name("geo.fourier")));
    Matrix<Scalar> w(cfg.geo_frequencies, 4);
    for (int i = 0; i < cfg.geo_frequencies; ++i)
        for (int c = 0; c < 4; ++c) w(i, c) = Scalar(rng.normal(0.0, bandwidths[i % 3]));
    return w;
}

template <typename Scalar>
void add_conditioning_parameters(ParameterSet<Scalar> &params, const ModelConfig &cfg, Stage stage)
{
    const int d = cfg.hidden_dim;
    const auto seed = cfg.init_seed;
    params.create_linear("t_embed.fc1", cfg.freq_dim, d, Init::normal_002, seed);
    params.create_linear("t_embed.fc2", d, d, Init::normal_002, seed);
    if (stage >= Stage::text) {
        params.create("caption.codebook", (cfg.caption_vocab + 1) * cfg.caption_len, d, Init::normal_002, seed);
        params.create_linear("caption.pool_proj", d, d, Init::zeros, seed);
    }
    if (stage >= Stage::points_geo) {
        params.create_linear("points.fc1", d, d, Init::xavier, seed);
        params.create_linear("points.fc2", d, d, Init::xavier, seed);
        params.create("points.tags", cfg.tag_vocab_size, d, Init::normal_002, seed);
        params.create_linear("geo.fc1", 2 * cfg.geo_frequencies, d, Init::xavier, seed);
        params.create_linear("geo.fc2", d, d, Init::xavier, seed);
        params.create("geo.null", 1, d, Init::normal_002, seed);
        params.create_linear("geo.proj", d, d, Init::zeros, seed);
    }
}

template <typename Scalar>
ad::Var<Scalar> embed_timestep(ad::Tape<Scalar> &tape, ParameterSet<Scalar> &params, const ModelConfig &cfg,
                               ad::Var<Scalar> t)
{
    if (t.cols() != 1) throw ShapeError("embed_timestep: t must be a column");
    for (Eigen::Index i = 0; i < t.rows(); ++i) {
        const Scalar v = t.value()(i, 0);
        if (!(v >= Scalar(0) && v <= Scalar(1))) throw DomainError("embed_timestep: t outside [0, 1]");
    }
    const int half = cfg.freq_dim / 2;
    Matrix<Scalar> freqs(1, half);
    for (int k = 0; k < half; ++k) freqs(0, k) = Scalar(std::exp(-std::log(10000.0) * k / half));
    auto args = ad::matmul(ad::scale(t, Scalar(1000)), tape.constant(std::move(freqs)));
    auto feats = ad::concat_cols<Scalar>({ad::cos(args), ad::sin(args)});
    auto h = ad::silu(params.linear(tape, "t_embed.fc1", feats));
    return params.linear(tape, "t_embed.fc2", h);
}

template <typename Scalar>
ad::Var<Scalar> encode_points(ad::Tape<Scalar> &tape, ParameterSet<Scalar> &params, const ModelConfig &cfg,
                              const std::vector<PointQuery> &points)
{
    if (points.empty()) throw std::invalid_argument("encode_points: no points");
    const int side = cfg.tokens_per_side();
    Matrix<Scalar> pos(static_cast<Eigen::Index>(points.size()), cfg.hidden_dim);
    std::vector<int> tags;
    tags.reserve(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
        const auto &p = points[i];
        if (p.tag_id < 0 || p.tag_id >= cfg.tag_vocab_size) throw DomainError("encode_points: tag_id out of vocabulary");
        if (!(p.x >= 0.0 && p.x < side && p.y >= 0.0 && p.y < side))
            throw DomainError("encode_points: coordinates outside the token grid");
        pos.row(static_cast<Eigen::Index>(i)) = sincos2d<Scalar>(p.x, p.y, cfg.hidden_dim);
        tags.push_back(p.tag_id);
    }
    auto h = ad::silu(params.linear(tape, "points.fc1", tape.constant(std::move(pos))));
    auto spatial = params.linear(tape, "points.fc2", h);
    return ad::add(spatial, ad::gather_rows(params.var(tape, "points.tags"), std::move(tags)));
}

template <typename Scalar>
ad::Var<Scalar> embed_geolocation(ad::Tape<Scalar> &tape, ParameterSet<Scalar> &params, const ModelConfig &cfg,
                                  const Matrix<Scalar> &fourier, const std::vector<std::optional<LatLon>> &locations)
{
    if (locations.empty()) throw std::invalid_argument("embed_geolocation: empty batch");
    if (fourier.rows() != cfg.geo_frequencies || fourier.cols() != 4)
        throw ShapeError("embed_geolocation: frequency matrix does not match the configuration");
    const auto n = static_cast<Eigen::Index>(locations.size());
    Matrix<Scalar> u = Matrix<Scalar>::Zero(n, 4);
    bool any = false;
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto &loc = locations[static_cast<std::size_t>(i)];
        if (!loc) continue;
        if (!(loc->lat >= -90.0 && loc->lat <= 90.0 && loc->lon >= -180.0 && loc->lon <= 180.0))
            throw DomainError("embed_geolocation: coordinates out of range");
        const double phi = loc->lat * std::numbers::pi / 180.0;
        const double lam = wrap_longitude(loc->lon) * std::numbers::pi / 180.0;
        u.row(i) << Scalar(std::sin(phi)), Scalar(std::cos(phi)), Scalar(std::sin(lam)), Scalar(std::cos(lam));
        any = true;
    }
    auto null_row = params.var(tape, "geo.null");
    if (!any) {
        std::vector<ad::Var<Scalar>> rows(static_cast<std::size_t>(n), null_row);
        return ad::concat_rows(rows);
    }
    Matrix<Scalar> z = u * fourier.transpose();
    Matrix<Scalar> feats(n, 2 * fourier.rows());
    feats << z.array().sin().matrix(), z.array().cos().matrix();
    auto h = ad::silu(params.linear(tape, "geo.fc1", tape.constant(std::move(feats))));
    auto emb = params.linear(tape, "geo.fc2", h);
    bool all = true;
    for (const auto &loc : locations) all = all && loc.has_value();
    if (all) return emb;
    std::vector<ad::Var<Scalar>> rows;
    for (Eigen::Index i = 0; i < n; ++i)
        rows.push_back(locations[static_cast<std::size_t>(i)] ? ad::slice_rows(emb, i, 1) : null_row);
    return ad::concat_rows(rows);
}

template <typename Scalar>
ad::Var<Scalar> encode_caption_tokens(ad::Tape<Scalar> &tape, ParameterSet<Scalar> &params, const ModelConfig &cfg,
                                      const std::vector<std::optional<int>> &caption_ids)
{
    std::vector<int> rows;
    rows.reserve(caption_ids.size() * static_cast<std::size_t>(cfg.caption_len));
    for (const auto &id : caption_ids) {
        if (id && (*id < 0 || *id >= cfg.caption_vocab)) throw DomainError("encode_caption: id out of vocabulary");
        const int entry = id ? *id : cfg.caption_vocab;
        for (int l = 0; l < cfg.caption_len; ++l) rows.push_back(entry * cfg.caption_len + l);
    }
    return ad::gather_rows(params.var(tape, "caption.codebook"), std::move(rows));
}

#define GEODIT_INSTANTIATE(S)                                                                                       \
    template RowVector<S> sincos2d<S>(double, double, int);                                                         \
    template Matrix<S> grid_sincos2d<S>(int, int);                                                                  \
    template Matrix<S> geo_fourier_frequencies<S>(const ModelConfig &);                                             \
    template void add_conditioning_parameters<S>(ParameterSet<S> &, const ModelConfig &, Stage);                    \
    template ad::Var<S> embed_timestep<S>(ad::Tape<S> &, ParameterSet<S> &, const ModelConfig &, ad::Var<S>);       \
    template ad::Var<S> encode_points<S>(ad::Tape<S> &, ParameterSet<S> &, const ModelConfig &,                     \
                                         const std::vector<PointQuery> &);                                          \
    template ad::Var<S> embed_geolocation<S>(ad::Tape<S> &, ParameterSet<S> &, const ModelConfig &,                 \
                                             const Matrix<S> &, const std::vector<std::optional<LatLon>> &);        \
    template ad::Var<S> encode_caption_tokens<S>(ad::Tape<S> &, ParameterSet<S> &, const ModelConfig &,             \
                                                 const std::vector<std::optional<int>> &);

GEODIT_INSTANTIATE(double)
GEODIT_INSTANTIATE(float)
#undef GEODIT_INSTANTIATE

} // namespace geodit
