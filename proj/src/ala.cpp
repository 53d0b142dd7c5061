#include "geodit/ala.hpp"

namespace geodit {

template <typename Scalar>
Matrix<Scalar> token_positions(int count, int side)
{
    Matrix<Scalar> pos(count, 2);
    for (int j = 0; j < count; ++j) {
        pos(j, 0) = Scalar(j % side);
        pos(j, 1) = Scalar(j / side);
    }
    return pos;
}

template <typename Scalar>
Matrix<Scalar> point_centers(const PointSet &points)
{
    Matrix<Scalar> c(points.size(), 2);
    for (int i = 0; i < points.size(); ++i) {
        c(i, 0) = Scalar(points.points[static_cast<std::size_t>(i)].x);
        c(i, 1) = Scalar(points.points[static_cast<std::size_t>(i)].y);
    }
    return c;
}

template <typename Scalar>
void add_ala_parameters(ParameterSet<Scalar> &params, const std::string &prefix, const ModelConfig &cfg)
{
    const int d = cfg.hidden_dim;
    const auto seed = cfg.init_seed;
    params.create_linear(prefix + ".meta.qkv", d, 3 * d, Init::xavier, seed);
    params.create_linear(prefix + ".meta.out", d, d, Init::xavier, seed);
    params.create_linear(prefix + ".meta.head", d, 2, Init::normal_002, seed);
    params.create_linear(prefix + ".attn.q", d, d, Init::xavier, seed);
    params.create_linear(prefix + ".attn.kv", d, 2 * d, Init::xavier, seed);
    params.create_linear(prefix + ".attn.out", d, d, Init::zeros, seed);
}

template <typename Scalar>
ad::Var<Scalar> meta_rbf(ad::Tape<Scalar> &tape, ParameterSet<Scalar> &params, const std::string &prefix,
                         const ModelConfig &cfg, ad::Var<Scalar> point_embs)
{
    if (point_embs.rows() == 0) throw std::invalid_argument("meta_rbf: no valid points");
    const int d = cfg.hidden_dim;
    auto qkv = params.linear(tape, prefix + ".meta.qkv", ad::layer_norm(point_embs));
    auto mixed = ad::attention(ad::slice_cols(qkv, 0, d), ad::slice_cols(qkv, d, d), ad::slice_cols(qkv, 2 * d, d),
                               cfg.num_heads);
    auto h = ad::add(point_embs, params.linear(tape, prefix + ".meta.out", mixed));
    auto raw = params.linear(tape, prefix + ".meta.head", h);
    return ad::add_scalar(ad::softplus(raw), Scalar(cfg.sigma_min));
}

template <typename Scalar>
Matrix<Scalar> rbf_prior(const Matrix<Scalar> &centers, const Matrix<Scalar> &extents, const Matrix<Scalar> &tokens)
{
    if (centers.cols() != 2 || extents.cols() != 2 || tokens.cols() != 2 || centers.rows() != extents.rows())
        throw ShapeError("rbf_prior: shape mismatch");
    Matrix<Scalar> out(centers.rows(), tokens.rows());
    for (Eigen::Index i = 0; i < centers.rows(); ++i) {
        const Scalar sx2 = extents(i, 0) * extents(i, 0);
        const Scalar sy2 = extents(i, 1) * extents(i, 1);
        for (Eigen::Index j = 0; j < tokens.rows(); ++j) {
            const Scalar dx = tokens(j, 0) - centers(i, 0);
            const Scalar dy = tokens(j, 1) - centers(i, 1);
            out(i, j) = std::exp(-dx * dx / sx2 - dy * dy / sy2);
        }
    }
    return out;
}

template <typename Scalar>
ad::Var<Scalar> local_attention(ad::Tape<Scalar> &tape, ParameterSet<Scalar> &params, const std::string &prefix,
                                const ModelConfig &cfg, ad::Var<Scalar> tokens, ad::Var<Scalar> point_embs,
                                const ad::Var<Scalar> *log_bias)
{
    const int d = cfg.hidden_dim;
    auto q = params.linear(tape, prefix + ".attn.q", tokens);
    auto kv = params.linear(tape, prefix + ".attn.kv", point_embs);
    auto mixed = ad::attention(q, ad::slice_cols(kv, 0, d), ad::slice_cols(kv, d, d), cfg.num_heads, log_bias);
    return params.linear(tape, prefix + ".attn.out", mixed);
}

template <typename Scalar>
ad::Var<Scalar> local_attention(ad::Tape<Scalar> &tape, ParameterSet<Scalar> &params, const std::string &prefix,
                                const ModelConfig &cfg, ad::Var<Scalar> tokens, ad::Var<Scalar> point_embs,
                                const Matrix<Scalar> &prior)
{
    if (prior.rows() != point_embs.rows() || prior.cols() != tokens.rows())
        throw ShapeError("local_attention: prior shape mismatch");
    Matrix<Scalar> bias = (prior.transpose().array() + Scalar(kPriorLogFloor)).log().matrix();
    auto b = tape.constant(std::move(bias));
    return local_attention(tape, params, prefix, cfg, tokens, point_embs, &b);
}

template <typename Scalar>
ad::Var<Scalar> ala_block(ad::Tape<Scalar> &tape, ParameterSet<Scalar> &params, const std::string &prefix,
                          const ModelConfig &cfg, ad::Var<Scalar> tokens, const PointSet &points,
                          ad::Var<Scalar> point_embs)
{
    if (points.empty()) return tape.constant(Matrix<Scalar>::Zero(tokens.rows(), tokens.cols()));
    if (point_embs.rows() != points.size()) throw ShapeError("ala_block: embeddings do not match points");
    auto sigmas = meta_rbf(tape, params, prefix, cfg, point_embs);
    auto bias = ad::rbf_log_bias(sigmas, point_centers<Scalar>(points), token_positions<Scalar>(static_cast<int>(tokens.rows()), cfg.tokens_per_side()),
                                 Scalar(kPriorLogFloor));
    return local_attention(tape, params, prefix, cfg, tokens, point_embs, &bias);
}

#define GEODIT_INSTANTIATE(S)                                                                                       \
    template Matrix<S> token_positions<S>(int, int);                                                                     \
    template Matrix<S> point_centers<S>(const PointSet &);                                                          \
    template void add_ala_parameters<S>(ParameterSet<S> &, const std::string &, const ModelConfig &);               \
    template ad::Var<S> meta_rbf<S>(ad::Tape<S> &, ParameterSet<S> &, const std::string &, const ModelConfig &,     \
                                    ad::Var<S>);                                                                    \
    template Matrix<S> rbf_prior<S>(const Matrix<S> &, const Matrix<S> &, const Matrix<S> &);                       \
    template ad::Var<S> local_attention<S>(ad::Tape<S> &, ParameterSet<S> &, const std::string &,                   \
                                           const ModelConfig &, ad::Var<S>, ad::Var<S>, const ad::Var<S> *);        \
    template ad::Var<S> local_attention<S>(ad::Tape<S> &, ParameterSet<S> &, const std::string &,                   \
                                           const ModelConfig &, ad::Var<S>, ad::Var<S>, const Matrix<S> &);         \
    template ad::Var<S> ala_block<S>(ad::Tape<S> &, ParameterSet<S> &, const std::string &, const ModelConfig &,    \
                                     ad::Var<S>, const PointSet &, ad::Var<S>);

GEODIT_INSTANTIATE(double)
GEODIT_INSTANTIATE(float)
#undef GEODIT_INSTANTIATE

} // namespace geodit
