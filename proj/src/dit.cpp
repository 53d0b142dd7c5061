#include "geodit/dit.hpp"

#include "geodit/ala.hpp"

namespace geodit {

template <typename Scalar>
Matrix<Scalar> patchify_pixels(const ImageGrid<Scalar> &x, int patch_size)
{
    if (patch_size <= 0 || x.height % patch_size != 0 || x.width % patch_size != 0)
        throw ShapeError("patchify: grid not divisible by patch size");
    const int th = x.height / patch_size, tw = x.width / patch_size;
    Matrix<Scalar> out(th * tw, patch_size * patch_size * x.channels);
    for (int ty = 0; ty < th; ++ty)
        for (int tx = 0; tx < tw; ++tx) {
            int col = 0;
            for (int py = 0; py < patch_size; ++py)
                for (int px = 0; px < patch_size; ++px)
                    for (int c = 0; c < x.channels; ++c)
                        out(ty * tw + tx, col++) = x(ty * patch_size + py, tx * patch_size + px, c);
        }
    return out;
}

template <typename Scalar>
ImageGrid<Scalar> unpatchify_pixels(const Matrix<Scalar> &patches, int height, int width, int channels,
                                    int patch_size)
{
    const int th = height / patch_size, tw = width / patch_size;
    if (height % patch_size != 0 || width % patch_size != 0 || patches.rows() != th * tw ||
        patches.cols() != patch_size * patch_size * channels)
        throw ShapeError("unpatchify: shape mismatch");
    ImageGrid<Scalar> out(height, width, channels);
    for (int ty = 0; ty < th; ++ty)
        for (int tx = 0; tx < tw; ++tx) {
            int col = 0;
            for (int py = 0; py < patch_size; ++py)
                for (int px = 0; px < patch_size; ++px)
                    for (int c = 0; c < channels; ++c)
                        out(ty * patch_size + py, tx * patch_size + px, c) = patches(ty * tw + tx, col++);
        }
    return out;
}

template <typename Scalar>
GeoDiT<Scalar>::GeoDiT(const ModelConfig &cfg, Stage stage) : cfg_(cfg), stage_(stage)
{
    cfg_.validate();
    const int d = cfg_.hidden_dim;
    const auto seed = cfg_.init_seed;
    params_.create_linear("patch", cfg_.patch_dim(), d, Init::xavier, seed);
    add_conditioning_parameters(params_, cfg_, stage_);
    for (int i = 0; i < cfg_.depth; ++i) {
        const auto b = block(i);
        params_.create_linear(b + ".ada", d, 6 * d, Init::zeros, seed);
        params_.create_linear(b + ".attn.qkv", d, 3 * d, Init::xavier, seed);
        params_.create_linear(b + ".attn.out", d, d, Init::xavier, seed);
        params_.create_linear(b + ".mlp.fc1", d, cfg_.mlp_ratio * d, Init::xavier, seed);
        params_.create_linear(b + ".mlp.fc2", cfg_.mlp_ratio * d, d, Init::xavier, seed);
        if (stage_ >= Stage::text) {
            params_.create_linear(b + ".xattn.q", d, d, Init::xavier, seed);
            params_.create_linear(b + ".xattn.kv", d, 2 * d, Init::xavier, seed);
            params_.create_linear(b + ".xattn.out", d, d, Init::zeros, seed);
        }
        if (stage_ >= Stage::points_geo) add_ala_parameters(params_, b + ".ala", cfg_);
    }
    params_.create_linear("final.ada", d, 2 * d, Init::zeros, seed);
    params_.create_linear("final.out", d, cfg_.patch_dim(), Init::zeros, seed);
    params_.create_linear("repa.proj", d, cfg_.feat_dim, Init::xavier, seed);
    if (stage_ >= Stage::points_geo) geo_fourier_ = geo_fourier_frequencies<Scalar>(cfg_);
    pos_embed_ = grid_sincos2d<Scalar>(cfg_.tokens_per_side(), d);
}

template <typename Scalar>
void GeoDiT<Scalar>::load_arrays(const ParameterSet<Scalar> &prior)
{
    for (const auto &[name, e] : prior.entries()) {
        if (!params_.contains(name)) throw std::invalid_argument("array '" + name + "' is not part of this model");
        auto &dst = params_.value(name);
        if (dst.rows() != e.value.rows() || dst.cols() != e.value.cols())
            throw ShapeError("array '" + name + "' has shape " + std::to_string(e.value.rows()) + "x" +
                             std::to_string(e.value.cols()) + ", expected " + std::to_string(dst.rows()) + "x" +
                             std::to_string(dst.cols()));
        dst = e.value;
    }
}

template <typename Scalar>
void GeoDiT<Scalar>::randomize(std::uint64_t seed, double stddev)
{
    for (auto &[name, e] : params_.entries()) {
        Rng rng(derive_seed(seed, hash_name(name)));
        for (Eigen::Index i = 0; i < e.value.size(); ++i) e.value.data()[i] = Scalar(rng.normal(0.0, stddev));
    }
}

template <typename Scalar>
ad::Var<Scalar> GeoDiT<Scalar>::patchify(ad::Tape<Scalar> &tape, const std::vector<ImageGrid<Scalar>> &x)
{
    const int n = cfg_.num_tokens();
    const auto batch = static_cast<Eigen::Index>(x.size());
    Matrix<Scalar> patches(batch * n, cfg_.patch_dim());
    for (Eigen::Index b = 0; b < batch; ++b) {
        const auto &img = x[static_cast<std::size_t>(b)];
        if (img.height != cfg_.grid_size || img.width != cfg_.grid_size || img.channels != cfg_.channels)
            throw ShapeError("patchify: image shape does not match the model configuration");
        patches.middleRows(b * n, n) = patchify_pixels(img, cfg_.patch_size);
    }
    auto tokens = params_.linear(tape, "patch", tape.constant(std::move(patches)));
    return ad::add(tokens, tape.constant(pos_embed_.replicate(batch, 1)));
}

template <typename Scalar>
ConditioningBundle<Scalar> GeoDiT<Scalar>::encode(ad::Tape<Scalar> &tape, ad::Var<Scalar> t,
                                                  const std::vector<SampleCondition> &conds)
{
    if (static_cast<std::size_t>(t.rows()) != conds.size()) throw ShapeError("encode: batch size mismatch");
    ConditioningBundle<Scalar> bundle;
    bundle.t_emb = embed_timestep(tape, params_, cfg_, t);
    if (stage_ >= Stage::text) {
        std::vector<std::optional<int>> ids;
        for (const auto &c : conds) ids.push_back(c.caption_id);
        auto tokens = encode_caption_tokens(tape, params_, cfg_, ids);
        bundle.caption_tokens = tokens;
        bundle.caption_pooled = ad::group_mean_rows(tokens, cfg_.caption_len);
    }
    if (stage_ >= Stage::points_geo) {
        std::vector<PointQuery> all;
        bundle.point_offsets.push_back(0);
        for (const auto &c : conds) {
            if (c.points.size() > cfg_.max_points) throw std::invalid_argument("encode: more points than max_points");
            all.insert(all.end(), c.points.points.begin(), c.points.points.end());
            bundle.point_offsets.push_back(static_cast<int>(all.size()));
        }
        if (!all.empty()) bundle.point_embs = encode_points(tape, params_, cfg_, all);
        std::vector<std::optional<LatLon>> locs;
        for (const auto &c : conds) locs.push_back(c.location);
        bundle.geo_emb = embed_geolocation(tape, params_, cfg_, geo_fourier_, locs);
    }
    return bundle;
}

template <typename Scalar>
ad::Var<Scalar> GeoDiT<Scalar>::conditioning_vector(ad::Tape<Scalar> &tape, const ConditioningBundle<Scalar> &bundle)
{
    auto c = bundle.t_emb;
    if (bundle.caption_pooled) c = ad::add(c, params_.linear(tape, "caption.pool_proj", *bundle.caption_pooled));
    if (bundle.geo_emb) c = ad::add(c, params_.linear(tape, "geo.proj", *bundle.geo_emb));
    return c;
}

namespace {

template <typename Scalar>
ad::Var<Scalar> modulate(ad::Var<Scalar> x, ad::Var<Scalar> shift, ad::Var<Scalar> scale, int n)
{
    return ad::group_add(ad::group_mul(ad::layer_norm(x), ad::add_scalar(scale, Scalar(1)), n), shift, n);
}

} // namespace

template <typename Scalar>
ad::Var<Scalar> GeoDiT<Scalar>::dit_block(ad::Tape<Scalar> &tape, int index, ad::Var<Scalar> x, ad::Var<Scalar> cond,
                                          const ConditioningBundle<Scalar> &bundle,
                                          const std::vector<SampleCondition> &conds)
{
    const auto b = block(index);
    const int d = cfg_.hidden_dim, n = cfg_.num_tokens(), batch = static_cast<int>(conds.size());
    if (x.rows() != static_cast<Eigen::Index>(batch) * n) throw ShapeError("dit_block: token count mismatch");
    if (stage_ >= Stage::text && !bundle.caption_tokens) throw std::invalid_argument("dit_block: caption missing");

    auto mod = params_.linear(tape, b + ".ada", ad::silu(cond));
    auto chunk = [&](int k) { return ad::slice_cols(mod, k * d, d); };

    // Self-attention.
    auto qkv = params_.linear(tape, b + ".attn.qkv", modulate(x, chunk(0), chunk(1), n));
    std::vector<ad::Var<Scalar>> heads;
    for (int s = 0; s < batch; ++s) {
        auto rows = ad::slice_rows(qkv, s * n, n);
        heads.push_back(ad::attention(ad::slice_cols(rows, 0, d), ad::slice_cols(rows, d, d),
                                      ad::slice_cols(rows, 2 * d, d), cfg_.num_heads));
    }
    auto attn = params_.linear(tape, b + ".attn.out", ad::concat_rows(heads));
    x = ad::add(x, ad::group_mul(attn, chunk(2), n));

    // Caption cross-attention.
    if (stage_ >= Stage::text) {
        const int len = cfg_.caption_len;
        auto q = params_.linear(tape, b + ".xattn.q", ad::layer_norm(x));
        auto kv = params_.linear(tape, b + ".xattn.kv", *bundle.caption_tokens);
        std::vector<ad::Var<Scalar>> outs;
        for (int s = 0; s < batch; ++s) {
            auto kvs = ad::slice_rows(kv, s * len, len);
            outs.push_back(ad::attention(ad::slice_rows(q, s * n, n), ad::slice_cols(kvs, 0, d),
                                         ad::slice_cols(kvs, d, d), cfg_.num_heads));
        }
        x = ad::add(x, params_.linear(tape, b + ".xattn.out", ad::concat_rows(outs)));
    }

    // Adaptive local attention to point prompts.
    if (stage_ >= Stage::points_geo && bundle.point_embs) {
        auto normed = ad::layer_norm(x);
        std::vector<ad::Var<Scalar>> deltas;
        for (int s = 0; s < batch; ++s) {
            const auto &pts = conds[static_cast<std::size_t>(s)].points;
            auto rows = ad::slice_rows(normed, s * n, n);
            if (pts.empty()) {
                deltas.push_back(tape.constant(Matrix<Scalar>::Zero(n, d)));
                continue;
            }
            const int off = bundle.point_offsets[static_cast<std::size_t>(s)];
            deltas.push_back(
                ala_block(tape, params_, b + ".ala", cfg_, rows, pts, ad::slice_rows(*bundle.point_embs, off, pts.size())));
        }
        x = ad::add(x, ad::concat_rows(deltas));
    }

    // Feed-forward.
    auto hidden = ad::gelu(params_.linear(tape, b + ".mlp.fc1", modulate(x, chunk(3), chunk(4), n)));
    auto mlp = params_.linear(tape, b + ".mlp.fc2", hidden);
    return ad::add(x, ad::group_mul(mlp, chunk(5), n));
}

template <typename Scalar>
ForwardOutput<Scalar> GeoDiT<Scalar>::forward(ad::Tape<Scalar> &tape, const std::vector<ImageGrid<Scalar>> &x_t,
                                              const std::vector<Scalar> &t, const std::vector<SampleCondition> &conds)
{
    if (x_t.empty() || x_t.size() != t.size() || x_t.size() != conds.size())
        throw ShapeError("forward: batch sizes differ");
    const int n = cfg_.num_tokens(), d = cfg_.hidden_dim;
    Matrix<Scalar> tcol(static_cast<Eigen::Index>(t.size()), 1);
    for (std::size_t i = 0; i < t.size(); ++i) tcol(static_cast<Eigen::Index>(i), 0) = t[i];
    auto bundle = encode(tape, tape.constant(std::move(tcol)), conds);
    auto cond = conditioning_vector(tape, bundle);

    auto x = patchify(tape, x_t);
    ad::Var<Scalar> hidden = x;
    for (int i = 0; i < cfg_.depth; ++i) {
        x = dit_block(tape, i, x, cond, bundle, conds);
        if (i == cfg_.align_block_index) hidden = x;
    }
    auto mod = params_.linear(tape, "final.ada", ad::silu(cond));
    auto h = modulate(x, ad::slice_cols(mod, 0, d), ad::slice_cols(mod, d, d), n);
    evaluations_ += static_cast<long>(x_t.size());
    return {params_.linear(tape, "final.out", h), hidden};
}

template <typename Scalar>
std::vector<ImageGrid<Scalar>> GeoDiT<Scalar>::velocity(const std::vector<ImageGrid<Scalar>> &x_t,
                                                        const std::vector<Scalar> &t,
                                                        const std::vector<SampleCondition> &conds)
{
    ad::Tape<Scalar> tape(false);
    auto out = forward(tape, x_t, t, conds);
    const int n = cfg_.num_tokens();
    std::vector<ImageGrid<Scalar>> result;
    result.reserve(x_t.size());
    for (std::size_t b = 0; b < x_t.size(); ++b)
        result.push_back(unpatchify_pixels<Scalar>(out.velocity.value().middleRows(static_cast<Eigen::Index>(b) * n, n),
                                                   cfg_.grid_size, cfg_.grid_size, cfg_.channels, cfg_.patch_size));
    return result;
}

template <typename Scalar>
Matrix<Scalar> GeoDiT<Scalar>::spatial_extents(int index, const PointSet &points)
{
    if (stage_ < Stage::points_geo) throw std::logic_error("spatial_extents: model has no point branch");
    if (index < 0 || index >= cfg_.depth) throw std::out_of_range("spatial_extents: block index");
    if (points.empty()) return Matrix<Scalar>(0, 2);
    ad::Tape<Scalar> tape(false);
    auto embs = encode_points(tape, params_, cfg_, points.points);
    return meta_rbf(tape, params_, block(index) + ".ala", cfg_, embs).value();
}

template Matrix<double> patchify_pixels<double>(const ImageGrid<double> &, int);
template Matrix<float> patchify_pixels<float>(const ImageGrid<float> &, int);
template ImageGrid<double> unpatchify_pixels<double>(const Matrix<double> &, int, int, int, int);
template ImageGrid<float> unpatchify_pixels<float>(const Matrix<float> &, int, int, int, int);
template class GeoDiT<double>;
template class GeoDiT<float>;

} // namespace geodit
