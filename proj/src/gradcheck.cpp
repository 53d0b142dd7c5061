#include "geodit/gradcheck.hpp"

#include "geodit/ala.hpp"
#include "geodit/conditioning.hpp"
#include "geodit/dit.hpp"
#include "geodit/flow.hpp"
#include "geodit/repa.hpp"

namespace geodit {

double relative_error(const MatrixXd &analytic, const MatrixXd &numeric)
{
    return (analytic - numeric).norm() / std::max(analytic.norm() + numeric.norm(), 1e-30);
}

std::vector<GradCheckResult> check_parameter_gradients(ParameterSet<double> &params, const LossBuilder &loss,
                                                       double step, const std::vector<std::string> &names)
{
    params.zero_grad();
    {
        ad::Tape<double> tape;
        auto l = loss(tape);
        tape.backward(l);
    }
    auto eval = [&] {
        ad::Tape<double> tape(false);
        return loss(tape).scalar();
    };
    std::vector<GradCheckResult> out;
    for (const auto &name : names.empty() ? params.names() : names) {
        const MatrixXd analytic = params.grad_or_zero(name);
        auto &w = params.value(name);
        MatrixXd numeric(w.rows(), w.cols());
        for (Eigen::Index i = 0; i < w.size(); ++i) {
            const double keep = w.data()[i];
            w.data()[i] = keep + step;
            const double up = eval();
            w.data()[i] = keep - step;
            const double down = eval();
            w.data()[i] = keep;
            numeric.data()[i] = (up - down) / (2.0 * step);
        }
        out.push_back({name, relative_error(analytic, numeric), static_cast<std::size_t>(w.size())});
    }
    params.zero_grad();
    return out;
}

GradCheckResult check_input_gradient(const std::string &name, MatrixXd x,
                                     const std::function<ad::Var<double>(ad::Tape<double> &, ad::Var<double>)> &loss,
                                     double step)
{
    MatrixXd analytic;
    {
        ad::Tape<double> tape;
        auto xv = tape.input(x);
        tape.backward(loss(tape, xv));
        analytic = tape.gradient(xv);
    }
    MatrixXd numeric(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double keep = x.data()[i];
        double v[2];
        for (int s = 0; s < 2; ++s) {
            x.data()[i] = keep + (s == 0 ? step : -step);
            ad::Tape<double> tape(false);
            v[s] = loss(tape, tape.constant(x)).scalar();
        }
        x.data()[i] = keep;
        numeric.data()[i] = (v[0] - v[1]) / (2.0 * step);
    }
    return {name, relative_error(analytic, numeric), static_cast<std::size_t>(x.size())};
}

namespace {

MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, Rng &rng, double scale = 1.0)
{
    MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal(0.0, scale);
    return m;
}

/// Generic scalar readout sum(out * R) so that every output entry matters.
ad::Var<double> readout(ad::Var<double> out, const MatrixXd &r)
{
    auto &t = *out.tape;
    return ad::mean_all(ad::mul(out, t.constant(r)));
}

void randomize(ParameterSet<double> &params, Rng &rng, double scale)
{
    for (auto &[name, e] : params.entries())
        for (Eigen::Index i = 0; i < e.value.size(); ++i) e.value.data()[i] = rng.normal(0.0, scale);
}

void append(std::vector<GradCheckResult> &all, const std::string &prefix, std::vector<GradCheckResult> part)
{
    for (auto &r : part) {
        r.name = prefix + ": " + r.name;
        all.push_back(std::move(r));
    }
}

ModelConfig tiny_config()
{
    ModelConfig cfg;
    cfg.grid_size = 8;
    cfg.patch_size = 2;
    cfg.channels = 3;
    cfg.depth = 2;
    cfg.hidden_dim = 16;
    cfg.num_heads = 2;
    cfg.tag_vocab_size = 4;
    cfg.max_points = 5;
    cfg.align_block_index = 1;
    cfg.caption_vocab = 3;
    cfg.caption_len = 3;
    cfg.mlp_ratio = 2;
    cfg.freq_dim = 8;
    cfg.geo_frequencies = 4;
    cfg.feat_dim = 6;
    return cfg;
}

PointSet random_points(int n, int side, int tags, Rng &rng, int capacity)
{
    PointSet p(capacity);
    for (int i = 0; i < n; ++i) p.points.push_back({rng.uniform(0.0, side - 0.01), rng.uniform(0.0, side - 0.01), rng.uniform_int(0, tags - 1)});
    return p;
}

} // namespace

std::vector<GradCheckResult> run_gradient_suite(std::uint64_t seed)
{
    std::vector<GradCheckResult> all;
    Rng rng(seed);
    const auto cfg = tiny_config();
    const int d = cfg.hidden_dim;

    // Conditioning encoders.
    {
        ParameterSet<double> params;
        add_conditioning_parameters(params, cfg, Stage::points_geo);
        randomize(params, rng, 0.3);
        const auto fourier = geo_fourier_frequencies<double>(cfg);
        const MatrixXd t = (MatrixXd(3, 1) << 0.1, 0.55, 0.93).finished();
        const auto pts = random_points(3, cfg.tokens_per_side(), cfg.tag_vocab_size, rng, cfg.max_points).points;
        const MatrixXd r3 = random_matrix(3, d, rng), r9 = random_matrix(9, d, rng);
        append(all, "timestep", check_parameter_gradients(params, [&](ad::Tape<double> &tp) {
                   return readout(embed_timestep(tp, params, cfg, tp.constant(t)), r3);
               }, 1e-6, {"t_embed.fc1.w", "t_embed.fc1.b", "t_embed.fc2.w", "t_embed.fc2.b"}));
        all.push_back(check_input_gradient("timestep: d/dt", t, [&](ad::Tape<double> &tp, ad::Var<double> tv) {
            return readout(embed_timestep(tp, params, cfg, tv), r3);
        }));
        append(all, "points", check_parameter_gradients(params, [&](ad::Tape<double> &tp) {
                   return readout(encode_points(tp, params, cfg, pts), r3);
               }, 1e-6, {"points.fc1.w", "points.fc1.b", "points.fc2.w", "points.fc2.b", "points.tags"}));
        const std::vector<std::optional<LatLon>> locs = {LatLon{12.0, -40.0}, std::nullopt, LatLon{-70.0, 179.0}};
        append(all, "geolocation", check_parameter_gradients(params, [&](ad::Tape<double> &tp) {
                   return readout(embed_geolocation(tp, params, cfg, fourier, locs), r3);
               }, 1e-6, {"geo.fc1.w", "geo.fc1.b", "geo.fc2.w", "geo.fc2.b", "geo.null"}));
        const std::vector<std::optional<int>> ids = {0, std::nullopt, 2};
        append(all, "caption", check_parameter_gradients(params, [&](ad::Tape<double> &tp) {
                   auto tokens = encode_caption_tokens(tp, params, cfg, ids);
                   return ad::add(readout(tokens, r9), readout(ad::group_mean_rows(tokens, cfg.caption_len), r3));
               }, 1e-6, {"caption.codebook"}));
    }

    // Adaptive local attention: 8 tokens on a 4-wide grid, 3 points.
    {
        ParameterSet<double> params;
        add_ala_parameters(params, "ala", cfg);
        randomize(params, rng, 0.3);
        auto ala_cfg = cfg;
        ala_cfg.grid_size = 8; // 4 tokens per side
        const auto points = random_points(3, 2, cfg.tag_vocab_size, rng, cfg.max_points);
        const MatrixXd tokens = random_matrix(8, d, rng), embs = random_matrix(3, d, rng);
        const MatrixXd r = random_matrix(8, d, rng), rs = random_matrix(3, 2, rng);
        append(all, "meta_rbf", check_parameter_gradients(params, [&](ad::Tape<double> &tp) {
                   return readout(meta_rbf(tp, params, "ala", ala_cfg, tp.constant(embs)), rs);
               }, 1e-6, {"ala.meta.qkv.w", "ala.meta.qkv.b", "ala.meta.out.w", "ala.meta.out.b", "ala.meta.head.w", "ala.meta.head.b"}));
        all.push_back(check_input_gradient("meta_rbf: point_embs", embs, [&](ad::Tape<double> &tp, ad::Var<double> e) {
            return readout(meta_rbf(tp, params, "ala", ala_cfg, e), rs);
        }));
        MatrixXd prior = rbf_prior<double>(point_centers<double>(points), MatrixXd::Constant(3, 2, 1.3),
                                           token_positions<double>(8, ala_cfg.tokens_per_side()));
        append(all, "local_attention", check_parameter_gradients(params, [&](ad::Tape<double> &tp) {
                   return readout(local_attention(tp, params, "ala", ala_cfg, tp.constant(tokens), tp.constant(embs), prior), r);
               }, 1e-6, {"ala.attn.q.w", "ala.attn.q.b", "ala.attn.kv.w", "ala.attn.kv.b", "ala.attn.out.w", "ala.attn.out.b"}));
        append(all, "ala_block", check_parameter_gradients(params, [&](ad::Tape<double> &tp) {
                   return readout(ala_block(tp, params, "ala", ala_cfg, tp.constant(tokens), points, tp.constant(embs)), r);
               }));
        all.push_back(check_input_gradient("ala_block: tokens", tokens, [&](ad::Tape<double> &tp, ad::Var<double> x) {
            return readout(ala_block(tp, params, "ala", ala_cfg, x, points, tp.constant(embs)), r);
        }));
        all.push_back(check_input_gradient("ala_block: point_embs", embs, [&](ad::Tape<double> &tp, ad::Var<double> e) {
            return readout(ala_block(tp, params, "ala", ala_cfg, tp.constant(tokens), points, e), r);
        }));
    }

    // One DiT block and the full objective, stage 3, all parameters randomized.
    {
        GeoDiT<double> model(cfg, Stage::points_geo);
        model.randomize(derive_seed(seed, 11), 0.2);
        const int n = cfg.num_tokens(), batch = 2;
        std::vector<SampleCondition> conds(batch);
        conds[0].caption_id = 1;
        conds[0].points = random_points(3, cfg.tokens_per_side(), cfg.tag_vocab_size, rng, cfg.max_points);
        conds[0].location = LatLon{30.0, 60.0};
        conds[1].points = random_points(2, cfg.tokens_per_side(), cfg.tag_vocab_size, rng, cfg.max_points);
        const MatrixXd x0 = random_matrix(batch * n, d, rng);
        const MatrixXd r = random_matrix(batch * n, d, rng);
        const std::vector<double> t = {0.3, 0.8};
        MatrixXd tcol(2, 1);
        tcol << 0.3, 0.8;
        auto &params = model.params();
        std::vector<std::string> block_names;
        for (const auto &name : params.names())
            if (name.rfind("blocks.0.", 0) == 0) block_names.push_back(name);
        auto block_loss = [&](ad::Tape<double> &tp, ad::Var<double> x) {
            auto bundle = model.encode(tp, tp.constant(tcol), conds);
            auto cond = model.conditioning_vector(tp, bundle);
            return readout(model.dit_block(tp, 0, x, cond, bundle, conds), r);
        };
        append(all, "dit_block", check_parameter_gradients(params, [&](ad::Tape<double> &tp) {
                   return block_loss(tp, tp.constant(x0));
               }, 1e-6, block_names));
        all.push_back(check_input_gradient("dit_block: tokens", x0, block_loss));

        std::vector<Image> xs;
        for (int b = 0; b < batch; ++b) {
            Image img(cfg.grid_size, cfg.grid_size, cfg.channels);
            img.pixels = random_matrix(img.pixels.rows(), img.pixels.cols(), rng);
            xs.push_back(img);
        }
        const MatrixXd v_target = random_matrix(batch * n, cfg.patch_dim(), rng);
        const TargetEncoder<double> enc(cfg);
        const MatrixXd feats = target_features(xs, enc);
        append(all, "objective", check_parameter_gradients(params, [&](ad::Tape<double> &tp) {
                   auto out = model.forward(tp, xs, t, conds);
                   auto v = ad::mse(out.velocity, v_target);
                   auto a = alignment_loss(tp, params, out.hidden, feats);
                   return total_loss(v, a, 0.5);
               }));
    }
    return all;
}

} // namespace geodit
