#include "geodit/dit.hpp"

#include <doctest.h>

using namespace geodit;

namespace {

ModelConfig tiny()
{
    ModelConfig cfg;
    cfg.grid_size = 8;
    cfg.patch_size = 2;
    cfg.depth = 2;
    cfg.hidden_dim = 16;
    cfg.num_heads = 2;
    cfg.tag_vocab_size = 4;
    cfg.max_points = 6;
    cfg.align_block_index = 1;
    cfg.caption_vocab = 3;
    cfg.caption_len = 3;
    cfg.mlp_ratio = 2;
    cfg.freq_dim = 8;
    cfg.geo_frequencies = 4;
    cfg.feat_dim = 6;
    return cfg;
}

Image noise(const ModelConfig &cfg, std::uint64_t seed)
{
    Rng rng(seed);
    Image g(cfg.grid_size, cfg.grid_size, cfg.channels);
    for (Eigen::Index i = 0; i < g.pixels.size(); ++i) g.pixels.data()[i] = rng.normal();
    return g;
}

std::vector<SampleCondition> conditions(const ModelConfig &cfg)
{
    SampleCondition a, b, c;
    a.caption_id = 1;
    a.points = PointSet(cfg.max_points);
    a.points.points = {{0.5, 1.0, 2}, {3.2, 2.9, 0}, {1.0, 3.5, 3}};
    a.location = LatLon{45.0, 7.0};
    b.points = PointSet(cfg.max_points);
    b.caption_id = 2;
    c.points = PointSet(cfg.max_points);
    c.points.points = {{2.0, 2.0, 1}};
    return {a, b, c};
}

MatrixXd run(GeoDiT<double> &m, const std::vector<Image> &x, const std::vector<double> &t,
             const std::vector<SampleCondition> &c)
{
    ad::Tape<double> tape(false);
    return m.forward(tape, x, t, c).velocity.value();
}

} // namespace

TEST_CASE("patchify layout")
{
    ModelConfig cfg;
    Image x(16, 16, 3);
    for (Eigen::Index i = 0; i < x.pixels.size(); ++i) x.pixels.data()[i] = double(i);
    const auto p = patchify_pixels(x, 2);
    CHECK(p.rows() == 64);
    CHECK(p.cols() == 12);
    // token 9 is patch (row 1, col 1): pixel (2, 2) channel 0 comes first
    CHECK(p(9, 0) == x(2, 2, 0));
    CHECK(p(9, 3) == x(2, 3, 0));
    CHECK(p(9, 6) == x(3, 2, 0));
    CHECK(unpatchify_pixels<double>(p, 16, 16, 3, 2).pixels == x.pixels);
    CHECK_THROWS_AS(patchify_pixels(Image(15, 16, 3), 2), ShapeError);
}

TEST_CASE("identity patch projection round-trips the image")
{
    auto cfg = tiny();
    cfg.hidden_dim = cfg.patch_dim(); // 12
    cfg.num_heads = 2;
    GeoDiT<double> m(cfg, Stage::unconditional);
    m.params().value("patch.w") = MatrixXd::Identity(12, 12);
    m.params().value("patch.b").setZero();
    const auto x = noise(cfg, 1);
    ad::Tape<double> tape(false);
    const MatrixXd tokens = m.patchify(tape, {x}).value();
    const MatrixXd pos = grid_sincos2d<double>(cfg.tokens_per_side(), cfg.hidden_dim);
    const auto back = unpatchify_pixels<double>(tokens - pos, 8, 8, 3, 2);
    CHECK((back.pixels - x.pixels).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("swapping two patches swaps their projections")
{
    const auto cfg = tiny();
    GeoDiT<double> m(cfg, Stage::unconditional);
    auto x = noise(cfg, 2);
    auto y = x;
    for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx)
            for (int c = 0; c < 3; ++c) std::swap(y(dy, dx, c), y(4 + dy, 6 + dx, c));
    ad::Tape<double> tape(false);
    const MatrixXd pos = grid_sincos2d<double>(4, cfg.hidden_dim);
    const MatrixXd a = m.patchify(tape, {x}).value() - pos, b = m.patchify(tape, {y}).value() - pos;
    const int t0 = 0, t1 = 2 * 4 + 3;
    CHECK((a.row(t0) - b.row(t1)).cwiseAbs().maxCoeff() < 1e-14);
    CHECK((a.row(t1) - b.row(t0)).cwiseAbs().maxCoeff() < 1e-14);
    CHECK((a.row(5) - b.row(5)).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("desk configuration has 64 tokens")
{
    ModelConfig cfg;
    CHECK(cfg.num_tokens() == 64);
    GeoDiT<double> m(cfg, Stage::unconditional);
    ad::Tape<double> tape(false);
    CHECK(m.patchify(tape, {Image(16, 16, 3)}).rows() == 64);
}

TEST_CASE("freshly initialized model")
{
    const auto cfg = tiny();
    for (Stage s : {Stage::unconditional, Stage::text, Stage::points_geo}) {
        GeoDiT<double> m(cfg, s);
        auto conds = conditions(cfg);
        if (s == Stage::unconditional)
            for (auto &c : conds) c = SampleCondition{std::nullopt, PointSet(cfg.max_points), std::nullopt};
        if (s == Stage::text)
            for (auto &c : conds) c.points.points.clear(), c.location.reset();
        const std::vector<Image> x{noise(cfg, 3), noise(cfg, 4), noise(cfg, 5)};
        const std::vector<double> t{0.1, 0.5, 0.9};

        ad::Tape<double> tape(false);
        auto out = m.forward(tape, x, t, conds);
        CHECK(out.velocity.rows() == 3 * cfg.num_tokens());
        CHECK(out.velocity.value().cwiseAbs().maxCoeff() == 0.0);

        // every block is the identity at initialization
        MatrixXd tcol(3, 1);
        tcol << 0.1, 0.5, 0.9;
        auto bundle = m.encode(tape, tape.constant(tcol), conds);
        auto cond = m.conditioning_vector(tape, bundle);
        auto tokens = m.patchify(tape, x);
        auto after = m.dit_block(tape, 0, tokens, cond, bundle, conds);
        CHECK(after.value() == tokens.value());

        const auto v = m.velocity(x, t, conds);
        CHECK(v.size() == 3);
        CHECK(v[0].same_shape(x[0]));
    }
}

TEST_CASE("forward is deterministic and batch elements are independent")
{
    const auto cfg = tiny();
    GeoDiT<double> m(cfg, Stage::points_geo);
    m.randomize(3, 0.2);
    const auto conds = conditions(cfg);
    const std::vector<Image> x{noise(cfg, 6), noise(cfg, 7), noise(cfg, 8)};
    const std::vector<double> t{0.2, 0.6, 0.95};
    const MatrixXd a = run(m, x, t, conds), b = run(m, x, t, conds);
    CHECK(a == b);
    const int n = cfg.num_tokens();
    for (int i = 0; i < 3; ++i) {
        const MatrixXd single = run(m, {x[static_cast<std::size_t>(i)]}, {t[static_cast<std::size_t>(i)]},
                                    {conds[static_cast<std::size_t>(i)]});
        CHECK((single - a.middleRows(i * n, n)).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("caption pooled embedding is the token mean")
{
    const auto cfg = tiny();
    GeoDiT<double> m(cfg, Stage::text);
    m.randomize(4, 0.3);
    ad::Tape<double> tape(false);
    MatrixXd tcol(2, 1);
    tcol << 0.3, 0.7;
    const auto b = m.encode(tape, tape.constant(tcol), {SampleCondition{0, PointSet(6), {}}, SampleCondition{2, PointSet(6), {}}});
    const MatrixXd &tok = b.caption_tokens->value();
    const MatrixXd &pooled = b.caption_pooled->value();
    for (int s = 0; s < 2; ++s) {
        const RowVectorXd mean = tok.middleRows(s * cfg.caption_len, cfg.caption_len).colwise().mean();
        CHECK((pooled.row(s) - mean).cwiseAbs().maxCoeff() < 1e-15);
    }
}

TEST_CASE("later stages reproduce the earlier stage exactly before training")
{
    const auto cfg = tiny();
    GeoDiT<double> s1(cfg, Stage::unconditional);
    s1.randomize(11, 0.3);
    GeoDiT<double> s2(cfg, Stage::text);
    s2.load_arrays(s1.params());
    const std::vector<Image> x{noise(cfg, 9), noise(cfg, 10), noise(cfg, 11)};
    const std::vector<double> t{0.05, 0.4, 1.0};
    const auto conds = conditions(cfg);
    std::vector<SampleCondition> none(3, SampleCondition{std::nullopt, PointSet(cfg.max_points), std::nullopt});
    auto text_only = conds;
    for (auto &c : text_only) c.points.points.clear(), c.location.reset();
    CHECK(run(s2, x, t, text_only) == run(s1, x, t, none));
    CHECK(run(s2, x, t, none) == run(s1, x, t, none));

    s2.randomize(12, 0.3);
    GeoDiT<double> s3(cfg, Stage::points_geo);
    s3.load_arrays(s2.params());
    CHECK(run(s3, x, t, conds) == run(s2, x, t, text_only));

    // the alignment hidden state is also unchanged
    ad::Tape<double> ta(false), tb(false);
    CHECK(s3.forward(ta, x, t, conds).hidden.value() == s2.forward(tb, x, t, text_only).hidden.value());
}

TEST_CASE("loading arrays checks names and shapes")
{
    const auto cfg = tiny();
    GeoDiT<double> s3(cfg, Stage::points_geo);
    GeoDiT<double> s1(cfg, Stage::unconditional);
    CHECK_THROWS(s1.load_arrays(s3.params()));
    auto other = cfg;
    other.hidden_dim = 8;
    GeoDiT<double> narrow(other, Stage::unconditional);
    CHECK_THROWS(s1.load_arrays(narrow.params()));
}

TEST_CASE("spatial extents and evaluation counter")
{
    const auto cfg = tiny();
    GeoDiT<double> m(cfg, Stage::points_geo);
    m.randomize(5, 0.3);
    const auto conds = conditions(cfg);
    const auto ext = m.spatial_extents(1, conds[0].points);
    CHECK(ext.rows() == 3);
    CHECK(ext.cols() == 2);
    CHECK(ext.minCoeff() >= cfg.sigma_min);
    CHECK(m.spatial_extents(0, PointSet(6)).rows() == 0);
    CHECK_THROWS(m.spatial_extents(cfg.depth, conds[0].points));
    GeoDiT<double> s1(cfg, Stage::unconditional);
    CHECK_THROWS(s1.spatial_extents(0, conds[0].points));

    CHECK(m.evaluations() == 0);
    m.velocity({noise(cfg, 1), noise(cfg, 2)}, {0.5, 0.5}, {conds[0], conds[1]});
    CHECK(m.evaluations() == 2);
}

TEST_CASE("float instantiation tracks double")
{
    const auto cfg = tiny();
    GeoDiT<double> md(cfg, Stage::points_geo);
    md.randomize(6, 0.3);
    GeoDiT<float> mf(cfg, Stage::points_geo);
    for (const auto &name : md.params().names()) mf.params().value(name) = md.params().value(name).cast<float>();
    const auto conds = conditions(cfg);
    const auto xd = noise(cfg, 12);
    const auto vd = md.velocity({xd}, {0.5}, {conds[0]});
    const auto vf = mf.velocity({xd.cast<float>()}, {0.5f}, {conds[0]});
    CHECK((vd[0].pixels - vf[0].pixels.cast<double>()).cwiseAbs().maxCoeff() < 1e-3);
}

TEST_CASE("configuration invariants")
{
    auto cfg = tiny();
    CHECK_NOTHROW(cfg.validate());
    cfg.num_heads = 3;
    CHECK_THROWS(cfg.validate());
    cfg = tiny();
    cfg.hidden_dim = 18;
    cfg.num_heads = 2;
    CHECK_THROWS(cfg.validate());
    cfg = tiny();
    cfg.align_block_index = cfg.depth;
    CHECK_THROWS(cfg.validate());
    cfg = tiny();
    cfg.max_points = 0;
    CHECK_THROWS(cfg.validate());
    cfg = tiny();
    cfg.grid_size = 7;
    CHECK_THROWS(cfg.validate());
}
