#include "geodit/conditioning.hpp"

#include <doctest.h>

#include <cmath>

using namespace geodit;

namespace {

ModelConfig small_config()
{
    ModelConfig cfg;
    cfg.grid_size = 8;
    cfg.patch_size = 2;
    cfg.depth = 2;
    cfg.hidden_dim = 16;
    cfg.num_heads = 2;
    cfg.freq_dim = 16;
    cfg.geo_frequencies = 8;
    cfg.caption_len = 3;
    cfg.max_points = 5;
    cfg.align_block_index = 1;
    return cfg;
}

MatrixXd eval_points(ParameterSet<double> &p, const ModelConfig &cfg, const std::vector<PointQuery> &pts)
{
    ad::Tape<double> tape(false);
    return encode_points(tape, p, cfg, pts).value();
}

MatrixXd eval_geo(ParameterSet<double> &p, const ModelConfig &cfg, const MatrixXd &fourier,
                  const std::vector<std::optional<LatLon>> &locs)
{
    ad::Tape<double> tape(false);
    return embed_geolocation(tape, p, cfg, fourier, locs).value();
}

} // namespace

TEST_CASE("sincos2d values")
{
    const auto z = sincos2d<double>(0, 0, 8);
    RowVectorXd expect(8);
    expect << 0, 0, 1, 1, 0, 0, 1, 1;
    CHECK(z == expect);

    const auto one = sincos2d<double>(1, 0, 4);
    CHECK(one(0) == doctest::Approx(std::sin(1.0)));
    CHECK(one(1) == doctest::Approx(std::cos(1.0)));
    CHECK(one(0) == doctest::Approx(0.8415).epsilon(1e-4));
    CHECK(one(1) == doctest::Approx(0.5403).epsilon(1e-4));

    // x half does not depend on y
    const auto a = sincos2d<double>(2.5, 1.0, 16), b = sincos2d<double>(2.5, 7.0, 16);
    CHECK(a.head(8) == b.head(8));
    CHECK(a.tail(8) != b.tail(8));

    // frequency k of the x sines is 10000^(-4k/dim)
    const auto f = sincos2d<double>(3.0, 0.0, 16);
    for (int k = 0; k < 4; ++k) CHECK(f(k) == doctest::Approx(std::sin(3.0 * std::pow(10000.0, -4.0 * k / 16))));

    CHECK_THROWS(sincos2d<double>(0, 0, 6));
    CHECK_THROWS(sincos2d<double>(0, 0, 0));
}

TEST_CASE("timestep embedding")
{
    const auto cfg = small_config();
    ParameterSet<double> p;
    add_conditioning_parameters(p, cfg, Stage::unconditional);
    auto emb = [&](double t) {
        ad::Tape<double> tape(false);
        MatrixXd tv(1, 1);
        tv(0, 0) = t;
        return MatrixXd(embed_timestep(tape, p, cfg, tape.constant(tv)).value());
    };
    CHECK(emb(0.3) == emb(0.3));
    CHECK(emb(0.0).norm() != emb(1.0).norm());
    CHECK(emb(0.0).cols() == cfg.hidden_dim);
    CHECK_THROWS_AS(emb(1.01), DomainError);
    CHECK_THROWS_AS(emb(-0.5), DomainError);
}

TEST_CASE("point encoding fuses position and tag additively")
{
    const auto cfg = small_config();
    ParameterSet<double> p;
    add_conditioning_parameters(p, cfg, Stage::points_geo);
    const PointQuery a{1.5, 2.0, 0}, b{1.5, 2.0, 3}, c{3.0, 0.5, 0};
    const auto e = eval_points(p, cfg, {a, a, b, c});
    CHECK(e.row(0) == e.row(1));
    CHECK(e.row(0) != e.row(2));
    const MatrixXd &tags = p.value("points.tags");
    // subtracting the tag row leaves the same positional part
    const RowVectorXd pos_a = e.row(0) - tags.row(0), pos_b = e.row(2) - tags.row(3);
    CHECK((pos_a - pos_b).cwiseAbs().maxCoeff() < 1e-14);
    CHECK(e.row(0) != e.row(3));

    CHECK_THROWS_AS(eval_points(p, cfg, {{1.0, 1.0, cfg.tag_vocab_size}}), DomainError);
    CHECK_THROWS_AS(eval_points(p, cfg, {{1.0, 4.0, 0}}), DomainError);
    CHECK_THROWS(eval_points(p, cfg, {}));
}

TEST_CASE("geolocation embedding")
{
    auto cfg = small_config();
    ParameterSet<double> p;
    add_conditioning_parameters(p, cfg, Stage::points_geo);
    const auto fourier = geo_fourier_frequencies<double>(cfg);
    const auto e = eval_geo(p, cfg, fourier, {LatLon{0, 0}, LatLon{0, 0}, LatLon{10, -180}, LatLon{10, 180}});
    CHECK(e.row(0) == e.row(1));
    CHECK((e.row(2) - e.row(3)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK_THROWS_AS(eval_geo(p, cfg, fourier, {LatLon{91, 0}}), DomainError);
    CHECK_THROWS_AS(eval_geo(p, cfg, fourier, {LatLon{0, 181}}), DomainError);

    // a missing location uses the learned null row
    const auto mixed = eval_geo(p, cfg, fourier, {LatLon{0, 0}, std::nullopt});
    CHECK(mixed.row(0) == e.row(0));
    CHECK(mixed.row(1) == p.value("geo.null"));
}

TEST_CASE("geolocation embedding is locally smooth across seeds")
{
    int closer = 0;
    for (std::uint64_t s = 0; s < 100; ++s) {
        auto cfg = small_config();
        cfg.hidden_dim = 32;
        cfg.geo_frequencies = 64;
        cfg.init_seed = s;
        ParameterSet<double> p;
        add_conditioning_parameters(p, cfg, Stage::points_geo);
        const auto e =
            eval_geo(p, cfg, geo_fourier_frequencies<double>(cfg), {LatLon{0, 0}, LatLon{0, 0.1}, LatLon{0, 90}});
        closer += (e.row(0) - e.row(1)).norm() < (e.row(0) - e.row(2)).norm();
    }
    CHECK(closer >= 95);
}

TEST_CASE("caption tokens")
{
    const auto cfg = small_config();
    ParameterSet<double> p;
    add_conditioning_parameters(p, cfg, Stage::text);
    ad::Tape<double> tape(false);
    const MatrixXd tok = encode_caption_tokens(tape, p, cfg, {0, 1, std::nullopt}).value();
    CHECK(tok.rows() == 3 * cfg.caption_len);
    CHECK(tok.topRows(cfg.caption_len) != tok.middleRows(cfg.caption_len, cfg.caption_len));
    for (int id = 0; id < cfg.caption_vocab; ++id) {
        const MatrixXd one = encode_caption_tokens(tape, p, cfg, {id}).value();
        CHECK(one.rows() == cfg.caption_len);
    }
    CHECK_THROWS_AS(encode_caption_tokens(tape, p, cfg, {cfg.caption_vocab}), DomainError);
    CHECK_THROWS_AS(encode_caption_tokens(tape, p, cfg, {-1}), DomainError);
}

TEST_CASE("longitude wrap")
{
    CHECK(wrap_longitude(180.0) == doctest::Approx(-180.0));
    CHECK(wrap_longitude(-180.0) == doctest::Approx(-180.0));
    CHECK(wrap_longitude(190.0) == doctest::Approx(-170.0));
    CHECK(wrap_longitude(45.0) == doctest::Approx(45.0));
}
