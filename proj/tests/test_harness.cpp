#include "geodit/checkpoint.hpp"
#include "geodit/config.hpp"
#include "geodit/gradcheck.hpp"
#include "geodit/io.hpp"
#include "geodit/trainer.hpp"

#include <doctest.h>

#include <fstream>

using namespace geodit;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny()
{
    ModelConfig cfg;
    cfg.grid_size = 8;
    cfg.depth = 2;
    cfg.hidden_dim = 16;
    cfg.num_heads = 2;
    cfg.tag_vocab_size = 8;
    cfg.max_points = 6;
    cfg.align_block_index = 1;
    cfg.caption_vocab = 4;
    cfg.caption_len = 3;
    cfg.mlp_ratio = 2;
    cfg.freq_dim = 8;
    cfg.geo_frequencies = 4;
    cfg.feat_dim = 6;
    return cfg;
}

TrainConfig short_run(Stage stage, int steps = 6)
{
    TrainConfig t;
    t.stage = stage;
    t.steps = steps;
    t.batch_size = 2;
    t.learning_rate = 1e-3;
    t.point_max = 6;
    return t;
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string &name) : path(fs::temp_directory_path() / ("geodit_test_" + name))
    {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path &p)
{
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const fs::path &p, const std::string &s)
{
    std::ofstream out(p, std::ios::binary);
    out << s;
}

} // namespace

TEST_CASE("key = value parsing")
{
    const auto kv = parse_key_values("# comment\n  depth = 4  \nhidden_dim=32 # trailing\n\nstage = text\n");
    CHECK(kv.at("depth") == "4");
    CHECK(kv.at("hidden_dim") == "32");
    const auto mc = ModelConfig::from_map(kv);
    CHECK(mc.depth == 4);
    CHECK(mc.hidden_dim == 32);
    CHECK(ModelConfig::from_map(mc.to_map()) == mc);
    CHECK(TrainConfig::from_map(kv).stage == Stage::text);
    CHECK_THROWS(parse_key_values("no equals sign\n"));
    CHECK_THROWS(parse_key_values(" = 3\n"));
    CHECK_THROWS(ModelConfig::from_map({{"depth", "four"}}));
    CHECK_THROWS(TrainConfig::from_map({{"steps", "0"}}));
    CHECK(parse_stage("uncond") == Stage::unconditional);
    CHECK(parse_stage("points") == Stage::points_geo);
    CHECK_THROWS(parse_stage("video"));
    CHECK(parse_key_values(format_key_values({{"a", "1"}, {"b", "x y"}})) == std::map<std::string, std::string>{{"a", "1"}, {"b", "x y"}});
}

TEST_CASE("checkpoint round trip and errors")
{
    TempDir dir("ckpt");
    GeoDiT<double> model(tiny(), Stage::text);
    model.randomize(3, 0.5);
    auto ckpt = make_checkpoint(model, 17, {{"note", "hello"}});
    const auto path = dir.path / "a.ckpt";
    save_checkpoint(ckpt, path);
    const auto back = load_checkpoint(path);
    CHECK(back.version == kCheckpointVersion);
    CHECK(back.stage == Stage::text);
    CHECK(back.step == 17);
    CHECK(back.config == ckpt.config);
    CHECK(back.metadata.at("note") == "hello");
    REQUIRE(back.arrays.size() == ckpt.arrays.size());
    for (const auto &[name, a] : ckpt.arrays) CHECK(std::memcmp(a.data(), back.arrays.at(name).data(), sizeof(double) * a.size()) == 0);
    auto rebuilt = model_from_checkpoint<double>(back);
    CHECK(rebuilt.params().value("blocks.0.attn.qkv.w") == model.params().value("blocks.0.attn.qkv.w"));

    const std::string bytes = slurp(path);
    CHECK(bytes.substr(0, 8) == "GEODITCK");

    SUBCASE("truncated payload")
    {
        spit(dir.path / "t.ckpt", bytes.substr(0, bytes.size() - 8));
        CHECK_THROWS_AS(load_checkpoint(dir.path / "t.ckpt"), CheckpointError);
        try {
            load_checkpoint(dir.path / "t.ckpt");
        } catch (const CheckpointError &e) {
            CHECK(std::string(e.what()).find("payload") != std::string::npos);
        }
    }
    SUBCASE("unsupported version")
    {
        std::string v = bytes;
        v[8] = 9;
        spit(dir.path / "v.ckpt", v);
        try {
            load_checkpoint(dir.path / "v.ckpt");
            FAIL("accepted a bad version");
        } catch (const CheckpointError &e) {
            CHECK(std::string(e.what()).find("version") != std::string::npos);
        }
    }
    SUBCASE("bad magic")
    {
        std::string v = bytes;
        v[0] = 'X';
        spit(dir.path / "m.ckpt", v);
        CHECK_THROWS_AS(load_checkpoint(dir.path / "m.ckpt"), CheckpointError);
    }
    SUBCASE("missing and misshapen arrays")
    {
        auto missing = ckpt;
        missing.arrays.erase("blocks.1.xattn.out.w");
        try {
            save_checkpoint(missing, dir.path / "x.ckpt");
            FAIL("saved an incomplete checkpoint");
        } catch (const CheckpointError &e) {
            CHECK(std::string(e.what()).find("blocks.1.xattn.out.w") != std::string::npos);
        }
        auto wrong = ckpt;
        wrong.arrays.at("patch.w") = MatrixXd::Zero(3, 3);
        CHECK_THROWS_AS(validate_checkpoint(wrong), CheckpointError);
        auto extra = ckpt;
        extra.arrays["blocks.0.ala.attn.q.w"] = MatrixXd::Zero(16, 16);
        CHECK_THROWS_AS(validate_checkpoint(extra), CheckpointError);
    }
    CHECK_THROWS_AS(load_checkpoint(dir.path / "does_not_exist.ckpt"), CheckpointError);
}

TEST_CASE("training stages")
{
    TempDir dir("train");
    const auto mc = tiny();
    RunOptions opt;
    opt.out_dir = dir.path / "s1";
    const auto s1 = run_stage(short_run(Stage::unconditional), mc, std::nullopt, opt);
    CHECK(s1.step == 6);
    CHECK(fs::exists(opt.out_dir / "checkpoint.ckpt"));
    const auto log = read_training_log(opt.out_dir / "train_log.csv");
    REQUIRE(log.size() == 6);
    CHECK(log.front().step == 1);
    for (const auto &r : log) CHECK(std::isfinite(r.v_loss));
    CHECK(slurp(opt.out_dir / "train_log.csv").rfind("step,v_loss,a_loss,cos\n", 0) == 0);

    SUBCASE("same seed, same checkpoint")
    {
        RunOptions again;
        again.out_dir = dir.path / "s1b";
        const auto twin = run_stage(short_run(Stage::unconditional), mc, std::nullopt, again);
        for (const auto &[name, a] : s1.arrays) CHECK(a == twin.arrays.at(name));
        CHECK(slurp(opt.out_dir / "checkpoint.ckpt") == slurp(again.out_dir / "checkpoint.ckpt"));
    }

    SUBCASE("resuming from a snapshot reproduces the uninterrupted run")
    {
        RunOptions part;
        part.out_dir = dir.path / "resume";
        part.snapshot_every = 3;
        run_stage(short_run(Stage::unconditional, 3), mc, std::nullopt, part);
        fs::rename(part.out_dir / "checkpoint.ckpt", part.out_dir / "first_half.ckpt");
        // a longer run in the same directory must not reuse a snapshot of a different schedule
        const auto full = run_stage(short_run(Stage::unconditional), mc, std::nullopt, part);
        for (const auto &[name, a] : s1.arrays) CHECK(a == full.arrays.at(name));
    }

    SUBCASE("stage 2 carries stage 1 arrays and starts where it ended")
    {
        RunOptions o2;
        o2.out_dir = dir.path / "s2";
        auto zero = short_run(Stage::text, 1);
        zero.learning_rate = 1e-30;
        const auto s2 = run_stage(zero, mc, s1, o2);
        CHECK(s2.stage == Stage::text);
        auto m1 = model_from_checkpoint<double>(s1);
        GeoDiT<double> fresh(mc, Stage::text);
        fresh.load_arrays(m1.params());
        for (const auto &[name, a] : s1.arrays) CHECK(fresh.params().value(name) == a);
        CHECK(fresh.params().value("blocks.0.xattn.out.w").cwiseAbs().maxCoeff() == 0.0);
        CHECK(fresh.params().value("caption.pool_proj.w").cwiseAbs().maxCoeff() == 0.0);
        Rng rng(4);
        Image x(8, 8, 3);
        for (Eigen::Index i = 0; i < x.pixels.size(); ++i) x.pixels.data()[i] = rng.normal();
        const auto none = SampleCondition{std::nullopt, PointSet(mc.max_points), std::nullopt};
        CHECK(fresh.velocity({x}, {0.3}, {SampleCondition{2, PointSet(mc.max_points), {}}})[0].pixels ==
              m1.velocity({x}, {0.3}, {none})[0].pixels);
        CHECK(s2.metadata.at("init.step") == "6");
    }

    SUBCASE("stage order is enforced")
    {
        RunOptions o;
        o.out_dir = dir.path / "bad";
        CHECK_THROWS(run_stage(short_run(Stage::text), mc, std::nullopt, o));
        CHECK_THROWS(run_stage(short_run(Stage::points_geo), mc, s1, o));
        CHECK_THROWS(run_stage(short_run(Stage::unconditional), mc, s1, o));
        auto other = mc;
        other.depth = 3;
        CHECK_THROWS(run_stage(short_run(Stage::text), other, s1, o));
    }
}

TEST_CASE("training batches")
{
    const auto mc = tiny();
    auto cfg = short_run(Stage::points_geo);
    const auto a = make_training_batch(cfg, mc, 5), b = make_training_batch(cfg, mc, 5);
    REQUIRE(a.images.size() == 2);
    CHECK(a.images[0].pixels == b.images[0].pixels);
    CHECK(a.conditions[1].points.size() == b.conditions[1].points.size());

    // condition dropout frequency
    cfg.batch_size = 1;
    cfg.cond_dropout_prob = 0.1;
    int dropped = 0, total = 0;
    for (long step = 0; step < 3000; ++step) {
        const auto batch = make_training_batch(cfg, mc, step);
        dropped += !batch.conditions[0].caption_id.has_value();
        ++total;
    }
    CHECK(double(dropped) / total == doctest::Approx(0.1).epsilon(0.25));
}

TEST_CASE("png and byte mapping")
{
    CHECK(to_byte(-1.0) == 0);
    CHECK(to_byte(1.0) == 255);
    CHECK(to_byte(5.0) == 255);
    CHECK(to_byte(-3.0) == 0);
    // inputs whose scaled value is exactly k + 0.5 go to the even neighbor
    CHECK(to_byte(-0.8470588235294118) == 20); // 19.5
    CHECK(to_byte(-0.7450980392156863) == 32); // 32.5
    CHECK(to_byte(0.0) == 128);                // 127.5
    for (int b = 0; b < 256; ++b) CHECK(to_byte(from_byte(static_cast<std::uint8_t>(b))) == b);

    TempDir dir("png");
    Image img(5, 7, 3);
    Rng rng(1);
    for (Eigen::Index i = 0; i < img.pixels.size(); ++i) img.pixels.data()[i] = from_byte(static_cast<std::uint8_t>(rng.uniform_int(0, 255)));
    write_png(img, dir.path / "a.png");
    const auto back = read_png(dir.path / "a.png");
    CHECK(back.height == 5);
    CHECK(back.width == 7);
    CHECK(back.pixels == img.pixels);

    Mask m(4, 6);
    m.set(1, 2, true);
    m.set(3, 5, true);
    write_mask_png(m, dir.path / "m.png");
    const auto mb = read_mask_png(dir.path / "m.png");
    CHECK(mb.cells == m.cells);
    CHECK_THROWS(read_png(dir.path / "missing.png"));
}

TEST_CASE("point and vocabulary files")
{
    TempDir dir("points");
    write_text(dir.path / "vocab.txt", format_vocabulary());
    const auto vocab = read_vocabulary(dir.path / "vocab.txt");
    CHECK(vocab.at("building") == 0);
    CHECK(vocab.at("roof-gray") == 7);
    const auto ps = parse_points("# header\n1.5 2 water\n0 7.25 roof-red\n", vocab, 10);
    REQUIRE(ps.size() == 2);
    CHECK(ps.points[0].x == 1.5);
    CHECK(ps.points[0].tag_id == 2);
    CHECK(ps.points[1].y == 7.25);
    CHECK(ps.capacity == 10);
    CHECK(parse_points(format_points(ps), vocab, 10).points.size() == 2);
    CHECK_THROWS_AS(parse_points("1 1 lava\n", vocab, 10), DomainError);
    CHECK_THROWS(parse_points("1 water\n", vocab, 10));
    CHECK_THROWS(parse_points("1 1 water\n2 2 water\n", vocab, 1));
    write_text(dir.path / "dup.txt", "0 a\n1 a\n");
    CHECK_THROWS(read_vocabulary(dir.path / "dup.txt"));
}

TEST_CASE("dataset dump")
{
    TempDir dir("dump");
    const auto tile = generate_tile(3, 1);
    dump_tile(tile, dir.path / "t");
    CHECK(fs::exists(dir.path / "t" / "tile.png"));
    const auto scene = parse_key_values(read_text(dir.path / "t" / "scene.txt"));
    CHECK(scene.at("archetype") == "rural");
    CHECK(std::stoul(scene.at("annotations")) == tile.spec.annotations.size());
    const auto labels = read_text(dir.path / "t" / "labels.csv");
    CHECK(std::count(labels.begin(), labels.end(), '\n') == 16);
}

TEST_CASE("finite-difference checker")
{
    CHECK(relative_error(MatrixXd::Ones(2, 2), MatrixXd::Ones(2, 2)) == 0.0);
    CHECK(relative_error(MatrixXd::Zero(2, 2), MatrixXd::Zero(2, 2)) == 0.0);

    ParameterSet<double> p;
    p.create("w", 3, 2, Init::normal_1, 4);
    MatrixXd x(4, 3);
    x.setRandom();
    const auto results = check_parameter_gradients(p, [&](ad::Tape<double> &tape) {
        return ad::mean_all(ad::tanh(ad::matmul(tape.constant(x), p.var(tape, "w"))));
    });
    REQUIRE(results.size() == 1);
    CHECK(results[0].rel_error < 1e-8);

    // a deliberately wrong gradient is caught
    const auto wrong = check_input_gradient("x", x, [](ad::Tape<double> &, ad::Var<double> v) {
        return ad::mean_all(ad::detail::unary(v, [](double a) { return a * a; }, [](double a) { return a; }));
    });
    CHECK(wrong.rel_error > 0.1);
}
