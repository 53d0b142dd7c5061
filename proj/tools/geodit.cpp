#include "geodit/checkpoint.hpp"
#include "geodit/config.hpp"
#include "geodit/evaluation.hpp"
#include "geodit/gradcheck.hpp"
#include "geodit/io.hpp"
#include "geodit/metrics.hpp"
#include "geodit/sampler.hpp"
#include "geodit/trainer.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

using namespace geodit;
namespace fs = std::filesystem;

namespace {

std::map<std::string, int> vocabulary(const std::string &path)
{
    if (!path.empty()) return read_vocabulary(path);
    std::map<std::string, int> v;
    for (int k = 0; k < kNumTags; ++k) v[tag_names()[static_cast<std::size_t>(k)]] = k;
    return v;
}

int cmd_train(const std::string &stage, const std::string &config, const std::string &init_path,
              const std::string &out_dir, int log_every)
{
    const auto kv = config.empty() ? std::map<std::string, std::string>{} : read_key_value_file(config);
    auto train_cfg = TrainConfig::from_map(kv);
    train_cfg.stage = parse_stage(stage);
    const auto model_cfg = ModelConfig::from_map(kv);
    std::optional<Checkpoint> init;
    if (!init_path.empty()) init = load_checkpoint(init_path);
    RunOptions opts;
    opts.out_dir = out_dir;
    opts.on_step = [&](const LogRow &r) {
        if (log_every > 0 && (r.step % log_every == 0 || r.step == 1)) {
            std::printf("step %ld  v_loss %.5f  a_loss %.5f  cos %.4f\n", r.step, r.v_loss, r.a_loss, r.cos);
            std::fflush(stdout);
        }
    };
    run_stage(train_cfg, model_cfg, init, opts);
    std::printf("wrote %s\n", (opts.out_dir / "checkpoint.ckpt").c_str());
    return 0;
}

struct SampleArgs {
    std::string ckpt, points, vocab, out = "samples", integrator = "euler";
    int caption_id = -1, steps = 100, count = 1;
    double cfg = 0.0, lat = 0.0, lon = 0.0;
    bool has_location = false, dump_extents = false;
    std::uint64_t seed = 0;
};

SampleCondition condition_from(const SampleArgs &a, const GeoDiT<double> &model)
{
    SampleCondition c;
    c.points = PointSet(model.config().max_points);
    if (a.caption_id >= 0) c.caption_id = a.caption_id;
    if (!a.points.empty()) c.points = read_points(a.points, vocabulary(a.vocab), model.config().max_points);
    if (a.has_location) c.location = LatLon{a.lat, a.lon};
    if (model.stage() < Stage::text && c.caption_id) throw std::invalid_argument("checkpoint has no caption branch");
    if (model.stage() < Stage::points_geo && (!c.points.empty() || c.location))
        throw std::invalid_argument("checkpoint has no point or location branch");
    return c;
}

SamplerConfig sampler_from(const SampleArgs &a)
{
    SamplerConfig s;
    s.num_steps = a.steps;
    s.cfg_scale = a.cfg;
    s.seed = a.seed;
    if (a.integrator == "heun") s.integrator = Integrator::heun;
    else if (a.integrator != "euler") throw std::invalid_argument("integrator must be euler or heun");
    return s;
}

std::string describe(const SampleCondition &c, const SamplerConfig &s, const std::string &ckpt, int index)
{
    std::map<std::string, std::string> kv;
    kv["checkpoint"] = ckpt;
    kv["seed"] = std::to_string(s.seed);
    kv["sample_index"] = std::to_string(index);
    kv["steps"] = std::to_string(s.num_steps);
    kv["integrator"] = s.integrator == Integrator::euler ? "euler" : "heun";
    std::ostringstream num;
    num << s.cfg_scale;
    kv["cfg_scale"] = num.str();
    kv["caption_id"] = c.caption_id ? std::to_string(*c.caption_id) : "none";
    if (c.location) {
        std::ostringstream loc;
        loc.precision(17);
        loc << c.location->lat << ' ' << c.location->lon;
        kv["location"] = loc.str();
    } else {
        kv["location"] = "none";
    }
    kv["points"] = std::to_string(c.points.size());
    for (int i = 0; i < c.points.size(); ++i) {
        const auto &p = c.points.points[static_cast<std::size_t>(i)];
        std::ostringstream v;
        v << p.x << ' ' << p.y << ' ' << tag_names()[static_cast<std::size_t>(p.tag_id)];
        char key[32];
        std::snprintf(key, sizeof key, "point.%02d", i);
        kv[key] = v.str();
    }
    return format_key_values(kv);
}

void dump_extents(GeoDiT<double> &model, const PointSet &points, const fs::path &path)
{
    std::ostringstream os;
    os << "# tag x y sigma_x sigma_y\n";
    for (int b = 0; b < model.config().depth; ++b) {
        os << "# block " << b << '\n';
        if (points.empty()) continue;
        const auto ext = model.spatial_extents(b, points);
        for (int i = 0; i < points.size(); ++i) {
            const auto &p = points.points[static_cast<std::size_t>(i)];
            os << tag_names()[static_cast<std::size_t>(p.tag_id)] << ' ' << p.x << ' ' << p.y << ' ' << ext(i, 0) << ' '
               << ext(i, 1) << '\n';
        }
    }
    write_text(path, os.str());
}

int cmd_sample(const SampleArgs &a)
{
    const auto ckpt = load_checkpoint(a.ckpt);
    auto model = model_from_checkpoint<double>(ckpt);
    const auto cond = condition_from(a, model);
    const auto sampler = sampler_from(a);
    fs::create_directories(a.out);
    const std::vector<SampleCondition> conds(static_cast<std::size_t>(a.count), cond);
    const auto imgs = generate(model, conds, sampler);
    for (int i = 0; i < a.count; ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "sample_%04d", i);
        write_png(imgs[static_cast<std::size_t>(i)], fs::path(a.out) / (std::string(name) + ".png"));
        write_text(fs::path(a.out) / (std::string(name) + ".txt"), describe(cond, sampler, a.ckpt, i));
    }
    if (a.dump_extents) {
        if (model.stage() < Stage::points_geo) throw std::invalid_argument("--dump-extents needs a points checkpoint");
        dump_extents(model, cond.points, fs::path(a.out) / "extents.txt");
    }
    std::printf("wrote %d sample(s) to %s\n", a.count, a.out.c_str());
    return 0;
}

int cmd_inpaint(const SampleArgs &a, const std::string &image, const std::string &mask)
{
    const auto ckpt = load_checkpoint(a.ckpt);
    auto model = model_from_checkpoint<double>(ckpt);
    InpaintTask<double> task{read_png(image), read_mask_png(mask), condition_from(a, model)};
    const auto sampler = sampler_from(a);
    const auto out = inpaint(model, std::vector<InpaintTask<double>>{task}, sampler);
    fs::create_directories(a.out);
    write_png(out.front(), fs::path(a.out) / "inpainted.png");
    write_text(fs::path(a.out) / "inpainted.txt",
               describe(task.condition, sampler, a.ckpt, 0) + "image = " + image + "\nmask = " + mask + "\n");
    std::printf("wrote %s\n", (fs::path(a.out) / "inpainted.png").c_str());
    return 0;
}

int cmd_eval(const std::string &ckpt_path, const std::string &suite, int n, int steps, const std::string &out,
             std::uint64_t seed)
{
    const auto ckpt = load_checkpoint(ckpt_path);
    auto model = model_from_checkpoint<double>(ckpt);
    const auto &cfg = model.config();
    SamplerConfig sampler;
    sampler.num_steps = steps;
    sampler.seed = seed;
    const TargetEncoder<double> encoder(cfg);
    const auto examples = held_out_examples(cfg, model.stage(), n, 20, 50, seed);
    std::vector<Image> real;
    for (const auto &e : examples) real.push_back(e.tile.image);

    MetricsReport r;
    r.n_samples = n;
    std::vector<Image> fake;
    auto stats = fidelity_suite(model, examples, 2.0, sampler, &fake);
    r.ssim_mean = stats.ssim_mean;
    r.fidelity_mean = model.stage() == Stage::points_geo ? stats.fidelity_mean : 0.0;
    if (suite == "metrics" || suite == "detector") {
        r.fid = frechet_distance(pooled_features(real, encoder), pooled_features(fake, encoder));
    }
    if (suite == "detector") {
        DetectorOptions opt;
        opt.seed = seed;
        r.detector_f1_fake = train_detector(real, fake, opt).f1_fake;
    } else if (suite != "metrics" && suite != "fidelity") {
        throw std::invalid_argument("suite must be metrics, fidelity or detector");
    }
    const auto csv = format_report_csv({{suite, r}});
    if (out.empty()) std::cout << csv;
    else write_text(out, csv);
    return 0;
}

int cmd_gradcheck()
{
    int failures = 0;
    for (const auto &r : run_gradient_suite()) {
        const bool ok = r.rel_error < 1e-4;
        failures += !ok;
        std::printf("%-4s %-48s %6zu  rel_error %.3e\n", ok ? "ok" : "FAIL", r.name.c_str(), r.entries, r.rel_error);
    }
    std::printf("%s\n", failures ? "gradient check FAILED" : "all gradients match finite differences");
    return failures ? 1 : 0;
}

int cmd_dataset(const std::string &out, int count, std::uint64_t seed, int grid)
{
    fs::create_directories(out);
    write_text(fs::path(out) / "vocab.txt", format_vocabulary());
    for (int i = 0; i < count; ++i) {
        auto ex = stream_example(seed, 0, i, grid);
        char name[32];
        std::snprintf(name, sizeof name, "tile_%05d", i);
        dump_tile(ex.tile, fs::path(out) / name);
    }
    std::printf("wrote %d tiles to %s\n", count, out.c_str());
    return 0;
}

void add_condition_options(CLI::App *cmd, SampleArgs &a)
{
    cmd->add_option("--ckpt", a.ckpt, "checkpoint")->required();
    cmd->add_option("--points", a.points, "point file: 'x y tag_name' per line, token coordinates");
    cmd->add_option("--vocab", a.vocab, "vocabulary file: 'tag_id tag_name' per line (default: built-in tags)");
    cmd->add_option("--caption-id", a.caption_id, "template caption id");
    cmd->add_option("--lat", a.lat, "latitude in degrees");
    cmd->add_option("--lon", a.lon, "longitude in degrees");
    cmd->add_option("--out", a.out, "output directory")->capture_default_str();
    cmd->add_option("--steps", a.steps, "ODE steps")->capture_default_str();
    cmd->add_option("--cfg", a.cfg, "guidance scale")->capture_default_str();
    cmd->add_option("--integrator", a.integrator, "euler | heun")->capture_default_str();
    cmd->add_option("--seed", a.seed, "sampling seed")->capture_default_str();
}

} // namespace

int main(int argc, char **argv)
{
    CLI::App app{"Point-conditioned flow-matching transformer for synthetic map tiles"};
    app.require_subcommand(1);

    std::string stage, config, init, out = "run";
    int log_every = 100;
    auto *train = app.add_subcommand("train", "Train one stage");
    train->add_option("--stage", stage, "uncond | text | points")->required();
    train->add_option("--config", config, "key = value configuration file");
    train->add_option("--init", init, "checkpoint of the preceding stage");
    train->add_option("--out", out, "output directory")->capture_default_str();
    train->add_option("--log-every", log_every, "print every N steps")->capture_default_str();

    SampleArgs sa;
    auto *sample = app.add_subcommand("sample", "Generate tiles");
    add_condition_options(sample, sa);
    sample->add_option("--count", sa.count, "number of samples")->capture_default_str();
    sample->add_flag("--dump-extents", sa.dump_extents, "write per-point spatial extents of every block");

    SampleArgs ia;
    ia.out = "inpainted";
    std::string image, mask;
    auto *inp = app.add_subcommand("inpaint", "Regenerate the masked part of a tile");
    add_condition_options(inp, ia);
    inp->add_option("--image", image, "known tile (PNG)")->required();
    inp->add_option("--mask", mask, "mask PNG, bright = regenerate")->required();

    std::string eval_ckpt, suite, eval_out;
    int eval_n = 200, eval_steps = 100;
    std::uint64_t eval_seed = 2024;
    auto *eval = app.add_subcommand("eval", "Evaluate a checkpoint on held-out tiles");
    eval->add_option("--ckpt", eval_ckpt, "checkpoint")->required();
    eval->add_option("--suite", suite, "metrics | fidelity | detector")->required();
    eval->add_option("--n", eval_n, "number of held-out examples")->capture_default_str();
    eval->add_option("--steps", eval_steps, "ODE steps")->capture_default_str();
    eval->add_option("--seed", eval_seed, "held-out and sampling seed")->capture_default_str();
    eval->add_option("--out", eval_out, "CSV output path (default: stdout)");

    auto *grad = app.add_subcommand("gradcheck", "Compare every gradient with central finite differences");

    std::string data_out = "dataset";
    int data_n = 16, data_grid = 16;
    std::uint64_t data_seed = 1;
    auto *data = app.add_subcommand("dataset", "Write synthetic tiles with their labels and scene descriptions");
    data->add_option("--out", data_out, "output directory")->capture_default_str();
    data->add_option("--count", data_n, "number of tiles")->capture_default_str();
    data->add_option("--seed", data_seed, "data seed")->capture_default_str();
    data->add_option("--grid", data_grid, "tile side in pixels")->capture_default_str();

    CLI11_PARSE(app, argc, argv);
    sa.has_location = sample->count("--lat") > 0 || sample->count("--lon") > 0;
    ia.has_location = inp->count("--lat") > 0 || inp->count("--lon") > 0;
    try {
        if (*train) return cmd_train(stage, config, init, out, log_every);
        if (*sample) return cmd_sample(sa);
        if (*inp) return cmd_inpaint(ia, image, mask);
        if (*eval) return cmd_eval(eval_ckpt, suite, eval_n, eval_steps, eval_out, eval_seed);
        if (*grad) return cmd_gradcheck();
        if (*data) return cmd_dataset(data_out, data_n, data_seed, data_grid);
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
