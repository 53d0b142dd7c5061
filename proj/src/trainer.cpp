#include "geodit/trainer.hpp"

#include "geodit/flow.hpp"
#include "geodit/repa.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <sstream>

namespace geodit {

SampleCondition tile_condition(const AnnotatedTile &tile, Stage stage, const ModelConfig &model_cfg,
                               std::uint64_t point_seed, int point_min, int point_max)
{
    SampleCondition c;
    c.points = PointSet(model_cfg.max_points);
    if (stage >= Stage::text) c.caption_id = tile.spec.archetype_id;
    if (stage >= Stage::points_geo) {
        if (tile.annotated_cells() > 0) {
            Rng rng(point_seed);
            c.points = sample_point_prompts(tile, rng, point_min, point_max, model_cfg.patch_size, model_cfg.max_points);
        }
        c.location = tile.spec.latlon;
    }
    return c;
}

TrainingBatch make_training_batch(const TrainConfig &cfg, const ModelConfig &model_cfg, long step)
{
    TrainingBatch batch;
    Rng drop(derive_seed(cfg.seed, static_cast<std::uint64_t>(step), hash_name("dropout")));
    for (int b = 0; b < cfg.batch_size; ++b) {
        auto ex = stream_example(cfg.data_seed, step, b, model_cfg.grid_size);
        auto cond = tile_condition(ex.tile, cfg.stage, model_cfg, ex.point_seed, cfg.point_min, cfg.point_max);
        // Always three draws per example so the stream does not depend on stage.
        const bool drop_caption = drop.bernoulli(cfg.cond_dropout_prob);
        const bool drop_points = drop.bernoulli(cfg.cond_dropout_prob);
        const bool drop_location = drop.bernoulli(cfg.cond_dropout_prob);
        if (drop_caption) cond.caption_id.reset();
        if (drop_points) cond.points.points.clear();
        if (drop_location) cond.location.reset();
        batch.images.push_back(std::move(ex.tile.image));
        batch.conditions.push_back(std::move(cond));
    }
    return batch;
}

namespace {

using nlohmann::json;

std::map<std::string, std::string> run_metadata(const TrainConfig &cfg, const std::optional<Checkpoint> &init)
{
    std::map<std::string, std::string> meta;
    for (const auto &[k, v] : cfg.to_map()) meta["train." + k] = v;
    meta["init.step"] = init ? std::to_string(init->step) : "none";
    return meta;
}

void write_log(const std::filesystem::path &path, const std::vector<LogRow> &rows)
{
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "step,v_loss,a_loss,cos\n";
    out.precision(17);
    for (const auto &r : rows) out << r.step << ',' << r.v_loss << ',' << r.a_loss << ',' << r.cos << '\n';
}

void save_snapshot(const std::filesystem::path &dir, const GeoDiT<double> &model, const AdamW<double> &opt, long step,
                   const std::map<std::string, std::string> &meta, const std::vector<LogRow> &log)
{
    std::map<std::string, MatrixXd> moments;
    for (const auto &[name, s] : opt.state()) {
        moments.emplace("m." + name, s.m);
        moments.emplace("v." + name, s.v);
    }
    save_array_file(dir / "snapshot.optim", json{{"adam_steps", opt.steps()}, {"step", step}}.dump(), moments);
    save_checkpoint(make_checkpoint(model, step, meta), dir / "snapshot.ckpt");
    write_log(dir / "train_log.csv", log);
}

/// Returns the snapshot step, or 0 when nothing usable exists.
long try_resume(const std::filesystem::path &dir, GeoDiT<double> &model, AdamW<double> &opt,
                const std::map<std::string, std::string> &meta, std::vector<LogRow> &log)
{
    const auto ckpt_path = dir / "snapshot.ckpt", optim_path = dir / "snapshot.optim";
    if (!std::filesystem::exists(ckpt_path) || !std::filesystem::exists(optim_path)) return 0;
    Checkpoint snap;
    try {
        snap = load_checkpoint(ckpt_path);
    } catch (const CheckpointError &) {
        return 0;
    }
    if (snap.config != model.config() || snap.stage != model.stage() || snap.metadata != meta) return 0;
    std::string header;
    auto moments = load_array_file(optim_path, &header);
    const auto h = json::parse(header);
    if (h.at("step").get<long>() != snap.step) return 0;
    auto rows = read_training_log(dir / "train_log.csv");
    if (static_cast<long>(rows.size()) < snap.step) return 0;
    rows.resize(static_cast<std::size_t>(snap.step));

    std::map<std::string, AdamW<double>::State> state;
    for (auto &[key, m] : moments) {
        const auto name = key.substr(2);
        (key[0] == 'm' ? state[name].m : state[name].v) = std::move(m);
    }
    for (const auto &[name, a] : snap.arrays) model.params().value(name) = a;
    opt.restore(h.at("adam_steps").get<long>(), std::move(state));
    log = std::move(rows);
    return snap.step;
}

} // namespace

Checkpoint run_stage(const TrainConfig &cfg, const ModelConfig &model_cfg, const std::optional<Checkpoint> &init,
                     const RunOptions &options)
{
    cfg.validate();
    model_cfg.validate();
    if (cfg.stage == Stage::unconditional && init)
        throw std::invalid_argument("stage order: the unconditional stage starts from scratch");
    if (cfg.stage != Stage::unconditional) {
        if (!init) throw std::invalid_argument("stage order: " + to_string(cfg.stage) + " needs a checkpoint of the preceding stage");
        if (static_cast<int>(init->stage) != static_cast<int>(cfg.stage) - 1)
            throw std::invalid_argument("stage order: " + to_string(cfg.stage) + " cannot start from a " +
                                        to_string(init->stage) + " checkpoint");
        if (init->config != model_cfg) throw std::invalid_argument("init checkpoint was trained with a different model config");
    }

    GeoDiT<double> model(model_cfg, cfg.stage);
    if (init) model.load_arrays(model_from_checkpoint<double>(*init).params());
    const TargetEncoder<double> encoder(model_cfg);
    AdamW<double> opt({cfg.learning_rate, 0.9, 0.999, 1e-8, 0.0});
    const auto sched = FlowSchedule<double>::linear();
    const auto meta = run_metadata(cfg, init);

    std::filesystem::create_directories(options.out_dir);
    std::vector<LogRow> log;
    long start = 0;
    if (options.resume) start = try_resume(options.out_dir, model, opt, meta, log);

    for (long step = start + 1; step <= cfg.steps; ++step) {
        auto batch = make_training_batch(cfg, model_cfg, step);
        Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(step), hash_name("flow")));
        const auto samples = sample_training_batch(batch.images, rng, sched);
        std::vector<Image> x_t;
        std::vector<double> t;
        Matrix<double> v_target(static_cast<Eigen::Index>(samples.size()) * model_cfg.num_tokens(), model_cfg.patch_dim());
        for (std::size_t b = 0; b < samples.size(); ++b) {
            x_t.push_back(samples[b].x_t);
            t.push_back(samples[b].t);
            v_target.middleRows(static_cast<Eigen::Index>(b) * model_cfg.num_tokens(), model_cfg.num_tokens()) =
                patchify_pixels(samples[b].v_target, model_cfg.patch_size);
        }

        ad::Tape<double> tape;
        auto out = model.forward(tape, x_t, t, batch.conditions);
        auto v_loss = ad::mse(out.velocity, v_target);
        auto a_loss = alignment_loss(tape, model.params(), out.hidden, target_features(batch.images, encoder));
        auto loss = total_loss(v_loss, a_loss, model_cfg.align_weight);
        model.params().zero_grad();
        tape.backward(loss);
        opt.step(model.params());

        LogRow row{step, v_loss.scalar(), a_loss.scalar(), 1.0 - a_loss.scalar()};
        if (!std::isfinite(row.v_loss) || !std::isfinite(row.a_loss))
            throw std::runtime_error("non-finite loss at step " + std::to_string(step));
        log.push_back(row);
        if (options.on_step) options.on_step(row);
        if (options.snapshot_every > 0 && step % options.snapshot_every == 0 && step < cfg.steps)
            save_snapshot(options.out_dir, model, opt, step, meta, log);
    }

    auto ckpt = make_checkpoint(model, cfg.steps, meta);
    write_log(options.out_dir / "train_log.csv", log);
    save_checkpoint(ckpt, options.out_dir / "checkpoint.ckpt");
    std::filesystem::remove(options.out_dir / "snapshot.ckpt");
    std::filesystem::remove(options.out_dir / "snapshot.optim");
    return ckpt;
}

std::vector<LogRow> read_training_log(const std::filesystem::path &path)
{
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::vector<LogRow> rows;
    std::string line;
    std::getline(in, line);
    if (line != "step,v_loss,a_loss,cos") throw std::runtime_error("unexpected training log header in " + path.string());
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        LogRow r;
        char c1, c2, c3;
        if (!(ss >> r.step >> c1 >> r.v_loss >> c2 >> r.a_loss >> c3 >> r.cos))
            throw std::runtime_error("malformed training log line: " + line);
        rows.push_back(r);
    }
    return rows;
}

} // namespace geodit
