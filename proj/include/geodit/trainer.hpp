#pragma once

#include "geodit/checkpoint.hpp"
#include "geodit/conditioning.hpp"
#include "geodit/config.hpp"
#include "geodit/synthetic_data.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

namespace geodit {

/// Clean images and their (possibly dropped) conditions for one step.
struct TrainingBatch {
    std::vector<Image> images;
    std::vector<SampleCondition> conditions;
};

/// Conditions a tile offers at `stage`, before any dropout: the archetype as
/// caption, point prompts drawn with `point_seed`, and the tile's location.
SampleCondition tile_condition(const AnnotatedTile &tile, Stage stage, const ModelConfig &model_cfg,
                               std::uint64_t point_seed, int point_min, int point_max);

/// Deterministic in (cfg.seed, cfg.data_seed, step). Each condition group is
/// replaced by its null independently with probability cond_dropout_prob.
TrainingBatch make_training_batch(const TrainConfig &cfg, const ModelConfig &model_cfg, long step);

struct LogRow {
    long step = 0;
    double v_loss = 0.0;
    double a_loss = 0.0;
    double cos = 0.0;
};

struct RunOptions {
    /// Receives checkpoint.ckpt, train_log.csv and periodic snapshots.
    std::filesystem::path out_dir;
    int snapshot_every = 1000;
    /// Continue from a compatible snapshot in out_dir when one exists.
    bool resume = true;
    std::function<void(const LogRow &)> on_step;
};

/// Runs one training stage. Stage k > 1 starts from a stage k - 1 checkpoint
/// whose arrays are copied in; the new branches keep their initialization.
Checkpoint run_stage(const TrainConfig &cfg, const ModelConfig &model_cfg, const std::optional<Checkpoint> &init,
                     const RunOptions &options);

/// Reads a training log written by run_stage.
std::vector<LogRow> read_training_log(const std::filesystem::path &path);

} // namespace geodit
