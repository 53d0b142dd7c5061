#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

namespace geodit {

enum class Stage { unconditional = 1, text = 2, points_geo = 3 };

std::string to_string(Stage s);
/// Accepts the CLI spellings (uncond, text, points) and the long names.
Stage parse_stage(const std::string &s);

/// Architecture hyperparameters.
///
/// `grid_size` is the raster side in pixels; the token grid has
/// grid_size / patch_size tokens per side. The full-scale reference setting
/// (latent 32x32x4, patch 2, 28 blocks, width 1152, 16 heads, AdamW at lr 1e-5,
/// batch 256) is recorded in README.md; the defaults below are the desk-scale
/// configuration used by configs/desk_*.cfg.
struct ModelConfig {
    int grid_size = 16;
    int patch_size = 2;
    int channels = 3;
    int depth = 6;
    int hidden_dim = 128;
    int num_heads = 4;
    int tag_vocab_size = 8;
    int max_points = 50;
    int align_block_index = 2;
    double align_weight = 0.5;

    int caption_vocab = 4;
    int caption_len = 8;
    int mlp_ratio = 4;
    int freq_dim = 256;
    int geo_frequencies = 64;
    int feat_dim = 32;
    double sigma_min = 0.25;
    std::uint64_t init_seed = 0;

    int tokens_per_side() const { return grid_size / patch_size; }
    int num_tokens() const { return tokens_per_side() * tokens_per_side(); }
    int patch_dim() const { return patch_size * patch_size * channels; }

    /// Throws std::invalid_argument naming the violated invariant.
    void validate() const;

    std::map<std::string, std::string> to_map() const;
    static ModelConfig from_map(const std::map<std::string, std::string> &kv);

    bool operator==(const ModelConfig &) const = default;
};

struct TrainConfig {
    Stage stage = Stage::unconditional;
    int steps = 20000;
    int batch_size = 8;
    double learning_rate = 1e-4;
    double cond_dropout_prob = 0.1;
    std::uint64_t seed = 0;
    std::uint64_t data_seed = 1;
    int point_min = 0;
    int point_max = 50;

    void validate() const;
    std::map<std::string, std::string> to_map() const;
    static TrainConfig from_map(const std::map<std::string, std::string> &kv);
};

/// Flat `key = value` text, one pair per line, `#` starts a comment.
std::map<std::string, std::string> parse_key_values(const std::string &text);
std::map<std::string, std::string> read_key_value_file(const std::filesystem::path &path);
std::string format_key_values(const std::map<std::string, std::string> &kv);

} // namespace geodit
