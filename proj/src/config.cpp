#include "geodit/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace geodit {

std::string to_string(Stage s)
{
    switch (s) {
    case Stage::unconditional:
        return "unconditional";
    case Stage::text:
        return "text";
    case Stage::points_geo:
        return "points_geo";
    }
    return "?";
}

Stage parse_stage(const std::string &s)
{
    if (s == "uncond" || s == "unconditional" || s == "1") return Stage::unconditional;
    if (s == "text" || s == "2") return Stage::text;
    if (s == "points" || s == "points_geo" || s == "3") return Stage::points_geo;
    throw std::invalid_argument("unknown stage '" + s + "'");
}

namespace {

std::string trim(const std::string &s)
{
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string &key, const std::string &v)
{
    T out{};
    const auto *end = v.data() + v.size();
    auto [ptr, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || ptr != end) throw std::invalid_argument("bad value for '" + key + "': " + v);
    return out;
}

template <typename T>
void read_if(const std::map<std::string, std::string> &kv, const std::string &key, T &field)
{
    auto it = kv.find(key);
    if (it != kv.end()) field = parse_number<T>(key, it->second);
}

std::string fmt_double(double v)
{
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

void require(bool ok, const char *what)
{
    if (!ok) throw std::invalid_argument(what);
}

} // namespace

void ModelConfig::validate() const
{
    require(grid_size > 0 && patch_size > 0 && channels > 0, "grid_size, patch_size, channels must be positive");
    require(grid_size % patch_size == 0, "grid_size must be divisible by patch_size");
    require(depth > 0, "depth must be positive");
    require(num_heads > 0 && hidden_dim % num_heads == 0, "hidden_dim must be divisible by num_heads");
    require(hidden_dim % 4 == 0, "hidden_dim must be divisible by 4");
    require(align_block_index >= 0 && align_block_index < depth, "align_block_index must lie in [0, depth)");
    require(max_points >= 1, "max_points must be at least 1");
    require(align_weight >= 0.0, "align_weight must be nonnegative");
    require(tag_vocab_size > 0 && caption_vocab > 0 && caption_len > 0, "vocabularies must be nonempty");
    require(freq_dim > 0 && freq_dim % 2 == 0, "freq_dim must be positive and even");
    require(geo_frequencies > 0 && feat_dim > 0 && mlp_ratio > 0, "encoder sizes must be positive");
    require(sigma_min > 0.0, "sigma_min must be positive");
}

std::map<std::string, std::string> ModelConfig::to_map() const
{
    return {
        {"grid_size", std::to_string(grid_size)},
        {"patch_size", std::to_string(patch_size)},
        {"channels", std::to_string(channels)},
        {"depth", std::to_string(depth)},
        {"hidden_dim", std::to_string(hidden_dim)},
        {"num_heads", std::to_string(num_heads)},
        {"tag_vocab_size", std::to_string(tag_vocab_size)},
        {"max_points", std::to_string(max_points)},
        {"align_block_index", std::to_string(align_block_index)},
        {"align_weight", fmt_double(align_weight)},
        {"caption_vocab", std::to_string(caption_vocab)},
        {"caption_len", std::to_string(caption_len)},
        {"mlp_ratio", std::to_string(mlp_ratio)},
        {"freq_dim", std::to_string(freq_dim)},
        {"geo_frequencies", std::to_string(geo_frequencies)},
        {"feat_dim", std::to_string(feat_dim)},
        {"sigma_min", fmt_double(sigma_min)},
        {"init_seed", std::to_string(init_seed)},
    };
}

ModelConfig ModelConfig::from_map(const std::map<std::string, std::string> &kv)
{
    ModelConfig c;
    read_if(kv, "grid_size", c.grid_size);
    read_if(kv, "patch_size", c.patch_size);
    read_if(kv, "channels", c.channels);
    read_if(kv, "depth", c.depth);
    read_if(kv, "hidden_dim", c.hidden_dim);
    read_if(kv, "num_heads", c.num_heads);
    read_if(kv, "tag_vocab_size", c.tag_vocab_size);
    read_if(kv, "max_points", c.max_points);
    read_if(kv, "align_block_index", c.align_block_index);
    read_if(kv, "align_weight", c.align_weight);
    read_if(kv, "caption_vocab", c.caption_vocab);
    read_if(kv, "caption_len", c.caption_len);
    read_if(kv, "mlp_ratio", c.mlp_ratio);
    read_if(kv, "freq_dim", c.freq_dim);
    read_if(kv, "geo_frequencies", c.geo_frequencies);
    read_if(kv, "feat_dim", c.feat_dim);
    read_if(kv, "sigma_min", c.sigma_min);
    read_if(kv, "init_seed", c.init_seed);
    c.validate();
    return c;
}

void TrainConfig::validate() const
{
    require(steps > 0, "steps must be positive");
    require(batch_size > 0, "batch_size must be positive");
    require(learning_rate > 0.0, "learning_rate must be positive");
    require(cond_dropout_prob >= 0.0 && cond_dropout_prob <= 1.0, "cond_dropout_prob must lie in [0, 1]");
    require(point_min >= 0 && point_min <= point_max, "point range must satisfy 0 <= min <= max");
}

std::map<std::string, std::string> TrainConfig::to_map() const
{
    return {
        {"stage", to_string(stage)},
        {"steps", std::to_string(steps)},
        {"batch_size", std::to_string(batch_size)},
        {"learning_rate", fmt_double(learning_rate)},
        {"cond_dropout_prob", fmt_double(cond_dropout_prob)},
        {"seed", std::to_string(seed)},
        {"data_seed", std::to_string(data_seed)},
        {"point_min", std::to_string(point_min)},
        {"point_max", std::to_string(point_max)},
    };
}

TrainConfig TrainConfig::from_map(const std::map<std::string, std::string> &kv)
{
    TrainConfig c;
    if (auto it = kv.find("stage"); it != kv.end()) c.stage = parse_stage(it->second);
    read_if(kv, "steps", c.steps);
    read_if(kv, "batch_size", c.batch_size);
    read_if(kv, "learning_rate", c.learning_rate);
    read_if(kv, "cond_dropout_prob", c.cond_dropout_prob);
    read_if(kv, "seed", c.seed);
    read_if(kv, "data_seed", c.data_seed);
    read_if(kv, "point_min", c.point_min);
    read_if(kv, "point_max", c.point_max);
    c.validate();
    return c;
}

std::map<std::string, std::string> parse_key_values(const std::string &text)
{
    std::map<std::string, std::string> out;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("line " + std::to_string(lineno) + ": expected 'key = value'");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw std::invalid_argument("line " + std::to_string(lineno) + ": empty key");
        out[key] = value;
    }
    return out;
}

std::map<std::string, std::string> read_key_value_file(const std::filesystem::path &path)
{
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_key_values(ss.str());
}

std::string format_key_values(const std::map<std::string, std::string> &kv)
{
    std::string out;
    for (const auto &[k, v] : kv) out += k + " = " + v + "\n";
    return out;
}

} // namespace geodit
