#pragma once

#include "geodit/synthetic_data.hpp"
#include "geodit/types.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace geodit {

/// [-1, 1] -> [0, 255] affinely, rounded half to even, clamped.
std::uint8_t to_byte(double v);
double from_byte(std::uint8_t b);

/// 8-bit RGB PNG. Images must have 3 channels.
void write_png(const Image &img, const std::filesystem::path &path);
Image read_png(const std::filesystem::path &path);

/// Mask from a PNG: a pixel is true (regenerate) when any channel exceeds 127.
Mask read_mask_png(const std::filesystem::path &path);
void write_mask_png(const Mask &mask, const std::filesystem::path &path);

/// Vocabulary lines `tag_id tag_name`.
std::map<std::string, int> read_vocabulary(const std::filesystem::path &path);
std::string format_vocabulary();

/// Point lines `x y tag_name` in token coordinates; blank lines and `#` comments skipped.
PointSet parse_points(const std::string &text, const std::map<std::string, int> &vocab, int max_points);
PointSet read_points(const std::filesystem::path &path, const std::map<std::string, int> &vocab, int max_points);
std::string format_points(const PointSet &points);

/// Per-tile directory: tile.png, labels.csv (tag ids, -1 background, one
/// image row per line) and scene.txt (SceneSpec as key = value).
void dump_tile(const AnnotatedTile &tile, const std::filesystem::path &dir);

void write_text(const std::filesystem::path &path, const std::string &text);
std::string read_text(const std::filesystem::path &path);

} // namespace geodit
