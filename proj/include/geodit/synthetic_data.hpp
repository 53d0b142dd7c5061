#pragma once

// Procedural tiles: tagged shapes painted in per-tag colors over a noisy
// background. Every pixel's tag is known, which gives exact oracles for point
// prompts and for checking what a generator drew.

#include "geodit/rng.hpp"
#include "geodit/types.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace geodit {

inline constexpr int kNumTags = 8;
inline constexpr int kNumArchetypes = 4;
inline constexpr int kBackground = -1;
inline constexpr double kNoiseAmplitude = 0.05;

enum class ShapeKind { disc, rectangle, line };

/// Geometry in pixel units over the continuous square [0, size)^2; pixel
/// (y, x) is sampled at its center (x + 0.5, y + 0.5).
///   disc:      radius a
///   rectangle: half extents (a, b) along the axes rotated by `angle`
///   line:      infinite strip of width a through the center at `angle`
struct Annotation {
    ShapeKind shape = ShapeKind::disc;
    int tag_id = 0;
    double cx = 0.0, cy = 0.0;
    double a = 1.0, b = 1.0;
    double angle = 0.0;

    double area(int size) const;
    bool covers(double px, double py) const;
};

struct SceneSpec {
    std::uint64_t seed = 0;
    int archetype_id = 0;
    int size = 16;
    std::vector<Annotation> annotations;
    LatLon latlon;
};

struct AnnotatedTile {
    Image image;
    SceneSpec spec;
    std::vector<int> label_grid; // row-major tag id per pixel, kBackground when unannotated

    int label(int y, int x) const { return label_grid[static_cast<std::size_t>(y * image.width + x)]; }
    int annotated_cells() const;
};

const std::array<std::string, kNumTags> &tag_names();
const std::array<std::string, kNumArchetypes> &archetype_names();

/// RGB signature in [-1, 1] of a tag, or of the background for kBackground.
std::array<double, 3> tag_signature(int tag_id);

/// Nominal share of each tag among an archetype's annotations.
const std::array<double, kNumTags> &archetype_mix(int archetype_id);

/// Disjoint latitude band [lo, hi) of an archetype; longitudes are uniform.
std::array<double, 2> archetype_latitudes(int archetype_id);

/// Draws the scene description: 4 to 8 shapes with tags from the archetype mix.
SceneSpec make_scene(std::uint64_t seed, int archetype_id, int size = 16);

/// Paints a scene; larger shapes first so small ones stay visible. Pure in `spec`.
AnnotatedTile rasterize(const SceneSpec &spec);

AnnotatedTile generate_tile(std::uint64_t seed, int archetype_id, int size = 16);

/// n ~ U{lo..hi} points on annotated pixels chosen uniformly with replacement.
/// Coordinates are pixel indices divided by `patch_size`. The tag is the label
/// of the chosen pixel (each pixel carries exactly one tag).
PointSet sample_point_prompts(const AnnotatedTile &tile, Rng &rng, int lo, int hi, int patch_size, int max_points);

/// Nearest signature among the tags and the background.
int classify_color(double r, double g, double b);

/// Fraction of points whose tag appears among the nearest-signature labels of
/// the pixels lying within `radius` token units of the point. Empty set -> 1.
double fidelity_oracle(const Image &generated, const PointSet &points, double radius, int patch_size);

/// One example of the training stream: a pure function of (data_seed, step, index).
struct StreamExample {
    AnnotatedTile tile;
    std::uint64_t point_seed = 0;
};

StreamExample stream_example(std::uint64_t data_seed, long step, int index, int size = 16);

} // namespace geodit
