#include "geodit/synthetic_data.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace geodit {

namespace {

enum Tag { building, road, water, tree, field, parking, roof_red, roof_gray };

constexpr std::array<std::array<double, 3>, kNumTags> kSignatures = {{
    {0.85, 0.85, 0.85},   // building
    {-0.25, -0.25, -0.25}, // road
    {-0.8, -0.35, 0.8},   // water
    {-0.55, 0.45, -0.6},  // tree
    {0.7, 0.75, -0.45},   // field
    {0.25, -0.85, 0.75},  // parking
    {0.85, -0.65, -0.65}, // roof-red
    {0.25, 0.45, 0.55},   // roof-gray
}};
constexpr std::array<double, 3> kBackgroundColor = {-0.85, -0.85, -0.6};

constexpr std::array<std::array<double, kNumTags>, kNumArchetypes> kMixes = {{
    {0.30, 0.30, 0.00, 0.00, 0.00, 0.10, 0.15, 0.15}, // urban
    {0.05, 0.10, 0.10, 0.30, 0.45, 0.00, 0.00, 0.00}, // rural
    {0.15, 0.15, 0.45, 0.15, 0.00, 0.00, 0.10, 0.00}, // coastal
    {0.15, 0.25, 0.00, 0.00, 0.00, 0.30, 0.00, 0.30}, // industrial
}};

int draw_tag(const std::array<double, kNumTags> &mix, Rng &rng)
{
    double u = rng.uniform(), acc = 0.0;
    int last = 0;
    for (int k = 0; k < kNumTags; ++k) {
        if (mix[static_cast<std::size_t>(k)] <= 0.0) continue;
        last = k;
        acc += mix[static_cast<std::size_t>(k)];
        if (u < acc) return k;
    }
    return last;
}

Annotation draw_shape(int tag, int size, Rng &rng)
{
    Annotation s;
    s.tag_id = tag;
    s.cx = rng.uniform(0.0, size);
    s.cy = rng.uniform(0.0, size);
    s.angle = rng.uniform(0.0, std::numbers::pi);
    switch (tag) {
    case road:
        s.shape = ShapeKind::line;
        s.a = rng.uniform(1.0, 2.2);
        break;
    case tree:
        s.shape = ShapeKind::disc;
        s.a = rng.uniform(1.2, 3.0);
        break;
    case water:
        s.shape = rng.bernoulli(0.5) ? ShapeKind::disc : ShapeKind::rectangle;
        s.a = rng.uniform(2.0, 5.0);
        s.b = rng.uniform(2.0, 5.0);
        break;
    case field:
        s.shape = ShapeKind::rectangle;
        s.a = rng.uniform(2.0, 5.0);
        s.b = rng.uniform(2.0, 5.0);
        break;
    default:
        s.shape = ShapeKind::rectangle;
        s.a = rng.uniform(1.0, 3.5);
        s.b = rng.uniform(1.0, 3.5);
        break;
    }
    return s;
}

} // namespace

double Annotation::area(int size) const
{
    switch (shape) {
    case ShapeKind::disc: return std::numbers::pi * a * a;
    case ShapeKind::rectangle: return 4.0 * a * b;
    case ShapeKind::line: return a * size * std::numbers::sqrt2;
    }
    return 0.0;
}

bool Annotation::covers(double px, double py) const
{
    const double dx = px - cx, dy = py - cy;
    const double c = std::cos(angle), s = std::sin(angle);
    switch (shape) {
    case ShapeKind::disc: return dx * dx + dy * dy <= a * a;
    case ShapeKind::rectangle: {
        const double u = c * dx + s * dy, v = -s * dx + c * dy;
        return std::abs(u) <= a && std::abs(v) <= b;
    }
    case ShapeKind::line: return std::abs(-s * dx + c * dy) <= 0.5 * a;
    }
    return false;
}

int AnnotatedTile::annotated_cells() const
{
    return static_cast<int>(std::count_if(label_grid.begin(), label_grid.end(), [](int l) { return l != kBackground; }));
}

const std::array<std::string, kNumTags> &tag_names()
{
    static const std::array<std::string, kNumTags> names = {"building", "road",    "water",    "tree",
                                                            "field",    "parking", "roof-red", "roof-gray"};
    return names;
}

const std::array<std::string, kNumArchetypes> &archetype_names()
{
    static const std::array<std::string, kNumArchetypes> names = {"urban", "rural", "coastal", "industrial"};
    return names;
}

std::array<double, 3> tag_signature(int tag_id)
{
    if (tag_id == kBackground) return kBackgroundColor;
    if (tag_id < 0 || tag_id >= kNumTags) throw DomainError("tag_signature: unknown tag");
    return kSignatures[static_cast<std::size_t>(tag_id)];
}

const std::array<double, kNumTags> &archetype_mix(int archetype_id)
{
    if (archetype_id < 0 || archetype_id >= kNumArchetypes) throw DomainError("archetype out of range");
    return kMixes[static_cast<std::size_t>(archetype_id)];
}

std::array<double, 2> archetype_latitudes(int archetype_id)
{
    if (archetype_id < 0 || archetype_id >= kNumArchetypes) throw DomainError("archetype out of range");
    constexpr std::array<std::array<double, 2>, kNumArchetypes> bands = {
        {{40.0, 60.0}, {10.0, 30.0}, {-20.0, 0.0}, {-50.0, -30.0}}};
    return bands[static_cast<std::size_t>(archetype_id)];
}

SceneSpec make_scene(std::uint64_t seed, int archetype_id, int size)
{
    const auto &mix = archetype_mix(archetype_id);
    Rng rng(derive_seed(seed, hash_name("scene")));
    SceneSpec spec;
    spec.seed = seed;
    spec.archetype_id = archetype_id;
    spec.size = size;
    const int n = rng.uniform_int(4, 8);
    for (int i = 0; i < n; ++i) spec.annotations.push_back(draw_shape(draw_tag(mix, rng), size, rng));
    const auto band = archetype_latitudes(archetype_id);
    spec.latlon.lat = rng.uniform(band[0], band[1]);
    spec.latlon.lon = rng.uniform(-180.0, 180.0);
    return spec;
}

AnnotatedTile rasterize(const SceneSpec &spec)
{
    const int n = spec.size;
    AnnotatedTile tile;
    tile.spec = spec;
    tile.image = Image(n, n, 3);
    tile.label_grid.assign(static_cast<std::size_t>(n * n), kBackground);

    std::vector<std::size_t> order(spec.annotations.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t l, std::size_t r) {
        return spec.annotations[l].area(n) > spec.annotations[r].area(n);
    });
    for (std::size_t i : order) {
        const auto &s = spec.annotations[i];
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x)
                if (s.covers(x + 0.5, y + 0.5)) tile.label_grid[static_cast<std::size_t>(y * n + x)] = s.tag_id;
    }

    Rng noise(derive_seed(spec.seed, hash_name("texture")));
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            const auto color = tag_signature(tile.label(y, x));
            for (int c = 0; c < 3; ++c)
                tile.image(y, x, c) = std::clamp(color[static_cast<std::size_t>(c)] +
                                                     noise.uniform(-kNoiseAmplitude, kNoiseAmplitude),
                                                 -1.0, 1.0);
        }
    return tile;
}

AnnotatedTile generate_tile(std::uint64_t seed, int archetype_id, int size)
{
    return rasterize(make_scene(seed, archetype_id, size));
}

PointSet sample_point_prompts(const AnnotatedTile &tile, Rng &rng, int lo, int hi, int patch_size, int max_points)
{
    if (lo < 0 || hi < lo) throw std::invalid_argument("sample_point_prompts: bad count range");
    if (patch_size <= 0) throw std::invalid_argument("sample_point_prompts: bad patch size");
    std::vector<int> cells;
    for (int i = 0; i < static_cast<int>(tile.label_grid.size()); ++i)
        if (tile.label_grid[static_cast<std::size_t>(i)] != kBackground) cells.push_back(i);
    if (cells.empty()) throw std::invalid_argument("sample_point_prompts: tile has no annotated cells");
    const int n = std::min(rng.uniform_int(lo, hi), max_points);
    PointSet out(max_points);
    const int w = tile.image.width;
    for (int i = 0; i < n; ++i) {
        const int cell = cells[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(cells.size()) - 1))];
        out.points.push_back({static_cast<double>(cell % w) / patch_size, static_cast<double>(cell / w) / patch_size,
                              tile.label_grid[static_cast<std::size_t>(cell)]});
    }
    return out;
}

int classify_color(double r, double g, double b)
{
    int best = kBackground;
    double best_d = std::numeric_limits<double>::infinity();
    for (int k = kBackground; k < kNumTags; ++k) {
        const auto s = tag_signature(k);
        const double d = (r - s[0]) * (r - s[0]) + (g - s[1]) * (g - s[1]) + (b - s[2]) * (b - s[2]);
        if (d < best_d) {
            best_d = d;
            best = k;
        }
    }
    return best;
}

double fidelity_oracle(const Image &generated, const PointSet &points, double radius, int patch_size)
{
    if (points.empty()) return 1.0;
    if (generated.channels != 3) throw ShapeError("fidelity_oracle: expected an RGB image");
    std::vector<int> labels(static_cast<std::size_t>(generated.height * generated.width));
    for (int y = 0; y < generated.height; ++y)
        for (int x = 0; x < generated.width; ++x)
            labels[static_cast<std::size_t>(y * generated.width + x)] =
                classify_color(generated(y, x, 0), generated(y, x, 1), generated(y, x, 2));
    int hits = 0;
    for (const auto &p : points.points) {
        bool found = false;
        for (int y = 0; y < generated.height && !found; ++y)
            for (int x = 0; x < generated.width && !found; ++x) {
                const double dx = static_cast<double>(x) / patch_size - p.x;
                const double dy = static_cast<double>(y) / patch_size - p.y;
                if (dx * dx + dy * dy <= radius * radius &&
                    labels[static_cast<std::size_t>(y * generated.width + x)] == p.tag_id)
                    found = true;
            }
        hits += found;
    }
    return static_cast<double>(hits) / points.size();
}

StreamExample stream_example(std::uint64_t data_seed, long step, int index, int size)
{
    const auto seed = derive_seed(data_seed, static_cast<std::uint64_t>(step), static_cast<std::uint64_t>(index));
    Rng rng(seed);
    const int archetype = rng.uniform_int(0, kNumArchetypes - 1);
    return {generate_tile(derive_seed(seed, hash_name("tile")), archetype, size),
            derive_seed(seed, hash_name("points"))};
}

} // namespace geodit
