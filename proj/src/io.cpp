#include "geodit/io.hpp"

#include "geodit/config.hpp"

#include <png.h>

#include <algorithm>
#include <cfenv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>
#include <stdexcept>

namespace geodit {

std::uint8_t to_byte(double v)
{
    const double scaled = std::clamp((v + 1.0) * 127.5, 0.0, 255.0);
    // nearbyint honors the default round-to-nearest-even mode.
    return static_cast<std::uint8_t>(std::nearbyint(scaled));
}

double from_byte(std::uint8_t b) { return static_cast<double>(b) / 127.5 - 1.0; }

namespace {

struct File {
    std::FILE *f;
    ~File()
    {
        if (f) std::fclose(f);
    }
};

std::vector<std::uint8_t> read_rgb(const std::filesystem::path &path, int &width, int &height)
{
    File file{std::fopen(path.c_str(), "rb")};
    if (!file.f) throw std::runtime_error("cannot open " + path.string());
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (!png || !info) throw std::runtime_error("libpng initialization failed");
    std::vector<std::uint8_t> data;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("cannot decode PNG " + path.string());
    }
    png_init_io(png, file.f);
    png_read_info(png, info);
    width = static_cast<int>(png_get_image_width(png, info));
    height = static_cast<int>(png_get_image_height(png, info));
    const auto color = png_get_color_type(png, info);
    if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
    if (png_get_bit_depth(png, info) < 8) png_set_packing(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);
    data.resize(static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * 3);
    rows.resize(static_cast<std::size_t>(height));
    for (int y = 0; y < height; ++y) rows[static_cast<std::size_t>(y)] = data.data() + static_cast<std::size_t>(y) * width * 3;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return data;
}

void write_rgb(const std::filesystem::path &path, const std::vector<std::uint8_t> &data, int width, int height)
{
    File file{std::fopen(path.c_str(), "wb")};
    if (!file.f) throw std::runtime_error("cannot write " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (!png || !info) throw std::runtime_error("libpng initialization failed");
    std::vector<png_bytep> rows(static_cast<std::size_t>(height));
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("cannot encode PNG " + path.string());
    }
    png_init_io(png, file.f);
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < height; ++y)
        rows[static_cast<std::size_t>(y)] = const_cast<png_bytep>(data.data() + static_cast<std::size_t>(y) * width * 3);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

} // namespace

void write_png(const Image &img, const std::filesystem::path &path)
{
    if (img.channels != 3) throw ShapeError("write_png: expected 3 channels");
    std::vector<std::uint8_t> data(static_cast<std::size_t>(img.height * img.width * 3));
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) data[static_cast<std::size_t>((y * img.width + x) * 3 + c)] = to_byte(img(y, x, c));
    write_rgb(path, data, img.width, img.height);
}

Image read_png(const std::filesystem::path &path)
{
    int w = 0, h = 0;
    const auto data = read_rgb(path, w, h);
    Image img(h, w, 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) img(y, x, c) = from_byte(data[static_cast<std::size_t>((y * w + x) * 3 + c)]);
    return img;
}

Mask read_mask_png(const std::filesystem::path &path)
{
    int w = 0, h = 0;
    const auto data = read_rgb(path, w, h);
    Mask m(h, w);
    for (int i = 0; i < w * h; ++i) {
        const auto *px = &data[static_cast<std::size_t>(i) * 3];
        m.cells[static_cast<std::size_t>(i)] = px[0] > 127 || px[1] > 127 || px[2] > 127;
    }
    return m;
}

void write_mask_png(const Mask &mask, const std::filesystem::path &path)
{
    std::vector<std::uint8_t> data(static_cast<std::size_t>(mask.width * mask.height * 3));
    for (std::size_t i = 0; i < mask.cells.size(); ++i)
        for (int c = 0; c < 3; ++c) data[i * 3 + static_cast<std::size_t>(c)] = mask.cells[i] ? 255 : 0;
    write_rgb(path, data, mask.width, mask.height);
}

void write_text(const std::filesystem::path &path, const std::string &text)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

std::string read_text(const std::filesystem::path &path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

namespace {

std::string strip_comment(std::string line)
{
    if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
    return line;
}

} // namespace

std::map<std::string, int> read_vocabulary(const std::filesystem::path &path)
{
    std::istringstream in(read_text(path));
    std::map<std::string, int> vocab;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::istringstream ls(strip_comment(line));
        int id;
        std::string name, extra;
        if (!(ls >> id)) {
            if (ls.eof()) continue;
            throw std::invalid_argument(path.string() + ":" + std::to_string(lineno) + ": expected 'tag_id tag_name'");
        }
        if (!(ls >> name) || (ls >> extra))
            throw std::invalid_argument(path.string() + ":" + std::to_string(lineno) + ": expected 'tag_id tag_name'");
        if (vocab.count(name)) throw std::invalid_argument("duplicate tag name '" + name + "'");
        vocab[name] = id;
    }
    return vocab;
}

std::string format_vocabulary()
{
    std::string out;
    for (int k = 0; k < kNumTags; ++k) out += std::to_string(k) + " " + tag_names()[static_cast<std::size_t>(k)] + "\n";
    return out;
}

PointSet parse_points(const std::string &text, const std::map<std::string, int> &vocab, int max_points)
{
    std::istringstream in(text);
    PointSet out(max_points);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::istringstream ls(strip_comment(line));
        double x, y;
        std::string name, extra;
        if (!(ls >> x)) {
            if (ls.eof()) continue;
            throw std::invalid_argument("points line " + std::to_string(lineno) + ": expected 'x y tag_name'");
        }
        if (!(ls >> y >> name) || (ls >> extra))
            throw std::invalid_argument("points line " + std::to_string(lineno) + ": expected 'x y tag_name'");
        auto it = vocab.find(name);
        if (it == vocab.end()) throw DomainError("points line " + std::to_string(lineno) + ": unknown tag '" + name + "'");
        if (out.size() >= max_points) throw std::invalid_argument("more than max_points points");
        out.points.push_back({x, y, it->second});
    }
    return out;
}

PointSet read_points(const std::filesystem::path &path, const std::map<std::string, int> &vocab, int max_points)
{
    return parse_points(read_text(path), vocab, max_points);
}

std::string format_points(const PointSet &points)
{
    std::ostringstream os;
    for (const auto &p : points.points)
        os << p.x << ' ' << p.y << ' ' << tag_names()[static_cast<std::size_t>(p.tag_id)] << '\n';
    return os.str();
}

void dump_tile(const AnnotatedTile &tile, const std::filesystem::path &dir)
{
    std::filesystem::create_directories(dir);
    write_png(tile.image, dir / "tile.png");
    std::ostringstream labels;
    for (int y = 0; y < tile.image.height; ++y) {
        for (int x = 0; x < tile.image.width; ++x) labels << (x ? "," : "") << tile.label(y, x);
        labels << '\n';
    }
    write_text(dir / "labels.csv", labels.str());

    std::map<std::string, std::string> kv;
    const auto &s = tile.spec;
    kv["seed"] = std::to_string(s.seed);
    kv["archetype_id"] = std::to_string(s.archetype_id);
    kv["archetype"] = archetype_names()[static_cast<std::size_t>(s.archetype_id)];
    kv["size"] = std::to_string(s.size);
    std::ostringstream num;
    num.precision(17);
    num << s.latlon.lat;
    kv["lat"] = num.str();
    num.str("");
    num << s.latlon.lon;
    kv["lon"] = num.str();
    kv["annotations"] = std::to_string(s.annotations.size());
    static const char *shapes[] = {"disc", "rectangle", "line"};
    for (std::size_t i = 0; i < s.annotations.size(); ++i) {
        const auto &a = s.annotations[i];
        std::ostringstream v;
        v.precision(17);
        v << shapes[static_cast<int>(a.shape)] << ' ' << tag_names()[static_cast<std::size_t>(a.tag_id)] << ' ' << a.cx
          << ' ' << a.cy << ' ' << a.a << ' ' << a.b << ' ' << a.angle;
        char key[32];
        std::snprintf(key, sizeof key, "annotation.%02zu", i);
        kv[key] = v.str();
    }
    write_text(dir / "scene.txt", format_key_values(kv));
}

} // namespace geodit
