#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace geodit {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using MatrixXd = Matrix<double>;
using RowVectorXd = RowVector<double>;

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// An H x W x C raster. Pixel (y, x) lives in row y * width + x of `pixels`.
template <typename Scalar>
struct ImageGrid {
    int height = 0;
    int width = 0;
    int channels = 0;
    Matrix<Scalar> pixels;

    ImageGrid() = default;
    ImageGrid(int h, int w, int c) : height(h), width(w), channels(c), pixels(Matrix<Scalar>::Zero(h * w, c)) {}

    static ImageGrid constant(int h, int w, int c, Scalar value)
    {
        ImageGrid g(h, w, c);
        g.pixels.setConstant(value);
        return g;
    }

    Scalar &operator()(int y, int x, int c) { return pixels(y * width + x, c); }
    Scalar operator()(int y, int x, int c) const { return pixels(y * width + x, c); }

    bool same_shape(const ImageGrid &o) const
    {
        return height == o.height && width == o.width && channels == o.channels;
    }

    template <typename Other>
    ImageGrid<Other> cast() const
    {
        ImageGrid<Other> out(height, width, channels);
        out.pixels = pixels.template cast<Other>();
        return out;
    }
};

using Image = ImageGrid<double>;

/// Per-pixel boolean mask, row-major like ImageGrid.
struct Mask {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> cells;

    Mask() = default;
    Mask(int h, int w, bool value = false) : height(h), width(w), cells(static_cast<std::size_t>(h * w), value) {}

    bool operator()(int y, int x) const { return cells[static_cast<std::size_t>(y * width + x)] != 0; }
    void set(int y, int x, bool v) { cells[static_cast<std::size_t>(y * width + x)] = v; }
    int count() const
    {
        int n = 0;
        for (auto c : cells) n += c != 0;
        return n;
    }
};

/// A point prompt in token-grid coordinates.
struct PointQuery {
    double x = 0.0;
    double y = 0.0;
    int tag_id = 0;
};

/// Fixed-capacity point prompt list; slots [0, points.size()) are valid.
struct PointSet {
    std::vector<PointQuery> points;
    int capacity = 0;

    PointSet() = default;
    explicit PointSet(int cap) : capacity(cap) {}

    std::vector<bool> mask() const
    {
        std::vector<bool> m(static_cast<std::size_t>(capacity), false);
        for (std::size_t i = 0; i < points.size() && i < m.size(); ++i) m[i] = true;
        return m;
    }
    int size() const { return static_cast<int>(points.size()); }
    bool empty() const { return points.empty(); }
};

struct LatLon {
    double lat = 0.0;
    double lon = 0.0;
};

} // namespace geodit
