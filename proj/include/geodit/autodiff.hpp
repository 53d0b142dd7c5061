#pragma once

// Reverse-mode differentiation over dense Eigen matrices.
//
// A Tape records every operation of one forward pass. Each node owns its value
// (or borrows a parameter matrix), its accumulated gradient, and a closure that
// pushes the node's gradient into its inputs. Parameters are registered with a
// gradient sink that receives the final gradient during the reverse sweep.

#include "geodit/types.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <unordered_map>
#include <utility>
#include <vector>

namespace geodit::ad {

template <typename Scalar>
class Tape;

template <typename Scalar>
struct Var {
    Tape<Scalar> *tape = nullptr;
    int id = -1;

    const Matrix<Scalar> &value() const { return tape->value(id); }
    Eigen::Index rows() const { return value().rows(); }
    Eigen::Index cols() const { return value().cols(); }
    Scalar scalar() const { return value()(0, 0); }
};

template <typename Scalar>
class Tape {
public:
    using Mat = Matrix<Scalar>;
    /// Closure arguments: the tape, the node's own id, and its gradient.
    using Backward = std::function<void(Tape &, int, const Mat &)>;

    explicit Tape(bool record = true) : record_(record) { nodes_.reserve(1024); }

    Tape(const Tape &) = delete;
    Tape &operator=(const Tape &) = delete;

    bool recording() const { return record_; }

    Var<Scalar> constant(Mat value) { return push_node(std::move(value), nullptr, nullptr, false, {}); }

    /// Leaf whose gradient is kept on the tape (read back with gradient()).
    Var<Scalar> input(Mat value) { return push_node(std::move(value), nullptr, nullptr, record_, {}); }

    /// Borrowed parameter. The matrix must outlive the tape. Registering the
    /// same matrix twice returns the same node.
    Var<Scalar> parameter(const Mat &value, Mat *grad_sink)
    {
        auto it = params_.find(&value);
        if (it != params_.end()) return {this, it->second};
        Var<Scalar> v = push_node(Mat(), &value, grad_sink, record_ && grad_sink != nullptr, {});
        params_.emplace(&value, v.id);
        return v;
    }

    /// Frozen borrowed matrix, no gradient.
    Var<Scalar> frozen(const Mat &value) { return push_node(Mat(), &value, nullptr, false, {}); }

    Var<Scalar> push(Mat value, bool needs_grad, Backward backward)
    {
        const bool track = record_ && needs_grad;
        return push_node(std::move(value), nullptr, nullptr, track, track ? std::move(backward) : Backward{});
    }

    const Mat &value(int id) const
    {
        const Node &n = nodes_[static_cast<std::size_t>(id)];
        return n.ref ? *n.ref : n.value;
    }

    bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }

    template <typename Derived>
    void accumulate(int id, const Eigen::MatrixBase<Derived> &g)
    {
        Node &n = nodes_[static_cast<std::size_t>(id)];
        if (!n.needs_grad) return;
        if (n.grad.size() == 0)
            n.grad = g;
        else
            n.grad += g;
    }

    /// Gradient of the last backward() w.r.t. node v (zeros if unreached).
    Mat gradient(Var<Scalar> v) const
    {
        const Node &n = nodes_[static_cast<std::size_t>(v.id)];
        if (n.grad.size() == 0) return Mat::Zero(value(v.id).rows(), value(v.id).cols());
        return n.grad;
    }

    void backward(Var<Scalar> loss)
    {
        if (loss.rows() != 1 || loss.cols() != 1) throw ShapeError("backward: loss must be 1x1");
        if (!record_) throw std::logic_error("backward: tape is not recording");
        accumulate(loss.id, Mat::Ones(1, 1));
        for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
            Node &n = nodes_[static_cast<std::size_t>(i)];
            if (!n.needs_grad || n.grad.size() == 0) continue;
            if (n.backward) n.backward(*this, i, n.grad);
            if (n.sink) {
                if (n.sink->size() == 0)
                    *n.sink = n.grad;
                else
                    *n.sink += n.grad;
            }
        }
    }

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Mat value;
        const Mat *ref = nullptr;
        Mat *sink = nullptr;
        Mat grad;
        Backward backward;
        bool needs_grad = false;
    };

    Var<Scalar> push_node(Mat value, const Mat *ref, Mat *sink, bool needs_grad, Backward backward)
    {
        nodes_.push_back(Node{std::move(value), ref, sink, Mat(), std::move(backward), needs_grad});
        return {this, static_cast<int>(nodes_.size()) - 1};
    }

    bool record_;
    std::vector<Node> nodes_;
    std::unordered_map<const Mat *, int> params_;
};

namespace detail {

template <typename Scalar>
void check_same_tape(Var<Scalar> a, Var<Scalar> b)
{
    if (a.tape != b.tape) throw std::logic_error("variables recorded on different tapes");
}

template <typename Scalar>
void check_same_shape(Var<Scalar> a, Var<Scalar> b, const char *op)
{
    check_same_tape(a, b);
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw ShapeError(std::string(op) + ": shape mismatch");
}

template <typename Scalar, typename F, typename DF>
Var<Scalar> unary(Var<Scalar> a, F f, DF df)
{
    auto &t = *a.tape;
    Matrix<Scalar> out = a.value().unaryExpr(f);
    const int ia = a.id;
    return t.push(std::move(out), t.needs_grad(ia), [ia, df](Tape<Scalar> &tp, int, const Matrix<Scalar> &g) {
        tp.accumulate(ia, g.cwiseProduct(tp.value(ia).unaryExpr(df)));
    });
}

} // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

template <typename Scalar>
Var<Scalar> matmul(Var<Scalar> a, Var<Scalar> b)
{
    detail::check_same_tape(a, b);
    if (a.cols() != b.rows()) throw ShapeError("matmul: inner dimensions differ");
    auto &t = *a.tape;
    Matrix<Scalar> out = a.value() * b.value();
    const int ia = a.id, ib = b.id;
    return t.push(std::move(out), t.needs_grad(ia) || t.needs_grad(ib),
                  [ia, ib](Tape<Scalar> &tp, int, const Matrix<Scalar> &g) {
                      if (tp.needs_grad(ia)) tp.accumulate(ia, g * tp.value(ib).transpose());
                      if (tp.needs_grad(ib)) tp.accumulate(ib, tp.value(ia).transpose() * g);
                  });
}

/// a * b^T
template <typename Scalar>
Var<Scalar> matmul_nt(Var<Scalar> a, Var<Scalar> b)
{
    detail::check_same_tape(a, b);
    if (a.cols() != b.cols()) throw ShapeError("matmul_nt: inner dimensions differ");
    auto &t = *a.tape;
    Matrix<Scalar> out = a.value() * b.value().transpose();
    const int ia = a.id, ib = b.id;
    return t.push(std::move(out), t.needs_grad(ia) || t.needs_grad(ib),
                  [ia, ib](Tape<Scalar> &tp, int, const Matrix<Scalar> &g) {
                      if (tp.needs_grad(ia)) tp.accumulate(ia, g * tp.value(ib));
                      if (tp.needs_grad(ib)) tp.accumulate(ib, g.transpose() * tp.value(ia));
                  });
}

/// x * W + b, with b a 1 x out row broadcast over rows.
template <typename Scalar>
Var<Scalar> linear(Var<Scalar> x, Var<Scalar> w, Var<Scalar> b)
{
    detail::check_same_tape(x, w);
    detail::check_same_tape(x, b);
    if (x.cols() != w.rows() || b.rows() != 1 || b.cols() != w.cols()) throw ShapeError("linear: shape mismatch");
    auto &t = *x.tape;
    Matrix<Scalar> out = x.value() * w.value();
    out.rowwise() += b.value().row(0);
    const int ix = x.id, iw = w.id, ib = b.id;
    return t.push(std::move(out), t.needs_grad(ix) || t.needs_grad(iw) || t.needs_grad(ib),
                  [ix, iw, ib](Tape<Scalar> &tp, int, const Matrix<Scalar> &g) {
                      if (tp.needs_grad(ix)) tp.accumulate(ix, g * tp.value(iw).transpose());
                      if (tp.needs_grad(iw)) tp.accumulate(iw, tp.value(ix).transpose() * g);
                      if (tp.needs_grad(ib)) tp.accumulate(ib, g.colwise().sum());
                  });
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename Scalar>
Var<Scalar> add(Var<Scalar> a, Var<Scalar> b)
{
    detail::check_same_shape(a, b, "add");
    auto &t = *a.tape;
    Matrix<Scalar> out = a.value() + b.value();
    const int ia = a.id, ib = b.id;
    return t.push(std::move(out), t.needs_grad(ia) || t.needs_grad(ib),
                  [ia, ib](Tape<Scalar> &tp, int, const Matrix<Scalar> &g) {
                      tp.accumulate(ia, g);
                      tp.accumulate(ib, g);
                  });
}

template <typename Scalar>
Var<Scalar> sub(Var<Scalar> a, Var<Scalar> b)
{
    detail::check_same_shape(a, b, "sub");
    auto &t = *a.tape;
    Matrix<Scalar> out = a.value() - b.value();
    const int ia = a.id, ib = b.id;
    return t.push(std::move(out), t.needs_grad(ia) || t.needs_grad(ib),
                  [ia, ib](Tape<Scalar> &tp, int, const Matrix<Scalar> &g) {
                      tp.accumulate(ia, g);
                      tp.accumulate(ib, -g);
                  });
}

template <typename Scalar>
Var<Scalar> mul(Var<Scalar> a, Var<Scalar> b)
{
    detail::check_same_shape(a, b, "mul");
    auto &t = *a.tape;
    Matrix<Scalar> out = a.value().cwiseProduct(b.value());
    const int ia = a.id, ib = b.id;
    return t.push(std::move(out), t.needs_grad(ia) || t.needs_grad(ib),
                  [ia, ib](Tape<Scalar> &tp, int, const Matrix<Scalar> &g) {
                      if (tp.needs_grad(ia)) tp.accumulate(ia, g.cwiseProduct(tp.value(ib)));
                      if (tp.needs_grad(ib)) tp.accumulate(ib, g.cwiseProduct(tp.value(ia)));
                  });
}

template <typename Scalar>
Var<Scalar> scale(Var<Scalar> a, Scalar s)
{
    auto &t = *a.tape;
    Matrix<Scalar> out = a.value() * s;
    const int ia = a.id;
    return t.push(std::move(out), t.needs_grad(ia),
                  [ia, s](Tape<Scalar> &tp, int, const Matrix<Scalar> &g) { tp.accumulate(ia, g * s); });
}

template <typename Scalar>
Var<Scalar> add_scalar(Var<Scalar> a, Scalar s)
{
    auto &t = *a.tape;
    Matrix<Scalar> out = a.value().array() + s;
    const int ia = a.id;
    return t.push(std::move(out), t.needs_grad(ia),
                  [ia](Tape<Scalar> &tp, int, const Matrix<Scalar> &g) { tp.accumulate(ia, g); });
}

/// a + r with r a 1 x cols row broadcast over rows.
template <typename Scalar>
Var<Scalar> add_row(Var<Scalar> a, Var<Scalar> r)
{
    detail::check_same_tape(a, r);
    if (r.rows() != 1 || r.cols() != a.cols()) throw ShapeError("add_row: shape mismatch");
    auto &t = *a.tape;
    Matrix<Scalar> out = a.value();
    out.rowwise() += r.value().row(0);
    const int ia = a.id, ir = r.id;
    return t.push(std::move(out), t.needs_grad(ia) || t.needs_grad(ir),
                  [ia, ir](Tape<Scalar> &tp, int, const Matrix<Scalar> &g) {
                      tp.accumulate(ia, g);
                      if (tp.needs_grad(ir)) tp.accumulate(ir, g.colwise().sum());
                  });
}

template <typename Scalar>
Var<Scalar> silu(Var<Scalar> a)
{
    return detail::unary(
        a, [](Scalar x) { return x / (Scalar(1) + std::exp(-x)); },
        [](Scalar x) {
            const Scalar s = Scalar(1) / (Scalar(1) + std::exp(-x));
            return s * (Scalar(1) + x * (Scalar(1) - s));
        });
}

/// tanh approximation of GELU.
template <typename Scalar>
Var<Scalar> gelu(Var<Scalar> a)
{
    constexpr Scalar c = Scalar(0.7978845608028654); // sqrt(2/pi)
    constexpr Scalar k = Scalar(0.044715);
    return detail::unary(
        a,
        [](Scalar x) { return Scalar(0.5) * x * (Scalar(1) + std::tanh(c * (x + k * x * x * x))); },
        [](Scalar x) {
            const Scalar u = c * (x + k * x * x * x);
            const Scalar th = std::tanh(u);
            const Scalar du = c * (Scalar(1) + Scalar(3) * k * x * x);
            return Scalar(0.5) * (Scalar(1) + th) + Scalar(0.5) * x * (Scalar(1) - th * th) * du;
        });
}

template <typename Scalar>
Scalar softplus_value(Scalar x)
{
    return x > Scalar(20) ? x : std::log1p(std::exp(x));
}

template <typename Scalar>
Var<Scalar> softplus(Var<Scalar> a)
{
    return detail::unary(a, [](Scalar x) { return softplus_value(x); },
                         [](Scalar x) { return Scalar(1) / (Scalar(1) + std::exp(-x)); });
}

template <typename Scalar>
Var<Scalar> sin(Var<Scalar> a)
{
    return detail::unary(a, [](Scalar x) { return std::sin(x); }, [](Scalar x) { return std::cos(x); });
}

template <typename Scalar>
Var<Scalar> cos(Var<Scalar> a)
{
    return detail::unary(a, [](Scalar x) { return std::cos(x); }, [](Scalar x) { return -std::sin(x); });
}

template <typename Scalar>
Var<Scalar> tanh(Var<Scalar> a)
{
    return detail::unary(a, [](Scalar x) { return std::tanh(x); },
                         [](Scalar x) {
                             const Scalar th = std::tanh(x);
                             return Scalar(1) - th * th;
                         });
}

// ---------------------------------------------------------------------------
// Normalization and grouped broadcasting

/// Row-wise layer normalization without affine parameters.
template <typename Scalar>
Var<Scalar> layer_norm(Var<Scalar> a, Scalar eps = Scalar(1e-6))
{
    auto &t = *a.tape;
    const auto &x = a.value();
    Matrix<Scalar> out(x.rows(), x.cols());
    Vector<Scalar> inv_std(x.rows());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const Scalar mean = x.row(r).mean();
        const auto centered = (x.row(r).array() - mean).eval();
        inv_std(r) = Scalar(1) / std::sqrt(centered.square().mean() + eps);
        out.row(r) = centered * inv_std(r);
    }
    const int ia = a.id;
    return t.push(std::move(out), t.needs_grad(ia),
                  [ia, inv_std](Tape<Scalar> &tp, int self, const Matrix<Scalar> &g) {
                      const auto &y = tp.value(self);
                      const Vector<Scalar> gmean = g.rowwise().mean();
                      const Vector<Scalar> gymean = g.cwiseProduct(y).rowwise().mean();
                      Matrix<Scalar> dx = g;
                      dx.colwise() -= gmean;
                      dx -= y.cwiseProduct(gymean.replicate(1, y.cols()));
                      dx = inv_std.asDiagonal() * dx;
                      tp.accumulate(ia, dx);
                  });
}

/// out.row(r) = a.row(r) .* g.row(r / group_rows)
template <typename Scalar>
Var<Scalar> group_mul(Var<Scalar> a, Var<Scalar> g, int group_rows)
{
    detail::check_same_tape(a, g);
    if (g.cols() != a.cols() || g.rows() * group_rows != a.rows()) throw ShapeError("group_mul: shape mismatch");
    auto &t = *a.tape;
    Matrix<Scalar> out(a.rows(), a.cols());
    for (Eigen::Index b = 0; b < g.rows(); ++b)
        out.middleRows(b * group_rows, group_rows) =
            a.value().middleRows(b * group_rows, group_rows).array().rowwise() * g.value().row(b).array();
    const int ia = a.id, ig = g.id;
    return t.push(std::move(out), t.needs_grad(ia) || t.needs_grad(ig),
                  [ia, ig, group_rows](Tape<Scalar> &tp, int, const Matrix<Scalar> &grad) {
                      const auto &av = tp.value(ia);
                      const auto &gv = tp.value(ig);
                      if (tp.needs_grad(ia)) {
                          Matrix<Scalar> da(av.rows(), av.cols());
                          for (Eigen::Index b = 0; b < gv.rows(); ++b)
                              da.middleRows(b * group_rows, group_rows) =
                                  grad.middleRows(b * group_rows, group_rows).array().rowwise() *
                                  gv.row(b).array();
                          tp.accumulate(ia, da);
                      }
                      if (tp.needs_grad(ig)) {
                          Matrix<Scalar> dg(gv.rows(), gv.cols());
                          for (Eigen::Index b = 0; b < gv.rows(); ++b)
                              dg.row(b) = grad.middleRows(b * group_rows, group_rows)
                                              .cwiseProduct(av.middleRows(b * group_rows, group_rows))
                                              .colwise()
                                              .sum();
                          tp.accumulate(ig, dg);
                      }
                  });
}

/// out.row(r) = a.row(r) + s.row(r / group_rows)
template <typename Scalar>
Var<Scalar> group_add(Var<Scalar> a, Var<Scalar> s, int group_rows)
{
    detail::check_same_tape(a, s);
    if (s.cols() != a.cols() || s.rows() * group_rows != a.rows()) throw ShapeError("group_add: shape mismatch");
    auto &t = *a.tape;
    Matrix<Scalar> out = a.value();
    for (Eigen::Index b = 0; b < s.rows(); ++b)
        out.middleRows(b * group_rows, group_rows).rowwise() += s.value().row(b);
    const int ia = a.id, is = s.id;
    return t.push(std::move(out), t.needs_grad(ia) || t.needs_grad(is),
                  [ia, is, group_rows](Tape<Scalar> &tp, int, const Matrix<Scalar> &grad) {
                      tp.accumulate(ia, grad);
                      if (tp.needs_grad(is)) {
                          const auto rows = tp.value(is).rows();
                          Matrix<Scalar> ds(rows, grad.cols());
                          for (Eigen::Index b = 0; b < rows; ++b)
                              ds.row(b) = grad.middleRows(b * group_rows, group_rows).colwise().sum();
                          tp.accumulate(is, ds);
                      }
                  });
}

/// Mean of each consecutive block of group_rows rows.
template <typename Scalar>
Var<Scalar> group_mean_rows(Var<Scalar> a, int group_rows)
{
    if (group_rows <= 0 || a.rows() % group_rows != 0) throw ShapeError("group_mean_rows: bad group size");
    auto &t = *a.tape;
    const Eigen::Index groups = a.rows() / group_rows;
    Matrix<Scalar> out(groups, a.cols());
    for (Eigen::Index b = 0; b < groups; ++b)
        out.row(b) = a.value().middleRows(b * group_rows, group_rows).colwise().mean();
    const int ia = a.id;
    return t.push(std::move(out), t.needs_grad(ia),
                  [ia, group_rows](Tape<Scalar> &tp, int, const Matrix<Scalar> &g) {
                      Matrix<Scalar> da(g.rows() * group_rows, g.cols());
                      for (Eigen::Index b = 0; b < g.rows(); ++b)
                          da.middleRows(b * group_rows, group_rows) =
                              (g.row(b) / Scalar(group_rows)).replicate(group_rows, 1);
                      tp.accumulate(ia, da);
                  });
}

/// Max of each consecutive block of group_rows rows, per column.
template <typename Scalar>
Var<Scalar> group_max_rows(Var<Scalar> a, int group_rows)
{
    if (group_rows <= 0 || a.rows() % group_rows != 0) throw ShapeError("group_max_rows: bad group size");
    auto &t = *a.tape;
    const Eigen::Index groups = a.rows() / group_rows;
    Matrix<Scalar> out(groups, a.cols());
    std::vector<Eigen::Index> arg(static_cast<std::size_t>(groups * a.cols()));
    for (Eigen::Index b = 0; b < groups; ++b)
        for (Eigen::Index c = 0; c < a.cols(); ++c) {
            Eigen::Index r = 0;
            out(b, c) = a.value().col(c).segment(b * group_rows, group_rows).maxCoeff(&r);
            arg[static_cast<std::size_t>(b * a.cols() + c)] = b * group_rows + r;
        }
    const int ia = a.id;
    return t.push(std::move(out), t.needs_grad(ia),
                  [ia, arg = std::move(arg)](Tape<Scalar> &tp, int, const Matrix<Scalar> &g) {
                      Matrix<Scalar> da = Matrix<Scalar>::Zero(tp.value(ia).rows(), g.cols());
                      for (Eigen::Index b = 0; b < g.rows(); ++b)
                          for (Eigen::Index c = 0; c < g.cols(); ++c)
                              da(arg[static_cast<std::size_t>(b * g.cols() + c)], c) += g(b, c);
                      tp.accumulate(ia, da);
                  });
}

// ---------------------------------------------------------------------------
// Slicing and assembly

template <typename Scalar>
Var<Scalar> slice_rows(Var<Scalar> a, Eigen::Index start, Eigen::Index count)
{
    if (start < 0 || count < 0 || start + count > a.rows()) throw ShapeError("slice_rows: out of range");
    auto &t = *a.tape;
    Matrix<Scalar> out = a.value().middleRows(start, count);
    const int ia = a.id;
    return t.push(std::move(out), t.needs_grad(ia),
                  [ia, start, count](Tape<Scalar> &tp, int, const Matrix<Scalar> &g) {
                      Matrix<Scalar> da = Matrix<Scalar>::Zero(tp.value(ia).rows(), g.cols());
                      da.middleRows(start, count) = g;
                      tp.accumulate(ia, da);
                  });
}

template <typename Scalar>
Var<Scalar> slice_cols(Var<Scalar> a, Eigen::Index start, Eigen::Index count)
{
    if (start < 0 || count < 0 || start + count > a.cols()) throw ShapeError("slice_cols: out of range");
    auto &t = *a.tape;
    Matrix<Scalar> out = a.value().middleCols(start, count);
    const int ia = a.id;
    return t.push(std::move(out), t.needs_grad(ia),
                  [ia, start, count](Tape<Scalar> &tp, int, const Matrix<Scalar> &g) {
                      Matrix<Scalar> da = Matrix<Scalar>::Zero(g.rows(), tp.value(ia).cols());
                      da.middleCols(start, count) = g;
                      tp.accumulate(ia, da);
                  });
}

template <typename Scalar>
Var<Scalar> concat_rows(const std::vector<Var<Scalar>> &parts)
{
    if (parts.empty()) throw ShapeError("concat_rows: no inputs");
    auto &t = *parts.front().tape;
    Eigen::Index rows = 0;
    bool ng = false;
    for (const auto &p : parts) {
        detail::check_same_tape(parts.front(), p);
        if (p.cols() != parts.front().cols()) throw ShapeError("concat_rows: column mismatch");
        rows += p.rows();
        ng = ng || t.needs_grad(p.id);
    }
    Matrix<Scalar> out(rows, parts.front().cols());
    std::vector<std::pair<int, Eigen::Index>> spans;
    Eigen::Index at = 0;
    for (const auto &p : parts) {
        out.middleRows(at, p.rows()) = p.value();
        spans.emplace_back(p.id, at);
        at += p.rows();
    }
    return t.push(std::move(out), ng, [spans = std::move(spans)](Tape<Scalar> &tp, int, const Matrix<Scalar> &g) {
        for (const auto &[id, start] : spans)
            if (tp.needs_grad(id)) tp.accumulate(id, g.middleRows(start, tp.value(id).rows()));
    });
}

template <typename Scalar>
Var<Scalar> concat_cols(const std::vector<Var<Scalar>> &parts)
{
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    auto &t = *parts.front().tape;
    Eigen::Index cols = 0;
    bool ng = false;
    for (const auto &p : parts) {
        detail::check_same_tape(parts.front(), p);
        if (p.rows() != parts.front().rows()) throw ShapeError("concat_cols: row mismatch");
        cols += p.cols();
        ng = ng || t.needs_grad(p.id);
    }
    Matrix<Scalar> out(parts.front().rows(), cols);
    std::vector<std::pair<int, Eigen::Index>> spans;
    Eigen::Index at = 0;
    for (const auto &p : parts) {
        out.middleCols(at, p.cols()) = p.value();
        spans.emplace_back(p.id, at);
        at += p.cols();
    }
    return t.push(std::move(out), ng, [spans = std::move(spans)](Tape<Scalar> &tp, int, const Matrix<Scalar> &g) {
        for (const auto &[id, start] : spans)
            if (tp.needs_grad(id)) tp.accumulate(id, g.middleCols(start, tp.value(id).cols()));
    });
}

/// Rows of `table` selected by index.
template <typename Scalar>
Var<Scalar> gather_rows(Var<Scalar> table, std::vector<int> index)
{
    auto &t = *table.tape;
    Matrix<Scalar> out(static_cast<Eigen::Index>(index.size()), table.cols());
    for (std::size_t i = 0; i < index.size(); ++i) {
        if (index[i] < 0 || index[i] >= table.rows()) throw DomainError("gather_rows: index out of range");
        out.row(static_cast<Eigen::Index>(i)) = table.value().row(index[i]);
    }
    const int it = table.id;
    return t.push(std::move(out), t.needs_grad(it),
                  [it, index = std::move(index)](Tape<Scalar> &tp, int, const Matrix<Scalar> &g) {
                      Matrix<Scalar> dt = Matrix<Scalar>::Zero(tp.value(it).rows(), g.cols());
                      for (std::size_t i = 0; i < index.size(); ++i)
                          dt.row(index[i]) += g.row(static_cast<Eigen::Index>(i));
                      tp.accumulate(it, dt);
                  });
}

template <typename Scalar>
Var<Scalar> mean_all(Var<Scalar> a)
{
    auto &t = *a.tape;
    Matrix<Scalar> out(1, 1);
    out(0, 0) = a.value().mean();
    const int ia = a.id;
    return t.push(std::move(out), t.needs_grad(ia), [ia](Tape<Scalar> &tp, int, const Matrix<Scalar> &g) {
        const auto &av = tp.value(ia);
        tp.accumulate(ia, Matrix<Scalar>::Constant(av.rows(), av.cols(), g(0, 0) / Scalar(av.size())));
    });
}

// ---------------------------------------------------------------------------
// Attention

/// Multi-head scaled dot-product attention for one sequence.
///
/// q: n x d, k and v: m x d, d divisible by heads. `bias`, when given, is an
/// n x m additive logit term shared by all heads, added after the 1/sqrt(d_h)
/// scaling.
template <typename Scalar>
Var<Scalar> attention(Var<Scalar> q, Var<Scalar> k, Var<Scalar> v, int heads, const Var<Scalar> *bias = nullptr)
{
    detail::check_same_tape(q, k);
    detail::check_same_tape(q, v);
    const Eigen::Index n = q.rows(), m = k.rows(), d = q.cols();
    if (k.cols() != d || v.cols() != d || v.rows() != m) throw ShapeError("attention: shape mismatch");
    if (heads <= 0 || d % heads != 0) throw ShapeError("attention: width not divisible by heads");
    if (m == 0) throw ShapeError("attention: no keys");
    if (bias && (bias->rows() != n || bias->cols() != m)) throw ShapeError("attention: bias shape mismatch");
    auto &t = *q.tape;
    const Eigen::Index dh = d / heads;
    const Scalar sc = Scalar(1) / std::sqrt(Scalar(dh));

    std::vector<Matrix<Scalar>> probs(static_cast<std::size_t>(heads));
    Matrix<Scalar> out(n, d);
    for (int h = 0; h < heads; ++h) {
        Matrix<Scalar> s = (q.value().middleCols(h * dh, dh) * k.value().middleCols(h * dh, dh).transpose()) * sc;
        if (bias) s += bias->value();
        const Vector<Scalar> mx = s.rowwise().maxCoeff();
        s.colwise() -= mx;
        s = s.array().exp().matrix();
        const Vector<Scalar> denom = s.rowwise().sum();
        s = denom.cwiseInverse().asDiagonal() * s;
        out.middleCols(h * dh, dh) = s * v.value().middleCols(h * dh, dh);
        probs[static_cast<std::size_t>(h)] = std::move(s);
    }

    const int iq = q.id, ik = k.id, iv = v.id, ibias = bias ? bias->id : -1;
    const bool ng = t.needs_grad(iq) || t.needs_grad(ik) || t.needs_grad(iv) || (bias && t.needs_grad(ibias));
    return t.push(std::move(out), ng,
                  [iq, ik, iv, ibias, heads, dh, sc, probs = std::move(probs)](Tape<Scalar> &tp, int,
                                                                                const Matrix<Scalar> &g) {
                      const auto &qv = tp.value(iq);
                      const auto &kv = tp.value(ik);
                      const auto &vv = tp.value(iv);
                      Matrix<Scalar> dq = Matrix<Scalar>::Zero(qv.rows(), qv.cols());
                      Matrix<Scalar> dk = Matrix<Scalar>::Zero(kv.rows(), kv.cols());
                      Matrix<Scalar> dv = Matrix<Scalar>::Zero(vv.rows(), vv.cols());
                      Matrix<Scalar> dbias;
                      const bool want_bias = ibias >= 0 && tp.needs_grad(ibias);
                      if (want_bias) dbias = Matrix<Scalar>::Zero(qv.rows(), kv.rows());
                      for (int h = 0; h < heads; ++h) {
                          const auto &p = probs[static_cast<std::size_t>(h)];
                          const auto gh = g.middleCols(h * dh, dh);
                          dv.middleCols(h * dh, dh).noalias() = p.transpose() * gh;
                          Matrix<Scalar> dp = gh * vv.middleCols(h * dh, dh).transpose();
                          const Vector<Scalar> rowdot = dp.cwiseProduct(p).rowwise().sum();
                          dp.colwise() -= rowdot;
                          Matrix<Scalar> ds = p.cwiseProduct(dp);
                          if (want_bias) dbias += ds;
                          dq.middleCols(h * dh, dh).noalias() = (ds * kv.middleCols(h * dh, dh)) * sc;
                          dk.middleCols(h * dh, dh).noalias() = (ds.transpose() * qv.middleCols(h * dh, dh)) * sc;
                      }
                      tp.accumulate(iq, dq);
                      tp.accumulate(ik, dk);
                      tp.accumulate(iv, dv);
                      if (want_bias) tp.accumulate(ibias, dbias);
                  });
}

/// Log of the anisotropic Gaussian spatial prior, floored:
///   out(j, i) = log(exp(-(jx - xi)^2 / sx_i^2 - (jy - yi)^2 / sy_i^2) + floor)
/// sigmas: p x 2 (sx, sy), differentiable. centers: p x 2, tokens: n x 2.
/// Output is n x p (tokens by points), ready to bias attention logits.
template <typename Scalar>
Var<Scalar> rbf_log_bias(Var<Scalar> sigmas, const Matrix<Scalar> &centers, const Matrix<Scalar> &tokens,
                         Scalar floor)
{
    const Eigen::Index p = sigmas.rows(), n = tokens.rows();
    if (sigmas.cols() != 2 || centers.rows() != p || centers.cols() != 2 || tokens.cols() != 2)
        throw ShapeError("rbf_log_bias: shape mismatch");
    auto &t = *sigmas.tape;
    const auto &sg = sigmas.value();
    Matrix<Scalar> prior(n, p);
    for (Eigen::Index i = 0; i < p; ++i)
        for (Eigen::Index j = 0; j < n; ++j) {
            const Scalar dx = tokens(j, 0) - centers(i, 0);
            const Scalar dy = tokens(j, 1) - centers(i, 1);
            prior(j, i) = std::exp(-dx * dx / (sg(i, 0) * sg(i, 0)) - dy * dy / (sg(i, 1) * sg(i, 1)));
        }
    Matrix<Scalar> out = (prior.array() + floor).log().matrix();
    const int is = sigmas.id;
    return t.push(std::move(out), t.needs_grad(is),
                  [is, prior = std::move(prior), centers, tokens, floor](Tape<Scalar> &tp, int,
                                                                         const Matrix<Scalar> &g) {
                      const auto &sv = tp.value(is);
                      Matrix<Scalar> ds = Matrix<Scalar>::Zero(sv.rows(), 2);
                      for (Eigen::Index i = 0; i < sv.rows(); ++i) {
                          const Scalar sx = sv(i, 0), sy = sv(i, 1);
                          for (Eigen::Index j = 0; j < tokens.rows(); ++j) {
                              const Scalar dx = tokens(j, 0) - centers(i, 0);
                              const Scalar dy = tokens(j, 1) - centers(i, 1);
                              const Scalar w = g(j, i) * prior(j, i) / (prior(j, i) + floor);
                              ds(i, 0) += w * Scalar(2) * dx * dx / (sx * sx * sx);
                              ds(i, 1) += w * Scalar(2) * dy * dy / (sy * sy * sy);
                          }
                      }
                      tp.accumulate(is, ds);
                  });
}

// ---------------------------------------------------------------------------
// Losses (1 x 1 outputs)

/// Mean of squared differences against a constant target.
template <typename Scalar>
Var<Scalar> mse(Var<Scalar> pred, const Matrix<Scalar> &target)
{
    if (pred.rows() != target.rows() || pred.cols() != target.cols()) throw ShapeError("mse: shape mismatch");
    auto &t = *pred.tape;
    Matrix<Scalar> diff = pred.value() - target;
    Matrix<Scalar> out(1, 1);
    out(0, 0) = diff.squaredNorm() / Scalar(diff.size());
    const int ip = pred.id;
    return t.push(std::move(out), t.needs_grad(ip),
                  [ip, diff = std::move(diff)](Tape<Scalar> &tp, int, const Matrix<Scalar> &g) {
                      tp.accumulate(ip, diff * (Scalar(2) * g(0, 0) / Scalar(diff.size())));
                  });
}

/// Mean over rows of 1 - cos(pred_j, target_j); norms floored at norm_floor.
template <typename Scalar>
Var<Scalar> cosine_distance(Var<Scalar> pred, const Matrix<Scalar> &target, Scalar norm_floor = Scalar(1e-12))
{
    if (pred.rows() != target.rows() || pred.cols() != target.cols())
        throw ShapeError("cosine_distance: shape mismatch");
    auto &t = *pred.tape;
    const auto &p = pred.value();
    const Eigen::Index n = p.rows();
    Vector<Scalar> pn(n), tn(n), dots(n);
    Scalar total = 0;
    for (Eigen::Index j = 0; j < n; ++j) {
        pn(j) = std::max(p.row(j).norm(), norm_floor);
        tn(j) = std::max(target.row(j).norm(), norm_floor);
        dots(j) = p.row(j).dot(target.row(j));
        total += Scalar(1) - dots(j) / (pn(j) * tn(j));
    }
    Matrix<Scalar> out(1, 1);
    out(0, 0) = total / Scalar(n);
    const int ip = pred.id;
    return t.push(std::move(out), t.needs_grad(ip),
                  [ip, target, pn, tn, dots, norm_floor](Tape<Scalar> &tp, int, const Matrix<Scalar> &g) {
                      const auto &pv = tp.value(ip);
                      const Eigen::Index n = pv.rows();
                      Matrix<Scalar> dp(n, pv.cols());
                      for (Eigen::Index j = 0; j < n; ++j) {
                          dp.row(j) = -target.row(j) / (pn(j) * tn(j));
                          if (pv.row(j).norm() > norm_floor)
                              dp.row(j) += pv.row(j) * (dots(j) / (pn(j) * pn(j) * pn(j) * tn(j)));
                      }
                      tp.accumulate(ip, dp * (g(0, 0) / Scalar(n)));
                  });
}

/// Mean softmax cross-entropy of logits (b x k) against integer labels.
template <typename Scalar>
Var<Scalar> softmax_cross_entropy(Var<Scalar> logits, const std::vector<int> &labels)
{
    const auto &z = logits.value();
    if (static_cast<Eigen::Index>(labels.size()) != z.rows()) throw ShapeError("cross_entropy: label count");
    auto &t = *logits.tape;
    Matrix<Scalar> prob = z;
    Scalar total = 0;
    for (Eigen::Index r = 0; r < z.rows(); ++r) {
        const Scalar mx = z.row(r).maxCoeff();
        prob.row(r) = (z.row(r).array() - mx).exp();
        const Scalar s = prob.row(r).sum();
        prob.row(r) /= s;
        total -= std::log(std::max(prob(r, labels[static_cast<std::size_t>(r)]), std::numeric_limits<Scalar>::min()));
    }
    Matrix<Scalar> out(1, 1);
    out(0, 0) = total / Scalar(z.rows());
    const int il = logits.id;
    return t.push(std::move(out), t.needs_grad(il),
                  [il, prob = std::move(prob), labels](Tape<Scalar> &tp, int, const Matrix<Scalar> &g) {
                      Matrix<Scalar> dz = prob;
                      for (Eigen::Index r = 0; r < dz.rows(); ++r) dz(r, labels[static_cast<std::size_t>(r)]) -= 1;
                      tp.accumulate(il, dz * (g(0, 0) / Scalar(dz.rows())));
                  });
}

} // namespace geodit::ad
