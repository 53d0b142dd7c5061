#pragma once

#include "geodit/autodiff.hpp"
#include "geodit/rng.hpp"
#include "geodit/types.hpp"

#include <cmath>
#include <map>
#include <string>
#include <vector>

namespace geodit {

enum class Init { zeros, xavier, normal_002, normal_1 };

/// Named, ordered collection of trainable matrices with gradient buffers.
/// Entries never move once created, so tapes may borrow them.
template <typename Scalar>
class ParameterSet {
public:
    struct Entry {
        Matrix<Scalar> value;
        Matrix<Scalar> grad;
    };

    Matrix<Scalar> &create(const std::string &name, Eigen::Index rows, Eigen::Index cols, Init init,
                           std::uint64_t seed)
    {
        if (entries_.count(name)) throw std::logic_error("duplicate parameter " + name);
        Entry &e = entries_[name];
        e.value = Matrix<Scalar>::Zero(rows, cols);
        initialize(e.value, init, derive_seed(seed, hash_name(name)));
        return e.value;
    }

    bool contains(const std::string &name) const { return entries_.count(name) != 0; }

    Matrix<Scalar> &value(const std::string &name) { return at(name).value; }
    const Matrix<Scalar> &value(const std::string &name) const { return at(name).value; }
    Matrix<Scalar> &grad(const std::string &name) { return at(name).grad; }

    ad::Var<Scalar> var(ad::Tape<Scalar> &tape, const std::string &name)
    {
        Entry &e = at(name);
        return tape.parameter(e.value, &e.grad);
    }

    /// x * W + b using parameters `<prefix>.w` and `<prefix>.b`.
    ad::Var<Scalar> linear(ad::Tape<Scalar> &tape, const std::string &prefix, ad::Var<Scalar> x)
    {
        return ad::linear(x, var(tape, prefix + ".w"), var(tape, prefix + ".b"));
    }

    void create_linear(const std::string &prefix, Eigen::Index in, Eigen::Index out, Init weight_init,
                       std::uint64_t seed, Init bias_init = Init::zeros)
    {
        create(prefix + ".w", in, out, weight_init, seed);
        create(prefix + ".b", 1, out, bias_init, seed);
    }

    void zero_grad()
    {
        for (auto &[name, e] : entries_) e.grad.resize(0, 0);
    }

    /// Gradient of `name`, zeros when no gradient reached it.
    Matrix<Scalar> grad_or_zero(const std::string &name) const
    {
        const Entry &e = at(name);
        if (e.grad.size() == 0) return Matrix<Scalar>::Zero(e.value.rows(), e.value.cols());
        return e.grad;
    }

    std::vector<std::string> names() const
    {
        std::vector<std::string> out;
        out.reserve(entries_.size());
        for (const auto &[name, e] : entries_) out.push_back(name);
        return out;
    }

    std::size_t count() const
    {
        std::size_t n = 0;
        for (const auto &[name, e] : entries_) n += static_cast<std::size_t>(e.value.size());
        return n;
    }

    std::map<std::string, Entry> &entries() { return entries_; }
    const std::map<std::string, Entry> &entries() const { return entries_; }

    static void initialize(Matrix<Scalar> &m, Init init, std::uint64_t seed)
    {
        Rng rng(seed);
        switch (init) {
        case Init::zeros:
            m.setZero();
            break;
        case Init::xavier: {
            const double bound = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
            for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = Scalar(rng.uniform(-bound, bound));
            break;
        }
        case Init::normal_002:
            for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = Scalar(rng.normal(0.0, 0.02));
            break;
        case Init::normal_1:
            for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = Scalar(rng.normal());
            break;
        }
    }

private:
    Entry &at(const std::string &name)
    {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw std::out_of_range("unknown parameter " + name);
        return it->second;
    }
    const Entry &at(const std::string &name) const
    {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw std::out_of_range("unknown parameter " + name);
        return it->second;
    }

    std::map<std::string, Entry> entries_;
};

/// Adam with decoupled weight decay.
template <typename Scalar>
class AdamW {
public:
    struct Options {
        double learning_rate = 1e-4;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
        double weight_decay = 0.0;
    };

    explicit AdamW(Options opt) : opt_(opt) {}

    void step(ParameterSet<Scalar> &params)
    {
        ++t_;
        const Scalar bc1 = Scalar(1.0 - std::pow(opt_.beta1, t_));
        const Scalar bc2 = Scalar(1.0 - std::pow(opt_.beta2, t_));
        const Scalar lr = Scalar(opt_.learning_rate);
        const Scalar b1 = Scalar(opt_.beta1), b2 = Scalar(opt_.beta2), eps = Scalar(opt_.eps);
        for (auto &[name, e] : params.entries()) {
            if (e.grad.size() == 0) continue;
            auto &s = state_[name];
            if (s.m.size() == 0) {
                s.m = Matrix<Scalar>::Zero(e.value.rows(), e.value.cols());
                s.v = Matrix<Scalar>::Zero(e.value.rows(), e.value.cols());
            }
            if (opt_.weight_decay != 0.0) e.value *= Scalar(1.0 - opt_.learning_rate * opt_.weight_decay);
            s.m = b1 * s.m + (Scalar(1) - b1) * e.grad;
            s.v = b2 * s.v + (Scalar(1) - b2) * e.grad.cwiseAbs2();
            e.value.array() -= lr * (s.m.array() / bc1) / ((s.v.array() / bc2).sqrt() + eps);
        }
    }

    struct State {
        Matrix<Scalar> m, v;
    };

    long steps() const { return t_; }
    const std::map<std::string, State> &state() const { return state_; }

    /// Restores moments and step count saved from another instance.
    void restore(long steps, std::map<std::string, State> state)
    {
        t_ = steps;
        state_ = std::move(state);
    }

private:
    Options opt_;
    long t_ = 0;
    std::map<std::string, State> state_;
};

} // namespace geodit
