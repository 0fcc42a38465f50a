#include "facefit/tape.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <stdexcept>

namespace facefit::ad {

Var Tape::push(Node n, double value) {
    const auto id = static_cast<std::uint32_t>(nodes_.size());
    nodes_.push_back(n);
    val_.push_back(value);
    return Var{this, id, value};
}

Var Tape::input(double value) { return push(Node{0, 0, 0, Op::kLeaf, 0.0, 0.0}, value); }

Var Tape::constant(double value) { return push(Node{0, 0, 0, Op::kLeaf, 0.0, 0.0}, value); }

void Tape::bind_inputs(std::span<const double> values, std::span<Var> out) {
    assert(values.size() == out.size());
    for (std::size_t i = 0; i < values.size(); ++i) out[i] = input(values[i]);
}

Var Tape::unary(const Var& a, double value, double pa) {
    assert(a.tape == this);
    return push(Node{a.id, 0, 0, Op::kUnary, pa, 0.0}, value);
}

Var Tape::binary(const Var& a, const Var& b, double value, double pa, double pb) {
    assert(a.tape == this && b.tape == this);
    return push(Node{a.id, b.id, 0, Op::kBinary, pa, pb}, value);
}

Var Tape::affine(std::span<const Var> xs, const double* weights, double constant_term) {
    if (xs.empty()) return constant(constant_term);
#ifndef NDEBUG
    for (std::size_t i = 0; i < xs.size(); ++i) {
        assert(xs[i].tape == this);
        assert(xs[i].id == xs[0].id + i);
    }
#endif
    double value = constant_term;
    for (std::size_t k = 0; k < xs.size(); ++k) value += weights[k] * val_[xs[0].id + k];
    Node n{xs[0].id, static_cast<std::uint32_t>(xs.size()),
           static_cast<std::uint32_t>(ext_w_.size()), Op::kAffine, constant_term, 0.0};
    ext_w_.push_back(weights);
    return push(n, value);
}

Var Tape::weighted_sum(std::span<const Var> xs, std::span<const double> weights,
                       double constant_term) {
    assert(xs.size() == weights.size());
    const auto offset = static_cast<std::uint32_t>(pool_.size());
    double value = constant_term;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        assert(xs[i].tape == this);
        pool_.push_back({xs[i].id, weights[i]});
        value += weights[i] * xs[i].v;
    }
    return push(Node{offset, static_cast<std::uint32_t>(xs.size()), 0, Op::kPool, constant_term,
                     0.0},
                value);
}

Var Tape::weighted_sum_ids(std::span<const std::uint32_t> ids, std::span<const double> weights,
                           double constant_term) {
    assert(ids.size() == weights.size());
    const auto offset = static_cast<std::uint32_t>(pool_.size());
    double value = constant_term;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        pool_.push_back({ids[i], weights[i]});
        value += weights[i] * val_[ids[i]];
    }
    return push(Node{offset, static_cast<std::uint32_t>(ids.size()), 0, Op::kPool, constant_term,
                     0.0},
                value);
}

Var Tape::dot_pairs(std::span<const Var> a, std::span<const Var> b) {
    assert(a.size() == b.size());
    const auto offset = static_cast<std::uint32_t>(pairs_.size());
    double value = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        assert(a[i].tape == this && b[i].tape == this);
        pairs_.push_back({a[i].id, b[i].id});
        value += a[i].v * b[i].v;
    }
    return push(Node{offset, static_cast<std::uint32_t>(a.size()), 0, Op::kDotPairs, 0.0, 0.0},
                value);
}

void Tape::clear() {
    nodes_.clear();
    val_.clear();
    adj_.clear();
    ext_w_.clear();
    pool_.clear();
    pairs_.clear();
}

void Tape::backward(const Var& output) {
    if (output.tape != this || output.id >= nodes_.size())
        throw std::invalid_argument("backward: output is not on this tape");
    backward_weighted({&output, 1}, {});
}

void Tape::backward_weighted(std::span<const Var> outputs, std::span<const double> weights) {
    if (outputs.empty()) throw std::invalid_argument("backward: no outputs");
    adj_.assign(nodes_.size(), 0.0);
    std::uint32_t top = 0;
    for (std::size_t i = 0; i < outputs.size(); ++i) {
        if (outputs[i].tape != this || outputs[i].id >= nodes_.size())
            throw std::invalid_argument("backward: output is not on this tape");
        adj_[outputs[i].id] += weights.empty() ? 1.0 : weights[i];
        top = std::max(top, outputs[i].id);
    }
    for (std::uint32_t i = top;; --i) {
        const double g = adj_[i];
        if (g != 0.0) {
            const Node& n = nodes_[i];
            switch (n.op) {
            case Op::kLeaf:
                break;
            case Op::kUnary:
                adj_[n.a] += n.pa * g;
                break;
            case Op::kBinary:
                adj_[n.a] += n.pa * g;
                adj_[n.b] += n.pb * g;
                break;
            case Op::kAffine: {
                const double* w = ext_w_[n.aux];
                for (std::uint32_t k = 0; k < n.b; ++k) adj_[n.a + k] += w[k] * g;
                break;
            }
            case Op::kPool:
                for (std::uint32_t k = 0; k < n.b; ++k) {
                    const PoolEntry& e = pool_[n.a + k];
                    adj_[e.id] += e.w * g;
                }
                break;
            case Op::kDotPairs:
                for (std::uint32_t k = 0; k < n.b; ++k) {
                    const PairEntry& e = pairs_[n.a + k];
                    adj_[e.x] += val_[e.y] * g;
                    adj_[e.y] += val_[e.x] * g;
                }
                break;
            }
        }
        if (i == 0) break;
    }
}

double Tape::adjoint(const Var& x) const {
    assert(x.tape == this);
    return x.id < adj_.size() ? adj_[x.id] : 0.0;
}

std::vector<double> Tape::gradient(const Var& output, std::span<const Var> inputs) {
    backward(output);
    std::vector<double> g(inputs.size());
    for (std::size_t i = 0; i < inputs.size(); ++i) g[i] = adjoint(inputs[i]);
    return g;
}

Var operator+(const Var& a, const Var& b) { return a.tape->binary(a, b, a.v + b.v, 1.0, 1.0); }
Var operator+(const Var& a, double b) { return a.tape->unary(a, a.v + b, 1.0); }
Var operator+(double a, const Var& b) { return b.tape->unary(b, a + b.v, 1.0); }

Var operator-(const Var& a, const Var& b) { return a.tape->binary(a, b, a.v - b.v, 1.0, -1.0); }
Var operator-(const Var& a, double b) { return a.tape->unary(a, a.v - b, 1.0); }
Var operator-(double a, const Var& b) { return b.tape->unary(b, a - b.v, -1.0); }
Var operator-(const Var& a) { return a.tape->unary(a, -a.v, -1.0); }

Var operator*(const Var& a, const Var& b) { return a.tape->binary(a, b, a.v * b.v, b.v, a.v); }
Var operator*(const Var& a, double b) { return a.tape->unary(a, a.v * b, b); }
Var operator*(double a, const Var& b) { return b.tape->unary(b, a * b.v, a); }

Var operator/(const Var& a, const Var& b) {
    const double inv = 1.0 / b.v;
    return a.tape->binary(a, b, a.v * inv, inv, -a.v * inv * inv);
}
Var operator/(const Var& a, double b) { return a.tape->unary(a, a.v / b, 1.0 / b); }
Var operator/(double a, const Var& b) {
    const double inv = 1.0 / b.v;
    return b.tape->unary(b, a * inv, -a * inv * inv);
}

Var sqrt(const Var& a) {
    const double r = std::sqrt(a.v);
    return a.tape->unary(a, r, r > 0.0 ? 0.5 / r : 0.0);
}

Var abs(const Var& a) { return a.tape->unary(a, std::fabs(a.v), a.v < 0.0 ? -1.0 : 1.0); }

Var sin(const Var& a) { return a.tape->unary(a, std::sin(a.v), std::cos(a.v)); }

Var cos(const Var& a) { return a.tape->unary(a, std::cos(a.v), -std::sin(a.v)); }

Var leaky_relu(const Var& a, double slope) {
    return a.v > 0.0 ? a.tape->unary(a, a.v, 1.0) : a.tape->unary(a, slope * a.v, slope);
}

Var clamp01(const Var& a) {
    if (a.v < 0.0) return a.tape->unary(a, 0.0, 0.0);
    if (a.v > 1.0) return a.tape->unary(a, 1.0, 0.0);
    return a.tape->unary(a, a.v, 1.0);
}

} // namespace facefit::ad
