#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace facefit::ad {

class Tape;

/// Handle to one recorded scalar. Carries its forward value so expression
/// code can branch on magnitudes without touching the tape.
struct Var {
    Tape* tape = nullptr;
    std::uint32_t id = 0;
    double v = 0.0;

    double value() const { return v; }
};

/// Reverse-mode tape over scalar nodes. Besides unary/binary arithmetic it
/// records three fused forms that keep the hot paths cheap:
///   - affine: c + sum_k w[k] * x[first+k] over a contiguous id range, with
///     the weights borrowed from caller-owned storage (basis rows, fixed
///     projection matrices) rather than copied;
///   - weighted_sum: c + sum w_i * x_i over an arbitrary id list;
///   - dot_pairs: sum a_i * b_i where both sides are recorded scalars.
/// A tape is confined to one fitting session; clear() keeps capacity so the
/// per-iteration re-record does not allocate.
class Tape {
public:
    Var input(double value);
    Var constant(double value);
    void bind_inputs(std::span<const double> values, std::span<Var> out);

    /// xs must be contiguous on the tape (as produced by consecutive record
    /// calls). weights must stay alive until the next clear().
    Var affine(std::span<const Var> xs, const double* weights, double constant_term);
    Var weighted_sum(std::span<const Var> xs, std::span<const double> weights,
                     double constant_term);
    Var weighted_sum_ids(std::span<const std::uint32_t> ids, std::span<const double> weights,
                         double constant_term);
    Var dot_pairs(std::span<const Var> a, std::span<const Var> b);

    std::size_t size() const { return nodes_.size(); }
    void clear();

    /// Reverse sweep from output; afterwards adjoint() is valid for every
    /// node with id <= output.id. Throws std::invalid_argument if output was
    /// not recorded on this tape.
    void backward(const Var& output);

    /// Reverse sweep seeded with d(loss)/d(outputs[i]) = weights[i]; used to
    /// chain a downstream tape's gradient through this one.
    void backward_weighted(std::span<const Var> outputs, std::span<const double> weights);

    double adjoint(const Var& x) const;

    /// backward() plus gathering d(output)/d(input) for each given input.
    std::vector<double> gradient(const Var& output, std::span<const Var> inputs);

    // Recording primitives used by the operator overloads.
    Var unary(const Var& a, double value, double pa);
    Var binary(const Var& a, const Var& b, double value, double pa, double pb);

private:
    enum class Op : std::uint8_t { kLeaf, kUnary, kBinary, kAffine, kPool, kDotPairs };

    struct Node {
        std::uint32_t a = 0;
        std::uint32_t b = 0;
        std::uint32_t aux = 0;
        Op op = Op::kLeaf;
        double pa = 0.0;
        double pb = 0.0;
    };

    struct PoolEntry {
        std::uint32_t id;
        double w;
    };

    struct PairEntry {
        std::uint32_t x;
        std::uint32_t y;
    };

    Var push(Node n, double value);

    std::vector<Node> nodes_;
    std::vector<double> val_;
    std::vector<double> adj_;
    std::vector<const double*> ext_w_;
    std::vector<PoolEntry> pool_;
    std::vector<PairEntry> pairs_;
};

// Arithmetic over recorded scalars. Mixed Var/double forms fold the constant
// into the node instead of recording a leaf for it.
Var operator+(const Var& a, const Var& b);
Var operator+(const Var& a, double b);
Var operator+(double a, const Var& b);
Var operator-(const Var& a, const Var& b);
Var operator-(const Var& a, double b);
Var operator-(double a, const Var& b);
Var operator-(const Var& a);
Var operator*(const Var& a, const Var& b);
Var operator*(const Var& a, double b);
Var operator*(double a, const Var& b);
Var operator/(const Var& a, const Var& b);
Var operator/(const Var& a, double b);
Var operator/(double a, const Var& b);

/// d(sqrt)/dx at 0 is taken as 0 so exactly-zero residuals stay finite.
Var sqrt(const Var& a);
Var abs(const Var& a);
Var sin(const Var& a);
Var cos(const Var& a);
Var leaky_relu(const Var& a, double slope);
Var clamp01(const Var& a);

} // namespace facefit::ad
