#include "facefit/losses.hpp"

#include "facefit/errors.hpp"
#include "facefit/kernels.hpp"
#include "facefit/rng.hpp"

#include <cassert>
#include <cmath>
#include <stdexcept>

namespace facefit {

Discriminator Discriminator::zeros() {
    Discriminator d;
    d.w1.assign(static_cast<std::size_t>(kHidden) * kIn, 0.0);
    d.b1.assign(kHidden, 0.0);
    d.w2.assign(static_cast<std::size_t>(kOut) * kHidden, 0.0);
    d.b2.assign(kOut, 0.0);
    return d;
}

Discriminator Discriminator::seeded(std::uint64_t seed, double scale) {
    Discriminator d = zeros();
    Rng rng(substream(seed, 0xD15Cull));
    for (double& w : d.w1) w = scale * rng.normal();
    for (double& w : d.w2) w = scale * rng.normal();
    return d;
}

std::size_t Discriminator::param_count() const {
    return w1.size() + b1.size() + w2.size() + b2.size();
}

void Discriminator::pack_params(std::span<double> out) const {
    assert(out.size() == param_count());
    std::size_t k = 0;
    for (double v : w1) out[k++] = v;
    for (double v : b1) out[k++] = v;
    for (double v : w2) out[k++] = v;
    for (double v : b2) out[k++] = v;
}

void Discriminator::unpack_params(std::span<const double> in) {
    assert(in.size() == param_count());
    std::size_t k = 0;
    for (double& v : w1) v = in[k++];
    for (double& v : b1) v = in[k++];
    for (double& v : w2) v = in[k++];
    for (double& v : b2) v = in[k++];
}

double landmark_loss(const LandmarkSet& predicted, const LandmarkSet& target) {
    double acc = 0.0;
    for (int k = 0; k < 68; ++k) {
        const double dx = predicted.points[k][0] - target.points[k][0];
        const double dy = predicted.points[k][1] - target.points[k][1];
        acc = acc + std::sqrt((dx * dx) + (dy * dy));
    }
    return acc / 68.0;
}

double photometric_loss(const RenderedFrame& rendered, const Image& target) {
    if (rendered.rgb.width != target.width || rendered.rgb.height != target.height)
        throw std::invalid_argument("photometric_loss: image size mismatch");
    std::size_t covered = 0;
    const double mean =
        kernels::masked_mean_distance(rendered.rgb.data, target.data, rendered.coverage, &covered);
    if (covered == 0) throw degenerate_render_error("photometric_loss: render covers no pixels");
    return mean;
}

double perceptual_loss(const Embedding& theta, const Embedding& theta_prime) {
    if (theta.values.size() != theta_prime.values.size() || theta.values.empty())
        throw std::invalid_argument("perceptual_loss: embedding size mismatch");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < theta.values.size(); ++i) {
        dot += theta.values[i] * theta_prime.values[i];
        na += theta.values[i] * theta.values[i];
        nb += theta_prime.values[i] * theta_prime.values[i];
    }
    if (na == 0.0 || nb == 0.0)
        throw std::invalid_argument("perceptual_loss: zero-norm embedding");
    return 1.0 - dot / (std::sqrt(na) * std::sqrt(nb));
}

double huber(double residual, double delta) {
    if (!(delta > 0.0)) throw std::invalid_argument("huber: delta must be positive");
    const double a = std::fabs(residual);
    if (a <= delta) return 0.5 * (residual * residual);
    return delta * (a - 0.5 * delta);
}

std::array<double, 2> discriminator_forward(const Discriminator& disc,
                                            const CoeffVector& coeffs) {
    double hidden[Discriminator::kHidden];
    for (int j = 0; j < Discriminator::kHidden; ++j) {
        double acc = disc.b1[j];
        const double* w = disc.w1.data() + static_cast<std::size_t>(j) * Discriminator::kIn;
        for (int i = 0; i < Discriminator::kIn; ++i) acc += w[i] * coeffs.values[i];
        hidden[j] = acc > 0.0 ? acc : disc.leaky_slope * acc;
    }
    std::array<double, 2> logits{};
    for (int k = 0; k < Discriminator::kOut; ++k) {
        double acc = disc.b2[k];
        const double* w = disc.w2.data() + static_cast<std::size_t>(k) * Discriminator::kHidden;
        for (int j = 0; j < Discriminator::kHidden; ++j) acc += w[j] * hidden[j];
        logits[k] = acc;
    }
    return logits;
}

namespace {

double pair_branch(const Discriminator& disc, const CoeffVector& a, std::span<const double> la,
                   const CoeffVector& b, std::span<const double> lb, double delta) {
    const auto logits_a = discriminator_forward(disc, a);
    const auto logits_b = discriminator_forward(disc, b);
    double acc = 0.0;
    for (int k = 0; k < 2; ++k) acc += huber(logits_a[k] - la[k], delta);
    for (int k = 0; k < 2; ++k) acc += huber(logits_b[k] - lb[k], delta);
    return acc;
}

} // namespace

double consistency_loss(const Discriminator& disc, const CoeffVector& c_g, const CoeffVector& c_o,
                        const CoeffVector& c_n, std::span<const double> d_g,
                        std::span<const double> d_o, std::span<const double> d_n, double delta) {
    if (d_g.size() != 2 || d_o.size() != 2 || d_n.size() != 2)
        throw std::invalid_argument("consistency_loss: labels must be 2-vectors");
    const double l_co = pair_branch(disc, c_g, d_g, c_o, d_o, delta);
    const double l_cn = pair_branch(disc, c_g, d_g, c_n, d_n, delta);
    return l_co + l_cn;
}

double guide_total(double l_k, double l_gp, double l_p, double l_r, const LossWeights& w) {
    return w.alpha_k * l_k + w.alpha_gp * l_gp + w.alpha_p * l_p + w.alpha_r * l_r;
}

double robust_total(double l_o, double l_n, double l_c, const LossWeights& w) {
    return w.beta_o * l_o + w.beta_n * l_n - w.beta_c * l_c;
}

namespace tapeops {

using ad::Var;

Var landmark_loss(ad::Tape& tape, std::span<const Var> landmark_xy, const LandmarkSet& target) {
    if (landmark_xy.size() != 136)
        throw std::invalid_argument("landmark_loss: need 68 landmark vars");
    std::vector<Var> dists;
    dists.reserve(68);
    for (int k = 0; k < 68; ++k) {
        const Var dx = landmark_xy[2 * k] - target.points[k][0];
        const Var dy = landmark_xy[2 * k + 1] - target.points[k][1];
        dists.push_back(ad::sqrt((dx * dx) + (dy * dy)));
    }
    std::vector<double> ones(68, 1.0);
    return tape.weighted_sum(dists, ones, 0.0) / 68.0;
}

Var photometric_loss(ad::Tape& tape, const TapeFace& rendered, const Image& target) {
    if (rendered.frame.rgb.width != target.width || rendered.frame.rgb.height != target.height)
        throw std::invalid_argument("photometric_loss: image size mismatch");
    if (rendered.covered.empty())
        throw degenerate_render_error("photometric_loss: render covers no pixels");
    std::vector<Var> dists;
    dists.reserve(rendered.covered.size());
    for (std::size_t i = 0; i < rendered.covered.size(); ++i) {
        const std::uint32_t p = rendered.covered[i];
        const Var dr = rendered.pixel_rgb[3 * i + 0] - target.data[3 * p + 0];
        const Var dg = rendered.pixel_rgb[3 * i + 1] - target.data[3 * p + 1];
        const Var db = rendered.pixel_rgb[3 * i + 2] - target.data[3 * p + 2];
        dists.push_back(ad::sqrt((dr * dr + dg * dg) + db * db));
    }
    const std::vector<double> ones(dists.size(), 1.0);
    return tape.weighted_sum(dists, ones, 0.0) / static_cast<double>(dists.size());
}

Var huber(const Var& residual, double delta) {
    if (!(delta > 0.0)) throw std::invalid_argument("huber: delta must be positive");
    const double a = std::fabs(residual.value());
    if (a <= delta) return 0.5 * (residual * residual);
    return delta * (ad::abs(residual) - 0.5 * delta);
}

std::array<Var, 2> discriminator_forward(ad::Tape& tape, const Discriminator& disc,
                                         std::span<const Var> coeff_vars) {
    if (coeff_vars.size() != coeff::kTotal)
        throw std::invalid_argument("discriminator_forward: need 257 coefficient vars");
    std::vector<Var> pre(Discriminator::kHidden);
    for (int j = 0; j < Discriminator::kHidden; ++j)
        pre[j] = tape.affine(coeff_vars,
                             disc.w1.data() + static_cast<std::size_t>(j) * Discriminator::kIn,
                             disc.b1[j]);
    std::vector<Var> act(Discriminator::kHidden);
    for (int j = 0; j < Discriminator::kHidden; ++j)
        act[j] = ad::leaky_relu(pre[j], disc.leaky_slope);
    std::array<Var, 2> logits;
    for (int k = 0; k < Discriminator::kOut; ++k)
        logits[k] = tape.affine(act,
                                disc.w2.data() + static_cast<std::size_t>(k) * Discriminator::kHidden,
                                disc.b2[k]);
    return logits;
}

DiscVars bind_discriminator(ad::Tape& tape, const Discriminator& disc) {
    DiscVars vars;
    vars.params.resize(disc.param_count());
    std::vector<double> packed(disc.param_count());
    disc.pack_params(packed);
    tape.bind_inputs(packed, vars.params);
    return vars;
}

std::array<Var, 2> discriminator_forward_params(ad::Tape& tape, const DiscVars& vars,
                                                const Discriminator& disc,
                                                const CoeffVector& coeffs) {
    std::vector<Var> pre(Discriminator::kHidden);
    const auto w1 = vars.w1();
    const auto b1 = vars.b1();
    for (int j = 0; j < Discriminator::kHidden; ++j) {
        const Var lin = tape.affine(w1.subspan(static_cast<std::size_t>(j) * Discriminator::kIn,
                                               Discriminator::kIn),
                                    coeffs.values.data(), 0.0);
        pre[j] = lin + b1[j];
    }
    std::vector<Var> act(Discriminator::kHidden);
    for (int j = 0; j < Discriminator::kHidden; ++j)
        act[j] = ad::leaky_relu(pre[j], disc.leaky_slope);
    std::array<Var, 2> logits;
    const auto w2 = vars.w2();
    const auto b2 = vars.b2();
    for (int k = 0; k < Discriminator::kOut; ++k) {
        const Var dot = tape.dot_pairs(
            w2.subspan(static_cast<std::size_t>(k) * Discriminator::kHidden, Discriminator::kHidden),
            act);
        logits[k] = dot + b2[k];
    }
    return logits;
}

Var regularization_loss(ad::Tape& tape, std::span<const Var> coeff_vars, const LossWeights& w) {
    if (coeff_vars.size() != coeff::kTotal)
        throw std::invalid_argument("regularization_loss: need 257 coefficient vars");
    auto sum_squares = [&](int offset, int size) {
        std::vector<Var> sq(static_cast<std::size_t>(size));
        for (int i = 0; i < size; ++i)
            sq[i] = coeff_vars[offset + i] * coeff_vars[offset + i];
        const std::vector<double> ones(static_cast<std::size_t>(size), 1.0);
        return tape.weighted_sum(sq, ones, 0.0);
    };
    const Var ss = sum_squares(coeff::kShapeOffset, coeff::kShapeSize);
    const Var st = sum_squares(coeff::kTexOffset, coeff::kTexSize);
    const Var se = sum_squares(coeff::kExprOffset, coeff::kExprSize);
    return w.w_s * ss + w.w_t * st + w.w_e * se;
}

} // namespace tapeops

} // namespace facefit
