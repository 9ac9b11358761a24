#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "mvgt/ops.hpp"
#include "mvgt/spatial.hpp"
#include "mvgt/tensor.hpp"

// Differentiable spatial encodings: the Gaussian-basis structure encoding
// over pairwise electrode distances, the centrality encoding derived from
// it, the shared brain-region embedding, and the per-pair projection that
// turns the structure encoding into a per-head attention bias.

namespace mvgt::spatial {

using numkit::Shape;
using numkit::Tape;
using numkit::Tensor;

inline constexpr double kSigmaFloor = 1e-2;

// Learnable parameters of the Gaussian basis. mu is spread evenly over the
// observed distance range, sigma starts at the linspace spacing, alpha at 1
// and beta at 0, so the initial encoding is a symmetric function of distance.
struct GaussianBasisBank {
    Tensor mu;    // [K]
    Tensor sigma; // [K]
    Tensor alpha; // [n x n]
    Tensor beta;  // [n x n]

    static GaussianBasisBank init(std::size_t K, std::size_t n,
                                  double max_distance, Tape& tape) {
        if (K < 1) throw ConfigError("gaussian basis: K must be >= 1");
        std::vector<double> mu_v(K), sigma_v(K);
        const double spacing =
            K > 1 ? max_distance / static_cast<double>(K - 1) : std::max(max_distance, 1.0);
        for (std::size_t k = 0; k < K; ++k) {
            mu_v[k] = K > 1 ? spacing * static_cast<double>(k) : 0.0;
            sigma_v[k] = spacing;
        }
        GaussianBasisBank bank;
        bank.mu = Tensor::leaf({K}, std::move(mu_v), tape);
        bank.sigma = Tensor::leaf({K}, std::move(sigma_v), tape);
        bank.alpha = Tensor::leaf({n, n}, std::vector<double>(n * n, 1.0), tape);
        bank.beta = Tensor::leaf({n, n}, std::vector<double>(n * n, 0.0), tape);
        return bank;
    }
};

// B(i,j,k) = G((alpha_ij * dist_ij + beta_ij - mu_k), sigma_k) with G the
// normalized Gaussian density; sigma is clamped at use sites.
inline Tensor gaussian_basis(const GaussianBasisBank& bank, const Tensor& dist) {
    using namespace numkit;
    if (dist.ndim() != 2 || dist.shape() != bank.alpha.shape())
        throw DimensionError("gaussian_basis: distance matrix " +
                             shape_str(dist.shape()) + " does not match alpha " +
                             shape_str(bank.alpha.shape()));
    const std::size_t n = dist.dim(0);
    const std::size_t K = bank.mu.numel();
    const Tensor shifted = add(mul(bank.alpha, dist), bank.beta); // [n x n]
    std::vector<Tensor> slabs;
    slabs.reserve(K);
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    for (std::size_t k = 0; k < K; ++k) {
        const Tensor mu_k = slice_lastdim(bank.mu, k, 1);
        const Tensor sig_k = clamp_min(slice_lastdim(bank.sigma, k, 1), kSigmaFloor);
        const Tensor inv_sig = reciprocal(sig_k);
        const Tensor z =
            mul_scalar_t(add_scalar_t(shifted, neg(mu_k)), inv_sig);
        const Tensor dens = mul_scalar_t(exp_op(scale(square(z), -0.5)),
                                         scale(inv_sig, inv_sqrt_2pi));
        slabs.push_back(reshape(dens, {n, n, 1}));
    }
    return concat_lastdim(slabs); // [n x n x K]
}

// e_i,k = sum_j B(i,j,k) (outgoing sum per source node), then c = e * W_E.
inline Tensor centrality_encoding(const Tensor& B, const Tensor& W_E) {
    using namespace numkit;
    if (B.ndim() != 3)
        throw DimensionError("centrality_encoding: B must be [n x n x K], got " +
                             shape_str(B.shape()));
    if (W_E.ndim() != 2 || W_E.dim(0) != B.dim(2))
        throw DimensionError("centrality_encoding: W_E " + shape_str(W_E.shape()) +
                             " does not match basis count " +
                             std::to_string(B.dim(2)));
    const Tensor e = sum_axis(B, 1); // [n x K]
    return matmul(e, W_E);           // [n x d]
}

// r_i = table[region(i)]; channels sharing a region share the row.
inline Tensor region_encoding(const std::vector<std::size_t>& region_idx,
                              const Tensor& table) {
    return numkit::gather_rows(table, region_idx);
}

// Per-pair two-layer perceptron along the basis axis, K -> K (GELU) -> M,
// identical weights for every ordered pair (node-permutation equivariant).
struct BiasProjection {
    Tensor w1; // [K x K]
    Tensor b1; // [K]
    Tensor w2; // [K x M]
    Tensor b2; // [M]
};

inline Tensor bias_projection(const Tensor& B, const BiasProjection& proj) {
    using namespace numkit;
    if (B.ndim() != 3)
        throw DimensionError("bias_projection: B must be [n x n x K], got " +
                             shape_str(B.shape()));
    const std::size_t n = B.dim(0);
    const std::size_t K = B.dim(2);
    const std::size_t M = proj.w2.dim(1);
    const Tensor flat = reshape(B, {n * n, K});
    const Tensor hidden = gelu(add_rowvec(matmul(flat, proj.w1), proj.b1));
    const Tensor out = add_rowvec(matmul(hidden, proj.w2), proj.b2);
    return reshape(out, {n, n, M});
}

inline Tensor distance_tensor(const ElectrodeLayout& layout) {
    const auto d = pairwise_distances(layout);
    const std::size_t n = layout.size();
    std::vector<double> flat(n * n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) flat[i * n + j] = d[i][j];
    return Tensor::constant({n, n}, std::move(flat));
}

inline double max_distance(const ElectrodeLayout& layout) {
    const auto d = pairwise_distances(layout);
    double m = 0.0;
    for (const auto& row : d)
        for (double v : row) m = std::max(m, v);
    return m;
}

} // namespace mvgt::spatial
