#pragma once

#include <vector>

#include "disbench/mat.hpp"
#include "disbench/nets.hpp"

namespace disbench {

// RBF kernel mixture scales. The mixture value is the unweighted sum of
// exp(-|a-b|^2 / (2*sigma^2)) over all bandwidths.
struct KernelSpec {
    std::vector<double> bandwidths;

    // Powers of two from 2^-3 to 2^3.
    static KernelSpec default_grid();
    void validate() const;  // non-empty, strictly positive
};

struct MmdOptions {
    // Eq-as-printed uses 2/N^2 over all cross pairs; the unbiased variant
    // switches to 2/(N(N-1)) excluding i==j, for sensitivity analysis.
    bool cross_unbiased = false;
};

// Entry (i,j) = Euclidean distance between rows i and j. Symmetric, zero diagonal.
Mat pairwise_distances(const Mat& b);

// A_ij = m_ij - rowmean_i - colmean_j + grandmean. Row and column sums of the
// result are zero. Self-adjoint as a linear operator, so it is also the
// backward map for itself.
Mat double_center(const Mat& m);

// sqrt(mean(A .* B)) over the double-centered distance matrices of z1 and z2.
// Pre-sqrt values in (-1e-12, 0) are clamped to 0; below that is an error.
double dcov(const Mat& z1, const Mat& z2);

// dcov(z1,z2) / sqrt(dcov(z1,z1) * dcov(z2,z2)), in [0, 1]. Throws
// DegenerateInput when either self-dcov is <= 1e-10 (constant subspace).
double dcor(const Mat& z1, const Mat& z2);

// Quadratic-time MMD estimator: within-subspace terms normalized by
// 1/(N(N-1)) excluding the diagonal, cross term by 2/N^2 over all pairs.
double mmd(const Mat& z1, const Mat& z2, const KernelSpec& kernel,
           const MmdOptions& opt = {});

// Donsker-Varadhan bound: mean_i T(z1_i, z2_i) - log mean_i exp(T(z1_i,
// z2_perm(i))), with max-subtraction inside the log-mean-exp. The marginal is
// formed by permuting z2 rows only.
double mine_bound(const MineNet& t, const Mat& z1, const Mat& z2,
                  const std::vector<int>& perm);

struct ValueGrads {
    double value = 0.0;
    Mat g1;  // d value / d z1
    Mat g2;  // d value / d z2
};

ValueGrads dcor_grad(const Mat& z1, const Mat& z2);
ValueGrads mmd_grad(const Mat& z1, const Mat& z2, const KernelSpec& kernel,
                    const MmdOptions& opt = {});

struct MineGrads {
    double value = 0.0;
    Mat g1;
    Mat g2;
    std::vector<double> gtheta;  // d value / d T parameters
};

struct MineGradOptions {
    // Optional EMA-corrected estimator gradient (applies to gtheta only):
    // the log-term denominator is replaced by a running average of
    // mean(exp T). Off by default; ema_state persists across calls.
    bool ema_correction = false;
    double ema_decay = 0.99;
    double* ema_state = nullptr;
};

MineGrads mine_grad(const MineNet& t, const Mat& z1, const Mat& z2,
                    const std::vector<int>& perm, const MineGradOptions& opt = {});

enum class Measure { dcor, mmd, mine };

struct DependenceAux {
    const KernelSpec* kernel = nullptr;       // mmd
    const MmdOptions* mmd_opt = nullptr;      // mmd, optional
    const MineNet* net = nullptr;             // mine
    const std::vector<int>* perm = nullptr;   // mine
};

// Uniform gradient surface over the three measures; for MINE the latent
// gradients are taken at fixed T (use mine_grad directly for gtheta).
ValueGrads dependence_gradients(Measure m, const Mat& z1, const Mat& z2,
                                const DependenceAux& aux);

}  // namespace disbench
