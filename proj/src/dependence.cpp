#include "disbench/dependence.hpp"

#include <algorithm>
#include <cmath>

#include "disbench/errors.hpp"

namespace disbench {

namespace {

constexpr double kDcovClamp = -1e-12;
constexpr double kDcorEps = 1e-10;

void check_batch(const Mat& b, const char* who) {
    if (b.rows < 1 || b.cols < 1) throw InvalidInput(std::string(who) + ": empty batch");
    if (!b.all_finite()) throw InvalidInput(std::string(who) + ": non-finite entries");
}

double sq_dist(const double* a, const double* b, int d) {
    double acc = 0.0;
    for (int k = 0; k < d; ++k) acc += sq(a[k] - b[k]);
    return acc;
}

// mean(A .* B) / clamp, shared by dcov and its gradient path.
double dcov_presqrt(const Mat& a, const Mat& b) {
    double acc = 0.0;
    for (size_t i = 0; i < a.v.size(); ++i) acc += a.v[i] * b.v[i];
    return acc / (static_cast<double>(a.rows) * static_cast<double>(a.rows));
}

double sqrt_clamped(double s, const char* who) {
    if (s < kDcovClamp) throw NumericalError(std::string(who) + ": pre-sqrt value below clamp");
    return std::sqrt(std::max(s, 0.0));
}

// Backward of the pairwise-distance map: given upstream g on the distance
// matrix of z, accumulate d/dz. Zero-distance pairs contribute nothing
// (subgradient choice; the diagonal always lands here).
void pdist_backward(const Mat& z, const Mat& dist, const Mat& g, Mat& gz) {
    const int n = z.rows, d = z.cols;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            if (i == j) continue;
            const double dij = dist.at(i, j);
            if (dij <= 0.0) continue;
            const double coef = g.at(i, j) / dij;
            if (coef == 0.0) continue;
            for (int k = 0; k < d; ++k) {
                const double diff = z.at(i, k) - z.at(j, k);
                gz.at(i, k) += coef * diff;
                gz.at(j, k) -= coef * diff;
            }
        }
    }
}

struct DcovParts {
    Mat dist1, dist2;  // raw pairwise distances
    Mat a, b;          // double-centered
    double s12 = 0.0, s11 = 0.0, s22 = 0.0;  // pre-sqrt means of products
    double v12 = 0.0, v11 = 0.0, v22 = 0.0;  // dcov values
};

DcovParts dcov_parts(const Mat& z1, const Mat& z2) {
    DcovParts p;
    p.dist1 = pairwise_distances(z1);
    p.dist2 = pairwise_distances(z2);
    p.a = double_center(p.dist1);
    p.b = double_center(p.dist2);
    p.s12 = dcov_presqrt(p.a, p.b);
    p.s11 = dcov_presqrt(p.a, p.a);
    p.s22 = dcov_presqrt(p.b, p.b);
    p.v12 = sqrt_clamped(p.s12, "dcov");
    p.v11 = sqrt_clamped(p.s11, "dcov");
    p.v22 = sqrt_clamped(p.s22, "dcov");
    return p;
}

double kernel_mix(double sqd, const KernelSpec& k) {
    double acc = 0.0;
    for (double sigma : k.bandwidths) acc += std::exp(-sqd / (2.0 * sigma * sigma));
    return acc;
}

// d/d(sqd) of the kernel mixture.
double kernel_mix_dsq(double sqd, const KernelSpec& k) {
    double acc = 0.0;
    for (double sigma : k.bandwidths) {
        const double s2 = 2.0 * sigma * sigma;
        acc += std::exp(-sqd / s2) * (-1.0 / s2);
    }
    return acc;
}

}  // namespace

KernelSpec KernelSpec::default_grid() {
    KernelSpec k;
    for (int e = -3; e <= 3; ++e) k.bandwidths.push_back(std::pow(2.0, e));
    return k;
}

void KernelSpec::validate() const {
    if (bandwidths.empty()) throw InvalidInput("kernel: no bandwidths");
    for (double s : bandwidths)
        if (!(s > 0.0) || !std::isfinite(s)) throw InvalidInput("kernel: bandwidths must be positive");
}

Mat pairwise_distances(const Mat& b) {
    check_batch(b, "pairwise_distances");
    const int n = b.rows;
    Mat d(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            const double dist = std::sqrt(sq_dist(b.row(i), b.row(j), b.cols));
            d.at(i, j) = dist;
            d.at(j, i) = dist;
        }
    return d;
}

Mat double_center(const Mat& m) {
    if (m.rows != m.cols) throw ShapeMismatch("double_center: matrix not square");
    if (!m.all_finite()) throw InvalidInput("double_center: non-finite entries");
    const int n = m.rows;
    std::vector<double> rmean(static_cast<size_t>(n), 0.0), cmean(static_cast<size_t>(n), 0.0);
    double gmean = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            rmean[static_cast<size_t>(i)] += m.at(i, j);
            cmean[static_cast<size_t>(j)] += m.at(i, j);
            gmean += m.at(i, j);
        }
    for (auto& x : rmean) x /= n;
    for (auto& x : cmean) x /= n;
    gmean /= static_cast<double>(n) * n;
    Mat a(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            a.at(i, j) = m.at(i, j) - rmean[static_cast<size_t>(i)] - cmean[static_cast<size_t>(j)] + gmean;
    return a;
}

double dcov(const Mat& z1, const Mat& z2) {
    check_batch(z1, "dcov");
    check_batch(z2, "dcov");
    if (z1.rows != z2.rows) throw ShapeMismatch("dcov: batches have different N");
    if (z1.rows < 2) throw InvalidInput("dcov: need N >= 2");
    const Mat a = double_center(pairwise_distances(z1));
    const Mat b = double_center(pairwise_distances(z2));
    return sqrt_clamped(dcov_presqrt(a, b), "dcov");
}

double dcor(const Mat& z1, const Mat& z2) {
    check_batch(z1, "dcor");
    check_batch(z2, "dcor");
    if (z1.rows != z2.rows) throw ShapeMismatch("dcor: batches have different N");
    if (z1.rows < 2) throw InvalidInput("dcor: need N >= 2");
    const DcovParts p = dcov_parts(z1, z2);
    if (p.v11 <= kDcorEps || p.v22 <= kDcorEps)
        throw DegenerateInput("dcor: constant subspace, skip this batch");
    return p.v12 / std::sqrt(p.v11 * p.v22);
}

double mmd(const Mat& z1, const Mat& z2, const KernelSpec& kernel, const MmdOptions& opt) {
    check_batch(z1, "mmd");
    check_batch(z2, "mmd");
    kernel.validate();
    if (z1.cols != z2.cols) throw ShapeMismatch("mmd: subspace dimensions differ");
    if (z1.rows != z2.rows) throw ShapeMismatch("mmd: batches have different N");
    const int n = z1.rows;
    if (n < 2) throw InvalidInput("mmd: need N >= 2");

    // The cross sum is accumulated diagonal-first, then as (i,j)+(j,i) pairs,
    // so swapping the arguments adds the same values in the same order and
    // mmd(z1,z2) == mmd(z2,z1) holds bit-exactly.
    double within1 = 0.0, within2 = 0.0, cross = 0.0;
    if (!opt.cross_unbiased)
        for (int i = 0; i < n; ++i)
            cross += kernel_mix(sq_dist(z1.row(i), z2.row(i), z1.cols), kernel);
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            within1 += kernel_mix(sq_dist(z1.row(i), z1.row(j), z1.cols), kernel);
            within2 += kernel_mix(sq_dist(z2.row(i), z2.row(j), z2.cols), kernel);
            cross += kernel_mix(sq_dist(z1.row(i), z2.row(j), z1.cols), kernel) +
                     kernel_mix(sq_dist(z2.row(i), z1.row(j), z1.cols), kernel);
        }
    within1 *= 2.0;  // within sums count unordered pairs once
    within2 *= 2.0;
    const double nn1 = static_cast<double>(n) * (n - 1);
    const double cross_norm = opt.cross_unbiased ? 2.0 / nn1 : 2.0 / (static_cast<double>(n) * n);
    return within1 / nn1 + within2 / nn1 - cross_norm * cross;
}

double mine_bound(const MineNet& t, const Mat& z1, const Mat& z2,
                  const std::vector<int>& perm) {
    check_batch(z1, "mine_bound");
    check_batch(z2, "mine_bound");
    if (z1.rows != z2.rows) throw ShapeMismatch("mine_bound: batches have different N");
    const int n = z1.rows;
    if (n < 2) throw InvalidInput("mine_bound: need N >= 2");
    if (static_cast<int>(perm.size()) != n) throw InvalidInput("mine_bound: bad permutation size");
    std::vector<char> seen(static_cast<size_t>(n), 0);
    for (int p : perm) {
        if (p < 0 || p >= n || seen[static_cast<size_t>(p)])
            throw InvalidInput("mine_bound: not a permutation");
        seen[static_cast<size_t>(p)] = 1;
    }

    const std::vector<double> joint = t.forward(z1, z2, {}, nullptr);
    const std::vector<double> marg = t.forward(z1, z2, perm, nullptr);
    double mean_joint = 0.0;
    for (double v : joint) mean_joint += v;
    mean_joint /= n;
    const double mx = *std::max_element(marg.begin(), marg.end());
    double mean_exp = 0.0;
    for (double v : marg) mean_exp += std::exp(v - mx);
    mean_exp /= n;
    const double value = mean_joint - (mx + std::log(mean_exp));
    if (!std::isfinite(value)) throw NumericalError("mine_bound: non-finite value");
    return value;
}

ValueGrads dcor_grad(const Mat& z1, const Mat& z2) {
    check_batch(z1, "dcor_grad");
    check_batch(z2, "dcor_grad");
    if (z1.rows != z2.rows) throw ShapeMismatch("dcor_grad: batches have different N");
    const int n = z1.rows;
    if (n < 2) throw InvalidInput("dcor_grad: need N >= 2");
    const DcovParts p = dcov_parts(z1, z2);
    if (p.v11 <= kDcorEps || p.v22 <= kDcorEps)
        throw DegenerateInput("dcor_grad: constant subspace, skip this batch");

    ValueGrads out;
    out.value = p.v12 / std::sqrt(p.v11 * p.v22);
    out.g1 = Mat(n, z1.cols);
    out.g2 = Mat(n, z2.cols);

    // R = sqrt(S12) * S11^(-1/4) * S22^(-1/4) in terms of the pre-sqrt means.
    const double inv_denom = 1.0 / std::sqrt(p.v11 * p.v22);
    const double dR_dS12 = p.v12 > 0.0 ? inv_denom / (2.0 * p.v12) : 0.0;
    const double dR_dS11 = -out.value / (4.0 * p.s11);
    const double dR_dS22 = -out.value / (4.0 * p.s22);

    const double n2 = static_cast<double>(n) * n;
    Mat ga(n, n), gb(n, n);
    for (size_t i = 0; i < ga.v.size(); ++i) {
        ga.v[i] = (dR_dS12 * p.b.v[i] + dR_dS11 * 2.0 * p.a.v[i]) / n2;
        gb.v[i] = (dR_dS12 * p.a.v[i] + dR_dS22 * 2.0 * p.b.v[i]) / n2;
    }
    pdist_backward(z1, p.dist1, double_center(ga), out.g1);
    pdist_backward(z2, p.dist2, double_center(gb), out.g2);
    return out;
}

ValueGrads mmd_grad(const Mat& z1, const Mat& z2, const KernelSpec& kernel,
                    const MmdOptions& opt) {
    check_batch(z1, "mmd_grad");
    check_batch(z2, "mmd_grad");
    kernel.validate();
    if (z1.cols != z2.cols) throw ShapeMismatch("mmd_grad: subspace dimensions differ");
    if (z1.rows != z2.rows) throw ShapeMismatch("mmd_grad: batches have different N");
    const int n = z1.rows;
    if (n < 2) throw InvalidInput("mmd_grad: need N >= 2");
    const int d = z1.cols;

    ValueGrads out;
    out.value = mmd(z1, z2, kernel, opt);
    out.g1 = Mat(n, d);
    out.g2 = Mat(n, d);
    const double nn1 = static_cast<double>(n) * (n - 1);
    const double cross_norm = opt.cross_unbiased ? 2.0 / nn1 : 2.0 / (static_cast<double>(n) * n);

    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            if (i != j) {
                // d(sqd)/dz1_i = 2 (z1_i - z1_j)
                const double sqd1 = sq_dist(z1.row(i), z1.row(j), d);
                const double c1 = (1.0 / nn1) * kernel_mix_dsq(sqd1, kernel) * 2.0;
                for (int k = 0; k < d; ++k) {
                    const double diff = z1.at(i, k) - z1.at(j, k);
                    out.g1.at(i, k) += c1 * diff;
                    out.g1.at(j, k) -= c1 * diff;
                }
                const double sqd2 = sq_dist(z2.row(i), z2.row(j), d);
                const double c2 = (1.0 / nn1) * kernel_mix_dsq(sqd2, kernel) * 2.0;
                for (int k = 0; k < d; ++k) {
                    const double diff = z2.at(i, k) - z2.at(j, k);
                    out.g2.at(i, k) += c2 * diff;
                    out.g2.at(j, k) -= c2 * diff;
                }
            }
            if (!opt.cross_unbiased || i != j) {
                const double sqd = sq_dist(z1.row(i), z2.row(j), d);
                const double c = -cross_norm * kernel_mix_dsq(sqd, kernel) * 2.0;
                for (int k = 0; k < d; ++k) {
                    const double diff = z1.at(i, k) - z2.at(j, k);
                    out.g1.at(i, k) += c * diff;
                    out.g2.at(j, k) -= c * diff;
                }
            }
        }
    return out;
}

MineGrads mine_grad(const MineNet& t, const Mat& z1, const Mat& z2,
                    const std::vector<int>& perm, const MineGradOptions& opt) {
    const double value = mine_bound(t, z1, z2, perm);  // also validates inputs
    const int n = z1.rows;

    MineGrads out;
    out.value = value;
    out.g1 = Mat(n, z1.cols);
    out.g2 = Mat(n, z2.cols);
    out.gtheta.assign(t.params().size(), 0.0);

    MineNet::Cache cj, cm;
    const std::vector<double> joint = t.forward(z1, z2, {}, &cj);
    const std::vector<double> marg = t.forward(z1, z2, perm, &cm);

    // joint term: d/dT_i = 1/N
    std::vector<double> gj(static_cast<size_t>(n), 1.0 / n);
    t.backward(cj, gj, &out.gtheta, &out.g1, &out.g2, {});

    // log-mean-exp term: d/dT_i = -exp(T_i) / sum_j exp(T_j)
    const double mx = *std::max_element(marg.begin(), marg.end());
    double denom = 0.0;
    std::vector<double> ex(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        ex[static_cast<size_t>(i)] = std::exp(marg[static_cast<size_t>(i)] - mx);
        denom += ex[static_cast<size_t>(i)];
    }
    std::vector<double> gm(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) gm[static_cast<size_t>(i)] = -ex[static_cast<size_t>(i)] / denom;
    t.backward(cm, gm, nullptr, &out.g1, &out.g2, perm);

    if (!opt.ema_correction) {
        t.backward(cm, gm, &out.gtheta, nullptr, nullptr, perm);
        return out;
    }

    // Estimator-gradient correction: divide d(mean exp T)/dtheta by an EMA of
    // mean(exp T) instead of the batch value. Applies to gtheta only; the
    // latent gradients above stay exact. The EMA is tracked in log scale so
    // max-subtraction keeps working (ema_state holds log EMA, NaN = unset).
    const double log_batch = mx + std::log(denom / n);
    double log_ema = log_batch;
    if (opt.ema_state) {
        if (std::isfinite(*opt.ema_state)) {
            const double hi = std::max(*opt.ema_state, log_batch);
            log_ema = hi + std::log(opt.ema_decay * std::exp(*opt.ema_state - hi) +
                                    (1.0 - opt.ema_decay) * std::exp(log_batch - hi));
        }
        *opt.ema_state = log_ema;
    }
    std::vector<double> gm_ema(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i)
        gm_ema[static_cast<size_t>(i)] =
            -ex[static_cast<size_t>(i)] * std::exp(mx - log_ema) / static_cast<double>(n);
    t.backward(cm, gm_ema, &out.gtheta, nullptr, nullptr, perm);
    return out;
}

ValueGrads dependence_gradients(Measure m, const Mat& z1, const Mat& z2,
                                const DependenceAux& aux) {
    switch (m) {
        case Measure::dcor:
            return dcor_grad(z1, z2);
        case Measure::mmd: {
            if (!aux.kernel) throw InvalidInput("dependence_gradients: mmd needs a kernel");
            return mmd_grad(z1, z2, *aux.kernel, aux.mmd_opt ? *aux.mmd_opt : MmdOptions{});
        }
        case Measure::mine: {
            if (!aux.net || !aux.perm)
                throw InvalidInput("dependence_gradients: mine needs a net and permutation");
            MineGrads g = mine_grad(*aux.net, z1, z2, *aux.perm);
            return ValueGrads{g.value, std::move(g.g1), std::move(g.g2)};
        }
    }
    throw InvalidInput("dependence_gradients: unknown measure");
}

}  // namespace disbench
