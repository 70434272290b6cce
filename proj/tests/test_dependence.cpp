#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "disbench/dependence.hpp"
#include "disbench/errors.hpp"
#include "disbench/rng.hpp"
#include "oracles.hpp"

using namespace disbench;

TEST_CASE("pairwise distances: 3-4-5 triangle and single row") {
    Mat z(2, 2);
    z.at(0, 0) = 0.0;
    z.at(0, 1) = 0.0;
    z.at(1, 0) = 3.0;
    z.at(1, 1) = 4.0;
    const Mat d = pairwise_distances(z);
    CHECK(d.at(0, 0) == 0.0);
    CHECK(d.at(1, 1) == 0.0);
    CHECK(d.at(0, 1) == doctest::Approx(5.0));
    CHECK(d.at(1, 0) == doctest::Approx(5.0));

    Mat one(1, 3);
    one.at(0, 0) = 2.0;
    const Mat d1 = pairwise_distances(one);
    CHECK(d1.rows == 1);
    CHECK(d1.at(0, 0) == 0.0);
}

TEST_CASE("pairwise distances match the loop oracle") {
    Rng rng(11);
    const Mat z = oracle::random_batch(4, 3, rng);
    const Mat fast = pairwise_distances(z);
    const Mat slow = oracle::pdist_loop(z);
    for (size_t i = 0; i < fast.v.size(); ++i) CHECK(fast.v[i] == doctest::Approx(slow.v[i]).epsilon(1e-12));
}

TEST_CASE("pairwise distances reject non-finite input") {
    Mat z(2, 1);
    z.at(1, 0) = std::nan("");
    CHECK_THROWS_AS(pairwise_distances(z), InvalidInput);
}

TEST_CASE("double centering: constant matrix, hand case, oracle") {
    Mat c(3, 3, 4.2);
    const Mat a = double_center(c);
    for (double x : a.v) CHECK(x == doctest::Approx(0.0).epsilon(1e-12));

    Mat m(2, 2);
    m.at(0, 1) = 2.0;
    m.at(1, 0) = 2.0;
    const Mat h = double_center(m);
    CHECK(h.at(0, 0) == doctest::Approx(-1.0));
    CHECK(h.at(0, 1) == doctest::Approx(1.0));
    CHECK(h.at(1, 0) == doctest::Approx(1.0));
    CHECK(h.at(1, 1) == doctest::Approx(-1.0));

    Rng rng(5);
    Mat r(5, 5);
    for (int i = 0; i < 5; ++i)
        for (int j = i; j < 5; ++j) {
            const double v = rng.uniform();
            r.at(i, j) = v;
            r.at(j, i) = v;
        }
    const Mat cen = double_center(r);
    const Mat ref = oracle::center_loop(r);
    double max_abs = 0.0;
    for (double x : cen.v) max_abs = std::max(max_abs, std::fabs(x));
    for (int i = 0; i < 5; ++i) {
        double rs = 0.0, cs = 0.0;
        for (int j = 0; j < 5; ++j) {
            rs += cen.at(i, j);
            cs += cen.at(j, i);
        }
        CHECK(std::fabs(rs) <= 1e-9 * std::max(1.0, max_abs));
        CHECK(std::fabs(cs) <= 1e-9 * std::max(1.0, max_abs));
    }
    for (size_t i = 0; i < cen.v.size(); ++i) CHECK(cen.v[i] == doctest::Approx(ref.v[i]).epsilon(1e-12));
}

TEST_CASE("dcov: constant batch, self case, loop oracle") {
    Mat z1(4, 2, 1.5);  // constant rows -> centered matrix all zero
    Rng rng(2);
    const Mat z2 = oracle::random_batch(4, 2, rng);
    CHECK(dcov(z1, z2) == doctest::Approx(0.0).epsilon(1e-12));

    const Mat a = double_center(pairwise_distances(z2));
    double s = 0.0;
    for (double x : a.v) s += x * x;
    CHECK(dcov(z2, z2) == doctest::Approx(std::sqrt(s / 16.0)));

    const Mat x1 = oracle::random_batch(6, 2, rng);
    const Mat x2 = oracle::random_batch(6, 3, rng);
    CHECK(dcov(x1, x2) == doctest::Approx(oracle::dcov_loop(x1, x2)).epsilon(1e-8));

    Mat bad(3, 2);
    CHECK_THROWS_AS(dcov(bad, oracle::random_batch(4, 2, rng)), ShapeMismatch);
}

TEST_CASE("dcor: identity, degenerate, independence tendency") {
    Rng rng(3);
    const Mat z = oracle::random_batch(5, 2, rng);
    CHECK(dcor(z, z) == doctest::Approx(1.0).epsilon(1e-12));

    Mat constant(5, 2, 0.7);
    CHECK_THROWS_AS(dcor(constant, z), DegenerateInput);

    // Small-sample bias of the plug-in estimator: at N=8 the mean over
    // independent draws sits near 0.69 (verified against an independent
    // reimplementation); the estimator decays toward 0 only as N grows.
    double acc = 0.0;
    for (int rep = 0; rep < 200; ++rep) {
        const Mat a = oracle::random_batch(8, 2, rng);
        const Mat b = oracle::random_batch(8, 2, rng);
        const double v = dcor(a, b);
        CHECK(v == doctest::Approx(oracle::dcor_loop(a, b)).epsilon(1e-8));
        CHECK(v >= 0.0);
        CHECK(v <= 1.0 + 1e-9);
        acc += v;
    }
    CHECK(acc / 200.0 == doctest::Approx(0.69).epsilon(0.08));

    double acc64 = 0.0;
    for (int rep = 0; rep < 50; ++rep)
        acc64 += dcor(oracle::random_batch(64, 2, rng), oracle::random_batch(64, 2, rng));
    CHECK(acc64 / 50.0 < 0.5);
}

TEST_CASE("dcor invariances: translation and positive scaling of one side") {
    Rng rng(7);
    const Mat z1 = oracle::random_batch(6, 2, rng);
    const Mat z2 = oracle::random_batch(6, 2, rng);
    const double base = dcor(z1, z2);

    Mat shifted = z1;
    for (int i = 0; i < shifted.rows; ++i) {
        shifted.at(i, 0) += 3.25;
        shifted.at(i, 1) -= 1.5;
    }
    CHECK(std::fabs(dcor(shifted, z2) - base) < 1e-9);

    Mat scaled = z1;
    for (double& x : scaled.v) x *= 7.3;
    CHECK(std::fabs(dcor(scaled, z2) - base) < 1e-9);
}

TEST_CASE("mmd: repeated point cancels, symmetry, hand summation at N=3") {
    const KernelSpec grid = KernelSpec::default_grid();
    Mat z1(4, 2, 0.3), z2(4, 2, 0.3);
    CHECK(std::fabs(mmd(z1, z2, grid)) < 1e-9 * static_cast<double>(grid.bandwidths.size()));

    Rng rng(9);
    const Mat a = oracle::random_batch(5, 2, rng);
    const Mat b = oracle::random_batch(5, 2, rng);
    CHECK(mmd(a, b, grid) == mmd(b, a, grid));

    // N=3, one bandwidth: explicit 9-term cross sum plus 6-term within sums.
    KernelSpec one;
    one.bandwidths = {1.0};
    Mat u(3, 1), v(3, 1);
    u.at(0, 0) = 0.1;
    u.at(1, 0) = -0.4;
    u.at(2, 0) = 0.7;
    v.at(0, 0) = 0.5;
    v.at(1, 0) = 0.2;
    v.at(2, 0) = -0.3;
    auto k = [](double x, double y) { return std::exp(-(x - y) * (x - y) / 2.0); };
    double within_u = 0.0, within_v = 0.0, cross = 0.0;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            if (i != j) {
                within_u += k(u.at(i, 0), u.at(j, 0));
                within_v += k(v.at(i, 0), v.at(j, 0));
            }
            cross += k(u.at(i, 0), v.at(j, 0));
        }
    const double expected = within_u / 6.0 + within_v / 6.0 - 2.0 / 9.0 * cross;
    CHECK(mmd(u, v, one) == doctest::Approx(expected).epsilon(1e-10));
}

TEST_CASE("mmd matches the loop oracle and respects permutation invariance") {
    const KernelSpec grid = KernelSpec::default_grid();
    Rng rng(13);
    const Mat a = oracle::random_batch(7, 2, rng);
    const Mat b = oracle::random_batch(7, 2, rng);
    CHECK(mmd(a, b, grid) == doctest::Approx(oracle::mmd_loop(a, b, grid.bandwidths)).epsilon(1e-8));

    Rng prng(14);
    const auto pa = prng.permutation(7);
    const auto pb = prng.permutation(7);
    Mat ap(7, 2), bp(7, 2);
    for (int i = 0; i < 7; ++i)
        for (int kd = 0; kd < 2; ++kd) {
            ap.at(i, kd) = a.at(pa[static_cast<size_t>(i)], kd);
            bp.at(i, kd) = b.at(pb[static_cast<size_t>(i)], kd);
        }
    CHECK(mmd(ap, bp, grid) == doctest::Approx(mmd(a, b, grid)).epsilon(1e-12));
}

TEST_CASE("mmd input validation") {
    const KernelSpec grid = KernelSpec::default_grid();
    Rng rng(1);
    CHECK_THROWS_AS(mmd(oracle::random_batch(1, 2, rng), oracle::random_batch(1, 2, rng), grid),
                    InvalidInput);
    CHECK_THROWS_AS(mmd(oracle::random_batch(3, 2, rng), oracle::random_batch(3, 3, rng), grid),
                    ShapeMismatch);
}

TEST_CASE("mmd unbiased cross-term flag changes only the cross normalization") {
    KernelSpec one;
    one.bandwidths = {1.0};
    Rng rng(21);
    const Mat a = oracle::random_batch(4, 2, rng);
    const Mat b = oracle::random_batch(4, 2, rng);
    MmdOptions unb;
    unb.cross_unbiased = true;
    double cross_all = 0.0, cross_offdiag = 0.0;
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) {
            const double kij = oracle::rbf_mix(a.row(i), b.row(j), 2, one.bandwidths);
            cross_all += kij;
            if (i != j) cross_offdiag += kij;
        }
    const double diff = mmd(a, b, one) - mmd(a, b, one, unb);
    CHECK(diff == doctest::Approx(-2.0 / 16.0 * cross_all + 2.0 / 12.0 * cross_offdiag).epsilon(1e-10));
}

TEST_CASE("mine bound: constant statistic gives zero for any permutation") {
    Rng rng(17);
    MineNet t(2, 2, 8, 123);
    for (auto& w : t.params()) w = 0.0;  // T == bias == 0.37
    t.params().back() = 0.37;
    const Mat z1 = oracle::random_batch(5, 2, rng);
    const Mat z2 = oracle::random_batch(5, 2, rng);
    for (int rep = 0; rep < 4; ++rep) {
        Rng prng(static_cast<uint64_t>(rep));
        CHECK(std::fabs(mine_bound(t, z1, z2, prng.permutation(5))) < 1e-12);
    }
}

TEST_CASE("mine bound: identity permutation obeys the Jensen direction") {
    // With the same samples on both sides, mean(T) - log mean(exp T) <= 0.
    for (uint64_t seed : {19, 20, 21, 22}) {
        Rng rng(seed);
        MineNet t(2, 2, 8, 7 + seed);
        const Mat z1 = oracle::random_batch(6, 2, rng);
        const Mat z2 = oracle::random_batch(6, 2, rng);
        std::vector<int> id(6);
        for (int i = 0; i < 6; ++i) id[static_cast<size_t>(i)] = i;
        CHECK(mine_bound(t, z1, z2, id) <= 1e-12);
    }
}

TEST_CASE("mine bound: N=4 tiny fixed statistic matches scalar arithmetic") {
    // Single-bandwidth manual network: zero hidden weights except a bias path
    // is awkward; instead evaluate the DV formula directly from T outputs.
    MineNet t(1, 1, 4, 99);
    Mat z1(4, 1), z2(4, 1);
    for (int i = 0; i < 4; ++i) {
        z1.at(i, 0) = 0.25 * i - 0.3;
        z2.at(i, 0) = 0.1 * i + 0.05;
    }
    const std::vector<int> perm = {2, 0, 3, 1};
    const auto joint = t.forward(z1, z2, {}, nullptr);
    const auto marg = t.forward(z1, z2, perm, nullptr);
    double mj = 0.0, me = 0.0;
    for (double v : joint) mj += v;
    mj /= 4.0;
    for (double v : marg) me += std::exp(v);
    me /= 4.0;
    CHECK(mine_bound(t, z1, z2, perm) == doctest::Approx(mj - std::log(me)).epsilon(1e-10));

    CHECK_THROWS_AS(mine_bound(t, z1, z2, std::vector<int>{0, 0, 1, 2}), InvalidInput);
}

TEST_CASE("brute-force equivalence sweep for small N") {
    const KernelSpec grid = KernelSpec::default_grid();
    Rng rng(101);
    for (int rep = 0; rep < 50; ++rep) {
        const int n = 2 + static_cast<int>(rng.below(7));  // N <= 8
        const Mat a = oracle::random_batch(n, 2, rng);
        const Mat b = oracle::random_batch(n, 2, rng);
        CHECK(std::fabs(dcov(a, b) - oracle::dcov_loop(a, b)) < 1e-8);
        CHECK(std::fabs(dcor(a, b) - oracle::dcor_loop(a, b)) < 1e-8);
        CHECK(std::fabs(mmd(a, b, grid) - oracle::mmd_loop(a, b, grid.bandwidths)) < 1e-8);
    }
}

namespace {

// Finite-difference check of d(value)/d(z entries) for a measure closure.
void check_latent_grads(Mat& z1, Mat& z2, const std::function<double()>& value,
                        const Mat& g1, const Mat& g2, double tol = 1e-3) {
    for (auto [z, g] : {std::pair<Mat*, const Mat*>{&z1, &g1}, {&z2, &g2}}) {
        for (size_t i = 0; i < z->v.size(); ++i) {
            const double numeric = oracle::central_diff(value, z->v[i]);
            CHECK(oracle::grad_rel_error(g->v[i], numeric) < tol);
        }
    }
}

}  // namespace

TEST_CASE("dcor gradient matches finite differences") {
    Rng rng(31);
    for (int rep = 0; rep < 8; ++rep) {
        Mat z1 = oracle::random_batch(5, 2, rng);
        Mat z2 = oracle::random_batch(5, 2, rng);
        const ValueGrads g = dcor_grad(z1, z2);
        CHECK(g.value == doctest::Approx(dcor(z1, z2)).epsilon(1e-12));
        check_latent_grads(z1, z2, [&] { return dcor(z1, z2); }, g.g1, g.g2);
    }
}

TEST_CASE("dcor gradient is finite at z1 == z2") {
    Rng rng(37);
    Mat z1 = oracle::random_batch(5, 2, rng);
    Mat z2 = z1;
    const ValueGrads g = dcor_grad(z1, z2);
    CHECK(g.value == doctest::Approx(1.0));
    for (double x : g.g1.v) CHECK(std::isfinite(x));
    for (double x : g.g2.v) CHECK(std::isfinite(x));
}

TEST_CASE("mmd gradient matches finite differences; zero at identical points") {
    const KernelSpec grid = KernelSpec::default_grid();
    Rng rng(41);
    for (int rep = 0; rep < 8; ++rep) {
        Mat z1 = oracle::random_batch(5, 2, rng);
        Mat z2 = oracle::random_batch(5, 2, rng);
        const ValueGrads g = mmd_grad(z1, z2, grid);
        CHECK(g.value == doctest::Approx(mmd(z1, z2, grid)).epsilon(1e-12));
        check_latent_grads(z1, z2, [&] { return mmd(z1, z2, grid); }, g.g1, g.g2);
    }

    Mat same1(4, 2, 0.5), same2(4, 2, 0.5);
    const ValueGrads g = mmd_grad(same1, same2, grid);
    for (double x : g.g1.v) CHECK(x == doctest::Approx(0.0).epsilon(1e-12));
    for (double x : g.g2.v) CHECK(x == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("mine gradients match finite differences for latents and parameters") {
    Rng rng(43);
    for (int rep = 0; rep < 4; ++rep) {
        MineNet t(2, 2, 6, 1000 + static_cast<uint64_t>(rep));
        Mat z1 = oracle::random_batch(5, 2, rng);
        Mat z2 = oracle::random_batch(5, 2, rng);
        Rng prng(77 + static_cast<uint64_t>(rep));
        const std::vector<int> perm = prng.permutation(5);
        const MineGrads g = mine_grad(t, z1, z2, perm);
        CHECK(g.value == doctest::Approx(mine_bound(t, z1, z2, perm)).epsilon(1e-12));
        check_latent_grads(z1, z2, [&] { return mine_bound(t, z1, z2, perm); }, g.g1, g.g2);
        for (size_t i = 0; i < t.params().size(); ++i) {
            const double numeric =
                oracle::central_diff([&] { return mine_bound(t, z1, z2, perm); }, t.params()[i]);
            CHECK(oracle::grad_rel_error(g.gtheta[i], numeric) < 1e-3);
        }
    }
}

TEST_CASE("dependence_gradients dispatch and degenerate propagation") {
    Rng rng(53);
    Mat z1 = oracle::random_batch(5, 2, rng);
    Mat z2 = oracle::random_batch(5, 2, rng);
    const KernelSpec grid = KernelSpec::default_grid();

    DependenceAux aux;
    const ValueGrads gd = dependence_gradients(Measure::dcor, z1, z2, aux);
    CHECK(gd.value == doctest::Approx(dcor(z1, z2)));

    aux.kernel = &grid;
    const ValueGrads gm = dependence_gradients(Measure::mmd, z1, z2, aux);
    CHECK(gm.value == doctest::Approx(mmd(z1, z2, grid)));

    MineNet t(2, 2, 6, 5);
    Rng prng(6);
    const std::vector<int> perm = prng.permutation(5);
    DependenceAux maux;
    maux.net = &t;
    maux.perm = &perm;
    const ValueGrads gi = dependence_gradients(Measure::mine, z1, z2, maux);
    CHECK(gi.value == doctest::Approx(mine_bound(t, z1, z2, perm)));

    Mat constant(5, 2, 1.0);
    CHECK_THROWS_AS(dependence_gradients(Measure::dcor, constant, z2, aux), DegenerateInput);
}

TEST_CASE("EMA-corrected estimator gradient still ascends the bound") {
    Rng rng(88);
    MineNet t(1, 1, 16, 333);
    Adam opt(t.params().size(), 2e-3, 0.0);
    double ema_state = std::numeric_limits<double>::quiet_NaN();
    MineGradOptions mg;
    mg.ema_correction = true;
    mg.ema_decay = 0.99;
    mg.ema_state = &ema_state;

    auto draw = [&](int n, Mat& z1, Mat& z2) {
        z1 = Mat(n, 1);
        z2 = Mat(n, 1);
        for (int i = 0; i < n; ++i) {
            const double a = rng.normal();
            z1.at(i, 0) = a;
            z2.at(i, 0) = 0.9 * a + 0.435889894354067 * rng.normal();
        }
    };
    Rng prng(89);
    Mat e1, e2;
    draw(512, e1, e2);
    const std::vector<int> eperm = prng.permutation(512);
    const double before = mine_bound(t, e1, e2, eperm);
    std::vector<double> ascent(t.params().size());
    for (int step = 0; step < 150; ++step) {
        Mat z1, z2;
        draw(64, z1, z2);
        const MineGrads g = mine_grad(t, z1, z2, prng.permutation(64), mg);
        for (size_t i = 0; i < ascent.size(); ++i) ascent[i] = -g.gtheta[i];
        opt.step(t.params(), ascent);
    }
    CHECK(std::isfinite(ema_state));
    CHECK(mine_bound(t, e1, e2, eperm) > before + 0.05);
}

TEST_CASE("trained mine bound respects the closed-form ceiling on Gaussian pairs") {
    // Trimmed version of the acceptance run: rho = 0.8, true MI ~= 0.5108.
    const double rho = 0.8;
    const double true_mi = -0.5 * std::log(1.0 - rho * rho);
    MineNet t(1, 1, 32, 2024);
    Adam opt(t.params().size(), 1e-3, 0.0);
    Rng data_rng(555);
    Rng perm_rng(556);

    auto draw = [&](int n, Mat& z1, Mat& z2) {
        z1 = Mat(n, 1);
        z2 = Mat(n, 1);
        for (int i = 0; i < n; ++i) {
            const double a = data_rng.normal();
            const double b = data_rng.normal();
            z1.at(i, 0) = a;
            z2.at(i, 0) = rho * a + std::sqrt(1.0 - rho * rho) * b;
        }
    };

    Mat ez1, ez2;
    draw(2048, ez1, ez2);
    const std::vector<int> eperm = perm_rng.permutation(2048);

    double best = -1e9;
    std::vector<double> grad(t.params().size());
    for (int step = 0; step < 600; ++step) {
        Mat z1, z2;
        draw(128, z1, z2);
        const MineGrads g = mine_grad(t, z1, z2, perm_rng.permutation(128));
        for (size_t i = 0; i < grad.size(); ++i) grad[i] = -g.gtheta[i];  // ascend
        opt.step(t.params(), grad);
        if (step % 25 == 0) {
            const double logged = mine_bound(t, ez1, ez2, eperm);
            best = std::max(best, logged);
            CHECK(logged <= true_mi + 0.05);
        }
    }
    CHECK(best > 0.15);  // the full 2000-step attainment check lives in the acceptance suite
}
