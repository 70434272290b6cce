#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>

#include "disbench/errors.hpp"
#include "disbench/trainer.hpp"
#include "fdcheck.hpp"
#include "oracles.hpp"

using namespace disbench;

namespace {

EncoderConfig micro_conv() {
    EncoderConfig cfg;
    cfg.side = 8;
    cfg.arch = Arch::conv3;
    cfg.conv_channels = {2, 3, 4};
    cfg.latent = 4;
    cfg.d1 = cfg.d2 = 2;
    return cfg;
}

EncoderConfig micro_mlp(int hidden = 16) {
    EncoderConfig cfg;
    cfg.side = 8;
    cfg.arch = Arch::mlp;
    cfg.mlp_hidden = hidden;
    cfg.latent = 4;
    cfg.d1 = cfg.d2 = 2;
    return cfg;
}

BatchView random_images(int n, int side, uint64_t seed, bool with_labels = true) {
    Rng rng(seed);
    BatchView b;
    b.images = Mat(n, side * side);
    for (auto& x : b.images.v) x = rng.uniform();
    if (with_labels)
        for (int i = 0; i < n; ++i) {
            b.y1.push_back(static_cast<int>(rng.below(2)));
            b.y2.push_back(static_cast<int>(rng.below(2)));
        }
    return b;
}

void zero_block(Model& model, const std::string& name) {
    for (const auto& blk : model.param_blocks())
        if (blk.name == name)
            for (size_t i = 0; i < blk.size(); ++i) model.params()[blk.offset + i] = 0.0;
}

// Copies latent rows 0..d1-1 of the projection into rows d1.. so z2 == z1 for
// every input.
void tie_subspaces(Model& model) {
    const auto& blocks = model.param_blocks();
    for (const auto& blk : blocks) {
        if (blk.name != "enc.proj.w" && blk.name != "enc.proj.b") continue;
        const size_t row = blk.name == "enc.proj.w" ? blk.size() / 4 : 1;
        for (size_t r = 0; r < 2; ++r)
            for (size_t k = 0; k < row; ++k)
                model.params()[blk.offset + (2 + r) * row + k] =
                    model.params()[blk.offset + r * row + k];
    }
}

void fd_check_params(Model& model, const std::vector<double>& analytic,
                     const std::function<double()>& f, double tol = 1e-3) {
    REQUIRE(analytic.size() == model.params().size());
    for (size_t i = 0; i < model.params().size(); ++i) {
        const double numeric = oracle::central_diff(f, model.params()[i]);
        CHECK(oracle::grad_rel_error(analytic[i], numeric) < tol);
    }
}

// Linearly separable toy set: y1 from the left-half mean, y2 from the
// top-half mean, independent labels.
std::vector<LabeledImage> separable_set(int n, uint64_t seed, long group_base) {
    Rng rng(seed);
    std::vector<LabeledImage> out;
    for (int i = 0; i < n; ++i) {
        LabeledImage s;
        s.side = 8;
        s.group = group_base + i;
        s.y1 = static_cast<int>(rng.below(2));
        s.y2 = static_cast<int>(rng.below(2));
        s.pixels.assign(64, 0.0f);
        for (int r = 0; r < 8; ++r)
            for (int c = 0; c < 8; ++c) {
                double v = 0.1;
                if (c < 4 && s.y1 == 1) v += 0.6;
                if (r < 4 && s.y2 == 1) v += 0.3;
                v += rng.normal(0.0, 0.02);
                s.pixels[static_cast<size_t>(r * 8 + c)] =
                    static_cast<float>(std::clamp(v, 0.0, 1.0));
            }
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace

TEST_CASE("encoder: zeroed projection maps anything to zero latents") {
    for (Arch arch : {Arch::conv3, Arch::mlp}) {
        EncoderConfig cfg = arch == Arch::conv3 ? micro_conv() : micro_mlp();
        Model model(cfg, 5);
        zero_block(model, "enc.proj.w");
        zero_block(model, "enc.proj.b");
        const BatchView b = random_images(3, cfg.side, 9);
        const Mat z = model.encode(b.images);
        for (double v : z.v) CHECK(v == 0.0);
    }
}

TEST_CASE("encoder: no batch coupling") {
    const EncoderConfig cfg = micro_conv();
    Model model(cfg, 7);
    const BatchView two = random_images(2, cfg.side, 11);
    Mat one(1, cfg.side * cfg.side);
    for (int k = 0; k < one.cols; ++k) one.at(0, k) = two.images.at(0, k);
    const Mat z2 = model.encode(two.images);
    const Mat z1 = model.encode(one);
    for (int k = 0; k < cfg.latent; ++k) CHECK(std::fabs(z1.at(0, k) - z2.at(0, k)) < 1e-6);
}

TEST_CASE("encoder rejects mismatched image width") {
    Model model(micro_conv(), 1);
    Mat wrong(2, 100);
    CHECK_THROWS_AS(model.encode(wrong), ShapeMismatch);
}

TEST_CASE("encoder backward matches finite differences (both archs)") {
    for (Arch arch : {Arch::conv3, Arch::mlp}) {
        EncoderConfig cfg = arch == Arch::conv3 ? micro_conv() : micro_mlp(8);
        Model model(cfg, 21);
        const BatchView b = random_images(2, cfg.side, 23);
        for (int row : {0, 1})
            for (int col : {0, 3}) {
                EncoderCache cache;
                model.encode(b.images, &cache);
                Mat gz(2, cfg.latent);
                gz.at(row, col) = 1.0;
                std::vector<double> g(model.params().size(), 0.0);
                model.encode_backward(cache, gz, g);
                // spot-check a spread of parameters
                for (size_t i = 0; i < model.params().size(); i += 7) {
                    const double numeric = oracle::central_diff(
                        [&] { return model.encode(b.images).at(row, col); }, model.params()[i]);
                    CHECK(oracle::grad_rel_error(g[i], numeric) < 1e-3);
                }
            }
    }
}

TEST_CASE("split_latent: 2+2 partition, shared mode, reconstruction") {
    EncoderConfig cfg = micro_conv();
    Rng rng(3);
    Mat z = oracle::random_batch(5, 4, rng);
    const auto [z1, z2] = split_latent(z, cfg);
    CHECK(z1.cols == 2);
    CHECK(z2.cols == 2);
    for (int i = 0; i < 5; ++i)
        for (int k = 0; k < 2; ++k) {
            CHECK(z1.at(i, k) == z.at(i, k));
            CHECK(z2.at(i, k) == z.at(i, 2 + k));
        }

    EncoderConfig shared = cfg;
    shared.shared_latent = true;
    const auto [s1, s2] = split_latent(z, shared);
    CHECK(s1.v == z.v);
    CHECK(s2.v == z.v);
}

TEST_CASE("cross_entropy: uniform, saturated, hand-computed") {
    Mat uniform(4, 2, 0.0);
    CHECK(cross_entropy(uniform, {0, 1, 0, 1}) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    Mat sat(2, 2);
    sat.at(0, 0) = 20.0;
    sat.at(1, 1) = 20.0;
    CHECK(cross_entropy(sat, {0, 1}) < 1e-8);

    Mat logits(3, 2);
    logits.at(0, 0) = 2.0;
    logits.at(0, 1) = -1.0;
    logits.at(1, 0) = 0.5;
    logits.at(1, 1) = 0.5;
    logits.at(2, 0) = -3.0;
    logits.at(2, 1) = 1.0;
    const std::vector<int> labels = {0, 1, 1};
    // independent route: loss_i = log(1 + exp(other - true))
    const double expected = (std::log1p(std::exp(-3.0)) + std::log1p(std::exp(0.0)) +
                             std::log1p(std::exp(-4.0))) /
                            3.0;
    CHECK(cross_entropy(logits, labels) == doctest::Approx(expected).epsilon(1e-10));

    CHECK_THROWS_AS(cross_entropy(logits, std::vector<int>{0, 2, 1}), InvalidInput);
}

TEST_CASE("classification_loss: uniform heads give ln 2; matches composed oracle") {
    EncoderConfig cfg = micro_mlp();
    Model model(cfg, 31);
    for (auto& w : model.params()) w = 0.0;
    const BatchView b = random_images(6, cfg.side, 33);
    CHECK(classification_loss(model, b) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    Model rnd(cfg, 37);
    const Mat z = rnd.encode(b.images);
    const auto [z1, z2] = split_latent(z, cfg);
    const double composed = 0.5 * (cross_entropy(rnd.head_forward(1, z1), b.y1) +
                                   cross_entropy(rnd.head_forward(2, z2), b.y2));
    CHECK(classification_loss(rnd, b) == doctest::Approx(composed).epsilon(1e-10));

    // arithmetic-mean contract
    CHECK(0.5 * (0.2 + 0.6) == doctest::Approx(0.4));
}

TEST_CASE("disent_loss: lambda 0 equals classification loss; tied subspaces add exactly 1") {
    EncoderConfig cfg = micro_mlp();
    Model model(cfg, 41);
    const BatchView b = random_images(8, cfg.side, 43);
    TrainConfig tc;

    const DisentLoss off = disent_loss(model, b, MethodKind::dcor, 0.0, tc, nullptr, nullptr);
    CHECK(off.total == classification_loss(model, b));
    CHECK(off.dep == 0.0);

    tie_subspaces(model);
    const DisentLoss tied = disent_loss(model, b, MethodKind::dcor, 1.0, tc, nullptr, nullptr);
    CHECK(tied.dep == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(tied.total == doctest::Approx(classification_loss(model, b) + 1.0).epsilon(1e-9));

    Model fresh(cfg, 47);
    const DisentLoss half = disent_loss(fresh, b, MethodKind::dcor, 0.5, tc, nullptr, nullptr);
    const Mat z = fresh.encode(b.images);
    const auto [z1, z2] = split_latent(z, cfg);
    CHECK(half.total ==
          doctest::Approx(classification_loss(fresh, b) + 0.5 * dcor(z1, z2)).epsilon(1e-8));
}

TEST_CASE("disent_loss: degenerate dcor batch contributes zero and is flagged") {
    EncoderConfig cfg = micro_mlp();
    Model model(cfg, 49);
    // zero first-layer weights: latents constant across the batch
    for (auto& w : model.params()) w = 0.0;
    const BatchView b = random_images(6, cfg.side, 51);
    TrainConfig tc;
    const DisentLoss d = disent_loss(model, b, MethodKind::dcor, 1.0, tc, nullptr, nullptr);
    CHECK(d.degenerate);
    CHECK(d.dep == 0.0);
    CHECK(d.total == d.cls);
}

TEST_CASE("gradient reversal negates elementwise") {
    Rng rng(53);
    const Mat g = oracle::random_batch(4, 3, rng);
    const Mat r = grl_backward(g);
    for (size_t i = 0; i < g.v.size(); ++i) CHECK(r.v[i] == -g.v[i]);
    const Mat rr = grl_backward(r);
    CHECK(rr.v == g.v);
}

TEST_CASE("objective gradients match finite differences for every method") {
    Rng perm_rng(63);
    const std::vector<int> perm = perm_rng.permutation(6);

    for (MethodKind method : {MethodKind::erm, MethodKind::dcor, MethodKind::mmd, MethodKind::mine}) {
        // screen out test points that sit within the fd step of a ReLU kink
        // or near the dcor coincident-row singularity
        uint64_t seed = 1000 + static_cast<uint64_t>(method);
        BatchView b = random_images(6, 8, 61);
        MineNet mine(2, 2, 6, 71);
        Model model(micro_conv(), seed);
        for (int tries = 0; tries < 64; ++tries) {
            model = Model(micro_conv(), ++seed);
            fdcheck::boost_latent_scale(model, 4.0);
            if (fdcheck::encoder_kink_gap(model, b.images) < fdcheck::kKinkMargin) continue;
            const Mat z = model.encode(b.images);
            const auto [z1, z2] = split_latent(z, model.config());
            if (fdcheck::min_row_gap(z1) < fdcheck::kRowGapMargin ||
                fdcheck::min_row_gap(z2) < fdcheck::kRowGapMargin)
                continue;
            if (method == MethodKind::mine &&
                fdcheck::mine_kink_gap(mine, z1, z2, perm) < fdcheck::kKinkMargin)
                continue;
            break;
        }
        TrainConfig tc;
        tc.method = method;
        tc.lambda = method == MethodKind::erm ? 0.0 : 0.7;
        Rng dummy(1);
        const std::vector<double> g =
            objective_gradients(model, b, tc, &mine, dummy, &perm, nullptr);
        fd_check_params(model, g, [&] {
            return disent_loss(model, b, method, tc.lambda, tc, &mine, &perm).total;
        });
    }
}

TEST_CASE("adversarial gradients: GRL composite against finite differences") {
    EncoderConfig cfg = micro_conv();
    cfg.shared_latent = true;
    const BatchView b = random_images(6, cfg.side, 83);
    uint64_t seed = 81;
    Model model(cfg, seed);
    while (fdcheck::encoder_kink_gap(model, b.images) < fdcheck::kKinkMargin)
        model = Model(cfg, ++seed);
    const double lambda = 0.8;
    const std::vector<double> g = adversarial_gradients(model, b, lambda, nullptr);

    auto ce = [&](int head, const std::vector<int>& y) {
        const Mat z = model.encode(b.images);
        return cross_entropy(model.head_forward(head, z), y);
    };
    for (const auto& blk : model.param_blocks()) {
        const bool is_head2 = blk.name.rfind("head2", 0) == 0;
        for (size_t i = blk.offset; i < blk.offset + blk.size(); ++i) {
            const double numeric = oracle::central_diff(
                [&] {
                    // the adversary head sees +CE2; everything else CE1 - l*CE2
                    return is_head2 ? ce(2, b.y2) : ce(1, b.y1) - lambda * ce(2, b.y2);
                },
                model.params()[i]);
            CHECK(oracle::grad_rel_error(g[i], numeric) < 1e-3);
        }
    }
}

TEST_CASE("adversarial step with lambda 0 equals ERM with the task-2 encoder path detached") {
    EncoderConfig cfg = micro_conv();
    cfg.shared_latent = true;
    const BatchView b = random_images(8, cfg.side, 91);

    Model a(cfg, 93);
    Adam opt_a(a.params().size(), 1e-3, 0.0);
    adversarial_step(a, opt_a, b, 0.0);

    Model ref(cfg, 93);
    Adam opt_ref(ref.params().size(), 1e-3, 0.0);
    {
        EncoderCache cache;
        const Mat z = ref.encode(b.images, &cache);
        const Mat logits1 = ref.head_forward(1, z);
        const Mat logits2 = ref.head_forward(2, z);
        std::vector<double> g(ref.params().size(), 0.0);
        Mat gz(z.rows, z.cols);
        // CE1 flows into encoder + head1; CE2 only into head2 (detached)
        {
            Mat glog(logits1.rows, 2);
            for (int i = 0; i < logits1.rows; ++i) {
                const double m = std::max(logits1.at(i, 0), logits1.at(i, 1));
                const double ea = std::exp(logits1.at(i, 0) - m), eb = std::exp(logits1.at(i, 1) - m);
                glog.at(i, 0) = ((ea / (ea + eb)) - (b.y1[static_cast<size_t>(i)] == 0)) / logits1.rows;
                glog.at(i, 1) = ((eb / (ea + eb)) - (b.y1[static_cast<size_t>(i)] == 1)) / logits1.rows;
            }
            ref.head_backward(1, z, glog, gz, g);
        }
        {
            Mat glog(logits2.rows, 2);
            for (int i = 0; i < logits2.rows; ++i) {
                const double m = std::max(logits2.at(i, 0), logits2.at(i, 1));
                const double ea = std::exp(logits2.at(i, 0) - m), eb = std::exp(logits2.at(i, 1) - m);
                glog.at(i, 0) = ((ea / (ea + eb)) - (b.y2[static_cast<size_t>(i)] == 0)) / logits2.rows;
                glog.at(i, 1) = ((eb / (ea + eb)) - (b.y2[static_cast<size_t>(i)] == 1)) / logits2.rows;
            }
            Mat sink(z.rows, z.cols);
            ref.head_backward(2, z, glog, sink, g);
        }
        ref.encode_backward(cache, gz, g);
        opt_ref.step(ref.params(), g);
    }
    for (size_t i = 0; i < a.params().size(); ++i)
        CHECK(std::fabs(a.params()[i] - ref.params()[i]) < 1e-9);
}

TEST_CASE("adversary head descends its own loss") {
    EncoderConfig cfg = micro_conv();
    cfg.shared_latent = true;
    const BatchView b = random_images(16, cfg.side, 101);
    for (double lambda : {0.0, 1.0}) {
        Model model(cfg, 103);
        Adam opt(model.params().size(), 1e-3, 0.0);
        const Mat z_before = model.encode(b.images);
        const double ce2_before = cross_entropy(model.head_forward(2, z_before), b.y2);
        adversarial_step(model, opt, b, lambda);
        // re-evaluate CE2 with the updated head on the updated encoder output
        const Mat z_after = model.encode(b.images);
        const double ce2_after = cross_entropy(model.head_forward(2, z_after), b.y2);
        CHECK(ce2_after < ce2_before);
    }
}

TEST_CASE("mine estimator step never touches encoder parameters") {
    EncoderConfig cfg = micro_mlp();
    const Model model(cfg, 111);
    const std::vector<double> before = model.params();
    MineNet mine(2, 2, 8, 113);
    const std::vector<double> mine_before = mine.params();
    Adam mopt(mine.params().size(), 1e-3, 0.0);
    const BatchView b = random_images(8, cfg.side, 115);
    TrainConfig tc;
    Rng rng(117);
    double ema = std::numeric_limits<double>::quiet_NaN();
    mine_estimator_step(model, mine, mopt, b, tc, rng, &ema);
    CHECK(model.params() == before);
    CHECK(mine.params() != mine_before);
}

TEST_CASE("mine alternating schedule: update accounting") {
    // 200 train samples, batch 2 -> 100 batches per epoch.
    auto train = separable_set(200, 7, 0);
    auto val = separable_set(20, 8, 1000);
    for (int nb : {1, 5}) {
        EncoderConfig cfg = micro_mlp(8);
        Model model(cfg, 121);
        MineNet mine(2, 2, 8, 123);
        TrainConfig tc;
        tc.method = MethodKind::mine;
        tc.lambda = 0.1;
        tc.batch = 2;
        tc.max_epochs = 1;
        tc.mine_inner = nb;
        tc.seed = 5;
        const FitResult res = fit(model, &mine, train, val, tc);
        if (nb == 1) {
            CHECK(res.encoder_updates == 100);
            CHECK(res.estimator_updates == 100);
            CHECK(res.estimator_only_updates == 0);
        } else {
            CHECK(res.encoder_updates == 20);
            CHECK(res.estimator_updates == 100);
            CHECK(res.estimator_only_updates == 80);
            CHECK(res.truncated_cycles == 0);
        }
    }
}

TEST_CASE("fit: early stop honors patience and returns the best snapshot") {
    auto train = separable_set(24, 11, 0);
    auto val = separable_set(8, 12, 500);
    TrainConfig tc;
    tc.batch = 8;
    tc.max_epochs = 10;
    tc.patience = 1;
    tc.seed = 13;

    FitHooks hooks;
    hooks.val_loss_override = [](int epoch) { return 1.0 + epoch; };  // strictly increasing
    EncoderConfig cfg = micro_mlp(8);
    Model model(cfg, 131);
    const FitResult res = fit(model, nullptr, train, val, tc, hooks);
    CHECK(res.epochs_run == 2);
    CHECK(res.best_epoch == 1);
    CHECK(res.history.size() == 2);

    Model one_epoch(cfg, 131);
    TrainConfig tc1 = tc;
    tc1.max_epochs = 1;
    fit(one_epoch, nullptr, train, val, tc1, hooks);
    CHECK(one_epoch.params() == res.best_params);
}

TEST_CASE("fit aborts on a non-finite loss and keeps the last good snapshot") {
    auto train = separable_set(24, 71, 0);
    auto val = separable_set(8, 72, 600);
    TrainConfig tc;
    tc.batch = 8;
    tc.max_epochs = 10;
    tc.seed = 73;
    FitHooks hooks;
    hooks.val_loss_override = [](int epoch) {
        return epoch >= 2 ? std::numeric_limits<double>::quiet_NaN() : 1.0;
    };
    EncoderConfig cfg = micro_mlp(8);
    Model model(cfg, 191);
    const FitResult res = fit(model, nullptr, train, val, tc, hooks);
    CHECK(res.aborted);
    CHECK(res.abort_reason == "NumericalError");
    CHECK(res.epochs_run == 2);
    CHECK(res.best_epoch == 1);
    CHECK(res.history.size() == 2);

    Model one(cfg, 191);
    TrainConfig tc1 = tc;
    tc1.max_epochs = 1;
    fit(one, nullptr, train, val, tc1, hooks);
    CHECK(one.params() == res.best_params);  // epoch-1 snapshot survived the abort
}

TEST_CASE("fit is deterministic and selects the minimal validation loss") {
    auto train = separable_set(60, 21, 0);
    auto val = separable_set(20, 22, 900);
    TrainConfig tc;
    tc.batch = 16;
    tc.max_epochs = 6;
    tc.patience = 10;
    tc.seed = 23;

    EncoderConfig cfg = micro_mlp(8);
    Model m1(cfg, 141);
    Model m2(cfg, 141);
    const FitResult r1 = fit(m1, nullptr, train, val, tc);
    const FitResult r2 = fit(m2, nullptr, train, val, tc);
    REQUIRE(r1.history.size() == r2.history.size());
    for (size_t e = 0; e < r1.history.size(); ++e) {
        CHECK(std::fabs(r1.history[e].train_loss - r2.history[e].train_loss) < 1e-9);
        CHECK(std::fabs(r1.history[e].val_loss - r2.history[e].val_loss) < 1e-9);
        CHECK(r1.best_val_loss <= r1.history[e].val_loss);
    }
    CHECK(m1.params() == m2.params());
}

TEST_CASE("fit rejects shared groups between train and val") {
    auto train = separable_set(12, 31, 0);
    auto val = separable_set(4, 32, 5);  // overlaps groups 5..8
    TrainConfig tc;
    tc.batch = 4;
    EncoderConfig cfg = micro_mlp(8);
    Model model(cfg, 151);
    CHECK_THROWS_AS(fit(model, nullptr, train, val, tc), InvalidInput);
}

TEST_CASE("fit: ERM solves a separable toy set") {
    auto train = separable_set(120, 41, 0);
    auto val = separable_set(40, 42, 2000);
    TrainConfig tc;
    tc.batch = 16;
    tc.max_epochs = 50;
    tc.patience = 50;
    tc.seed = 43;
    EncoderConfig cfg = micro_mlp(32);
    Model model(cfg, 161);
    const FitResult res = fit(model, nullptr, train, val, tc);
    CHECK(res.best_val_loss < 0.05);
}

TEST_CASE("fit trains the adversarial objective end to end") {
    auto train = separable_set(80, 61, 0);
    auto val = separable_set(24, 62, 3000);
    EncoderConfig cfg = micro_mlp(16);
    cfg.shared_latent = true;
    Model model(cfg, 181);
    TrainConfig tc;
    tc.method = MethodKind::advcl;
    tc.lambda = 1.0;
    tc.batch = 16;
    tc.max_epochs = 40;
    tc.patience = 40;
    tc.seed = 63;
    const FitResult res = fit(model, nullptr, train, val, tc);
    CHECK(!res.aborted);
    // a successful adversary drives CE2 toward ln 2, so the combined val loss
    // bottoms out near 0.35; the primary task alone must still be solved
    std::vector<size_t> idx(val.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    const BatchView vb = make_batch(val, idx);
    const Mat z = model.encode(vb.images);
    CHECK(cross_entropy(model.head_forward(1, z), vb.y1) < 0.15);

    Model unshared(micro_mlp(16), 181);
    CHECK_THROWS_AS(fit(unshared, nullptr, train, val, tc), InvalidInput);
}

TEST_CASE("ERM and a zero-lambda penalty method produce bit-identical runs") {
    auto train = separable_set(40, 51, 0);
    auto val = separable_set(12, 52, 700);
    TrainConfig erm;
    erm.method = MethodKind::erm;
    erm.lambda = 0.0;
    erm.batch = 8;
    erm.max_epochs = 4;
    erm.seed = 53;
    TrainConfig dcor0 = erm;
    dcor0.method = MethodKind::dcor;

    EncoderConfig cfg = micro_mlp(8);
    Model a(cfg, 171), b(cfg, 171);
    const FitResult ra = fit(a, nullptr, train, val, erm);
    const FitResult rb = fit(b, nullptr, train, val, dcor0);
    CHECK(a.params() == b.params());
    REQUIRE(ra.history.size() == rb.history.size());
    for (size_t e = 0; e < ra.history.size(); ++e)
        CHECK(ra.history[e].train_loss == rb.history[e].train_loss);
}
