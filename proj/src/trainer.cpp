#include "disbench/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "disbench/errors.hpp"
#include "disbench/rng.hpp"

namespace disbench {

namespace {

// Softmax cross-entropy gradient w.r.t. logits, mean reduction, scaled.
Mat ce_logit_grad(const Mat& logits, const std::vector<int>& labels, double scale) {
    Mat g(logits.rows, logits.cols);
    const double w = scale / logits.rows;
    for (int i = 0; i < logits.rows; ++i) {
        const double a = logits.at(i, 0), b = logits.at(i, 1);
        const double m = std::max(a, b);
        const double ea = std::exp(a - m), eb = std::exp(b - m);
        const double denom = ea + eb;
        g.at(i, 0) = w * (ea / denom - (labels[static_cast<size_t>(i)] == 0 ? 1.0 : 0.0));
        g.at(i, 1) = w * (eb / denom - (labels[static_cast<size_t>(i)] == 1 ? 1.0 : 0.0));
    }
    return g;
}

void check_labels(const std::vector<int>& labels, int n) {
    if (static_cast<int>(labels.size()) != n) throw ShapeMismatch("label count mismatch");
    for (int y : labels)
        if (y != 0 && y != 1) throw InvalidInput("labels must be binary");
}

Measure to_measure(MethodKind kind) {
    switch (kind) {
        case MethodKind::dcor: return Measure::dcor;
        case MethodKind::mmd: return Measure::mmd;
        case MethodKind::mine: return Measure::mine;
        default: throw InvalidInput("method has no dependence measure");
    }
}

bool has_measure(MethodKind kind) {
    return kind == MethodKind::dcor || kind == MethodKind::mmd || kind == MethodKind::mine;
}

}  // namespace

MethodSpec parse_method(const std::string& name) {
    MethodSpec m;
    std::string base = name;
    const std::string suffix = "_rebal";
    if (base.size() > suffix.size() &&
        base.compare(base.size() - suffix.size(), suffix.size(), suffix) == 0) {
        m.rebalance = true;
        base = base.substr(0, base.size() - suffix.size());
    }
    if (base == "erm") {
        m.kind = MethodKind::erm;
    } else if (base == "rebal") {
        m.kind = MethodKind::erm;
        m.rebalance = true;
    } else if (base == "advcl") {
        m.kind = MethodKind::advcl;
    } else if (base == "dcor") {
        m.kind = MethodKind::dcor;
    } else if (base == "mine") {
        m.kind = MethodKind::mine;
    } else if (base == "mmd") {
        m.kind = MethodKind::mmd;
    } else {
        throw InvalidInput("unknown method: " + name);
    }
    return m;
}

std::string method_name(const MethodSpec& m) {
    std::string base;
    switch (m.kind) {
        case MethodKind::erm: base = "erm"; break;
        case MethodKind::advcl: base = "advcl"; break;
        case MethodKind::dcor: base = "dcor"; break;
        case MethodKind::mine: base = "mine"; break;
        case MethodKind::mmd: base = "mmd"; break;
    }
    if (m.rebalance) return m.kind == MethodKind::erm ? "rebal" : base + "_rebal";
    return base;
}

void TrainConfig::validate() const {
    if (lambda < 0.0) throw InvalidInput("lambda must be >= 0");
    if (batch < 2) throw InvalidInput("batch size must be >= 2");
    if (lr <= 0.0) throw InvalidInput("learning rate must be positive");
    if (weight_decay < 0.0) throw InvalidInput("weight decay must be >= 0");
    if (max_epochs < 1) throw InvalidInput("max_epochs must be >= 1");
    if (patience < 1) throw InvalidInput("patience must be >= 1");
    if (mine_inner < 1) throw InvalidInput("mine_inner (N_B) must be >= 1");
    if (mine_hidden < 1) throw InvalidInput("mine_hidden must be >= 1");
    kernel.validate();
}

BatchView make_batch(const std::vector<LabeledImage>& data, const std::vector<size_t>& idx) {
    BatchView b;
    if (idx.empty()) throw InvalidInput("make_batch: empty index list");
    const int side = data[idx[0]].side;
    b.images = Mat(static_cast<int>(idx.size()), side * side);
    b.y1.reserve(idx.size());
    b.y2.reserve(idx.size());
    for (size_t r = 0; r < idx.size(); ++r) {
        const LabeledImage& s = data[idx[r]];
        if (s.side != side) throw ShapeMismatch("make_batch: mixed image sides");
        for (size_t k = 0; k < s.pixels.size(); ++k)
            b.images.v[r * s.pixels.size() + k] = static_cast<double>(s.pixels[k]);
        b.y1.push_back(s.y1);
        b.y2.push_back(s.y2);
    }
    return b;
}

std::pair<Mat, Mat> split_latent(const Mat& z, const EncoderConfig& cfg) {
    if (z.cols != cfg.latent) throw ShapeMismatch("split_latent: latent width mismatch");
    if (cfg.shared_latent) return {z, z};
    Mat z1(z.rows, cfg.d1), z2(z.rows, cfg.d2);
    for (int i = 0; i < z.rows; ++i) {
        for (int k = 0; k < cfg.d1; ++k) z1.at(i, k) = z.at(i, k);
        for (int k = 0; k < cfg.d2; ++k) z2.at(i, k) = z.at(i, cfg.d1 + k);
    }
    return {z1, z2};
}

double cross_entropy(const Mat& logits, const std::vector<int>& labels) {
    if (logits.cols != 2) throw ShapeMismatch("cross_entropy: expected two logits per row");
    check_labels(labels, logits.rows);
    double acc = 0.0;
    for (int i = 0; i < logits.rows; ++i) {
        const double a = logits.at(i, 0), b = logits.at(i, 1);
        const double m = std::max(a, b);
        const double lse = m + std::log(std::exp(a - m) + std::exp(b - m));
        acc += lse - (labels[static_cast<size_t>(i)] == 0 ? a : b);
    }
    return acc / logits.rows;
}

double classification_loss(const Model& model, const BatchView& batch) {
    const Mat z = model.encode(batch.images);
    const auto [z1, z2] = split_latent(z, model.config());
    const double ce1 = cross_entropy(model.head_forward(1, z1), batch.y1);
    const double ce2 = cross_entropy(model.head_forward(2, z2), batch.y2);
    return 0.5 * (ce1 + ce2);
}

DisentLoss disent_loss(const Model& model, const BatchView& batch, MethodKind measure,
                       double lambda, const TrainConfig& cfg, const MineNet* mine,
                       const std::vector<int>* perm) {
    if (lambda < 0.0) throw InvalidInput("disent_loss: lambda must be >= 0");
    DisentLoss out;
    out.cls = classification_loss(model, batch);
    out.total = out.cls;
    if (lambda == 0.0 || !has_measure(measure)) return out;

    const Mat z = model.encode(batch.images);
    const auto [z1, z2] = split_latent(z, model.config());
    try {
        switch (measure) {
            case MethodKind::dcor: out.dep = dcor(z1, z2); break;
            case MethodKind::mmd: out.dep = mmd(z1, z2, cfg.kernel, cfg.mmd_opt); break;
            case MethodKind::mine:
                if (!mine || !perm) throw InvalidInput("disent_loss: mine needs a net and perm");
                out.dep = mine_bound(*mine, z1, z2, *perm);
                break;
            default: break;
        }
    } catch (const DegenerateInput&) {
        out.degenerate = true;
        out.dep = 0.0;
    }
    out.total = out.cls + lambda * out.dep;
    return out;
}

Mat grl_backward(const Mat& upstream) {
    Mat g = upstream;
    for (double& x : g.v) x = -x;
    return g;
}

std::vector<double> objective_gradients(const Model& model, const BatchView& batch,
                                        const TrainConfig& cfg, const MineNet* mine,
                                        Rng& perm_rng, const std::vector<int>* fixed_perm,
                                        StepInfo* out_info) {
    if (model.config().shared_latent)
        throw InvalidInput("objective_gradients: requires a split-latent model");
    StepInfo info;
    EncoderCache cache;
    const Mat z = model.encode(batch.images, &cache);
    const auto [z1, z2] = split_latent(z, model.config());
    const Mat logits1 = model.head_forward(1, z1);
    const Mat logits2 = model.head_forward(2, z2);
    const double ce1 = cross_entropy(logits1, batch.y1);
    const double ce2 = cross_entropy(logits2, batch.y2);
    info.cls = 0.5 * (ce1 + ce2);

    std::vector<double> gparams(model.params().size(), 0.0);
    Mat gz1(z.rows, model.config().d1), gz2(z.rows, model.config().d2);
    model.head_backward(1, z1, ce_logit_grad(logits1, batch.y1, 0.5), gz1, gparams);
    model.head_backward(2, z2, ce_logit_grad(logits2, batch.y2, 0.5), gz2, gparams);

    if (cfg.lambda > 0.0 && has_measure(cfg.method)) {
        try {
            ValueGrads vg;
            if (cfg.method == MethodKind::mine) {
                if (!mine) throw InvalidInput("objective_gradients: mine method without a MineNet");
                const std::vector<int> perm =
                    fixed_perm ? *fixed_perm : perm_rng.permutation(z.rows);
                MineGrads mg = mine_grad(*mine, z1, z2, perm);
                vg.value = mg.value;
                vg.g1 = std::move(mg.g1);
                vg.g2 = std::move(mg.g2);
            } else {
                DependenceAux aux;
                aux.kernel = &cfg.kernel;
                aux.mmd_opt = &cfg.mmd_opt;
                vg = dependence_gradients(to_measure(cfg.method), z1, z2, aux);
            }
            info.dep = vg.value;
            for (size_t i = 0; i < gz1.v.size(); ++i) gz1.v[i] += cfg.lambda * vg.g1.v[i];
            for (size_t i = 0; i < gz2.v.size(); ++i) gz2.v[i] += cfg.lambda * vg.g2.v[i];
        } catch (const DegenerateInput&) {
            info.degenerate = true;
        }
    }

    Mat gz(z.rows, model.config().latent);
    for (int i = 0; i < z.rows; ++i) {
        for (int k = 0; k < model.config().d1; ++k) gz.at(i, k) = gz1.at(i, k);
        for (int k = 0; k < model.config().d2; ++k) gz.at(i, model.config().d1 + k) = gz2.at(i, k);
    }
    model.encode_backward(cache, gz, gparams);
    info.loss = info.cls + cfg.lambda * info.dep;
    if (out_info) *out_info = info;
    return gparams;
}

std::vector<double> adversarial_gradients(const Model& model, const BatchView& batch,
                                          double lambda, StepInfo* out_info) {
    if (!model.config().shared_latent)
        throw InvalidInput("adversarial_gradients: requires shared-latent mode");
    StepInfo info;
    EncoderCache cache;
    const Mat z = model.encode(batch.images, &cache);
    const Mat logits1 = model.head_forward(1, z);
    const Mat logits2 = model.head_forward(2, z);
    const double ce1 = cross_entropy(logits1, batch.y1);
    const double ce2 = cross_entropy(logits2, batch.y2);
    info.cls = 0.5 * (ce1 + ce2);

    std::vector<double> gparams(model.params().size(), 0.0);
    Mat gz(z.rows, z.cols);
    model.head_backward(1, z, ce_logit_grad(logits1, batch.y1, 1.0), gz, gparams);

    // The adversary's own parameters descend CE2 unreversed; only the
    // encoder-bound gradient passes through the reversal, scaled by lambda.
    Mat gz_head2(z.rows, z.cols);
    model.head_backward(2, z, ce_logit_grad(logits2, batch.y2, 1.0), gz_head2, gparams);
    const Mat reversed = grl_backward(gz_head2);
    for (size_t i = 0; i < gz.v.size(); ++i) gz.v[i] += lambda * reversed.v[i];

    model.encode_backward(cache, gz, gparams);
    info.loss = ce1 - lambda * ce2;
    info.dep = ce2;
    if (out_info) *out_info = info;
    return gparams;
}

StepInfo combined_step(Model& model, Adam& opt, const BatchView& batch, const TrainConfig& cfg,
                       const MineNet* mine, Rng& perm_rng) {
    StepInfo info;
    const std::vector<double> g =
        objective_gradients(model, batch, cfg, mine, perm_rng, nullptr, &info);
    opt.step(model.params(), g);
    return info;
}

StepInfo adversarial_step(Model& model, Adam& opt, const BatchView& batch, double lambda) {
    StepInfo info;
    const std::vector<double> g = adversarial_gradients(model, batch, lambda, &info);
    opt.step(model.params(), g);
    return info;
}

StepInfo mine_estimator_step(const Model& model, MineNet& mine, Adam& mine_opt,
                             const BatchView& batch, const TrainConfig& cfg, Rng& perm_rng,
                             double* ema_state) {
    StepInfo info;
    const Mat z = model.encode(batch.images);
    const auto [z1, z2] = split_latent(z, model.config());
    const std::vector<int> perm = perm_rng.permutation(z.rows);
    MineGradOptions opt;
    opt.ema_correction = cfg.mine_ema_grad;
    opt.ema_decay = cfg.mine_ema_decay;
    opt.ema_state = ema_state;
    const MineGrads g = mine_grad(mine, z1, z2, perm, opt);
    std::vector<double> ascent(g.gtheta.size());
    for (size_t i = 0; i < ascent.size(); ++i) ascent[i] = -g.gtheta[i];
    mine_opt.step(mine.params(), ascent);
    info.loss = info.dep = g.value;
    return info;
}

FitResult fit(Model& model, MineNet* mine, const std::vector<LabeledImage>& train,
              const std::vector<LabeledImage>& val, const TrainConfig& cfg,
              const FitHooks& hooks) {
    cfg.validate();
    if (train.empty() || val.empty()) throw InvalidInput("fit: empty train or val set");
    if (cfg.method == MethodKind::mine && !mine)
        throw InvalidInput("fit: mine method needs a MineNet");
    if (cfg.method == MethodKind::advcl && !model.config().shared_latent)
        throw InvalidInput("fit: advcl needs a shared-latent model");
    {
        std::set<long> tg;
        for (const auto& s : train) tg.insert(s.group);
        for (const auto& s : val)
            if (tg.count(s.group)) throw InvalidInput("fit: train and val share a group id");
    }

    Adam opt(model.params().size(), cfg.lr, cfg.weight_decay);
    Adam mine_opt(mine ? mine->params().size() : 0, cfg.lr, 0.0);
    double ema_state = std::numeric_limits<double>::quiet_NaN();

    std::vector<size_t> order(train.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::vector<size_t> val_idx(val.size());
    for (size_t i = 0; i < val_idx.size(); ++i) val_idx[i] = i;
    const BatchView val_batch = make_batch(val, val_idx);

    FitResult res;
    std::vector<double> last_good = model.params();
    int since_best = 0;

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        Rng epoch_rng(mix_seed(cfg.seed, static_cast<uint64_t>(epoch)));
        epoch_rng.shuffle(order);

        double loss_acc = 0.0, dep_acc = 0.0;
        long encoder_steps = 0;
        size_t pos = 0;
        int cycle = 0;
        while (pos < order.size()) {
            const size_t take = std::min(static_cast<size_t>(cfg.batch), order.size() - pos);
            if (take < 2) break;  // a one-sample tail batch has no pairwise structure
            std::vector<size_t> idx(order.begin() + static_cast<long>(pos),
                                    order.begin() + static_cast<long>(pos + take));
            pos += take;
            const BatchView batch = make_batch(train, idx);

            StepInfo info;
            bool counts_toward_epoch = true;
            if (cfg.method == MethodKind::advcl) {
                info = adversarial_step(model, opt, batch, cfg.lambda);
                ++res.encoder_updates;
            } else if (cfg.method == MethodKind::mine) {
                if (cycle == 0) {
                    // joint step: encoder descends the bound at fixed T, then
                    // the estimator ascends on the same batch
                    info = combined_step(model, opt, batch, cfg, mine, epoch_rng);
                    mine_estimator_step(model, *mine, mine_opt, batch, cfg, epoch_rng, &ema_state);
                    ++res.encoder_updates;
                    ++res.estimator_updates;
                } else {
                    info = mine_estimator_step(model, *mine, mine_opt, batch, cfg, epoch_rng,
                                               &ema_state);
                    ++res.estimator_updates;
                    ++res.estimator_only_updates;
                    counts_toward_epoch = false;
                }
                cycle = (cycle + 1) % cfg.mine_inner;
            } else {
                info = combined_step(model, opt, batch, cfg, mine, epoch_rng);
                ++res.encoder_updates;
            }
            if (counts_toward_epoch) {
                loss_acc += info.loss;
                dep_acc += info.dep;
                ++encoder_steps;
            }
            if (info.degenerate) ++res.degenerate_batches;
        }
        if (cfg.method == MethodKind::mine && cycle != 0) ++res.truncated_cycles;
        if (encoder_steps == 0) throw InvalidInput("fit: training set smaller than one batch pair");

        EpochStats stats;
        stats.train_loss = loss_acc / static_cast<double>(encoder_steps);
        stats.val_loss = hooks.val_loss_override ? hooks.val_loss_override(epoch)
                                                 : classification_loss(model, val_batch);
        if (has_measure(cfg.method) && cfg.lambda > 0.0) {
            stats.dependence = dep_acc / static_cast<double>(encoder_steps);
        } else if (!model.config().shared_latent) {
            // diagnostic only: dcor of the validation embeddings
            try {
                const Mat zv = model.encode(val_batch.images);
                const auto [z1v, z2v] = split_latent(zv, model.config());
                stats.dependence = dcor(z1v, z2v);
            } catch (const DegenerateInput&) {
                stats.dependence = 0.0;
            }
        }
        res.history.push_back(stats);
        res.epochs_run = epoch;

        if (!std::isfinite(stats.train_loss) || !std::isfinite(stats.val_loss)) {
            res.aborted = true;
            res.abort_reason = "NumericalError";
            break;
        }
        last_good = model.params();

        if (stats.val_loss < res.best_val_loss) {
            res.best_val_loss = stats.val_loss;
            res.best_epoch = epoch;
            res.best_params = model.params();
            since_best = 0;
        } else {
            ++since_best;
            if (since_best >= cfg.patience) break;
        }
    }

    if (res.best_params.empty()) {
        res.best_params = last_good;  // aborted before any finite epoch
        res.best_epoch = res.epochs_run;
    }
    model.params() = res.best_params;
    return res;
}

}  // namespace disbench
