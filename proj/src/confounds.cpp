#include "disbench/confounds.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "disbench/errors.hpp"
#include "disbench/fft.hpp"
#include "disbench/rng.hpp"

namespace disbench {

namespace {

constexpr int kSide = 16;

// Per-size glyph dimensions. The cross arms are chosen so the thick variants
// of both glyphs light exactly the same pixel count at every size (36/48/60),
// and sizes overlap across glyphs: total intensity then separates stroke
// thickness sharply while telling the glyphs apart only weakly.
struct GlyphDims {
    int square_lo, square_hi;       // square outline bounds
    int arm_long, arm_short;        // cross arm lengths
};
constexpr GlyphDims kGlyphDims[3] = {
    {5, 10, 8, 7},    // square side 6, thick 36 px each
    {4, 10, 10, 9},   // square side 7, thick 48 px each
    {4, 11, 12, 11},  // square side 8, thick 60 px each
};

void put(Mat& img, int r, int c, double v) {
    if (r >= 0 && r < img.rows && c >= 0 && c < img.cols) img.at(r, c) = v;
}

void draw_ring(Mat& img, int lo, int hi, int dx, int dy) {
    for (int c = lo; c <= hi; ++c) {
        put(img, lo + dy, c + dx, 1.0);
        put(img, hi + dy, c + dx, 1.0);
    }
    for (int r = lo; r <= hi; ++r) {
        put(img, r + dy, lo + dx, 1.0);
        put(img, r + dy, hi + dx, 1.0);
    }
}

void draw_stroke(Mat& img, bool horizontal, int length, int half_width, int dx, int dy) {
    const int start = 8 - length / 2;
    for (int off = -half_width; off <= half_width; ++off)
        for (int k = 0; k < length; ++k) {
            if (horizontal)
                put(img, 8 + off + dy, start + k + dx, 1.0);
            else
                put(img, start + k + dy, 8 + off + dx, 1.0);
        }
}

size_t cell_of(const LabeledImage& s) {
    return static_cast<size_t>(s.y1 * 2 + s.y2);
}

// Largest-remainder apportionment of m over the four contingency weights;
// sums to m exactly, ties broken by cell index.
std::array<size_t, 4> cell_targets(double p, size_t m) {
    const std::array<double, 4> w = {p / 2.0, (1.0 - p) / 2.0, (1.0 - p) / 2.0, p / 2.0};
    std::array<size_t, 4> counts{};
    std::array<double, 4> frac{};
    size_t assigned = 0;
    for (int c = 0; c < 4; ++c) {
        const double exact = w[static_cast<size_t>(c)] * static_cast<double>(m);
        counts[static_cast<size_t>(c)] = static_cast<size_t>(std::floor(exact));
        frac[static_cast<size_t>(c)] = exact - std::floor(exact);
        assigned += counts[static_cast<size_t>(c)];
    }
    std::array<int, 4> order = {0, 1, 2, 3};
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return frac[static_cast<size_t>(a)] > frac[static_cast<size_t>(b)]; });
    for (size_t r = 0; r < m - assigned; ++r) ++counts[static_cast<size_t>(order[r % 4])];
    return counts;
}

float quantize(double v) { return static_cast<float>(v); }

}  // namespace

void ContingencySpec::validate() const {
    if (!(p > 0.0 && p < 1.0)) throw InvalidInput("contingency p must lie in (0,1)");
    if (total == 0) throw InvalidInput("contingency total must be positive");
}

void NotchSpec::validate() const {
    if (!(radius > 0.0 && radius < 1.0)) throw InvalidInput("notch radius must lie in (0,1)");
    if (!(strength >= 0.0 && strength <= 1.0)) throw InvalidInput("notch strength must lie in [0,1]");
    if (!(width > 0.0)) throw InvalidInput("notch width must be positive");
}

Mat draw_glyph(int glyph, bool thick, int dx, int dy, int size_idx, bool flip) {
    if (size_idx < 0 || size_idx > 2) throw InvalidInput("draw_glyph: size index out of range");
    const GlyphDims& dims = kGlyphDims[static_cast<size_t>(size_idx)];
    Mat img(kSide, kSide);
    const int t = thick ? 1 : 0;  // stroke half-width
    if (glyph == 0) {
        // plus-cross; flip swaps which arm is the longer one
        draw_stroke(img, true, flip ? dims.arm_short : dims.arm_long, t, dx, dy);
        draw_stroke(img, false, flip ? dims.arm_long : dims.arm_short, t, dx, dy);
    } else {
        // square outline thickened inward
        for (int off = 0; off <= 2 * t; ++off)
            draw_ring(img, dims.square_lo + off, dims.square_hi - off, dx, dy);
    }
    return img;
}

Mat draw_glyph(int glyph, bool thick, int dx, int dy) {
    return draw_glyph(glyph, thick, dx, dy, 2, false);
}

std::vector<LabeledImage> generate_toy(size_t count, uint64_t seed, const ToyOptions& opt) {
    if (count < 1) throw InvalidInput("generate_toy: count must be >= 1");
    std::vector<LabeledImage> out;
    out.reserve(count);
    for (size_t i = 0; i < count; ++i) {
        const int cell = static_cast<int>(i % 4);
        LabeledImage s;
        s.y1 = cell >> 1;
        s.y2 = cell & 1;
        s.group = static_cast<long>(i);
        s.side = kSide;
        Rng rng(mix_seed(seed, i));
        const int dx = opt.jitter > 0 ? rng.range_int(-opt.jitter, opt.jitter) : 0;
        const int dy = opt.jitter > 0 ? rng.range_int(-opt.jitter, opt.jitter) : 0;
        const int size_idx = rng.range_int(0, 2);
        const bool flip = rng.below(2) == 1;
        // per-sample stroke contrast, kept above the 0.5 foreground threshold
        const double amplitude = rng.uniform(0.55, 0.95);
        Mat img = draw_glyph(s.y1, s.y2 == 1, dx, dy, size_idx, flip);
        for (double& v : img.v) v *= amplitude;
        if (opt.noise_sigma > 0.0)
            for (double& v : img.v) v = std::clamp(v + rng.normal(0.0, opt.noise_sigma), 0.0, 1.0);
        s.pixels.resize(img.v.size());
        for (size_t k = 0; k < img.v.size(); ++k) s.pixels[k] = quantize(img.v[k]);
        out.push_back(std::move(s));
    }
    return out;
}

Mat apply_notch(const Mat& img, const NotchSpec& spec) {
    spec.validate();
    const int h = img.rows, w = img.cols;
    if (h < 4 || w < 4) throw InvalidInput("apply_notch: image too small");
    if (!img.all_finite()) throw InvalidInput("apply_notch: non-finite pixels");

    std::vector<cplx> f(img.v.begin(), img.v.end());
    dft_2d(f, h, w, false);
    const double nyquist = std::min(h, w) / 2.0;
    for (int v = 0; v < h; ++v) {
        const double fv = v <= h / 2 ? v : v - h;
        for (int u = 0; u < w; ++u) {
            const double fu = u <= w / 2 ? u : u - w;
            const double rho = std::sqrt(fv * fv + fu * fu) / nyquist;
            const double gain =
                1.0 - spec.strength * std::exp(-sq(rho - spec.radius) / (2.0 * sq(spec.width)));
            f[static_cast<size_t>(v) * w + u] *= gain;
        }
    }
    dft_2d(f, h, w, true);
    Mat out(h, w);
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] = std::clamp(f[i].real(), 0.0, 1.0);
    return out;
}

std::array<size_t, 4> cell_counts(const std::vector<LabeledImage>& xs) {
    std::array<size_t, 4> counts{};
    for (const auto& s : xs) ++counts[cell_of(s)];
    return counts;
}

double phi_coefficient(const std::array<size_t, 4>& c) {
    const double n00 = static_cast<double>(c[0]), n01 = static_cast<double>(c[1]);
    const double n10 = static_cast<double>(c[2]), n11 = static_cast<double>(c[3]);
    const double denom = (n00 + n01) * (n10 + n11) * (n00 + n10) * (n01 + n11);
    if (denom <= 0.0) return 0.0;
    return (n00 * n11 - n01 * n10) / std::sqrt(denom);
}

SubsampleResult subsample_contingency(const std::vector<LabeledImage>& pool,
                                      const ContingencySpec& spec, uint64_t seed) {
    spec.validate();
    std::array<std::vector<size_t>, 4> members;
    for (size_t i = 0; i < pool.size(); ++i) members[cell_of(pool[i])].push_back(i);

    std::array<size_t, 4> targets = cell_targets(spec.p, spec.total);
    for (int c = 0; c < 4; ++c)
        if (targets[static_cast<size_t>(c)] > 0 && members[static_cast<size_t>(c)].empty())
            throw InvalidInput("subsample_contingency: required contingency cell is empty");

    // Shrink to the largest feasible total preserving the proportions.
    size_t m = spec.total;
    auto feasible = [&](const std::array<size_t, 4>& t) {
        for (int c = 0; c < 4; ++c)
            if (t[static_cast<size_t>(c)] > members[static_cast<size_t>(c)].size()) return false;
        return true;
    };
    if (!feasible(targets)) {
        // Largest total whose exact proportional demand m*w fits every cell;
        // the float division is nudged to the exact integer boundary.
        const std::array<double, 4> w = {spec.p / 2.0, (1.0 - spec.p) / 2.0, (1.0 - spec.p) / 2.0,
                                         spec.p / 2.0};
        auto cap_for = [](size_t supply, double weight) {
            const double s = static_cast<double>(supply);
            size_t k = static_cast<size_t>(std::max(std::floor(s / weight), 0.0));
            const double slack = s * (1.0 + 1e-12) + 1e-9;
            while (k > 0 && static_cast<double>(k) * weight > slack) --k;
            while (static_cast<double>(k + 1) * weight <= slack) ++k;
            return k;
        };
        for (int c = 0; c < 4; ++c)
            m = std::min(m, cap_for(members[static_cast<size_t>(c)].size(),
                                    w[static_cast<size_t>(c)]));
        targets = cell_targets(spec.p, m);
        while (m > 0 && !feasible(targets)) targets = cell_targets(spec.p, --m);
    }

    Rng rng(seed);
    SubsampleResult out;
    out.requested = spec.total;
    out.actual = m;
    for (int c = 0; c < 4; ++c) {
        auto& idx = members[static_cast<size_t>(c)];
        rng.shuffle(idx);
        for (size_t k = 0; k < targets[static_cast<size_t>(c)]; ++k)
            out.samples.push_back(pool[idx[k]]);
    }
    rng.shuffle(out.samples);
    return out;
}

std::vector<LabeledImage> rebalance_oversample(const std::vector<LabeledImage>& train,
                                               uint64_t seed) {
    std::array<std::vector<size_t>, 4> members;
    for (size_t i = 0; i < train.size(); ++i) members[cell_of(train[i])].push_back(i);
    size_t max_cell = 0;
    for (const auto& m : members) {
        if (m.empty()) throw EmptyCell("rebalance_oversample: empty contingency cell");
        max_cell = std::max(max_cell, m.size());
    }
    Rng rng(seed);
    std::vector<LabeledImage> out = train;
    for (const auto& m : members)
        for (size_t k = m.size(); k < max_cell; ++k)
            out.push_back(train[m[rng.below(m.size())]]);
    rng.shuffle(out);
    return out;
}

SubsampleResult make_test_split(const std::vector<LabeledImage>& pool, TestKind kind,
                                double p_train, size_t m, uint64_t seed) {
    if (kind == TestKind::original) {
        SubsampleResult r;
        r.samples = pool;
        r.requested = r.actual = pool.size();
        return r;
    }
    ContingencySpec spec;
    spec.total = m;
    spec.p = kind == TestKind::balanced ? 0.5 : 1.0 - p_train;
    return subsample_contingency(pool, spec, seed);
}

SplitPlan grouped_kfold(const std::vector<LabeledImage>& samples, int k, uint64_t seed) {
    if (k < 2) throw InvalidInput("grouped_kfold: need K >= 2");
    std::set<long> group_set;
    for (const auto& s : samples) group_set.insert(s.group);
    if (static_cast<int>(group_set.size()) < k)
        throw InvalidInput("grouped_kfold: fewer distinct groups than folds");
    std::vector<long> groups(group_set.begin(), group_set.end());
    Rng rng(seed);
    rng.shuffle(groups);
    SplitPlan plan;
    plan.folds = k;
    for (size_t i = 0; i < groups.size(); ++i)
        plan.fold_of_group[groups[i]] = static_cast<int>(i % static_cast<size_t>(k));
    return plan;
}

std::vector<LabeledImage> confound_by_notch(std::vector<LabeledImage> samples,
                                            const ContingencySpec& spec,
                                            const NotchSpec& notch, uint64_t seed) {
    spec.validate();
    notch.validate();
    Rng rng(seed);
    std::array<std::vector<size_t>, 2> by_class;
    for (size_t i = 0; i < samples.size(); ++i)
        by_class[static_cast<size_t>(samples[i].y1)].push_back(i);

    for (int y1 = 0; y1 < 2; ++y1) {
        auto& idx = by_class[static_cast<size_t>(y1)];
        rng.shuffle(idx);
        // diagonal cell for this class is y2 == y1
        const size_t diag = static_cast<size_t>(
            std::llround(spec.p * static_cast<double>(idx.size())));
        for (size_t k = 0; k < idx.size(); ++k) {
            const bool on_diag = k < diag;
            samples[idx[k]].y2 = on_diag ? y1 : 1 - y1;
        }
    }
    for (auto& s : samples) {
        if (s.y2 != 1) continue;
        Mat img(s.side, s.side);
        for (size_t i = 0; i < img.v.size(); ++i) img.v[i] = s.pixels[i];
        const Mat filtered = apply_notch(img, notch);
        for (size_t i = 0; i < img.v.size(); ++i) s.pixels[i] = quantize(filtered.v[i]);
    }
    return samples;
}

}  // namespace disbench
