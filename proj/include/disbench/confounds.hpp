#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <vector>

#include "disbench/mat.hpp"

namespace disbench {

// One grayscale sample. Pixels are stored as float32 so disk round-trips are
// lossless; training code widens to double at batch assembly.
struct LabeledImage {
    std::vector<float> pixels;  // side*side, row-major, in [0,1]
    int side = 16;
    int y1 = 0;  // glyph class: 0 plus-cross, 1 square outline
    int y2 = 0;  // confounder: stroke thickness or notch presence
    long group = 0;
};

// Target 2x2 joint distribution over (y1,y2): diagonal cells carry p/2 each,
// off-diagonal (1-p)/2, marginals balanced.
struct ContingencySpec {
    double p = 0.95;
    size_t total = 0;  // sample budget M

    void validate() const;
};

struct NotchSpec {
    double radius = 0.55;    // band center as fraction of the Nyquist radius
    double strength = 0.9;   // multiplicative attenuation depth at the center
    double width = 0.04;     // Gaussian band sigma, same radial units

    void validate() const;
};

struct ToyOptions {
    double noise_sigma = 0.05;
    int jitter = 2;  // integer translation range [-jitter, jitter]^2
};

// Base glyph at a given integer offset, 16x16, strokes at 1.0 on a 0.0
// background. thick=false draws 1-pixel strokes, thick=true 3-pixel.
// size_idx in {0,1,2} selects the glyph scale; flip swaps the cross arms.
// The two glyphs light the same number of pixels in every thick variant.
Mat draw_glyph(int glyph, bool thick, int dx, int dy, int size_idx, bool flip);
Mat draw_glyph(int glyph, bool thick, int dx, int dy);  // largest size, no flip

// Procedural pool: all four (y1,y2) cells in equal proportion (round-robin),
// jittered and noised per sample, group id = sample index. Bit-identical for
// a fixed seed.
std::vector<LabeledImage> generate_toy(size_t count, uint64_t seed,
                                       const ToyOptions& opt = {});

// Radial band-stop in the frequency domain: every bin is scaled by
// 1 - strength * exp(-(rho - radius)^2 / (2 width^2)) with rho the bin's
// radial frequency over the Nyquist radius min(H,W)/2.
Mat apply_notch(const Mat& img, const NotchSpec& spec);

std::array<size_t, 4> cell_counts(const std::vector<LabeledImage>& xs);  // index = y1*2+y2
double phi_coefficient(const std::array<size_t, 4>& cells);

struct SubsampleResult {
    std::vector<LabeledImage> samples;
    size_t requested = 0;
    size_t actual = 0;

    bool shrunk() const { return actual < requested; }
};

// Without-replacement draw hitting largest-remainder cell counts for the
// spec. If any cell demand exceeds supply, M shrinks to the largest feasible
// total preserving proportions (reported via requested/actual).
SubsampleResult subsample_contingency(const std::vector<LabeledImage>& pool,
                                      const ContingencySpec& spec, uint64_t seed);

// With-replacement oversampling of every cell up to the maximum cell count;
// all originals retained, output shuffled.
std::vector<LabeledImage> rebalance_oversample(const std::vector<LabeledImage>& train,
                                               uint64_t seed);

enum class TestKind { original, balanced, inverted };

// original: the pool as-is. balanced: p=0.5 subsample. inverted: diagonal
// mass 1 - p_train.
SubsampleResult make_test_split(const std::vector<LabeledImage>& pool, TestKind kind,
                                double p_train, size_t m, uint64_t seed);

struct SplitPlan {
    int folds = 0;
    std::map<long, int> fold_of_group;
};

// Groups shuffled by seed and dealt round-robin; no group straddles folds.
SplitPlan grouped_kfold(const std::vector<LabeledImage>& samples, int k, uint64_t seed);

// Assigns y2 against the existing y1 labels at the spec's contingency, then
// applies the notch filter to exactly the y2=1 images; y2=0 images stay
// bitwise untouched.
std::vector<LabeledImage> confound_by_notch(std::vector<LabeledImage> samples,
                                            const ContingencySpec& spec,
                                            const NotchSpec& notch, uint64_t seed);

}  // namespace disbench
