#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "disbench/mat.hpp"

namespace disbench {

struct ParamBlock {
    std::string name;
    size_t offset = 0;
    std::vector<int> shape;  // {out,in} for dense, {out_c,in_c,3,3} for conv, {n} for bias
    int init_fan_in = 0;     // bias blocks carry their layer's fan-in

    size_t size() const {
        size_t n = 1;
        for (int d : shape) n *= static_cast<size_t>(d);
        return n;
    }
    int fan_in() const {
        if (init_fan_in > 0) return init_fan_in;
        if (shape.size() < 2) return 0;
        int f = 1;
        for (size_t i = 1; i < shape.size(); ++i) f *= shape[i];
        return f;
    }
};

// Flat parameter vector with named blocks. Keeping every trainable scalar in
// one contiguous vector makes the optimizer, snapshots, finite-difference
// checks, and checkpoint serialization uniform.
class ParamStore {
public:
    size_t add(const std::string& name, std::vector<int> shape, int fan_in = 0);
    // every block U(-1/sqrt(fan_in), +1/sqrt(fan_in)); nonzero biases keep
    // pre-activations off the exact ReLU kink even for dead input patches
    void init_uniform_fanin(uint64_t seed);

    std::vector<double> w;
    std::vector<ParamBlock> blocks;
};

class Adam {  // decoupled weight decay
public:
    Adam(size_t n, double lr, double weight_decay)
        : lr_(lr), wd_(weight_decay), m_(n, 0.0), v_(n, 0.0) {}

    void step(std::vector<double>& w, const std::vector<double>& g);
    double lr() const { return lr_; }

private:
    double lr_;
    double wd_;
    double b1_ = 0.9, b2_ = 0.999, eps_ = 1e-8;
    long t_ = 0;
    std::vector<double> m_, v_;
};

enum class Arch { mlp, conv3 };

struct EncoderConfig {
    int side = 16;
    Arch arch = Arch::conv3;
    std::array<int, 3> conv_channels{8, 16, 32};
    int mlp_hidden = 128;
    int latent = 4;
    int d1 = 2;
    int d2 = 2;
    bool shared_latent = false;  // AdvCl: both heads read the full latent

    void validate() const;  // throws InvalidInput
};

struct EncoderCache {
    Mat x;                 // N x side^2
    std::vector<Mat> pre;  // pre-activations per hidden layer, N x features
};

// Encoder (conv3 or mlp) plus two linear classification heads, all parameters
// in one flat store. No batch coupling anywhere: row i of a batch output
// depends only on image i.
class Model {
public:
    Model(const EncoderConfig& cfg, uint64_t seed);

    const EncoderConfig& config() const { return cfg_; }
    std::vector<double>& params() { return store_.w; }
    const std::vector<double>& params() const { return store_.w; }
    const std::vector<ParamBlock>& param_blocks() const { return store_.blocks; }

    // images: N x side^2, pixels expected in [0,1]. Returns N x latent.
    Mat encode(const Mat& images, EncoderCache* cache = nullptr) const;

    // gz: N x latent upstream gradient; accumulates into gparams (same length
    // as params()).
    void encode_backward(const EncoderCache& cache, const Mat& gz,
                         std::vector<double>& gparams) const;

    int head_input_dim(int head) const;  // head is 1 or 2
    Mat head_forward(int head, const Mat& zsub) const;
    // glogits: N x 2; accumulates head param grads and adds the input gradient
    // into gzsub (must be pre-sized N x head_input_dim).
    void head_backward(int head, const Mat& zsub, const Mat& glogits, Mat& gzsub,
                       std::vector<double>& gparams) const;

private:
    struct Dense {
        int in = 0, out = 0;
        size_t w_off = 0, b_off = 0;
    };
    struct Conv {  // 3x3 kernel, stride 2, pad 1
        int in_c = 0, in_h = 0, in_w = 0;
        int out_c = 0, out_h = 0, out_w = 0;
        size_t w_off = 0, b_off = 0;
    };

    void dense_forward(const Dense& d, const Mat& x, Mat& y) const;
    void dense_backward(const Dense& d, const Mat& x, const Mat& gy, Mat* gx,
                        std::vector<double>& gparams) const;

    EncoderConfig cfg_;
    ParamStore store_;
    std::vector<Conv> convs_;
    Dense mlp_fc1_;
    Dense proj_;
    Dense head1_, head2_;
    int flat_dim_ = 0;
};

// Statistic network T(z1_i, z2_j) -> scalar: two ReLU hidden layers on the
// concatenated pair.
class MineNet {
public:
    MineNet(int d1, int d2, int hidden, uint64_t seed);

    int d1() const { return d1_; }
    int d2() const { return d2_; }
    std::vector<double>& params() { return store_.w; }
    const std::vector<double>& params() const { return store_.w; }
    const std::vector<ParamBlock>& param_blocks() const { return store_.blocks; }

    struct Cache {
        Mat in;     // N x (d1+d2)
        Mat pre1;   // N x hidden
        Mat pre2;   // N x hidden
    };

    // Evaluates T on pairs (z1_i, z2_{rows2[i]}). rows2 empty means identity.
    std::vector<double> forward(const Mat& z1, const Mat& z2,
                                const std::vector<int>& rows2, Cache* cache = nullptr) const;

    // gout[i] = dL/dT_i. Accumulates into gparams when non-null; scatters the
    // input gradient into g1/g2 (pre-sized) when non-null, using rows2 for the
    // z2 half.
    void backward(const Cache& cache, const std::vector<double>& gout,
                  std::vector<double>* gparams, Mat* g1, Mat* g2,
                  const std::vector<int>& rows2) const;

private:
    int d1_, d2_, hidden_;
    ParamStore store_;
    size_t w1_, b1_, w2_, b2_, w3_, b3_;
};

}  // namespace disbench
