#include "disbench/nets.hpp"

#include <cmath>

#include "disbench/errors.hpp"
#include "disbench/rng.hpp"

namespace disbench {

size_t ParamStore::add(const std::string& name, std::vector<int> shape, int fan_in) {
    ParamBlock blk;
    blk.name = name;
    blk.offset = w.size();
    blk.shape = std::move(shape);
    blk.init_fan_in = fan_in;
    w.resize(blk.offset + blk.size(), 0.0);
    blocks.push_back(blk);
    return blocks.back().offset;
}

void ParamStore::init_uniform_fanin(uint64_t seed) {
    Rng rng(seed);
    for (const auto& blk : blocks) {
        const int fan = blk.fan_in();
        const double bound = fan > 0 ? 1.0 / std::sqrt(static_cast<double>(fan)) : 0.0;
        for (size_t i = 0; i < blk.size(); ++i)
            w[blk.offset + i] = bound > 0.0 ? rng.uniform(-bound, bound) : 0.0;
    }
}

void Adam::step(std::vector<double>& w, const std::vector<double>& g) {
    ++t_;
    const double bc1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (size_t i = 0; i < w.size(); ++i) {
        m_[i] = b1_ * m_[i] + (1.0 - b1_) * g[i];
        v_[i] = b2_ * v_[i] + (1.0 - b2_) * g[i] * g[i];
        const double mhat = m_[i] / bc1;
        const double vhat = v_[i] / bc2;
        w[i] -= lr_ * (mhat / (std::sqrt(vhat) + eps_) + wd_ * w[i]);
    }
}

void EncoderConfig::validate() const {
    if (side < 4) throw InvalidInput("encoder side must be >= 4");
    if (latent < 2) throw InvalidInput("latent dimension must be >= 2");
    if (d1 + d2 != latent) throw InvalidInput("d1 + d2 must equal latent dimension");
    if (d1 < 1 || d2 < 1) throw InvalidInput("subspace dimensions must be positive");
    if (arch == Arch::conv3)
        for (int c : conv_channels)
            if (c < 1) throw InvalidInput("conv channel widths must be positive");
    if (arch == Arch::mlp && mlp_hidden < 1) throw InvalidInput("mlp hidden width must be positive");
}

namespace {

inline int conv_out(int in) { return (in - 1) / 2 + 1; }  // k=3, stride=2, pad=1

void conv_forward(const double* w, const double* b, const double* x, int in_c, int in_h,
                  int in_w, double* y, int out_c, int out_h, int out_w) {
    for (int oc = 0; oc < out_c; ++oc) {
        const double* woc = w + static_cast<size_t>(oc) * in_c * 9;
        for (int oy = 0; oy < out_h; ++oy) {
            for (int ox = 0; ox < out_w; ++ox) {
                double acc = b[oc];
                for (int ic = 0; ic < in_c; ++ic) {
                    const double* xc = x + static_cast<size_t>(ic) * in_h * in_w;
                    const double* wk = woc + ic * 9;
                    for (int ky = 0; ky < 3; ++ky) {
                        const int iy = oy * 2 + ky - 1;
                        if (iy < 0 || iy >= in_h) continue;
                        for (int kx = 0; kx < 3; ++kx) {
                            const int ix = ox * 2 + kx - 1;
                            if (ix < 0 || ix >= in_w) continue;
                            acc += wk[ky * 3 + kx] * xc[iy * in_w + ix];
                        }
                    }
                }
                y[(static_cast<size_t>(oc) * out_h + oy) * out_w + ox] = acc;
            }
        }
    }
}

void conv_backward(const double* w, const double* x, const double* gy, int in_c, int in_h,
                   int in_w, int out_c, int out_h, int out_w, double* gw, double* gb,
                   double* gx) {
    for (int oc = 0; oc < out_c; ++oc) {
        const double* woc = w + static_cast<size_t>(oc) * in_c * 9;
        double* gwoc = gw + static_cast<size_t>(oc) * in_c * 9;
        for (int oy = 0; oy < out_h; ++oy) {
            for (int ox = 0; ox < out_w; ++ox) {
                const double g = gy[(static_cast<size_t>(oc) * out_h + oy) * out_w + ox];
                if (g == 0.0) continue;
                gb[oc] += g;
                for (int ic = 0; ic < in_c; ++ic) {
                    const double* xc = x + static_cast<size_t>(ic) * in_h * in_w;
                    double* gxc = gx ? gx + static_cast<size_t>(ic) * in_h * in_w : nullptr;
                    const double* wk = woc + ic * 9;
                    double* gwk = gwoc + ic * 9;
                    for (int ky = 0; ky < 3; ++ky) {
                        const int iy = oy * 2 + ky - 1;
                        if (iy < 0 || iy >= in_h) continue;
                        for (int kx = 0; kx < 3; ++kx) {
                            const int ix = ox * 2 + kx - 1;
                            if (ix < 0 || ix >= in_w) continue;
                            gwk[ky * 3 + kx] += g * xc[iy * in_w + ix];
                            if (gxc) gxc[iy * in_w + ix] += g * wk[ky * 3 + kx];
                        }
                    }
                }
            }
        }
    }
}

inline double relu(double x) { return x > 0.0 ? x : 0.0; }

}  // namespace

Model::Model(const EncoderConfig& cfg, uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    if (cfg_.arch == Arch::conv3) {
        int c_in = 1, h = cfg_.side, w = cfg_.side;
        for (int i = 0; i < 3; ++i) {
            Conv c;
            c.in_c = c_in;
            c.in_h = h;
            c.in_w = w;
            c.out_c = cfg_.conv_channels[static_cast<size_t>(i)];
            c.out_h = conv_out(h);
            c.out_w = conv_out(w);
            const std::string tag = "enc.conv" + std::to_string(i + 1);
            c.w_off = store_.add(tag + ".w", {c.out_c, c.in_c, 3, 3});
            c.b_off = store_.add(tag + ".b", {c.out_c}, c.in_c * 9);
            convs_.push_back(c);
            c_in = c.out_c;
            h = c.out_h;
            w = c.out_w;
        }
        flat_dim_ = c_in * h * w;
        proj_.in = flat_dim_;
        proj_.out = cfg_.latent;
        proj_.w_off = store_.add("enc.proj.w", {proj_.out, proj_.in});
        proj_.b_off = store_.add("enc.proj.b", {proj_.out}, proj_.in);
    } else {
        flat_dim_ = cfg_.side * cfg_.side;
        Dense fc1;
        fc1.in = flat_dim_;
        fc1.out = cfg_.mlp_hidden;
        fc1.w_off = store_.add("enc.fc1.w", {fc1.out, fc1.in});
        fc1.b_off = store_.add("enc.fc1.b", {fc1.out}, fc1.in);
        mlp_fc1_ = fc1;
        proj_.in = cfg_.mlp_hidden;
        proj_.out = cfg_.latent;
        proj_.w_off = store_.add("enc.proj.w", {proj_.out, proj_.in});
        proj_.b_off = store_.add("enc.proj.b", {proj_.out}, proj_.in);
    }
    head1_.in = head_input_dim(1);
    head1_.out = 2;
    head1_.w_off = store_.add("head1.w", {2, head1_.in});
    head1_.b_off = store_.add("head1.b", {2}, head1_.in);
    head2_.in = head_input_dim(2);
    head2_.out = 2;
    head2_.w_off = store_.add("head2.w", {2, head2_.in});
    head2_.b_off = store_.add("head2.b", {2}, head2_.in);
    store_.init_uniform_fanin(seed);
}

int Model::head_input_dim(int head) const {
    if (cfg_.shared_latent) return cfg_.latent;
    return head == 1 ? cfg_.d1 : cfg_.d2;
}

void Model::dense_forward(const Dense& d, const Mat& x, Mat& y) const {
    const double* w = store_.w.data() + d.w_off;
    const double* b = store_.w.data() + d.b_off;
    y = Mat(x.rows, d.out);
    for (int n = 0; n < x.rows; ++n) {
        const double* xr = x.row(n);
        double* yr = y.row(n);
        for (int o = 0; o < d.out; ++o) {
            const double* wr = w + static_cast<size_t>(o) * d.in;
            double acc = b[o];
            for (int i = 0; i < d.in; ++i) acc += wr[i] * xr[i];
            yr[o] = acc;
        }
    }
}

void Model::dense_backward(const Dense& d, const Mat& x, const Mat& gy, Mat* gx,
                           std::vector<double>& gparams) const {
    const double* w = store_.w.data() + d.w_off;
    double* gw = gparams.data() + d.w_off;
    double* gb = gparams.data() + d.b_off;
    for (int n = 0; n < x.rows; ++n) {
        const double* xr = x.row(n);
        const double* gr = gy.row(n);
        double* gxr = gx ? gx->row(n) : nullptr;
        for (int o = 0; o < d.out; ++o) {
            const double g = gr[o];
            if (g == 0.0) continue;
            gb[o] += g;
            const double* wr = w + static_cast<size_t>(o) * d.in;
            double* gwr = gw + static_cast<size_t>(o) * d.in;
            for (int i = 0; i < d.in; ++i) {
                gwr[i] += g * xr[i];
                if (gxr) gxr[i] += g * wr[i];
            }
        }
    }
}

Mat Model::encode(const Mat& images, EncoderCache* cache) const {
    if (images.cols != cfg_.side * cfg_.side)
        throw ShapeMismatch("image batch width does not match encoder side");
    const int n = images.rows;
    EncoderCache local;
    EncoderCache& c = cache ? *cache : local;
    c.x = images;
    c.pre.clear();

    if (cfg_.arch == Arch::conv3) {
        Mat cur = images;
        for (const Conv& cv : convs_) {
            Mat pre(n, cv.out_c * cv.out_h * cv.out_w);
            for (int s = 0; s < n; ++s)
                conv_forward(store_.w.data() + cv.w_off, store_.w.data() + cv.b_off, cur.row(s),
                             cv.in_c, cv.in_h, cv.in_w, pre.row(s), cv.out_c, cv.out_h, cv.out_w);
            c.pre.push_back(pre);
            Mat act = pre;
            for (double& x : act.v) x = relu(x);
            cur = std::move(act);
        }
        Mat z;
        dense_forward(proj_, cur, z);
        return z;
    }

    Mat pre1;
    dense_forward(mlp_fc1_, images, pre1);
    c.pre.push_back(pre1);
    Mat act = pre1;
    for (double& x : act.v) x = relu(x);
    Mat z;
    dense_forward(proj_, act, z);
    return z;
}

void Model::encode_backward(const EncoderCache& cache, const Mat& gz,
                            std::vector<double>& gparams) const {
    const int n = cache.x.rows;
    if (cfg_.arch == Arch::conv3) {
        Mat last_act = cache.pre.back();
        for (double& x : last_act.v) x = relu(x);
        Mat ga(n, flat_dim_);
        dense_backward(proj_, last_act, gz, &ga, gparams);
        for (int li = 2; li >= 0; --li) {
            const Conv& cv = convs_[static_cast<size_t>(li)];
            // ReLU mask on this layer's pre-activation
            const Mat& pre = cache.pre[static_cast<size_t>(li)];
            for (size_t i = 0; i < ga.v.size(); ++i)
                if (pre.v[i] <= 0.0) ga.v[i] = 0.0;
            // input to this conv layer
            Mat in_act;
            if (li == 0) {
                in_act = cache.x;
            } else {
                in_act = cache.pre[static_cast<size_t>(li - 1)];
                for (double& x : in_act.v) x = relu(x);
            }
            Mat gx(n, cv.in_c * cv.in_h * cv.in_w);
            for (int s = 0; s < n; ++s)
                conv_backward(store_.w.data() + cv.w_off, in_act.row(s), ga.row(s), cv.in_c,
                              cv.in_h, cv.in_w, cv.out_c, cv.out_h, cv.out_w,
                              gparams.data() + cv.w_off, gparams.data() + cv.b_off,
                              li == 0 ? nullptr : gx.row(s));
            ga = std::move(gx);
        }
        return;
    }

    Mat act = cache.pre[0];
    for (double& x : act.v) x = relu(x);
    Mat gh(n, cfg_.mlp_hidden);
    dense_backward(proj_, act, gz, &gh, gparams);
    const Mat& pre1 = cache.pre[0];
    for (size_t i = 0; i < gh.v.size(); ++i)
        if (pre1.v[i] <= 0.0) gh.v[i] = 0.0;
    dense_backward(mlp_fc1_, cache.x, gh, nullptr, gparams);
}

Mat Model::head_forward(int head, const Mat& zsub) const {
    const Dense& d = head == 1 ? head1_ : head2_;
    if (zsub.cols != d.in) throw ShapeMismatch("head input width mismatch");
    Mat logits;
    dense_forward(d, zsub, logits);
    return logits;
}

void Model::head_backward(int head, const Mat& zsub, const Mat& glogits, Mat& gzsub,
                          std::vector<double>& gparams) const {
    const Dense& d = head == 1 ? head1_ : head2_;
    dense_backward(d, zsub, glogits, &gzsub, gparams);
}

MineNet::MineNet(int d1, int d2, int hidden, uint64_t seed)
    : d1_(d1), d2_(d2), hidden_(hidden) {
    if (d1 < 1 || d2 < 1 || hidden < 1) throw InvalidInput("MineNet dimensions must be positive");
    w1_ = store_.add("mine.fc1.w", {hidden_, d1_ + d2_});
    b1_ = store_.add("mine.fc1.b", {hidden_}, d1_ + d2_);
    w2_ = store_.add("mine.fc2.w", {hidden_, hidden_});
    b2_ = store_.add("mine.fc2.b", {hidden_}, hidden_);
    w3_ = store_.add("mine.fc3.w", {1, hidden_});
    b3_ = store_.add("mine.fc3.b", {1}, hidden_);
    store_.init_uniform_fanin(seed);
}

std::vector<double> MineNet::forward(const Mat& z1, const Mat& z2,
                                     const std::vector<int>& rows2, Cache* cache) const {
    if (z1.cols != d1_ || z2.cols != d2_) throw ShapeMismatch("MineNet input width mismatch");
    const int n = z1.rows;
    Cache local;
    Cache& c = cache ? *cache : local;
    c.in = Mat(n, d1_ + d2_);
    for (int i = 0; i < n; ++i) {
        const int j = rows2.empty() ? i : rows2[static_cast<size_t>(i)];
        for (int k = 0; k < d1_; ++k) c.in.at(i, k) = z1.at(i, k);
        for (int k = 0; k < d2_; ++k) c.in.at(i, d1_ + k) = z2.at(j, k);
    }
    const double* w = store_.w.data();
    c.pre1 = Mat(n, hidden_);
    c.pre2 = Mat(n, hidden_);
    std::vector<double> out(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        const double* xr = c.in.row(i);
        double* p1 = c.pre1.row(i);
        for (int o = 0; o < hidden_; ++o) {
            const double* wr = w + w1_ + static_cast<size_t>(o) * (d1_ + d2_);
            double acc = w[b1_ + o];
            for (int k = 0; k < d1_ + d2_; ++k) acc += wr[k] * xr[k];
            p1[o] = acc;
        }
        double* p2 = c.pre2.row(i);
        for (int o = 0; o < hidden_; ++o) {
            const double* wr = w + w2_ + static_cast<size_t>(o) * hidden_;
            double acc = w[b2_ + o];
            for (int k = 0; k < hidden_; ++k) acc += wr[k] * relu(p1[k]);
            p2[o] = acc;
        }
        double acc = w[b3_];
        const double* wr = w + w3_;
        for (int k = 0; k < hidden_; ++k) acc += wr[k] * relu(p2[k]);
        out[static_cast<size_t>(i)] = acc;
    }
    return out;
}

void MineNet::backward(const Cache& cache, const std::vector<double>& gout,
                       std::vector<double>* gparams, Mat* g1, Mat* g2,
                       const std::vector<int>& rows2) const {
    const int n = cache.in.rows;
    const double* w = store_.w.data();
    std::vector<double> gh2(static_cast<size_t>(hidden_));
    std::vector<double> gh1(static_cast<size_t>(hidden_));
    for (int i = 0; i < n; ++i) {
        const double g = gout[static_cast<size_t>(i)];
        if (g == 0.0) continue;
        const double* p1 = cache.pre1.row(i);
        const double* p2 = cache.pre2.row(i);
        const double* xr = cache.in.row(i);
        // output layer
        if (gparams) (*gparams)[b3_] += g;
        for (int k = 0; k < hidden_; ++k) {
            const double a2 = relu(p2[k]);
            if (gparams) (*gparams)[w3_ + static_cast<size_t>(k)] += g * a2;
            gh2[static_cast<size_t>(k)] = p2[k] > 0.0 ? g * w[w3_ + static_cast<size_t>(k)] : 0.0;
        }
        // second hidden layer
        std::fill(gh1.begin(), gh1.end(), 0.0);
        for (int o = 0; o < hidden_; ++o) {
            const double go = gh2[static_cast<size_t>(o)];
            if (go == 0.0) continue;
            if (gparams) (*gparams)[b2_ + static_cast<size_t>(o)] += go;
            const double* wr = w + w2_ + static_cast<size_t>(o) * hidden_;
            for (int k = 0; k < hidden_; ++k) {
                const double a1 = relu(p1[k]);
                if (gparams)
                    (*gparams)[w2_ + static_cast<size_t>(o) * hidden_ + static_cast<size_t>(k)] +=
                        go * a1;
                if (p1[k] > 0.0) gh1[static_cast<size_t>(k)] += go * wr[k];
            }
        }
        // first layer
        for (int o = 0; o < hidden_; ++o) {
            const double go = gh1[static_cast<size_t>(o)];
            if (go == 0.0) continue;
            if (gparams) (*gparams)[b1_ + static_cast<size_t>(o)] += go;
            const double* wr = w + w1_ + static_cast<size_t>(o) * (d1_ + d2_);
            for (int k = 0; k < d1_ + d2_; ++k) {
                if (gparams)
                    (*gparams)[w1_ + static_cast<size_t>(o) * (d1_ + d2_) +
                               static_cast<size_t>(k)] += go * xr[k];
                if (k < d1_) {
                    if (g1) g1->at(i, k) += go * wr[k];
                } else if (g2) {
                    const int j = rows2.empty() ? i : rows2[static_cast<size_t>(i)];
                    g2->at(j, k - d1_) += go * wr[k];
                }
            }
        }
    }
}

}  // namespace disbench
