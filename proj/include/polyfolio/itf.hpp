#ifndef POLYFOLIO_ITF_HPP
#define POLYFOLIO_ITF_HPP

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "polyfolio/errors.hpp"
#include "polyfolio/month.hpp"
#include "polyfolio/panel.hpp"
#include "polyfolio/parallel.hpp"
#include "polyfolio/rng.hpp"

namespace polyfolio::itf {

// Inverted transformer for trend classification. Each variate (one feature's
// whole lookback row) becomes a token; attention mixes information across
// variates, never across time. Layout for one sample with N variates:
//
//   tokens = MLP(x)                      x: N x T  ->  N x D   (shared MLP)
//   repeat L times (pre-norm):
//     tokens += MHA(LN(tokens))
//     tokens += FFN(LN(tokens))          D -> 4D -> D
//   probs = softmax(mean_rows(tokens) W_head + b_head)      3 classes
//
// Gradients are written out by hand; see loss_and_gradients().

using Mat = Eigen::MatrixXd;

enum class Trend : int { Down = 0, Unchanged = 1, Up = 2 };
inline constexpr std::size_t kClasses = 3;

inline const char* to_string(Trend t) {
    switch (t) {
    case Trend::Down: return "down";
    case Trend::Unchanged: return "unchanged";
    case Trend::Up: return "up";
    }
    return "?";
}

/// Up above +tau, Down below -tau, Unchanged on [-tau, tau].
inline Trend label_trend(double next_return, double tau) {
    if (next_return > tau) return Trend::Up;
    if (next_return < -tau) return Trend::Down;
    return Trend::Unchanged;
}

struct Dims {
    std::size_t lookback = 12; // T
    std::size_t variates = 9;  // N
    std::size_t model = 32;    // D
    std::size_t heads = 2;
    std::size_t head_dim = 16; // d_k
    std::size_t layers = 2;    // L
    std::size_t ff_mult = 4;

    void validate() const {
        if (!lookback || !variates || !heads || !head_dim || !ff_mult) throw InputError("model dimensions must be positive");
        if (model < 2) throw InputError("model width must be at least 2");
        if (heads * head_dim != model) throw InputError("heads * head_dim must equal the model width");
    }
    friend bool operator==(const Dims&, const Dims&) = default;
};

struct Block {
    Mat ln1_g, ln1_b;     // 1 x D
    Mat wq, wk, wv, wo;   // D x D (head h owns columns h*d_k .. h*d_k + d_k - 1)
    Mat bo;               // 1 x D
    Mat ln2_g, ln2_b;     // 1 x D
    Mat ff_w1, ff_b1;     // D x 4D, 1 x 4D
    Mat ff_w2, ff_b2;     // 4D x D, 1 x D
};

struct ModelParams {
    Dims dims;
    Mat emb_w1, emb_b1; // T x D, 1 x D
    Mat emb_w2, emb_b2; // D x D, 1 x D
    std::vector<Block> blocks;
    Mat head_w, head_b; // D x 3, 1 x 3

    /// Every tensor with a stable name, in a fixed order.
    std::vector<std::pair<std::string, Mat*>> tensors() {
        std::vector<std::pair<std::string, Mat*>> t{
            {"emb.w1", &emb_w1}, {"emb.b1", &emb_b1}, {"emb.w2", &emb_w2}, {"emb.b2", &emb_b2}};
        for (std::size_t l = 0; l < blocks.size(); ++l) {
            auto& b = blocks[l];
            std::string p = "block" + std::to_string(l) + ".";
            for (auto [n, m] : std::initializer_list<std::pair<const char*, Mat*>>{
                     {"ln1_g", &b.ln1_g}, {"ln1_b", &b.ln1_b}, {"wq", &b.wq},       {"wk", &b.wk},
                     {"wv", &b.wv},       {"wo", &b.wo},       {"bo", &b.bo},       {"ln2_g", &b.ln2_g},
                     {"ln2_b", &b.ln2_b}, {"ff_w1", &b.ff_w1}, {"ff_b1", &b.ff_b1}, {"ff_w2", &b.ff_w2},
                     {"ff_b2", &b.ff_b2}})
                t.emplace_back(p + n, m);
        }
        t.emplace_back("head.w", &head_w);
        t.emplace_back("head.b", &head_b);
        return t;
    }
    std::vector<std::pair<std::string, const Mat*>> tensors() const {
        auto t = const_cast<ModelParams*>(this)->tensors();
        return {t.begin(), t.end()};
    }

    std::size_t size() const {
        std::size_t n = 0;
        for (auto& [_, m] : tensors()) n += static_cast<std::size_t>(m->size());
        return n;
    }

    bool all_finite() const {
        for (auto& [_, m] : tensors())
            if (!m->allFinite()) return false;
        return true;
    }

    /// Same shapes, all zeros.
    ModelParams zeros_like() const {
        ModelParams z = *this;
        for (auto& [_, m] : z.tensors()) m->setZero();
        return z;
    }

    ModelParams& operator+=(const ModelParams& o) {
        auto a = tensors();
        auto b = o.tensors();
        for (std::size_t i = 0; i < a.size(); ++i) *a[i].second += *b[i].second;
        return *this;
    }
    ModelParams& operator*=(double s) {
        for (auto& [_, m] : tensors()) *m *= s;
        return *this;
    }
};

/// Shapes per `dims`; weights ~ N(0, 1/fan_in), layer-norm gains 1, all
/// biases and the classification head 0 (so the untrained model is uniform).
inline ModelParams init_params(const Dims& dims, std::uint64_t seed) {
    dims.validate();
    const auto T = static_cast<Eigen::Index>(dims.lookback);
    const auto D = static_cast<Eigen::Index>(dims.model);
    const auto F = static_cast<Eigen::Index>(dims.model * dims.ff_mult);
    auto g = rng::engine(seed, "init");
    auto gauss = [&](Eigen::Index r, Eigen::Index c) {
        Mat m(r, c);
        double s = 1.0 / std::sqrt(static_cast<double>(r));
        for (Eigen::Index j = 0; j < c; ++j)
            for (Eigen::Index i = 0; i < r; ++i) m(i, j) = s * rng::normal(g);
        return m;
    };
    ModelParams p;
    p.dims = dims;
    p.emb_w1 = gauss(T, D);
    p.emb_b1 = Mat::Zero(1, D);
    p.emb_w2 = gauss(D, D);
    p.emb_b2 = Mat::Zero(1, D);
    for (std::size_t l = 0; l < dims.layers; ++l) {
        Block b;
        b.ln1_g = Mat::Ones(1, D);
        b.ln1_b = Mat::Zero(1, D);
        b.wq = gauss(D, D);
        b.wk = gauss(D, D);
        b.wv = gauss(D, D);
        b.wo = gauss(D, D);
        b.bo = Mat::Zero(1, D);
        b.ln2_g = Mat::Ones(1, D);
        b.ln2_b = Mat::Zero(1, D);
        b.ff_w1 = gauss(D, F);
        b.ff_b1 = Mat::Zero(1, F);
        b.ff_w2 = gauss(F, D);
        b.ff_b2 = Mat::Zero(1, D);
        p.blocks.push_back(std::move(b));
    }
    p.head_w = Mat::Zero(D, static_cast<Eigen::Index>(kClasses));
    p.head_b = Mat::Zero(1, static_cast<Eigen::Index>(kClasses));
    return p;
}

// ---------------------------------------------------------------------------
// Building blocks.

inline constexpr double kLayerNormEps = 1e-5;
inline const double kGeluC = std::sqrt(2.0 / std::numbers::pi);

/// tanh-approximated GELU.
inline double gelu(double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + 0.044715 * x * x * x))); }

inline double gelu_grad(double x) {
    double u = kGeluC * (x + 0.044715 * x * x * x);
    double t = std::tanh(u);
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
}

inline Mat add_row(Mat m, const Mat& bias) {
    m.rowwise() += bias.row(0);
    return m;
}

inline Mat apply_gelu(const Mat& m) { return m.unaryExpr([](double v) { return gelu(v); }); }

inline void check_finite(const Mat& m, const std::string& where) {
    if (!m.allFinite()) throw NumericalError("non-finite activations in " + where);
}

/// Per-token normalization over the D features, then gain and bias.
/// Optionally returns the normalized tokens and 1/sqrt(var + eps) per row.
inline Mat layer_norm(const Mat& h, const Mat& gain, const Mat& bias, Mat* xhat_out = nullptr,
                      Eigen::VectorXd* inv_sd_out = nullptr) {
    const auto n = h.rows();
    Mat xhat(n, h.cols());
    Eigen::VectorXd inv(n);
    for (Eigen::Index r = 0; r < n; ++r) {
        double mu = h.row(r).mean();
        Eigen::RowVectorXd c = h.row(r).array() - mu;
        double var = c.squaredNorm() / static_cast<double>(h.cols());
        inv(r) = 1.0 / std::sqrt(var + kLayerNormEps);
        xhat.row(r) = c * inv(r);
    }
    Mat out = xhat.array().rowwise() * gain.row(0).array();
    out.rowwise() += bias.row(0);
    if (xhat_out) *xhat_out = std::move(xhat);
    if (inv_sd_out) *inv_sd_out = std::move(inv);
    return out;
}

/// Backward of layer_norm; accumulates gain/bias gradients, returns d input.
inline Mat layer_norm_backward(const Mat& dout, const Mat& xhat, const Eigen::VectorXd& inv, const Mat& gain,
                               Mat& dgain, Mat& dbias) {
    dgain.row(0) += (dout.array() * xhat.array()).colwise().sum().matrix();
    dbias.row(0) += dout.colwise().sum();
    Mat dxhat = dout.array().rowwise() * gain.row(0).array();
    const double d = static_cast<double>(dout.cols());
    Mat dx(dout.rows(), dout.cols());
    for (Eigen::Index r = 0; r < dout.rows(); ++r) {
        double m1 = dxhat.row(r).sum() / d;
        double m2 = dxhat.row(r).dot(xhat.row(r)) / d;
        dx.row(r) = inv(r) * (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2).matrix();
    }
    return dx;
}

inline void softmax_rows(Mat& s) {
    for (Eigen::Index r = 0; r < s.rows(); ++r) {
        double mx = s.row(r).maxCoeff();
        s.row(r) = (s.row(r).array() - mx).exp().matrix();
        s.row(r) /= s.row(r).sum();
    }
}

/// Shared two-layer MLP applied to each variate's lookback row.
inline Mat embed(const Mat& x, const ModelParams& p) {
    if (static_cast<std::size_t>(x.cols()) != p.dims.lookback)
        throw InputError("sample lookback " + std::to_string(x.cols()) + " does not match model lookback " +
                         std::to_string(p.dims.lookback));
    Mat a1 = add_row(x * p.emb_w1, p.emb_b1);
    return add_row(apply_gelu(a1) * p.emb_w2, p.emb_b2);
}

struct AttentionCache {
    Mat q, k, v, o;
    std::vector<Mat> probs; // one N x N matrix per head
};

/// Multi-head self-attention across tokens, without the residual.
inline Mat multi_head(const Mat& h, const Block& b, std::size_t heads, AttentionCache* cache = nullptr) {
    const auto D = h.cols();
    const auto dk = D / static_cast<Eigen::Index>(heads);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
    Mat q = h * b.wq, k = h * b.wk, v = h * b.wv;
    Mat o(h.rows(), D);
    std::vector<Mat> probs;
    for (std::size_t hd = 0; hd < heads; ++hd) {
        auto c0 = static_cast<Eigen::Index>(hd) * dk;
        Mat s = q.middleCols(c0, dk) * k.middleCols(c0, dk).transpose() * scale;
        softmax_rows(s);
        o.middleCols(c0, dk) = s * v.middleCols(c0, dk);
        probs.push_back(std::move(s));
    }
    Mat out = add_row(o * b.wo, b.bo);
    if (cache) *cache = {std::move(q), std::move(k), std::move(v), std::move(o), std::move(probs)};
    return out;
}

/// Attention sub-layer with its residual: tokens + MHA(tokens).
inline Mat attention(const Mat& tokens, const Block& b, std::size_t heads) { return tokens + multi_head(tokens, b, heads); }

/// Softmax attention weights of every head, for inspection.
inline std::vector<Mat> attention_weights(const Mat& tokens, const Block& b, std::size_t heads) {
    AttentionCache c;
    multi_head(tokens, b, heads, &c);
    return c.probs;
}

// ---------------------------------------------------------------------------
// Forward and backward passes.

struct BlockCache {
    Mat x_in;
    Mat xhat1, n1;
    Eigen::VectorXd inv1;
    AttentionCache att;
    Mat x_mid;
    Mat xhat2, n2;
    Eigen::VectorXd inv2;
    Mat f1, fg;
};

struct ForwardCache {
    Mat x;
    Mat a1, g1;
    std::vector<BlockCache> blocks;
    Mat tokens; // encoder output, N x D
    Mat pooled; // 1 x D
    Mat logits; // 1 x 3
    std::array<double, kClasses> probs{};
};

inline ForwardCache forward_cached(const Mat& x, const ModelParams& p) {
    if (static_cast<std::size_t>(x.cols()) != p.dims.lookback)
        throw InputError("sample lookback does not match model lookback");
    if (x.rows() < 1) throw InputError("sample has no variates");
    ForwardCache c;
    c.x = x;
    c.a1 = add_row(x * p.emb_w1, p.emb_b1);
    c.g1 = apply_gelu(c.a1);
    Mat h = add_row(c.g1 * p.emb_w2, p.emb_b2);
    check_finite(h, "embedding");
    for (std::size_t l = 0; l < p.blocks.size(); ++l) {
        const Block& b = p.blocks[l];
        BlockCache bc;
        bc.x_in = h;
        bc.n1 = layer_norm(h, b.ln1_g, b.ln1_b, &bc.xhat1, &bc.inv1);
        bc.x_mid = h + multi_head(bc.n1, b, p.dims.heads, &bc.att);
        check_finite(bc.x_mid, "block " + std::to_string(l) + " attention");
        bc.n2 = layer_norm(bc.x_mid, b.ln2_g, b.ln2_b, &bc.xhat2, &bc.inv2);
        bc.f1 = add_row(bc.n2 * b.ff_w1, b.ff_b1);
        bc.fg = apply_gelu(bc.f1);
        h = bc.x_mid + add_row(bc.fg * b.ff_w2, b.ff_b2);
        check_finite(h, "block " + std::to_string(l) + " feed-forward");
        c.blocks.push_back(std::move(bc));
    }
    c.tokens = h;
    c.pooled = h.colwise().mean();
    c.logits = add_row(c.pooled * p.head_w, p.head_b);
    check_finite(c.logits, "head");
    double mx = c.logits.maxCoeff();
    double z = 0.0;
    for (std::size_t k = 0; k < kClasses; ++k) z += std::exp(c.logits(0, static_cast<Eigen::Index>(k)) - mx);
    for (std::size_t k = 0; k < kClasses; ++k) c.probs[k] = std::exp(c.logits(0, static_cast<Eigen::Index>(k)) - mx) / z;
    return c;
}

/// Encoder output tokens (N x D) before pooling.
inline Mat encode(const Mat& x, const ModelParams& p) { return forward_cached(x, p).tokens; }

/// Class probabilities over {Down, Unchanged, Up}.
inline std::array<double, kClasses> forward(const Mat& x, const ModelParams& p) { return forward_cached(x, p).probs; }

/// Adds d(-ln p_label)/d params for one sample, scaled by `weight`, into `g`.
/// Returns the sample's cross-entropy.
inline double backward_sample(const Mat& x, Trend label, const ModelParams& p, ModelParams& g, double weight) {
    auto c = forward_cached(x, p);
    const auto lbl = static_cast<std::size_t>(label);
    double loss = -std::log(std::max(c.probs[lbl], 1e-300));

    Mat dlogits(1, static_cast<Eigen::Index>(kClasses));
    for (std::size_t k = 0; k < kClasses; ++k)
        dlogits(0, static_cast<Eigen::Index>(k)) = weight * (c.probs[k] - (k == lbl ? 1.0 : 0.0));
    g.head_w += c.pooled.transpose() * dlogits;
    g.head_b += dlogits;
    Mat dpooled = dlogits * p.head_w.transpose();
    const auto N = c.tokens.rows();
    Mat dh = dpooled.replicate(N, 1) / static_cast<double>(N);

    const auto heads = static_cast<Eigen::Index>(p.dims.heads);
    for (std::size_t l = p.blocks.size(); l-- > 0;) {
        const Block& b = p.blocks[l];
        Block& gb = g.blocks[l];
        const BlockCache& bc = c.blocks[l];

        // Feed-forward sub-layer.
        Mat dmid = dh;
        gb.ff_w2 += bc.fg.transpose() * dh;
        gb.ff_b2.row(0) += dh.colwise().sum();
        Mat dfg = dh * b.ff_w2.transpose();
        Mat df1 = dfg.array() * bc.f1.unaryExpr([](double v) { return gelu_grad(v); }).array();
        gb.ff_w1 += bc.n2.transpose() * df1;
        gb.ff_b1.row(0) += df1.colwise().sum();
        Mat dn2 = df1 * b.ff_w1.transpose();
        dmid += layer_norm_backward(dn2, bc.xhat2, bc.inv2, b.ln2_g, gb.ln2_g, gb.ln2_b);

        // Attention sub-layer.
        Mat dx = dmid;
        const auto& att = bc.att;
        gb.wo += att.o.transpose() * dmid;
        gb.bo.row(0) += dmid.colwise().sum();
        Mat dO = dmid * b.wo.transpose();
        const auto dk = att.q.cols() / heads;
        const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
        Mat dq(att.q.rows(), att.q.cols()), dkm(att.k.rows(), att.k.cols()), dv(att.v.rows(), att.v.cols());
        for (Eigen::Index hd = 0; hd < heads; ++hd) {
            auto c0 = hd * dk;
            const Mat& P = att.probs[static_cast<std::size_t>(hd)];
            Mat dOh = dO.middleCols(c0, dk);
            Mat dP = dOh * att.v.middleCols(c0, dk).transpose();
            dv.middleCols(c0, dk) = P.transpose() * dOh;
            Eigen::VectorXd rs = (dP.array() * P.array()).rowwise().sum();
            Mat dS = P.array() * (dP.array().colwise() - rs.array());
            dS *= scale;
            dq.middleCols(c0, dk) = dS * att.k.middleCols(c0, dk);
            dkm.middleCols(c0, dk) = dS.transpose() * att.q.middleCols(c0, dk);
        }
        gb.wq += bc.n1.transpose() * dq;
        gb.wk += bc.n1.transpose() * dkm;
        gb.wv += bc.n1.transpose() * dv;
        Mat dn1 = dq * b.wq.transpose() + dkm * b.wk.transpose() + dv * b.wv.transpose();
        dx += layer_norm_backward(dn1, bc.xhat1, bc.inv1, b.ln1_g, gb.ln1_g, gb.ln1_b);
        dh = std::move(dx);
    }

    g.emb_w2 += c.g1.transpose() * dh;
    g.emb_b2.row(0) += dh.colwise().sum();
    Mat dg1 = dh * p.emb_w2.transpose();
    Mat da1 = dg1.array() * c.a1.unaryExpr([](double v) { return gelu_grad(v); }).array();
    g.emb_w1 += c.x.transpose() * da1;
    g.emb_b1.row(0) += da1.colwise().sum();
    return loss;
}

struct Sample {
    Mat x; // N x T, variate-major
    Trend label = Trend::Unchanged;
    SeriesId fund;
    MonthIndex month; // as-of month of the last lookback column
};

struct LossGrad {
    double loss = 0.0;
    ModelParams grad;
};

/// Mean cross-entropy over the batch and its exact gradient. Per-sample
/// gradients may be computed on several threads; they are summed in batch
/// order so the result does not depend on the thread count.
inline LossGrad loss_and_gradients(const std::vector<const Sample*>& batch, const ModelParams& p, unsigned threads = 1) {
    if (batch.empty()) throw InputError("empty batch");
    const double w = 1.0 / static_cast<double>(batch.size());
    struct Part {
        double loss = 0.0;
        std::optional<ModelParams> grad;
    };
    auto parts = parallel_map(batch.size(), threads, [&](std::size_t i) {
        Part part;
        part.grad = p.zeros_like();
        part.loss = backward_sample(batch[i]->x, batch[i]->label, p, *part.grad, w);
        return part;
    });
    LossGrad out{0.0, p.zeros_like()};
    for (auto& part : parts) {
        out.loss += w * part.loss;
        out.grad += *part.grad;
    }
    if (!std::isfinite(out.loss)) throw NumericalError("non-finite loss");
    return out;
}

inline LossGrad loss_and_gradients(const std::vector<Sample>& batch, const ModelParams& p, unsigned threads = 1) {
    std::vector<const Sample*> ptrs;
    for (auto& s : batch) ptrs.push_back(&s);
    return loss_and_gradients(ptrs, p, threads);
}

struct Evaluation {
    double loss = 0.0;
    double accuracy = 0.0;
};

inline Evaluation evaluate(const std::vector<Sample>& data, const ModelParams& p, unsigned threads = 1) {
    if (data.empty()) return {};
    auto res = parallel_map(data.size(), threads, [&](std::size_t i) {
        auto probs = forward(data[i].x, p);
        auto lbl = static_cast<std::size_t>(data[i].label);
        std::size_t best = 0;
        for (std::size_t k = 1; k < kClasses; ++k)
            if (probs[k] > probs[best]) best = k;
        return std::pair<double, bool>(-std::log(std::max(probs[lbl], 1e-300)), best == lbl);
    });
    Evaluation e;
    for (auto& [l, ok] : res) {
        e.loss += l;
        e.accuracy += ok ? 1.0 : 0.0;
    }
    e.loss /= static_cast<double>(data.size());
    e.accuracy /= static_cast<double>(data.size());
    return e;
}

// ---------------------------------------------------------------------------
// Training.

struct Schedule {
    std::size_t epochs = 60;
    std::size_t batch_size = 32;
    double learning_rate = 0.01;
    double momentum = 0.9;
    double decay = 0.98; // learning rate multiplier per epoch
    std::uint64_t seed = 0;
    unsigned threads = 1;
};

struct TraceRow {
    std::size_t epoch = 0;
    std::string split; // "train" or "valid"
    double loss = 0.0;
    double accuracy = 0.0;
};

struct TrainResult {
    ModelParams params;
    std::vector<TraceRow> trace;
};

/// Mini-batch gradient descent with momentum. Epoch 0 in the trace is the
/// untrained model. Aborts when the training loss exceeds 10x its initial value.
inline TrainResult train(const std::vector<Sample>& train_set, const std::vector<Sample>& valid_set, ModelParams params,
                         const Schedule& s) {
    if (train_set.empty()) throw InputError("training set is empty");
    if (s.batch_size == 0) throw InputError("batch size must be positive");
    TrainResult out;
    auto record = [&](std::size_t epoch) {
        auto e = evaluate(train_set, params, s.threads);
        out.trace.push_back({epoch, "train", e.loss, e.accuracy});
        if (!valid_set.empty()) {
            auto v = evaluate(valid_set, params, s.threads);
            out.trace.push_back({epoch, "valid", v.loss, v.accuracy});
        }
        return e.loss;
    };
    const double initial = record(0);
    ModelParams velocity = params.zeros_like();
    std::vector<std::size_t> order(train_set.size());
    double lr = s.learning_rate;
    for (std::size_t epoch = 1; epoch <= s.epochs; ++epoch) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        auto g = rng::engine(s.seed, "batches", {epoch});
        rng::shuffle(std::span<std::size_t>(order), g);
        for (std::size_t start = 0; start < order.size(); start += s.batch_size) {
            std::vector<const Sample*> batch;
            for (std::size_t i = start; i < std::min(order.size(), start + s.batch_size); ++i)
                batch.push_back(&train_set[order[i]]);
            auto lg = loss_and_gradients(batch, params, s.threads);
            velocity *= s.momentum;
            lg.grad *= -lr;
            velocity += lg.grad;
            params += velocity;
        }
        lr *= s.decay;
        double loss = record(epoch);
        if (!std::isfinite(loss) || loss > 10.0 * initial)
            throw NumericalError("training diverged at epoch " + std::to_string(epoch) + ": loss " +
                                 std::to_string(loss) + " vs initial " + std::to_string(initial) +
                                 " (learning rate " + std::to_string(lr / s.decay) + ")");
    }
    out.params = std::move(params);
    return out;
}

/// Class probabilities for one fund, forecasting `month`.
struct TrendForecast {
    SeriesId fund;
    MonthIndex month;
    std::array<double, kClasses> probs{1.0 / 3, 1.0 / 3, 1.0 / 3};

    double p(Trend t) const { return probs[static_cast<std::size_t>(t)]; }
};

// ---------------------------------------------------------------------------
// Per-variate input scaling fitted on the training split.

struct Normalizer {
    std::vector<double> mean;
    std::vector<double> sd;

    static Normalizer fit(const std::vector<Sample>& data) {
        if (data.empty()) throw InputError("cannot fit a normalizer on no samples");
        const auto n = static_cast<std::size_t>(data.front().x.rows());
        Normalizer z;
        z.mean.assign(n, 0.0);
        z.sd.assign(n, 1.0);
        for (std::size_t v = 0; v < n; ++v) {
            double s = 0.0, cnt = 0.0;
            for (auto& d : data) {
                s += d.x.row(static_cast<Eigen::Index>(v)).sum();
                cnt += static_cast<double>(d.x.cols());
            }
            double mu = s / cnt, ss = 0.0;
            for (auto& d : data) ss += (d.x.row(static_cast<Eigen::Index>(v)).array() - mu).square().sum();
            double sd = std::sqrt(ss / std::max(1.0, cnt - 1.0));
            z.mean[v] = mu;
            z.sd[v] = sd > 0.0 ? sd : 1.0;
        }
        return z;
    }

    Mat apply(const Mat& x) const {
        if (mean.empty()) return x;
        if (static_cast<std::size_t>(x.rows()) != mean.size()) throw InputError("normalizer variate count mismatch");
        Mat out = x;
        for (Eigen::Index v = 0; v < x.rows(); ++v)
            out.row(v) = (x.row(v).array() - mean[static_cast<std::size_t>(v)]) / sd[static_cast<std::size_t>(v)];
        return out;
    }

    void apply_all(std::vector<Sample>& data) const {
        for (auto& d : data) d.x = apply(d.x);
    }
};

} // namespace polyfolio::itf

#endif
