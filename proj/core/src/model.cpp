#include "obskit/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "obskit/errors.hpp"
#include "obskit/io.hpp"
#include "obskit/linalg.hpp"

namespace obskit {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

double gelu_grad(double x) {
    const double phi = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
    const double dens = kInvSqrt2Pi * std::exp(-0.5 * x * x);
    return phi + x * dens;
}

double activation_value(Activation act, double x) {
    switch (act) {
        case Activation::None: return x;
        case Activation::Relu: return x > 0.0 ? x : 0.0;
        case Activation::Gelu: return gelu(x);
    }
    return x;
}

double activation_grad(Activation act, double x) {
    switch (act) {
        case Activation::None: return 1.0;
        case Activation::Relu: return x > 0.0 ? 1.0 : 0.0;
        case Activation::Gelu: return gelu_grad(x);
    }
    return 1.0;
}

std::size_t layer_input_width(const Layer& layer) {
    if (const auto* d = std::get_if<DenseLayer>(&layer)) return d->in;
    const auto& a = std::get<AttentionLayer>(layer);
    return a.tokens * a.dim;
}

std::size_t layer_output_width(const Layer& layer) {
    if (const auto* d = std::get_if<DenseLayer>(&layer)) return d->out;
    const auto& a = std::get<AttentionLayer>(layer);
    return a.tokens * a.dim;
}

void softmax_row(const double* z, double* p, std::size_t n) {
    double mx = z[0];
    for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, z[i]);
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        p[i] = std::exp(z[i] - mx);
        sum += p[i];
    }
    for (std::size_t i = 0; i < n; ++i) p[i] /= sum;
}

struct AttentionCache {
    Mat q, k, v, attn;  // q/k/v: (n*tokens) x dim; attn: (n*tokens) x tokens
};

struct ForwardCache {
    std::vector<Mat> inputs;    // input to each layer
    std::vector<Mat> pre_act;   // dense pre-activation, empty for attention
    std::vector<AttentionCache> attn;  // parallel to layers, used for attention only
    Mat logits;
};

Mat dense_forward(const DenseLayer& layer, const Mat& x, Mat* pre_act) {
    Mat z(x.rows, layer.out);
    for (std::size_t i = 0; i < x.rows; ++i) {
        const double* xi = x.row(i);
        double* zi = z.row(i);
        for (std::size_t o = 0; o < layer.out; ++o) {
            const double* wrow = layer.weight.data() + o * layer.in;
            double s = layer.bias[o];
            for (std::size_t k = 0; k < layer.in; ++k) s += wrow[k] * xi[k];
            zi[o] = s;
        }
    }
    if (pre_act) *pre_act = z;
    if (layer.act != Activation::None) {
        for (double& v : z.data) v = activation_value(layer.act, v);
    }
    return z;
}

Mat attention_forward(const AttentionLayer& layer, const Mat& x, AttentionCache* cache) {
    const std::size_t nt = layer.tokens;
    const std::size_t dt = layer.dim;
    const std::size_t n = x.rows;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dt));

    Mat q(n * nt, dt), k(n * nt, dt), v(n * nt, dt), attn(n * nt, nt);
    Mat out(n, nt * dt);
    std::vector<double> scores(nt);
    for (std::size_t s = 0; s < n; ++s) {
        const double* xs = x.row(s);
        // project tokens
        for (std::size_t t = 0; t < nt; ++t) {
            const double* tok = xs + t * dt;
            double* qr = q.row(s * nt + t);
            double* kr = k.row(s * nt + t);
            double* vr = v.row(s * nt + t);
            for (std::size_t j = 0; j < dt; ++j) {
                double sq = 0.0, sk = 0.0, sv = 0.0;
                for (std::size_t i = 0; i < dt; ++i) {
                    const double xi = tok[i];
                    sq += xi * layer.wq[i * dt + j];
                    sk += xi * layer.wk[i * dt + j];
                    sv += xi * layer.wv[i * dt + j];
                }
                qr[j] = sq;
                kr[j] = sk;
                vr[j] = sv;
            }
        }
        // scaled dot-product attention per token
        for (std::size_t t = 0; t < nt; ++t) {
            const double* qr = q.row(s * nt + t);
            for (std::size_t u = 0; u < nt; ++u) {
                const double* kr = k.row(s * nt + u);
                double dot = 0.0;
                for (std::size_t j = 0; j < dt; ++j) dot += qr[j] * kr[j];
                scores[u] = dot * scale;
            }
            softmax_row(scores.data(), attn.row(s * nt + t), nt);
            double* orow = out.row(s) + t * dt;
            const double* arow = attn.row(s * nt + t);
            for (std::size_t j = 0; j < dt; ++j) {
                double acc = 0.0;
                for (std::size_t u = 0; u < nt; ++u) acc += arow[u] * v.at(s * nt + u, j);
                orow[j] = acc;
            }
        }
    }
    if (cache) {
        cache->q = std::move(q);
        cache->k = std::move(k);
        cache->v = std::move(v);
        cache->attn = std::move(attn);
    }
    return out;
}

ForwardCache run_forward(const ToyModel& model, const Mat& batch, bool keep_cache) {
    if (batch.cols != model.input_width()) {
        throw DimensionError("forward: batch width " + std::to_string(batch.cols) +
                             " != model input " + std::to_string(model.input_width()));
    }
    ForwardCache cache;
    const auto& layers = model.layers();
    cache.inputs.resize(layers.size());
    cache.pre_act.resize(layers.size());
    cache.attn.resize(layers.size());
    Mat x = batch;
    for (std::size_t li = 0; li < layers.size(); ++li) {
        if (keep_cache) cache.inputs[li] = x;
        if (const auto* d = std::get_if<DenseLayer>(&layers[li])) {
            x = dense_forward(*d, x, keep_cache ? &cache.pre_act[li] : nullptr);
        } else {
            const auto& a = std::get<AttentionLayer>(layers[li]);
            x = attention_forward(a, x, keep_cache ? &cache.attn[li] : nullptr);
        }
    }
    cache.logits = std::move(x);
    return cache;
}

}  // namespace

ToyModel::ToyModel(std::vector<Layer> layers) : layers_(std::move(layers)) {
    if (layers_.empty()) throw DimensionError("model: needs at least one layer");
    if (!std::holds_alternative<DenseLayer>(layers_.back())) {
        throw DimensionError("model: last layer must be dense (logits)");
    }
    for (std::size_t i = 0; i + 1 < layers_.size(); ++i) {
        if (layer_output_width(layers_[i]) != layer_input_width(layers_[i + 1])) {
            throw DimensionError("model: width mismatch between layers " + std::to_string(i) +
                                 " and " + std::to_string(i + 1));
        }
    }
    for (const auto& layer : layers_) {
        if (const auto* d = std::get_if<DenseLayer>(&layer)) {
            if (d->weight.size() != d->in * d->out || d->bias.size() != d->out) {
                throw DimensionError("model: dense tensor sizes disagree with dims");
            }
        } else {
            const auto& a = std::get<AttentionLayer>(layer);
            const std::size_t want = a.dim * a.dim;
            if (a.wq.size() != want || a.wk.size() != want || a.wv.size() != want) {
                throw DimensionError("model: attention tensor sizes disagree with dims");
            }
        }
    }
    rebuild_registry();
}

void ToyModel::rebuild_registry() {
    registry_.clear();
    std::size_t offset = 0;
    for (std::size_t li = 0; li + 1 < layers_.size(); ++li) {
        if (const auto* d = std::get_if<DenseLayer>(&layers_[li])) {
            registry_.push_back({li, 0, offset, d->weight.size(),
                                 "layer" + std::to_string(li) + ".weight"});
            offset += d->weight.size();
        } else {
            const auto& a = std::get<AttentionLayer>(layers_[li]);
            const char* names[] = {".wq", ".wk", ".wv"};
            for (int slot = 0; slot < 3; ++slot) {
                registry_.push_back({li, slot, offset, a.wq.size(),
                                     "layer" + std::to_string(li) + names[slot]});
                offset += a.wq.size();
            }
        }
    }
    prunable_size_ = offset;
}

std::size_t ToyModel::input_width() const { return layer_input_width(layers_.front()); }
std::size_t ToyModel::output_width() const { return layer_output_width(layers_.back()); }

namespace {

std::vector<double>& tensor_ref(Layer& layer, int slot) {
    if (auto* d = std::get_if<DenseLayer>(&layer)) return d->weight;
    auto& a = std::get<AttentionLayer>(layer);
    return slot == 0 ? a.wq : (slot == 1 ? a.wk : a.wv);
}

const std::vector<double>& tensor_cref(const Layer& layer, int slot) {
    if (const auto* d = std::get_if<DenseLayer>(&layer)) return d->weight;
    const auto& a = std::get<AttentionLayer>(layer);
    return slot == 0 ? a.wq : (slot == 1 ? a.wk : a.wv);
}

}  // namespace

WeightStore ToyModel::flatten_prunable() const {
    std::vector<double> flat(prunable_size_);
    std::vector<Segment> segments;
    segments.reserve(registry_.size());
    for (const auto& t : registry_) {
        const auto& src = tensor_cref(layers_[t.layer], t.slot);
        std::copy(src.begin(), src.end(), flat.begin() + static_cast<std::ptrdiff_t>(t.offset));
        segments.push_back({t.name, t.offset, t.length});
    }
    return WeightStore(std::move(flat), std::move(segments));
}

void ToyModel::unflatten_prunable(const WeightStore& w) {
    if (w.size() != prunable_size_) {
        throw DimensionError("unflatten: store size " + std::to_string(w.size()) +
                             " != prunable size " + std::to_string(prunable_size_));
    }
    for (const auto& t : registry_) {
        auto& dst = tensor_ref(layers_[t.layer], t.slot);
        std::copy(w.values().begin() + static_cast<std::ptrdiff_t>(t.offset),
                  w.values().begin() + static_cast<std::ptrdiff_t>(t.offset + t.length),
                  dst.begin());
    }
}

std::vector<Segment> ToyModel::prunable_segments() const {
    std::vector<Segment> segments;
    segments.reserve(registry_.size());
    for (const auto& t : registry_) segments.push_back({t.name, t.offset, t.length});
    return segments;
}

void ToyModel::save_file(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("model save: cannot open " + path);
    write_u64_le(f, layers_.size());
    for (const auto& layer : layers_) {
        if (const auto* d = std::get_if<DenseLayer>(&layer)) {
            write_u64_le(f, 0);
            write_u64_le(f, d->out);
            write_u64_le(f, d->in);
            write_u64_le(f, static_cast<std::uint64_t>(d->act));
        } else {
            const auto& a = std::get<AttentionLayer>(layer);
            write_u64_le(f, 1);
            write_u64_le(f, a.tokens);
            write_u64_le(f, a.dim);
        }
    }
    for (const auto& layer : layers_) {
        if (const auto* d = std::get_if<DenseLayer>(&layer)) {
            for (double v : d->weight) write_f32_le(f, static_cast<float>(v));
            for (double v : d->bias) write_f32_le(f, static_cast<float>(v));
        } else {
            const auto& a = std::get<AttentionLayer>(layer);
            for (double v : a.wq) write_f32_le(f, static_cast<float>(v));
            for (double v : a.wk) write_f32_le(f, static_cast<float>(v));
            for (double v : a.wv) write_f32_le(f, static_cast<float>(v));
        }
    }
    if (!f) throw IoError("model save: write failed for " + path);
}

ToyModel ToyModel::load_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("model load: cannot open " + path);
    const auto n_layers = read_u64_le(f);
    std::vector<Layer> layers;
    layers.reserve(n_layers);
    for (std::uint64_t i = 0; i < n_layers; ++i) {
        const auto kind = read_u64_le(f);
        if (kind == 0) {
            DenseLayer d;
            d.out = static_cast<std::size_t>(read_u64_le(f));
            d.in = static_cast<std::size_t>(read_u64_le(f));
            d.act = static_cast<Activation>(read_u64_le(f));
            d.weight.resize(d.in * d.out);
            d.bias.resize(d.out);
            layers.emplace_back(std::move(d));
        } else if (kind == 1) {
            AttentionLayer a;
            a.tokens = static_cast<std::size_t>(read_u64_le(f));
            a.dim = static_cast<std::size_t>(read_u64_le(f));
            a.wq.resize(a.dim * a.dim);
            a.wk.resize(a.dim * a.dim);
            a.wv.resize(a.dim * a.dim);
            layers.emplace_back(std::move(a));
        } else {
            throw IoError("model load: unknown layer kind " + std::to_string(kind));
        }
    }
    for (auto& layer : layers) {
        if (auto* d = std::get_if<DenseLayer>(&layer)) {
            for (double& v : d->weight) v = read_f32_le(f);
            for (double& v : d->bias) v = read_f32_le(f);
        } else {
            auto& a = std::get<AttentionLayer>(layer);
            for (double& v : a.wq) v = read_f32_le(f);
            for (double& v : a.wk) v = read_f32_le(f);
            for (double& v : a.wv) v = read_f32_le(f);
        }
    }
    return ToyModel(std::move(layers));
}

ToyModel build_model(const ModelConfig& cfg, std::mt19937_64& rng) {
    if (cfg.input == 0 || cfg.classes == 0 || cfg.hidden.empty()) {
        throw ValidationError("model config: input, classes and hidden sizes are required");
    }
    std::normal_distribution<double> normal(0.0, 1.0);
    auto init_dense = [&](std::size_t in, std::size_t out, Activation act) {
        DenseLayer d;
        d.in = in;
        d.out = out;
        d.act = act;
        d.weight.resize(in * out);
        d.bias.assign(out, 0.0);
        const double std = cfg.init_scale / std::sqrt(static_cast<double>(in));
        for (double& v : d.weight) v = normal(rng) * std;
        return d;
    };

    std::vector<Layer> layers;
    std::size_t width = cfg.input;
    for (std::size_t i = 0; i < cfg.hidden.size(); ++i) {
        layers.emplace_back(init_dense(width, cfg.hidden[i], cfg.activation));
        width = cfg.hidden[i];
        if (i == 0 && cfg.attention_tokens) {
            const std::size_t nt = *cfg.attention_tokens;
            if (nt == 0 || width % nt != 0) {
                throw ValidationError("model config: attention tokens must divide hidden width");
            }
            AttentionLayer a;
            a.tokens = nt;
            a.dim = width / nt;
            const double std = cfg.init_scale / std::sqrt(static_cast<double>(a.dim));
            a.wq.resize(a.dim * a.dim);
            a.wk.resize(a.dim * a.dim);
            a.wv.resize(a.dim * a.dim);
            for (double& v : a.wq) v = normal(rng) * std;
            for (double& v : a.wk) v = normal(rng) * std;
            for (double& v : a.wv) v = normal(rng) * std;
            layers.emplace_back(std::move(a));
        }
    }
    layers.emplace_back(init_dense(width, cfg.classes, Activation::None));
    return ToyModel(std::move(layers));
}

ToyModel drop_layers(const ToyModel& model, std::size_t keep) {
    const std::size_t hidden = model.depth() - 1;
    if (keep < 1 || keep > hidden) {
        throw DimensionError("drop_layers: keep " + std::to_string(keep) +
                             " outside [1, " + std::to_string(hidden) + "]");
    }
    std::vector<Layer> layers(model.layers().begin(),
                              model.layers().begin() + static_cast<std::ptrdiff_t>(keep));
    layers.push_back(model.layers().back());
    return ToyModel(std::move(layers));
}

Mat forward(const ToyModel& model, const Mat& batch) {
    return run_forward(model, batch, false).logits;
}

namespace {

/// Loss value and logits gradient for CE + KD mixing.
double loss_head(const Mat& batch, const Mat& logits,
                 const std::vector<int>& labels, const KDConfig* kd, Mat* dlogits) {
    const std::size_t n = logits.rows;
    const std::size_t c = logits.cols;
    if (labels.size() != n) throw DimensionError("loss: labels size != batch rows");
    double hardness = 0.0;
    Mat teacher_logits;
    if (kd && kd->hardness > 0.0) {
        if (kd->hardness > 1.0 || kd->hardness < 0.0) {
            throw ValidationError("kd: hardness must lie in [0, 1]");
        }
        if (!(kd->temperature > 0.0)) throw ValidationError("kd: temperature must be positive");
        if (!kd->teacher) throw ValidationError("kd: teacher model missing");
        if (kd->teacher->output_width() != c) {
            throw DimensionError("kd: teacher output width " +
                                 std::to_string(kd->teacher->output_width()) +
                                 " != student " + std::to_string(c));
        }
        hardness = kd->hardness;
        teacher_logits = forward(*kd->teacher, batch);
    }

    if (dlogits) *dlogits = Mat(n, c);
    std::vector<double> p(c), q(c);
    double ce_total = 0.0, kl_total = 0.0;
    const double temp = kd ? kd->temperature : 1.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double* z = logits.row(i);
        const int y = labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= c) {
            throw DimensionError("loss: label out of range");
        }
        if (hardness < 1.0) {
            softmax_row(z, p.data(), c);
            ce_total += -std::log(std::max(p[static_cast<std::size_t>(y)], 1e-300));
            if (dlogits) {
                double* g = dlogits->row(i);
                for (std::size_t j = 0; j < c; ++j) g[j] += (1.0 - hardness) * p[j];
                g[static_cast<std::size_t>(y)] -= (1.0 - hardness);
            }
        }
        if (hardness > 0.0) {
            std::vector<double> zs(c), zt(c);
            for (std::size_t j = 0; j < c; ++j) {
                zs[j] = z[j] / temp;
                zt[j] = teacher_logits.at(i, j) / temp;
            }
            softmax_row(zs.data(), q.data(), c);
            softmax_row(zt.data(), p.data(), c);
            double kl = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
                if (p[j] > 0.0) kl += p[j] * (std::log(p[j]) - std::log(std::max(q[j], 1e-300)));
            }
            kl_total += kl;
            if (dlogits) {
                double* g = dlogits->row(i);
                for (std::size_t j = 0; j < c; ++j) g[j] += hardness * temp * (q[j] - p[j]);
            }
        }
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    if (dlogits) {
        for (double& v : dlogits->data) v *= inv_n;
    }
    const double loss =
        (1.0 - hardness) * ce_total * inv_n + hardness * temp * temp * kl_total * inv_n;
    if (!std::isfinite(loss)) throw NonFiniteError("loss: non-finite value");
    return loss;
}

}  // namespace

double cross_entropy(const ToyModel& model, const Mat& batch, const std::vector<int>& labels) {
    const Mat logits = forward(model, batch);
    return loss_head(batch, logits, labels, nullptr, nullptr);
}

BackpropResult backprop(const ToyModel& model, const Mat& batch, const std::vector<int>& labels,
                        const KDConfig* kd) {
    ForwardCache cache = run_forward(model, batch, true);
    BackpropResult result;
    Mat grad;  // gradient wrt current layer output
    result.loss = loss_head(batch, cache.logits, labels, kd, &grad);

    const auto& layers = model.layers();
    result.grads.resize(layers.size());
    for (std::size_t li = layers.size(); li-- > 0;) {
        const Mat& x = cache.inputs[li];
        if (const auto* d = std::get_if<DenseLayer>(&layers[li])) {
            DenseGrads g;
            g.weight.assign(d->weight.size(), 0.0);
            g.bias.assign(d->bias.size(), 0.0);
            const Mat& z = cache.pre_act[li];
            Mat dx(x.rows, d->in);
            for (std::size_t i = 0; i < x.rows; ++i) {
                const double* xi = x.row(i);
                double* dxi = dx.row(i);
                for (std::size_t o = 0; o < d->out; ++o) {
                    const double dz = grad.at(i, o) * activation_grad(d->act, z.at(i, o));
                    if (dz == 0.0) continue;
                    g.bias[o] += dz;
                    double* wg = g.weight.data() + o * d->in;
                    const double* wrow = d->weight.data() + o * d->in;
                    for (std::size_t k = 0; k < d->in; ++k) {
                        wg[k] += dz * xi[k];
                        dxi[k] += dz * wrow[k];
                    }
                }
            }
            result.grads[li] = std::move(g);
            grad = std::move(dx);
        } else {
            const auto& a = std::get<AttentionLayer>(layers[li]);
            const std::size_t nt = a.tokens;
            const std::size_t dt = a.dim;
            const double scale = 1.0 / std::sqrt(static_cast<double>(dt));
            const AttentionCache& ac = cache.attn[li];
            AttentionGrads g;
            g.wq.assign(a.wq.size(), 0.0);
            g.wk.assign(a.wk.size(), 0.0);
            g.wv.assign(a.wv.size(), 0.0);
            Mat dx(x.rows, nt * dt);
            Mat dq(nt, dt), dk(nt, dt), dv(nt, dt), ds(nt, nt);
            for (std::size_t s = 0; s < x.rows; ++s) {
                const double* xs = x.row(s);
                std::fill(dq.data.begin(), dq.data.end(), 0.0);
                std::fill(dk.data.begin(), dk.data.end(), 0.0);
                std::fill(dv.data.begin(), dv.data.end(), 0.0);
                // dAttn and softmax backward per query token
                for (std::size_t t = 0; t < nt; ++t) {
                    const double* dO = grad.row(s) + t * dt;
                    const double* arow = ac.attn.row(s * nt + t);
                    double inner = 0.0;
                    std::vector<double> da(nt);
                    for (std::size_t u = 0; u < nt; ++u) {
                        double acc = 0.0;
                        const double* vrow = ac.v.row(s * nt + u);
                        for (std::size_t j = 0; j < dt; ++j) acc += dO[j] * vrow[j];
                        da[u] = acc;
                        inner += acc * arow[u];
                        // dV accumulation: dv_u += attn[t][u] * dO
                        double* dvu = dv.row(u);
                        for (std::size_t j = 0; j < dt; ++j) dvu[j] += arow[u] * dO[j];
                    }
                    for (std::size_t u = 0; u < nt; ++u) {
                        ds.at(t, u) = arow[u] * (da[u] - inner) * scale;
                    }
                }
                // dQ = dS K, dK = dS^T Q
                for (std::size_t t = 0; t < nt; ++t) {
                    for (std::size_t u = 0; u < nt; ++u) {
                        const double dsv = ds.at(t, u);
                        if (dsv == 0.0) continue;
                        const double* kr = ac.k.row(s * nt + u);
                        const double* qr = ac.q.row(s * nt + t);
                        double* dqt = dq.row(t);
                        double* dku = dk.row(u);
                        for (std::size_t j = 0; j < dt; ++j) {
                            dqt[j] += dsv * kr[j];
                            dku[j] += dsv * qr[j];
                        }
                    }
                }
                // parameter grads and input grad
                double* dxs = dx.row(s);
                for (std::size_t t = 0; t < nt; ++t) {
                    const double* tok = xs + t * dt;
                    double* dtok = dxs + t * dt;
                    const double* dqt = dq.row(t);
                    const double* dkt = dk.row(t);
                    const double* dvt = dv.row(t);
                    for (std::size_t i = 0; i < dt; ++i) {
                        double acc = 0.0;
                        for (std::size_t j = 0; j < dt; ++j) {
                            g.wq[i * dt + j] += tok[i] * dqt[j];
                            g.wk[i * dt + j] += tok[i] * dkt[j];
                            g.wv[i * dt + j] += tok[i] * dvt[j];
                            acc += dqt[j] * a.wq[i * dt + j] + dkt[j] * a.wk[i * dt + j] +
                                   dvt[j] * a.wv[i * dt + j];
                        }
                        dtok[i] = acc;
                    }
                }
            }
            result.grads[li] = std::move(g);
            grad = std::move(dx);
        }
    }
    return result;
}

std::pair<double, std::vector<double>> loss_and_grad(const ToyModel& model, const Mat& batch,
                                                     const std::vector<int>& labels,
                                                     const KDConfig* kd, const Mask& mask) {
    if (mask.size() != model.prunable_size()) {
        throw DimensionError("loss_and_grad: mask length != prunable size");
    }
    BackpropResult full = backprop(model, batch, labels, kd);
    std::vector<double> flat(model.prunable_size(), 0.0);
    for (const auto& t : model.prunable_registry()) {
        const std::vector<double>* src = nullptr;
        if (const auto* dg = std::get_if<DenseGrads>(&full.grads[t.layer])) {
            src = &dg->weight;
        } else {
            const auto& ag = std::get<AttentionGrads>(full.grads[t.layer]);
            src = t.slot == 0 ? &ag.wq : (t.slot == 1 ? &ag.wk : &ag.wv);
        }
        std::copy(src->begin(), src->end(), flat.begin() + static_cast<std::ptrdiff_t>(t.offset));
    }
    for (std::size_t i = 0; i < flat.size(); ++i) {
        if (!mask.kept(i)) flat[i] = 0.0;
    }
    return {full.loss, std::move(flat)};
}

}  // namespace obskit
