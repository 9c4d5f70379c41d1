#include "finrl/policy.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>

namespace finrl {

namespace {

constexpr double kNormEps = 1e-5;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
constexpr const char* kCheckpointMagic = "finrl-policy";

// out[r][c] (+)= sum_k a[r][k] * w[k][c]
void matmul(const double* a, int rows, int inner, const double* w, int cols, double* out) {
    for (int r = 0; r < rows; ++r) {
        double* o = out + static_cast<std::ptrdiff_t>(r) * cols;
        std::fill(o, o + cols, 0.0);
        const double* ar = a + static_cast<std::ptrdiff_t>(r) * inner;
        for (int k = 0; k < inner; ++k) {
            const double av = ar[k];
            if (av == 0.0) continue;
            const double* wk = w + static_cast<std::ptrdiff_t>(k) * cols;
            for (int c = 0; c < cols; ++c) o[c] += av * wk[c];
        }
    }
}

// da[r][k] += sum_c dout[r][c] * w[k][c];  dw[k][c] += sum_r a[r][k] * dout[r][c]
void matmul_backward(const double* a, const double* dout, int rows, int inner, const double* w, int cols,
                     double* da, double* dw) {
    for (int r = 0; r < rows; ++r) {
        const double* dr = dout + static_cast<std::ptrdiff_t>(r) * cols;
        const double* ar = a + static_cast<std::ptrdiff_t>(r) * inner;
        for (int k = 0; k < inner; ++k) {
            const double* wk = w + static_cast<std::ptrdiff_t>(k) * cols;
            double* dwk = dw + static_cast<std::ptrdiff_t>(k) * cols;
            const double av = ar[k];
            double acc = 0.0;
            for (int c = 0; c < cols; ++c) {
                acc += dr[c] * wk[c];
                dwk[c] += av * dr[c];
            }
            if (da != nullptr) da[static_cast<std::ptrdiff_t>(r) * inner + k] += acc;
        }
    }
}

// y = g * x / rms(x); keeps rms and the unscaled normalized row.
void rmsnorm_row(const double* x, const double* g, int d, double* r, double* n, double* y) {
    double ss = 0.0;
    for (int i = 0; i < d; ++i) ss += x[i] * x[i];
    *r = std::sqrt(ss / d + kNormEps);
    for (int i = 0; i < d; ++i) {
        n[i] = x[i] / *r;
        y[i] = g[i] * n[i];
    }
}

void rmsnorm_row_backward(const double* dy, const double* g, const double* n, double r, int d, double* dx,
                          double* dg) {
    double dot = 0.0;
    for (int i = 0; i < d; ++i) {
        dg[i] += dy[i] * n[i];
        dot += dy[i] * g[i] * n[i];
    }
    dot /= d;
    for (int i = 0; i < d; ++i) dx[i] += (dy[i] * g[i] - n[i] * dot) / r;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x))); }

double gelu_grad(double x) {
    const double t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
}

void log_softmax(const double* logits, int n, double* out) {
    double mx = *std::max_element(logits, logits + n);
    double sum = 0.0;
    for (int i = 0; i < n; ++i) sum += std::exp(logits[i] - mx);
    const double lse = mx + std::log(sum);
    for (int i = 0; i < n; ++i) out[i] = logits[i] - lse;
}

std::size_t att_offset(int row, int heads) {
    return static_cast<std::size_t>(heads) * static_cast<std::size_t>(row) * (row + 1) / 2;
}

template <typename T>
void grow(std::vector<T>& v, std::size_t n) {
    v.resize(v.size() + n);
}

void write_u64_le(std::ostream& out, std::uint64_t v) {
    std::array<char, 8> bytes{};
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    out.write(bytes.data(), 8);
}

std::uint64_t read_u64_le(std::istream& in) {
    std::array<unsigned char, 8> bytes{};
    in.read(reinterpret_cast<char*>(bytes.data()), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
    return v;
}

}  // namespace

void ArchConfig::validate() const {
    if (vocab_size <= 0 || d_model <= 0 || n_layers <= 0 || n_heads <= 0 || d_hidden <= 0 || context <= 0) {
        throw InvalidArgument("arch config: every layer size must be positive");
    }
    if (d_model % n_heads != 0) throw InvalidArgument("arch config: d_model must be divisible by n_heads");
}

ParamLayout::ParamLayout(const ArchConfig& a) {
    const auto v = static_cast<std::size_t>(a.vocab_size);
    const auto d = static_cast<std::size_t>(a.d_model);
    const auto h = static_cast<std::size_t>(a.d_hidden);
    std::size_t at = 0;
    auto take = [&](std::size_t n) {
        std::size_t o = at;
        at += n;
        return o;
    };
    tok_emb = take(v * d);
    pos_emb = take(static_cast<std::size_t>(a.context) * d);
    for (int l = 0; l < a.n_layers; ++l) {
        Block b{};
        b.norm1 = take(d);
        b.wq = take(d * d);
        b.wk = take(d * d);
        b.wv = take(d * d);
        b.wo = take(d * d);
        b.norm2 = take(d);
        b.w1 = take(d * h);
        b.b1 = take(h);
        b.w2 = take(h * d);
        b.b2 = take(d);
        blocks.push_back(b);
    }
    norm_final = take(d);
    w_out = take(d * v);
    total = at;
}

std::size_t param_count(const ArchConfig& a) {
    const std::size_t v = a.vocab_size, d = a.d_model, h = a.d_hidden, c = a.context;
    const std::size_t per_block = 2 * d + 4 * d * d + 2 * d * h + h + d;
    return v * d + c * d + static_cast<std::size_t>(a.n_layers) * per_block + d + d * v;
}

PolicyParams::PolicyParams(const ArchConfig& arch) : arch_(arch), layout_(arch) {
    arch_.validate();
    values_.assign(layout_.total, 0.0);
}

bool PolicyParams::all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

void PolicyParams::add_scaled(const PolicyParams& other, double scale) {
    if (!same_shape(other)) throw InvalidArgument("add_scaled: shape mismatch");
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += scale * other.values_[i];
}

void PolicyParams::fill(double v) { std::fill(values_.begin(), values_.end(), v); }

void PolicyParams::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write checkpoint " + path.string());
    out << kCheckpointMagic << ' ' << kFormatVersion << '\n'
        << "vocab_size " << arch_.vocab_size << '\n'
        << "d_model " << arch_.d_model << '\n'
        << "n_layers " << arch_.n_layers << '\n'
        << "n_heads " << arch_.n_heads << '\n'
        << "d_hidden " << arch_.d_hidden << '\n'
        << "context " << arch_.context << '\n'
        << "param_count " << values_.size() << '\n'
        << "payload f64le\n";
    for (double v : values_) write_u64_le(out, std::bit_cast<std::uint64_t>(v));
    if (!out) throw Error("failed writing checkpoint " + path.string());
}

PolicyParams PolicyParams::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot read checkpoint " + path.string());
    std::string line;
    std::getline(in, line);
    {
        std::istringstream head(line);
        std::string magic;
        int version = 0;
        head >> magic >> version;
        if (magic != kCheckpointMagic) throw FormatError(path.string() + ": not a policy checkpoint");
        if (version != kFormatVersion) {
            throw FormatError(path.string() + ": checkpoint version " + std::to_string(version) +
                              ", expected " + std::to_string(kFormatVersion));
        }
    }
    ArchConfig arch;
    std::size_t count = 0;
    auto field = [&](const char* name, auto& dst) {
        if (!std::getline(in, line)) throw FormatError(path.string() + ": truncated header");
        std::istringstream ls(line);
        std::string key;
        ls >> key >> dst;
        if (key != name || ls.fail()) throw FormatError(path.string() + ": expected header field " + name);
    };
    field("vocab_size", arch.vocab_size);
    field("d_model", arch.d_model);
    field("n_layers", arch.n_layers);
    field("n_heads", arch.n_heads);
    field("d_hidden", arch.d_hidden);
    field("context", arch.context);
    field("param_count", count);
    std::getline(in, line);
    if (line != "payload f64le") throw FormatError(path.string() + ": expected payload marker");

    PolicyParams params(arch);
    if (count != params.count()) {
        throw FormatError(path.string() + ": param_count " + std::to_string(count) +
                          " does not match shape header (" + std::to_string(params.count()) + ")");
    }
    for (double& v : params.values_) v = std::bit_cast<double>(read_u64_le(in));
    if (!in) throw FormatError(path.string() + ": truncated payload");
    if (in.peek() != std::char_traits<char>::eof()) throw FormatError(path.string() + ": trailing bytes");
    return params;
}

PolicyParams init_params(const ArchConfig& arch, std::uint64_t seed) {
    PolicyParams params(arch);
    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, 0.02);
    const ParamLayout& lay = params.layout();
    auto vals = params.values();
    const std::size_t d = arch.d_model, h = arch.d_hidden, v = arch.vocab_size;
    auto gaussian = [&](std::size_t at, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) vals[at + i] = normal(rng);
    };
    auto ones = [&](std::size_t at, std::size_t n) { std::fill_n(vals.begin() + at, n, 1.0); };

    gaussian(lay.tok_emb, v * d);
    gaussian(lay.pos_emb, static_cast<std::size_t>(arch.context) * d);
    for (const auto& b : lay.blocks) {
        ones(b.norm1, d);
        gaussian(b.wq, d * d);
        gaussian(b.wk, d * d);
        gaussian(b.wv, d * d);
        gaussian(b.wo, d * d);
        ones(b.norm2, d);
        gaussian(b.w1, d * h);
        gaussian(b.w2, h * d);
    }
    ones(lay.norm_final, d);
    gaussian(lay.w_out, d * v);
    return params;
}

// --- Activations -------------------------------------------------------------

Activations::Activations(const PolicyParams& params) : params_(&params) {
    params.arch().validate();
    layers_.resize(params.arch().n_layers);
}

std::span<const double> Activations::logprobs(int position) const {
    if (position < 0 || position >= length()) throw InvalidArgument("logprobs: position out of range");
    const auto v = static_cast<std::size_t>(params_->arch().vocab_size);
    return {logp_.data() + static_cast<std::size_t>(position) * v, v};
}

void Activations::append(std::span<const TokenId> ids) {
    const ArchConfig& a = params_->arch();
    const ParamLayout& lay = params_->layout();
    const double* p = params_->values().data();
    const int d = a.d_model, hdim = a.d_hidden, v = a.vocab_size, heads = a.n_heads;
    const int head_dim = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
    const int t0 = length();
    const int n = static_cast<int>(ids.size());
    if (n == 0) return;
    if (t0 + n > a.context) throw InvalidArgument("sequence exceeds the context window");
    for (TokenId id : ids) {
        if (id < 0 || id >= v) throw InvalidArgument("token id " + std::to_string(id) + " out of vocab");
    }
    ids_.insert(ids_.end(), ids.begin(), ids.end());
    const auto nd = static_cast<std::size_t>(n) * d;
    const auto row = [](std::vector<double>& buf, int t, int width) {
        return buf.data() + static_cast<std::ptrdiff_t>(t) * width;
    };

    std::vector<double> x(nd);
    for (int i = 0; i < n; ++i) {
        const double* te = p + lay.tok_emb + static_cast<std::size_t>(ids[i]) * d;
        const double* pe = p + lay.pos_emb + static_cast<std::size_t>(t0 + i) * d;
        for (int j = 0; j < d; ++j) x[static_cast<std::size_t>(i) * d + j] = te[j] + pe[j];
    }

    for (int l = 0; l < a.n_layers; ++l) {
        const auto& b = lay.blocks[l];
        LayerCache& c = layers_[l];
        c.x_in.insert(c.x_in.end(), x.begin(), x.end());
        grow(c.r1, n);
        grow(c.n1, nd);
        grow(c.xn1, nd);
        for (int t = t0; t < t0 + n; ++t) {
            rmsnorm_row(row(c.x_in, t, d), p + b.norm1, d, &c.r1[t], row(c.n1, t, d), row(c.xn1, t, d));
        }
        for (auto [buf, w] : {std::pair{&c.q, b.wq}, std::pair{&c.k, b.wk}, std::pair{&c.v, b.wv}}) {
            grow(*buf, nd);
            matmul(row(c.xn1, t0, d), n, d, p + w, d, row(*buf, t0, d));
        }
        c.att.resize(att_offset(t0 + n, heads));
        grow(c.o, nd);
        for (int t = t0; t < t0 + n; ++t) {
            for (int hh = 0; hh < heads; ++hh) {
                double* att = c.att.data() + att_offset(t, heads) + static_cast<std::size_t>(hh) * (t + 1);
                const double* qt = row(c.q, t, d) + hh * head_dim;
                double mx = -std::numeric_limits<double>::infinity();
                for (int s = 0; s <= t; ++s) {
                    const double* ks = row(c.k, s, d) + hh * head_dim;
                    double dot = 0.0;
                    for (int j = 0; j < head_dim; ++j) dot += qt[j] * ks[j];
                    att[s] = dot * scale;
                    mx = std::max(mx, att[s]);
                }
                double sum = 0.0;
                for (int s = 0; s <= t; ++s) {
                    att[s] = std::exp(att[s] - mx);
                    sum += att[s];
                }
                double* ot = row(c.o, t, d) + hh * head_dim;
                for (int s = 0; s <= t; ++s) {
                    att[s] /= sum;
                    const double* vs = row(c.v, s, d) + hh * head_dim;
                    for (int j = 0; j < head_dim; ++j) ot[j] += att[s] * vs[j];
                }
            }
        }
        std::vector<double> proj(nd);
        matmul(row(c.o, t0, d), n, d, p + b.wo, d, proj.data());
        grow(c.x_mid, nd);
        for (std::size_t i = 0; i < nd; ++i) row(c.x_mid, t0, d)[i] = x[i] + proj[i];

        grow(c.r2, n);
        grow(c.n2, nd);
        grow(c.xn2, nd);
        for (int t = t0; t < t0 + n; ++t) {
            rmsnorm_row(row(c.x_mid, t, d), p + b.norm2, d, &c.r2[t], row(c.n2, t, d), row(c.xn2, t, d));
        }
        const auto nh = static_cast<std::size_t>(n) * hdim;
        grow(c.hpre, nh);
        grow(c.hact, nh);
        matmul(row(c.xn2, t0, d), n, d, p + b.w1, hdim, row(c.hpre, t0, hdim));
        for (int t = t0; t < t0 + n; ++t) {
            double* hp = row(c.hpre, t, hdim);
            double* ha = row(c.hact, t, hdim);
            for (int j = 0; j < hdim; ++j) {
                hp[j] += p[b.b1 + j];
                ha[j] = gelu(hp[j]);
            }
        }
        matmul(row(c.hact, t0, hdim), n, hdim, p + b.w2, d, proj.data());
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < d; ++j) {
                const std::size_t k = static_cast<std::size_t>(i) * d + j;
                x[k] = row(c.x_mid, t0, d)[k] + proj[k] + p[b.b2 + j];
            }
        }
    }

    x_last_.insert(x_last_.end(), x.begin(), x.end());
    grow(rf_, n);
    grow(nf_, nd);
    grow(xnf_, nd);
    for (int t = t0; t < t0 + n; ++t) {
        rmsnorm_row(row(x_last_, t, d), p + lay.norm_final, d, &rf_[t], row(nf_, t, d), row(xnf_, t, d));
    }
    std::vector<double> logits(static_cast<std::size_t>(n) * v);
    matmul(row(xnf_, t0, d), n, d, p + lay.w_out, v, logits.data());
    grow(logp_, static_cast<std::size_t>(n) * v);
    for (int i = 0; i < n; ++i) {
        log_softmax(logits.data() + static_cast<std::size_t>(i) * v, v, row(logp_, t0 + i, v));
    }
}

void Activations::backward(std::span<const PositionWeight> terms, Gradient& grad) const {
    if (!grad.same_shape(*params_)) throw InvalidArgument("gradient shape does not match params");
    const ArchConfig& a = params_->arch();
    const ParamLayout& lay = params_->layout();
    const double* p = params_->values().data();
    double* g = grad.values().data();
    const int d = a.d_model, hdim = a.d_hidden, v = a.vocab_size, heads = a.n_heads;
    const int head_dim = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
    const int n = length();
    const auto nd = static_cast<std::size_t>(n) * d;
    auto at = [](auto& buf, int t, int width) { return buf.data() + static_cast<std::ptrdiff_t>(t) * width; };

    // d/dlogits of w * logsoftmax(logits)[target] = w * (onehot - softmax)
    std::vector<double> dlogits(static_cast<std::size_t>(n) * v, 0.0);
    for (const auto& term : terms) {
        if (term.position < 0 || term.position >= n) throw InvalidArgument("backward: position out of range");
        if (term.target < 0 || term.target >= v) throw InvalidArgument("backward: target out of vocab");
        if (!std::isfinite(term.weight)) throw InvalidArgument("backward: non-finite weight");
        double* dl = at(dlogits, term.position, v);
        const double* lp = at(logp_, term.position, v);
        for (int j = 0; j < v; ++j) dl[j] -= term.weight * std::exp(lp[j]);
        dl[term.target] += term.weight;
    }

    std::vector<double> dxnf(nd, 0.0);
    matmul_backward(xnf_.data(), dlogits.data(), n, d, p + lay.w_out, v, dxnf.data(), g + lay.w_out);
    std::vector<double> dx(nd, 0.0);
    for (int t = 0; t < n; ++t) {
        rmsnorm_row_backward(at(dxnf, t, d), p + lay.norm_final, at(nf_, t, d), rf_[t], d, at(dx, t, d),
                             g + lay.norm_final);
    }

    for (int l = a.n_layers - 1; l >= 0; --l) {
        const auto& b = lay.blocks[l];
        const LayerCache& c = layers_[l];

        // MLP branch: x_out = x_mid + gelu(xn2 W1 + b1) W2 + b2
        std::vector<double> dx_mid = dx;
        const auto nh = static_cast<std::size_t>(n) * hdim;
        std::vector<double> dhact(nh, 0.0);
        for (int t = 0; t < n; ++t) {
            for (int j = 0; j < d; ++j) g[b.b2 + j] += dx[static_cast<std::size_t>(t) * d + j];
        }
        matmul_backward(c.hact.data(), dx.data(), n, hdim, p + b.w2, d, dhact.data(), g + b.w2);
        for (std::size_t i = 0; i < nh; ++i) dhact[i] *= gelu_grad(c.hpre[i]);
        for (int t = 0; t < n; ++t) {
            for (int j = 0; j < hdim; ++j) g[b.b1 + j] += dhact[static_cast<std::size_t>(t) * hdim + j];
        }
        std::vector<double> dxn2(nd, 0.0);
        matmul_backward(c.xn2.data(), dhact.data(), n, d, p + b.w1, hdim, dxn2.data(), g + b.w1);
        for (int t = 0; t < n; ++t) {
            rmsnorm_row_backward(at(dxn2, t, d), p + b.norm2, at(c.n2, t, d), c.r2[t], d, at(dx_mid, t, d),
                                 g + b.norm2);
        }

        // Attention branch: x_mid = x_in + attn(xn1) Wo
        std::vector<double> dx_in = dx_mid;
        std::vector<double> dobuf(nd, 0.0);
        matmul_backward(c.o.data(), dx_mid.data(), n, d, p + b.wo, d, dobuf.data(), g + b.wo);
        std::vector<double> dq(nd, 0.0), dk(nd, 0.0), dv(nd, 0.0);
        std::vector<double> datt(static_cast<std::size_t>(n));
        for (int t = 0; t < n; ++t) {
            for (int hh = 0; hh < heads; ++hh) {
                const double* att = c.att.data() + att_offset(t, heads) + static_cast<std::size_t>(hh) * (t + 1);
                const double* dot = at(dobuf, t, d) + hh * head_dim;
                double weighted = 0.0;
                for (int s = 0; s <= t; ++s) {
                    const double* vs = at(c.v, s, d) + hh * head_dim;
                    double* dvs = at(dv, s, d) + hh * head_dim;
                    double dp = 0.0;
                    for (int j = 0; j < head_dim; ++j) {
                        dp += dot[j] * vs[j];
                        dvs[j] += att[s] * dot[j];
                    }
                    datt[s] = dp;
                    weighted += att[s] * dp;
                }
                const double* qt = at(c.q, t, d) + hh * head_dim;
                double* dqt = at(dq, t, d) + hh * head_dim;
                for (int s = 0; s <= t; ++s) {
                    const double ds = att[s] * (datt[s] - weighted) * scale;
                    if (ds == 0.0) continue;
                    const double* ks = at(c.k, s, d) + hh * head_dim;
                    double* dks = at(dk, s, d) + hh * head_dim;
                    for (int j = 0; j < head_dim; ++j) {
                        dqt[j] += ds * ks[j];
                        dks[j] += ds * qt[j];
                    }
                }
            }
        }
        std::vector<double> dxn1(nd, 0.0);
        matmul_backward(c.xn1.data(), dq.data(), n, d, p + b.wq, d, dxn1.data(), g + b.wq);
        matmul_backward(c.xn1.data(), dk.data(), n, d, p + b.wk, d, dxn1.data(), g + b.wk);
        matmul_backward(c.xn1.data(), dv.data(), n, d, p + b.wv, d, dxn1.data(), g + b.wv);
        for (int t = 0; t < n; ++t) {
            rmsnorm_row_backward(at(dxn1, t, d), p + b.norm1, at(c.n1, t, d), c.r1[t], d, at(dx_in, t, d),
                                 g + b.norm1);
        }
        dx = std::move(dx_in);
    }

    for (int t = 0; t < n; ++t) {
        double* te = g + lay.tok_emb + static_cast<std::size_t>(ids_[t]) * d;
        double* pe = g + lay.pos_emb + static_cast<std::size_t>(t) * d;
        const double* dxt = at(dx, t, d);
        for (int j = 0; j < d; ++j) {
            te[j] += dxt[j];
            pe[j] += dxt[j];
        }
    }
}

// --- sequence-level API ------------------------------------------------------

namespace detail {

bool fits_single_window(const PolicyParams& params, std::size_t query_len, std::size_t output_len) {
    // inputs are BOS + query + output[:-1]
    return query_len + output_len <= static_cast<std::size_t>(params.arch().context);
}

void check_sequence(const PolicyParams& params, std::span<const TokenId> query, std::span<const TokenId> output) {
    if (output.empty()) throw InvalidArgument("output sequence is empty");
    const int v = params.arch().vocab_size;
    for (auto seq : {query, output}) {
        for (TokenId id : seq) {
            if (id < 0 || id >= v) throw InvalidArgument("token id " + std::to_string(id) + " out of vocab");
        }
    }
}

TokenIds teacher_forced_inputs(std::span<const TokenId> query, std::span<const TokenId> output) {
    TokenIds ids = conditioning_prefix(query);
    ids.insert(ids.end(), output.begin(), output.end() - 1);
    return ids;
}

}  // namespace detail

TokenIds conditioning_prefix(std::span<const TokenId> query) {
    TokenIds ids;
    ids.reserve(query.size() + 1);
    ids.push_back(Vocab::kBos);
    ids.insert(ids.end(), query.begin(), query.end());
    return ids;
}

TokenDistribution forward_logprobs(const PolicyParams& params, std::span<const TokenId> context) {
    if (context.empty()) throw InvalidArgument("forward_logprobs: empty context (prefix must start with BOS)");
    const auto window = static_cast<std::size_t>(params.arch().context);
    if (context.size() > window) context = context.subspan(context.size() - window);
    Activations acts(params);
    acts.append(context);
    auto lp = acts.logprobs(acts.length() - 1);
    return {std::vector<double>(lp.begin(), lp.end())};
}

SequenceLogprob sequence_logprob(const PolicyParams& params, std::span<const TokenId> query,
                                 std::span<const TokenId> output) {
    detail::check_sequence(params, query, output);
    SequenceLogprob result;
    result.per_token.resize(output.size());
    if (detail::fits_single_window(params, query.size(), output.size())) {
        Activations acts(params);
        acts.append(detail::teacher_forced_inputs(query, output));
        for (std::size_t t = 0; t < output.size(); ++t) {
            result.per_token[t] = acts.logprobs(static_cast<int>(query.size() + t))[output[t]];
            result.total += result.per_token[t];
        }
        return result;
    }
    TokenIds prefix = conditioning_prefix(query);
    for (std::size_t t = 0; t < output.size(); ++t) {
        result.per_token[t] = forward_logprobs(params, prefix).logprobs[output[t]];
        result.total += result.per_token[t];
        prefix.push_back(output[t]);
    }
    return result;
}

SequenceLogprob accumulate_backward(const PolicyParams& params, std::span<const TokenId> query,
                                    std::span<const TokenId> output, std::span<const double> weights,
                                    Gradient& grad) {
    if (weights.size() != output.size()) throw InvalidArgument("backward: one weight per output token required");
    for (double w : weights) {
        if (!std::isfinite(w)) throw InvalidArgument("backward: non-finite weight");
    }
    return weighted_backward(
        params, query, output,
        [&](std::span<const double>) { return std::vector<double>(weights.begin(), weights.end()); }, grad);
}

Gradient backward(const PolicyParams& params, std::span<const TokenId> query, std::span<const TokenId> output,
                  std::span<const double> weights) {
    Gradient grad(params.arch());
    accumulate_backward(params, query, output, weights, grad);
    return grad;
}

namespace {

// Incremental decoder that falls back to re-encoding the newest window once
// the sequence outgrows the context.
template <typename Choose>
TokenIds decode(const PolicyParams& params, std::span<const TokenId> query, int max_len, Choose&& choose) {
    if (max_len <= 0) throw InvalidArgument("max_len must be positive");
    for (TokenId id : query) {
        if (id < 0 || id >= params.arch().vocab_size) throw InvalidArgument("query token out of vocab");
    }
    const auto window = static_cast<std::size_t>(params.arch().context);
    TokenIds seq = conditioning_prefix(query);
    TokenIds out;
    std::optional<Activations> acts;
    auto reencode = [&] {
        acts.emplace(params);
        std::size_t start = seq.size() > window ? seq.size() - window : 0;
        acts->append(std::span(seq).subspan(start));
    };
    reencode();
    while (static_cast<int>(out.size()) < max_len) {
        TokenId next = choose(acts->logprobs(acts->length() - 1));
        out.push_back(next);
        seq.push_back(next);
        if (next == Vocab::kEos || static_cast<int>(out.size()) == max_len) break;
        if (acts->length() < static_cast<int>(window)) {
            acts->append(std::span(&next, 1));
        } else {
            reencode();
        }
    }
    return out;
}

TokenId argmax(std::span<const double> lp) {
    return static_cast<TokenId>(std::max_element(lp.begin(), lp.end()) - lp.begin());
}

}  // namespace

TokenIds sample(const PolicyParams& params, std::span<const TokenId> query, const SampleConfig& config, Rng& rng) {
    if (!(config.temperature > 0.0)) throw InvalidArgument("sample: temperature must be positive");
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    std::vector<double> probs;
    return decode(params, query, config.max_len, [&](std::span<const double> lp) -> TokenId {
        probs.resize(lp.size());
        const double mx = *std::max_element(lp.begin(), lp.end());
        double sum = 0.0;
        for (std::size_t j = 0; j < lp.size(); ++j) {
            probs[j] = std::exp((lp[j] - mx) / config.temperature);
            sum += probs[j];
        }
        double u = uniform(rng) * sum;
        for (std::size_t j = 0; j < probs.size(); ++j) {
            u -= probs[j];
            if (u < 0.0) return static_cast<TokenId>(j);
        }
        return argmax(lp);  // u landed on the rounding slack at the top end
    });
}

TokenIds greedy_decode(const PolicyParams& params, std::span<const TokenId> query, int max_len) {
    return decode(params, query, max_len, argmax);
}

}  // namespace finrl
