#pragma once

// Reference implementations written as explicit loops over tokens, a
// finite-difference gradient checker, and the self-check suite behind
// `iorm verify`.

#include "iorm/training.hpp"

#include <chrono>
#include <functional>
#include <map>

namespace iorm::verify {

// --- plain-loop references ---------------------------------------------------

struct Dense {
    std::size_t in = 0, out = 0;
    std::vector<double> w; // [in, out]
    std::vector<double> b; // empty when the layer has no bias

    std::vector<double> apply(const double* x) const {
        std::vector<double> y(out, 0.0);
        for (std::size_t o = 0; o < out; ++o) {
            double acc = b.empty() ? 0.0 : b[o];
            for (std::size_t i = 0; i < in; ++i) acc += x[i] * w[i * out + o];
            y[o] = acc;
        }
        return y;
    }
};

template <typename T>
std::vector<double> to_f64(const Tensor<T>& t) {
    return t.defined() ? std::vector<double>(t.data().begin(), t.data().end()) : std::vector<double>{};
}

template <typename T>
Dense dense_of(const Linear<T>& l) {
    return {l.in_features(), l.out_features(), to_f64(l.weight), to_f64(l.bias)};
}

struct NormRef {
    std::vector<double> gamma, beta;
    double eps = 1e-5;

    void apply(double* x, std::size_t c) const {
        double mu = 0.0, var = 0.0;
        for (std::size_t i = 0; i < c; ++i) mu += x[i];
        mu /= static_cast<double>(c);
        for (std::size_t i = 0; i < c; ++i) var += (x[i] - mu) * (x[i] - mu);
        var /= static_cast<double>(c);
        const double inv = 1.0 / std::sqrt(var + eps);
        for (std::size_t i = 0; i < c; ++i) x[i] = (x[i] - mu) * inv * gamma[i] + beta[i];
    }
};

template <typename T>
NormRef norm_of(const LayerNorm<T>& n) {
    return {to_f64(n.gamma), to_f64(n.beta)};
}

/// One sample's token grid, row-major [h, w, c].
struct Grid {
    std::size_t h = 0, w = 0, c = 0;
    std::vector<double> v;

    const double* at(std::size_t y, std::size_t x) const { return v.data() + (y * w + x) * c; }
    double* at(std::size_t y, std::size_t x) { return v.data() + (y * w + x) * c; }
};

/// Sample `n` of a [B,H,W,C] tensor.
template <typename T>
Grid grid_of(const Tensor<T>& x, std::size_t n = 0) {
    Grid g{x.dim(1), x.dim(2), x.dim(3), {}};
    const std::size_t len = g.h * g.w * g.c;
    g.v.assign(x.data().begin() + static_cast<long>(n * len), x.data().begin() + static_cast<long>((n + 1) * len));
    return g;
}

struct AttentionRef {
    Dense q, k, v, proj;
    std::vector<double> tau;   // [heads]
    std::vector<double> table; // [(2·table_window − 1)², heads]
    std::size_t heads = 1;
    std::size_t table_window = 1;
};

template <typename T>
AttentionRef attention_ref(const WindowAttentionParams<T>& p) {
    return {dense_of(p.q), dense_of(p.k), dense_of(p.v), dense_of(p.proj), to_f64(p.tau), to_f64(p.bias_table),
            p.heads,       p.window};
}

/// Windowed cosine attention computed token by token. Query (y, x) sits at
/// (y − s, x − s) mod extent after the roll; it sees the keys of its rolled
/// window, except those on the other side of a wrap seam when s > 0.
inline Grid reference_window_attention(const AttentionRef& p, const Grid& q_src, const Grid& kv_src, std::size_t win,
                                       bool shifted) {
    const std::size_t H = q_src.h, W = q_src.w, C = q_src.c;
    const std::size_t s = shifted ? win / 2 : 0;
    const std::size_t d = C / p.heads;
    const long off = static_cast<long>(p.table_window) - 1;
    const long side = 2 * static_cast<long>(p.table_window) - 1;
    auto seam = [&](std::size_t pos, std::size_t extent) { return s > 0 && pos >= extent - s; };
    auto norm_of = [](const double* x, std::size_t n) {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) acc += x[i] * x[i];
        return std::max(std::sqrt(acc), 1e-6);
    };

    std::vector<std::vector<double>> Q(H * W), K(H * W), V(H * W);
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
            Q[y * W + x] = p.q.apply(q_src.at(y, x));
            K[y * W + x] = p.k.apply(kv_src.at(y, x));
            V[y * W + x] = p.v.apply(kv_src.at(y, x));
        }

    Grid out{H, W, C, std::vector<double>(H * W * C)};
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
            const std::size_t ry = (y + H - s) % H, rx = (x + W - s) % W;
            const std::size_t wy = ry / win * win, wx = rx / win * win;
            std::vector<double> z(C, 0.0);
            for (std::size_t hd = 0; hd < p.heads; ++hd) {
                const double* q = Q[y * W + x].data() + hd * d;
                const double qn = norm_of(q, d);
                std::vector<double> logit;
                std::vector<std::size_t> key;
                for (std::size_t ky = wy; ky < wy + win; ++ky)
                    for (std::size_t kx = wx; kx < wx + win; ++kx) {
                        const std::size_t src = ((ky + s) % H) * W + (kx + s) % W;
                        const double* k = K[src].data() + hd * d;
                        double dot = 0.0;
                        for (std::size_t i = 0; i < d; ++i) dot += q[i] * k[i];
                        const long dy = static_cast<long>(ry) - static_cast<long>(ky);
                        const long dx = static_cast<long>(rx) - static_cast<long>(kx);
                        const auto row = static_cast<std::size_t>((dy + off) * side + (dx + off));
                        double l = dot / (qn * norm_of(k, d)) / p.tau[hd] + p.table[row * p.heads + hd];
                        if (seam(ry, H) != seam(ky, H) || seam(rx, W) != seam(kx, W)) l += -100.0;
                        logit.push_back(l);
                        key.push_back(src);
                    }
                const double mx = *std::max_element(logit.begin(), logit.end());
                double total = 0.0;
                for (auto& l : logit) total += (l = std::exp(l - mx));
                for (std::size_t j = 0; j < key.size(); ++j)
                    for (std::size_t i = 0; i < d; ++i) z[hd * d + i] += logit[j] / total * V[key[j]][hd * d + i];
            }
            const auto o = p.proj.apply(z.data());
            std::copy(o.begin(), o.end(), out.at(y, x));
        }
    return out;
}

/// LN(o + attention(q = o, k = v = i)).
inline Grid reference_cross_attention(const AttentionRef& p, const NormRef& norm, const Grid& i_feat,
                                      const Grid& o_feat, std::size_t win, bool shifted) {
    Grid out = reference_window_attention(p, o_feat, i_feat, win, shifted);
    for (std::size_t t = 0; t < out.h * out.w; ++t) {
        for (std::size_t ch = 0; ch < out.c; ++ch) out.v[t * out.c + ch] += o_feat.v[t * out.c + ch];
        norm.apply(out.v.data() + t * out.c, out.c);
    }
    return out;
}

/// 2×2 concatenation (row offset varies fastest), projection, layernorm.
inline Grid reference_patch_merge(const Dense& reduction, const NormRef& norm, const Grid& x) {
    Grid out{x.h / 2, x.w / 2, reduction.out, std::vector<double>(x.h / 2 * (x.w / 2) * reduction.out)};
    std::vector<double> cat(4 * x.c);
    for (std::size_t y = 0; y < out.h; ++y)
        for (std::size_t xx = 0; xx < out.w; ++xx) {
            const std::size_t src[4][2] = {{2 * y, 2 * xx}, {2 * y + 1, 2 * xx}, {2 * y, 2 * xx + 1},
                                           {2 * y + 1, 2 * xx + 1}};
            for (std::size_t q = 0; q < 4; ++q) std::copy_n(x.at(src[q][0], src[q][1]), x.c, cat.data() + q * x.c);
            auto o = reduction.apply(cat.data());
            norm.apply(o.data(), o.size());
            std::copy(o.begin(), o.end(), out.at(y, xx));
        }
    return out;
}

/// Patch projection of one image [C,H,W] (features ordered channel, row, col).
inline Grid reference_patch_embed(const Dense& proj, const NormRef& norm, const std::vector<double>& image,
                                  std::size_t channels, std::size_t size, std::size_t patch) {
    const std::size_t g = size / patch;
    Grid out{g, g, proj.out, std::vector<double>(g * g * proj.out)};
    std::vector<double> feat(channels * patch * patch);
    for (std::size_t gy = 0; gy < g; ++gy)
        for (std::size_t gx = 0; gx < g; ++gx) {
            std::size_t f = 0;
            for (std::size_t ch = 0; ch < channels; ++ch)
                for (std::size_t py = 0; py < patch; ++py)
                    for (std::size_t px = 0; px < patch; ++px)
                        feat[f++] = image[(ch * size + gy * patch + py) * size + gx * patch + px];
            auto o = proj.apply(feat.data());
            norm.apply(o.data(), o.size());
            std::copy(o.begin(), o.end(), out.at(gy, gx));
        }
    return out;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) return std::numeric_limits<double>::infinity();
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

// --- finite differences ------------------------------------------------------

struct FdOptions {
    double step = 1e-6;
    std::size_t coords_per_tensor = 64; // ignored when coords_total > 0
    std::size_t coords_total = 0;       // sample this many scalars across all tensors instead
    double floor = 1e-3;                // relative-error denominator never drops below this
    std::uint64_t seed = 0;
};

struct FdTensorResult {
    std::string name;
    std::size_t checked = 0;
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
    std::size_t worst_index = 0;
};

struct FdReport {
    std::vector<FdTensorResult> tensors;
    double max_rel_err = 0.0;
    std::size_t checked = 0;
};

/// Compares autodiff gradients of `loss` against central differences at
/// sampled coordinates. rel = |a − n| / max(|a|, |n|, floor).
inline FdReport finite_diff_check(const std::function<Tensor<double>()>& loss, const ParamList<double>& params,
                                  const FdOptions& opt = {}) {
    for (const auto& p : params) {
        Tensor<double> t = p.tensor;
        t.zero_grad();
    }
    {
        Tensor<double> l = loss();
        backward(l);
    }
    std::vector<std::vector<std::size_t>> picks(params.size());
    Rng rng(opt.seed);
    if (opt.coords_total > 0) {
        std::size_t total = 0;
        for (const auto& p : params) total += p.tensor.numel();
        std::uniform_int_distribution<std::size_t> u(0, total - 1);
        for (std::size_t n = 0; n < opt.coords_total; ++n) {
            std::size_t flat = u(rng), i = 0;
            while (flat >= params[i].tensor.numel()) flat -= params[i++].tensor.numel();
            picks[i].push_back(flat);
        }
    } else {
        for (std::size_t i = 0; i < params.size(); ++i) {
            std::vector<std::size_t> all(params[i].tensor.numel());
            std::iota(all.begin(), all.end(), std::size_t{0});
            std::shuffle(all.begin(), all.end(), rng);
            all.resize(std::min(all.size(), opt.coords_per_tensor));
            picks[i] = std::move(all);
        }
    }

    FdReport rep;
    NoGradGuard guard;
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (picks[i].empty()) continue;
        Tensor<double> t = params[i].tensor;
        FdTensorResult r{params[i].name, picks[i].size(), 0.0, 0.0, 0};
        for (std::size_t j : picks[i]) {
            const double a = t.has_grad() ? t.grad()[j] : 0.0;
            const double x0 = t.data()[j];
            t.data()[j] = x0 + opt.step;
            const double fp = loss().item();
            t.data()[j] = x0 - opt.step;
            const double fm = loss().item();
            t.data()[j] = x0;
            if (!std::isfinite(fp) || !std::isfinite(fm))
                throw NumericInputError("finite differences: loss is non-finite when perturbing " + r.name + "[" +
                                        std::to_string(j) + "]");
            const double n = (fp - fm) / (2.0 * opt.step);
            const double abs_err = std::abs(a - n);
            const double rel = abs_err / std::max({std::abs(a), std::abs(n), opt.floor});
            r.max_abs_err = std::max(r.max_abs_err, abs_err);
            if (rel > r.max_rel_err) {
                r.max_rel_err = rel;
                r.worst_index = j;
            }
        }
        rep.max_rel_err = std::max(rep.max_rel_err, r.max_rel_err);
        rep.checked += r.checked;
        rep.tensors.push_back(std::move(r));
    }
    return rep;
}

/// Scalar probe Σ y ⊙ R with a fixed random R, so every output element
/// carries gradient.
inline std::function<Tensor<double>(const Tensor<double>&)> random_projection(const Shape& shape, std::uint64_t seed) {
    Rng rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<double> r(numel_of(shape));
    for (auto& v : r) v = n(rng);
    const Tensor<double> weights(shape, std::move(r));
    return [weights](const Tensor<double>& y) { return sum(mul(y, weights)); };
}

// --- report ------------------------------------------------------------------

struct CheckResult {
    std::string name;
    std::string scope;
    bool passed = false;
    double measured = 0.0;
    double tolerance = 0.0;
    std::string detail;
    std::uint64_t seed = 0; // master seed of the check's scope
};

struct VerificationReport {
    std::vector<CheckResult> checks;
    double seconds = 0.0;

    bool all_passed() const {
        return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
    }
    std::size_t failures() const {
        return static_cast<std::size_t>(
            std::count_if(checks.begin(), checks.end(), [](const CheckResult& c) { return !c.passed; }));
    }
    const CheckResult* find(const std::string& name) const {
        for (const auto& c : checks)
            if (c.name == name) return &c;
        return nullptr;
    }

    std::string to_csv() const {
        std::ostringstream os;
        os << "scope,check,status,measured,tolerance,seed,detail\n";
        for (const auto& c : checks)
            os << c.scope << ',' << c.name << ',' << (c.passed ? "PASS" : "FAIL") << ',' << std::setprecision(6)
               << c.measured << ',' << c.tolerance << ',' << c.seed << ",\"" << c.detail << "\"\n";
        return os.str();
    }

    std::string to_text() const {
        std::ostringstream os;
        for (const auto& c : checks) {
            os << (c.passed ? "PASS " : "FAIL ") << std::left << std::setw(44) << c.name << std::setprecision(3)
               << std::scientific << c.measured << " (tol " << c.tolerance << ")" << std::defaultfloat << "  seed " << c.seed;
            if (!c.detail.empty()) os << "  " << c.detail;
            os << '\n';
        }
        os << checks.size() - failures() << '/' << checks.size() << " checks passed in " << std::fixed
           << std::setprecision(1) << seconds << " s\n";
        return os.str();
    }
};

enum class Scope { Tensor, Encoder, Cross, Models, Schedule, All };

inline Scope scope_from_string(const std::string& s) {
    static const std::map<std::string, Scope> names{{"tensor", Scope::Tensor}, {"encoder", Scope::Encoder},
                                                    {"cross", Scope::Cross},   {"models", Scope::Models},
                                                    {"schedule", Scope::Schedule}, {"all", Scope::All}};
    const auto it = names.find(s);
    if (it == names.end())
        throw ConfigError("unknown verify scope '" + s + "' (tensor, encoder, cross, models, schedule, all)");
    return it->second;
}

using CrossImpl = std::function<FeatureMap<double>(const FeatureMap<double>&, const FeatureMap<double>&,
                                                   const CrossAttentionParams<double>&)>;

/// Replacement points for mutation testing; empty members use the library.
struct SuiteHooks {
    CrossImpl cross;
};

// --- suite -------------------------------------------------------------------

namespace detail {

inline CheckResult upper_bound_check(std::string name, std::string scope, double measured, double tol,
                                     std::string detail = {}) {
    const bool ok = std::isfinite(measured) && measured <= tol;
    return {std::move(name), std::move(scope), ok, measured, tol, std::move(detail)};
}

inline CheckResult fd_check(std::string name, std::string scope, const FdReport& r, double tol) {
    std::string worst;
    double w = -1.0;
    for (const auto& t : r.tensors)
        if (t.max_rel_err > w) {
            w = t.max_rel_err;
            worst = t.name;
        }
    return upper_bound_check(std::move(name), std::move(scope), r.max_rel_err, tol,
                             std::to_string(r.checked) + " coords, worst " + worst);
}

template <typename T>
Tensor<T> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0, bool grad = false) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<T> v(numel_of(shape));
    for (auto& x : v) x = static_cast<T>(u(rng));
    return Tensor<T>(std::move(shape), std::move(v), grad);
}

/// Randomizes temperatures and bias tables so both enter the logits visibly.
template <typename T>
void perturb_attention(WindowAttentionParams<T>& p, Rng& rng) {
    std::uniform_real_distribution<double> tau(0.1, 2.0);
    std::normal_distribution<double> tab(0.0, 0.5);
    for (auto& x : p.tau.data()) x = static_cast<T>(tau(rng));
    for (auto& x : p.bias_table.data()) x = static_cast<T>(tab(rng));
}

template <typename T>
void perturb_norm(LayerNorm<T>& n, Rng& rng) {
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    for (auto& x : n.gamma.data()) x = static_cast<T>(1.0 + u(rng));
    for (auto& x : n.beta.data()) x = static_cast<T>(u(rng));
}

template <typename T>
void perturb_bias(Linear<T>& l, Rng& rng) {
    std::uniform_real_distribution<double> u(-0.3, 0.3);
    if (l.bias.defined())
        for (auto& x : l.bias.data()) x = static_cast<T>(u(rng));
}

template <typename T>
void perturb_cross(CrossAttentionParams<T>& p, Rng& rng) {
    perturb_attention(p.attn, rng);
    perturb_norm(p.norm, rng);
    for (auto* l : {&p.attn.q, &p.attn.k, &p.attn.v, &p.attn.proj}) perturb_bias(*l, rng);
}

struct CrossCase {
    std::size_t side, heads, dim, table_window;
    bool shift;
};

inline CrossCase random_cross_case(Rng& rng) {
    static constexpr std::size_t sides[] = {2, 4, 8};
    static constexpr std::size_t windows[] = {2, 4};
    std::uniform_int_distribution<int> pick3(0, 2), pick2(0, 1);
    CrossCase c{};
    c.side = sides[pick3(rng)];
    c.table_window = windows[pick2(rng)];
    c.heads = pick2(rng) ? 2 : 1;
    c.dim = 4 * c.heads * (pick2(rng) ? 2 : 1);
    c.shift = pick2(rng);
    return c;
}

/// Worst deviation of the library cross block from the reference over
/// `instances` random configurations.
template <typename T>
double cross_oracle_gap(std::size_t instances, std::uint64_t seed,
                        const std::function<FeatureMap<T>(const FeatureMap<T>&, const FeatureMap<T>&,
                                                          const CrossAttentionParams<T>&)>& impl) {
    Rng rng(seed);
    double worst = 0.0;
    for (std::size_t n = 0; n < instances; ++n) {
        const CrossCase c = random_cross_case(rng);
        CrossAttentionParams<T> p(c.dim, c.heads, c.table_window, c.shift, rng);
        perturb_cross(p, rng);
        const std::size_t batch = 2;
        const FeatureMap<T> i{random_tensor<T>({batch, c.side, c.side, c.dim}, rng), StageTag::S5};
        const FeatureMap<T> o{random_tensor<T>({batch, c.side, c.side, c.dim}, rng), StageTag::S5};
        const FeatureMap<T> got = impl(i, o, p);
        const std::size_t win = std::min(c.table_window, c.side);
        const AttentionRef ref = attention_ref(p.attn);
        const NormRef norm = norm_of(p.norm);
        for (std::size_t b = 0; b < batch; ++b) {
            const Grid want = reference_cross_attention(ref, norm, grid_of(i.data, b), grid_of(o.data, b), win, c.shift);
            worst = std::max(worst, max_abs_diff(grid_of(got.data, b).v, want.v));
        }
    }
    return worst;
}

inline void tensor_checks(std::vector<CheckResult>& out) {
    const std::string scope = "tensor";
    Rng rng(101);
    {
        const auto a = random_tensor<double>({7, 5}, rng), b = random_tensor<double>({5, 3}, rng);
        const auto c = matmul(a, b);
        double gap = 0.0;
        for (std::size_t i = 0; i < 7; ++i)
            for (std::size_t j = 0; j < 3; ++j) {
                double acc = 0.0;
                for (std::size_t k = 0; k < 5; ++k) acc += a.data()[i * 5 + k] * b.data()[k * 3 + j];
                gap = std::max(gap, std::abs(acc - c.data()[i * 3 + j]));
            }
        out.push_back(upper_bound_check("tensor.matmul_reference", scope, gap, 1e-12));
    }
    {
        const auto x = random_tensor<double>({6, 9}, rng, -30.0, 30.0);
        const auto p = softmax_lastdim(x);
        double gap = 0.0;
        for (std::size_t r = 0; r < 6; ++r) {
            double mx = -1e300, z = 0.0, total = 0.0;
            for (std::size_t j = 0; j < 9; ++j) mx = std::max(mx, x.data()[r * 9 + j]);
            for (std::size_t j = 0; j < 9; ++j) z += std::exp(x.data()[r * 9 + j] - mx);
            for (std::size_t j = 0; j < 9; ++j) {
                gap = std::max(gap, std::abs(std::exp(x.data()[r * 9 + j] - mx) / z - p.data()[r * 9 + j]));
                total += p.data()[r * 9 + j];
            }
            gap = std::max(gap, std::abs(total - 1.0));
        }
        out.push_back(upper_bound_check("tensor.softmax_reference", scope, gap, 1e-12));
    }
    {
        LayerNorm<double> ln(11);
        perturb_norm(ln, rng);
        const auto x = random_tensor<double>({4, 11}, rng, -3.0, 3.0);
        const auto y = ln(x);
        const NormRef ref = norm_of(ln);
        std::vector<double> want = to_f64(x);
        for (std::size_t r = 0; r < 4; ++r) ref.apply(want.data() + r * 11, 11);
        out.push_back(upper_bound_check("tensor.layernorm_reference", scope, max_abs_diff(want, to_f64(y)), 1e-12));
    }
    {
        const auto a = random_tensor<double>({5, 6}, rng), b = random_tensor<double>({4, 6}, rng);
        const auto s = cosine_similarity_matrix(a, b);
        double gap = 0.0;
        for (std::size_t i = 0; i < 5; ++i)
            for (std::size_t j = 0; j < 4; ++j) {
                double dot = 0.0, na = 0.0, nb = 0.0;
                for (std::size_t k = 0; k < 6; ++k) {
                    dot += a.data()[i * 6 + k] * b.data()[j * 6 + k];
                    na += a.data()[i * 6 + k] * a.data()[i * 6 + k];
                    nb += b.data()[j * 6 + k] * b.data()[j * 6 + k];
                }
                gap = std::max(gap, std::abs(dot / std::sqrt(na * nb) - s.data()[i * 4 + j]));
            }
        out.push_back(upper_bound_check("tensor.cosine_reference", scope, gap, 1e-12));
    }
    {
        const auto x = random_tensor<double>({2, 8, 8, 3}, rng);
        const auto rolled = cyclic_shift(cyclic_shift(x, -2, -2), 2, 2);
        const auto windows = window_reverse(window_partition(x, 4), 4, 2, 8, 8);
        const double gap = std::max(max_abs_diff(to_f64(x), to_f64(rolled)), max_abs_diff(to_f64(x), to_f64(windows)));
        out.push_back(upper_bound_check("tensor.roll_and_window_roundtrip", scope, gap, 0.0));
    }

    // Gradients of the individual differentiable ops.
    const FdOptions fd{1e-6, 64, 0, 1e-3, 7};
    auto op_fd = [&](const std::string& name, std::vector<Tensor<double>> inputs,
                     const std::function<Tensor<double>(const std::vector<Tensor<double>>&)>& f) {
        const auto probe = random_projection(f(inputs).shape(), rng());
        ParamList<double> params;
        for (std::size_t i = 0; i < inputs.size(); ++i)
            params.push_back({name + ".arg" + std::to_string(i), inputs[i], ParamKind::Weight});
        const auto rep = finite_diff_check([&] { return probe(f(inputs)); }, params, fd);
        out.push_back(fd_check("tensor.grad." + name, scope, rep, 1e-6));
    };
    auto rt = [&](Shape s, double lo = -1.0, double hi = 1.0) { return random_tensor<double>(std::move(s), rng, lo, hi, true); };
    op_fd("matmul", {rt({4, 5}), rt({5, 3})}, [](const auto& v) { return matmul(v[0], v[1]); });
    op_fd("bmm", {rt({2, 3, 4}), rt({2, 4, 5})}, [](const auto& v) { return bmm(v[0], v[1]); });
    op_fd("linear", {rt({6, 4}), rt({4, 3}), rt({3})}, [](const auto& v) { return linear(v[0], v[1], v[2]); });
    op_fd("softmax", {rt({3, 7}, -3, 3)}, [](const auto& v) { return softmax_lastdim(v[0]); });
    op_fd("layernorm", {rt({3, 8}, -2, 2), rt({8}), rt({8})},
          [](const auto& v) { return layernorm(v[0], v[1], v[2]); });
    op_fd("gelu", {rt({20}, -3, 3)}, [](const auto& v) { return gelu(v[0]); });
    op_fd("cosine", {rt({2, 3, 6}), rt({2, 4, 6})}, [](const auto& v) { return cosine_bmm(v[0], v[1]); });
    op_fd("temperature", {rt({4, 3, 3}), rt({2}, 0.2, 2.0)},
          [](const auto& v) { return scale_by_temperature(v[0], v[1]); });
    op_fd("cross_entropy", {rt({5, 2}, -2, 2)}, [](const auto& v) {
        const Tensor<double> targets({5, 2}, {1, 0, 0, 1, 0.3, 0.7, 0.5, 0.5, 1, 0});
        return soft_cross_entropy(v[0], targets);
    });
}

inline void encoder_checks(std::vector<CheckResult>& out) {
    const std::string scope = "encoder";
    const EncoderConfig cfg;
    {
        const auto taps = tap_shapes(cfg);
        const std::array<std::array<std::size_t, 2>, 5> want{{{8, 16}, {8, 16}, {4, 32}, {2, 64}, {2, 64}}};
        double bad = 0;
        for (std::size_t k = 0; k < 5; ++k)
            if (taps[k].side != want[k][0] || taps[k].channels != want[k][1]) bad += 1;
        Rng rng(3);
        SwinEncoder<double> enc(cfg, rng);
        NoGradGuard g;
        const auto actual = enc.encode(random_tensor<double>({1, 3, 32, 32}, rng, 0.0, 1.0));
        for (std::size_t k = 0; k < 5; ++k)
            if (actual[k].height() != want[k][0] || actual[k].width() != want[k][0] ||
                actual[k].channels() != want[k][1])
                bad += 1;
        out.push_back(upper_bound_check("encoder.tap_shapes", scope, bad, 0.0, "S1..S5 = 8x8x16 8x8x16 4x4x32 2x2x64 2x2x64"));
    }
    Rng rng(202);
    {
        PatchEmbed<double> pe(3, 4, 16, rng);
        perturb_bias(pe.proj, rng);
        perturb_norm(pe.norm, rng);
        const auto img = random_tensor<double>({2, 3, 16, 16}, rng);
        const auto got = pe.embed_image(img, 16);
        double gap = 0.0;
        for (std::size_t b = 0; b < 2; ++b) {
            const std::vector<double> one(img.data().begin() + static_cast<long>(b * 768),
                                          img.data().begin() + static_cast<long>((b + 1) * 768));
            const Grid want = reference_patch_embed(dense_of(pe.proj), norm_of(pe.norm), one, 3, 16, 4);
            gap = std::max(gap, max_abs_diff(grid_of(got.data, b).v, want.v));
        }
        out.push_back(upper_bound_check("encoder.patch_embed_reference", scope, gap, 1e-10));
    }
    for (bool shifted : {false, true}) {
        WindowAttentionParams<double> p(8, 2, 4, rng);
        perturb_attention(p, rng);
        for (auto* l : {&p.q, &p.k, &p.v, &p.proj}) perturb_bias(*l, rng);
        const auto x = random_tensor<double>({2, 8, 8, 8}, rng);
        const auto got = windowed_cosine_attention(p, x, x, x, 4, shifted);
        double gap = 0.0;
        for (std::size_t b = 0; b < 2; ++b)
            gap = std::max(gap, max_abs_diff(grid_of(got, b).v,
                                             reference_window_attention(attention_ref(p), grid_of(x, b), grid_of(x, b),
                                                                        4, shifted)
                                                 .v));
        out.push_back(upper_bound_check(shifted ? "encoder.shifted_window_attention_reference"
                                                : "encoder.window_attention_reference",
                                        scope, gap, 1e-10));
    }
    {
        PatchMerge<double> pm(8, rng);
        perturb_norm(pm.norm, rng);
        const auto x = random_tensor<double>({2, 4, 6, 8}, rng);
        const auto got = pm(x);
        double gap = 0.0;
        for (std::size_t b = 0; b < 2; ++b)
            gap = std::max(gap, max_abs_diff(grid_of(got, b).v,
                                             reference_patch_merge(dense_of(pm.reduction), norm_of(pm.norm), grid_of(x, b)).v));
        out.push_back(upper_bound_check("encoder.patch_merge_reference", scope, gap, 1e-10));
    }

    const FdOptions fd{1e-6, 64, 0, 1e-3, 11};
    {
        PatchEmbed<double> pe(3, 4, 16, rng);
        perturb_norm(pe.norm, rng);
        const auto img = random_tensor<double>({2, 3, 16, 16}, rng, 0.0, 1.0);
        const auto probe = random_projection({2, 4, 4, 16}, 12);
        ParamList<double> ps;
        pe.collect(ps, "patch_embed");
        out.push_back(fd_check("encoder.grad.patch_embed", scope,
                               finite_diff_check([&] { return probe(pe.embed_image(img, 16).data); }, ps, fd), 1e-4));
    }
    {
        WindowAttentionParams<double> p(8, 2, 4, rng);
        perturb_attention(p, rng);
        const auto x = random_tensor<double>({1, 8, 8, 8}, rng);
        const auto probe = random_projection({1, 8, 8, 8}, 13);
        ParamList<double> ps;
        p.collect(ps, "attn");
        out.push_back(fd_check("encoder.grad.window_attention", scope, finite_diff_check([&] {
                                   return probe(windowed_cosine_attention(p, x, x, x, 4, true));
                               }, ps, fd), 1e-4));
    }
    {
        PatchMerge<double> pm(8, rng);
        perturb_norm(pm.norm, rng);
        const auto x = random_tensor<double>({2, 4, 4, 8}, rng);
        const auto probe = random_projection({2, 2, 2, 16}, 14);
        ParamList<double> ps;
        pm.collect(ps, "merge");
        out.push_back(fd_check("encoder.grad.patch_merge", scope,
                               finite_diff_check([&] { return probe(pm(x)); }, ps, fd), 1e-4));
    }
}

inline void cross_checks(std::vector<CheckResult>& out, const SuiteHooks& hooks) {
    const std::string scope = "cross";
    const CrossImpl impl64 = hooks.cross ? hooks.cross : CrossImpl([](const auto& i, const auto& o, const auto& p) {
        return cross_attend(i, o, p);
    });
    out.push_back(upper_bound_check("cross.reference_f64", scope, cross_oracle_gap<double>(20, 303, impl64), 1e-10,
                                    "20 random grids, heads, windows and shift settings"));
    out.push_back(upper_bound_check(
        "cross.reference_f32", scope,
        cross_oracle_gap<float>(20, 304, [](const auto& i, const auto& o, const auto& p) { return cross_attend(i, o, p); }),
        1e-5));

    Rng rng(305);
    {
        CrossAttentionParams<double> p(16, 2, 4, true, rng);
        perturb_cross(p, rng);
        const FeatureMap<double> i{random_tensor<double>({2, 8, 8, 16}, rng), StageTag::S5};
        const FeatureMap<double> o{random_tensor<double>({2, 8, 8, 16}, rng), StageTag::S5};
        AttentionTrace<double> trace;
        cross_attend(i, o, p, &trace);
        const std::size_t n = trace.probs.dim(2);
        double gap = 0.0;
        for (std::size_t r = 0; r < trace.probs.numel() / n; ++r) {
            double total = 0.0;
            for (std::size_t j = 0; j < n; ++j) total += trace.probs.data()[r * n + j];
            gap = std::max(gap, std::abs(total - 1.0));
        }
        out.push_back(upper_bound_check("cross.row_stochastic", scope, gap, 1e-6));
    }
    {
        Rng a(306), b(306);
        CrossAttentionParams<double> with(16, 2, 4, true, a), without(16, 2, 4, false, b);
        for (auto* p : {&with, &without}) std::fill(p->attn.bias_table.data().begin(), p->attn.bias_table.data().end(), 0.0);
        const FeatureMap<double> i{Tensor<double>::full({1, 8, 8, 16}, 0.37), StageTag::S5};
        const FeatureMap<double> o{Tensor<double>::full({1, 8, 8, 16}, -0.21), StageTag::S5};
        const double gap = max_abs_diff(to_f64(cross_attend(i, o, with).data), to_f64(cross_attend(i, o, without).data));
        out.push_back(upper_bound_check("cross.shift_toggle_constant_input", scope, gap, 0.0));
    }
    {
        CrossAttentionParams<double> p(16, 2, 4, true, rng);
        perturb_cross(p, rng);
        const FeatureMap<double> i{random_tensor<double>({1, 4, 4, 16}, rng), StageTag::S5};
        const FeatureMap<double> o{random_tensor<double>({1, 4, 4, 16}, rng), StageTag::S5};
        const auto probe = random_projection({1, 4, 4, 16}, 15);
        ParamList<double> ps;
        p.collect(ps, "cross");
        out.push_back(fd_check("cross.grad.cross_attention", scope,
                               finite_diff_check([&] { return probe(cross_attend(i, o, p).data); }, ps,
                                                 FdOptions{1e-6, 64, 0, 1e-3, 16}),
                               1e-4));
    }
}

template <typename T>
std::size_t shared_tensors(const ParamList<T>& a, const ParamList<T>& b) {
    std::size_t n = 0;
    for (const auto& x : a)
        for (const auto& y : b)
            if (x.tensor.same_as(y.tensor)) ++n;
    return n;
}

inline void model_checks(std::vector<CheckResult>& out) {
    const std::string scope = "models";
    auto cfg = [](Variant v, std::size_t extra = 0) {
        auto c = default_model_config(v, extra);
        c.seed = 404;
        return c;
    };
    const RewardModel<double> io(cfg(Variant::IO_V8));
    const RewardModel<double> siamese(cfg(Variant::SIAMESE_IO));
    {
        const double shared = static_cast<double>(
            shared_tensors(io.input_encoder()->parameters("i"), io.output_encoder()->parameters("o")));
        out.push_back(upper_bound_check("models.io_v8_encoders_disjoint", scope, shared, 0.0));
        const auto si = siamese.input_encoder()->parameters("i");
        const double unshared =
            static_cast<double>(si.size() - shared_tensors(si, siamese.output_encoder()->parameters("o")));
        out.push_back(upper_bound_check("models.siamese_encoders_aliased", scope, unshared, 0.0));
        const double enc = static_cast<double>(count_parameters(io.input_encoder()->parameters()));
        const double gap = std::abs(static_cast<double>(io.parameter_count()) - enc -
                                    static_cast<double>(siamese.parameter_count()));
        out.push_back(upper_bound_check("models.siamese_count_identity", scope, gap, 0.0,
                                        "io-v8 " + std::to_string(io.parameter_count()) + ", siamese " +
                                            std::to_string(siamese.parameter_count())));
    }
    {
        std::size_t prev = RewardModel<double>(cfg(Variant::OUTPUT_BASE)).parameter_count();
        double violations = 0;
        for (std::size_t n = 1; n <= 3; ++n) {
            const std::size_t c = RewardModel<double>(cfg(Variant::OUTPUT_NLAYERS, n)).parameter_count();
            if (c <= prev) violations += 1;
            prev = c;
        }
        out.push_back(upper_bound_check("models.output_nlayers_monotone", scope, violations, 0.0));
    }
    {
        const RewardModel<double> w12(cfg(Variant::IO_W12));
        const std::vector<std::pair<StageTag, std::size_t>> want{
            {StageTag::S1, 8}, {StageTag::S2, 8}, {StageTag::S3, 16}, {StageTag::S4, 32}, {StageTag::S5, 32}};
        double bad = w12.wiring_log() == want ? 0.0 : 1.0;
        out.push_back(upper_bound_check("models.w12_wiring", scope, bad, 0.0, "S1:8 S2:8 S3:16 S4:32 S5:32"));
    }
    Rng rng(405);
    {
        const RewardModel<double> ob(cfg(Variant::OUTPUT_BASE));
        NoGradGuard g;
        const auto xo = random_tensor<double>({2, 3, 32, 32}, rng, 0.0, 1.0);
        const auto a = ob.forward(random_tensor<double>({2, 3, 32, 32}, rng, 0.0, 1.0), xo).logits;
        const auto b = ob.forward(Tensor<double>(), xo).logits;
        out.push_back(upper_bound_check("models.output_ignores_input", scope, max_abs_diff(to_f64(a), to_f64(b)), 0.0));
    }
    {
        // The loss is linear in the head weights, so a wide step is exact up to rounding.
        Linear<double> head(64, 2, rng);
        perturb_bias(head, rng);
        const auto pooled = random_tensor<double>({3, 64}, rng);
        const auto probe = random_projection({3, 2}, 17);
        ParamList<double> ps;
        head.collect(ps, "head");
        out.push_back(fd_check("models.grad.linear_head", scope,
                               finite_diff_check([&] { return probe(head(pooled)); }, ps, FdOptions{1e-3, 64, 0, 1e-3, 18}),
                               1e-10));
    }
    {
        const auto xi = random_tensor<double>({1, 3, 32, 32}, rng, 0.0, 1.0);
        const auto xo = random_tensor<double>({1, 3, 32, 32}, rng, 0.0, 1.0);
        const Tensor<double> targets({1, 2}, {0.3, 0.7});
        const auto probe = random_projection({1, 2}, 19);
        out.push_back(fd_check("models.grad.io_v8", scope, finite_diff_check([&] {
                                   const auto logits = io.forward(xi, xo).logits;
                                   return add(probe(logits), soft_cross_entropy(logits, targets));
                               }, io.parameters(), FdOptions{1e-6, 64, 0, 1e-3, 20}),
                               1e-4));
    }
}

inline void schedule_checks(std::vector<CheckResult>& out) {
    const std::string scope = "schedule";
    const TrainConfig cfg;
    const std::size_t spe = 10;
    const auto s = make_schedule(cfg, spe);
    auto rel = [](double a, double b) { return std::abs(a - b) / std::abs(b); };
    out.push_back(upper_bound_check("schedule.lr_at_start", scope, rel(lr_at(0, s), cfg.warmup_lr), 1e-12));
    out.push_back(upper_bound_check("schedule.lr_at_warmup_end", scope, rel(lr_at(s.warmup_steps, s), cfg.base_lr), 1e-12));
    out.push_back(upper_bound_check("schedule.lr_at_final_step", scope, rel(lr_at(s.final_step, s), cfg.min_lr), 1e-12));
    {
        double worst_jump = 0.0, increases_after = 0.0;
        const double max_step = (cfg.base_lr - cfg.warmup_lr) * std::numbers::pi / 2.0 / static_cast<double>(s.warmup_steps);
        for (std::size_t t = 1; t <= s.final_step; ++t) {
            const double d = lr_at(t, s) - lr_at(t - 1, s);
            worst_jump = std::max(worst_jump, std::abs(d) / max_step);
            if (t > s.warmup_steps && d > 0) increases_after += 1;
        }
        out.push_back(upper_bound_check("schedule.lr_continuity", scope, worst_jump, 1.0 + 1e-9,
                                        "largest step relative to the steepest warmup slope"));
        out.push_back(upper_bound_check("schedule.lr_monotone_decay", scope, increases_after, 0.0));
    }
    {
        // One scalar weight, two steps, against hand-expanded AdamW.
        TrainConfig c;
        c.weight_decay = 0.1;
        Tensor<double> w({1}, {0.5}, true);
        ParamList<double> ps{{"w", w, ParamKind::Weight}};
        AdamState<double> st;
        const double g[2] = {0.2, -0.4}, lr[2] = {1e-2, 5e-3};
        double x = 0.5, m = 0.0, v = 0.0;
        for (int t = 0; t < 2; ++t) {
            w.zero_grad();
            w.grad_mut()[0] = g[t];
            adamw_step(ps, st, lr[t], c);
            x *= 1.0 - lr[t] * c.weight_decay;
            m = c.beta1 * m + (1 - c.beta1) * g[t];
            v = c.beta2 * v + (1 - c.beta2) * g[t] * g[t];
            const double mh = m / (1 - std::pow(c.beta1, t + 1)), vh = v / (1 - std::pow(c.beta2, t + 1));
            x -= lr[t] * mh / (std::sqrt(vh) + c.eps);
        }
        out.push_back(upper_bound_check("schedule.adamw_hand_trace", scope, std::abs(w.data()[0] - x), 1e-12));
    }
}

} // namespace detail

inline bool in_scope(Scope want, Scope s) { return want == Scope::All || want == s; }

inline VerificationReport run_suite(Scope scope = Scope::All, const SuiteHooks& hooks = {}) {
    const auto t0 = std::chrono::steady_clock::now();
    VerificationReport rep;
    auto run = [&](Scope s, std::uint64_t seed, const auto& body) {
        if (!in_scope(scope, s)) return;
        const std::size_t first = rep.checks.size();
        body();
        for (std::size_t k = first; k < rep.checks.size(); ++k) rep.checks[k].seed = seed;
    };
    run(Scope::Tensor, 101, [&] { detail::tensor_checks(rep.checks); });
    run(Scope::Encoder, 202, [&] { detail::encoder_checks(rep.checks); });
    run(Scope::Cross, 303, [&] { detail::cross_checks(rep.checks, hooks); });
    run(Scope::Models, 404, [&] { detail::model_checks(rep.checks); });
    run(Scope::Schedule, 0, [&] { detail::schedule_checks(rep.checks); });
    rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rep;
}

} // namespace iorm::verify
