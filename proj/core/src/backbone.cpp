#include "geossl/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace geossl::model {

using nn::Var;

namespace {

constexpr double kLogitScaleCap = 4.605170185988091;  // ln(100)

struct WindowPlan {
    int win = 0, shift = 0, ph = 0, pw = 0, n_windows = 0;
    std::vector<int> gather_idx;   // window layout -> row of (x ++ zero row)
    std::vector<int> scatter_idx;  // grid cell -> row in window layout
    Tensor mask;                   // (n_windows*win^2, win^2); empty when unused
    bool need_mask = false;
};

WindowPlan make_window_plan(int h, int w, int window, bool shift_blocks) {
    WindowPlan p;
    p.win = std::min(window, std::max(h, w));
    p.shift = (shift_blocks && (p.win < h || p.win < w)) ? p.win / 2 : 0;
    p.ph = (h + p.win - 1) / p.win * p.win;
    p.pw = (w + p.win - 1) / p.win * p.win;
    const int wy = p.ph / p.win, wx = p.pw / p.win;
    p.n_windows = wy * wx;
    const int L = p.win * p.win;
    const bool padded = p.ph != h || p.pw != w;
    p.need_mask = p.shift > 0 || padded;

    p.gather_idx.resize(static_cast<size_t>(p.n_windows) * L);
    std::vector<int> region(static_cast<size_t>(p.n_windows) * L);
    const int zero_row = h * w;
    for (int wr = 0; wr < wy; ++wr)
        for (int wc = 0; wc < wx; ++wc)
            for (int r = 0; r < p.win; ++r)
                for (int c = 0; c < p.win; ++c) {
                    const int pr = wr * p.win + r, pc = wc * p.win + c;
                    const int sr = (pr + p.shift) % p.ph;
                    const int sc = (pc + p.shift) % p.pw;
                    const int row =
                        ((wr * wx + wc) * p.win + r) * p.win + c;
                    if (sr < h && sc < w) {
                        p.gather_idx[static_cast<size_t>(row)] = sr * w + sc;
                        auto slice_of = [&](int v, int extent) {
                            if (p.shift == 0) return 0;
                            if (v < extent - p.win) return 0;
                            if (v < extent - p.shift) return 1;
                            return 2;
                        };
                        region[static_cast<size_t>(row)] =
                            slice_of(sr, p.ph) * 3 + slice_of(sc, p.pw);
                    } else {
                        p.gather_idx[static_cast<size_t>(row)] = zero_row;
                        region[static_cast<size_t>(row)] = -1;
                    }
                }

    p.scatter_idx.resize(static_cast<size_t>(h) * w);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            const int pr = (r - p.shift % p.ph + p.ph) % p.ph;
            const int pc = (c - p.shift % p.pw + p.pw) % p.pw;
            const int row =
                ((pr / p.win * wx + pc / p.win) * p.win + pr % p.win) * p.win + pc % p.win;
            p.scatter_idx[static_cast<size_t>(r) * w + c] = row;
        }

    if (p.need_mask) {
        p.mask = Tensor(p.n_windows * L, L);
        for (int b = 0; b < p.n_windows; ++b)
            for (int i = 0; i < L; ++i)
                for (int j = 0; j < L; ++j) {
                    const int ri = region[static_cast<size_t>(b) * L + i];
                    const int rj = region[static_cast<size_t>(b) * L + j];
                    if (i != j && (ri != rj || ri < 0))
                        p.mask.at(b * L + i, j) = -1e9;
                }
    }
    return p;
}

struct AttnParams {
    Var wq, bq, wk, bk, wv, bv, wo, bo;
};

AttnParams attn_params(ParamCtx& P, const std::string& scope) {
    return {P(scope + "/wq"), P(scope + "/bq"), P(scope + "/wk"), P(scope + "/bk"),
            P(scope + "/wv"), P(scope + "/bv"), P(scope + "/wo"), P(scope + "/bo")};
}

Var linear(const Var& x, const Var& w, const Var& b) {
    return nn::add_rowvec(nn::matmul(x, w), b);
}

Var mlp(ParamCtx& P, const Var& x, const std::string& scope) {
    Var h = nn::gelu(linear(x, P(scope + "/w1"), P(scope + "/b1")));
    return linear(h, P(scope + "/w2"), P(scope + "/b2"));
}

Var post_norm_residual(ParamCtx& P, const Var& x, const Var& sub, const std::string& norm) {
    return nn::add(x, nn::layer_norm_rows(sub, P(norm + "/g"), P(norm + "/b")));
}

/// Standard dot-product multi-head attention over `n_blocks` independent
/// row blocks. Heads are column slices of the inner projection.
Var dot_attention(ParamCtx& P, const std::string& scope, const Var& q_in, const Var& kv_in,
                  int n_heads, int head_dim, int n_blocks, Tensor* attn_capture = nullptr) {
    AttnParams a = attn_params(P, scope);
    Var q = linear(q_in, a.wq, a.bq);
    Var k = linear(kv_in, a.wk, a.bk);
    Var v = linear(kv_in, a.wv, a.bv);
    const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
    std::vector<Var> heads;
    heads.reserve(static_cast<size_t>(n_heads));
    for (int h = 0; h < n_heads; ++h) {
        Var qh = nn::slice_cols(q, h * head_dim, (h + 1) * head_dim);
        Var kh = nn::slice_cols(k, h * head_dim, (h + 1) * head_dim);
        Var vh = nn::slice_cols(v, h * head_dim, (h + 1) * head_dim);
        Tensor cap;
        heads.push_back(nn::attention_blocks(qh, kh, vh, n_blocks, scale, nullptr, nullptr,
                                             nullptr, attn_capture ? &cap : nullptr));
        if (attn_capture) {
            if (h == 0)
                *attn_capture = cap;
            else
                attn_capture->add_(cap);
        }
    }
    if (attn_capture) attn_capture->scale_(1.0 / n_heads);
    Var cat = n_heads == 1 ? heads[0] : nn::concat_cols(heads);
    return linear(cat, a.wo, a.bo);
}

}  // namespace

void RoutingStats::merge(const RoutingStats& other) {
    if (layers.empty()) {
        layers = other.layers;
        return;
    }
    GEOSSL_CHECK(layers.size() == other.layers.size(), "routing stats layer mismatch");
    for (size_t i = 0; i < layers.size(); ++i) {
        auto& a = layers[i];
        const auto& b = other.layers[i];
        const double wa = static_cast<double>(a.tokens_total);
        const double wb = static_cast<double>(b.tokens_total);
        for (size_t e = 0; e < a.counts.size(); ++e) a.counts[e] += b.counts[e];
        if (wa + wb > 0) {
            Tensor m(1, a.mean_gate_prob.cols());
            for (int c = 0; c < m.cols(); ++c)
                m.at(0, c) = (a.mean_gate_prob.at(0, c) * wa + b.mean_gate_prob.at(0, c) * wb) /
                             (wa + wb);
            a.mean_gate_prob = m;
        }
        a.tokens_total += b.tokens_total;
        a.mean_gate_var = nullptr;  // tape handles are per-pass
    }
}

Tensor extract_patches(const float* image, int h, int w, int ch) {
    const int gh = h / 4, gw = w / 4;
    Tensor out(gh * gw, 16 * ch);
    for (int r = 0; r < gh; ++r)
        for (int c = 0; c < gw; ++c) {
            double* dst = out.data() + (static_cast<std::int64_t>(r) * gw + c) * 16 * ch;
            for (int dy = 0; dy < 4; ++dy)
                for (int dx = 0; dx < 4; ++dx) {
                    const float* src =
                        image + ((static_cast<std::int64_t>(r * 4 + dy) * w) + c * 4 + dx) * ch;
                    for (int k = 0; k < ch; ++k) dst[(dy * 4 + dx) * ch + k] = src[k];
                }
        }
    return out;
}

TokenGrid tokenize(ParamCtx& P, const float* image, int h, int w, int ch,
                   data::Modality modality, const BackboneConfig& cfg) {
    GEOSSL_CHECK(h % 4 == 0 && w % 4 == 0, "tokenize: spatial dims must be divisible by 4");
    GEOSSL_CHECK(ch == data::modality_channels(modality),
                 "tokenize: channel count does not match modality");
    const std::string scope = std::string("tok/") + data::modality_name(modality);
    Var patches = nn::constant(extract_patches(image, h, w, ch));
    TokenGrid g;
    g.tokens = linear(patches, P(scope + "/w"), P(scope + "/b"));
    g.h = h / 4;
    g.w = w / 4;
    g.stride = 4;
    g.modality = modality;
    (void)cfg;
    return g;
}

TokenGrid tokenize(ParamCtx& P, const data::ArrF& image, data::Modality modality,
                   const BackboneConfig& cfg) {
    GEOSSL_CHECK(image.shape.size() == 3, "tokenize expects (h, w, ch)");
    return tokenize(P, image.v.data(), image.dim(0), image.dim(1), image.dim(2), modality, cfg);
}

TokenGrid patch_merge(ParamCtx& P, const TokenGrid& in, int boundary, bool reduce) {
    const std::string scope = "backbone/apm" + std::to_string(boundary);
    Var w = P(scope + "/w");
    Var b = P(scope + "/b");
    const int d = in.dim();
    GEOSSL_CHECK(w->value.rows() == 4 * d, "patch merge weight does not match input dim");

    TokenGrid out = in;
    if (reduce) {
        GEOSSL_CHECK(in.h % 2 == 0 && in.w % 2 == 0,
                     "patch merge with downsampling requires even grid dims");
        const int oh = in.h / 2, ow = in.w / 2;
        std::vector<int> tl, tr, bl, br;
        tl.reserve(static_cast<size_t>(oh) * ow);
        for (int r = 0; r < oh; ++r)
            for (int c = 0; c < ow; ++c) {
                tl.push_back((2 * r) * in.w + 2 * c);
                tr.push_back((2 * r) * in.w + 2 * c + 1);
                bl.push_back((2 * r + 1) * in.w + 2 * c);
                br.push_back((2 * r + 1) * in.w + 2 * c + 1);
            }
        Var cat = nn::concat_cols({nn::gather_rows(in.tokens, tl), nn::gather_rows(in.tokens, tr),
                                   nn::gather_rows(in.tokens, bl),
                                   nn::gather_rows(in.tokens, br)});
        out.tokens = nn::add_rowvec(nn::matmul(cat, w), b);
        out.h = oh;
        out.w = ow;
        out.stride = in.stride * 2;
    } else {
        // same weight, averaged across the four input blocks
        Var wa = nn::scale(nn::add(nn::add(nn::slice_rows(w, 0, d), nn::slice_rows(w, d, 2 * d)),
                                   nn::add(nn::slice_rows(w, 2 * d, 3 * d),
                                           nn::slice_rows(w, 3 * d, 4 * d))),
                           0.25);
        out.tokens = nn::add_rowvec(nn::matmul(in.tokens, wa), b);
    }
    return out;
}

TokenGrid swin_block(ParamCtx& P, const TokenGrid& in, const std::string& scope, bool shift,
                     bool use_moe, const BackboneConfig& cfg, RoutingStats* routing) {
    const int d = in.dim();
    const int stage_heads = std::max(1, d / cfg.head_dim);
    const int head_dim = std::min(cfg.head_dim, d);
    const WindowPlan plan = make_window_plan(in.h, in.w, cfg.window, shift);
    const int L = plan.win * plan.win;

    Var zero_row = nn::constant(Tensor(1, d));
    Var padded = nn::concat_rows({in.tokens, zero_row});
    Var xw = nn::gather_rows(padded, plan.gather_idx);

    AttnParams a = attn_params(P, scope + "/attn");
    Var q = linear(xw, a.wq, a.bq);
    Var k = linear(xw, a.wk, a.bk);
    Var v = linear(xw, a.wv, a.bv);
    Var logit_scale = P(scope + "/attn/logit_scale");
    Var rpb = P(scope + "/attn/rpb");

    // relative-position index map for this window size
    std::vector<int> rel_idx(static_cast<size_t>(L) * L);
    for (int i = 0; i < L; ++i)
        for (int j = 0; j < L; ++j) {
            const int dr = i / plan.win - j / plan.win + cfg.window - 1;
            const int dc = i % plan.win - j % plan.win + cfg.window - 1;
            rel_idx[static_cast<size_t>(i) * L + j] = dr * (2 * cfg.window - 1) + dc;
        }
    Var bias_all = nn::gather_rows(rpb, rel_idx);  // (L*L x heads)

    std::vector<Var> heads;
    for (int h = 0; h < stage_heads; ++h) {
        Var qh = nn::l2_normalize_rows(nn::slice_cols(q, h * head_dim, (h + 1) * head_dim));
        Var kh = nn::l2_normalize_rows(nn::slice_cols(k, h * head_dim, (h + 1) * head_dim));
        Var vh = nn::slice_cols(v, h * head_dim, (h + 1) * head_dim);
        Var temp = nn::vexp(nn::clamp_max(nn::slice_cols(logit_scale, h, h + 1),
                                          kLogitScaleCap));
        Var bias_h = nn::reshape(nn::slice_cols(bias_all, h, h + 1), {L, L});
        heads.push_back(nn::attention_blocks(qh, kh, vh, plan.n_windows, 1.0, temp, bias_h,
                                             plan.need_mask ? &plan.mask : nullptr));
    }
    Var cat = stage_heads == 1 ? heads[0] : nn::concat_cols(heads);
    Var attn_out_win = linear(cat, a.wo, a.bo);
    Var attn_out = nn::gather_rows(attn_out_win, plan.scatter_idx);

    Var x = post_norm_residual(P, in.tokens, attn_out, scope + "/n1");

    Var ffn_out;
    if (use_moe) {
        RoutingLayerStats stats;
        ffn_out = moe_ffn(P, x, scope, cfg.n_experts, cfg.top_k,
                          std::max(1, static_cast<int>(std::lround(d * cfg.mlp_ratio))),
                          &stats);
        if (routing) routing->layers.push_back(std::move(stats));
    } else {
        ffn_out = mlp(P, x, scope + "/m");
    }
    x = post_norm_residual(P, x, ffn_out, scope + "/n2");

    TokenGrid out = in;
    out.tokens = x;
    return out;
}

nn::Var transformer_block(ParamCtx& P, const Var& tokens, const std::string& scope,
                          int n_heads, int head_dim, bool use_moe, const BackboneConfig& cfg,
                          RoutingStats* routing) {
    Var h1 = nn::layer_norm_rows(tokens, P(scope + "/n1/g"), P(scope + "/n1/b"));
    Var attn = dot_attention(P, scope + "/attn", h1, h1, n_heads, head_dim, 1);
    Var x = nn::add(tokens, attn);

    Var h2 = nn::layer_norm_rows(x, P(scope + "/n2/g"), P(scope + "/n2/b"));
    Var ffn_out;
    if (use_moe) {
        RoutingLayerStats stats;
        const int d = tokens->value.cols();
        ffn_out = moe_ffn(P, h2, scope, cfg.n_experts, cfg.top_k,
                          std::max(1, static_cast<int>(std::lround(d * cfg.mlp_ratio))),
                          &stats);
        if (routing) routing->layers.push_back(std::move(stats));
    } else {
        ffn_out = mlp(P, h2, scope + "/m");
    }
    return nn::add(x, ffn_out);
}

nn::Var moe_ffn(ParamCtx& P, const Var& x, const std::string& scope, int n_experts, int top_k,
                int hidden, RoutingLayerStats* stats) {
    GEOSSL_CHECK(top_k >= 1 && top_k <= n_experts, "top_k must lie in [1, n_experts]");
    const int n = x->value.rows();
    Var probs = nn::softmax_rows(linear(x, P(scope + "/gate/w"), P(scope + "/gate/b")));

    // top-k expert ids per token; ties resolved to the lowest index
    std::vector<std::vector<int>> selections(static_cast<size_t>(n));
    for (int r = 0; r < n; ++r) {
        std::vector<int> order(static_cast<size_t>(n_experts));
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
            const double pa = probs->value.at(r, a), pb = probs->value.at(r, b);
            if (pa != pb) return pa > pb;
            return a < b;
        });
        selections[static_cast<size_t>(r)].assign(order.begin(), order.begin() + top_k);
    }

    if (stats) {
        stats->counts.assign(static_cast<size_t>(n_experts), 0);
        stats->tokens_total = n;
        stats->top_k = top_k;
        stats->mean_gate_var = nn::scale(nn::col_sum(probs), 1.0 / n);
        stats->mean_gate_prob = stats->mean_gate_var->value;
    }

    Var out;
    for (int rank = 0; rank < top_k; ++rank) {
        std::vector<std::vector<int>> rows_of(static_cast<size_t>(n_experts));
        for (int r = 0; r < n; ++r) {
            const int e = selections[static_cast<size_t>(r)][static_cast<size_t>(rank)];
            rows_of[static_cast<size_t>(e)].push_back(r);
            if (stats) stats->counts[static_cast<size_t>(e)]++;
        }
        std::vector<Var> chunks;
        std::vector<int> restore(static_cast<size_t>(n));
        int pos = 0;
        for (int e = 0; e < n_experts; ++e) {
            const auto& rows = rows_of[static_cast<size_t>(e)];
            if (rows.empty()) continue;
            for (int r : rows) restore[static_cast<size_t>(r)] = pos++;
            Var xe = nn::gather_rows(x, rows);
            const std::string es = scope + "/e" + std::to_string(e);
            Var he = nn::gelu(linear(xe, P(es + "/w1"), P(es + "/b1")));
            Var oe = linear(he, P(es + "/w2"), P(es + "/b2"));
            Var ge = nn::slice_cols(nn::gather_rows(probs, rows), e, e + 1);
            chunks.push_back(nn::scale_rows(oe, ge));
        }
        Var ranked = nn::gather_rows(nn::concat_rows(chunks), restore);
        out = out ? nn::add(out, ranked) : ranked;
    }
    (void)hidden;
    return out;
}

BackboneOut forward_backbone(ParamCtx& P, const float* image, int h, int w, int ch,
                             data::Modality modality, const BackboneConfig& cfg) {
    BackboneOut out;
    TokenGrid g = tokenize(P, image, h, w, ch, modality, cfg);
    const auto& merge = cfg.merge_flags(modality);
    const int total = cfg.total_blocks();
    int block_idx = 0;
    for (int stage = 0; stage < 4; ++stage) {
        if (stage > 0)
            g = patch_merge(P, g, stage + 1, merge[static_cast<size_t>(stage - 1)]);
        const int depth = cfg.depths[static_cast<size_t>(stage)];
        if (stage < 2) {
            for (int b = 0; b < depth; ++b, ++block_idx) {
                const std::string scope =
                    "backbone/s" + std::to_string(stage + 1) + "/b" + std::to_string(b);
                g = swin_block(P, g, scope, b % 2 == 1, block_idx >= total - cfg.moe_last,
                               cfg, &out.routing);
            }
        } else {
            Var prompts = P("backbone/prompt/s" + std::to_string(stage + 1) + "/" +
                            data::modality_name(modality));
            Var toks = nn::concat_rows({prompts, g.tokens});
            const int n_heads = cfg.n_heads(stage);
            const int head_dim = std::min(cfg.head_dim, g.dim());
            for (int b = 0; b < depth; ++b, ++block_idx) {
                const std::string scope =
                    "backbone/s" + std::to_string(stage + 1) + "/b" + std::to_string(b);
                toks = transformer_block(P, toks, scope, n_heads, head_dim,
                                         block_idx >= total - cfg.moe_last, cfg, &out.routing);
            }
            // prompt tokens are dropped at the end of the stage
            g.tokens = nn::slice_rows(toks, cfg.n_prompts, cfg.n_prompts + g.count());
        }
        out.stages.push_back(g);
    }
    out.final = g;
    return out;
}

BackboneOut forward_backbone(ParamCtx& P, const data::ArrF& image, data::Modality modality,
                             const BackboneConfig& cfg) {
    GEOSSL_CHECK(image.shape.size() == 3, "forward_backbone expects (h, w, ch)");
    return forward_backbone(P, image.v.data(), image.dim(0), image.dim(1), image.dim(2),
                            modality, cfg);
}

}  // namespace geossl::model
