#include "doctest.h"

#include "geossl/backbone.hpp"
#include "geossl/objectives.hpp"

#include <cmath>
#include <set>

using namespace geossl;
using namespace geossl::model;

namespace {

FullConfig tiny_config() {
    FullConfig cfg;
    cfg.backbone.base_dim = 8;
    cfg.backbone.depths = {1, 1, 1, 1};
    cfg.backbone.window = 4;
    cfg.backbone.head_dim = 8;
    cfg.backbone.mlp_ratio = 2.0;
    cfg.backbone.n_prompts = 2;
    cfg.backbone.moe_last = 1;
    cfg.backbone.n_experts = 2;
    cfg.backbone.top_k = 1;
    cfg.fusion.depth = 1;
    cfg.fusion.n_heads = 1;
    cfg.gcpl.n_prototypes = 2;
    cfg.objectives.head.hidden = 8;
    cfg.objectives.head.out = 6;
    cfg.objectives.n_queries = 2;
    cfg.objectives.query_heads = 1;
    cfg.objectives.text_dim = 8;
    cfg.objectives.n_clusters = 2;
    return cfg;
}

data::ArrF random_image(Rng& rng, int h, int w, int ch) {
    data::ArrF img({h, w, ch});
    for (auto& v : img.v) v = static_cast<float>(rng.uniform());
    return img;
}

}  // namespace

TEST_CASE("tokenize: shapes, single patch, matmul oracle") {
    FullConfig cfg = tiny_config();
    ModelState ms = build_model_state(cfg, 1);
    Rng rng(2);

    {
        ParamCtx P(ms, "", false);
        data::ArrF img = random_image(rng, 16, 24, 3);
        TokenGrid g = tokenize(P, img, data::Modality::HR, cfg.backbone);
        CHECK(g.h == 4);
        CHECK(g.w == 6);
        CHECK(g.stride == 4);
        CHECK(g.dim() == cfg.backbone.base_dim);
    }
    {
        ParamCtx P(ms, "", false);
        data::ArrF img = random_image(rng, 4, 4, 10);
        TokenGrid g = tokenize(P, img, data::Modality::MS, cfg.backbone);
        CHECK(g.h == 1);
        CHECK(g.w == 1);
    }
    {
        // explicit patch-flatten x matrix product oracle
        ParamCtx P(ms, "", false);
        data::ArrF img = random_image(rng, 8, 8, 3);
        TokenGrid g = tokenize(P, img, data::Modality::HR, cfg.backbone);
        const Param& w = ms.at("tok/hr/w");
        const Param& b = ms.at("tok/hr/b");
        Tensor patches = extract_patches(img.v.data(), 8, 8, 3);
        for (int tok = 0; tok < 4; ++tok)
            for (int c = 0; c < cfg.backbone.base_dim; ++c) {
                double acc = static_cast<double>(b.data[static_cast<size_t>(c)]);
                for (int i = 0; i < 48; ++i)
                    acc += patches.at(tok, i) *
                           static_cast<double>(
                               w.data[static_cast<size_t>(i) * cfg.backbone.base_dim + c]);
                CHECK(std::fabs(nn::val(g.tokens).at(tok, c) - acc) < 1e-12);
            }
    }
    {
        ParamCtx P(ms, "", false);
        data::ArrF img = random_image(rng, 8, 8, 5);
        CHECK_THROWS(tokenize(P, img, data::Modality::HR, cfg.backbone));
        data::ArrF odd = random_image(rng, 6, 8, 3);
        CHECK_THROWS(tokenize(P, odd, data::Modality::HR, cfg.backbone));
    }
}

TEST_CASE("patch merge: downsampling, width-only, averaged-weight identity") {
    FullConfig cfg = tiny_config();
    ModelState ms = build_model_state(cfg, 3);
    Rng rng(5);

    ParamCtx P(ms, "", false);
    TokenGrid g;
    g.h = g.w = 4;
    g.stride = 4;
    Tensor toks(16, cfg.backbone.base_dim);
    for (std::int64_t i = 0; i < toks.numel(); ++i) toks[i] = rng.uniform(-1, 1);
    g.tokens = nn::constant(toks);

    TokenGrid merged = patch_merge(P, g, 2, true);
    CHECK(merged.h == 2);
    CHECK(merged.w == 2);
    CHECK(merged.dim() == 2 * cfg.backbone.base_dim);
    CHECK(merged.stride == 8);

    TokenGrid kept = patch_merge(P, g, 2, false);
    CHECK(kept.h == 4);
    CHECK(kept.w == 4);
    CHECK(kept.dim() == 2 * cfg.backbone.base_dim);
    CHECK(kept.stride == 4);

    // constant 2x2 blocks + zero bias: merged output = 4 x width-only output
    ms.at("backbone/apm2/b").data.assign(ms.at("backbone/apm2/b").data.size(), 0.f);
    ParamCtx P2(ms, "", false);
    Tensor block(16, cfg.backbone.base_dim);
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c)
            for (int k = 0; k < cfg.backbone.base_dim; ++k)
                block.at(r * 4 + c, k) =
                    0.1 * (r / 2) + 0.3 * (c / 2) + 0.01 * k;  // constant within 2x2
    TokenGrid gb = g;
    gb.tokens = nn::constant(block);
    Tensor m = nn::val(patch_merge(P2, gb, 2, true).tokens);
    Tensor u = nn::val(patch_merge(P2, gb, 2, false).tokens);
    for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 2; ++c)
            for (int k = 0; k < 2 * cfg.backbone.base_dim; ++k)
                CHECK(m.at(r * 2 + c, k) ==
                      doctest::Approx(4.0 * u.at((2 * r) * 4 + 2 * c, k)).epsilon(1e-12));

    TokenGrid odd;
    odd.h = 3;
    odd.w = 4;
    odd.tokens = nn::constant(Tensor(12, cfg.backbone.base_dim));
    CHECK_THROWS(patch_merge(P, odd, 2, true));
}

TEST_CASE("swin block preserves shape; window >= grid equals global attention") {
    FullConfig cfg = tiny_config();
    ModelState ms = build_model_state(cfg, 7);
    Rng rng(11);

    TokenGrid g;
    g.h = g.w = 4;
    Tensor toks(16, cfg.backbone.base_dim);
    for (std::int64_t i = 0; i < toks.numel(); ++i) toks[i] = rng.uniform(-1, 1);
    g.tokens = nn::constant(toks);

    ParamCtx P(ms, "", false);
    TokenGrid out = swin_block(P, g, "backbone/s1/b0", false, false, cfg.backbone, nullptr);
    CHECK(out.h == 4);
    CHECK(out.w == 4);
    CHECK(nn::val(out.tokens).rows() == 16);
    CHECK(nn::val(out.tokens).cols() == cfg.backbone.base_dim);

    // window (4) covers the whole 4x4 grid: shifted == unshifted == global
    ParamCtx P2(ms, "", false);
    TokenGrid shifted = swin_block(P2, g, "backbone/s1/b0", true, false, cfg.backbone, nullptr);
    for (std::int64_t i = 0; i < 16 * cfg.backbone.base_dim; ++i)
        CHECK(nn::val(out.tokens)[i] == doctest::Approx(nn::val(shifted.tokens)[i]).epsilon(1e-12));
}

TEST_CASE("swin window attention matches a brute-force cosine-attention oracle") {
    FullConfig cfg = tiny_config();
    cfg.backbone.window = 2;
    ModelState ms = build_model_state(cfg, 13);
    Rng rng(17);
    const int d = cfg.backbone.base_dim;

    TokenGrid g;
    g.h = g.w = 4;
    Tensor toks(16, d);
    for (std::int64_t i = 0; i < toks.numel(); ++i) toks[i] = rng.uniform(-1, 1);
    g.tokens = nn::constant(toks);

    ParamCtx P(ms, "", false);
    TokenGrid out = swin_block(P, g, "backbone/s1/b0", false, false, cfg.backbone, nullptr);

    // independent oracle: per 2x2 window, explicit cosine attention + rpb,
    // then the shared post-norm residual + MLP
    auto getp = [&](const std::string& n) { return ms.at(n).as_tensor(); };
    const Tensor wq = getp("backbone/s1/b0/attn/wq"), bq = getp("backbone/s1/b0/attn/bq");
    const Tensor wk = getp("backbone/s1/b0/attn/wk"), bk = getp("backbone/s1/b0/attn/bk");
    const Tensor wv = getp("backbone/s1/b0/attn/wv"), bv = getp("backbone/s1/b0/attn/bv");
    const Tensor wo = getp("backbone/s1/b0/attn/wo"), bo = getp("backbone/s1/b0/attn/bo");
    const double temp = std::exp(getp("backbone/s1/b0/attn/logit_scale")[0]);
    const Tensor rpb = getp("backbone/s1/b0/attn/rpb");

    auto apply = [&](const Tensor& w, const Tensor& b, const Tensor& x) {
        Tensor y = matmul(x, w);
        for (int r = 0; r < y.rows(); ++r)
            for (int c = 0; c < y.cols(); ++c) y.at(r, c) += b.at(0, c);
        return y;
    };
    Tensor q = apply(wq, bq, toks), k = apply(wk, bk, toks), v = apply(wv, bv, toks);
    auto l2n = [&](Tensor m) {
        for (int r = 0; r < m.rows(); ++r) {
            double s = 0;
            for (int c = 0; c < m.cols(); ++c) s += m.at(r, c) * m.at(r, c);
            const double inv = 1.0 / std::sqrt(s + 1e-12);
            for (int c = 0; c < m.cols(); ++c) m.at(r, c) *= inv;
        }
        return m;
    };
    Tensor qn = l2n(q), kn = l2n(k);

    Tensor attn_out(16, d);
    for (int wr = 0; wr < 2; ++wr)
        for (int wc = 0; wc < 2; ++wc) {
            int cells[4];
            int ci = 0;
            for (int r = 0; r < 2; ++r)
                for (int c = 0; c < 2; ++c) cells[ci++] = (wr * 2 + r) * 4 + (wc * 2 + c);
            for (int i = 0; i < 4; ++i) {
                double logits[4];
                double mx = -1e300;
                for (int j = 0; j < 4; ++j) {
                    double dot = 0;
                    for (int c = 0; c < d; ++c)
                        dot += qn.at(cells[i], c) * kn.at(cells[j], c);
                    const int dr = i / 2 - j / 2 + cfg.backbone.window - 1;
                    const int dc = i % 2 - j % 2 + cfg.backbone.window - 1;
                    logits[j] = dot * temp + rpb[dr * (2 * cfg.backbone.window - 1) + dc];
                    mx = std::max(mx, logits[j]);
                }
                double z = 0;
                for (int j = 0; j < 4; ++j) {
                    logits[j] = std::exp(logits[j] - mx);
                    z += logits[j];
                }
                for (int c = 0; c < d; ++c) {
                    double acc = 0;
                    for (int j = 0; j < 4; ++j)
                        acc += logits[j] / z * v.at(cells[j], c);
                    attn_out.at(cells[i], c) = acc;
                }
            }
        }
    Tensor proj = apply(wo, bo, attn_out);

    // post-norm residual
    const Tensor n1g = getp("backbone/s1/b0/n1/g"), n1b = getp("backbone/s1/b0/n1/b");
    const Tensor n2g = getp("backbone/s1/b0/n2/g"), n2b = getp("backbone/s1/b0/n2/b");
    auto layernorm = [&](const Tensor& x, const Tensor& gmm, const Tensor& bta) {
        Tensor y = x;
        for (int r = 0; r < x.rows(); ++r) {
            double mu = 0;
            for (int c = 0; c < x.cols(); ++c) mu += x.at(r, c);
            mu /= x.cols();
            double var = 0;
            for (int c = 0; c < x.cols(); ++c) {
                const double t = x.at(r, c) - mu;
                var += t * t;
            }
            var /= x.cols();
            const double inv = 1.0 / std::sqrt(var + 1e-6);
            for (int c = 0; c < x.cols(); ++c)
                y.at(r, c) = (x.at(r, c) - mu) * inv * gmm.at(0, c) + bta.at(0, c);
        }
        return y;
    };
    Tensor x1 = toks;
    Tensor pn = layernorm(proj, n1g, n1b);
    for (std::int64_t i = 0; i < x1.numel(); ++i) x1[i] += pn[i];

    const Tensor w1 = getp("backbone/s1/b0/m/w1"), b1 = getp("backbone/s1/b0/m/b1");
    const Tensor w2 = getp("backbone/s1/b0/m/w2"), b2 = getp("backbone/s1/b0/m/b2");
    Tensor hmid = apply(w1, b1, x1);
    for (std::int64_t i = 0; i < hmid.numel(); ++i)
        hmid[i] = 0.5 * hmid[i] * (1.0 + std::erf(hmid[i] * 0.70710678118654752440));
    Tensor mo = apply(w2, b2, hmid);
    Tensor x2 = x1;
    Tensor mn = layernorm(mo, n2g, n2b);
    for (std::int64_t i = 0; i < x2.numel(); ++i) x2[i] += mn[i];

    for (std::int64_t i = 0; i < x2.numel(); ++i)
        CHECK(nn::val(out.tokens)[i] == doctest::Approx(x2[i]).epsilon(1e-10));
}

TEST_CASE("transformer block: prompt count, residual identity, attention oracle") {
    FullConfig cfg = tiny_config();
    ModelState ms = build_model_state(cfg, 21);
    Rng rng(23);

    // 16 grid tokens + 2 prompts -> 18 tokens out (count preserved)
    {
        ParamCtx P(ms, "", false);
        const int dim = cfg.backbone.stage_dim(2);
        Tensor toks(16 + cfg.backbone.n_prompts, dim);
        for (std::int64_t i = 0; i < toks.numel(); ++i) toks[i] = rng.uniform(-1, 1);
        nn::Var out = transformer_block(P, nn::constant(toks), "backbone/s3/b0",
                                        cfg.backbone.n_heads(2),
                                        std::min(cfg.backbone.head_dim, dim), false,
                                        cfg.backbone, nullptr);
        CHECK(nn::val(out).rows() == 16 + cfg.backbone.n_prompts);
        CHECK(nn::val(out).cols() == dim);
    }

    // zero attention-out and MLP-out weights -> identity map
    {
        ModelState z = build_model_state(cfg, 22);
        z.at("backbone/s3/b0/attn/wo").data.assign(z.at("backbone/s3/b0/attn/wo").data.size(), 0.f);
        z.at("backbone/s3/b0/attn/bo").data.assign(z.at("backbone/s3/b0/attn/bo").data.size(), 0.f);
        z.at("backbone/s3/b0/m/w2").data.assign(z.at("backbone/s3/b0/m/w2").data.size(), 0.f);
        z.at("backbone/s3/b0/m/b2").data.assign(z.at("backbone/s3/b0/m/b2").data.size(), 0.f);
        ParamCtx P(z, "", false);
        const int dim = cfg.backbone.stage_dim(2);
        Tensor toks(5, dim);
        for (std::int64_t i = 0; i < toks.numel(); ++i) toks[i] = rng.uniform(-1, 1);
        nn::Var out = transformer_block(P, nn::constant(toks), "backbone/s3/b0",
                                        cfg.backbone.n_heads(2),
                                        std::min(cfg.backbone.head_dim, dim), false,
                                        cfg.backbone, nullptr);
        for (std::int64_t i = 0; i < toks.numel(); ++i)
            CHECK(nn::val(out)[i] == doctest::Approx(toks[i]).epsilon(1e-12));
    }
}

TEST_CASE("moe_ffn: uniform gate tie-break, gate-scaled output, small-case oracle") {
    FullConfig cfg = tiny_config();
    ModelState ms = build_model_state(cfg, 31);
    const int dim = cfg.backbone.stage_dim(3);
    const std::string scope = "backbone/s4/b0";
    Rng rng(37);

    // zero gate weights: uniform probabilities, expert 0 wins the tie
    {
        ModelState z = build_model_state(cfg, 31);
        z.at(scope + "/gate/w").data.assign(z.at(scope + "/gate/w").data.size(), 0.f);
        z.at(scope + "/gate/b").data.assign(z.at(scope + "/gate/b").data.size(), 0.f);
        ParamCtx P(z, "", false);
        Tensor x(3, dim);
        for (std::int64_t i = 0; i < x.numel(); ++i) x[i] = rng.uniform(-1, 1);
        RoutingLayerStats stats;
        moe_ffn(P, nn::constant(x), scope, cfg.backbone.n_experts, 1, 0, &stats);
        CHECK(stats.counts[0] == 3);
        CHECK(stats.counts[1] == 0);
        for (int e = 0; e < cfg.backbone.n_experts; ++e)
            CHECK(stats.mean_gate_prob.at(0, e) ==
                  doctest::Approx(1.0 / cfg.backbone.n_experts).epsilon(1e-12));
    }

    // output equals the selected expert's output scaled by its gate value
    {
        ParamCtx P(ms, "", false);
        Tensor x(4, dim);
        for (std::int64_t i = 0; i < x.numel(); ++i) x[i] = rng.uniform(-1, 1);
        RoutingLayerStats stats;
        nn::Var out = moe_ffn(P, nn::constant(x), scope, cfg.backbone.n_experts, 1, 0, &stats);

        // oracle: dense per-token computation
        auto getp = [&](const std::string& n) { return ms.at(n).as_tensor(); };
        Tensor gw = getp(scope + "/gate/w"), gb = getp(scope + "/gate/b");
        std::int64_t total_routed = 0;
        for (size_t e = 0; e < stats.counts.size(); ++e) total_routed += stats.counts[e];
        CHECK(total_routed == stats.tokens_total * stats.top_k);
        double prob_sum = 0;
        for (int e = 0; e < cfg.backbone.n_experts; ++e)
            prob_sum += stats.mean_gate_prob.at(0, e);
        CHECK(prob_sum == doctest::Approx(1.0).epsilon(1e-9));

        for (int r = 0; r < 4; ++r) {
            double logits[8];
            double mx = -1e300;
            for (int e = 0; e < cfg.backbone.n_experts; ++e) {
                double acc = gb.at(0, e);
                for (int c = 0; c < dim; ++c) acc += x.at(r, c) * gw.at(c, e);
                logits[e] = acc;
                mx = std::max(mx, acc);
            }
            double z = 0;
            int best = 0;
            for (int e = 0; e < cfg.backbone.n_experts; ++e) {
                logits[e] = std::exp(logits[e] - mx);
                z += logits[e];
                if (logits[e] > logits[best]) best = e;
            }
            const double p_star = logits[best] / z;

            const std::string es = scope + "/e" + std::to_string(best);
            Tensor w1 = getp(es + "/w1"), b1 = getp(es + "/b1");
            Tensor w2 = getp(es + "/w2"), b2 = getp(es + "/b2");
            const int hidden = w1.cols();
            std::vector<double> hbuf(static_cast<size_t>(hidden));
            for (int c = 0; c < hidden; ++c) {
                double acc = b1.at(0, c);
                for (int i = 0; i < dim; ++i) acc += x.at(r, i) * w1.at(i, c);
                hbuf[static_cast<size_t>(c)] =
                    0.5 * acc * (1.0 + std::erf(acc * 0.70710678118654752440));
            }
            for (int c = 0; c < dim; ++c) {
                double acc = b2.at(0, c);
                for (int i = 0; i < hidden; ++i) acc += hbuf[static_cast<size_t>(i)] * w2.at(i, c);
                CHECK(nn::val(out).at(r, c) == doctest::Approx(p_star * acc).epsilon(1e-9));
            }
        }
    }
}

TEST_CASE("forward_backbone shapes: merge presets and prompt discard") {
    FullConfig cfg = tiny_config();
    ModelState ms = build_model_state(cfg, 41);
    Rng rng(43);

    // HR with all merges: 64 px -> stage-1 grid 16 -> final 2; dims 8c
    {
        ParamCtx P(ms, "", false);
        data::ArrF img = random_image(rng, 64, 64, 3);
        BackboneOut out = forward_backbone(P, img, data::Modality::HR, cfg.backbone);
        CHECK(out.final.h == 2);
        CHECK(out.final.w == 2);
        CHECK(out.final.dim() == 8 * cfg.backbone.base_dim);
        CHECK(out.final.stride == 32);
        CHECK(out.stages.size() == 4);
        CHECK(nn::val(out.final.tokens).rows() == 4);  // prompts dropped
        CHECK(out.routing.layers.size() == 1);         // moe_last = 1
    }
    // MS without merges: resolution preserved at stride 4
    {
        ParamCtx P(ms, "", false);
        data::ArrF img = random_image(rng, 8, 8, 10);
        BackboneOut out = forward_backbone(P, img, data::Modality::MS, cfg.backbone);
        CHECK(out.final.h == 2);
        CHECK(out.final.w == 2);
        CHECK(out.final.stride == 4);
        CHECK(out.final.dim() == 8 * cfg.backbone.base_dim);
    }
}

TEST_CASE("backbone parameters are shared across modalities except tokenizers and prompts") {
    FullConfig cfg = tiny_config();
    ModelState ms = build_model_state(cfg, 51);
    Rng rng(53);

    auto touched = [&](data::Modality m, int size, int ch) {
        ParamCtx P(ms, "", false);
        std::set<std::string> log;
        P.set_access_log(&log);
        data::ArrF img = random_image(rng, size, size, ch);
        forward_backbone(P, img, m, cfg.backbone);
        return log;
    };
    std::set<std::string> hr = touched(data::Modality::HR, 32, 3);
    std::set<std::string> msod = touched(data::Modality::MS, 8, 10);

    std::set<std::string> only_hr, only_ms;
    std::set_difference(hr.begin(), hr.end(), msod.begin(), msod.end(),
                        std::inserter(only_hr, only_hr.begin()));
    std::set_difference(msod.begin(), msod.end(), hr.begin(), hr.end(),
                        std::inserter(only_ms, only_ms.begin()));
    for (const auto& n : only_hr) {
        const bool tokenizer_or_prompt =
            n.rfind("tok/", 0) == 0 || n.find("/prompt/") != std::string::npos;
        CHECK_MESSAGE(tokenizer_or_prompt, "unexpected HR-only parameter: ", n);
    }
    for (const auto& n : only_ms) {
        const bool tokenizer_or_prompt =
            n.rfind("tok/", 0) == 0 || n.find("/prompt/") != std::string::npos;
        CHECK_MESSAGE(tokenizer_or_prompt, "unexpected MS-only parameter: ", n);
    }
}

TEST_CASE("moe aux loss: forced uniform and forced single-expert routing") {
    RoutingStats stats;
    RoutingLayerStats layer;
    const int m = 4;
    layer.counts = {25, 25, 25, 25};
    layer.tokens_total = 100;
    layer.top_k = 1;
    layer.mean_gate_prob = Tensor(1, m);
    for (int e = 0; e < m; ++e) layer.mean_gate_prob.at(0, e) = 0.25;
    stats.layers.push_back(layer);
    CHECK(moe_aux_loss(stats) == doctest::Approx(1.0).epsilon(1e-12));

    stats.layers[0].counts = {100, 0, 0, 0};
    stats.layers[0].mean_gate_prob.fill(0);
    stats.layers[0].mean_gate_prob.at(0, 0) = 1.0;
    CHECK(moe_aux_loss(stats) == doctest::Approx(4.0).epsilon(1e-12));

    // two-expert hand case
    RoutingStats two;
    RoutingLayerStats l2;
    l2.counts = {3, 1};
    l2.tokens_total = 4;
    l2.top_k = 1;
    l2.mean_gate_prob = Tensor(1, 2);
    l2.mean_gate_prob.at(0, 0) = 0.6;
    l2.mean_gate_prob.at(0, 1) = 0.4;
    two.layers.push_back(l2);
    CHECK(moe_aux_loss(two) == doctest::Approx(2.0 * (0.75 * 0.6 + 0.25 * 0.4)).epsilon(1e-12));
}
