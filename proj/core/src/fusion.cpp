#include "geossl/fusion.hpp"

#include <cmath>

namespace geossl::model {

using nn::Var;

namespace {
constexpr double kTwoPi = 6.283185307179586476925286766559;

Var linear(const Var& x, const Var& w, const Var& b) {
    return nn::add_rowvec(nn::matmul(x, w), b);
}
}  // namespace

Tensor day_encoding(double day, int d) {
    Tensor enc(1, d);
    const double phase = kTwoPi * day / 365.0;
    for (int i = 0; i < d / 2; ++i) {
        enc.at(0, 2 * i) = std::sin(phase * (i + 1));
        enc.at(0, 2 * i + 1) = std::cos(phase * (i + 1));
    }
    return enc;
}

FusedFeature fuse(ParamCtx& P, const std::vector<ModalitySequence>& seqs,
                  const FusionConfig& cfg) {
    GEOSSL_CHECK(!seqs.empty(), "fuse: at least one modality required");
    const int h = seqs[0].frames.at(0).h, w = seqs[0].frames.at(0).w;
    const int d = seqs[0].frames[0].dim();
    const int n = h * w;

    FusedFeature out;
    out.h = h;
    out.w = w;

    std::vector<Var> frame_major;
    int total_t = 0;
    Var day_scale = P("fusion/day_scale");
    for (const auto& seq : seqs) {
        GEOSSL_CHECK(seq.frames.size() == seq.days.size(),
                     "fuse: one acquisition day per frame required");
        Var embed = P(std::string("fusion/embed/") + data::modality_name(seq.modality));
        for (size_t t = 0; t < seq.frames.size(); ++t) {
            const TokenGrid& f = seq.frames[t];
            GEOSSL_CHECK(f.h == h && f.w == w,
                         "fuse: modality grids disagree on spatial shape");
            GEOSSL_CHECK(f.dim() == d, "fuse: modality grids disagree on width");
            Var enc = nn::scale_by(nn::constant(day_encoding(seq.days[t], d)), day_scale);
            frame_major.push_back(nn::add_rowvec(f.tokens, nn::add(embed, enc)));
            ++total_t;
        }
        out.modalities.push_back(seq.modality);
        out.temporal_lengths.push_back(static_cast<int>(seq.frames.size()));
    }

    // regroup frame-major rows (t*n + loc) into location-major (loc*T + t)
    Var cat = nn::concat_rows(frame_major);
    std::vector<int> perm(static_cast<size_t>(n) * total_t);
    for (int loc = 0; loc < n; ++loc)
        for (int t = 0; t < total_t; ++t)
            perm[static_cast<size_t>(loc) * total_t + t] = t * n + loc;
    Var x = nn::gather_rows(cat, perm);

    const int head_dim = std::min(cfg.head_dim, d);
    const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
    for (int l = 0; l < cfg.depth; ++l) {
        const std::string scope = "fusion/l" + std::to_string(l);
        Var h1 = nn::layer_norm_rows(x, P(scope + "/n1/g"), P(scope + "/n1/b"));
        Var q = linear(h1, P(scope + "/attn/wq"), P(scope + "/attn/bq"));
        Var k = linear(h1, P(scope + "/attn/wk"), P(scope + "/attn/bk"));
        Var v = linear(h1, P(scope + "/attn/wv"), P(scope + "/attn/bv"));
        std::vector<Var> heads;
        for (int hh = 0; hh < cfg.n_heads; ++hh) {
            Var qh = nn::slice_cols(q, hh * head_dim, (hh + 1) * head_dim);
            Var kh = nn::slice_cols(k, hh * head_dim, (hh + 1) * head_dim);
            Var vh = nn::slice_cols(v, hh * head_dim, (hh + 1) * head_dim);
            heads.push_back(nn::attention_blocks(qh, kh, vh, n, scale));
        }
        Var cat_h = cfg.n_heads == 1 ? heads[0] : nn::concat_cols(heads);
        Var attn = linear(cat_h, P(scope + "/attn/wo"), P(scope + "/attn/bo"));
        x = nn::add(x, attn);
        Var h2 = nn::layer_norm_rows(x, P(scope + "/n2/g"), P(scope + "/n2/b"));
        Var m = nn::gelu(linear(h2, P(scope + "/m/w1"), P(scope + "/m/b1")));
        m = linear(m, P(scope + "/m/w2"), P(scope + "/m/b2"));
        x = nn::add(x, m);
    }

    out.data = nn::avgpool_grid(x, n, total_t, 1, total_t);
    return out;
}

int region_index(double lon, double lat, const GcplConfig& cfg) {
    GEOSSL_CHECK(lon >= -180.0 && lon < 180.0, "region_index: lon out of range");
    GEOSSL_CHECK(lat >= -90.0 && lat < 90.0, "region_index: lat out of range");
    const int col = static_cast<int>((lon + 180.0) / 360.0 * cfg.cols);
    const int row = static_cast<int>((lat + 90.0) / 180.0 * cfg.rows);
    return std::min(row, cfg.rows - 1) * cfg.cols + std::min(col, cfg.cols - 1);
}

Tensor sinkhorn_assign(const Tensor& m, double eps, int iters) {
    GEOSSL_CHECK(m.all_finite(), "sinkhorn_assign: similarity matrix must be finite");
    GEOSSL_CHECK(eps > 0 && iters >= 1, "sinkhorn_assign: eps > 0 and iters >= 1 required");
    const int n = m.rows(), p = m.cols();
    Tensor s(n, p);
    for (int r = 0; r < n; ++r) {
        double mx = m.at(r, 0);
        for (int c = 1; c < p; ++c) mx = std::max(mx, m.at(r, c));
        for (int c = 0; c < p; ++c) s.at(r, c) = std::exp((m.at(r, c) - mx) / eps);
    }
    for (int it = 0; it < iters; ++it) {
        for (int r = 0; r < n; ++r) {
            double rs = 0;
            for (int c = 0; c < p; ++c) rs += s.at(r, c);
            const double f = 1.0 / (n * rs);
            for (int c = 0; c < p; ++c) s.at(r, c) *= f;
        }
        for (int c = 0; c < p; ++c) {
            double cs = 0;
            for (int r = 0; r < n; ++r) cs += s.at(r, c);
            const double f = 1.0 / (p * cs);
            for (int r = 0; r < n; ++r) s.at(r, c) *= f;
        }
    }
    return s;
}

nn::Var sinkhorn_assign(const nn::Var& m, double eps, int iters) {
    GEOSSL_CHECK(m->value.all_finite(), "sinkhorn_assign: similarity matrix must be finite");
    GEOSSL_CHECK(eps > 0 && iters >= 1, "sinkhorn_assign: eps > 0 and iters >= 1 required");
    const int n = m->value.rows(), p = m->value.cols();
    // row-max shift: the scaled plan is invariant to it, so it can stay
    // outside the tape
    Tensor shift(n, p);
    for (int r = 0; r < n; ++r) {
        double mx = m->value.at(r, 0);
        for (int c = 1; c < p; ++c) mx = std::max(mx, m->value.at(r, c));
        for (int c = 0; c < p; ++c) shift.at(r, c) = -mx;
    }
    Var s = nn::vexp(nn::scale(nn::add(m, nn::constant(std::move(shift))), 1.0 / eps));
    for (int it = 0; it < iters; ++it) {
        s = nn::scale_rows(s, nn::scale(nn::reciprocal(nn::row_sum(s)), 1.0 / n));
        s = nn::mul_rowvec(s, nn::scale(nn::reciprocal(nn::col_sum(s)), 1.0 / p));
    }
    return s;
}

Tensor cosine_matrix(const Tensor& a, const Tensor& b) {
    const int n = a.rows(), p = b.rows(), d = a.cols();
    GEOSSL_CHECK(b.cols() == d, "cosine_matrix: width mismatch");
    Tensor out(n, p);
    std::vector<double> na(static_cast<size_t>(n)), nb(static_cast<size_t>(p));
    for (int r = 0; r < n; ++r) {
        double s = 0;
        for (int c = 0; c < d; ++c) s += a.at(r, c) * a.at(r, c);
        na[static_cast<size_t>(r)] = 1.0 / std::sqrt(s + 1e-12);
    }
    for (int r = 0; r < p; ++r) {
        double s = 0;
        for (int c = 0; c < d; ++c) s += b.at(r, c) * b.at(r, c);
        nb[static_cast<size_t>(r)] = 1.0 / std::sqrt(s + 1e-12);
    }
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < p; ++j) {
            double s = 0;
            for (int c = 0; c < d; ++c) s += a.at(i, c) * b.at(j, c);
            out.at(i, j) = s * na[static_cast<size_t>(i)] * nb[static_cast<size_t>(j)];
        }
    return out;
}

nn::Var cosine_matrix(const nn::Var& a, const nn::Var& b) {
    Var an = nn::l2_normalize_rows(a);
    Var bn = nn::l2_normalize_rows(b);
    return nn::matmul(an, nn::transpose(bn));
}

Tensor region_prototypes(const ModelState& state, int region, const GcplConfig& cfg) {
    const Param& bank = state.at("gcpl/prototypes");
    GEOSSL_CHECK(bank.shape.size() == 3 && region >= 0 && region < bank.shape[0],
                 "region id outside prototype bank");
    const int np = bank.shape[1], d = bank.shape[2];
    Tensor out(np, d);
    const std::size_t base = static_cast<std::size_t>(region) * np * d;
    for (int i = 0; i < np * d; ++i)
        out[i] = static_cast<double>(bank.data[base + static_cast<std::size_t>(i)]);
    return out;
}

void gcpl_update(ModelState& state, const Tensor& fused, int region, const GcplConfig& cfg) {
    GEOSSL_CHECK(fused.all_finite(), "gcpl_update: non-finite fused features");
    Param& bank = state.at("gcpl/prototypes");
    const int np = bank.shape[1], d = bank.shape[2];
    GEOSSL_CHECK(fused.cols() == d, "gcpl_update: feature width mismatch");

    Tensor protos = region_prototypes(state, region, cfg);
    Tensor m = cosine_matrix(fused, protos);
    Tensor s = sinkhorn_assign(m, cfg.eps, cfg.iters);
    Tensor updated = matmul_tn(s, fused);  // S^T F

    const std::size_t base = static_cast<std::size_t>(region) * np * d;
    for (int i = 0; i < np * d; ++i) {
        const double prev = static_cast<double>(bank.data[base + static_cast<std::size_t>(i)]);
        bank.data[base + static_cast<std::size_t>(i)] =
            static_cast<float>(cfg.momentum * prev + (1.0 - cfg.momentum) * updated[i]);
    }
}

nn::Var gcpl_augment(ParamCtx& P, const ModelState& state, const nn::Var& fused, int region,
                     const GcplConfig& cfg) {
    Var protos = nn::constant(region_prototypes(state, region, cfg));
    const int d = fused->value.cols();
    const int head_dim = std::min(cfg.head_dim, d);
    Var q = linear(fused, P("gcpl/attn/wq"), P("gcpl/attn/bq"));
    Var k = linear(protos, P("gcpl/attn/wk"), P("gcpl/attn/bk"));
    Var v = linear(protos, P("gcpl/attn/wv"), P("gcpl/attn/bv"));
    const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
    std::vector<Var> heads;
    for (int h = 0; h < cfg.n_heads; ++h) {
        Var qh = nn::slice_cols(q, h * head_dim, (h + 1) * head_dim);
        Var kh = nn::slice_cols(k, h * head_dim, (h + 1) * head_dim);
        Var vh = nn::slice_cols(v, h * head_dim, (h + 1) * head_dim);
        heads.push_back(nn::attention_blocks(qh, kh, vh, 1, scale));
    }
    Var cat = cfg.n_heads == 1 ? heads[0] : nn::concat_cols(heads);
    Var attended = linear(cat, P("gcpl/attn/wo"), P("gcpl/attn/bo"));
    return nn::add(fused, attended);
}

}  // namespace geossl::model
