#include "geossl/objectives.hpp"

#include <cmath>

namespace geossl::model {

using nn::Var;

namespace {
Var linear(const Var& x, const Var& w, const Var& b) {
    return nn::add_rowvec(nn::matmul(x, w), b);
}

Var mean_of(const std::vector<Var>& terms) {
    GEOSSL_CHECK(!terms.empty(), "mean over empty loss terms");
    Var acc = terms[0];
    for (size_t i = 1; i < terms.size(); ++i) acc = nn::add(acc, terms[i]);
    return nn::scale(acc, 1.0 / static_cast<double>(terms.size()));
}
}  // namespace

void TeacherLogitStats::absorb(const std::string& head, const Tensor& logits) {
    auto it = sum.find(head);
    if (it == sum.end()) {
        Tensor acc(1, logits.cols());
        for (int r = 0; r < logits.rows(); ++r)
            for (int c = 0; c < logits.cols(); ++c) acc.at(0, c) += logits.at(r, c);
        sum.emplace(head, std::move(acc));
        rows[head] = logits.rows();
    } else {
        for (int r = 0; r < logits.rows(); ++r)
            for (int c = 0; c < logits.cols(); ++c) it->second.at(0, c) += logits.at(r, c);
        rows[head] += logits.rows();
    }
}

void TeacherLogitStats::merge(const TeacherLogitStats& other) {
    for (const auto& [head, acc] : other.sum) {
        auto it = sum.find(head);
        if (it == sum.end()) {
            sum.emplace(head, acc);
            rows[head] = other.rows.at(head);
        } else {
            it->second.add_(acc);
            rows[head] += other.rows.at(head);
        }
    }
}

Var head_forward(ParamCtx& P, const Var& features, const std::string& head,
                 const HeadConfig& cfg, bool teacher, Tensor* logits_out) {
    const std::string scope = "head/" + head;
    Var h = nn::gelu(linear(features, P(scope + "/w1"), P(scope + "/b1")));
    h = nn::gelu(linear(h, P(scope + "/w2"), P(scope + "/b2")));
    Var logits = linear(h, P(scope + "/w3"), P(scope + "/b3"));
    if (logits_out) *logits_out = logits->value;
    if (teacher) {
        if (P.teacher_logit_stats) P.teacher_logit_stats->absorb(head, logits->value);
        Var centered = nn::add_rowvec(logits, nn::scale(P(scope + "/center"), -1.0));
        return nn::softmax_rows(nn::scale(centered, 1.0 / cfg.tau_teacher));
    }
    return nn::softmax_rows(nn::scale(logits, 1.0 / cfg.tau_student));
}

Var loss_cl(const Var& student_prob, const Tensor& teacher_prob) {
    GEOSSL_CHECK(student_prob->value.same_shape(teacher_prob),
                 "loss_cl: distribution shapes differ");
    Var logp = nn::vlog(nn::clamp_min(student_prob, 1e-12));
    Var ce = nn::scale(nn::sum_all(nn::mul(logp, nn::constant(teacher_prob))), -1.0);
    return nn::scale(ce, 1.0 / student_prob->value.rows());
}

PixelLoss loss_pixel(ParamCtx& Ps, ParamCtx& Pt, const std::vector<Var>& f_student,
                     const std::vector<Var>& f_teacher,
                     const std::vector<std::pair<int, int>>& corr, const HeadConfig& cfg) {
    PixelLoss out;
    if (corr.empty()) {
        out.loss = nn::constant(Tensor::scalar(0.0));
        out.skipped = true;
        return out;
    }
    GEOSSL_CHECK(f_student.size() == f_teacher.size(),
                 "loss_pixel: temporal slice counts differ");
    std::vector<int> idx_s, idx_t;
    idx_s.reserve(corr.size());
    for (const auto& [a, b] : corr) {
        idx_s.push_back(a);
        idx_t.push_back(b);
    }
    std::vector<Var> terms;
    for (size_t t = 0; t < f_student.size(); ++t) {
        Var ps = head_forward(Ps, nn::gather_rows(f_student[t], idx_s), "pix", cfg, false);
        Var pt = head_forward(Pt, nn::gather_rows(f_teacher[t], idx_t), "pix", cfg, true);
        terms.push_back(loss_cl(ps, pt->value));
    }
    out.loss = mean_of(terms);
    out.pairs = static_cast<int>(corr.size());
    return out;
}

Var cluster_objects(ParamCtx& P, const Var& f_pix, int n_clusters, double eps, int iters) {
    GEOSSL_CHECK(n_clusters <= f_pix->value.rows(),
                 "cluster_objects: more clusters than feature rows");
    Var embed = P("mgcl/cluster_embed");
    GEOSSL_CHECK(embed->value.rows() >= n_clusters, "cluster embedding bank too small");
    Var embed_n = n_clusters == embed->value.rows()
                      ? embed
                      : nn::slice_rows(embed, 0, n_clusters);
    Var m = cosine_matrix(f_pix, embed_n);
    Var s = sinkhorn_assign(m, eps, iters);
    // each center = assignment-weighted mean of its member features
    Var weights = nn::matmul(nn::transpose(s), f_pix);          // (N_C x d)
    Var mass = nn::transpose(nn::col_sum(s));                   // (N_C x 1)
    return nn::scale_rows(weights, nn::reciprocal(mass));
}

Var loss_object(ParamCtx& Ps, ParamCtx& Pt, const std::vector<Var>& f_student,
                const std::vector<Var>& f_teacher, const ObjectivesConfig& cfg) {
    GEOSSL_CHECK(f_student.size() == f_teacher.size(),
                 "loss_object: temporal slice counts differ");
    std::vector<Var> terms;
    for (size_t t = 0; t < f_student.size(); ++t) {
        const int nc = std::min({cfg.n_clusters, f_student[t]->value.rows(),
                                 f_teacher[t]->value.rows()});
        Var cs = cluster_objects(Ps, f_student[t], nc, cfg.sinkhorn_eps, cfg.sinkhorn_iters);
        Var ct = cluster_objects(Pt, f_teacher[t], nc, cfg.sinkhorn_eps, cfg.sinkhorn_iters);
        Var ps = head_forward(Ps, cs, "obj", cfg.head, false);
        Var pt = head_forward(Pt, ct, "obj", cfg.head, true);
        terms.push_back(loss_cl(ps, pt->value));
    }
    return mean_of(terms);
}

Var loss_image(ParamCtx& Ps, ParamCtx& Pt, const std::vector<Var>& f_student,
               const std::vector<Var>& f_teacher, const HeadConfig& cfg) {
    GEOSSL_CHECK(f_student.size() == f_teacher.size(),
                 "loss_image: temporal slice counts differ");
    std::vector<Var> terms;
    for (size_t t = 0; t < f_student.size(); ++t) {
        Var ps = head_forward(Ps, nn::mean_rows(f_student[t]), "img", cfg, false);
        Var pt = head_forward(Pt, nn::mean_rows(f_teacher[t]), "img", cfg, true);
        terms.push_back(loss_cl(ps, pt->value));
    }
    return mean_of(terms);
}

Var loss_fgcl(ParamCtx& Ps, ParamCtx& Pt, const std::vector<Var>& f_student,
              const std::vector<Var>& f_teacher,
              const std::vector<std::pair<int, int>>& corr, const ObjectivesConfig& cfg,
              int* pairs, int* skips) {
    PixelLoss pix = loss_pixel(Ps, Pt, f_student, f_teacher, corr, cfg.head);
    if (pairs) *pairs += pix.pairs;
    if (skips) *skips += pix.skipped ? 1 : 0;
    Var sum = nn::add(pix.loss, loss_object(Ps, Pt, f_student, f_teacher, cfg));
    return nn::add(sum, loss_image(Ps, Pt, f_student, f_teacher, cfg.head));
}

Var qsacl_aggregate(ParamCtx& P, const Var& features, const ObjectivesConfig& cfg,
                    Tensor* attn_maps, Var* cross_sublayer) {
    Var q = P("qsacl/queries");
    const int d = q->value.cols();
    const int head_dim = std::min(cfg.query_head_dim, d);
    const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

    auto attention = [&](const std::string& scope, const Var& q_in, const Var& kv,
                         Tensor* maps) {
        Var qq = linear(q_in, P(scope + "/wq"), P(scope + "/bq"));
        Var kk = linear(kv, P(scope + "/wk"), P(scope + "/bk"));
        Var vv = linear(kv, P(scope + "/wv"), P(scope + "/bv"));
        std::vector<Var> heads;
        for (int h = 0; h < cfg.query_heads; ++h) {
            Var qh = nn::slice_cols(qq, h * head_dim, (h + 1) * head_dim);
            Var kh = nn::slice_cols(kk, h * head_dim, (h + 1) * head_dim);
            Var vh = nn::slice_cols(vv, h * head_dim, (h + 1) * head_dim);
            Tensor cap;
            heads.push_back(nn::attention_blocks(qh, kh, vh, 1, scale, nullptr, nullptr,
                                                 nullptr, maps ? &cap : nullptr));
            if (maps) {
                if (h == 0)
                    *maps = cap;
                else
                    maps->add_(cap);
            }
        }
        if (maps) maps->scale_(1.0 / cfg.query_heads);
        Var cat = cfg.query_heads == 1 ? heads[0] : nn::concat_cols(heads);
        return linear(cat, P(scope + "/wo"), P(scope + "/bo"));
    };

    Var h1 = nn::layer_norm_rows(q, P("qsacl/dec/n1/g"), P("qsacl/dec/n1/b"));
    Var x = nn::add(q, attention("qsacl/dec/self", h1, h1, nullptr));
    Var h2 = nn::layer_norm_rows(x, P("qsacl/dec/n2/g"), P("qsacl/dec/n2/b"));
    Var cross = attention("qsacl/dec/cross", h2, features, attn_maps);
    if (cross_sublayer) *cross_sublayer = cross;
    x = nn::add(x, cross);
    Var h3 = nn::layer_norm_rows(x, P("qsacl/dec/n3/g"), P("qsacl/dec/n3/b"));
    Var m = nn::gelu(linear(h3, P("qsacl/dec/m/w1"), P("qsacl/dec/m/b1")));
    m = linear(m, P("qsacl/dec/m/w2"), P("qsacl/dec/m/b2"));
    return nn::add(x, m);
}

Var loss_qsacl(ParamCtx& Ps, ParamCtx& Pt, const std::vector<Var>& student_global,
               const std::vector<Var>& student_local,
               const std::vector<Var>& teacher_global, const std::vector<Var>& teacher_local,
               const ObjectivesConfig& cfg) {
    GEOSSL_CHECK(!student_global.empty() && !student_local.empty(),
                 "loss_qsacl: needs global and local aggregates");
    GEOSSL_CHECK(student_global.size() == teacher_global.size() &&
                     student_local.size() == teacher_local.size(),
                 "loss_qsacl: branch view counts differ");
    std::vector<Var> pair_terms;
    for (size_t g = 0; g < student_global.size(); ++g)
        for (size_t l = 0; l < student_local.size(); ++l) {
            Var a = loss_cl(head_forward(Ps, student_global[g], "qsacl", cfg.head, false),
                            head_forward(Pt, teacher_local[l], "qsacl", cfg.head, true)->value);
            Var b = loss_cl(head_forward(Ps, student_local[l], "qsacl", cfg.head, false),
                            head_forward(Pt, teacher_global[g], "qsacl", cfg.head, true)->value);
            // loss_cl averages over the m query rows; the symmetric pair
            // contributes with weight 1/2, giving 1/(2m) per query term
            pair_terms.push_back(nn::scale(nn::add(a, b), 0.5));
        }
    return mean_of(pair_terms);
}

Var loss_ita(const Var& features, const std::vector<int>& labels, const Var& text_table,
             double tau) {
    const int n = features->value.rows();
    GEOSSL_CHECK(static_cast<int>(labels.size()) == n, "loss_ita: one label per feature row");
    const int k = text_table->value.rows();
    for (int l : labels) GEOSSL_CHECK(l >= 0 && l < k, "loss_ita: label out of range");
    Var logits = nn::scale(nn::matmul(features, nn::transpose(text_table)), 1.0 / tau);
    Var logp = nn::vlog(nn::clamp_min(nn::softmax_rows(logits), 1e-12));
    Var picked = nn::select_per_row(logp, labels);
    return nn::scale(nn::mean_all(picked), -1.0);
}

double moe_aux_loss(const RoutingStats& stats) {
    if (stats.layers.empty()) return 0.0;
    double acc = 0.0;
    for (const auto& layer : stats.layers) {
        const int m = static_cast<int>(layer.counts.size());
        const double denom =
            static_cast<double>(layer.tokens_total) * static_cast<double>(layer.top_k);
        double layer_loss = 0.0;
        for (int e = 0; e < m; ++e) {
            const double f = denom > 0 ? layer.counts[static_cast<size_t>(e)] / denom : 0.0;
            layer_loss += f * layer.mean_gate_prob.at(0, e);
        }
        acc += m * layer_loss;
    }
    return acc / static_cast<double>(stats.layers.size());
}

Var moe_aux_loss_var(const RoutingStats& stats) {
    if (stats.layers.empty()) return nn::constant(Tensor::scalar(0.0));
    Var acc;
    for (const auto& layer : stats.layers) {
        GEOSSL_CHECK(layer.mean_gate_var != nullptr,
                     "moe_aux_loss_var: stats lack tape handles");
        const int m = static_cast<int>(layer.counts.size());
        const double denom =
            static_cast<double>(layer.tokens_total) * static_cast<double>(layer.top_k);
        Tensor f(1, m);
        for (int e = 0; e < m; ++e)
            f.at(0, e) = denom > 0 ? layer.counts[static_cast<size_t>(e)] / denom : 0.0;
        Var layer_loss =
            nn::scale(nn::sum_all(nn::mul(layer.mean_gate_var, nn::constant(f))),
                      static_cast<double>(m));
        acc = acc ? nn::add(acc, layer_loss) : layer_loss;
    }
    return nn::scale(acc, 1.0 / static_cast<double>(stats.layers.size()));
}

Var total_loss(const LossParts& parts, const ObjectivesConfig& cfg) {
    auto check = [](const Var& v, const char* name) {
        GEOSSL_CHECK(v != nullptr, std::string("total_loss: missing part ") + name);
        GEOSSL_CHECK(std::isfinite(v->value[0]),
                     std::string("total_loss: non-finite loss part ") + name);
    };
    check(parts.mgcl, "mgcl");
    check(parts.ita, "ita");
    check(parts.qsacl, "qsacl");
    check(parts.aux, "aux");
    Var sum = nn::scale(parts.mgcl, cfg.lambda_mgcl);
    sum = nn::add(sum, nn::scale(parts.ita, cfg.lambda_ita));
    sum = nn::add(sum, nn::scale(parts.qsacl, cfg.lambda_qsacl));
    return nn::add(sum, nn::scale(parts.aux, cfg.aux_weight));
}

}  // namespace geossl::model
