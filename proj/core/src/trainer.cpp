#include "geossl/trainer.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <thread>

namespace geossl::model {

using nn::Var;

double cosine_schedule(std::int64_t t, std::int64_t total, double v0, double v1) {
    if (total == 0) return v0;
    GEOSSL_CHECK(t >= 0 && t <= total, "cosine_schedule: t outside [0, T]");
    const double c = std::cos(3.14159265358979323846 * static_cast<double>(t) /
                              static_cast<double>(total));
    return v1 + (v0 - v1) * (1.0 + c) / 2.0;
}

void ema_update(ModelState& state, double momentum) {
    for (auto& [name, p] : state.all()) {
        if (!is_teacher_visible(name)) continue;
        Param& t = state.at("teacher/" + name);
        GEOSSL_CHECK(t.numel() == p.numel(), "ema_update: shape mismatch for " + name);
        for (std::int64_t i = 0; i < p.numel(); ++i) {
            const double td = static_cast<double>(t.data[i]);
            const double sd = static_cast<double>(p.data[i]);
            t.data[i] = static_cast<float>(momentum * td + (1.0 - momentum) * sd);
        }
    }
}

double clip_gradients(std::map<std::string, Tensor>& grads, double max_norm) {
    double sq = 0.0;
    for (const auto& [name, g] : grads) {
        for (std::int64_t i = 0; i < g.numel(); ++i) {
            GEOSSL_CHECK(std::isfinite(g[i]), "non-finite gradient in parameter " + name);
            sq += g[i] * g[i];
        }
    }
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0) {
        const double f = max_norm / norm;
        for (auto& [name, g] : grads) g.scale_(f);
    }
    return norm;
}

std::string Metrics::to_json() const {
    nlohmann::json j;
    j["iter"] = iter;
    j["loss"] = total;
    j["mgcl"] = mgcl;
    j["ita"] = ita;
    j["qsacl"] = qsacl;
    j["aux"] = aux;
    j["lr"] = lr;
    j["wd"] = wd;
    j["ema"] = ema_momentum;
    j["grad_norm"] = grad_norm;
    j["pixel_pairs"] = pixel_pairs;
    j["pixel_skips"] = pixel_skips;
    j["moe_counts"] = moe_counts;
    return j.dump();
}

namespace {

/// Pools a token grid down to (h, w) when a modality kept higher resolution.
TokenGrid align_to(const TokenGrid& g, int h, int w) {
    if (g.h == h && g.w == w) return g;
    GEOSSL_CHECK(g.h % h == 0 && g.w % w == 0,
                 "cannot align feature grid " + std::to_string(g.h) + "x" +
                     std::to_string(g.w) + " to " + std::to_string(h) + "x" +
                     std::to_string(w));
    TokenGrid out = g;
    out.tokens = nn::avgpool_grid(g.tokens, g.h, g.w, g.h / h, g.w / w);
    out.h = h;
    out.w = w;
    out.stride = g.stride * (g.h / h);
    return out;
}

Var linear(const Var& x, const Var& w, const Var& b) {
    return nn::add_rowvec(nn::matmul(x, w), b);
}

}  // namespace

ViewEncoding encode_view(ParamCtx& P, const data::ViewSet& views, int view_index,
                         const FullConfig& cfg, bool teacher, const ModelState& state) {
    const data::View& v = views.views[static_cast<size_t>(view_index)];
    ViewEncoding enc;

    BackboneOut hr = forward_backbone(P, v.hr.data, data::Modality::HR, cfg.backbone);
    for (auto& l : hr.routing.layers) enc.routing.layers.push_back(std::move(l));

    const auto& ms_idx = teacher ? views.ms_idx_teacher : views.ms_idx_student;
    const auto& ms_days = teacher ? views.ms_days_teacher : views.ms_days_student;
    const auto& sar_idx = teacher ? views.sar_idx_teacher : views.sar_idx_student;
    const auto& sar_days = teacher ? views.sar_days_teacher : views.sar_days_student;

    auto encode_series = [&](const data::ArrF& series, const std::vector<int>& idx,
                             data::Modality m) {
        std::vector<TokenGrid> grids;
        const int S = series.dim(1), ch = series.dim(3);
        const std::size_t frame = static_cast<std::size_t>(S) * S * ch;
        for (int t : idx) {
            BackboneOut out = forward_backbone(P, series.v.data() + t * frame, S, S, ch, m,
                                               cfg.backbone);
            for (auto& l : out.routing.layers) enc.routing.layers.push_back(std::move(l));
            grids.push_back(std::move(out.final));
        }
        return grids;
    };
    std::vector<TokenGrid> ms = encode_series(v.ms.data, ms_idx, data::Modality::MS);
    std::vector<TokenGrid> sar = encode_series(v.sar.data, sar_idx, data::Modality::SAR);

    // common fused grid: the coarsest final grid across modalities
    int gh = hr.final.h, gw = hr.final.w;
    for (const auto& g : ms) {
        gh = std::min(gh, g.h);
        gw = std::min(gw, g.w);
    }
    for (const auto& g : sar) {
        gh = std::min(gh, g.h);
        gw = std::min(gw, g.w);
    }

    TokenGrid hr_aligned = align_to(hr.final, gh, gw);
    enc.hr.push_back(hr_aligned.tokens);

    ModalitySequence hr_seq{data::Modality::HR, {hr_aligned}, {0.0}};
    ModalitySequence ms_seq{data::Modality::MS, {}, ms_days};
    for (auto& g : ms) {
        TokenGrid a = align_to(g, gh, gw);
        enc.ms.push_back(a.tokens);
        ms_seq.frames.push_back(std::move(a));
    }
    ModalitySequence sar_seq{data::Modality::SAR, {}, sar_days};
    for (auto& g : sar) {
        TokenGrid a = align_to(g, gh, gw);
        enc.sar.push_back(a.tokens);
        sar_seq.frames.push_back(std::move(a));
    }

    enc.fused = fuse(P, {hr_seq, ms_seq, sar_seq}, cfg.fusion);
    return enc;
}

SampleLoss sample_loss(const ModelState& state, const FullConfig& cfg,
                       const data::GeoSample& sample, const data::ViewSet& views,
                       bool track_grad, std::map<std::string, Tensor>* grads) {
    ParamCtx Ps(state, "", track_grad);
    ParamCtx Pt(state, "teacher/", false);
    SampleLoss out;
    Pt.teacher_logit_stats = &out.teacher_logits;
    const int region = region_index(sample.lon, sample.lat, cfg.gcpl);
    out.region = region;

    const int n_views = static_cast<int>(views.views.size());
    std::vector<ViewEncoding> se, te;
    se.reserve(static_cast<size_t>(n_views));
    te.reserve(static_cast<size_t>(n_views));
    for (int i = 0; i < n_views; ++i) {
        ViewEncoding s = encode_view(Ps, views, i, cfg, false, state);
        // geo-context augmentation applies to the student branch only
        s.fused.data = gcpl_augment(Ps, state, s.fused.data, region, cfg.gcpl);
        s.aggregate = qsacl_aggregate(Ps, s.fused.data, cfg.objectives);
        se.push_back(std::move(s));

        ViewEncoding t = encode_view(Pt, views, i, cfg, true, state);
        t.aggregate = qsacl_aggregate(Pt, t.fused.data, cfg.objectives);
        te.push_back(std::move(t));
    }
    const int gh = se[0].fused.h, gw = se[0].fused.w;

    // multi-granularity loss over the two directed global-view pairs
    Var mgcl;
    for (const auto [a, b] : {std::pair{0, 1}, std::pair{1, 0}}) {
        const auto corr = data::correspondence(views.views[static_cast<size_t>(a)].ms.geom,
                                               views.views[static_cast<size_t>(b)].ms.geom,
                                               gh, gw);
        int pairs = 0, skips = 0;
        Var dir;
        auto add_fgcl = [&](const std::vector<Var>& fs, const std::vector<Var>& ft) {
            Var term = loss_fgcl(Ps, Pt, fs, ft, corr, cfg.objectives, &pairs, &skips);
            dir = dir ? nn::add(dir, term) : term;
        };
        add_fgcl(se[static_cast<size_t>(a)].hr, te[static_cast<size_t>(b)].hr);
        add_fgcl(se[static_cast<size_t>(a)].ms, te[static_cast<size_t>(b)].ms);
        add_fgcl(se[static_cast<size_t>(a)].sar, te[static_cast<size_t>(b)].sar);
        add_fgcl({se[static_cast<size_t>(a)].fused.data},
                 {te[static_cast<size_t>(b)].fused.data});
        out.pixel_pairs += pairs;
        out.pixel_skips += skips;
        mgcl = mgcl ? nn::add(mgcl, dir) : dir;
    }
    mgcl = nn::scale(mgcl, 0.5);

    // dense image-text alignment on student global fused features
    Var text = Ps("text/table");
    Var ita;
    for (int g = 0; g < 2; ++g) {
        const data::ArrI pooled =
            data::pool_labels(views.views[static_cast<size_t>(g)].labels, gh, gw,
                              cfg.dataset.num_classes);
        std::vector<int> labels(pooled.v.begin(), pooled.v.end());
        Var proj = linear(se[static_cast<size_t>(g)].fused.data, Ps("ita/proj/w"),
                          Ps("ita/proj/b"));
        Var term = loss_ita(proj, labels, text, cfg.objectives.ita_tau);
        ita = ita ? nn::add(ita, term) : term;
    }
    ita = nn::scale(ita, 0.5);

    // query-aggregation contrast between global and local aggregates
    std::vector<Var> sg{se[0].aggregate, se[1].aggregate};
    std::vector<Var> tg{te[0].aggregate, te[1].aggregate};
    std::vector<Var> sl, tl;
    for (int i = 2; i < n_views; ++i) {
        sl.push_back(se[static_cast<size_t>(i)].aggregate);
        tl.push_back(te[static_cast<size_t>(i)].aggregate);
    }
    Var qsacl = loss_qsacl(Ps, Pt, sg, sl, tg, tl, cfg.objectives);

    for (auto& enc : se)
        for (auto& l : enc.routing.layers) out.routing.layers.push_back(std::move(l));
    Var aux = moe_aux_loss_var(out.routing);

    out.parts = {mgcl, ita, qsacl, aux};
    out.loss = total_loss(out.parts, cfg.objectives);
    out.fused_globals = {se[0].fused.data->value, se[1].fused.data->value};

    if (track_grad) {
        nn::backward(out.loss);
        GEOSSL_CHECK(grads != nullptr, "gradient map required when tracking gradients");
        Ps.collect_gradients(*grads);
    }
    return out;
}

Metrics Trainer::train_step(const std::vector<const data::GeoSample*>& batch, int iter) {
    GEOSSL_CHECK(!batch.empty(), "train_step: empty batch");
    GEOSSL_CHECK(iter >= 0 && iter < cfg_.trainer.total_iters,
                 "train_step: iteration outside schedule");
    const int n = static_cast<int>(batch.size());

    struct Slot {
        data::ViewSet views;
        SampleLoss result;
        std::map<std::string, Tensor> grads;
        std::exception_ptr error;
    };
    std::vector<Slot> slots(static_cast<size_t>(n));

    auto run_sample = [&](int i) {
        Slot& slot = slots[static_cast<size_t>(i)];
        try {
            Rng rng = Rng::derive(cfg_.trainer.seed, 0xA06, static_cast<std::uint64_t>(iter),
                                  static_cast<std::uint64_t>(i));
            slot.views = data::make_views(*batch[static_cast<size_t>(i)], cfg_.aug, rng);
            slot.result = sample_loss(state_, cfg_, *batch[static_cast<size_t>(i)],
                                      slot.views, true, &slot.grads);
        } catch (...) {
            slot.error = std::current_exception();
        }
    };

    const int workers = std::max(1, std::min(cfg_.trainer.n_workers, n));
    if (workers == 1) {
        for (int i = 0; i < n; ++i) run_sample(i);
    } else {
        std::vector<std::thread> pool;
        for (int wkr = 0; wkr < workers; ++wkr)
            pool.emplace_back([&, wkr] {
                for (int i = wkr; i < n; i += workers) run_sample(i);
            });
        for (auto& th : pool) th.join();
    }
    for (auto& slot : slots)
        if (slot.error) std::rethrow_exception(slot.error);

    // deterministic merge in sample order
    std::map<std::string, Tensor> grads;
    Metrics m;
    m.iter = iter;
    TeacherLogitStats teacher_logits;
    RoutingStats routing_summary;
    for (auto& slot : slots) {
        for (auto& [name, g] : slot.grads) {
            auto it = grads.find(name);
            if (it == grads.end())
                grads.emplace(name, std::move(g));
            else
                it->second.add_(g);
        }
        m.total += slot.result.loss->value[0] / n;
        m.mgcl += slot.result.parts.mgcl->value[0] / n;
        m.ita += slot.result.parts.ita->value[0] / n;
        m.qsacl += slot.result.parts.qsacl->value[0] / n;
        m.aux += slot.result.parts.aux->value[0] / n;
        m.pixel_pairs += slot.result.pixel_pairs;
        m.pixel_skips += slot.result.pixel_skips;
        teacher_logits.merge(slot.result.teacher_logits);
        routing_summary.merge(slot.result.routing);
    }
    GEOSSL_CHECK(std::isfinite(m.total), "train_step: non-finite batch loss");
    for (auto& [name, g] : grads) g.scale_(1.0 / n);

    m.grad_norm = clip_gradients(grads, cfg_.trainer.clip_norm);
    m.lr = cosine_schedule(iter, cfg_.trainer.total_iters, cfg_.trainer.lr_start,
                           cfg_.trainer.lr_end);
    m.wd = cosine_schedule(iter, cfg_.trainer.total_iters, cfg_.trainer.wd_start,
                           cfg_.trainer.wd_end);
    m.ema_momentum = cosine_schedule(iter, cfg_.trainer.total_iters, cfg_.trainer.ema_start,
                                     cfg_.trainer.ema_end);

    // decoupled Adam step
    ++adam_t_;
    const double bc1 = 1.0 - std::pow(cfg_.trainer.beta1, static_cast<double>(adam_t_));
    const double bc2 = 1.0 - std::pow(cfg_.trainer.beta2, static_cast<double>(adam_t_));
    for (auto& [name, g] : grads) {
        Param& p = state_.at(name);
        GEOSSL_CHECK(p.trainable && !is_teacher_name(name),
                     "optimizer touched a frozen parameter: " + name);
        auto mit = adam_m_.find(name);
        if (mit == adam_m_.end()) {
            adam_m_.emplace(name, Tensor::zeros(g.shape()));
            adam_v_.emplace(name, Tensor::zeros(g.shape()));
            mit = adam_m_.find(name);
        }
        Tensor& mom = mit->second;
        Tensor& vel = adam_v_.at(name);
        const bool decay = !no_weight_decay(name);
        for (std::int64_t i = 0; i < g.numel(); ++i) {
            mom[i] = cfg_.trainer.beta1 * mom[i] + (1.0 - cfg_.trainer.beta1) * g[i];
            vel[i] = cfg_.trainer.beta2 * vel[i] + (1.0 - cfg_.trainer.beta2) * g[i] * g[i];
            const double mhat = mom[i] / bc1;
            const double vhat = vel[i] / bc2;
            double theta = static_cast<double>(p.data[i]);
            theta -= m.lr * mhat / (std::sqrt(vhat) + cfg_.trainer.adam_eps);
            if (decay) theta -= m.lr * m.wd * theta;
            p.data[i] = static_cast<float>(theta);
        }
    }

    ema_update(state_, m.ema_momentum);

    // prototype refresh from student fused global features, sample order
    for (const auto& slot : slots)
        for (const auto& fused : slot.result.fused_globals)
            gcpl_update(state_, fused, slot.result.region, cfg_.gcpl);

    // teacher center EMA
    const double cm = cfg_.objectives.head.center_momentum;
    for (const auto& [head, sum] : teacher_logits.sum) {
        const double cnt = static_cast<double>(teacher_logits.rows.at(head));
        Param& center = state_.at("teacher/head/" + head + "/center");
        for (std::int64_t i = 0; i < center.numel(); ++i) {
            const double mean = sum[i] / cnt;
            center.data[i] =
                static_cast<float>(cm * static_cast<double>(center.data[i]) + (1.0 - cm) * mean);
        }
    }

    if (!routing_summary.layers.empty()) {
        m.moe_counts.assign(routing_summary.layers[0].counts.size(), 0);
        for (const auto& l : routing_summary.layers)
            for (size_t e = 0; e < l.counts.size(); ++e) m.moe_counts[e] += l.counts[e];
    }
    return m;
}

void pretrain(Trainer& trainer, const std::vector<data::GeoSample>& dataset,
              const std::function<void(const Metrics&)>& on_metrics) {
    GEOSSL_CHECK(!dataset.empty(), "pretrain: empty dataset");
    const TrainConfig& tc = trainer.config().trainer;
    for (int t = 0; t < tc.total_iters; ++t) {
        Rng rng = Rng::derive(tc.seed, 0xBA7C4, static_cast<std::uint64_t>(t));
        std::vector<const data::GeoSample*> batch;
        batch.reserve(static_cast<size_t>(tc.batch_size));
        for (int b = 0; b < tc.batch_size; ++b)
            batch.push_back(&dataset[static_cast<size_t>(
                rng.below(static_cast<std::int64_t>(dataset.size())))]);
        Metrics m = trainer.train_step(batch, t);
        if (on_metrics) on_metrics(m);
    }
}

}  // namespace geossl::model
