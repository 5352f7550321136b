#include "geossl/evalkit.hpp"

#include "geossl/blobfile.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace geossl::eval {

using model::ParamCtx;
using nn::Var;

std::string EvalReport::to_json() const {
    nlohmann::json j;
    j["protocol"] = protocol;
    j["k"] = k;
    j["accuracy"] = accuracy;
    j["per_class_accuracy"] = per_class_accuracy;
    j["feature_source"] = feature_source;
    j["branch"] = branch;
    j["dataset_hash"] = dataset_hash;
    return j.dump();
}

std::string short_hash(const std::string& text) {
    return io::sha256_hex(text.data(), text.size()).substr(0, 16);
}

namespace {

/// Encodes one full (un-augmented) sample for one branch and returns the
/// mean-pooled feature row.
Tensor sample_feature(const model::Checkpoint& ck, const data::GeoSample& s,
                      const std::string& source, const std::string& branch) {
    const std::string prefix = branch == "teacher" ? "teacher/" : "";
    ParamCtx P(ck.state, prefix, /*track_grad=*/false);

    if (source == "backbone") {
        model::BackboneOut hr =
            model::forward_backbone(P, s.hr_image, data::Modality::HR, ck.config.backbone);
        return nn::val(nn::mean_rows(hr.final.tokens));
    }
    GEOSSL_CHECK(source == "fused", "feature source must be 'fused' or 'backbone'");

    model::BackboneOut hr =
        model::forward_backbone(P, s.hr_image, data::Modality::HR, ck.config.backbone);
    auto series_grids = [&](const data::ArrF& series, data::Modality m) {
        std::vector<model::TokenGrid> grids;
        const int T = series.dim(0), S = series.dim(1), ch = series.dim(3);
        const std::size_t frame = static_cast<std::size_t>(S) * S * ch;
        for (int t = 0; t < T; ++t)
            grids.push_back(model::forward_backbone(P, series.v.data() + t * frame, S, S, ch,
                                                    m, ck.config.backbone)
                               .final);
        return grids;
    };
    std::vector<model::TokenGrid> ms = series_grids(s.ms_series, data::Modality::MS);
    std::vector<model::TokenGrid> sar = series_grids(s.sar_series, data::Modality::SAR);

    int gh = hr.final.h, gw = hr.final.w;
    for (const auto& g : ms) gh = std::min(gh, g.h), gw = std::min(gw, g.w);
    for (const auto& g : sar) gh = std::min(gh, g.h), gw = std::min(gw, g.w);
    auto align = [&](model::TokenGrid g) {
        if (g.h != gh || g.w != gw) {
            g.tokens = nn::avgpool_grid(g.tokens, g.h, g.w, g.h / gh, g.w / gw);
            g.h = gh;
            g.w = gw;
        }
        return g;
    };

    model::ModalitySequence hr_seq{data::Modality::HR, {align(hr.final)}, {0.0}};
    model::ModalitySequence ms_seq{data::Modality::MS, {}, {}};
    for (int t = 0; t < s.t_ms(); ++t) {
        ms_seq.frames.push_back(align(ms[static_cast<size_t>(t)]));
        ms_seq.days.push_back(s.acquisition_days[static_cast<size_t>(t)]);
    }
    model::ModalitySequence sar_seq{data::Modality::SAR, {}, {}};
    for (int t = 0; t < s.t_sar(); ++t) {
        sar_seq.frames.push_back(align(sar[static_cast<size_t>(t)]));
        sar_seq.days.push_back(s.acquisition_days[static_cast<size_t>(s.t_ms() + t)]);
    }
    model::FusedFeature fused = model::fuse(P, {hr_seq, ms_seq, sar_seq}, ck.config.fusion);
    return nn::val(nn::mean_rows(fused.data));
}

}  // namespace

FeatureMatrix extract_features(const model::Checkpoint& ck,
                               const std::vector<data::GeoSample>& dataset,
                               const std::string& source, const std::string& branch) {
    GEOSSL_CHECK(!dataset.empty(), "extract_features: empty dataset");
    GEOSSL_CHECK(branch == "teacher" || branch == "student",
                 "branch must be 'teacher' or 'student'");
    FeatureMatrix out;
    Tensor first = sample_feature(ck, dataset[0], source, branch);
    out.features = Tensor(static_cast<int>(dataset.size()), first.cols());
    for (size_t i = 0; i < dataset.size(); ++i) {
        Tensor f = i == 0 ? first : sample_feature(ck, dataset[i], source, branch);
        for (int c = 0; c < f.cols(); ++c) out.features.at(static_cast<int>(i), c) = f.at(0, c);
        out.labels.push_back(data::majority_label(dataset[i].labels));
    }
    return out;
}

EvalReport knn_eval(const Tensor& train_features, const std::vector<int>& train_labels,
                    const Tensor& test_features, const std::vector<int>& test_labels, int k) {
    const int n_train = train_features.rows(), n_test = test_features.rows();
    GEOSSL_CHECK(n_train > 0 && n_test > 0, "knn_eval: empty split");
    GEOSSL_CHECK(k >= 1 && k <= n_train, "knn_eval: k must lie in [1, n_train]");
    GEOSSL_CHECK(static_cast<int>(train_labels.size()) == n_train &&
                     static_cast<int>(test_labels.size()) == n_test,
                 "knn_eval: label count mismatch");
    const int d = train_features.cols();

    auto normalized = [&](const Tensor& m) {
        Tensor out = m;
        for (int r = 0; r < out.rows(); ++r) {
            double s = 0;
            for (int c = 0; c < d; ++c) s += out.at(r, c) * out.at(r, c);
            const double inv = 1.0 / std::sqrt(s + 1e-12);
            for (int c = 0; c < d; ++c) out.at(r, c) *= inv;
        }
        return out;
    };
    Tensor tr = normalized(train_features), te = normalized(test_features);
    const int n_classes = 1 + std::max(*std::max_element(train_labels.begin(), train_labels.end()),
                                       *std::max_element(test_labels.begin(), test_labels.end()));

    std::vector<double> class_hit(static_cast<size_t>(n_classes)),
        class_total(static_cast<size_t>(n_classes));
    int hits = 0;
    std::vector<std::pair<double, int>> sims(static_cast<size_t>(n_train));
    for (int i = 0; i < n_test; ++i) {
        for (int j = 0; j < n_train; ++j) {
            double s = 0;
            for (int c = 0; c < d; ++c) s += te.at(i, c) * tr.at(j, c);
            sims[static_cast<size_t>(j)] = {s, j};
        }
        std::partial_sort(sims.begin(), sims.begin() + k, sims.end(),
                          [](const auto& a, const auto& b) {
                              if (a.first != b.first) return a.first > b.first;
                              return a.second < b.second;
                          });
        std::vector<int> votes(static_cast<size_t>(n_classes));
        std::vector<double> weight(static_cast<size_t>(n_classes));
        for (int j = 0; j < k; ++j) {
            const int lbl = train_labels[static_cast<size_t>(sims[static_cast<size_t>(j)].second)];
            votes[static_cast<size_t>(lbl)]++;
            weight[static_cast<size_t>(lbl)] += sims[static_cast<size_t>(j)].first;
        }
        int best = 0;
        for (int c = 1; c < n_classes; ++c) {
            if (votes[static_cast<size_t>(c)] > votes[static_cast<size_t>(best)] ||
                (votes[static_cast<size_t>(c)] == votes[static_cast<size_t>(best)] &&
                 weight[static_cast<size_t>(c)] > weight[static_cast<size_t>(best)]))
                best = c;
        }
        const int truth = test_labels[static_cast<size_t>(i)];
        class_total[static_cast<size_t>(truth)] += 1;
        if (best == truth) {
            hits++;
            class_hit[static_cast<size_t>(truth)] += 1;
        }
    }

    EvalReport rep;
    rep.k = k;
    rep.accuracy = static_cast<double>(hits) / n_test;
    for (int c = 0; c < n_classes; ++c)
        rep.per_class_accuracy.push_back(
            class_total[static_cast<size_t>(c)] > 0
                ? class_hit[static_cast<size_t>(c)] / class_total[static_cast<size_t>(c)]
                : 0.0);
    return rep;
}

AttentionDump dump_query_attention(const model::Checkpoint& ck, const data::GeoSample& sample,
                                   const data::AugSpec& aug, std::uint64_t seed,
                                   const std::string& branch) {
    const std::string prefix = branch == "teacher" ? "teacher/" : "";
    GEOSSL_CHECK(ck.state.contains(prefix + "qsacl/queries"),
                 "checkpoint lacks query-aggregation weights for branch " + branch);
    ParamCtx P(ck.state, prefix, /*track_grad=*/false);

    Rng rng(seed);
    data::ViewSet views = data::make_views(sample, aug, rng);

    AttentionDump dump;
    for (int v = 0; v < static_cast<int>(views.views.size()); ++v) {
        model::ViewEncoding enc =
            model::encode_view(P, views, v, ck.config, branch == "teacher", ck.state);
        Tensor maps;  // (m x h*w)
        model::qsacl_aggregate(P, enc.fused.data, ck.config.objectives, &maps);
        AttentionDump::ViewMaps vm;
        vm.h = enc.fused.h;
        vm.w = enc.fused.w;
        vm.is_global = views.views[static_cast<size_t>(v)].is_global;
        for (int q = 0; q < maps.rows(); ++q) {
            Tensor m(vm.h, vm.w);
            for (int i = 0; i < vm.h * vm.w; ++i) m[i] = maps.at(q, i);
            vm.maps.push_back(std::move(m));
        }
        dump.views.push_back(std::move(vm));
    }
    return dump;
}

}  // namespace geossl::eval
