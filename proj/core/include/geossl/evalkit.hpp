#pragma once

#include "geossl/trainer.hpp"

#include <string>
#include <vector>

namespace geossl::eval {

struct EvalReport {
    std::string protocol = "knn-cosine";
    int k = 20;
    double accuracy = 0.0;
    std::vector<double> per_class_accuracy;
    std::string feature_source;  // "fused" | "backbone"
    std::string branch;          // "teacher" | "student"
    std::string dataset_hash;
    std::string to_json() const;
};

struct FeatureMatrix {
    Tensor features;          // (n x d)
    std::vector<int> labels;  // majority scene label per sample
};

/// Image-level features: the mean-pooled final grid per sample, from the
/// fused representation ("fused") or the HR backbone output ("backbone"),
/// computed on the un-augmented sample with its full time series.
FeatureMatrix extract_features(const model::Checkpoint& ck,
                               const std::vector<data::GeoSample>& dataset,
                               const std::string& source, const std::string& branch);

/// Cosine-similarity k-NN vote; ties break on summed similarity.
EvalReport knn_eval(const Tensor& train_features, const std::vector<int>& train_labels,
                    const Tensor& test_features, const std::vector<int>& test_labels, int k);

struct AttentionDump {
    struct ViewMaps {
        int h = 0, w = 0;
        bool is_global = false;
        std::vector<Tensor> maps;  // one (h x w) row-normalized map per query
    };
    std::vector<ViewMaps> views;
};

/// Cross-attention maps of every query over each view's fused feature grid.
AttentionDump dump_query_attention(const model::Checkpoint& ck, const data::GeoSample& sample,
                                   const data::AugSpec& aug, std::uint64_t seed,
                                   const std::string& branch);

std::string short_hash(const std::string& text);

}  // namespace geossl::eval

namespace geossl::io {
/// 8-bit grayscale PNG of values clamped to [0, 1].
void write_png_gray(const std::string& path, const Tensor& img);
}  // namespace geossl::io
