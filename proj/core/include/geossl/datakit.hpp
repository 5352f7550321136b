#pragma once

#include "geossl/rng.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace geossl::data {

/// Row-major dense array with an explicit shape, float32 storage (matches
/// the on-disk dataset format bit for bit).
template <typename T>
struct NdArray {
    std::vector<int> shape;
    std::vector<T> v;

    NdArray() = default;
    explicit NdArray(std::vector<int> s) : shape(std::move(s)) {
        std::size_t n = 1;
        for (int d : shape) n *= static_cast<std::size_t>(d);
        v.assign(n, T{});
    }
    int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
    std::size_t size() const { return v.size(); }
    bool operator==(const NdArray&) const = default;
};

using ArrF = NdArray<float>;
using ArrI = NdArray<std::int32_t>;

enum class Modality { HR, MS, SAR };
inline const char* modality_name(Modality m) {
    switch (m) {
        case Modality::HR: return "hr";
        case Modality::MS: return "ms";
        default: return "sar";
    }
}
inline int modality_channels(Modality m) {
    switch (m) {
        case Modality::HR: return 3;
        case Modality::MS: return 10;
        default: return 2;
    }
}

/// One geo-aligned multi-modal training record.
struct GeoSample {
    ArrF hr_image;    // (H_hr, W_hr, 3), reflectance in [0,1]
    ArrF ms_series;   // (T_ms, H_ms, W_ms, 10)
    ArrF sar_series;  // (T_sar, H_ms, W_ms, 2)
    ArrI labels;      // (H_ms, W_ms), class ids in [0, K)
    std::vector<std::int32_t> acquisition_days;  // T_ms then T_sar day offsets
    float lon = 0.f;  // degrees in [-180, 180)
    float lat = 0.f;  // degrees in [-90, 90)

    int h_ms() const { return ms_series.dim(1); }
    int w_ms() const { return ms_series.dim(2); }
    int t_ms() const { return ms_series.dim(0); }
    int t_sar() const { return sar_series.dim(0); }
};

struct DatasetSpec {
    int count = 1;
    int num_classes = 4;   // K
    int h_ms = 32;
    int w_ms = 32;
    int t_ms = 12;
    int t_sar = 6;
    std::uint64_t seed = 0;
};

/// Deterministic synthetic scenes: smoothed class blobs, per-class channel
/// signatures per modality, seasonal modulation of the time series, uniform
/// geo-locations.
std::vector<GeoSample> generate_dataset(const DatasetSpec& spec);
GeoSample generate_sample(const DatasetSpec& spec, int index);

/// Crop / flip / rotation bookkeeping for one view of one modality, in that
/// modality's source-pixel units. Output views are square.
struct ViewGeometry {
    double x0 = 0, y0 = 0;  // crop origin (source px)
    double w = 0, h = 0;    // crop extent (source px)
    bool flip_h = false;
    int rot_quarter = 0;    // CCW quarter turns in {0,1,2,3}
    double scale = 1.0;     // output-size / crop-size

    double out_size() const { return w * scale; }
};

/// Maps a continuous point in view coordinates back to source coordinates
/// (inverting rotation, then flip, then crop+resize).
std::pair<double, double> view_to_source(const ViewGeometry& g, double x, double y);
/// Maps a source point into view coordinates. Returns false if outside.
bool source_to_view(const ViewGeometry& g, double sx, double sy, double& vx, double& vy);

struct ModalityView {
    ArrF data;  // HR: (S,S,3); MS: (T,S,S,10); SAR: (T,S,S,2)
    ViewGeometry geom;
};

struct View {
    ModalityView hr;
    ModalityView ms;
    ModalityView sar;
    ArrI labels;  // label map at the MS view resolution
    bool is_global = false;
};

struct ViewSet {
    std::vector<View> views;  // 2 global views first, then locals
    std::vector<int> ms_idx_student, ms_idx_teacher;
    std::vector<int> sar_idx_student, sar_idx_teacher;
    std::vector<double> ms_days_student, ms_days_teacher;
    std::vector<double> sar_days_student, sar_days_teacher;

    int n_global() const { return 2; }
    int n_local() const { return static_cast<int>(views.size()) - 2; }
};

struct AugSpec {
    int n_local = 6;
    int global_ms_size = 16;  // MS-view output size (HR gets 8x)
    int local_ms_size = 8;
    double global_area_min = 0.40, global_area_max = 1.0;
    double local_area_min = 0.05, local_area_max = 0.40;
    int ms_frames = 10;   // frames sampled per iteration
    int sar_frames = 5;
    int day_jitter = 5;   // +- days applied to sampled acquisition dates
    double blur_prob = 0.5;
    double blur_sigma_min = 0.3, blur_sigma_max = 1.2;
    double solarize_prob = 0.2;
    double solarize_threshold = 0.7;
    double jitter_prob = 0.8;
    double jitter_strength = 0.2;
    double flip_prob = 0.5;
    bool random_rotation = true;
};

/// Builds 2 global + n local multi-modal crops with per-view geometry and a
/// shared temporal subsample per branch.
ViewSet make_views(const GeoSample& sample, const AugSpec& aug, Rng& rng);

/// Feature-grid index pairs whose source footprints coincide (mutual cell
/// center containment after inverting both view transforms). Both views use
/// the same (gh x gw) grid; geometries must be in the same source units.
std::vector<std::pair<int, int>> correspondence(const ViewGeometry& a, const ViewGeometry& b,
                                                int gh, int gw);

void write_dataset(const std::vector<GeoSample>& samples, const std::string& path,
                   const std::string& spec_meta_json = "null");
std::vector<GeoSample> read_dataset(const std::string& path);
std::string dataset_meta(const std::string& path);

/// Picks frames (first dim) of a (T,H,W,C) series by index.
ArrF select_frames(const ArrF& series, const std::vector<int>& idx);

/// Scene label = majority class of the label map.
int majority_label(const ArrI& labels);

/// Majority-pools a label map down to (gh x gw).
ArrI pool_labels(const ArrI& labels, int gh, int gw, int num_classes);

inline constexpr const char* kDatasetMagic = "MMDS1\n";

}  // namespace geossl::data
