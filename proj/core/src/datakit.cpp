#include "geossl/datakit.hpp"

#include "geossl/blobfile.hpp"
#include "geossl/tensor.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace geossl::data {

using json = nlohmann::json;

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

// ------------------------------------------------------------ scene synthesis

/// Smooth scalar field: coarse value-noise grid, bilinearly upsampled.
std::vector<double> value_noise(Rng& rng, int h, int w, int coarse) {
    std::vector<double> grid(static_cast<size_t>((coarse + 1) * (coarse + 1)));
    for (auto& g : grid) g = rng.normal();
    std::vector<double> out(static_cast<size_t>(h) * w);
    for (int r = 0; r < h; ++r) {
        const double fy = static_cast<double>(r) / h * coarse;
        const int y0 = static_cast<int>(fy);
        const double ty = fy - y0;
        for (int c = 0; c < w; ++c) {
            const double fx = static_cast<double>(c) / w * coarse;
            const int x0 = static_cast<int>(fx);
            const double tx = fx - x0;
            const double a = grid[static_cast<size_t>(y0) * (coarse + 1) + x0];
            const double b = grid[static_cast<size_t>(y0) * (coarse + 1) + x0 + 1];
            const double cc = grid[static_cast<size_t>(y0 + 1) * (coarse + 1) + x0];
            const double d = grid[static_cast<size_t>(y0 + 1) * (coarse + 1) + x0 + 1];
            out[static_cast<size_t>(r) * w + c] =
                (a * (1 - tx) + b * tx) * (1 - ty) + (cc * (1 - tx) + d * tx) * ty;
        }
    }
    return out;
}

struct ClassSignatures {
    // [class][channel], values in [0.15, 0.85]
    std::vector<std::vector<double>> hr, ms, sar;
    std::vector<double> phase;  // per-class seasonal phase
};

ClassSignatures class_signatures(const DatasetSpec& spec) {
    Rng rng = Rng::derive(spec.seed, 0xC1A55ULL);
    ClassSignatures s;
    const int K = spec.num_classes;
    auto draw = [&](int channels) {
        std::vector<std::vector<double>> sig(static_cast<size_t>(K));
        for (auto& row : sig) {
            row.resize(static_cast<size_t>(channels));
            for (auto& v : row) v = rng.uniform(0.15, 0.85);
        }
        return sig;
    };
    s.hr = draw(3);
    s.ms = draw(10);
    s.sar = draw(2);
    s.phase.resize(static_cast<size_t>(K));
    for (auto& p : s.phase) p = rng.uniform(0.0, kTwoPi);
    return s;
}

float clamp01(double v) { return static_cast<float>(std::min(1.0, std::max(0.0, v))); }

// --------------------------------------------------------------- view helpers

/// Bilinear sample of a (h, w, ch) float image at continuous source coords
/// (pixel centers at integer+0.5). Edges clamp.
double bilinear(const float* img, int h, int w, int ch, double sx, double sy, int c) {
    const double fx = sx - 0.5, fy = sy - 0.5;
    int x0 = static_cast<int>(std::floor(fx));
    int y0 = static_cast<int>(std::floor(fy));
    const double tx = fx - x0, ty = fy - y0;
    auto px = [&](int y, int x) {
        y = std::min(h - 1, std::max(0, y));
        x = std::min(w - 1, std::max(0, x));
        return static_cast<double>(img[(static_cast<size_t>(y) * w + x) * ch + c]);
    };
    return (px(y0, x0) * (1 - tx) + px(y0, x0 + 1) * tx) * (1 - ty) +
           (px(y0 + 1, x0) * (1 - tx) + px(y0 + 1, x0 + 1) * tx) * ty;
}

/// Crop + resize one (h, w, ch) image to (S, S, ch).
ArrF crop_resize(const float* img, int h, int w, int ch, const ViewGeometry& g, int S) {
    ArrF out({S, S, ch});
    for (int r = 0; r < S; ++r)
        for (int c = 0; c < S; ++c) {
            const double sx = g.x0 + (c + 0.5) / g.scale;
            const double sy = g.y0 + (r + 0.5) / g.scale;
            for (int k = 0; k < ch; ++k)
                out.v[(static_cast<size_t>(r) * S + c) * ch + k] =
                    static_cast<float>(bilinear(img, h, w, ch, sx, sy, k));
        }
    return out;
}

ArrI crop_resize_nearest(const ArrI& img, const ViewGeometry& g, int S) {
    const int h = img.dim(0), w = img.dim(1);
    ArrI out({S, S});
    for (int r = 0; r < S; ++r)
        for (int c = 0; c < S; ++c) {
            int sx = static_cast<int>(g.x0 + (c + 0.5) / g.scale);
            int sy = static_cast<int>(g.y0 + (r + 0.5) / g.scale);
            sx = std::min(w - 1, std::max(0, sx));
            sy = std::min(h - 1, std::max(0, sy));
            out.v[static_cast<size_t>(r) * S + c] = img.v[static_cast<size_t>(sy) * w + sx];
        }
    return out;
}

template <typename T>
void flip_image(NdArray<T>& img, int S, int ch) {
    for (int r = 0; r < S; ++r)
        for (int c = 0; c < S / 2; ++c)
            for (int k = 0; k < ch; ++k)
                std::swap(img.v[(static_cast<size_t>(r) * S + c) * ch + k],
                          img.v[(static_cast<size_t>(r) * S + (S - 1 - c)) * ch + k]);
}

/// One CCW quarter turn: out(r,c) = in(c, S-1-r).
template <typename T>
void rot90_image(NdArray<T>& img, int S, int ch) {
    NdArray<T> out = img;
    for (int r = 0; r < S; ++r)
        for (int c = 0; c < S; ++c)
            for (int k = 0; k < ch; ++k)
                out.v[(static_cast<size_t>(r) * S + c) * ch + k] =
                    img.v[(static_cast<size_t>(c) * S + (S - 1 - r)) * ch + k];
    img = std::move(out);
}

void gaussian_blur(ArrF& img, int S, int ch, double sigma) {
    const int radius = std::max(1, static_cast<int>(std::ceil(2.5 * sigma)));
    std::vector<double> kernel(static_cast<size_t>(2 * radius + 1));
    double ksum = 0;
    for (int i = -radius; i <= radius; ++i) {
        kernel[static_cast<size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
        ksum += kernel[static_cast<size_t>(i + radius)];
    }
    for (auto& k : kernel) k /= ksum;

    ArrF tmp = img;
    auto idx = [&](int r, int c, int k) {
        return (static_cast<size_t>(r) * S + c) * ch + k;
    };
    for (int r = 0; r < S; ++r)
        for (int c = 0; c < S; ++c)
            for (int k = 0; k < ch; ++k) {
                double acc = 0;
                for (int i = -radius; i <= radius; ++i) {
                    const int cc = std::min(S - 1, std::max(0, c + i));
                    acc += kernel[static_cast<size_t>(i + radius)] * img.v[idx(r, cc, k)];
                }
                tmp.v[idx(r, c, k)] = static_cast<float>(acc);
            }
    for (int r = 0; r < S; ++r)
        for (int c = 0; c < S; ++c)
            for (int k = 0; k < ch; ++k) {
                double acc = 0;
                for (int i = -radius; i <= radius; ++i) {
                    const int rr = std::min(S - 1, std::max(0, r + i));
                    acc += kernel[static_cast<size_t>(i + radius)] * tmp.v[idx(rr, c, k)];
                }
                img.v[idx(r, c, k)] = static_cast<float>(acc);
            }
}

struct GeomDraw {
    double x0, y0, size;  // crop in MS units
    bool flip;
    int rot;
};

GeomDraw draw_crop(Rng& rng, const AugSpec& aug, int src, bool global) {
    const double amin = global ? aug.global_area_min : aug.local_area_min;
    const double amax = global ? aug.global_area_max : aug.local_area_max;
    const double area = rng.uniform(amin, amax);
    int size = std::max(2, static_cast<int>(std::lround(std::sqrt(area) * src)));
    size = std::min(size, src);
    const int max_off = src - size;
    GeomDraw g;
    g.size = size;
    g.x0 = max_off > 0 ? static_cast<double>(rng.below(max_off + 1)) : 0.0;
    g.y0 = max_off > 0 ? static_cast<double>(rng.below(max_off + 1)) : 0.0;
    g.flip = rng.bernoulli(aug.flip_prob);
    g.rot = aug.random_rotation ? static_cast<int>(rng.below(4)) : 0;
    return g;
}

std::vector<int> sample_frames(Rng& rng, int total, int want) {
    want = std::min(want, total);
    std::vector<int> all(static_cast<size_t>(total));
    std::iota(all.begin(), all.end(), 0);
    for (int i = 0; i < want; ++i) {
        const int j = i + static_cast<int>(rng.below(total - i));
        std::swap(all[static_cast<size_t>(i)], all[static_cast<size_t>(j)]);
    }
    all.resize(static_cast<size_t>(want));
    std::sort(all.begin(), all.end());
    return all;
}

}  // namespace

// --------------------------------------------------------------------- scenes

GeoSample generate_sample(const DatasetSpec& spec, int index) {
    const ClassSignatures sig = class_signatures(spec);
    const int K = spec.num_classes;
    const int H = spec.h_ms, W = spec.w_ms;
    const int Hh = H * 8, Wh = W * 8;

    Rng rng = Rng::derive(spec.seed, 0x5A3FULL, static_cast<std::uint64_t>(index));

    GeoSample s;
    s.lon = static_cast<float>(rng.uniform(-180.0, 180.0));
    s.lat = static_cast<float>(rng.uniform(-90.0, 90.0));

    // class blobs: per-class smooth fields, label = argmax
    std::vector<std::vector<double>> fields(static_cast<size_t>(K));
    for (auto& f : fields) {
        f = value_noise(rng, H, W, 4);
        const auto fine = value_noise(rng, H, W, 8);
        for (size_t i = 0; i < f.size(); ++i) f[i] += 0.5 * fine[i];
    }
    s.labels = ArrI({H, W});
    for (int r = 0; r < H; ++r)
        for (int c = 0; c < W; ++c) {
            int best = 0;
            for (int k = 1; k < K; ++k)
                if (fields[static_cast<size_t>(k)][static_cast<size_t>(r) * W + c] >
                    fields[static_cast<size_t>(best)][static_cast<size_t>(r) * W + c])
                    best = k;
            s.labels.v[static_cast<size_t>(r) * W + c] = best;
        }

    const double brightness = rng.uniform(0.9, 1.1);
    const auto hr_texture = value_noise(rng, Hh, Wh, 32);
    s.hr_image = ArrF({Hh, Wh, 3});
    for (int r = 0; r < Hh; ++r)
        for (int c = 0; c < Wh; ++c) {
            const int cls = s.labels.v[static_cast<size_t>(r / 8) * W + c / 8];
            const double tex = 0.05 * hr_texture[static_cast<size_t>(r) * Wh + c];
            for (int k = 0; k < 3; ++k)
                s.hr_image.v[(static_cast<size_t>(r) * Wh + c) * 3 + k] = clamp01(
                    brightness * sig.hr[static_cast<size_t>(cls)][static_cast<size_t>(k)] +
                    tex + 0.02 * rng.normal());
        }

    s.acquisition_days.resize(static_cast<size_t>(spec.t_ms + spec.t_sar));
    for (auto& d : s.acquisition_days) d = static_cast<std::int32_t>(rng.below(365));
    std::sort(s.acquisition_days.begin(), s.acquisition_days.begin() + spec.t_ms);
    std::sort(s.acquisition_days.begin() + spec.t_ms, s.acquisition_days.end());

    auto fill_series = [&](ArrF& series, int T, int ch,
                           const std::vector<std::vector<double>>& csig, int day_base) {
        series = ArrF({T, H, W, ch});
        const auto tex = value_noise(rng, H, W, 8);
        for (int t = 0; t < T; ++t) {
            const double day = s.acquisition_days[static_cast<size_t>(day_base + t)];
            for (int r = 0; r < H; ++r)
                for (int c = 0; c < W; ++c) {
                    const int cls = s.labels.v[static_cast<size_t>(r) * W + c];
                    const double season =
                        1.0 + 0.10 * std::sin(kTwoPi * day / 365.0 +
                                              sig.phase[static_cast<size_t>(cls)]);
                    const double tx = 0.04 * tex[static_cast<size_t>(r) * W + c];
                    for (int k = 0; k < ch; ++k) {
                        const double v =
                            csig[static_cast<size_t>(cls)][static_cast<size_t>(k)] * season +
                            tx + 0.02 * rng.normal();
                        series.v[((static_cast<size_t>(t) * H + r) * W + c) * ch + k] =
                            clamp01(v);
                    }
                }
        }
    };
    fill_series(s.ms_series, spec.t_ms, 10, sig.ms, 0);
    fill_series(s.sar_series, spec.t_sar, 2, sig.sar, spec.t_ms);
    return s;
}

std::vector<GeoSample> generate_dataset(const DatasetSpec& spec) {
    GEOSSL_CHECK(spec.count >= 1, "dataset count must be >= 1");
    GEOSSL_CHECK(spec.num_classes >= 2, "dataset needs at least 2 classes");
    GEOSSL_CHECK(spec.h_ms > 0 && spec.w_ms > 0 && spec.t_ms >= 1 && spec.t_sar >= 1,
                 "dataset sizes must be positive");
    std::vector<GeoSample> out;
    out.reserve(static_cast<size_t>(spec.count));
    for (int i = 0; i < spec.count; ++i) out.push_back(generate_sample(spec, i));
    return out;
}

// ------------------------------------------------------------------- geometry

std::pair<double, double> view_to_source(const ViewGeometry& g, double x, double y) {
    const double S = g.out_size();
    for (int i = 0; i < g.rot_quarter; ++i) {
        const double nx = S - y;
        y = x;
        x = nx;
    }
    if (g.flip_h) x = S - x;
    return {g.x0 + x / g.scale, g.y0 + y / g.scale};
}

bool source_to_view(const ViewGeometry& g, double sx, double sy, double& vx, double& vy) {
    const double S = g.out_size();
    double x = (sx - g.x0) * g.scale;
    double y = (sy - g.y0) * g.scale;
    if (g.flip_h) x = S - x;
    for (int i = 0; i < g.rot_quarter; ++i) {
        const double ny = S - x;
        x = y;
        y = ny;
    }
    vx = x;
    vy = y;
    return x >= 0 && x < S && y >= 0 && y < S;
}

std::vector<std::pair<int, int>> correspondence(const ViewGeometry& a, const ViewGeometry& b,
                                                int gh, int gw) {
    std::vector<std::pair<int, int>> pairs;
    const double sa = a.out_size(), sb = b.out_size();
    const double cell_ax = sa / gw, cell_ay = sa / gh;
    const double cell_bx = sb / gw, cell_by = sb / gh;
    for (int i = 0; i < gh; ++i)
        for (int j = 0; j < gw; ++j) {
            const auto [sx, sy] = view_to_source(a, (j + 0.5) * cell_ax, (i + 0.5) * cell_ay);
            double vx, vy;
            if (!source_to_view(b, sx, sy, vx, vy)) continue;
            const int bj = static_cast<int>(vx / cell_bx);
            const int bi = static_cast<int>(vy / cell_by);
            if (bi < 0 || bi >= gh || bj < 0 || bj >= gw) continue;
            // mutual containment: b's cell center must land back in cell (i,j)
            const auto [tx, ty] =
                view_to_source(b, (bj + 0.5) * cell_bx, (bi + 0.5) * cell_by);
            double ax, ay;
            if (!source_to_view(a, tx, ty, ax, ay)) continue;
            if (static_cast<int>(ax / cell_ax) != j || static_cast<int>(ay / cell_ay) != i)
                continue;
            pairs.emplace_back(i * gw + j, bi * gw + bj);
        }
    return pairs;
}

// ---------------------------------------------------------------------- views

ViewSet make_views(const GeoSample& sample, const AugSpec& aug, Rng& rng) {
    GEOSSL_CHECK(aug.n_local >= 1, "need at least one local view");
    GEOSSL_CHECK(aug.global_area_min > 0 && aug.global_area_max <= 1.0 &&
                     aug.local_area_min > 0 && aug.local_area_max <= 1.0,
                 "crop area fractions must lie in (0, 1]");
    GEOSSL_CHECK(aug.global_ms_size >= 4 && aug.local_ms_size >= 4,
                 "view sizes must cover at least one token patch");
    const int src = sample.w_ms();
    GEOSSL_CHECK(sample.h_ms() == src, "square MS grids expected");

    ViewSet vs;
    vs.ms_idx_student = sample_frames(rng, sample.t_ms(), aug.ms_frames);
    vs.ms_idx_teacher = sample_frames(rng, sample.t_ms(), aug.ms_frames);
    vs.sar_idx_student = sample_frames(rng, sample.t_sar(), aug.sar_frames);
    vs.sar_idx_teacher = sample_frames(rng, sample.t_sar(), aug.sar_frames);

    auto jitter_days = [&](const std::vector<int>& idx, int base) {
        std::vector<double> days;
        days.reserve(idx.size());
        for (int i : idx) {
            const int j = aug.day_jitter > 0
                              ? static_cast<int>(rng.below(2 * aug.day_jitter + 1)) -
                                    aug.day_jitter
                              : 0;
            days.push_back(static_cast<double>(
                sample.acquisition_days[static_cast<size_t>(base + i)] + j));
        }
        return days;
    };
    vs.ms_days_student = jitter_days(vs.ms_idx_student, 0);
    vs.ms_days_teacher = jitter_days(vs.ms_idx_teacher, 0);
    vs.sar_days_student = jitter_days(vs.sar_idx_student, sample.t_ms());
    vs.sar_days_teacher = jitter_days(vs.sar_idx_teacher, sample.t_ms());

    const int n_views = 2 + aug.n_local;
    for (int v = 0; v < n_views; ++v) {
        const bool global = v < 2;
        const int S_ms = global ? aug.global_ms_size : aug.local_ms_size;
        const GeomDraw gd = draw_crop(rng, aug, src, global);

        View view;
        view.is_global = global;

        ViewGeometry gm;
        gm.x0 = gd.x0;
        gm.y0 = gd.y0;
        gm.w = gm.h = gd.size;
        gm.flip_h = gd.flip;
        gm.rot_quarter = gd.rot;
        gm.scale = S_ms / gd.size;

        ViewGeometry gh = gm;  // HR geometry: same box in HR pixel units
        gh.x0 *= 8;
        gh.y0 *= 8;
        gh.w *= 8;
        gh.h *= 8;
        gh.scale = (S_ms * 8) / gh.w;

        // HR
        const int S_hr = S_ms * 8;
        ArrF hr = crop_resize(sample.hr_image.v.data(), sample.hr_image.dim(0),
                              sample.hr_image.dim(1), 3, gh, S_hr);
        if (rng.bernoulli(aug.blur_prob))
            gaussian_blur(hr, S_hr, 3, rng.uniform(aug.blur_sigma_min, aug.blur_sigma_max));
        if (rng.bernoulli(aug.jitter_prob)) {
            for (int k = 0; k < 3; ++k) {
                const double gain = 1.0 + aug.jitter_strength * (rng.uniform() * 2 - 1);
                const double shift = aug.jitter_strength * 0.5 * (rng.uniform() * 2 - 1);
                for (int p = 0; p < S_hr * S_hr; ++p) {
                    auto& px = hr.v[static_cast<size_t>(p) * 3 + k];
                    px = clamp01(gain * px + shift);
                }
            }
        }
        if (rng.bernoulli(aug.solarize_prob)) {
            for (auto& px : hr.v)
                if (px >= aug.solarize_threshold) px = 1.f - px;
        }
        if (gd.flip) flip_image(hr, S_hr, 3);
        for (int i = 0; i < gd.rot; ++i) rot90_image(hr, S_hr, 3);
        view.hr = {std::move(hr), gh};

        // MS / SAR: geometric + temporal only. Views keep every source frame
        // cropped; the per-branch temporal index lists select within them.
        auto series_view = [&](const ArrF& series, int ch) {
            const int T = series.dim(0);
            ArrF out({T, S_ms, S_ms, ch});
            const std::size_t frame_in = static_cast<std::size_t>(src) * src * ch;
            const std::size_t frame_out = static_cast<std::size_t>(S_ms) * S_ms * ch;
            for (int t = 0; t < T; ++t) {
                ArrF f = crop_resize(series.v.data() + t * frame_in, src, src, ch, gm, S_ms);
                if (gd.flip) flip_image(f, S_ms, ch);
                for (int i = 0; i < gd.rot; ++i) rot90_image(f, S_ms, ch);
                std::copy(f.v.begin(), f.v.end(),
                          out.v.begin() + static_cast<std::ptrdiff_t>(t * frame_out));
            }
            return out;
        };
        view.ms = {series_view(sample.ms_series, 10), gm};
        view.sar = {series_view(sample.sar_series, 2), gm};

        ArrI lab = crop_resize_nearest(sample.labels, gm, S_ms);
        if (gd.flip) flip_image(lab, S_ms, 1);
        for (int i = 0; i < gd.rot; ++i) rot90_image(lab, S_ms, 1);
        view.labels = std::move(lab);

        vs.views.push_back(std::move(view));
    }
    return vs;
}

ArrF select_frames(const ArrF& series, const std::vector<int>& idx) {
    const int h = series.dim(1), w = series.dim(2), ch = series.dim(3);
    ArrF out({static_cast<int>(idx.size()), h, w, ch});
    const std::size_t frame = static_cast<std::size_t>(h) * w * ch;
    for (std::size_t i = 0; i < idx.size(); ++i)
        std::copy(series.v.begin() + idx[i] * static_cast<std::ptrdiff_t>(frame),
                  series.v.begin() + (idx[i] + 1) * static_cast<std::ptrdiff_t>(frame),
                  out.v.begin() + static_cast<std::ptrdiff_t>(i * frame));
    return out;
}

// ------------------------------------------------------------------ labels

int majority_label(const ArrI& labels) {
    std::vector<int> counts;
    for (int v : labels.v) {
        if (v >= static_cast<int>(counts.size())) counts.resize(static_cast<size_t>(v) + 1);
        counts[static_cast<size_t>(v)]++;
    }
    return static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

ArrI pool_labels(const ArrI& labels, int gh, int gw, int num_classes) {
    const int h = labels.dim(0), w = labels.dim(1);
    ArrI out({gh, gw});
    std::vector<int> counts(static_cast<size_t>(num_classes));
    for (int i = 0; i < gh; ++i)
        for (int j = 0; j < gw; ++j) {
            std::fill(counts.begin(), counts.end(), 0);
            const int r0 = i * h / gh, r1 = (i + 1) * h / gh;
            const int c0 = j * w / gw, c1 = (j + 1) * w / gw;
            for (int r = r0; r < std::max(r0 + 1, r1); ++r)
                for (int c = c0; c < std::max(c0 + 1, c1); ++c)
                    counts[static_cast<size_t>(labels.v[static_cast<size_t>(r) * w + c])]++;
            out.v[static_cast<size_t>(i) * gw + j] = static_cast<int>(
                std::max_element(counts.begin(), counts.end()) - counts.begin());
        }
    return out;
}

// ----------------------------------------------------------------------- io

void write_dataset(const std::vector<GeoSample>& samples, const std::string& path,
                   const std::string& spec_meta_json) {
    io::BlobWriter w(kDatasetMagic);
    json meta;
    meta["count"] = samples.size();
    meta["spec"] = json::parse(spec_meta_json);
    w.set_meta(meta.dump());
    char name[64];
    for (size_t i = 0; i < samples.size(); ++i) {
        const GeoSample& s = samples[i];
        auto field = [&](const char* suffix) {
            std::snprintf(name, sizeof(name), "s%05zu/%s", i, suffix);
            return std::string(name);
        };
        w.add_f32(field("hr_image"), s.hr_image.shape, s.hr_image.v.data());
        w.add_f32(field("ms_series"), s.ms_series.shape, s.ms_series.v.data());
        w.add_f32(field("sar_series"), s.sar_series.shape, s.sar_series.v.data());
        w.add_i32(field("labels"), s.labels.shape, s.labels.v.data());
        w.add_i32(field("acquisition_days"),
                  {static_cast<int>(s.acquisition_days.size())}, s.acquisition_days.data());
        const float geo[2] = {s.lon, s.lat};
        w.add_f32(field("geo"), {2}, geo);
    }
    w.write(path, /*with_checksums=*/false);
}

std::vector<GeoSample> read_dataset(const std::string& path) {
    io::BlobReader r = io::BlobReader::open(path, kDatasetMagic, /*with_checksums=*/false);
    const json meta = json::parse(r.meta_json());
    const size_t count = meta.at("count").get<size_t>();
    std::vector<GeoSample> out;
    out.reserve(count);
    char name[64];
    for (size_t i = 0; i < count; ++i) {
        auto field = [&](const char* suffix) {
            std::snprintf(name, sizeof(name), "s%05zu/%s", i, suffix);
            return std::string(name);
        };
        GeoSample s;
        auto load_f = [&](const std::string& n, ArrF& dst, int want_rank) {
            const io::BlobEntry& e = r.entry(n);
            if (static_cast<int>(e.shape.size()) != want_rank)
                throw io::FileError(io::FileErrorCode::shape,
                                    "array '" + n + "' has unexpected rank");
            dst.shape = e.shape;
            dst.v = r.read_f32(n);
        };
        load_f(field("hr_image"), s.hr_image, 3);
        load_f(field("ms_series"), s.ms_series, 4);
        load_f(field("sar_series"), s.sar_series, 4);
        const io::BlobEntry& le = r.entry(field("labels"));
        s.labels.shape = le.shape;
        s.labels.v = r.read_i32(field("labels"));
        s.acquisition_days = r.read_i32(field("acquisition_days"));
        const auto geo = r.read_f32(field("geo"));
        if (geo.size() != 2)
            throw io::FileError(io::FileErrorCode::shape, "geo array must hold lon,lat");
        s.lon = geo[0];
        s.lat = geo[1];
        if (s.hr_image.dim(0) != 8 * s.labels.dim(0) || s.hr_image.dim(1) != 8 * s.labels.dim(1))
            throw io::FileError(io::FileErrorCode::shape,
                                "hr/ms alignment violated in stored sample");
        out.push_back(std::move(s));
    }
    return out;
}

std::string dataset_meta(const std::string& path) {
    io::BlobReader r = io::BlobReader::open(path, kDatasetMagic, false);
    return r.meta_json();
}

}  // namespace geossl::data
