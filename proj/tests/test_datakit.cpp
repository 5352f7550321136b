#include "doctest.h"

#include "geossl/blobfile.hpp"
#include "geossl/datakit.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

using namespace geossl;
using namespace geossl::data;

namespace {
std::string temp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}
}  // namespace

TEST_CASE("generate_dataset shapes follow the 8:1 alignment rule") {
    DatasetSpec spec;
    spec.count = 1;
    spec.num_classes = 4;
    spec.h_ms = spec.w_ms = 64;
    spec.t_ms = 3;
    spec.t_sar = 2;
    spec.seed = 7;
    auto ds = generate_dataset(spec);
    REQUIRE(ds.size() == 1);
    const GeoSample& s = ds[0];
    CHECK(s.hr_image.shape == std::vector<int>{512, 512, 3});
    CHECK(s.ms_series.shape == std::vector<int>{3, 64, 64, 10});
    CHECK(s.sar_series.shape == std::vector<int>{2, 64, 64, 2});
    CHECK(s.labels.shape == std::vector<int>{64, 64});
    CHECK(s.acquisition_days.size() == 5);
    CHECK(s.lon >= -180.f);
    CHECK(s.lon < 180.f);
    for (int v : s.labels.v) {
        CHECK(v >= 0);
        CHECK(v < 4);
    }
    for (float v : s.hr_image.v) {
        CHECK(v >= 0.f);
        CHECK(v <= 1.f);
    }
}

TEST_CASE("generate_dataset is a pure function of its spec") {
    DatasetSpec spec;
    spec.count = 2;
    spec.h_ms = spec.w_ms = 16;
    spec.t_ms = 2;
    spec.t_sar = 1;
    spec.seed = 1234;
    auto a = generate_dataset(spec);
    auto b = generate_dataset(spec);
    CHECK(a[0].hr_image == b[0].hr_image);
    CHECK(a[1].ms_series == b[1].ms_series);
    CHECK(a[1].labels == b[1].labels);
    CHECK(a[0].lon == b[0].lon);
}

TEST_CASE("generate_dataset rejects bad specs") {
    DatasetSpec spec;
    spec.count = 0;
    CHECK_THROWS(generate_dataset(spec));
    spec.count = 1;
    spec.num_classes = 1;
    CHECK_THROWS(generate_dataset(spec));
    spec.num_classes = 2;
    spec.h_ms = 0;
    CHECK_THROWS(generate_dataset(spec));
}

TEST_CASE("class MS signatures separate: intra-class distance < inter-class") {
    DatasetSpec spec;
    spec.count = 16;  // brute-force pass over all pixels stays fast
    spec.num_classes = 4;
    spec.h_ms = spec.w_ms = 16;
    spec.t_ms = 4;
    spec.t_sar = 1;
    spec.seed = 99;
    auto ds = generate_dataset(spec);

    // per-pixel temporal-mean MS vector, accumulated per class
    std::vector<std::vector<double>> sums(4, std::vector<double>(10, 0.0));
    std::vector<double> counts(4, 0.0);
    std::vector<std::vector<double>> pixels;
    std::vector<int> pixel_cls;
    for (const auto& s : ds) {
        const int H = s.h_ms(), W = s.w_ms(), T = s.t_ms();
        for (int r = 0; r < H; ++r)
            for (int c = 0; c < W; ++c) {
                std::vector<double> mean(10, 0.0);
                for (int t = 0; t < T; ++t)
                    for (int k = 0; k < 10; ++k)
                        mean[k] +=
                            s.ms_series.v[((static_cast<size_t>(t) * H + r) * W + c) * 10 + k] /
                            T;
                const int cls = s.labels.v[static_cast<size_t>(r) * W + c];
                for (int k = 0; k < 10; ++k) sums[cls][k] += mean[k];
                counts[cls] += 1;
                if (pixels.size() < 4000) {
                    pixels.push_back(mean);
                    pixel_cls.push_back(cls);
                }
            }
    }
    std::vector<std::vector<double>> centroid(4, std::vector<double>(10));
    for (int k = 0; k < 4; ++k)
        for (int c = 0; c < 10; ++c) centroid[k][c] = sums[k][c] / std::max(1.0, counts[k]);

    double intra = 0, inter = 0;
    int n_intra = 0, n_inter = 0;
    for (size_t i = 0; i < pixels.size(); ++i)
        for (int k = 0; k < 4; ++k) {
            double d = 0;
            for (int c = 0; c < 10; ++c) {
                const double t = pixels[i][c] - centroid[k][c];
                d += t * t;
            }
            d = std::sqrt(d);
            if (k == pixel_cls[i]) {
                intra += d;
                n_intra++;
            } else {
                inter += d;
                n_inter++;
            }
        }
    CHECK(intra / n_intra < inter / n_inter);
}

TEST_CASE("make_views produces 2 global + n local views deterministically") {
    DatasetSpec spec;
    spec.h_ms = spec.w_ms = 32;
    spec.t_ms = 6;
    spec.t_sar = 3;
    spec.seed = 5;
    GeoSample s = generate_sample(spec, 0);

    AugSpec aug;
    aug.n_local = 6;
    aug.ms_frames = 4;
    aug.sar_frames = 2;
    Rng rng(77);
    ViewSet vs = make_views(s, aug, rng);
    CHECK(vs.views.size() == 8);
    CHECK(vs.n_local() == 6);
    CHECK(vs.views[0].is_global);
    CHECK(vs.views[1].is_global);
    CHECK_FALSE(vs.views[2].is_global);
    CHECK(vs.ms_idx_student.size() == 4);
    CHECK(vs.sar_idx_teacher.size() == 2);
    for (const auto& v : vs.views) {
        const int S = v.is_global ? aug.global_ms_size : aug.local_ms_size;
        CHECK(v.ms.data.shape == std::vector<int>{6, S, S, 10});
        CHECK(v.hr.data.shape == std::vector<int>{S * 8, S * 8, 3});
        CHECK(v.labels.shape == std::vector<int>{S, S});
        CHECK(v.hr.geom.w == doctest::Approx(8 * v.ms.geom.w));
    }

    Rng rng2(77);
    ViewSet vs2 = make_views(s, aug, rng2);
    CHECK(vs.views[0].hr.data == vs2.views[0].hr.data);
    CHECK(vs.views[3].ms.data == vs2.views[3].ms.data);
    CHECK(vs.ms_idx_teacher == vs2.ms_idx_teacher);
}

TEST_CASE("identity augmentation reproduces source pixels") {
    DatasetSpec spec;
    spec.h_ms = spec.w_ms = 16;
    spec.t_ms = 2;
    spec.t_sar = 1;
    spec.seed = 3;
    GeoSample s = generate_sample(spec, 0);

    AugSpec aug;
    aug.n_local = 1;
    aug.global_ms_size = 16;  // full image at native size
    aug.global_area_min = 0.9999;
    aug.global_area_max = 1.0;
    aug.blur_prob = aug.solarize_prob = aug.jitter_prob = aug.flip_prob = 0.0;
    aug.random_rotation = false;
    aug.day_jitter = 0;
    aug.ms_frames = 2;
    aug.sar_frames = 1;
    Rng rng(1);
    ViewSet vs = make_views(s, aug, rng);
    const View& v = vs.views[0];
    REQUIRE(v.hr.data.shape == s.hr_image.shape);
    for (size_t i = 0; i < s.hr_image.v.size(); ++i)
        CHECK(v.hr.data.v[i] == doctest::Approx(s.hr_image.v[i]).epsilon(1e-6));
    for (size_t i = 0; i < s.ms_series.v.size(); ++i)
        CHECK(v.ms.data.v[i] == doctest::Approx(s.ms_series.v[i]).epsilon(1e-6));
    CHECK(v.labels == s.labels);
}

TEST_CASE("make_views rejects invalid crop ranges") {
    DatasetSpec spec;
    spec.h_ms = spec.w_ms = 16;
    spec.t_ms = 1;
    spec.t_sar = 1;
    GeoSample s = generate_sample(spec, 0);
    AugSpec aug;
    aug.global_area_min = 0.0;  // zero-area crops cannot fit
    Rng rng(1);
    CHECK_THROWS(make_views(s, aug, rng));
    AugSpec aug2;
    aug2.local_area_max = 1.5;
    CHECK_THROWS(make_views(s, aug2, rng));
}

TEST_CASE("correspondence: identity, disjoint, flip") {
    ViewGeometry ident;
    ident.x0 = ident.y0 = 0;
    ident.w = ident.h = 8;
    ident.scale = 1.0;

    auto pairs = correspondence(ident, ident, 4, 4);
    REQUIRE(pairs.size() == 16);
    for (const auto& [a, b] : pairs) CHECK(a == b);

    ViewGeometry left = ident, right = ident;
    left.w = left.h = 4;
    right.w = right.h = 4;
    right.x0 = 4;
    CHECK(correspondence(left, right, 2, 2).empty());

    ViewGeometry flipped = ident;
    flipped.flip_h = true;
    auto fp = correspondence(ident, flipped, 2, 2);
    std::set<std::pair<int, int>> got(fp.begin(), fp.end());
    std::set<std::pair<int, int>> want{{0, 1}, {1, 0}, {2, 3}, {3, 2}};
    CHECK(got == want);
}

TEST_CASE("correspondence matches a brute-force inverse-transform oracle") {
    // oracle: exhaustively scan all (cell_a, cell_b) pairs, mapping both cell
    // centers through the inverse transforms and testing mutual containment.
    Rng rng(321);
    for (int trial = 0; trial < 20; ++trial) {
        auto draw = [&](int src) {
            ViewGeometry g;
            const int size = 4 + static_cast<int>(rng.below(src - 4));
            g.w = g.h = size;
            g.x0 = static_cast<double>(rng.below(src - size + 1));
            g.y0 = static_cast<double>(rng.below(src - size + 1));
            g.flip_h = rng.bernoulli(0.5);
            g.rot_quarter = static_cast<int>(rng.below(4));
            g.scale = 8.0 / size;
            return g;
        };
        const ViewGeometry a = draw(16), b = draw(16);
        const int gh = 4, gw = 4;
        auto fast = correspondence(a, b, gh, gw);

        std::set<std::pair<int, int>> oracle;
        const double ca = a.out_size() / gw, cb = b.out_size() / gw;
        for (int i = 0; i < gh; ++i)
            for (int j = 0; j < gw; ++j)
                for (int bi = 0; bi < gh; ++bi)
                    for (int bj = 0; bj < gw; ++bj) {
                        const auto [sx, sy] =
                            view_to_source(a, (j + 0.5) * ca, (i + 0.5) * ca);
                        const auto [cx, cy] =
                            view_to_source(b, (bj + 0.5) * cb, (bi + 0.5) * cb);
                        double vx, vy, ax, ay;
                        if (!source_to_view(b, sx, sy, vx, vy)) continue;
                        if (static_cast<int>(vx / cb) != bj ||
                            static_cast<int>(vy / cb) != bi)
                            continue;
                        if (!source_to_view(a, cx, cy, ax, ay)) continue;
                        if (static_cast<int>(ax / ca) != j ||
                            static_cast<int>(ay / ca) != i)
                            continue;
                        oracle.insert({i * gw + j, bi * gw + bj});
                    }
        std::set<std::pair<int, int>> got(fast.begin(), fast.end());
        CHECK(got == oracle);
    }
}

TEST_CASE("corresponded pairs land within one grid-cell footprint in source space") {
    Rng rng(55);
    for (int trial = 0; trial < 50; ++trial) {
        auto draw = [&](int src) {
            ViewGeometry g;
            const int size = 6 + static_cast<int>(rng.below(src - 6));
            g.w = g.h = size;
            g.x0 = static_cast<double>(rng.below(src - size + 1));
            g.y0 = static_cast<double>(rng.below(src - size + 1));
            g.flip_h = rng.bernoulli(0.5);
            g.rot_quarter = static_cast<int>(rng.below(4));
            g.scale = 16.0 / size;
            return g;
        };
        const ViewGeometry a = draw(32), b = draw(32);
        const int gh = 4, gw = 4;
        const double ext_a = a.out_size() / gw / a.scale;
        const double ext_b = b.out_size() / gw / b.scale;
        for (const auto& [ia, ib] : correspondence(a, b, gh, gw)) {
            const double ca = a.out_size() / gw, cb = b.out_size() / gw;
            const auto [ax, ay] =
                view_to_source(a, (ia % gw + 0.5) * ca, (ia / gw + 0.5) * ca);
            const auto [bx, by] =
                view_to_source(b, (ib % gw + 0.5) * cb, (ib / gw + 0.5) * cb);
            CHECK(std::fabs(ax - bx) <= std::min(ext_a, ext_b) / 2 + 1e-9);
            CHECK(std::fabs(ay - by) <= std::min(ext_a, ext_b) / 2 + 1e-9);
        }
    }
}

TEST_CASE("dataset files roundtrip bit-exactly and reject corruption") {
    DatasetSpec spec;
    spec.count = 3;
    spec.h_ms = spec.w_ms = 8;
    spec.t_ms = 2;
    spec.t_sar = 1;
    spec.seed = 77;
    auto ds = generate_dataset(spec);
    const std::string path = temp_path("geossl_ds_test.bin");
    write_dataset(ds, path, R"({"seed":77})");

    auto rt = read_dataset(path);
    REQUIRE(rt.size() == 3);
    for (size_t i = 0; i < 3; ++i) {
        CHECK(rt[i].hr_image == ds[i].hr_image);
        CHECK(rt[i].ms_series == ds[i].ms_series);
        CHECK(rt[i].sar_series == ds[i].sar_series);
        CHECK(rt[i].labels == ds[i].labels);
        CHECK(rt[i].acquisition_days == ds[i].acquisition_days);
        CHECK(rt[i].lon == ds[i].lon);
    }

    // corrupt magic -> format error
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(0);
        f.put('X');
    }
    try {
        read_dataset(path);
        FAIL("expected format error");
    } catch (const io::FileError& e) {
        CHECK(e.code() == io::FileErrorCode::format);
    }

    // rewrite, then truncate mid-blob -> truncation error
    write_dataset(ds, path, "null");
    const auto full_size = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, full_size - 128);
    try {
        read_dataset(path);
        FAIL("expected truncation error");
    } catch (const io::FileError& e) {
        CHECK(e.code() == io::FileErrorCode::truncation);
    }
    std::remove(path.c_str());
}

TEST_CASE("majority label + label pooling") {
    ArrI lab({2, 2});
    lab.v = {1, 1, 2, 1};
    CHECK(majority_label(lab) == 1);
    ArrI big({4, 4});
    for (int i = 0; i < 16; ++i) big.v[static_cast<size_t>(i)] = i < 8 ? 0 : 3;
    ArrI pooled = pool_labels(big, 2, 2, 4);
    CHECK(pooled.v == std::vector<std::int32_t>{0, 0, 3, 3});
}
