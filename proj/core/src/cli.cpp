#include "geossl/cli.hpp"

#include "geossl/blobfile.hpp"
#include "geossl/datakit.hpp"
#include "geossl/evalkit.hpp"
#include "geossl/trainer.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

namespace geossl::cli {

namespace {

using json = nlohmann::json;

struct Common {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    bool quiet = false;
};

void log_line(const Common& c, const std::string& msg) {
    if (!c.quiet) std::cerr << msg << "\n";
}

model::FullConfig load_config(const Common& c) {
    model::FullConfig cfg;
    if (!c.config_path.empty()) {
        std::ifstream f(c.config_path);
        if (!f) throw model::ConfigError("cannot open config file: " + c.config_path);
        std::string text((std::istreambuf_iterator<char>(f)),
                         std::istreambuf_iterator<char>());
        cfg = model::apply_config_json(cfg, text);
    }
    return cfg;
}

std::string read_file_meta(const std::string& path) {
    try {
        return data::dataset_meta(path);
    } catch (...) {
        return "null";
    }
}

int cmd_gen_data(const Common& common, int count, int classes, int h_ms, int t_ms, int t_sar,
                 const std::string& out) {
    model::FullConfig cfg = load_config(common);
    if (count > 0) cfg.dataset.count = count;
    if (classes > 0) cfg.dataset.num_classes = classes;
    if (h_ms > 0) cfg.dataset.h_ms = cfg.dataset.w_ms = h_ms;
    if (t_ms > 0) cfg.dataset.t_ms = t_ms;
    if (t_sar > 0) cfg.dataset.t_sar = t_sar;
    if (common.seed) cfg.dataset.seed = *common.seed;

    log_line(common, "generating " + std::to_string(cfg.dataset.count) + " samples");
    auto samples = data::generate_dataset(cfg.dataset);
    json meta = {{"count", cfg.dataset.count},  {"classes", cfg.dataset.num_classes},
                 {"h_ms", cfg.dataset.h_ms},    {"w_ms", cfg.dataset.w_ms},
                 {"t_ms", cfg.dataset.t_ms},    {"t_sar", cfg.dataset.t_sar},
                 {"seed", cfg.dataset.seed}};
    data::write_dataset(samples, out, meta.dump());
    json report = {{"written", out}, {"count", cfg.dataset.count}};
    std::cout << report.dump() << "\n";
    return 0;
}

int cmd_pretrain(const Common& common, const std::string& data_path, const std::string& out,
                 const std::string& metrics_path, int iters, int batch,
                 const std::string& preset) {
    model::FullConfig cfg = load_config(common);
    if (iters > 0) cfg.trainer.total_iters = iters;
    if (batch > 0) cfg.trainer.batch_size = batch;
    if (common.seed) cfg.trainer.seed = *common.seed;
    if (!preset.empty()) {
        const std::string tag = "apm-ablation:";
        if (preset.rfind(tag, 0) != 0)
            throw CLI::ValidationError("--preset", "expected apm-ablation:{1/8,1/4,1/2,none}");
        model::apply_apm_preset(cfg.backbone, preset.substr(tag.size()));
    }
    cfg.validate();

    auto dataset = data::read_dataset(data_path);
    log_line(common, "dataset: " + std::to_string(dataset.size()) + " samples");
    model::ModelState state = model::build_model_state(cfg, cfg.trainer.seed);
    log_line(common, "parameters: " + std::to_string(state.total_parameters()));
    model::Trainer trainer(cfg, std::move(state));

    std::ofstream metrics;
    if (!metrics_path.empty()) {
        metrics.open(metrics_path, std::ios::trunc);
        GEOSSL_CHECK(metrics.good(), "cannot open metrics file: " + metrics_path);
    }
    model::pretrain(trainer, dataset, [&](const model::Metrics& m) {
        if (metrics.is_open()) metrics << m.to_json() << "\n";
        if (m.iter % 10 == 0)
            log_line(common, "iter " + std::to_string(m.iter) + " loss " +
                                 std::to_string(m.total));
    });
    model::save_checkpoint(trainer.state(), cfg, cfg.trainer.total_iters, out);
    json report = {{"checkpoint", out}, {"iterations", cfg.trainer.total_iters}};
    std::cout << report.dump() << "\n";
    return 0;
}

int cmd_eval_knn(const Common& common, const std::string& ckpt, const std::string& train_path,
                 const std::string& test_path, int k, const std::string& source,
                 const std::string& branch) {
    model::Checkpoint ck = model::load_checkpoint(ckpt);
    auto train = data::read_dataset(train_path);
    auto test = data::read_dataset(test_path);
    log_line(common, "extracting features (" + source + ", " + branch + ")");
    eval::FeatureMatrix ftr = eval::extract_features(ck, train, source, branch);
    eval::FeatureMatrix fte = eval::extract_features(ck, test, source, branch);
    eval::EvalReport rep = eval::knn_eval(ftr.features, ftr.labels, fte.features, fte.labels, k);
    rep.feature_source = source;
    rep.branch = branch;
    rep.dataset_hash = eval::short_hash(read_file_meta(train_path) + read_file_meta(test_path));
    std::cout << rep.to_json() << "\n";
    return 0;
}

int cmd_dump_attn(const Common& common, const std::string& ckpt, const std::string& data_path,
                  int sample_idx, const std::string& out_dir, const std::string& branch) {
    model::Checkpoint ck = model::load_checkpoint(ckpt);
    auto dataset = data::read_dataset(data_path);
    GEOSSL_CHECK(sample_idx >= 0 && sample_idx < static_cast<int>(dataset.size()),
                 "--sample outside the dataset");
    std::filesystem::create_directories(out_dir);

    const std::uint64_t seed = common.seed.value_or(0);
    eval::AttentionDump dump = eval::dump_query_attention(
        ck, dataset[static_cast<size_t>(sample_idx)], ck.config.aug, seed, branch);

    io::BlobWriter w("MMAT1\n");
    char name[64];
    int n_png = 0;
    for (size_t v = 0; v < dump.views.size(); ++v) {
        const auto& vm = dump.views[v];
        for (size_t q = 0; q < vm.maps.size(); ++q) {
            const Tensor& m = vm.maps[q];
            std::vector<float> f32(static_cast<size_t>(m.numel()));
            for (std::int64_t i = 0; i < m.numel(); ++i) f32[static_cast<size_t>(i)] =
                static_cast<float>(m[i]);
            std::snprintf(name, sizeof(name), "view%02zu/query%02zu", v, q);
            w.add_f32(name, {vm.h, vm.w}, f32.data());

            Tensor render = m;
            const double mx = m.max();
            if (mx > 0) render.scale_(1.0 / mx);
            std::snprintf(name, sizeof(name), "view%02zu_query%02zu.png", v, q);
            io::write_png_gray((std::filesystem::path(out_dir) / name).string(), render);
            ++n_png;
        }
    }
    json meta = {{"views", dump.views.size()},
                 {"queries", dump.views.empty() ? 0 : dump.views[0].maps.size()},
                 {"branch", branch},
                 {"sample", sample_idx}};
    w.set_meta(meta.dump());
    const std::string grid_path = (std::filesystem::path(out_dir) / "maps.bin").string();
    w.write(grid_path, /*with_checksums=*/false);
    json report = {{"maps", grid_path}, {"png_count", n_png}, {"views", dump.views.size()}};
    std::cout << report.dump() << "\n";
    (void)common;
    return 0;
}

int cmd_export_features(const Common& common, const std::string& ckpt,
                        const std::string& data_path, const std::string& out,
                        const std::string& source, const std::string& branch) {
    model::Checkpoint ck = model::load_checkpoint(ckpt);
    auto dataset = data::read_dataset(data_path);
    log_line(common, "extracting features (" + source + ", " + branch + ")");
    eval::FeatureMatrix fm = eval::extract_features(ck, dataset, source, branch);

    std::ofstream f(out, std::ios::trunc);
    GEOSSL_CHECK(f.good(), "cannot open output csv: " + out);
    f << "id,label";
    for (int c = 0; c < fm.features.cols(); ++c) f << ",f" << c;
    f << "\n";
    char buf[40];
    for (int r = 0; r < fm.features.rows(); ++r) {
        f << r << "," << fm.labels[static_cast<size_t>(r)];
        for (int c = 0; c < fm.features.cols(); ++c) {
            std::snprintf(buf, sizeof(buf), "%.9g", fm.features.at(r, c));
            f << "," << buf;
        }
        f << "\n";
    }
    json report = {{"csv", out}, {"rows", fm.features.rows()}, {"dims", fm.features.cols()}};
    std::cout << report.dump() << "\n";
    return 0;
}

}  // namespace

int run(const std::vector<std::string>& args) {
    CLI::App app{"desk-scale multi-modal self-supervised pre-training"};
    app.require_subcommand(1);

    Common common;
    app.add_option("--config", common.config_path, "JSON config file")->expected(1);
    std::uint64_t seed_value = 0;
    auto* seed_opt = app.add_option("--seed", seed_value, "override the run seed");
    app.add_flag("--quiet", common.quiet, "suppress progress logs");

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
    int gd_count = 0, gd_classes = 0, gd_hms = 0, gd_tms = 0, gd_tsar = 0;
    std::string gd_out;
    gen->add_option("--count", gd_count, "number of samples")->check(CLI::PositiveNumber);
    gen->add_option("--classes", gd_classes, "number of label classes")
        ->check(CLI::Range(2, 1 << 20));
    gen->add_option("--h-ms", gd_hms, "MS/SAR spatial size")->check(CLI::PositiveNumber);
    gen->add_option("--t-ms", gd_tms, "MS series length")->check(CLI::PositiveNumber);
    gen->add_option("--t-sar", gd_tsar, "SAR series length")->check(CLI::PositiveNumber);
    gen->add_option("--out", gd_out, "output dataset path")->required();

    // pretrain
    auto* pre = app.add_subcommand("pretrain", "run teacher-student pre-training");
    std::string pt_data, pt_out, pt_metrics, pt_preset;
    int pt_iters = 0, pt_batch = 0;
    pre->add_option("--data", pt_data, "training dataset path")->required();
    pre->add_option("--out", pt_out, "output checkpoint path")->required();
    pre->add_option("--metrics", pt_metrics, "JSONL metrics stream path");
    pre->add_option("--iters", pt_iters, "total iterations")->check(CLI::PositiveNumber);
    pre->add_option("--batch", pt_batch, "batch size")->check(CLI::PositiveNumber);
    pre->add_option("--preset", pt_preset,
                    "configuration preset, e.g. apm-ablation:{1/8,1/4,1/2,none}");

    // eval-knn
    auto* knn = app.add_subcommand("eval-knn", "k-NN classification on frozen features");
    std::string ek_ckpt, ek_train, ek_test, ek_source = "fused", ek_branch = "teacher";
    int ek_k = 20;
    knn->add_option("--checkpoint", ek_ckpt, "checkpoint path")->required();
    knn->add_option("--train-data", ek_train, "train split dataset")->required();
    knn->add_option("--test-data", ek_test, "test split dataset")->required();
    knn->add_option("--k", ek_k, "neighbor count")->check(CLI::PositiveNumber);
    knn->add_option("--source", ek_source, "feature source: fused | backbone")
        ->check(CLI::IsMember({"fused", "backbone"}));
    knn->add_option("--branch", ek_branch, "branch: teacher | student")
        ->check(CLI::IsMember({"teacher", "student"}));

    // dump-attn
    auto* da = app.add_subcommand("dump-attn", "export per-query attention maps");
    std::string da_ckpt, da_data, da_out, da_branch = "teacher";
    int da_sample = 0;
    da->add_option("--checkpoint", da_ckpt, "checkpoint path")->required();
    da->add_option("--data", da_data, "dataset path")->required();
    da->add_option("--sample", da_sample, "sample index")->check(CLI::NonNegativeNumber);
    da->add_option("--out", da_out, "output directory")->required();
    da->add_option("--branch", da_branch, "branch: teacher | student")
        ->check(CLI::IsMember({"teacher", "student"}));

    // export-features
    auto* ef = app.add_subcommand("export-features", "CSV feature export");
    std::string ef_ckpt, ef_data, ef_out, ef_source = "fused", ef_branch = "teacher";
    ef->add_option("--checkpoint", ef_ckpt, "checkpoint path")->required();
    ef->add_option("--data", ef_data, "dataset path")->required();
    ef->add_option("--out", ef_out, "output csv path")->required();
    ef->add_option("--source", ef_source, "feature source: fused | backbone")
        ->check(CLI::IsMember({"fused", "backbone"}));
    ef->add_option("--branch", ef_branch, "branch: teacher | student")
        ->check(CLI::IsMember({"teacher", "student"}));

    // CLI11 consumes argv in reverse
    std::vector<std::string> rev(args.rbegin(), args.rend());
    try {
        app.parse(rev);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }
    if (seed_opt->count() > 0) common.seed = seed_value;

    try {
        if (gen->parsed())
            return cmd_gen_data(common, gd_count, gd_classes, gd_hms, gd_tms, gd_tsar, gd_out);
        if (pre->parsed())
            return cmd_pretrain(common, pt_data, pt_out, pt_metrics, pt_iters, pt_batch,
                                pt_preset);
        if (knn->parsed())
            return cmd_eval_knn(common, ek_ckpt, ek_train, ek_test, ek_k, ek_source, ek_branch);
        if (da->parsed())
            return cmd_dump_attn(common, da_ckpt, da_data, da_sample, da_out, da_branch);
        if (ef->parsed())
            return cmd_export_features(common, ef_ckpt, ef_data, ef_out, ef_source, ef_branch);
    } catch (const CLI::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const model::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}

int run(int argc, char** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run(args);
}

}  // namespace geossl::cli
