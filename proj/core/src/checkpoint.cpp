#include "geossl/blobfile.hpp"
#include "geossl/trainer.hpp"

#include <nlohmann/json.hpp>

namespace geossl::model {

using json = nlohmann::json;

void save_checkpoint(const ModelState& state, const FullConfig& cfg, int iteration,
                     const std::string& path) {
    io::BlobWriter w(kCheckpointMagic);
    for (const auto& name : state.names()) {
        const Param& p = state.at(name);
        w.add_f32(name, p.shape, p.data.data());
    }
    // region grid spec rides along with the prototype bank
    const float grid[2] = {static_cast<float>(cfg.gcpl.rows),
                           static_cast<float>(cfg.gcpl.cols)};
    w.add_f32("gcpl/grid", {2}, grid);

    json meta;
    meta["kind"] = "geossl-checkpoint";
    meta["iteration"] = iteration;
    meta["config"] = json::parse(config_to_json(cfg));
    w.set_meta(meta.dump());
    w.write(path, /*with_checksums=*/true);
}

Checkpoint load_checkpoint(const std::string& path) {
    io::BlobReader r = io::BlobReader::open(path, kCheckpointMagic, /*with_checksums=*/true);
    json meta;
    try {
        meta = json::parse(r.meta_json());
    } catch (const json::exception& e) {
        throw io::FileError(io::FileErrorCode::format,
                            std::string("checkpoint meta unreadable: ") + e.what());
    }
    if (!meta.contains("config"))
        throw io::FileError(io::FileErrorCode::format, "checkpoint missing config meta");

    Checkpoint ck;
    ck.iteration = meta.value("iteration", 0);
    ck.config = apply_config_json(FullConfig{}, meta["config"].dump());

    // the expected parameter inventory comes from the stored config;
    // tensors must match it name-for-name and shape-for-shape
    ModelState expected = build_model_state(ck.config, /*seed=*/0);
    for (const auto& name : expected.names()) {
        if (!r.contains(name))
            throw io::FileError(io::FileErrorCode::format,
                                "checkpoint missing tensor '" + name + "'");
        const io::BlobEntry& e = r.entry(name);
        Param& p = expected.at(name);
        if (e.shape != p.shape)
            throw io::FileError(io::FileErrorCode::shape,
                                "tensor '" + name + "' has shape " +
                                    Tensor::zeros(e.shape).shape_str() + ", expected " +
                                    Tensor::zeros(p.shape).shape_str());
        p.data = r.read_f32(name);
    }
    for (const auto& name : r.names()) {
        if (name == "gcpl/grid") continue;
        if (!expected.contains(name))
            throw io::FileError(io::FileErrorCode::format,
                                "checkpoint holds unexpected tensor '" + name + "'");
    }
    const auto grid = r.read_f32("gcpl/grid");
    if (grid.size() != 2 || static_cast<int>(grid[0]) != ck.config.gcpl.rows ||
        static_cast<int>(grid[1]) != ck.config.gcpl.cols)
        throw io::FileError(io::FileErrorCode::shape,
                            "tensor 'gcpl/grid' disagrees with the stored config");

    ck.state = std::move(expected);
    return ck;
}

}  // namespace geossl::model
