#include "ticl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

namespace ticl {

namespace {

using nlohmann::json;

void put_u32(std::ostream& os, uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

void put_u64(std::ostream& os, uint64_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

uint32_t get_u32(std::istream& is) {
    uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!is) throw CheckpointError("truncated checkpoint");
    return v;
}

uint64_t get_u64(std::istream& is) {
    uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!is) throw CheckpointError("truncated checkpoint");
    return v;
}

void put_tensor(std::ostream& os, const std::string& name, const Tensor& t) {
    put_u32(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(os, static_cast<uint32_t>(t.rank()));
    for (int64_t i = 0; i < t.rank(); ++i) put_u64(os, static_cast<uint64_t>(t.dim(i)));
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.numel() * sizeof(float)));
}

std::pair<std::string, Tensor> get_tensor(std::istream& is) {
    const uint32_t name_len = get_u32(is);
    if (name_len > 4096) throw CheckpointError("implausible tensor name length");
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const uint32_t rank = get_u32(is);
    if (rank > 8) throw CheckpointError("implausible tensor rank");
    Shape shape;
    for (uint32_t i = 0; i < rank; ++i) {
        shape.push_back(static_cast<int64_t>(get_u64(is)));
    }
    const int64_t numel = shape_numel(shape);
    if (numel > (int64_t(1) << 31)) throw CheckpointError("implausible tensor size");
    std::vector<float> values(static_cast<size_t>(numel));
    is.read(reinterpret_cast<char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(float)));
    if (!is) throw CheckpointError("truncated checkpoint tensor data");
    return {std::move(name), Tensor(std::move(shape), std::move(values))};
}

} // namespace

void save_checkpoint(const std::string& path, const ContinualLearner& learner,
                     const json& config_echo) {
    const EncoderConfig& e = learner.student().config();
    json meta;
    meta["format"] = kCheckpointVersion;
    meta["step"] = learner.current_step();
    meta["lambda"] = learner.lambda();
    meta["seed"] = learner.seed();
    meta["squared_distance"] = learner.squared_distance();
    meta["encoder"] = {{"image_side", e.image_side}, {"channels", e.channels},
                       {"patch_size", e.patch_size}, {"embed_dim", e.embed_dim},
                       {"heads", e.heads},           {"depth", e.depth},
                       {"mlp_ratio", e.mlp_ratio},   {"ln_eps", e.ln_eps}};
    json tasks = json::array();
    for (int32_t id : learner.task_ids()) {
        tasks.push_back({{"id", id}, {"classes", learner.head(id).classes}});
    }
    meta["tasks"] = tasks;
    meta["config"] = config_echo;
    const std::string meta_text = meta.dump();

    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw CheckpointError("cannot write checkpoint " + path);
        os.write("TICL", 4);
        put_u32(os, kCheckpointVersion);

        const auto fe_params = learner.student().parameters();
        const auto ids = learner.task_ids();
        put_u32(os, static_cast<uint32_t>(fe_params.size() + 3 * ids.size()));
        for (const Parameter* p : fe_params) put_tensor(os, p->name, p->tensor);
        for (int32_t id : ids) {
            put_tensor(os, "token." + std::to_string(id), learner.token(id).theta.tensor);
            put_tensor(os, "head." + std::to_string(id) + ".w", learner.head(id).w.tensor);
            put_tensor(os, "head." + std::to_string(id) + ".b", learner.head(id).b.tensor);
        }
        put_u64(os, meta_text.size());
        os.write(meta_text.data(), static_cast<std::streamsize>(meta_text.size()));
        if (!os) throw CheckpointError("write failed for checkpoint " + path);
    }
    std::filesystem::rename(tmp, path);
}

ContinualLearner load_checkpoint(const std::string& path, json* config_echo) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError("cannot open checkpoint " + path);
    char magic[4] = {};
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "TICL", 4) != 0) {
        throw CheckpointError("bad checkpoint magic in " + path);
    }
    const uint32_t version = get_u32(is);
    if (version != kCheckpointVersion) {
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
    }
    const uint32_t tensor_count = get_u32(is);
    std::map<std::string, Tensor> tensors;
    for (uint32_t i = 0; i < tensor_count; ++i) {
        auto [name, t] = get_tensor(is);
        tensors.emplace(std::move(name), std::move(t));
    }
    const uint64_t meta_len = get_u64(is);
    if (meta_len > (uint64_t(1) << 30)) throw CheckpointError("implausible metadata size");
    std::string meta_text(meta_len, '\0');
    is.read(meta_text.data(), static_cast<std::streamsize>(meta_len));
    if (!is) throw CheckpointError("truncated checkpoint metadata");

    json meta;
    try {
        meta = json::parse(meta_text);
    } catch (const json::exception& e) {
        throw CheckpointError(std::string("bad checkpoint metadata: ") + e.what());
    }

    EncoderConfig e;
    try {
        const json& ej = meta.at("encoder");
        e.image_side = ej.at("image_side");
        e.channels = ej.at("channels");
        e.patch_size = ej.at("patch_size");
        e.embed_dim = ej.at("embed_dim");
        e.heads = ej.at("heads");
        e.depth = ej.at("depth");
        e.mlp_ratio = ej.at("mlp_ratio");
        e.ln_eps = ej.at("ln_eps");

        ContinualLearner learner(e, meta.at("lambda"), meta.at("seed"),
                                 meta.value("squared_distance", false));

        auto take = [&](const std::string& name) -> Tensor {
            auto it = tensors.find(name);
            if (it == tensors.end()) {
                throw CheckpointError("checkpoint misses tensor " + name);
            }
            Tensor t = std::move(it->second);
            tensors.erase(it);
            return t;
        };

        for (Parameter* p : learner.student().parameters()) {
            Tensor t = take(p->name);
            if (t.shape() != p->tensor.shape()) {
                throw CheckpointError("tensor shape mismatch for " + p->name);
            }
            t.requires_grad = true;
            p->tensor = std::move(t);
        }

        std::vector<TaskToken> tokens;
        std::vector<ClassifierHead> heads;
        for (const json& tj : meta.at("tasks")) {
            const int32_t id = tj.at("id");
            TaskToken tok;
            tok.task_id = id;
            tok.theta = Parameter{take("token." + std::to_string(id)),
                                  "token." + std::to_string(id), false};
            ClassifierHead head;
            head.task_id = id;
            head.classes = tj.at("classes").get<std::vector<int32_t>>();
            head.w = Parameter{take("head." + std::to_string(id) + ".w"),
                               "head." + std::to_string(id) + ".w", false};
            head.b = Parameter{take("head." + std::to_string(id) + ".b"),
                               "head." + std::to_string(id) + ".b", false};
            if (head.w.tensor.rank() != 2 ||
                head.w.tensor.dim(1) != static_cast<int64_t>(head.classes.size())) {
                throw CheckpointError("head shape mismatch for task " + std::to_string(id));
            }
            tokens.push_back(std::move(tok));
            heads.push_back(std::move(head));
        }
        learner.restore(meta.at("step"), std::move(tokens), std::move(heads));
        if (config_echo) *config_echo = meta.value("config", json::object());
        return learner;
    } catch (const json::exception& ex) {
        throw CheckpointError(std::string("bad checkpoint metadata: ") + ex.what());
    }
}

} // namespace ticl
