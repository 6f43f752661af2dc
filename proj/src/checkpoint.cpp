#include "camds/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "camds/image_io.hpp"  // ParseError

using nlohmann::json;

namespace camds {

namespace {

uint64_t fnv1a64(const std::string& s) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

json config_to_json(const ModelConfig& c) {
    return json{{"input_size", c.input_size},
                {"num_resolutions", c.num_resolutions},
                {"channels_per_stage", c.channels_per_stage},
                {"num_classes", c.num_classes},
                {"head", head_name(c.head)},
                {"blocks_per_stage", c.blocks_per_stage},
                {"seed", c.seed}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.input_size = j.at("input_size").get<int>();
    c.num_resolutions = j.at("num_resolutions").get<int>();
    c.channels_per_stage = j.at("channels_per_stage").get<std::vector<int>>();
    c.num_classes = j.at("num_classes").get<int>();
    c.head = head_from_name(j.at("head").get<std::string>());
    c.blocks_per_stage = j.at("blocks_per_stage").get<int>();
    c.seed = j.at("seed").get<uint64_t>();
    return c;
}

void write_u64_le(std::ostream& out, uint64_t v) {
    char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.write(buf, 8);
}

uint64_t read_u64_le(std::istream& in) {
    unsigned char buf[8];
    in.read(reinterpret_cast<char*>(buf), 8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(buf[i]) << (8 * i);
    return v;
}

void write_f32_le(std::ostream& out, std::span<const float> data) {
    static_assert(std::endian::native == std::endian::little,
                  "float serialization assumes a little-endian host");
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size() * sizeof(float)));
}

struct ManifestEntry {
    std::string name;
    std::string kind;  // param | momentum | running_mean | running_var
    Shape shape;
    int64_t offset = 0;  // bytes from the start of the array section
};

}  // namespace

void save_checkpoint(const Model& model, const SgdState& optimizer, int64_t iteration,
                     const TrainerRngState& rng, const std::string& path) {
    const auto& params = model.parameters();
    if (optimizer.velocity.size() != params.size())
        throw std::invalid_argument("save_checkpoint: optimizer state does not match parameters");

    std::vector<ManifestEntry> manifest;
    std::vector<std::span<const float>> arrays;
    int64_t offset = 0;
    auto push = [&](std::string name, std::string kind, Shape shape,
                    std::span<const float> data) {
        manifest.push_back({std::move(name), std::move(kind), std::move(shape), offset});
        arrays.push_back(data);
        offset += static_cast<int64_t>(data.size() * sizeof(float));
    };

    for (const auto& p : params) push(p.name, "param", p.tensor.shape(), p.tensor.data());
    for (size_t i = 0; i < params.size(); ++i)
        push("momentum." + params[i].name, "momentum", params[i].tensor.shape(),
             optimizer.velocity[i]);
    json bn_updates = json::object();
    for (const auto& bn : model.bn_states()) {
        const int ch = static_cast<int>(bn.state->running_mean.size());
        push(bn.name + ".running_mean", "running_mean", {ch}, bn.state->running_mean);
        push(bn.name + ".running_var", "running_var", {ch}, bn.state->running_var);
        bn_updates[bn.name] = bn.state->updates;
    }

    json meta;
    meta["format_version"] = kCheckpointVersion;
    const json config_json = config_to_json(model.config());
    meta["config"] = config_json;
    meta["config_hash"] = hex64(fnv1a64(config_json.dump()));
    meta["iteration"] = iteration;
    meta["rng"] = json{{"kind", "counter"}, {"seed", rng.seed}};
    meta["bn_updates"] = bn_updates;
    json jmanifest = json::array();
    for (const auto& e : manifest)
        jmanifest.push_back(
            json{{"name", e.name}, {"kind", e.kind}, {"shape", e.shape}, {"offset", e.offset}});
    meta["manifest"] = jmanifest;

    const std::string meta_str = meta.dump();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error(path + ": cannot open for writing");
    out.write(kCheckpointMagic, 8);
    write_u64_le(out, meta_str.size());
    out.write(meta_str.data(), static_cast<std::streamsize>(meta_str.size()));
    for (const auto& a : arrays) write_f32_le(out, a);
    if (!out) throw std::runtime_error(path + ": write failed");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError(path + ": cannot open file");

    char magic[8];
    in.read(magic, 8);
    if (in.gcount() != 8 || std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw ParseError(path + ": not a checkpoint file (bad magic at offset 0)");
    const uint64_t meta_len = read_u64_le(in);
    if (!in) throw ParseError(path + ": truncated at offset 8 while reading metadata length");
    std::string meta_str(meta_len, '\0');
    in.read(meta_str.data(), static_cast<std::streamsize>(meta_len));
    if (static_cast<uint64_t>(in.gcount()) != meta_len)
        throw ParseError(path + ": truncated at offset " +
                         std::to_string(16 + static_cast<int64_t>(in.gcount())) +
                         ": metadata document cut short");

    json meta;
    try {
        meta = json::parse(meta_str);
    } catch (const json::exception& e) {
        throw ParseError(path + ": metadata parse error: " + e.what());
    }

    Checkpoint ck;
    try {
        const int version = meta.at("format_version").get<int>();
        if (version != kCheckpointVersion)
            throw ParseError(path + ": checkpoint format version " + std::to_string(version) +
                             " unsupported (this build reads version " +
                             std::to_string(kCheckpointVersion) + ")");
        const json config_json = meta.at("config");
        ck.config = config_from_json(config_json);
        const std::string stored_hash = meta.at("config_hash").get<std::string>();
        const std::string computed = hex64(fnv1a64(config_to_json(ck.config).dump()));
        if (stored_hash != computed)
            throw ParseError(path + ": config hash mismatch (stored " + stored_hash +
                             ", computed " + computed + ")");
        ck.iteration = meta.at("iteration").get<int64_t>();
        ck.rng.seed = meta.at("rng").at("seed").get<uint64_t>();
    } catch (const json::exception& e) {
        throw ParseError(path + ": metadata field error: " + e.what());
    }

    ck.model = Model::build(ck.config);
    ck.optimizer = SgdState::for_params(ck.model.parameters());

    const int64_t array_base = 16 + static_cast<int64_t>(meta_len);
    auto read_array = [&](const json& entry, std::span<float> dst) {
        const int64_t offset = entry.at("offset").get<int64_t>();
        const Shape shape = entry.at("shape").get<Shape>();
        if (shape_numel(shape) != static_cast<int64_t>(dst.size()))
            throw ParseError(path + ": array '" + entry.at("name").get<std::string>() +
                             "' has shape " + shape_str(shape) + " but the model expects " +
                             std::to_string(dst.size()) + " values");
        in.clear();
        in.seekg(array_base + offset);
        in.read(reinterpret_cast<char*>(dst.data()),
                static_cast<std::streamsize>(dst.size() * sizeof(float)));
        if (static_cast<size_t>(in.gcount()) != dst.size() * sizeof(float))
            throw ParseError(path + ": checkpoint truncated at offset " +
                             std::to_string(array_base + offset + in.gcount()) + ": expected " +
                             std::to_string(dst.size() * sizeof(float)) + " bytes for '" +
                             entry.at("name").get<std::string>() + "'");
    };

    std::map<std::string, const json*> by_name;
    try {
        for (const auto& entry : meta.at("manifest"))
            by_name[entry.at("name").get<std::string>()] = &entry;

        auto& params = ck.model.parameters();
        for (size_t i = 0; i < params.size(); ++i) {
            auto it = by_name.find(params[i].name);
            if (it == by_name.end())
                throw ParseError(path + ": manifest is missing parameter '" + params[i].name + "'");
            read_array(*it->second, params[i].tensor.mutable_data());
            auto mit = by_name.find("momentum." + params[i].name);
            if (mit == by_name.end())
                throw ParseError(path + ": manifest is missing momentum buffer for '" +
                                 params[i].name + "'");
            read_array(*mit->second, ck.optimizer.velocity[i]);
        }
        for (auto& bn : ck.model.bn_states()) {
            auto mit = by_name.find(bn.name + ".running_mean");
            auto vit = by_name.find(bn.name + ".running_var");
            if (mit == by_name.end() || vit == by_name.end())
                throw ParseError(path + ": manifest is missing normalization stats for '" +
                                 bn.name + "'");
            read_array(*mit->second, bn.state->running_mean);
            read_array(*vit->second, bn.state->running_var);
            bn.state->updates = meta.at("bn_updates").at(bn.name).get<int64_t>();
        }
    } catch (const json::exception& e) {
        throw ParseError(path + ": manifest field error: " + e.what());
    }

    ck.optimizer.iteration = ck.iteration;
    return ck;
}

}  // namespace camds
