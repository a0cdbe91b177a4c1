#include "stemsep/weights.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace stemsep {

static_assert(std::endian::native == std::endian::little,
              "weight container assumes a little-endian host");

namespace {

using nlohmann::json;

constexpr const char* kMagic = "STEMSEPW 1";

std::uint32_t crc32(const unsigned char* data, std::size_t n) {
    static const auto table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    std::uint32_t c = 0xFFFFFFFFu;
    for (std::size_t i = 0; i < n; ++i) c = table[(c ^ data[i]) & 0xFFu] ^ (c >> 8);
    return c ^ 0xFFFFFFFFu;
}

json config_to_json(const ModelConfig& cfg) {
    json j;
    j["sources"] = cfg.sources;
    j["channels0"] = cfg.channels0;
    j["growth"] = cfg.growth;
    j["n_layers_outer"] = cfg.n_layers_outer;
    j["kernel"] = cfg.kernel;
    j["stride"] = cfg.stride;
    j["n_fft"] = cfg.n_fft;
    j["hop"] = cfg.hop;
    j["sample_rate"] = cfg.sample_rate;
    json t;
    t["dim"] = cfg.transformer.dim;
    t["heads"] = cfg.transformer.heads;
    t["ffn_mult"] = cfg.transformer.ffn_mult;
    t["depth"] = cfg.transformer.depth;
    t["layer_scale_init"] = cfg.transformer.layer_scale_init;
    t["input_scale"] = cfg.transformer.input_scale;
    t["use_positional"] = cfg.transformer.use_positional;
    t["cross_updates_parallel"] = cfg.transformer.cross_updates_parallel;
    t["sparse_self_attention_only"] = cfg.transformer.sparse_self_attention_only;
    j["transformer"] = t;
    if (cfg.sparse) {
        json s;
        s["rounds"] = cfg.sparse->rounds;
        s["buckets_per_round"] = cfg.sparse->buckets_per_round;
        s["target_sparsity"] = cfg.sparse->target_sparsity;
        j["sparse"] = s;
    } else {
        j["sparse"] = nullptr;
    }
    return j;
}

ModelConfig config_from_json(const json& j) {
    ModelConfig cfg;
    cfg.sources = j.at("sources").get<std::vector<std::string>>();
    cfg.channels0 = j.at("channels0").get<int>();
    cfg.growth = j.at("growth").get<int>();
    cfg.n_layers_outer = j.at("n_layers_outer").get<int>();
    cfg.kernel = j.at("kernel").get<int>();
    cfg.stride = j.at("stride").get<int>();
    cfg.n_fft = j.at("n_fft").get<int>();
    cfg.hop = j.at("hop").get<int>();
    cfg.sample_rate = j.at("sample_rate").get<int>();
    const json& t = j.at("transformer");
    cfg.transformer.dim = t.at("dim").get<int>();
    cfg.transformer.heads = t.at("heads").get<int>();
    cfg.transformer.ffn_mult = t.at("ffn_mult").get<int>();
    cfg.transformer.depth = t.at("depth").get<int>();
    cfg.transformer.layer_scale_init = t.at("layer_scale_init").get<float>();
    cfg.transformer.input_scale = t.at("input_scale").get<float>();
    cfg.transformer.use_positional = t.at("use_positional").get<bool>();
    cfg.transformer.cross_updates_parallel = t.at("cross_updates_parallel").get<bool>();
    cfg.transformer.sparse_self_attention_only = t.at("sparse_self_attention_only").get<bool>();
    if (!j.at("sparse").is_null()) {
        LshConfig s;
        s.rounds = j["sparse"].at("rounds").get<int>();
        s.buckets_per_round = j["sparse"].at("buckets_per_round").get<int>();
        s.target_sparsity = j["sparse"].at("target_sparsity").get<double>();
        cfg.sparse = s;
    }
    return cfg;
}

struct Container {
    json manifest;
    std::vector<unsigned char> blob;
};

Container read_container(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    std::string magic;
    if (!std::getline(f, magic)) throw IoError("truncated weight file: " + path);
    if (magic != kMagic) throw FormatError("not a weight container: " + path);
    std::string len_line;
    if (!std::getline(f, len_line)) throw IoError("truncated weight file: " + path);
    std::size_t manifest_len = 0;
    try {
        manifest_len = static_cast<std::size_t>(std::stoull(len_line));
    } catch (const std::exception&) {
        throw FormatError("bad manifest length in " + path);
    }
    std::string manifest_text(manifest_len, '\0');
    f.read(manifest_text.data(), static_cast<std::streamsize>(manifest_len));
    if (f.gcount() != static_cast<std::streamsize>(manifest_len))
        throw IoError("truncated manifest in " + path);
    char nl = 0;
    f.read(&nl, 1);
    if (nl != '\n') throw FormatError("malformed container framing in " + path);

    Container c;
    try {
        c.manifest = json::parse(manifest_text);
    } catch (const json::exception& e) {
        throw FormatError("bad manifest JSON in " + path + ": " + e.what());
    }
    const std::size_t blob_bytes = c.manifest.at("blob_bytes").get<std::size_t>();
    c.blob.resize(blob_bytes);
    f.read(reinterpret_cast<char*>(c.blob.data()), static_cast<std::streamsize>(blob_bytes));
    if (f.gcount() != static_cast<std::streamsize>(blob_bytes))
        throw IoError("truncated blob in " + path);

    const std::uint32_t expect = c.manifest.at("checksum").get<std::uint32_t>();
    if (crc32(c.blob.data(), c.blob.size()) != expect)
        throw CorruptionError("checksum mismatch in " + path);
    return c;
}

void fill_params_from(const Container& c, Model& m, const std::string& path) {
    ParamRegistry reg = collect_params(m);
    const json& params = c.manifest.at("params");
    if (params.size() != reg.items.size())
        throw ConfigError("parameter list does not match the model in " + path);
    for (std::size_t i = 0; i < reg.items.size(); ++i) {
        const json& pj = params[i];
        auto& [name, tensor] = reg.items[i];
        if (pj.at("name").get<std::string>() != name)
            throw ConfigError("parameter name mismatch at index " + std::to_string(i) + " in " + path);
        const auto shape = pj.at("shape").get<std::vector<int>>();
        if (shape != tensor.shape())
            throw ConfigError("parameter shape mismatch for " + name + " in " + path);
        const std::size_t offset = pj.at("offset").get<std::size_t>();
        const std::size_t bytes = pj.at("size").get<std::size_t>();
        if (bytes != tensor.numel() * sizeof(float) || offset + bytes > c.blob.size())
            throw ConfigError("parameter extent mismatch for " + name + " in " + path);
        std::memcpy(tensor.data(), c.blob.data() + offset, bytes);
    }
}

}  // namespace

void save_weights(const Model& m, const std::string& path) {
    ParamRegistry reg = collect_params(m);
    json manifest;
    manifest["format_version"] = 1;
    manifest["config"] = config_to_json(m.cfg);
    json params = json::array();
    std::size_t offset = 0;
    for (const auto& [name, t] : reg.items) {
        json p;
        p["name"] = name;
        p["shape"] = t.shape();
        p["offset"] = offset;
        p["size"] = t.numel() * sizeof(float);
        params.push_back(p);
        offset += t.numel() * sizeof(float);
    }
    manifest["params"] = params;
    manifest["blob_bytes"] = offset;

    std::vector<unsigned char> blob(offset);
    std::size_t pos = 0;
    for (const auto& [name, t] : reg.items) {
        std::memcpy(blob.data() + pos, t.data(), t.numel() * sizeof(float));
        pos += t.numel() * sizeof(float);
    }
    manifest["checksum"] = crc32(blob.data(), blob.size());

    const std::string text = manifest.dump();
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path);
    f << kMagic << "\n" << text.size() << "\n" << text << "\n";
    f.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
    if (!f) throw IoError("short write to " + path);
}

Model load_weights(const std::string& path) {
    Container c = read_container(path);
    ModelConfig cfg = config_from_json(c.manifest.at("config"));
    Model m = build_model(cfg, 0);
    fill_params_from(c, m, path);
    return m;
}

Model load_weights(const std::string& path, const ModelConfig& expected) {
    Container c = read_container(path);
    ModelConfig cfg = config_from_json(c.manifest.at("config"));
    if (!(cfg == expected)) throw ConfigError("weight container config does not match in " + path);
    Model m = build_model(cfg, 0);
    fill_params_from(c, m, path);
    return m;
}

std::string describe_weights(const std::string& path) {
    Container c = read_container(path);
    const ModelConfig cfg = config_from_json(c.manifest.at("config"));
    std::ostringstream out;
    out << "format_version: " << c.manifest.at("format_version").get<int>() << "\n";
    out << "sources:";
    for (const auto& s : cfg.sources) out << " " << s;
    out << "\nchannels0: " << cfg.channels0 << "  transformer dim: " << cfg.transformer.dim
        << "  depth: " << cfg.transformer.depth << "\n";
    out << "sparse: " << (cfg.sparse ? "yes" : "no") << "\n";
    std::size_t total = 0;
    for (const auto& p : c.manifest.at("params")) total += p.at("size").get<std::size_t>() / sizeof(float);
    out << "parameters: " << c.manifest.at("params").size() << " tensors, " << total << " scalars\n";
    out << "blob_bytes: " << c.manifest.at("blob_bytes").get<std::size_t>() << "  checksum: ok\n";
    return out.str();
}

}  // namespace stemsep
