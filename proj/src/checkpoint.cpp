#include "ca/checkpoint.hpp"

#include <bit>
#include <fstream>

#include <nlohmann/json.hpp>

#include "ca/networks.hpp"

namespace ca {

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are little-endian; byte-swapping is not implemented");

using nlohmann::json;

void save_checkpoint(const std::string& prefix, const ParamStore& store, const json& architecture) {
    std::ofstream bin(prefix + ".bin", std::ios::binary);
    if (!bin) throw std::runtime_error("cannot open for write: " + prefix + ".bin");
    json params = json::array();
    uint64_t offset = 0;
    for (const Param* p : store.all()) {
        bin.write(reinterpret_cast<const char*>(p->value.data()),
                  static_cast<std::streamsize>(p->value.size() * sizeof(double)));
        params.push_back({{"name", p->name}, {"shape", p->shape}, {"offset", offset}});
        offset += p->value.size() * sizeof(double);
    }
    if (!bin) throw std::runtime_error("write failed: " + prefix + ".bin");
    json manifest = {{"format", "ca-checkpoint-v1"},
                     {"endianness", "little"},
                     {"dtype", "f64"},
                     {"blob_bytes", offset},
                     {"architecture", architecture},
                     {"params", params}};
    std::ofstream mf(prefix + ".json");
    if (!mf) throw std::runtime_error("cannot open for write: " + prefix + ".json");
    mf << manifest.dump(2) << '\n';
}

json load_manifest(const std::string& prefix) {
    std::ifstream mf(prefix + ".json");
    if (!mf) throw std::runtime_error("cannot open: " + prefix + ".json");
    json manifest = json::parse(mf);
    if (manifest.value("format", "") != "ca-checkpoint-v1")
        throw std::runtime_error("unrecognized checkpoint format in " + prefix + ".json");
    return manifest;
}

void load_params(const std::string& prefix, ParamStore& store) {
    json manifest = load_manifest(prefix);
    std::ifstream bin(prefix + ".bin", std::ios::binary);
    if (!bin) throw std::runtime_error("cannot open: " + prefix + ".bin");
    for (const auto& entry : manifest.at("params")) {
        const std::string name = entry.at("name");
        Param* p = store.find(name);
        if (!p) throw std::runtime_error("checkpoint parameter '" + name + "' not present in model");
        const Shape shape = entry.at("shape").get<Shape>();
        if (shape != p->shape)
            throw std::runtime_error("checkpoint parameter '" + name + "' has shape " + shape_str(shape) +
                                     ", model expects " + shape_str(p->shape));
        bin.seekg(static_cast<std::streamoff>(entry.at("offset").get<uint64_t>()));
        bin.read(reinterpret_cast<char*>(p->value.data()),
                 static_cast<std::streamsize>(p->value.size() * sizeof(double)));
        if (!bin) throw std::runtime_error("truncated checkpoint blob: " + prefix + ".bin");
    }
}

json describe_architecture(const CANet& net) {
    const auto& opt = net.options();
    return {{"type", "canet"},
            {"bidders", net.config().bidders},
            {"items", net.config().items},
            {"hidden", opt.hidden},
            {"layers", opt.layers},
            {"temperature", opt.alloc.temperature},
            {"mask_mode", opt.alloc.mask_mode == MaskMode::Masked ? "masked" : "unmasked"}};
}

json describe_architecture(const CAFormer& net) {
    const auto& opt = net.options();
    return {{"type", "caformer"},
            {"bidders", net.config().bidders},
            {"items", net.config().items},
            {"channels", opt.channels},
            {"heads", opt.heads},
            {"attention_layers", opt.attention_layers},
            {"positional_mode", to_string(opt.positional)},
            {"normalize_item_projection", opt.normalize_item_projection},
            {"temperature", opt.alloc.temperature},
            {"mask_mode", opt.alloc.mask_mode == MaskMode::Masked ? "masked" : "unmasked"}};
}

std::unique_ptr<Mechanism> load_mechanism(const std::string& prefix) {
    json manifest = load_manifest(prefix);
    const json& arch = manifest.at("architecture");
    const std::string type = arch.at("type");
    const AuctionConfig config = AuctionConfig::make(arch.at("bidders"), arch.at("items"));
    Rng scratch(0);  // initialization is overwritten by the blob
    std::unique_ptr<Mechanism> mech;
    if (type == "canet") {
        CANetOptions opt;
        opt.hidden = arch.at("hidden");
        opt.layers = arch.at("layers");
        opt.alloc.temperature = arch.at("temperature");
        opt.alloc.mask_mode = arch.value("mask_mode", "masked") == "masked" ? MaskMode::Masked
                                                                            : MaskMode::Unmasked;
        mech = std::make_unique<CANet>(config, opt, scratch);
    } else if (type == "caformer") {
        CAFormerOptions opt;
        opt.channels = arch.at("channels");
        opt.heads = arch.at("heads");
        opt.attention_layers = arch.at("attention_layers");
        opt.positional = positional_mode_from_string(arch.at("positional_mode"));
        opt.normalize_item_projection = arch.value("normalize_item_projection", false);
        opt.alloc.temperature = arch.at("temperature");
        opt.alloc.mask_mode = arch.value("mask_mode", "masked") == "masked" ? MaskMode::Masked
                                                                            : MaskMode::Unmasked;
        mech = std::make_unique<CAFormer>(config, opt, scratch);
    } else {
        throw std::runtime_error("unknown architecture type '" + type + "' in " + prefix + ".json");
    }
    load_params(prefix, *mech->params());
    return mech;
}

}  // namespace ca
