#include "cribdet/network.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cribdet/weights.hpp"

namespace cribdet {

using nlohmann::json;

void NetworkConfig::validate() const {
    require(input_side >= 1, Errc::InvalidArgument, "input_side must be >= 1");
    require(in_channels >= 1, Errc::InvalidArgument, "in_channels must be >= 1");
    require(num_classes >= 2, Errc::InvalidArgument, "num_classes must be >= 2");
    require(se_reduction >= 1, Errc::InvalidArgument, "se_reduction must be >= 1");
    require(!stages.empty(), Errc::InvalidArgument, "network needs at least one stage");
    int side = input_side;
    for (std::size_t k = 0; k < stages.size(); ++k) {
        const auto& s = stages[k];
        require(s.channels >= 1, Errc::InvalidArgument, "stage channels must be >= 1");
        require(s.downsample || s.block, Errc::InvalidArgument,
                "stage " + std::to_string(k) + " is empty (no downsample, no block)");
        if (s.downsample) {
            require(side % 2 == 0, Errc::InvalidArgument,
                    "side " + std::to_string(side) + " not divisible by 2 at stage " + std::to_string(k));
            side /= 2;
        }
        if (s.block) {
            require(s.channels >= se_reduction && s.channels % se_reduction == 0, Errc::InvalidArgument,
                    "stage " + std::to_string(k) + " channels " + std::to_string(s.channels) +
                        " not divisible by se_reduction " + std::to_string(se_reduction));
        }
    }
    require(side >= 1, Errc::InvalidArgument, "output side collapsed to zero");
}

std::string NetworkConfig::descriptor() const {
    json j;
    j["input_side"] = input_side;
    j["in_channels"] = in_channels;
    j["num_classes"] = num_classes;
    j["se_reduction"] = se_reduction;
    json st = json::array();
    for (const auto& s : stages)
        st.push_back({{"channels", s.channels}, {"downsample", s.downsample}, {"block", s.block}});
    j["stages"] = st;
    return j.dump();
}

NetworkConfig NetworkConfig::from_descriptor(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        fail(Errc::CorruptContainer, std::string("bad architecture descriptor: ") + e.what());
    }
    NetworkConfig cfg;
    cfg.input_side = j.at("input_side").get<int>();
    cfg.in_channels = j.at("in_channels").get<int>();
    cfg.num_classes = j.at("num_classes").get<int>();
    cfg.se_reduction = j.at("se_reduction").get<int>();
    cfg.stages.clear();
    for (const auto& s : j.at("stages"))
        cfg.stages.push_back({s.at("channels").get<int>(), s.at("downsample").get<bool>(),
                              s.at("block").get<bool>()});
    cfg.validate();
    return cfg;
}

NetworkConfig NetworkConfig::paper() {
    NetworkConfig cfg;
    cfg.input_side = kPatchSide;
    cfg.se_reduction = 16;
    cfg.stages = {
        {16, false, true}, {32, true, true}, {48, true, true},
        {64, true, true},  {80, true, true}, {96, true, true},
    };
    return cfg;
}

NetworkConfig NetworkConfig::desk(int width_scale) {
    require(width_scale >= 1, Errc::InvalidArgument, "width_scale must be >= 1");
    NetworkConfig cfg;
    cfg.input_side = kPatchSide;
    cfg.se_reduction = 2;
    cfg.stages = {
        {6 * width_scale, true, false},
        {10 * width_scale, true, false},
        {14 * width_scale, true, false},
        {18 * width_scale, true, true},
        {24 * width_scale, true, true},
    };
    return cfg;
}

TensorF patch_to_tensor(const Patch& patch) {
    TensorF t({1, kPatchSide, kPatchSide, 3});
    require(patch.pixels.size() == t.size(), Errc::ShapeMismatch, "patch pixel buffer has wrong size");
    std::copy(patch.pixels.begin(), patch.pixels.end(), t.data.begin());
    return t;
}

TensorF batch_tensor(const std::vector<const Patch*>& patches) {
    require(!patches.empty(), Errc::InvalidArgument, "empty batch");
    TensorF t({static_cast<int>(patches.size()), kPatchSide, kPatchSide, 3});
    const std::size_t plane = static_cast<std::size_t>(kPatchSide) * kPatchSide * 3;
    for (std::size_t p = 0; p < patches.size(); ++p) {
        require(patches[p]->pixels.size() == plane, Errc::ShapeMismatch, "patch pixel buffer has wrong size");
        std::copy(patches[p]->pixels.begin(), patches[p]->pixels.end(), t.data.begin() + p * plane);
    }
    return t;
}

namespace {

constexpr char kMagic[8] = {'C', 'R', 'I', 'B', 'W', 'T', '0', '1'};

struct TensorEntry {
    std::string name;
    std::vector<int> shape;
    std::size_t offset;
    std::size_t count;
};

template <typename Fn>
void for_each_tensor(const Network& net, Fn&& fn) {
    net.for_each_param([&](const std::string& name, const TensorF& t) { fn(name, t); });
    net.for_each_state([&](const std::string& name, const TensorF& t) { fn(name, t); });
}

}  // namespace

std::vector<std::byte> serialize_weights(const Network& net) {
    json dir = json::array();
    std::size_t offset = 0;
    for_each_tensor(net, [&](const std::string& name, const TensorF& t) {
        dir.push_back({{"name", name}, {"dtype", "f32"}, {"shape", t.shape}, {"offset", offset}});
        offset += t.size() * sizeof(float);
    });
    json header;
    header["format_version"] = kWeightFormatVersion;
    header["arch"] = json::parse(net.config().descriptor());
    char hash_hex[17];
    std::snprintf(hash_hex, sizeof(hash_hex), "%016llx",
                  static_cast<unsigned long long>(net.config().arch_hash()));
    header["arch_hash"] = std::string(hash_hex);
    header["tensors"] = dir;
    const std::string header_text = header.dump();

    std::vector<std::byte> out(sizeof(kMagic) + 8 + header_text.size() + offset);
    std::memcpy(out.data(), kMagic, sizeof(kMagic));
    const std::uint64_t hlen = header_text.size();
    std::memcpy(out.data() + sizeof(kMagic), &hlen, 8);
    std::memcpy(out.data() + sizeof(kMagic) + 8, header_text.data(), header_text.size());
    std::byte* payload = out.data() + sizeof(kMagic) + 8 + header_text.size();
    std::size_t pos = 0;
    for_each_tensor(net, [&](const std::string&, const TensorF& t) {
        std::memcpy(payload + pos, t.ptr(), t.size() * sizeof(float));
        pos += t.size() * sizeof(float);
    });
    return out;
}

Network deserialize_weights(const std::byte* data, std::size_t size) {
    require(size >= sizeof(kMagic) + 8, Errc::CorruptContainer, "container shorter than its preamble");
    require(std::memcmp(data, kMagic, sizeof(kMagic)) == 0, Errc::CorruptContainer, "bad magic");
    std::uint64_t hlen = 0;
    std::memcpy(&hlen, data + sizeof(kMagic), 8);
    require(size >= sizeof(kMagic) + 8 + hlen, Errc::CorruptContainer, "truncated header");
    json header;
    try {
        header = json::parse(std::string(reinterpret_cast<const char*>(data + sizeof(kMagic) + 8),
                                         static_cast<std::size_t>(hlen)));
    } catch (const json::exception& e) {
        fail(Errc::CorruptContainer, std::string("unparseable header: ") + e.what());
    }
    require(header.at("format_version").get<int>() == kWeightFormatVersion, Errc::CorruptContainer,
            "unsupported format version");
    NetworkConfig cfg = NetworkConfig::from_descriptor(header.at("arch").dump());
    char hash_hex[17];
    std::snprintf(hash_hex, sizeof(hash_hex), "%016llx", static_cast<unsigned long long>(cfg.arch_hash()));
    require(header.at("arch_hash").get<std::string>() == hash_hex, Errc::CorruptContainer,
            "stored hash disagrees with stored architecture");

    Network net(cfg);
    const std::byte* payload = data + sizeof(kMagic) + 8 + hlen;
    const std::size_t payload_size = size - sizeof(kMagic) - 8 - static_cast<std::size_t>(hlen);

    std::size_t entry_idx = 0;
    const auto& dir = header.at("tensors");
    for_each_tensor(net, [&](const std::string& name, const TensorF& t) {
        require(entry_idx < dir.size(), Errc::CorruptContainer, "tensor directory too short");
        const auto& e = dir[entry_idx++];
        require(e.at("name").get<std::string>() == name, Errc::CorruptContainer,
                "tensor order mismatch at " + name);
        const auto shape = e.at("shape").get<std::vector<int>>();
        require(shape == t.shape, Errc::CorruptContainer, "tensor shape mismatch at " + name);
        const auto offset = e.at("offset").get<std::size_t>();
        const std::size_t bytes = t.size() * sizeof(float);
        require(offset + bytes <= payload_size, Errc::CorruptContainer, "payload truncated at " + name);
        std::memcpy(const_cast<TensorF&>(t).ptr(), payload + offset, bytes);
    });
    require(entry_idx == dir.size(), Errc::CorruptContainer, "tensor directory has extra entries");
    for_each_tensor(net, [&](const std::string& name, const TensorF& t) {
        for (float v : t.data)
            if (!std::isfinite(v)) fail(Errc::CorruptContainer, "non-finite value in tensor " + name);
    });
    return net;
}

void save_weights(const Network& net, const std::filesystem::path& path) {
    const auto bytes = serialize_weights(net);
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(Errc::IoError, "cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    require(static_cast<bool>(out), Errc::IoError, "short write to " + path.string());
}

Network load_weights(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(Errc::IoError, "cannot open " + path.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_weights(reinterpret_cast<const std::byte*>(bytes.data()), bytes.size());
}

Network load_weights(const std::filesystem::path& path, const NetworkConfig& expected) {
    Network net = load_weights(path);
    if (net.config().arch_hash() != expected.arch_hash())
        fail(Errc::ArchitectureMismatch, "container architecture does not match the expected network ("
                                             + path.string() + ")");
    return net;
}

}  // namespace cribdet
