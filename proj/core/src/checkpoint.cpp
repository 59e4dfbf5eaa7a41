#include <algorithm>
#include <fstream>
#include <stdexcept>
#include <string>

#include "sanet/image_io.hpp"
#include "sanet/network.hpp"
#include "sanet/rng.hpp"
#include "sanet/train.hpp"

namespace sanet {

namespace {

constexpr std::uint64_t kMagic = 0x31544b504e4153ULL;  // "SANPKT1"
constexpr std::string_view kNetPrefix = "net.";
constexpr std::uint64_t kMaxText = 1u << 24;

}  // namespace

void save_checkpoint(const std::filesystem::path& path, Network& net,
                     const std::map<std::string, std::string>& meta) {
    KeyValues kv;
    for (const auto& [k, v] : meta) {
        if (k.starts_with(kNetPrefix)) continue;
        if (k.find('=') != std::string::npos || k.find('\n') != std::string::npos ||
            v.find('\n') != std::string::npos) {
            throw std::invalid_argument("save_checkpoint: meta entry '" + k + "' is not a single key=value line");
        }
        kv[k] = v;
    }
    for (const auto& [k, v] : parse_key_values(net.config().to_text())) kv[std::string(kNetPrefix) + k] = v;
    const std::string text = format_key_values(kv);

    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write checkpoint " + path.string());
    write_u64(os, kMagic);
    write_u64(os, text.size());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const ParamRef& p : net.parameters()) {
        write_tensor(os, Tensor4(p.shape, std::vector<double>(p.value.begin(), p.value.end())));
    }
    if (!os) throw std::runtime_error("write failed for checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
    if (read_u64(is) != kMagic) throw std::runtime_error(path.string() + " is not a checkpoint");
    const std::uint64_t len = read_u64(is);
    if (len > kMaxText) throw std::runtime_error("checkpoint header too large in " + path.string());
    std::string text(len, '\0');
    is.read(text.data(), static_cast<std::streamsize>(len));
    if (!is) throw std::runtime_error("truncated checkpoint header in " + path.string());

    Checkpoint ck{Network{}, parse_key_values(text)};
    KeyValues net_kv;
    for (const auto& [k, v] : ck.meta) {
        if (k.starts_with(kNetPrefix)) net_kv[k.substr(kNetPrefix.size())] = v;
    }
    Rng rng(0);
    ck.network = Network::build(parse_network_config(net_kv), rng);
    for (ParamRef& p : ck.network.parameters()) {
        Tensor4 t;
        try {
            t = read_tensor(is);
        } catch (const std::exception& e) {
            throw std::runtime_error("checkpoint " + path.string() + ": cannot read " + p.name + ": " + e.what());
        }
        if (!(t.shape() == p.shape)) {
            throw std::runtime_error("checkpoint " + path.string() + ": " + p.name + " has shape " +
                                     t.shape().str() + ", expected " + p.shape.str());
        }
        std::copy(t.data().begin(), t.data().end(), p.value.begin());
    }
    if (is.peek() != std::char_traits<char>::eof()) {
        throw std::runtime_error("checkpoint " + path.string() + " has trailing data");
    }
    return ck;
}

std::vector<Tensor4> score_maps(const Network& net, const Tensor4& image) {
    const Tensor4 logits = predict_logits(net, image);
    const Shape& s = logits.shape();
    std::vector<Tensor4> maps;
    for (std::size_t c = 0; c < s.c; ++c) {
        Tensor4 m({1, 1, s.h, s.w});
        const double* src = logits.plane(0, c);
        const auto [lo, hi] = std::minmax_element(src, src + s.plane());
        const double span = *hi - *lo;
        if (span > 0.0) {
            for (std::size_t i = 0; i < s.plane(); ++i) m[i] = (src[i] - *lo) / span;
        }
        maps.push_back(std::move(m));
    }
    return maps;
}

std::vector<std::filesystem::path> export_score_maps(const Network& net, const Tensor4& image,
                                                     const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    const auto maps = score_maps(net, image);
    const auto names = class_names();
    std::vector<std::filesystem::path> paths;
    for (std::size_t k = 0; k < maps.size(); ++k) {
        const std::string name = k < names.size() ? std::string(names[k]) : "class";
        const auto p = dir / ("class_" + std::to_string(k) + "_" + name + ".pgm");
        write_pgm(p, maps[k]);
        paths.push_back(p);
    }
    return paths;
}

}  // namespace sanet
