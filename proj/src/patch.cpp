#include "patchbench/patch.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iterator>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "patchbench/error.hpp"

namespace patchbench {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(ArchGroup group) {
    switch (group) {
        case ArchGroup::ObjectnessV7: return "OBJECTNESS_V7";
        case ArchGroup::ClassMax: return "CLASSMAX";
        case ArchGroup::DualHeadV10: return "DUALHEAD_V10";
    }
    return "OBJECTNESS_V7";
}

ArchGroup arch_group_from_string(const std::string& text) {
    if (text == "OBJECTNESS_V7") return ArchGroup::ObjectnessV7;
    if (text == "CLASSMAX") return ArchGroup::ClassMax;
    if (text == "DUALHEAD_V10") return ArchGroup::DualHeadV10;
    throw InvalidArgument("unknown architecture group '" + text + "'");
}

std::string to_string(PatchKind kind) {
    switch (kind) {
        case PatchKind::Optimized: return "optimized";
        case PatchKind::UniformNoise: return "uniform_noise";
        case PatchKind::Grayscale: return "grayscale";
    }
    return "optimized";
}

PatchKind patch_kind_from_string(const std::string& text) {
    if (text == "optimized") return PatchKind::Optimized;
    if (text == "uniform_noise") return PatchKind::UniformNoise;
    if (text == "grayscale") return PatchKind::Grayscale;
    throw InvalidArgument("unknown patch kind '" + text + "'");
}

void LossWeights::validate(bool allow_all_zero) const {
    for (double w : {lambda_s, lambda_v, lambda_m}) {
        if (!(w >= 0.0) || !std::isfinite(w)) {
            throw InvalidArgument("loss weights must be finite and non-negative");
        }
    }
    if (!allow_all_zero && lambda_s == 0.0 && lambda_v == 0.0 && lambda_m == 0.0) {
        throw InvalidArgument("loss weights must not all be zero");
    }
}

void PatchMeta::validate() const {
    if ((kind == PatchKind::Grayscale) != gray_level.has_value()) {
        throw InvalidArgument("gray_level must be present exactly for grayscale patches");
    }
    if (gray_level && (*gray_level < 0.0 || *gray_level > 1.0)) {
        throw InvalidArgument("gray_level must lie in [0,1]");
    }
    if ((kind == PatchKind::Optimized) == (source_model == "baseline")) {
        throw InvalidArgument("source_model is 'baseline' exactly for baseline patches");
    }
}

std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

namespace {

void check_dims(int height, int width) {
    if (height < kMinPatchSide || width < kMinPatchSide) {
        throw InvalidArgument("patch sides must be at least " + std::to_string(kMinPatchSide) + " px, got " +
                              std::to_string(height) + "x" + std::to_string(width));
    }
}

Image uniform_noise(std::int64_t seed, int height, int width) {
    Image pixels(height, width, 3);
    std::mt19937_64 rng(static_cast<std::uint64_t>(seed));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (double& v : pixels.values()) {
        v = static_cast<float>(unit(rng));
    }
    return pixels;
}

}  // namespace

Patch init_patch(std::int64_t seed, int height, int width) {
    check_dims(height, width);
    Patch patch;
    patch.pixels = uniform_noise(seed, height, width);
    patch.meta.patch_id = "init-s" + std::to_string(seed);
    patch.meta.source_model = "untrained";
    patch.meta.kind = PatchKind::Optimized;
    patch.meta.seed = seed;
    patch.meta.epochs_trained = 0;
    patch.meta.created_at = utc_timestamp();
    return patch;
}

Patch baseline_patch(PatchKind kind, std::optional<double> level, std::optional<std::int64_t> seed, int height,
                     int width) {
    check_dims(height, width);
    Patch patch;
    patch.meta.source_model = "baseline";
    patch.meta.kind = kind;
    patch.meta.created_at = utc_timestamp();
    switch (kind) {
        case PatchKind::Grayscale: {
            if (!level || !(*level >= 0.0 && *level <= 1.0)) {
                throw InvalidArgument("grayscale baseline needs a level in [0,1]");
            }
            const double g = static_cast<float>(*level);
            patch.pixels = Image(height, width, 3, g);
            patch.meta.gray_level = g;
            std::ostringstream id;
            id << "gray-" << g;
            patch.meta.patch_id = id.str();
            break;
        }
        case PatchKind::UniformNoise:
            if (!seed) {
                throw InvalidArgument("uniform-noise baseline needs a seed");
            }
            patch.pixels = uniform_noise(*seed, height, width);
            patch.meta.seed = *seed;
            patch.meta.patch_id = "noise-s" + std::to_string(*seed);
            break;
        case PatchKind::Optimized:
            throw InvalidArgument("baseline_patch builds noise or grayscale patches only");
    }
    return patch;
}

Image to_patch_range(const Image& values) {
    Image out = values;
    for (double& v : out.values()) {
        v = std::isfinite(v) ? static_cast<float>(std::clamp(v, 0.0, 1.0)) : 0.0;
    }
    return out;
}

namespace {

constexpr char kMagic[4] = {'A', 'P', 'C', 'H'};

fs::path stem_of(const fs::path& path) {
    std::string s = path.string();
    for (const std::string suffix : {".patch.bin", ".patch.json", ".png"}) {
        if (s.size() > suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0) {
            return s.substr(0, s.size() - suffix.size());
        }
    }
    return path;
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(const std::string& in, std::size_t offset) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[offset + i])) << (8 * i);
    return v;
}

json meta_to_json(const Patch& patch) {
    const PatchMeta& m = patch.meta;
    json j;
    j["patch_id"] = m.patch_id;
    j["source_model"] = m.source_model;
    j["arch_group"] = m.arch_group ? to_string(*m.arch_group) : "none";
    j["kind"] = to_string(m.kind);
    j["gray_level"] = m.gray_level ? json(*m.gray_level) : json(nullptr);
    j["seed"] = m.seed;
    j["epochs_trained"] = m.epochs_trained;
    j["loss_weights"] = {{"lambda_s", m.loss_weights.lambda_s},
                         {"lambda_v", m.loss_weights.lambda_v},
                         {"lambda_m", m.loss_weights.lambda_m}};
    j["created_at"] = m.created_at;
    j["height"] = patch.height();
    j["width"] = patch.width();
    j["channels"] = patch.pixels.channels();
    return j;
}

PatchMeta meta_from_json(const json& j) {
    PatchMeta m;
    m.patch_id = j.at("patch_id").get<std::string>();
    m.source_model = j.at("source_model").get<std::string>();
    const auto group = j.at("arch_group").get<std::string>();
    if (group != "none") m.arch_group = arch_group_from_string(group);
    m.kind = patch_kind_from_string(j.at("kind").get<std::string>());
    if (!j.at("gray_level").is_null()) m.gray_level = j.at("gray_level").get<double>();
    m.seed = j.at("seed").get<std::int64_t>();
    m.epochs_trained = j.at("epochs_trained").get<int>();
    const json& w = j.at("loss_weights");
    m.loss_weights = {w.at("lambda_s").get<double>(), w.at("lambda_v").get<double>(),
                      w.at("lambda_m").get<double>()};
    m.created_at = j.at("created_at").get<std::string>();
    return m;
}

std::string read_all(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw NotFound("cannot open " + path.string());
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

void save_patch(const Patch& patch, const fs::path& path) {
    const fs::path stem = stem_of(path);
    const fs::path parent = stem.parent_path();
    if (!parent.empty() && !fs::is_directory(parent)) {
        throw NotFound("output directory does not exist: " + parent.string());
    }
    const Image& px = patch.pixels;
    std::string bytes(kMagic, kMagic + 4);
    put_u32(bytes, static_cast<std::uint32_t>(px.height()));
    put_u32(bytes, static_cast<std::uint32_t>(px.width()));
    put_u32(bytes, static_cast<std::uint32_t>(px.channels()));
    bytes.reserve(16 + px.size() * 4);
    for (double v : px.values()) {
        put_u32(bytes, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
    {
        std::ofstream out(stem.string() + ".patch.bin", std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw RuntimeFailure("cannot write " + stem.string() + ".patch.bin");
    }
    {
        std::ofstream out(stem.string() + ".patch.json");
        out << meta_to_json(patch).dump(2) << '\n';
        if (!out) throw RuntimeFailure("cannot write " + stem.string() + ".patch.json");
    }
    export_png(patch, stem.string() + ".png");
}

Patch load_patch(const fs::path& path) {
    const fs::path stem = stem_of(path);
    const std::string bin_path = stem.string() + ".patch.bin";
    const std::string bytes = read_all(bin_path);
    if (bytes.size() < 16 || !std::equal(kMagic, kMagic + 4, bytes.begin())) {
        throw FormatError(bin_path + ": missing APCH header");
    }
    const std::uint32_t h = get_u32(bytes, 4);
    const std::uint32_t w = get_u32(bytes, 8);
    const std::uint32_t c = get_u32(bytes, 12);
    if (c != 3 || h < kMinPatchSide || w < kMinPatchSide || h > (1u << 15) || w > (1u << 15)) {
        throw FormatError(bin_path + ": bad tensor shape");
    }
    const std::size_t expected = 16 + static_cast<std::size_t>(h) * w * c * 4;
    if (bytes.size() != expected) {
        throw FormatError(bin_path + ": size " + std::to_string(bytes.size()) + " does not match header (" +
                          std::to_string(expected) + ")");
    }
    Patch patch;
    patch.pixels = Image(static_cast<int>(h), static_cast<int>(w), 3);
    auto values = patch.pixels.values();
    for (std::size_t i = 0; i < values.size(); ++i) {
        const float v = std::bit_cast<float>(get_u32(bytes, 16 + 4 * i));
        if (!(v >= 0.0f && v <= 1.0f)) {
            throw FormatError(bin_path + ": pixel " + std::to_string(i) + " outside [0,1]");
        }
        values[i] = v;
    }

    const std::string json_path = stem.string() + ".patch.json";
    json j;
    try {
        j = json::parse(read_all(json_path));
        patch.meta = meta_from_json(j);
        if (j.at("height").get<std::uint32_t>() != h || j.at("width").get<std::uint32_t>() != w ||
            j.at("channels").get<std::uint32_t>() != c) {
            throw FormatError(json_path + ": sidecar shape does not match " + bin_path);
        }
        patch.meta.validate();
    } catch (const json::exception& e) {
        throw FormatError(json_path + ": " + e.what());
    } catch (const InvalidArgument& e) {
        throw FormatError(json_path + ": " + e.what());
    }
    return patch;
}

void export_png(const Patch& patch, const fs::path& path) {
    write_image_8bit(patch.pixels, path.string());
}

}  // namespace patchbench
