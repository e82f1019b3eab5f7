#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "patchbench/detectors.hpp"

namespace patchbench {

/// One `[name]` section of an adapter registry file.
struct AdapterEntry {
    std::string name;
    ArchGroup group = ArchGroup::ObjectnessV7;
    std::string backend;     ///< "toy" or "plugin"
    std::string weights_id;
    std::optional<std::pair<int, int>> input_size;
    std::map<std::string, std::string> options;  ///< every other key, raw text

    std::string option(const std::string& key, const std::string& fallback = {}) const;
};

struct AdapterListing {
    std::string name;
    ArchGroup group;
    std::string weights_id;

    friend bool operator==(const AdapterListing&, const AdapterListing&) = default;
};

class AdapterRegistry {
public:
    AdapterRegistry() = default;

    /// Parses a TOML-style file of `[name]` sections with `key = value` pairs.
    static AdapterRegistry load(const std::filesystem::path& path);
    static AdapterRegistry parse(const std::string& text, const std::string& origin = "<string>");
    /// toy-red, toy-green, toy-blue.
    static AdapterRegistry builtin();

    void add(AdapterEntry entry);
    bool contains(const std::string& name) const;
    const AdapterEntry& entry(const std::string& name) const;
    const std::string& origin() const { return origin_; }

    /// Sorted by name.
    std::vector<AdapterListing> list() const;

    /// Throws NotFound for unknown names and BackendError when the backend
    /// cannot be loaded.
    std::unique_ptr<DetectorAdapter> make(const std::string& name) const;

private:
    std::map<std::string, AdapterEntry> entries_;
    std::string origin_ = "<builtin>";
};

std::vector<AdapterListing> list_adapters(const AdapterRegistry& registry);

/// Toy detector spec from registry options (template, channel, seed, gain...).
ToyDetectorSpec toy_spec_from_entry(const AdapterEntry& entry);

/// $PATCHBENCH_CACHE, else ~/.cache/patchbench.
std::filesystem::path weights_cache_dir();

/// Shared-library plugins export
///   extern "C" patchbench::DetectorAdapter* patchbench_create_detector(const patchbench::AdapterEntry*);
/// The registry entry names the library with `library = "path"`.
inline constexpr const char* kPluginDetectorSymbol = "patchbench_create_detector";

}  // namespace patchbench
