#include "patchbench/registry.hpp"

#include <dlfcn.h>

#include <cstdlib>
#include <fstream>
#include <mutex>
#include <sstream>

#include <CLI11.hpp>

#include "patchbench/error.hpp"

namespace patchbench {

namespace fs = std::filesystem;

std::string AdapterEntry::option(const std::string& key, const std::string& fallback) const {
    const auto it = options.find(key);
    return it == options.end() ? fallback : it->second;
}

namespace {

double parse_number(const AdapterEntry& e, const std::string& key, double fallback) {
    const auto it = e.options.find(key);
    if (it == e.options.end()) return fallback;
    try {
        std::size_t used = 0;
        const double v = std::stod(it->second, &used);
        if (used != it->second.size()) throw std::invalid_argument(it->second);
        return v;
    } catch (const std::exception&) {
        throw ParseError("adapter '" + e.name + "': '" + key + "' is not a number: " + it->second);
    }
}

AdapterEntry finish_entry(const std::string& name, std::map<std::string, std::vector<std::string>> raw,
                          const std::string& origin) {
    AdapterEntry e;
    e.name = name;
    auto take = [&](const std::string& key) -> std::vector<std::string> {
        auto it = raw.find(key);
        if (it == raw.end()) return {};
        auto v = std::move(it->second);
        raw.erase(it);
        return v;
    };
    const auto group = take("group");
    if (group.size() != 1) throw ParseError(origin + ": adapter '" + name + "' needs a group");
    try {
        e.group = arch_group_from_string(group.front());
    } catch (const InvalidArgument& err) {
        throw ParseError(origin + ": adapter '" + name + "': " + err.what());
    }
    const auto backend = take("backend");
    if (backend.size() != 1) throw ParseError(origin + ": adapter '" + name + "' needs a backend");
    e.backend = backend.front();
    const auto weights = take("weights_id");
    e.weights_id = weights.empty() ? e.backend + ":" + name : weights.front();
    const auto size = take("input_size");
    if (!size.empty()) {
        if (size.size() != 2) throw ParseError(origin + ": adapter '" + name + "': input_size needs [h, w]");
        try {
            const int h = std::stoi(size[0]), w = std::stoi(size[1]);
            if (h > 0 && w > 0) e.input_size = std::make_pair(h, w);
        } catch (const std::exception&) {
            throw ParseError(origin + ": adapter '" + name + "': bad input_size");
        }
    }
    for (auto& [key, values] : raw) {
        std::string joined;
        for (std::size_t i = 0; i < values.size(); ++i) joined += (i ? "," : "") + values[i];
        e.options[key] = joined;
    }
    return e;
}

}  // namespace

AdapterRegistry AdapterRegistry::parse(const std::string& text, const std::string& origin) {
    std::istringstream in(text);
    std::vector<CLI::ConfigItem> items;
    try {
        items = CLI::ConfigTOML().from_config(in);
    } catch (const CLI::Error& e) {
        throw ParseError(origin + ": " + e.what());
    }
    std::map<std::string, std::map<std::string, std::vector<std::string>>> sections;
    std::vector<std::string> order;
    for (const auto& item : items) {
        if (item.name == "++" || item.name == "--") continue;
        if (item.parents.empty()) {
            throw ParseError(origin + ": key '" + item.name + "' outside of an [adapter] section");
        }
        std::string section = item.parents.front();
        for (std::size_t i = 1; i < item.parents.size(); ++i) section += "." + item.parents[i];
        if (!sections.contains(section)) order.push_back(section);
        sections[section][item.name] = item.inputs;
    }
    AdapterRegistry reg;
    reg.origin_ = origin;
    for (const auto& name : order) reg.add(finish_entry(name, sections[name], origin));
    return reg;
}

AdapterRegistry AdapterRegistry::load(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw NotFound("adapter registry not found: " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return parse(buf.str(), path.string());
}

AdapterRegistry AdapterRegistry::builtin() {
    return parse(R"([toy-red]
group = "OBJECTNESS_V7"
backend = "toy"
weights_id = "toy:red"
template = "red"

[toy-green]
group = "OBJECTNESS_V7"
backend = "toy"
weights_id = "toy:green"
template = "green"

[toy-blue]
group = "OBJECTNESS_V7"
backend = "toy"
weights_id = "toy:blue"
template = "blue"
)",
                 "<builtin>");
}

void AdapterRegistry::add(AdapterEntry entry) {
    const std::string name = entry.name;
    entries_.insert_or_assign(name, std::move(entry));
}

bool AdapterRegistry::contains(const std::string& name) const { return entries_.contains(name); }

const AdapterEntry& AdapterRegistry::entry(const std::string& name) const {
    const auto it = entries_.find(name);
    if (it == entries_.end()) {
        throw NotFound("adapter '" + name + "' is not listed in registry " + origin_);
    }
    return it->second;
}

std::vector<AdapterListing> AdapterRegistry::list() const {
    std::vector<AdapterListing> out;
    for (const auto& [name, e] : entries_) out.push_back({name, e.group, e.weights_id});
    return out;
}

std::vector<AdapterListing> list_adapters(const AdapterRegistry& registry) { return registry.list(); }

ToyDetectorSpec toy_spec_from_entry(const AdapterEntry& e) {
    ToyDetectorSpec spec;
    spec.name = e.name;
    spec.weights_id = e.weights_id;
    spec.group = e.group;
    try {
        if (auto t = e.option("template"); !t.empty()) spec.tmpl = builtin_template(t);
    } catch (const InvalidArgument& err) {
        throw ParseError("adapter '" + e.name + "': " + err.what());
    }
    spec.tmpl.width = static_cast<int>(parse_number(e, "width", spec.tmpl.width));
    spec.tmpl.height = static_cast<int>(parse_number(e, "height", spec.tmpl.height));
    spec.tmpl.channel = static_cast<int>(parse_number(e, "channel", spec.tmpl.channel));
    spec.tmpl.block = static_cast<int>(parse_number(e, "block", spec.tmpl.block));
    spec.tmpl.pattern_seed = static_cast<std::uint64_t>(parse_number(e, "pattern_seed", static_cast<double>(spec.tmpl.pattern_seed)));
    spec.stride = static_cast<int>(parse_number(e, "stride", spec.stride));
    spec.gain = parse_number(e, "gain", spec.gain);
    spec.bias = parse_number(e, "bias", spec.bias);
    spec.variance_floor = parse_number(e, "variance_floor", spec.variance_floor);
    spec.gain2 = parse_number(e, "gain2", spec.gain2);
    spec.bias2 = parse_number(e, "bias2", spec.bias2);
    return spec;
}

fs::path weights_cache_dir() {
    if (const char* env = std::getenv("PATCHBENCH_CACHE"); env && *env) return env;
    if (const char* home = std::getenv("HOME"); home && *home) return fs::path(home) / ".cache" / "patchbench";
    return fs::temp_directory_path() / "patchbench";
}

namespace {

using CreateFn = DetectorAdapter* (*)(const AdapterEntry*);

// Plugin libraries stay loaded for the lifetime of the process.
CreateFn plugin_factory(const std::string& library) {
    static std::mutex mutex;
    static std::map<std::string, CreateFn> cache;
    std::lock_guard lock(mutex);
    if (auto it = cache.find(library); it != cache.end()) return it->second;
    void* handle = dlopen(library.c_str(), RTLD_NOW | RTLD_LOCAL);
    if (!handle) {
        throw BackendError("cannot load plugin " + library + ": " + dlerror());
    }
    auto fn = reinterpret_cast<CreateFn>(dlsym(handle, kPluginDetectorSymbol));
    if (!fn) {
        throw BackendError("plugin " + library + " does not export " + kPluginDetectorSymbol);
    }
    cache.emplace(library, fn);
    return fn;
}

}  // namespace

std::unique_ptr<DetectorAdapter> AdapterRegistry::make(const std::string& name) const {
    const AdapterEntry& e = entry(name);
    if (e.backend == "toy") {
        return toy_detector(toy_spec_from_entry(e));
    }
    if (e.backend == "plugin") {
        const std::string library = e.option("library");
        if (library.empty()) throw BackendError("adapter '" + name + "': plugin backend needs 'library'");
        std::unique_ptr<DetectorAdapter> adapter(plugin_factory(library)(&e));
        if (!adapter) throw BackendError("adapter '" + name + "': plugin returned no detector");
        return adapter;
    }
    throw BackendError("adapter '" + name + "': backend '" + e.backend +
                       "' is not available (built-in: toy; others load through backend = \"plugin\")");
}

}  // namespace patchbench
