#include "patchbench/cli.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "patchbench/analysis.hpp"
#include "patchbench/error.hpp"
#include "patchbench/evaldata.hpp"
#include "patchbench/evaluation.hpp"
#include "patchbench/optimize.hpp"
#include "patchbench/registry.hpp"
#include "patchbench/report.hpp"

namespace patchbench::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// FNV-1a, used only to fingerprint configs and inputs in run manifests.
std::uint64_t fnv1a(const std::string& bytes, std::uint64_t h = 1469598103934665603ull) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

std::string hex(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw NotFound("cannot open " + p.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_file(const fs::path& p, const std::string& text) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    out << text;
    if (!out) throw RuntimeFailure("cannot write " + p.string());
}

std::string digest_path(const fs::path& p) {
    if (fs::is_regular_file(p)) return hex(fnv1a(read_file(p)));
    if (fs::is_directory(p)) {
        std::vector<fs::path> files;
        for (const auto& e : fs::recursive_directory_iterator(p)) {
            if (e.is_regular_file()) files.push_back(e.path());
        }
        std::sort(files.begin(), files.end());
        std::uint64_t h = fnv1a("");
        for (const auto& f : files) {
            h = fnv1a(fs::relative(f, p).generic_string(), h);
            h = fnv1a(read_file(f), h);
        }
        return hex(h);
    }
    return "missing";
}

struct Common {
    std::string registry;
    std::string out = "out";
    std::int64_t seed = 0;
    int jobs = 1;
};

struct DataOpts {
    std::string path;
    std::string split = "test";
    std::string images_dir;
    std::string category = "person";
};

struct EvalOpts {
    double conf = kDefaultConfThresh;
    double iou = kDefaultIouThresh;
    double placement_scale = 0.75;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--registry", c.registry, "Adapter registry file (defaults to the built-in toy adapters)");
    cmd->add_option("--out", c.out, "Output directory")->capture_default_str();
    cmd->add_option("--seed", c.seed, "Global seed")->capture_default_str();
    cmd->add_option("--jobs", c.jobs, "Maximum parallel workers")->capture_default_str()->check(CLI::PositiveNumber);
}

void add_data(CLI::App* cmd, DataOpts& d) {
    cmd->add_option("--data", d.path, "Dataset: synthetic spec, COCO JSON, manifest or INRIA root")->required();
    cmd->add_option("--split", d.split, "INRIA split (train|test)")->capture_default_str();
    cmd->add_option("--images-dir", d.images_dir, "Image directory for COCO annotations");
    cmd->add_option("--category", d.category, "Target category name")->capture_default_str();
}

void add_eval(CLI::App* cmd, EvalOpts& e) {
    cmd->add_option("--conf", e.conf, "Detection confidence threshold")->capture_default_str();
    cmd->add_option("--iou", e.iou, "NMS IoU threshold")->capture_default_str();
    cmd->add_option("--placement-scale", e.placement_scale, "Patch side as a fraction of the shorter box side")
        ->capture_default_str();
}

AdapterRegistry load_registry(const Common& c) {
    return c.registry.empty() ? AdapterRegistry::builtin() : AdapterRegistry::load(c.registry);
}

AnnotatedDataset load_data(const DataOpts& d) {
    AnnotatedDataset ds = load_dataset(d.path, d.split, d.images_dir, d.category);
    for (const auto& w : ds.warnings) std::cerr << "warning: " << w << '\n';
    return ds;
}

EvalParams eval_params(const EvalOpts& e, int jobs) {
    if (!(e.conf >= 0.0 && e.conf <= 1.0)) throw InvalidArgument("--conf must lie in [0,1]");
    if (!(e.iou > 0.0 && e.iou <= 1.0)) throw InvalidArgument("--iou must lie in (0,1]");
    if (!(e.placement_scale > 0.0)) throw InvalidArgument("--placement-scale must be positive");
    return {e.conf, e.iou, e.placement_scale, jobs};
}

std::vector<fs::path> patch_files(const fs::path& p) {
    std::vector<fs::path> out;
    if (fs::is_directory(p)) {
        for (const auto& e : fs::directory_iterator(p)) {
            const std::string name = e.path().filename().string();
            if (e.is_regular_file() && name.size() > 10 && name.ends_with(".patch.bin")) out.push_back(e.path());
        }
        std::sort(out.begin(), out.end());
    } else if (fs::exists(p) || fs::exists(p.string() + ".patch.bin")) {
        out.push_back(p);
    } else {
        throw NotFound("patch path not found: " + p.string());
    }
    return out;
}

std::vector<Patch> load_patches(const fs::path& p) {
    std::vector<Patch> out;
    for (const auto& f : patch_files(p)) out.push_back(load_patch(f));
    if (out.empty()) throw InvalidArgument("no patches found in " + p.string());
    return out;
}

std::string set_label(const std::string& spec, fs::path& path) {
    const auto eq = spec.find('=');
    if (eq != std::string::npos) {
        path = spec.substr(eq + 1);
        return spec.substr(0, eq);
    }
    path = spec;
    fs::path clean = path;
    if (!clean.has_filename()) clean = clean.parent_path();
    return clean.filename().string();
}

void write_manifest(const fs::path& out, const std::string& command, const json& config,
                    const std::vector<std::string>& inputs, const json& seeds) {
    json in = json::array();
    for (const auto& p : inputs) in.push_back({{"path", p}, {"digest", digest_path(p)}});
    const json m = {{"command", command},
                    {"config", config},
                    {"config_hash", hex(fnv1a(config.dump()))},
                    {"seeds", seeds},
                    {"inputs", in}};
    write_file(out / "manifest.json", m.dump(2) + "\n");
}

// ---------------------------------------------------------------- train

struct TrainOpts {
    Common common;
    DataOpts data;
    std::string adapter;
    int count = 1;
    int epochs = 100;
    int batch = 8;
    double lr = 0.01;
    int lr_drop_every = 25;
    double lr_drop_factor = 10.0;
    double weight_decay = 0.0;
    double lambda_s = 0.1, lambda_v = 1.0, lambda_m = 1.0;
    double placement_scale = 0.75;
    int patch_size = kDefaultPatchSide;
    bool target_class_only = false;
    int target_class = 0;
    int checkpoint_every = 0;
    bool no_augment = false;
    AugmentParams augment;
};

int cmd_train(const TrainOpts& o) {
    if (o.count < 1) throw InvalidArgument("--count must be at least 1");
    const AdapterRegistry registry = load_registry(o.common);
    const auto adapter = registry.make(o.adapter);
    const AnnotatedDataset ds = load_data(o.data);

    TrainConfig cfg;
    cfg.epochs = o.epochs;
    cfg.lr0 = o.lr;
    cfg.lr_drop_every = o.lr_drop_every;
    cfg.lr_drop_factor = o.lr_drop_factor;
    cfg.batch_size = o.batch;
    cfg.weights = {o.lambda_s, o.lambda_v, o.lambda_m};
    cfg.augment = o.no_augment ? AugmentParams::identity() : o.augment;
    cfg.placement_scale = o.placement_scale;
    cfg.seed = o.common.seed;
    cfg.optimizer.weight_decay = o.weight_decay;
    cfg.patch_height = cfg.patch_width = o.patch_size;
    cfg.target_class = o.target_class_only ? o.target_class : -1;
    cfg.checkpoint_every = o.checkpoint_every;
    const fs::path out = o.common.out;
    if (o.checkpoint_every > 0) cfg.checkpoint_dir = out / "checkpoints";

    const std::vector<TrainResult> results = train_patch_set(*adapter, ds, cfg, o.count, o.common.jobs);

    fs::create_directories(out);
    json seeds = json::array();
    for (const auto& r : results) {
        save_patch(r.patch, out / r.patch.meta.patch_id);
        write_file(out / (r.patch.meta.patch_id + ".train.jsonl"), r.log.to_jsonl());
        seeds.push_back(r.patch.meta.seed);
        std::cout << r.patch.meta.patch_id << '\n';
    }
    const json config = {{"adapter", o.adapter},
                         {"weights_id", adapter->weights_id()},
                         {"count", o.count},
                         {"epochs", o.epochs},
                         {"batch_size", o.batch},
                         {"lr", o.lr},
                         {"lr_drop_every", o.lr_drop_every},
                         {"lr_drop_factor", o.lr_drop_factor},
                         {"weight_decay", o.weight_decay},
                         {"lambda", {o.lambda_s, o.lambda_v, o.lambda_m}},
                         {"placement_scale", o.placement_scale},
                         {"patch_size", o.patch_size},
                         {"target_class", cfg.target_class},
                         {"augment",
                          {{"resize", {cfg.augment.resize_lo, cfg.augment.resize_hi}},
                           {"rotation_deg", cfg.augment.rotation_deg},
                           {"perspective", cfg.augment.perspective_scale},
                           {"jitter",
                            {cfg.augment.jitter.brightness, cfg.augment.jitter.contrast,
                             cfg.augment.jitter.saturation, cfg.augment.jitter.hue}}}},
                         {"data", o.data.path},
                         {"seed", o.common.seed}};
    write_manifest(out, "train", config, {o.data.path}, seeds);
    return kExitOk;
}

// ---------------------------------------------------------------- eval

struct EvalCmdOpts {
    Common common;
    DataOpts data;
    EvalOpts eval;
    std::string adapter;
    std::vector<std::string> patches;
};

int cmd_eval(const EvalCmdOpts& o) {
    if (o.patches.empty()) throw InvalidArgument("--patches is required");
    std::vector<std::pair<std::string, std::vector<Patch>>> sets;
    std::vector<std::string> inputs{o.data.path};
    for (const auto& spec : o.patches) {
        fs::path p;
        const std::string label = set_label(spec, p);
        sets.emplace_back(label, load_patches(p));
        inputs.push_back(p.string());
    }
    const AdapterRegistry registry = load_registry(o.common);
    const auto adapter = registry.make(o.adapter);
    const AnnotatedDataset ds = load_data(o.data);
    const EvalParams params = eval_params(o.eval, o.common.jobs);

    std::ostringstream lines;
    for (const auto& [label, patches] : sets) {
        const EvalRecord rec = evaluate_patch_set(*adapter, ds, patches, params, label);
        lines << to_json(rec).dump() << '\n';
        std::cout << label << ": clean " << format_double(rec.map_clean) << ", drop " << format_double(rec.map_drop)
                  << '\n';
    }
    const fs::path out = o.common.out;
    write_file(out / "records.jsonl", lines.str());
    const json config = {{"adapter", o.adapter},      {"weights_id", adapter->weights_id()},
                         {"patches", o.patches},      {"data", o.data.path},
                         {"conf", params.conf_thresh}, {"iou", params.iou_thresh},
                         {"placement_scale", params.placement_scale}};
    write_manifest(out, "eval", config, inputs, json::array({o.common.seed}));
    return kExitOk;
}

// ---------------------------------------------------------------- matrix

struct MatrixOpts {
    Common common;
    DataOpts data;
    EvalOpts eval;
    std::vector<std::string> adapters;
    std::vector<std::string> sources;
    std::vector<double> gray_levels{0.5};
    std::int64_t noise_seed = 0;
    bool no_noise = false;
    int baseline_side = 64;
};

int cmd_matrix(const MatrixOpts& o) {
    if (o.sources.empty()) throw InvalidArgument("matrix needs at least one --source");
    if (o.adapters.empty()) throw InvalidArgument("matrix needs at least one --adapter");
    std::vector<PatchSet> sets;
    std::vector<std::string> inputs{o.data.path};
    for (const auto& spec : o.sources) {
        fs::path p;
        const std::string label = set_label(spec, p);
        sets.push_back({label, load_patches(p)});
        inputs.push_back(p.string());
    }
    const AdapterRegistry registry = load_registry(o.common);
    std::vector<std::unique_ptr<DetectorAdapter>> owned;
    std::vector<Evaluator> evaluators;
    int backend_failures = 0;
    for (const auto& name : o.adapters) {
        Evaluator e{name, nullptr, {}};
        try {
            owned.push_back(registry.make(name));
            e.adapter = owned.back().get();
        } catch (const BackendError& err) {
            e.error = err.what();
            ++backend_failures;
        } catch (const NotFound& err) {
            e.error = err.what();
        }
        evaluators.push_back(std::move(e));
    }
    const AnnotatedDataset ds = load_data(o.data);
    BaselineConfig baselines;
    baselines.noise_seed = o.no_noise ? std::nullopt : std::optional<std::int64_t>(o.noise_seed);
    baselines.gray_levels = o.gray_levels;
    baselines.patch_side = o.baseline_side;
    const CompatibilityMatrix m = compatibility_matrix(sets, evaluators, ds, baselines, eval_params(o.eval, o.common.jobs));
    for (const auto& w : m.warnings) std::cerr << "warning: " << w << '\n';

    bool any = false;
    for (const auto& row : m.cells) {
        for (const auto& v : row) any = any || v.has_value();
    }
    const fs::path out = o.common.out;
    write_file(out / "matrix.json", to_json(m).dump(2) + "\n");
    write_file(out / "matrix.csv", to_csv(m));
    render_heatmap(m, out / "heatmap.svg");
    json labels = json::array();
    for (const auto& s : sets) labels.push_back(s.source);
    const json config = {{"adapters", o.adapters},
                         {"sources", labels},
                         {"data", o.data.path},
                         {"gray_levels", o.gray_levels},
                         {"noise_seed", baselines.noise_seed ? json(*baselines.noise_seed) : json(nullptr)},
                         {"baseline_side", o.baseline_side},
                         {"conf", o.eval.conf},
                         {"iou", o.eval.iou},
                         {"placement_scale", o.eval.placement_scale}};
    write_manifest(out, "matrix", config, inputs, json::array({o.common.seed}));
    std::cout << to_csv(m);
    if (!any) {
        std::cerr << "error: every matrix cell failed\n";
        return backend_failures > 0 ? kExitBackend : kExitConfig;
    }
    return kExitOk;
}

// ---------------------------------------------------------------- analyze

struct AnalyzeOpts {
    Common common;
    std::vector<std::string> patches;
    std::vector<std::string> records;
    std::string perplexity = "auto";
    int iterations = 1000;
    std::string extractor = "mock";
    std::string model;
    std::string layer;
    int input_side = 299;
    std::string space = "both";
    std::string single;
};

std::vector<Patch> corpus(const AnalyzeOpts& o, std::vector<std::string>& inputs) {
    if (o.patches.empty()) throw InvalidArgument("--patches is required");
    std::vector<Patch> all;
    for (const auto& spec : o.patches) {
        fs::path p;
        set_label(spec, p);
        auto ps = load_patches(p);
        all.insert(all.end(), std::make_move_iterator(ps.begin()), std::make_move_iterator(ps.end()));
        inputs.push_back(p.string());
    }
    std::stable_sort(all.begin(), all.end(),
                     [](const Patch& a, const Patch& b) { return a.meta.patch_id < b.meta.patch_id; });
    return all;
}

int cmd_tsne(const AnalyzeOpts& o) {
    std::vector<std::string> inputs;
    const std::vector<Patch> patches = corpus(o, inputs);
    const std::size_t n = patches.size();
    if (n < 4) throw InvalidArgument("t-SNE needs at least 4 patches, got " + std::to_string(n));

    TsneParams params;
    params.iterations = o.iterations;
    params.seed = static_cast<std::uint64_t>(o.common.seed);
    if (o.perplexity == "auto") {
        // Just inside the feasible range (perplexity < (n - 1) / 3).
        params.perplexity = std::min(30.0, 0.9 * (static_cast<double>(n) - 1.0) / 3.0);
    } else {
        try {
            params.perplexity = std::stod(o.perplexity);
        } catch (const std::exception&) {
            throw InvalidArgument("--perplexity must be a number or 'auto'");
        }
    }

    // Drop per patch: the record on the patch's own source model when present.
    std::map<std::string, std::pair<double, bool>> drops;
    for (const auto& rf : o.records) {
        inputs.push_back(rf);
        std::istringstream in(read_file(rf));
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            json j;
            try {
                j = json::parse(line);
            } catch (const json::parse_error& e) {
                throw ParseError(rf + ": " + e.what());
            }
            const EvalRecord r = eval_record_from_json(j);
            for (std::size_t i = 0; i < r.patch_ids.size() && i < r.per_patch_drops.size(); ++i) {
                auto& slot = drops[r.patch_ids[i]];
                const bool own = r.patch_ids[i].rfind(r.model + "-", 0) == 0;
                if (!slot.second || own) slot = {r.per_patch_drops[i], own};
            }
        }
    }

    std::unique_ptr<FeatureExtractor> fx;
    if (o.extractor == "mock") {
        fx = std::make_unique<MockExtractor>(32, 32, 5, static_cast<std::uint64_t>(o.common.seed));
    } else if (o.extractor == "dnn") {
        if (o.model.empty() || o.layer.empty()) throw InvalidArgument("--extractor dnn needs --model and --layer");
        fx = std::make_unique<DnnExtractor>(o.model, o.layer, o.input_side);
    } else {
        throw InvalidArgument("--extractor must be mock or dnn");
    }
    std::vector<FeatureVector> feats;
    for (const Patch& p : patches) feats.push_back(extract_features(*fx, p));
    const auto emb = tsne_embed(feats, params);

    std::vector<EmbeddingPoint> points;
    for (std::size_t i = 0; i < n; ++i) {
        const PatchMeta& m = patches[i].meta;
        const auto it = drops.find(m.patch_id);
        points.push_back({emb[i][0], emb[i][1], m.patch_id, m.source_model,
                          m.arch_group ? to_string(*m.arch_group) : std::string("baseline"),
                          it == drops.end() ? 0.0 : it->second.first});
    }
    const fs::path out = o.common.out;
    render_tsne(points, out / "tsne.svg");
    const json config = {{"perplexity", params.perplexity},
                         {"iterations", params.iterations},
                         {"extractor", fx->id()},
                         {"patches", o.patches},
                         {"records", o.records}};
    write_manifest(out, "analyze tsne", config, inputs, json::array({o.common.seed}));
    std::cout << n << " points\n";
    return kExitOk;
}

int cmd_hist(const AnalyzeOpts& o) {
    std::vector<std::string> inputs;
    const std::vector<Patch> patches = corpus(o, inputs);
    std::vector<ColorSpace> spaces;
    if (o.space == "rgb" || o.space == "both") spaces.push_back(ColorSpace::RGB);
    if (o.space == "hsv" || o.space == "both") spaces.push_back(ColorSpace::HSV);
    if (spaces.empty()) throw InvalidArgument("--space must be rgb, hsv or both");

    const Patch* single = &patches.front();
    if (!o.single.empty()) {
        const auto it = std::find_if(patches.begin(), patches.end(),
                                     [&](const Patch& p) { return p.meta.patch_id == o.single; });
        if (it == patches.end()) throw InvalidArgument("--single names an unknown patch: " + o.single);
        single = &*it;
    }
    std::map<std::string, std::vector<Patch>> by_source;
    for (const Patch& p : patches) by_source[p.meta.source_model].push_back(p);

    const fs::path out = o.common.out;
    std::vector<StatsRow> rows;
    for (ColorSpace space : spaces) {
        const bool rgb = space == ColorSpace::RGB;
        const std::array<std::string, 3> names = rgb ? std::array<std::string, 3>{"R", "G", "B"}
                                                     : std::array<std::string, 3>{"H", "S", "V"};
        HistogramGrid grid;
        grid.space = space;
        grid.column_titles = {single->meta.patch_id, single->meta.source_model, "all"};
        const auto hs = channel_histograms({*single}, space);
        const auto hsrc = channel_histograms(by_source[single->meta.source_model], space);
        const auto hall = channel_histograms(patches, space);
        for (int c = 0; c < 3; ++c) grid.cells[c] = {hs[c], hsrc[c], hall[c]};
        render_histograms(grid, out / (rgb ? "hist_rgb.svg" : "hist_hsv.svg"));

        for (const auto& [source, set] : by_source) {
            const auto h = channel_histograms(set, space);
            for (int c = 0; c < 3; ++c) rows.push_back({names[c], source, histogram_stats(h[c])});
        }
        for (int c = 0; c < 3; ++c) rows.push_back({names[c], "all", histogram_stats(hall[c])});
    }
    write_file(out / "stats.csv", render_stats_table(rows));
    const json config = {{"space", o.space}, {"patches", o.patches}, {"single", single->meta.patch_id}};
    write_manifest(out, "analyze hist", config, inputs, json::array({o.common.seed}));
    std::cout << rows.size() << " stats rows\n";
    return kExitOk;
}

// ---------------------------------------------------------------- baseline

struct BaselineOpts {
    Common common;
    std::string kind = "gray";
    std::vector<double> gray_levels{0.5};
    int count = 1;
    int patch_size = kDefaultPatchSide;
};

int cmd_baseline(const BaselineOpts& o) {
    const fs::path out = o.common.out;
    std::vector<Patch> made;
    if (o.kind == "gray") {
        for (double level : o.gray_levels) {
            Patch p = baseline_patch(PatchKind::Grayscale, level, std::nullopt, o.patch_size, o.patch_size);
            p.meta.patch_id = gray_label(level);
            made.push_back(std::move(p));
        }
    } else if (o.kind == "noise") {
        if (o.count < 1) throw InvalidArgument("--count must be at least 1");
        for (int i = 0; i < o.count; ++i) {
            Patch p = baseline_patch(PatchKind::UniformNoise, std::nullopt, o.common.seed + i, o.patch_size,
                                     o.patch_size);
            p.meta.patch_id = "noise-s" + std::to_string(o.common.seed + i);
            made.push_back(std::move(p));
        }
    } else {
        throw InvalidArgument("--kind must be gray or noise");
    }
    fs::create_directories(out);
    json seeds = json::array();
    for (Patch& p : made) {
        p.meta.created_at = utc_timestamp();
        save_patch(p, out / p.meta.patch_id);
        seeds.push_back(p.meta.seed);
        std::cout << p.meta.patch_id << '\n';
    }
    const json config = {{"kind", o.kind}, {"gray_levels", o.gray_levels}, {"count", o.count}, {"patch_size", o.patch_size}};
    write_manifest(out, "baseline", config, {}, seeds);
    return kExitOk;
}

int cmd_list(const Common& c) {
    const AdapterRegistry registry = load_registry(c);
    for (const auto& a : list_adapters(registry)) {
        std::cout << a.name << '\t' << to_string(a.group) << '\t' << a.weights_id << '\n';
    }
    return kExitOk;
}

int dispatch(CLI::App& app, const std::vector<std::string>& args) {
    app.require_subcommand(1);
    app.set_config("--config", "", "TOML run config; command-line flags override its values");

    TrainOpts train;
    auto* t = app.add_subcommand("train", "Optimize a set of adversarial patches against one detector");
    add_common(t, train.common);
    add_data(t, train.data);
    t->add_option("--adapter", train.adapter, "Detector to attack")->required();
    t->add_option("--count", train.count, "Number of patches (seeds seed, seed+1, ...)")->capture_default_str();
    t->add_option("--epochs", train.epochs, "Training epochs")->capture_default_str()->check(CLI::NonNegativeNumber);
    t->add_option("--batch-size", train.batch, "Images per optimizer step")->capture_default_str();
    t->add_option("--lr", train.lr, "Initial learning rate")->capture_default_str();
    t->add_option("--lr-drop-every", train.lr_drop_every, "Epochs between learning-rate drops")->capture_default_str();
    t->add_option("--lr-drop-factor", train.lr_drop_factor, "Learning-rate divisor per drop")->capture_default_str();
    t->add_option("--weight-decay", train.weight_decay, "AdamW weight decay")->capture_default_str();
    t->add_option("--lambda-s", train.lambda_s, "Smoothness weight")->capture_default_str();
    t->add_option("--lambda-v", train.lambda_v, "Validity weight")->capture_default_str();
    t->add_option("--lambda-m", train.lambda_m, "Target-loss weight")->capture_default_str();
    t->add_option("--placement-scale", train.placement_scale, "Patch side relative to the shorter box side")
        ->capture_default_str();
    t->add_option("--patch-size", train.patch_size, "Patch side in pixels")->capture_default_str();
    t->add_flag("--target-class-only", train.target_class_only, "Class-score detectors: use only --target-class");
    t->add_option("--target-class", train.target_class, "Class column for --target-class-only")->capture_default_str();
    t->add_option("--checkpoint-every", train.checkpoint_every, "Save a checkpoint every N epochs");
    t->add_flag("--no-augment", train.no_augment, "Disable augmentation");
    t->add_option("--resize-lo", train.augment.resize_lo)->capture_default_str();
    t->add_option("--resize-hi", train.augment.resize_hi)->capture_default_str();
    t->add_option("--rotation", train.augment.rotation_deg, "Max rotation in degrees")->capture_default_str();
    t->add_option("--perspective", train.augment.perspective_scale, "Max corner shift (fraction of side)")
        ->capture_default_str();
    t->add_option("--brightness", train.augment.jitter.brightness)->capture_default_str();
    t->add_option("--contrast", train.augment.jitter.contrast)->capture_default_str();
    t->add_option("--saturation", train.augment.jitter.saturation)->capture_default_str();
    t->add_option("--hue", train.augment.jitter.hue)->capture_default_str();

    EvalCmdOpts ev;
    auto* e = app.add_subcommand("eval", "Measure the mAP drop a patch set causes on one detector");
    add_common(e, ev.common);
    add_data(e, ev.data);
    add_eval(e, ev.eval);
    e->add_option("--adapter", ev.adapter, "Detector to evaluate")->required();
    e->add_option("--patches", ev.patches, "Patch directory or file, optionally label=path")->required();

    MatrixOpts mx;
    auto* m = app.add_subcommand("matrix", "Cross-evaluate patch sets on several detectors");
    add_common(m, mx.common);
    add_data(m, mx.data);
    add_eval(m, mx.eval);
    m->add_option("--adapter", mx.adapters, "Evaluating detectors (repeatable)")->required();
    m->add_option("--source", mx.sources, "Patch set directory, optionally label=path (repeatable)")->required();
    m->add_option("--gray-levels", mx.gray_levels, "Gray baseline levels")->capture_default_str()->delimiter(',');
    m->add_option("--noise-seed", mx.noise_seed, "Seed of the uniform-noise baseline")->capture_default_str();
    m->add_flag("--no-noise", mx.no_noise, "Omit the noise baseline column");
    m->add_option("--baseline-size", mx.baseline_side, "Side of the baseline patches")->capture_default_str();

    AnalyzeOpts an;
    auto* a = app.add_subcommand("analyze", "Patch analysis: t-SNE embedding or color histograms");
    a->require_subcommand(1);
    auto* ts = a->add_subcommand("tsne", "t-SNE of patch features");
    auto* hi = a->add_subcommand("hist", "Channel histograms and statistics");
    for (auto* sub : {ts, hi}) {
        add_common(sub, an.common);
        sub->add_option("--patches", an.patches, "Patch directories or files (repeatable)")->required();
    }
    ts->add_option("--records", an.records, "EvalRecord JSON lines used to size markers");
    ts->add_option("--perplexity", an.perplexity, "Perplexity or 'auto'")->capture_default_str();
    ts->add_option("--iterations", an.iterations, "Gradient steps")->capture_default_str();
    ts->add_option("--extractor", an.extractor, "mock or dnn")->capture_default_str();
    ts->add_option("--model", an.model, "Network file for --extractor dnn");
    ts->add_option("--layer", an.layer, "Layer to pool for --extractor dnn");
    ts->add_option("--input-side", an.input_side, "Network input side")->capture_default_str();
    hi->add_option("--space", an.space, "rgb, hsv or both")->capture_default_str();
    hi->add_option("--single", an.single, "patch_id for the single-patch column");

    BaselineOpts bl;
    auto* b = app.add_subcommand("baseline", "Write gray or uniform-noise baseline patches");
    add_common(b, bl.common);
    b->add_option("--kind", bl.kind, "gray or noise")->capture_default_str();
    b->add_option("--gray-levels", bl.gray_levels, "Gray levels")->capture_default_str()->delimiter(',');
    b->add_option("--count", bl.count, "Noise patches to write")->capture_default_str();
    b->add_option("--patch-size", bl.patch_size, "Patch side")->capture_default_str();

    Common lc;
    auto* l = app.add_subcommand("list-adapters", "Print the adapters of a registry");
    l->add_option("--registry", lc.registry, "Adapter registry file");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);

    if (t->parsed()) return cmd_train(train);
    if (e->parsed()) return cmd_eval(ev);
    if (m->parsed()) return cmd_matrix(mx);
    if (ts->parsed()) return cmd_tsne(an);
    if (hi->parsed()) return cmd_hist(an);
    if (b->parsed()) return cmd_baseline(bl);
    if (l->parsed()) return cmd_list(lc);
    return kExitConfig;
}

}  // namespace

int run(const std::vector<std::string>& args) {
    CLI::App app{"patchbench: adversarial patch training and transferability benchmark"};
    app.name("patchbench");
    try {
        return dispatch(app, args);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    } catch (const BackendError& e) {
        std::cerr << "backend error: " << e.what() << '\n';
        return kExitBackend;
    } catch (const InvalidArgument& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const NotFound& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const ParseError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const FormatError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
}

int run(int argc, const char* const* argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run(args);
}

}  // namespace patchbench::cli
