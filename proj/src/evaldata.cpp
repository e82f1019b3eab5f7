#include "patchbench/evaldata.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <regex>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>
#include <opencv2/imgcodecs.hpp>

#include "patchbench/error.hpp"

namespace patchbench {

namespace fs = std::filesystem;
using nlohmann::json;

std::size_t AnnotatedDataset::box_count() const {
    std::size_t n = 0;
    for (const auto& s : samples) n += s.boxes.size();
    return n;
}

Image AnnotatedDataset::image(std::size_t i) const {
    const Sample& s = samples.at(i);
    if (s.pixels) return *s.pixels;
    return read_image(s.image_path);
}

namespace {

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw NotFound("cannot open " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

// Keeps boxes with positive area that touch the frame; records the rest.
void add_boxes(Sample& sample, const std::vector<BBox>& boxes, const std::string& where,
               std::vector<std::string>& warnings) {
    for (const BBox& b : boxes) {
        if (!b.valid()) {
            warnings.push_back(where + ": dropped zero-area box");
        } else if (sample.width > 0 && sample.height > 0 && !b.intersects_frame(sample.width, sample.height)) {
            warnings.push_back(where + ": dropped box outside the image");
        } else {
            sample.boxes.push_back(b);
        }
    }
}

fs::path find_split_dir(const fs::path& root, InriaSplit split) {
    const std::string name = split == InriaSplit::Train ? "Train" : "Test";
    for (const std::string& candidate : {name, std::string(1, static_cast<char>(std::tolower(name[0]))) + name.substr(1)}) {
        if (fs::is_directory(root / candidate)) return root / candidate;
    }
    throw NotFound("INRIA split directory '" + name + "' not found under " + root.string());
}

std::pair<int, int> image_dims(const fs::path& path) {
    const cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
    if (m.empty()) throw NotFound("cannot read image " + path.string());
    return {m.cols, m.rows};
}

}  // namespace

AnnotatedDataset load_inria(const fs::path& root, InriaSplit split) {
    if (!fs::is_directory(root)) throw NotFound("INRIA root not found: " + root.string());
    const fs::path split_dir = find_split_dir(root, split);
    AnnotatedDataset ds;
    ds.id = "inria-" + std::string(split == InriaSplit::Train ? "train" : "test");
    ds.category = "person";

    const fs::path ann_dir = split_dir / "annotations";
    std::vector<fs::path> files;
    if (fs::is_directory(ann_dir)) {
        for (const auto& entry : fs::directory_iterator(ann_dir)) {
            if (entry.is_regular_file() && entry.path().extension() == ".txt") files.push_back(entry.path());
        }
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) {
        ds.warnings.push_back("no annotation files under " + ann_dir.string() + "; dataset is empty");
        return ds;
    }

    static const std::regex filename_re(R"re(^Image filename\s*:\s*"([^"]+)")re");
    static const std::regex size_re(R"(^Image size \(X x Y x C\)\s*:\s*(\d+)\s*x\s*(\d+)(\s*x\s*\d+)?\s*$)");
    static const std::regex box_re(
        R"(^Bounding box for object \d+ "[^"]*" \(Xmin, Ymin\) - \(Xmax, Ymax\)\s*:\s*\(\s*(-?\d+(?:\.\d+)?)\s*,\s*(-?\d+(?:\.\d+)?)\s*\)\s*-\s*\(\s*(-?\d+(?:\.\d+)?)\s*,\s*(-?\d+(?:\.\d+)?)\s*\)\s*$)");

    for (const fs::path& file : files) {
        std::istringstream in(read_text(file));
        std::string line;
        int lineno = 0;
        Sample sample;
        std::vector<BBox> boxes;
        std::string filename;
        while (std::getline(in, line)) {
            ++lineno;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            std::smatch m;
            const std::string where = file.string() + ":" + std::to_string(lineno);
            if (line.rfind("Image filename", 0) == 0) {
                if (!std::regex_search(line, m, filename_re)) throw ParseError(where + ": malformed image filename line");
                filename = m[1];
            } else if (line.rfind("Image size", 0) == 0) {
                if (!std::regex_match(line, m, size_re)) throw ParseError(where + ": malformed image size line");
                sample.width = std::stoi(m[1]);
                sample.height = std::stoi(m[2]);
            } else if (line.rfind("Bounding box", 0) == 0) {
                if (!std::regex_match(line, m, box_re)) throw ParseError(where + ": malformed bounding box line");
                const double x0 = std::stod(m[1]), y0 = std::stod(m[2]), x1 = std::stod(m[3]), y1 = std::stod(m[4]);
                boxes.push_back({x0, y0, x1 - x0, y1 - y0});
            }
        }
        if (filename.empty()) throw ParseError(file.string() + ": no 'Image filename' line");
        fs::path image = root / filename;
        if (!fs::exists(image)) image = split_dir.parent_path() / filename;
        if (!fs::exists(image)) {
            throw NotFound(file.string() + " references missing image " + filename);
        }
        sample.image_path = image.string();
        if (sample.width <= 0 || sample.height <= 0) std::tie(sample.width, sample.height) = image_dims(image);
        add_boxes(sample, boxes, file.string(), ds.warnings);
        if (sample.boxes.empty()) {
            ds.warnings.push_back(file.string() + ": no usable boxes, image skipped");
            continue;
        }
        ds.samples.push_back(std::move(sample));
    }
    return ds;
}

AnnotatedDataset load_coco_subset(const fs::path& ann_json, const fs::path& images_dir,
                                  const std::string& category_name) {
    json j;
    try {
        j = json::parse(read_text(ann_json));
    } catch (const json::parse_error& e) {
        throw ParseError(ann_json.string() + ": " + e.what());
    }
    try {
        std::optional<std::int64_t> cat_id;
        for (const auto& c : j.at("categories")) {
            if (c.at("name").get<std::string>() == category_name) cat_id = c.at("id").get<std::int64_t>();
        }
        if (!cat_id) {
            throw InvalidArgument("category '" + category_name + "' not found in " + ann_json.string());
        }
        AnnotatedDataset ds;
        ds.id = "coco-" + ann_json.stem().string();
        ds.category = category_name;

        struct Info {
            std::string file;
            int width;
            int height;
            std::vector<BBox> boxes;
        };
        std::map<std::int64_t, Info> images;
        for (const auto& im : j.at("images")) {
            images[im.at("id").get<std::int64_t>()] = {im.at("file_name").get<std::string>(), im.value("width", 0),
                                                       im.value("height", 0), {}};
        }
        for (const auto& a : j.at("annotations")) {
            if (a.at("category_id").get<std::int64_t>() != *cat_id) continue;
            const auto id = a.at("image_id").get<std::int64_t>();
            auto it = images.find(id);
            if (it == images.end()) throw ParseError(ann_json.string() + ": annotation for unknown image " + std::to_string(id));
            if (a.value("iscrowd", 0) != 0) {
                ds.warnings.push_back(it->second.file + ": skipped crowd annotation");
                continue;
            }
            const auto& bb = a.at("bbox");
            if (bb.size() != 4) throw ParseError(ann_json.string() + ": bbox must have 4 numbers");
            it->second.boxes.push_back({bb[0].get<double>(), bb[1].get<double>(), bb[2].get<double>(), bb[3].get<double>()});
        }
        std::vector<Info*> keep;
        for (auto& [id, info] : images) keep.push_back(&info);
        std::sort(keep.begin(), keep.end(), [](const Info* a, const Info* b) { return a->file < b->file; });
        for (Info* info : keep) {
            if (info->boxes.empty()) continue;
            Sample s;
            s.image_path = (images_dir / info->file).string();
            s.width = info->width;
            s.height = info->height;
            add_boxes(s, info->boxes, info->file, ds.warnings);
            if (!s.boxes.empty()) ds.samples.push_back(std::move(s));
        }
        return ds;
    } catch (const json::exception& e) {
        throw ParseError(ann_json.string() + ": " + e.what());
    }
}

AnnotatedDataset load_manifest(const fs::path& path) {
    json j;
    try {
        j = json::parse(read_text(path));
    } catch (const json::parse_error& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
    if (!j.is_array()) throw ParseError(path.string() + ": manifest must be a JSON array");
    AnnotatedDataset ds;
    ds.id = path.stem().string();
    const fs::path base = path.parent_path();
    try {
        for (const auto& item : j) {
            Sample s;
            fs::path image = item.at("image").get<std::string>();
            s.image_path = (image.is_absolute() ? image : base / image).string();
            s.width = item.at("width").get<int>();
            s.height = item.at("height").get<int>();
            std::vector<BBox> boxes;
            for (const auto& b : item.at("boxes")) {
                if (b.size() != 4) throw ParseError(path.string() + ": boxes must be [x, y, w, h]");
                boxes.push_back({b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()});
            }
            add_boxes(s, boxes, s.image_path, ds.warnings);
            if (!s.boxes.empty()) ds.samples.push_back(std::move(s));
        }
    } catch (const json::exception& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
    std::stable_sort(ds.samples.begin(), ds.samples.end(),
                     [](const Sample& a, const Sample& b) { return a.image_path < b.image_path; });
    return ds;
}

void save_manifest(const AnnotatedDataset& dataset, const fs::path& path) {
    json arr = json::array();
    for (const Sample& s : dataset.samples) {
        if (s.image_path.empty()) throw InvalidArgument("in-memory samples cannot be written to a manifest");
        json boxes = json::array();
        for (const BBox& b : s.boxes) boxes.push_back({b.x, b.y, b.w, b.h});
        arr.push_back({{"image", s.image_path}, {"width", s.width}, {"height", s.height}, {"boxes", boxes}});
    }
    std::ofstream out(path);
    out << arr.dump(2) << '\n';
    if (!out) throw RuntimeFailure("cannot write " + path.string());
}

AnnotatedDataset synthetic_dataset(const SyntheticSpec& spec, std::uint64_t seed) {
    if (spec.templates.empty()) throw InvalidArgument("synthetic data needs at least one template");
    const int kw = spec.templates.front().width, kh = spec.templates.front().height;
    std::set<int> channels;
    std::vector<Image> patterns;
    for (const ToyTemplate& t : spec.templates) {
        if (t.width != kw || t.height != kh) throw InvalidArgument("synthetic templates must share one size");
        if (!channels.insert(t.channel).second) throw InvalidArgument("synthetic templates must use distinct channels");
        patterns.push_back(t.pattern());
    }
    if (!(spec.contrast_lo > 0.0 && spec.contrast_lo <= spec.contrast_hi && spec.contrast_hi <= 1.0)) {
        throw InvalidArgument("synthetic contrast range must satisfy 0 < lo <= hi <= 1");
    }
    if (spec.count < 0 || spec.width < kw || spec.height < kh) {
        throw InvalidArgument("synthetic images must be at least as large as the template");
    }

    AnnotatedDataset ds;
    ds.id = "synthetic-s" + std::to_string(seed);
    ds.category = "person";
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, 1.0);
    constexpr int kGrid = 5;
    for (int i = 0; i < spec.count; ++i) {
        Image coarse(kGrid, kGrid, 3);
        for (double& v : coarse.values()) v = 0.25 + 0.5 * unit(rng);
        Image img = resize_bilinear(coarse, spec.height, spec.width);

        const int ox = static_cast<int>(unit(rng) * (spec.width - kw + 1));
        const int oy = static_cast<int>(unit(rng) * (spec.height - kh + 1));
        const double contrast = spec.contrast_lo + (spec.contrast_hi - spec.contrast_lo) * unit(rng);
        const double flat = 0.3 + 0.4 * unit(rng);
        for (int y = 0; y < kh; ++y) {
            for (int x = 0; x < kw; ++x) {
                for (int c = 0; c < 3; ++c) img.at(oy + y, ox + x, c) = flat;
                for (std::size_t t = 0; t < patterns.size(); ++t) {
                    img.at(oy + y, ox + x, spec.templates[t].channel) = 0.5 + contrast * (patterns[t].at(y, x) - 0.5);
                }
            }
        }
        for (double& v : img.values()) v = std::clamp(v + spec.noise_sigma * noise(rng), 0.0, 1.0);

        Sample s;
        s.width = spec.width;
        s.height = spec.height;
        s.boxes.push_back({static_cast<double>(ox), static_cast<double>(oy), static_cast<double>(kw), static_cast<double>(kh)});
        s.pixels = std::make_shared<const Image>(std::move(img));
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

namespace {

ToyTemplate template_from_json(const json& t) {
    if (t.is_string()) return builtin_template(t.get<std::string>());
    ToyTemplate out;
    if (t.contains("color")) out = builtin_template(t.at("color").get<std::string>());
    out.width = t.value("width", out.width);
    out.height = t.value("height", out.height);
    out.channel = t.value("channel", out.channel);
    out.block = t.value("block", out.block);
    out.pattern_seed = t.value("pattern_seed", out.pattern_seed);
    return out;
}

SyntheticSpec synthetic_spec_from_json(const json& j, std::uint64_t& seed) {
    SyntheticSpec spec;
    spec.count = j.value("count", spec.count);
    spec.width = j.value("width", spec.width);
    spec.height = j.value("height", spec.height);
    spec.noise_sigma = j.value("noise_sigma", spec.noise_sigma);
    spec.contrast_lo = j.value("contrast_lo", spec.contrast_lo);
    spec.contrast_hi = j.value("contrast_hi", spec.contrast_hi);
    seed = j.value("seed", std::uint64_t{0});
    if (j.contains("templates")) {
        spec.templates.clear();
        for (const auto& t : j.at("templates")) spec.templates.push_back(template_from_json(t));
    }
    return spec;
}

}  // namespace

SyntheticSpec synthetic_spec_from_file(const fs::path& path, std::uint64_t& seed) {
    try {
        const json j = json::parse(read_text(path));
        return synthetic_spec_from_json(j, seed);
    } catch (const json::exception& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

AnnotatedDataset load_dataset(const fs::path& path, const std::string& split, const fs::path& images_dir,
                              const std::string& category) {
    if (fs::is_directory(path)) {
        if (split != "train" && split != "test") throw InvalidArgument("INRIA split must be 'train' or 'test'");
        return load_inria(path, split == "train" ? InriaSplit::Train : InriaSplit::Test);
    }
    if (!fs::exists(path)) throw NotFound("dataset not found: " + path.string());
    json j;
    try {
        j = json::parse(read_text(path));
    } catch (const json::parse_error& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
    if (j.is_array()) return load_manifest(path);
    if (j.is_object() && j.value("kind", std::string{}) == "synthetic") {
        std::uint64_t seed = 0;
        try {
            SyntheticSpec spec = synthetic_spec_from_json(j, seed);
            AnnotatedDataset ds = synthetic_dataset(spec, seed);
            ds.id = path.stem().string();
            return ds;
        } catch (const json::exception& e) {
            throw ParseError(path.string() + ": " + e.what());
        }
    }
    if (j.is_object() && j.contains("annotations") && j.contains("images")) {
        return load_coco_subset(path, images_dir.empty() ? path.parent_path() : images_dir, category);
    }
    throw ParseError(path.string() + ": not a synthetic spec, COCO file or manifest");
}

}  // namespace patchbench
