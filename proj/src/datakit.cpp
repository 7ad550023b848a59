#include "diffgen/datakit.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <set>

namespace diffgen {

namespace {

bool looks_like_image(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    unsigned char sig[8] = {0};
    f.read(reinterpret_cast<char*>(sig), 8);
    if (f.gcount() >= 8 && sig[0] == 0x89 && sig[1] == 'P' && sig[2] == 'N' && sig[3] == 'G') return true;
    if (f.gcount() >= 2 && sig[0] == 0xFF && sig[1] == 0xD8) return true;
    return false;
}

}  // namespace

std::vector<int> LabeledDataset::class_counts() const {
    std::vector<int> counts(classes.size(), 0);
    for (const auto& it : items) counts[static_cast<std::size_t>(it.label)]++;
    return counts;
}

LabeledDataset load_dataset(const std::filesystem::path& root, const std::string& provenance) {
    if (!std::filesystem::is_directory(root)) throw std::runtime_error("load_dataset: not a directory: " + root.string());
    LabeledDataset ds;
    ds.root = root;
    std::vector<std::string> class_dirs;
    for (const auto& entry : std::filesystem::directory_iterator(root))
        if (entry.is_directory()) class_dirs.push_back(entry.path().filename().string());
    std::sort(class_dirs.begin(), class_dirs.end());
    if (class_dirs.empty()) throw std::runtime_error("load_dataset: no class folders under " + root.string());
    ds.classes = class_dirs;
    for (std::size_t c = 0; c < class_dirs.size(); ++c) {
        std::vector<std::string> files;
        for (const auto& entry : std::filesystem::directory_iterator(root / class_dirs[c])) {
            if (!entry.is_regular_file()) continue;
            if (!looks_like_image(entry.path()))
                throw std::runtime_error("load_dataset: undecodable file: " + entry.path().string());
            files.push_back(entry.path().filename().string());
        }
        std::sort(files.begin(), files.end());
        if (files.empty()) std::cerr << "warning: empty class folder " << (root / class_dirs[c]).string() << "\n";
        for (const auto& f : files)
            ds.items.push_back({class_dirs[c] + "/" + f, static_cast<int>(c), provenance});
    }
    return ds;
}

std::pair<LabeledDataset, LabeledDataset> stratified_sample(const LabeledDataset& ds, double fraction,
                                                            std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0)) throw std::invalid_argument("stratified_sample: fraction must be in (0,1)");
    const auto counts = ds.class_counts();
    for (std::size_t c = 0; c < counts.size(); ++c)
        if (counts[c] == 0)
            throw std::runtime_error("stratified_sample: class '" + ds.classes[c] + "' has no items");

    LabeledDataset sampled, holdout;
    sampled.root = holdout.root = ds.root;
    sampled.classes = holdout.classes = ds.classes;
    sampled.split = "dm_train";
    holdout.split = "holdout_test";

    Rng rng(seed);
    for (std::size_t c = 0; c < ds.classes.size(); ++c) {
        std::vector<std::size_t> indices;
        for (std::size_t i = 0; i < ds.items.size(); ++i)
            if (ds.items[i].label == static_cast<int>(c)) indices.push_back(i);
        Rng class_rng = rng.split(static_cast<std::uint64_t>(c));
        class_rng.shuffle(indices.begin(), indices.end());
        const long take = std::max(1L, std::lround(fraction * static_cast<double>(indices.size())));
        std::vector<std::size_t> take_idx(indices.begin(), indices.begin() + take);
        std::vector<std::size_t> rest_idx(indices.begin() + take, indices.end());
        std::sort(take_idx.begin(), take_idx.end());
        std::sort(rest_idx.begin(), rest_idx.end());
        for (auto i : take_idx) sampled.items.push_back(ds.items[i]);
        for (auto i : rest_idx) holdout.items.push_back(ds.items[i]);
    }
    return {sampled, holdout};
}

void PreprocessSpec::validate() const {
    if (target_size <= 0) throw std::invalid_argument("preprocess: target size must be positive");
    if (channels != 1 && channels != 3) throw std::invalid_argument("preprocess: channels must be 1 or 3");
    if (mode == Mode::classifier) {
        if (mean.size() != static_cast<std::size_t>(channels) || stdev.size() != static_cast<std::size_t>(channels))
            throw std::invalid_argument("preprocess: classifier mode requires per-channel mean/std");
        for (float s : stdev)
            if (!(s > 0.0f) || !std::isfinite(s)) throw std::invalid_argument("preprocess: std must be finite and > 0");
        for (float mu : mean)
            if (!std::isfinite(mu)) throw std::invalid_argument("preprocess: mean must be finite");
    }
}

Tensor preprocess(const ImageU8& img, const PreprocessSpec& spec) {
    spec.validate();
    ImageU8 adjusted = to_channels(img, spec.channels);
    adjusted = resize_bilinear(adjusted, spec.target_size, spec.target_size);
    Tensor t = image_to_tensor(adjusted);  // [0,1]
    const std::size_t hw = static_cast<std::size_t>(spec.target_size) * spec.target_size;
    if (spec.mode == PreprocessSpec::Mode::diffusion) {
        for (std::size_t i = 0; i < t.numel(); ++i) t[i] = t[i] * 2.0f - 1.0f;
    } else {
        for (int c = 0; c < spec.channels; ++c) {
            const float mu = spec.mean[static_cast<std::size_t>(c)];
            const float sd = spec.stdev[static_cast<std::size_t>(c)];
            float* p = t.data() + static_cast<std::size_t>(c) * hw;
            for (std::size_t i = 0; i < hw; ++i) p[i] = (p[i] - mu) / sd;
        }
    }
    return t;
}

Tensor preprocess_file(const std::filesystem::path& path, const PreprocessSpec& spec) {
    return preprocess(load_image(path), spec);
}

std::vector<Tensor> load_preprocessed(const LabeledDataset& ds, const PreprocessSpec& spec) {
    std::vector<Tensor> out;
    out.reserve(ds.items.size());
    for (const auto& it : ds.items) out.push_back(preprocess_file(ds.item_path(it), spec));
    return out;
}

std::vector<int> labels_of(const LabeledDataset& ds) {
    std::vector<int> out;
    out.reserve(ds.items.size());
    for (const auto& it : ds.items) out.push_back(it.label);
    return out;
}

PreprocessSpec make_classifier_spec(int target_size, int channels, const LabeledDataset& train_split) {
    if (train_split.items.empty()) throw std::invalid_argument("make_classifier_spec: empty training split");
    PreprocessSpec unit;
    unit.mode = PreprocessSpec::Mode::diffusion;  // reuse resize/channel path, undo the affine below
    unit.target_size = target_size;
    unit.channels = channels;
    std::vector<double> sum(static_cast<std::size_t>(channels), 0.0), sumsq(static_cast<std::size_t>(channels), 0.0);
    std::size_t count = 0;
    const std::size_t hw = static_cast<std::size_t>(target_size) * target_size;
    for (const auto& it : train_split.items) {
        Tensor t = preprocess_file(train_split.item_path(it), unit);
        for (int c = 0; c < channels; ++c) {
            const float* p = t.data() + static_cast<std::size_t>(c) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
                const double v = (p[i] + 1.0) * 0.5;  // back to [0,1]
                sum[static_cast<std::size_t>(c)] += v;
                sumsq[static_cast<std::size_t>(c)] += v * v;
            }
        }
        count += hw;
    }
    PreprocessSpec spec;
    spec.mode = PreprocessSpec::Mode::classifier;
    spec.target_size = target_size;
    spec.channels = channels;
    for (int c = 0; c < channels; ++c) {
        const double mu = sum[static_cast<std::size_t>(c)] / static_cast<double>(count);
        const double var = sumsq[static_cast<std::size_t>(c)] / static_cast<double>(count) - mu * mu;
        spec.mean.push_back(static_cast<float>(mu));
        spec.stdev.push_back(static_cast<float>(std::sqrt(std::max(var, 1e-12))));
    }
    return spec;
}

int patch_count(int image_w, int image_h, int patch_w, int patch_h, int stride) {
    if (stride < 1) throw std::invalid_argument("patch_count: stride must be >= 1");
    if (patch_w > image_w || patch_h > image_h) throw std::invalid_argument("patch_count: patch larger than image");
    if ((image_w - patch_w) % stride != 0 || (image_h - patch_h) % stride != 0)
        throw std::invalid_argument("patch_count: span not divisible by stride");
    return ((image_w - patch_w) / stride + 1) * ((image_h - patch_h) / stride + 1);
}

std::vector<std::pair<LabeledDataset, LabeledDataset>> kfold_split(const LabeledDataset& ds, int k,
                                                                   std::uint64_t seed) {
    if (k < 2) throw std::invalid_argument("kfold_split: k must be >= 2");
    const auto counts = ds.class_counts();
    for (std::size_t c = 0; c < counts.size(); ++c)
        if (counts[c] < k)
            throw std::invalid_argument("kfold_split: class '" + ds.classes[c] + "' has fewer than k items");

    // fold id per item: round-robin over the shuffled order, per class
    std::vector<int> fold_of(ds.items.size(), 0);
    Rng rng(seed);
    for (std::size_t c = 0; c < ds.classes.size(); ++c) {
        std::vector<std::size_t> indices;
        for (std::size_t i = 0; i < ds.items.size(); ++i)
            if (ds.items[i].label == static_cast<int>(c)) indices.push_back(i);
        Rng class_rng = rng.split(static_cast<std::uint64_t>(c));
        class_rng.shuffle(indices.begin(), indices.end());
        for (std::size_t j = 0; j < indices.size(); ++j) fold_of[indices[j]] = static_cast<int>(j % static_cast<std::size_t>(k));
    }

    std::vector<std::pair<LabeledDataset, LabeledDataset>> folds;
    for (int f = 0; f < k; ++f) {
        LabeledDataset train, val;
        train.root = val.root = ds.root;
        train.classes = val.classes = ds.classes;
        for (std::size_t i = 0; i < ds.items.size(); ++i)
            (fold_of[i] == f ? val : train).items.push_back(ds.items[i]);
        folds.emplace_back(std::move(train), std::move(val));
    }
    return folds;
}

namespace {

void render_toy_shape(ImageU8& img, const std::string& cls, Rng& rng) {
    const int size = img.width;
    const double u1 = rng.uniform(), u2 = rng.uniform(), u3 = rng.uniform(), u4 = rng.uniform();
    const double cx = size / 2.0 + (u1 - 0.5) * size / 4.0;
    const double cy = size / 2.0 + (u2 - 0.5) * size / 4.0;
    const double fg = 165.0 + u3 * 70.0;
    const double bg = 25.0;
    auto put = [&](int y, int x, double v) {
        img.pixels[static_cast<std::size_t>(y) * size + x] =
            static_cast<std::uint8_t>(std::lround(std::min(255.0, std::max(0.0, v))));
    };
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            double v = bg;
            if (cls == "disk") {
                const double r = size * (0.20 + 0.08 * u4);
                const double dx = x - cx, dy = y - cy;
                if (dx * dx + dy * dy <= r * r) v = fg;
            } else if (cls == "square") {
                const double half = size * (0.17 + 0.08 * u4);
                if (std::abs(x - cx) <= half && std::abs(y - cy) <= half) v = fg;
            } else if (cls == "cross") {
                const double bar = size * (0.055 + 0.03 * u4);
                const double arm = size * (0.26 + 0.08 * u4);
                const bool horiz = std::abs(y - cy) <= bar && std::abs(x - cx) <= arm;
                const bool vert = std::abs(x - cx) <= bar && std::abs(y - cy) <= arm;
                if (horiz || vert) v = fg;
            } else {
                throw std::invalid_argument("make_toy_corpus: unknown class name '" + cls + "'");
            }
            v += rng.normal() * 6.0;
            put(y, x, v);
        }
}

}  // namespace

LabeledDataset make_toy_corpus(const std::vector<std::string>& classes, int n_per_class, int size, std::uint64_t seed,
                               const std::filesystem::path& out_dir) {
    if (size < 16) throw std::invalid_argument("make_toy_corpus: size must be >= 16");
    if (n_per_class < 1) throw std::invalid_argument("make_toy_corpus: n_per_class must be >= 1");
    for (const auto& cls : classes)
        if (cls != "disk" && cls != "square" && cls != "cross")
            throw std::invalid_argument("make_toy_corpus: unknown class name '" + cls + "'");
    std::filesystem::create_directories(out_dir);
    Rng rng(seed);
    for (std::size_t c = 0; c < classes.size(); ++c) {
        std::filesystem::create_directories(out_dir / classes[c]);
        Rng class_rng = rng.split(static_cast<std::uint64_t>(c));
        for (int i = 0; i < n_per_class; ++i) {
            Rng img_rng = class_rng.split(static_cast<std::uint64_t>(i));
            ImageU8 img;
            img.width = img.height = size;
            img.channels = 1;
            img.pixels.assign(static_cast<std::size_t>(size) * size, 0);
            render_toy_shape(img, classes[c], img_rng);
            char buf[32];
            std::snprintf(buf, sizeof(buf), "_%05d.png", i);
            save_png(out_dir / classes[c] / (classes[c] + buf), img);
        }
    }
    return load_dataset(out_dir);
}

void write_split_manifest(const std::filesystem::path& file, const LabeledDataset& sampled,
                          const LabeledDataset& holdout) {
    std::ofstream f(file);
    if (!f) throw std::runtime_error("cannot write manifest: " + file.string());
    f << "relative_path,class_label,provenance,split\n";
    for (const auto& it : sampled.items)
        f << it.relative_path << "," << sampled.classes[static_cast<std::size_t>(it.label)] << "," << it.provenance
          << "," << sampled.split << "\n";
    for (const auto& it : holdout.items)
        f << it.relative_path << "," << holdout.classes[static_cast<std::size_t>(it.label)] << "," << it.provenance
          << "," << holdout.split << "\n";
}

std::pair<LabeledDataset, LabeledDataset> read_split_manifest(const std::filesystem::path& file,
                                                              const std::filesystem::path& root) {
    std::ifstream f(file);
    if (!f) throw std::runtime_error("cannot read manifest: " + file.string());
    std::string line;
    std::getline(f, line);  // header
    std::set<std::string> class_set;
    struct Row {
        std::string rel, cls, prov, split;
    };
    std::vector<Row> rows;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        Row r;
        std::stringstream ss(line);
        std::getline(ss, r.rel, ',');
        std::getline(ss, r.cls, ',');
        std::getline(ss, r.prov, ',');
        std::getline(ss, r.split, ',');
        class_set.insert(r.cls);
        rows.push_back(std::move(r));
    }
    LabeledDataset sampled, holdout;
    sampled.root = holdout.root = root;
    sampled.classes.assign(class_set.begin(), class_set.end());
    holdout.classes = sampled.classes;
    sampled.split = "dm_train";
    holdout.split = "holdout_test";
    auto label_of = [&](const std::string& cls) {
        const auto it = std::find(sampled.classes.begin(), sampled.classes.end(), cls);
        return static_cast<int>(it - sampled.classes.begin());
    };
    for (const auto& r : rows) {
        DatasetItem item{r.rel, label_of(r.cls), r.prov};
        if (r.split == "dm_train")
            sampled.items.push_back(std::move(item));
        else if (r.split == "holdout_test")
            holdout.items.push_back(std::move(item));
        else
            throw std::runtime_error("split manifest: unknown split tag '" + r.split + "'");
    }
    return {sampled, holdout};
}

}  // namespace diffgen
