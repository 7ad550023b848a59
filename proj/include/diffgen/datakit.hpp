#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "diffgen/image.hpp"
#include "diffgen/rng.hpp"
#include "diffgen/tensor.hpp"

namespace diffgen {

struct DatasetItem {
    std::string relative_path;  // under the dataset root
    int label = 0;
    std::string provenance = "real";  // real | synthetic
};

struct LabeledDataset {
    std::filesystem::path root;
    std::vector<std::string> classes;
    std::vector<DatasetItem> items;
    std::string split = "none";  // dm_train | holdout_test | none

    int num_classes() const { return static_cast<int>(classes.size()); }
    std::filesystem::path item_path(const DatasetItem& it) const { return root / it.relative_path; }
    std::vector<int> class_counts() const;
};

/// Enumerate a class-foldered image tree. Classes come from the sorted
/// subdirectory names; items are ordered lexicographically by path. A file
/// that is not a PNG/JPEG fails the load, naming the file; an empty class
/// folder only warns.
LabeledDataset load_dataset(const std::filesystem::path& root, const std::string& provenance = "real");

/// Per class c: round(fraction * n_c) items (half away from zero, minimum 1)
/// drawn uniformly without replacement; remainder forms the holdout.
std::pair<LabeledDataset, LabeledDataset> stratified_sample(const LabeledDataset& ds, double fraction,
                                                            std::uint64_t seed);

struct PreprocessSpec {
    enum class Mode { diffusion, classifier };
    Mode mode = Mode::diffusion;
    int target_size = 64;
    int channels = 1;
    std::vector<float> mean, stdev;  // per channel, classifier mode only

    void validate() const;
};

/// Resize (bilinear), channel-adjust and normalize one image.
/// diffusion mode maps to [-1,1]; classifier mode standardizes with the
/// spec's per-channel moments.
Tensor preprocess(const ImageU8& img, const PreprocessSpec& spec);
Tensor preprocess_file(const std::filesystem::path& path, const PreprocessSpec& spec);

/// All items of a dataset, preprocessed, in item order.
std::vector<Tensor> load_preprocessed(const LabeledDataset& ds, const PreprocessSpec& spec);
std::vector<int> labels_of(const LabeledDataset& ds);

/// Classifier-mode spec with per-channel mean/std measured over the given
/// training images after resize, so the normalized population has
/// mean 0 / std 1.
PreprocessSpec make_classifier_spec(int target_size, int channels, const LabeledDataset& train_split);

/// Sliding-window patch count: ((I_w-P_w)/S + 1) * ((I_h-P_h)/S + 1).
/// The spans must divide evenly by the stride.
int patch_count(int image_w, int image_h, int patch_w, int patch_h, int stride);

/// Stratified k-fold partition; pair i holds (train, validation) with fold i
/// as validation. Folds are disjoint, exhaustive, and within one item per
/// class of each other.
std::vector<std::pair<LabeledDataset, LabeledDataset>> kfold_split(const LabeledDataset& ds, int k, std::uint64_t seed);

/// Procedural grayscale corpus of distinguishable shape classes
/// (disk / square / cross) with jittered position, size, intensity and pixel
/// noise. Deterministic bytes under a fixed seed.
LabeledDataset make_toy_corpus(const std::vector<std::string>& classes, int n_per_class, int size, std::uint64_t seed,
                               const std::filesystem::path& out_dir);

/// CSV manifest (relative_path,class_label,provenance,split) covering both
/// halves of a split.
void write_split_manifest(const std::filesystem::path& file, const LabeledDataset& sampled,
                          const LabeledDataset& holdout);
std::pair<LabeledDataset, LabeledDataset> read_split_manifest(const std::filesystem::path& file,
                                                              const std::filesystem::path& root);

}  // namespace diffgen
