#pragma once

#include <functional>
#include <string>
#include <vector>

#include "diffgen/datakit.hpp"
#include "diffgen/denoiser.hpp"
#include "diffgen/optim.hpp"

namespace diffgen {

/// Desk-scale convolutional families standing in for the standard
/// full-size architectures: plain stacked convs (VGG/AlexNet style),
/// residual (ResNet), densely concatenated (DenseNet), depthwise-separable
/// (MobileNet), and parallel-branch (GoogleNet/Inception).
enum class ClassifierFamily { plain_conv, residual, dense, separable, inception };

ClassifierFamily classifier_family_from_string(const std::string& name);
std::string to_string(ClassifierFamily family);
std::vector<ClassifierFamily> all_classifier_families();

struct ClassifierConfig {
    ClassifierFamily family = ClassifierFamily::residual;
    int depth_preset = 0;  // 0 = small, 1 = wider/deeper
    int input_size = 32;
    int in_channels = 1;
    int num_classes = 2;

    float lr = 2e-3f;
    int batch_size = 32;
    float weight_decay = 1e-4f;
    int max_epochs = 50;
    int patience = 5;

    void validate() const {
        if (num_classes < 2) throw std::invalid_argument("classifier: num_classes must be >= 2");
        if (max_epochs < 1 || max_epochs > 50)
            throw std::invalid_argument("classifier: max_epochs must be in 1..50 (protocol cap)");
        if (patience < 1) throw std::invalid_argument("classifier: patience must be >= 1");
        if (input_size < 8 || (in_channels != 1 && in_channels != 3) || batch_size < 1 || depth_preset < 0 ||
            depth_preset > 1)
            throw std::invalid_argument("classifier: invalid geometry");
        if (!(lr >= 0.0f) || !(weight_decay >= 0.0f)) throw std::invalid_argument("classifier: invalid optimizer settings");
    }
};

struct ClassifierModel {
    ClassifierConfig config;
    ParamStoreT<float> params;
    std::function<VarT<float>(const VarT<float>&)> forward;  // logits (B, num_classes)

    void set_training(bool on) { params.set_requires_grad(on); }
};

ClassifierModel build_classifier(const ClassifierConfig& cfg, Rng& rng);

/// Stop after the validation loss has failed to improve on `patience`
/// consecutive epochs and one further epoch confirms it.
class EarlyStopper {
public:
    explicit EarlyStopper(int patience) : patience_(patience) {
        if (patience < 1) throw std::invalid_argument("patience must be >= 1");
    }

    /// Record one epoch's validation loss; returns true when training should stop.
    bool record(double val_loss) {
        ++epoch_;
        if (val_loss < best_loss_) {
            best_loss_ = val_loss;
            best_epoch_ = epoch_;
            bad_streak_ = 0;
        } else {
            ++bad_streak_;
        }
        stopped_ = bad_streak_ > patience_;
        return stopped_;
    }

    int best_epoch() const { return best_epoch_; }  // 1-indexed
    bool stopped() const { return stopped_; }

private:
    int patience_;
    int epoch_ = 0;
    int best_epoch_ = 0;
    int bad_streak_ = 0;
    bool stopped_ = false;
    double best_loss_ = std::numeric_limits<double>::infinity();
};

struct TrainRun {
    std::vector<float> train_loss, train_acc, val_loss, val_acc;  // one entry per epoch run
    int best_epoch = 0;  // 1-indexed
    bool early_stopped = false;

    float best_val_loss() const { return val_loss.at(static_cast<std::size_t>(best_epoch - 1)); }
    float best_val_acc() const { return val_acc.at(static_cast<std::size_t>(best_epoch - 1)); }
    float best_train_loss() const { return train_loss.at(static_cast<std::size_t>(best_epoch - 1)); }
    float best_train_acc() const { return train_acc.at(static_cast<std::size_t>(best_epoch - 1)); }
};

/// Minibatch AdamW on cross-entropy with epoch-end validation and early
/// stopping; the model is left holding the best-validation-loss parameters.
TrainRun train_classifier(ClassifierModel& model, const std::vector<Tensor>& train_x, const std::vector<int>& train_y,
                          const std::vector<Tensor>& val_x, const std::vector<int>& val_y, const ClassifierConfig& cfg,
                          std::uint64_t seed);

struct FoldResult {
    TrainRun run;
    PreprocessSpec spec;
    ClassifierModel model;
};

struct CrossValResult {
    std::vector<FoldResult> folds;
    double mean_val_loss = 0, std_val_loss = 0;
    double mean_val_acc = 0, std_val_acc = 0;

    /// Lowest best-validation-loss fold (ties -> lowest index).
    int best_fold() const;
};

/// Independent training per stratified fold from a fresh per-fold
/// initialization; normalization moments are measured on each fold's own
/// training split.
CrossValResult cross_validate(const LabeledDataset& ds, int k, const ClassifierConfig& cfg, std::uint64_t seed);

/// Softmax class probabilities for a preprocessed batch (B,C,H,W).
Tensor predict(const ClassifierModel& model, const Tensor& images);

/// Probabilities over a list of (C,H,W) tensors, batched internally.
Tensor predict_items(const ClassifierModel& model, const std::vector<Tensor>& images, int batch = 64);

}  // namespace diffgen
