#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "diffgen/classifier.hpp"
#include "diffgen/datakit.hpp"

namespace diffgen {

struct ConfusionMatrix {
    int num_classes = 0;
    std::vector<std::int64_t> counts;  // row = true class, column = predicted

    std::int64_t at(int true_cls, int pred_cls) const {
        return counts[static_cast<std::size_t>(true_cls) * num_classes + pred_cls];
    }
    std::int64_t total() const {
        std::int64_t t = 0;
        for (auto c : counts) t += c;
        return t;
    }
};

ConfusionMatrix confusion_matrix(const std::vector<int>& y_true, const std::vector<int>& y_pred, int num_classes);

struct MetricsReport {
    double accuracy = 0;
    std::vector<double> precision, recall, f1;  // per class, one-vs-rest
    double macro_precision = 0, macro_recall = 0, macro_f1 = 0;
    bool zero_division_flag = false;  // some class had an empty denominator
};

/// Per-class one-vs-rest precision/recall/F1 with macro averages; zero
/// denominators yield 0 and set the flag.
MetricsReport metrics(const ConfusionMatrix& cm);

struct HoldoutResult {
    ConfusionMatrix cm;
    MetricsReport report;
    double mean_loss = 0;  // mean cross-entropy over the holdout
    double accuracy = 0;
};

/// Predict every holdout item with the given normalization spec and score
/// against the true labels.
HoldoutResult evaluate_holdout(const ClassifierModel& model, const LabeledDataset& holdout, const PreprocessSpec& spec);

struct ReportRow {
    std::string model_name;
    std::string dataset_name;
    double train_loss = 0, val_loss = 0, test_loss = 0;
    double train_acc = 0, val_acc = 0, test_acc = 0;  // fractions in [0,1]
    double precision = 0, recall = 0, f1 = 0;         // macro, fractions
};

/// Table-style CSV: losses to 4 decimals, accuracies as percentages to 2
/// decimals, precision/recall/F1 as fractions to 2 decimals. Byte-stable.
void emit_report(const std::vector<ReportRow>& rows, const std::filesystem::path& path);

/// Plain-text per-class metrics sidecar.
void write_per_class_metrics(const ConfusionMatrix& cm, const MetricsReport& report,
                             const std::vector<std::string>& class_names, const std::filesystem::path& path);

std::string format_report_row(const ReportRow& row);

}  // namespace diffgen
