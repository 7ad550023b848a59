#include "diffgen/evalkit.hpp"

#include <cstdio>
#include <fstream>

namespace diffgen {

ConfusionMatrix confusion_matrix(const std::vector<int>& y_true, const std::vector<int>& y_pred, int num_classes) {
    if (y_true.size() != y_pred.size()) throw std::invalid_argument("confusion_matrix: length mismatch");
    if (num_classes < 1) throw std::invalid_argument("confusion_matrix: need at least one class");
    ConfusionMatrix cm;
    cm.num_classes = num_classes;
    cm.counts.assign(static_cast<std::size_t>(num_classes) * num_classes, 0);
    for (std::size_t i = 0; i < y_true.size(); ++i) {
        const int t = y_true[i], p = y_pred[i];
        if (t < 0 || t >= num_classes || p < 0 || p >= num_classes)
            throw std::out_of_range("confusion_matrix: label out of range at index " + std::to_string(i));
        cm.counts[static_cast<std::size_t>(t) * num_classes + p]++;
    }
    return cm;
}

MetricsReport metrics(const ConfusionMatrix& cm) {
    const int C = cm.num_classes;
    if (C < 1 || cm.total() == 0) throw std::invalid_argument("metrics: empty confusion matrix");
    MetricsReport r;
    std::int64_t diag = 0;
    for (int c = 0; c < C; ++c) diag += cm.at(c, c);
    r.accuracy = static_cast<double>(diag) / static_cast<double>(cm.total());
    for (int c = 0; c < C; ++c) {
        const std::int64_t tp = cm.at(c, c);
        std::int64_t fp = 0, fn = 0;
        for (int o = 0; o < C; ++o) {
            if (o == c) continue;
            fp += cm.at(o, c);
            fn += cm.at(c, o);
        }
        double prec = 0, rec = 0, f1 = 0;
        if (tp + fp > 0)
            prec = static_cast<double>(tp) / static_cast<double>(tp + fp);
        else
            r.zero_division_flag = true;
        if (tp + fn > 0)
            rec = static_cast<double>(tp) / static_cast<double>(tp + fn);
        else
            r.zero_division_flag = true;
        if (prec + rec > 0)
            f1 = 2.0 * prec * rec / (prec + rec);
        else
            r.zero_division_flag = true;
        r.precision.push_back(prec);
        r.recall.push_back(rec);
        r.f1.push_back(f1);
    }
    for (int c = 0; c < C; ++c) {
        r.macro_precision += r.precision[static_cast<std::size_t>(c)];
        r.macro_recall += r.recall[static_cast<std::size_t>(c)];
        r.macro_f1 += r.f1[static_cast<std::size_t>(c)];
    }
    r.macro_precision /= C;
    r.macro_recall /= C;
    r.macro_f1 /= C;
    return r;
}

HoldoutResult evaluate_holdout(const ClassifierModel& model, const LabeledDataset& holdout,
                               const PreprocessSpec& spec) {
    if (holdout.items.empty()) throw std::invalid_argument("evaluate_holdout: empty holdout set");
    auto xs = load_preprocessed(holdout, spec);
    auto ys = labels_of(holdout);
    Tensor probs = predict_items(model, xs);
    const int C = model.config.num_classes;
    std::vector<int> preds(ys.size());
    double loss_sum = 0;
    for (std::size_t i = 0; i < ys.size(); ++i) {
        const float* row = probs.data() + i * static_cast<std::size_t>(C);
        int best = 0;
        for (int c = 1; c < C; ++c)
            if (row[c] > row[best]) best = c;
        preds[i] = best;
        const double p = std::max(static_cast<double>(row[ys[i]]), 1e-12);
        loss_sum += -std::log(p);
    }
    HoldoutResult res;
    res.cm = confusion_matrix(ys, preds, C);
    res.report = metrics(res.cm);
    res.mean_loss = loss_sum / static_cast<double>(ys.size());
    res.accuracy = res.report.accuracy;
    return res;
}

std::string format_report_row(const ReportRow& row) {
    char buf[512];
    std::snprintf(buf, sizeof(buf), "%s,%s,%.4f,%.4f,%.4f,%.2f,%.2f,%.2f,%.2f,%.2f,%.2f", row.model_name.c_str(),
                  row.dataset_name.c_str(), row.train_loss, row.val_loss, row.test_loss, row.train_acc * 100.0,
                  row.val_acc * 100.0, row.test_acc * 100.0, row.precision, row.recall, row.f1);
    return std::string(buf);
}

void emit_report(const std::vector<ReportRow>& rows, const std::filesystem::path& path) {
    if (rows.empty()) throw std::invalid_argument("emit_report: no rows");
    std::ofstream f(path);
    if (!f) throw std::runtime_error("emit_report: cannot write " + path.string());
    f << "# accuracies in percent; precision/recall/f1 are macro-averaged fractions\n";
    f << "model,dataset,train_loss,val_loss,test_loss,train_acc,val_acc,test_acc,precision,recall,f1\n";
    for (const auto& row : rows) f << format_report_row(row) << "\n";
}

void write_per_class_metrics(const ConfusionMatrix& cm, const MetricsReport& report,
                             const std::vector<std::string>& class_names, const std::filesystem::path& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f << "accuracy = " << report.accuracy << "\n";
    f << "zero_division = " << (report.zero_division_flag ? "true" : "false") << "\n";
    for (int c = 0; c < cm.num_classes; ++c) {
        f << "class " << class_names[static_cast<std::size_t>(c)] << ": precision=" << report.precision[static_cast<std::size_t>(c)]
          << " recall=" << report.recall[static_cast<std::size_t>(c)] << " f1=" << report.f1[static_cast<std::size_t>(c)] << "\n";
    }
    f << "confusion_rows_true_cols_pred =\n";
    for (int t = 0; t < cm.num_classes; ++t) {
        for (int p = 0; p < cm.num_classes; ++p) f << (p ? " " : "") << cm.at(t, p);
        f << "\n";
    }
}

}  // namespace diffgen
