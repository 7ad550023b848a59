#include "diffgen/pipeline.hpp"

#include <chrono>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "diffgen/classifier.hpp"
#include "diffgen/datakit.hpp"
#include "diffgen/ddpm.hpp"
#include "diffgen/evalkit.hpp"
#include "diffgen/lime.hpp"

namespace diffgen {

namespace {

std::string timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%d %H:%M:%S", std::gmtime(&t));
    return buf;
}

void log_line(const PipelineContext& ctx, const std::string& msg) {
    std::filesystem::create_directories(ctx.out);
    std::ofstream log(ctx.out / "log.txt", std::ios::app);
    log << timestamp() << " " << msg << "\n";
    std::cout << msg << "\n";
}

std::string marker_payload(const PipelineContext& ctx) {
    std::ostringstream os;
    os << "fingerprint=" << std::hex << ctx.cfg.fingerprint() << std::dec << " seed=" << ctx.seed << "\n";
    return os.str();
}

void write_marker(const PipelineContext& ctx, const std::string& stage) {
    std::filesystem::create_directories(ctx.out / "stages");
    std::ofstream f(ctx.stage_marker(stage));
    f << marker_payload(ctx);
}

/// 0 = absent, 1 = matches current config+seed, -1 = stale
int marker_state(const PipelineContext& ctx, const std::string& stage) {
    std::ifstream f(ctx.stage_marker(stage));
    if (!f) return 0;
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str() == marker_payload(ctx) ? 1 : -1;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string part;
    while (std::getline(ss, part, ',')) out.push_back(part);
    return out;
}

DenoiserConfig denoiser_config_from(const Config& cfg, int num_classes_if_conditional) {
    DenoiserConfig dc;
    dc.image_size = cfg.get_int("dm.image_size", 32);
    dc.in_channels = cfg.get_int("data.channels", 1);
    dc.base_channels = cfg.get_int("dm.base_channels", 64);
    dc.channel_multipliers = cfg.get_int_list("dm.channel_multipliers", {1, 2, 4});
    dc.blocks_per_level = cfg.get_int("dm.blocks_per_level", 2);
    dc.time_embed_dim = cfg.get_int("dm.time_embed_dim", 0);
    dc.norm_groups = cfg.get_int("dm.norm_groups", 8);
    dc.num_classes = num_classes_if_conditional;
    return dc;
}

std::map<std::string, std::string> denoiser_meta(const DenoiserConfig& dc) {
    std::map<std::string, std::string> meta;
    meta["image_size"] = std::to_string(dc.image_size);
    meta["in_channels"] = std::to_string(dc.in_channels);
    meta["base_channels"] = std::to_string(dc.base_channels);
    std::string mults;
    for (std::size_t i = 0; i < dc.channel_multipliers.size(); ++i)
        mults += (i ? "," : "") + std::to_string(dc.channel_multipliers[i]);
    meta["channel_multipliers"] = mults;
    meta["blocks_per_level"] = std::to_string(dc.blocks_per_level);
    meta["time_embed_dim"] = std::to_string(dc.time_embed_dim);
    meta["num_classes"] = std::to_string(dc.num_classes);
    meta["norm_groups"] = std::to_string(dc.norm_groups);
    return meta;
}

DenoiserConfig denoiser_config_from_meta(const std::map<std::string, std::string>& meta) {
    DenoiserConfig dc;
    dc.image_size = std::stoi(meta.at("image_size"));
    dc.in_channels = std::stoi(meta.at("in_channels"));
    dc.base_channels = std::stoi(meta.at("base_channels"));
    dc.channel_multipliers.clear();
    std::stringstream ss(meta.at("channel_multipliers"));
    std::string part;
    while (std::getline(ss, part, ',')) dc.channel_multipliers.push_back(std::stoi(part));
    dc.blocks_per_level = std::stoi(meta.at("blocks_per_level"));
    dc.time_embed_dim = std::stoi(meta.at("time_embed_dim"));
    dc.num_classes = std::stoi(meta.at("num_classes"));
    dc.norm_groups = std::stoi(meta.at("norm_groups"));
    return dc;
}

NoiseSchedule schedule_from(const Config& cfg) {
    return linear_beta_schedule(cfg.get_int("dm.timesteps", 200), cfg.get_double("dm.beta_start", 1e-4),
                                cfg.get_double("dm.beta_end", 0.02));
}

NoiseSchedule schedule_from_meta(const std::map<std::string, std::string>& meta) {
    return linear_beta_schedule(std::stoi(meta.at("schedule_T")), std::stod(meta.at("schedule_beta_start")),
                                std::stod(meta.at("schedule_beta_end")));
}

ClassifierConfig classifier_config_from(const Config& cfg, ClassifierFamily family, int num_classes) {
    ClassifierConfig cc;
    cc.family = family;
    cc.depth_preset = cfg.get_int("cnn.depth_preset", 0);
    cc.input_size = cfg.get_int("cnn.input_size", cfg.get_int("dm.image_size", 32));
    cc.in_channels = cfg.get_int("data.channels", 1);
    cc.num_classes = num_classes;
    cc.lr = static_cast<float>(cfg.get_double("cnn.lr", 2e-3));
    cc.batch_size = cfg.get_int("cnn.batch", 32);
    cc.weight_decay = static_cast<float>(cfg.get_double("cnn.weight_decay", 1e-4));
    cc.max_epochs = cfg.get_int("cnn.max_epochs", 50);
    cc.patience = cfg.get_int("cnn.patience", 5);
    return cc;
}

std::pair<LabeledDataset, LabeledDataset> load_split(const PipelineContext& ctx) {
    const auto manifest = ctx.out / "splits" / "split_manifest.csv";
    if (!std::filesystem::exists(manifest))
        throw std::runtime_error("missing split manifest " + manifest.string() + "; run the split stage first");
    return read_split_manifest(manifest, ctx.data_root());
}

struct FoldSummaryRow {
    int fold = 0;
    int best_epoch = 0;
    double train_loss = 0, train_acc = 0, val_loss = 0, val_acc = 0;
    int early_stopped = 0;
};

std::vector<FoldSummaryRow> read_cv_summary(const std::filesystem::path& file) {
    std::ifstream f(file);
    if (!f) throw std::runtime_error("missing cross-validation summary " + file.string() + "; run the train-cnn stage first");
    std::string line;
    std::getline(f, line);
    std::vector<FoldSummaryRow> rows;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        auto parts = split_csv_line(line);
        FoldSummaryRow r;
        r.fold = std::stoi(parts.at(0));
        r.best_epoch = std::stoi(parts.at(1));
        r.train_loss = std::stod(parts.at(2));
        r.train_acc = std::stod(parts.at(3));
        r.val_loss = std::stod(parts.at(4));
        r.val_acc = std::stod(parts.at(5));
        r.early_stopped = std::stoi(parts.at(6));
        rows.push_back(r);
    }
    if (rows.empty()) throw std::runtime_error("empty cross-validation summary " + file.string());
    return rows;
}

int best_fold_of(const std::vector<FoldSummaryRow>& rows) {
    int best = 0;
    for (std::size_t i = 1; i < rows.size(); ++i)
        if (rows[i].val_loss < rows[static_cast<std::size_t>(best)].val_loss) best = static_cast<int>(i);
    return rows[static_cast<std::size_t>(best)].fold;
}

PreprocessSpec classifier_spec_from_meta(const std::map<std::string, std::string>& meta) {
    PreprocessSpec spec;
    spec.mode = PreprocessSpec::Mode::classifier;
    spec.target_size = std::stoi(meta.at("input_size"));
    spec.channels = std::stoi(meta.at("channels"));
    std::stringstream ms(meta.at("norm_mean")), ss(meta.at("norm_std"));
    std::string part;
    while (std::getline(ms, part, ',')) spec.mean.push_back(std::stof(part));
    while (std::getline(ss, part, ',')) spec.stdev.push_back(std::stof(part));
    return spec;
}

ClassifierModel load_classifier(const PipelineContext& ctx, const std::string& family_name, int fold,
                                PreprocessSpec& spec_out, int& num_classes_out) {
    const auto ckpt_dir = ctx.out / "cnn_runs" / family_name / ("fold" + std::to_string(fold)) / "checkpoint";
    Checkpoint ckpt = load_checkpoint(ckpt_dir);
    num_classes_out = std::stoi(ckpt.metadata.at("num_classes"));
    ClassifierConfig cc = classifier_config_from(ctx.cfg, classifier_family_from_string(family_name), num_classes_out);
    Rng rng(0);  // layout only; values come from the checkpoint
    ClassifierModel model = build_classifier(cc, rng);
    restore_params(model.params, ckpt);
    spec_out = classifier_spec_from_meta(ckpt.metadata);
    return model;
}

}  // namespace

std::filesystem::path PipelineContext::data_root() const {
    std::filesystem::path p = cfg.require_str("data.root");
    return p.is_absolute() ? p : out / p;
}

std::string PipelineContext::dataset_name() const { return cfg.get_str("data.name", "dataset"); }

std::filesystem::path PipelineContext::stage_marker(const std::string& stage) const {
    return out / "stages" / (stage + ".done");
}

PipelineContext make_context(const Config& cfg, const std::filesystem::path& out_override,
                             std::optional<std::uint64_t> seed_override) {
    PipelineContext ctx;
    ctx.cfg = cfg;
    ctx.out = out_override.empty() ? std::filesystem::path(cfg.get_str("out.root", "out")) : out_override;
    ctx.seed = seed_override ? *seed_override : cfg.get_u64("seed", 0);
    return ctx;
}

void stage_toy_data(PipelineContext& ctx) {
    const auto classes = ctx.cfg.get_list("toy.classes", {});
    if (classes.empty()) throw std::runtime_error("toy-data: config has no toy.classes entry");
    const int per_class = ctx.cfg.get_int("toy.per_class", 200);
    const int size = ctx.cfg.get_int("toy.size", 32);
    auto ds = make_toy_corpus(classes, per_class, size, ctx.seed, ctx.data_root());
    log_line(ctx, "toy-data: wrote " + std::to_string(ds.items.size()) + " images to " + ctx.data_root().string());
    write_marker(ctx, "toy-data");
}

void stage_split(PipelineContext& ctx, std::optional<double> fraction_override) {
    const double fraction = fraction_override ? *fraction_override : ctx.cfg.get_double("data.sample_fraction", 0.2);
    auto ds = load_dataset(ctx.data_root());
    auto [sampled, holdout] = stratified_sample(ds, fraction, ctx.seed);
    std::filesystem::create_directories(ctx.out / "splits");
    write_split_manifest(ctx.out / "splits" / "split_manifest.csv", sampled, holdout);
    std::ofstream summary(ctx.out / "splits" / "summary.csv");
    summary << "class,total,sampled,holdout\n";
    const auto total = ds.class_counts();
    const auto ns = sampled.class_counts();
    const auto nh = holdout.class_counts();
    for (std::size_t c = 0; c < ds.classes.size(); ++c)
        summary << ds.classes[c] << "," << total[c] << "," << ns[c] << "," << nh[c] << "\n";
    log_line(ctx, "split: " + std::to_string(sampled.items.size()) + " sampled / " +
                      std::to_string(holdout.items.size()) + " holdout");
    write_marker(ctx, "split");
}

void stage_train_dm(PipelineContext& ctx) {
    auto [dm_train, holdout] = load_split(ctx);
    (void)holdout;
    const NoiseSchedule sched = schedule_from(ctx.cfg);
    const bool conditional = ctx.cfg.get_bool("dm.conditional", false);

    PreprocessSpec spec;
    spec.mode = PreprocessSpec::Mode::diffusion;
    spec.target_size = ctx.cfg.get_int("dm.image_size", 32);
    spec.channels = ctx.cfg.get_int("data.channels", 1);

    DMTrainConfig tc;
    tc.epochs = ctx.cfg.get_int("dm.epochs", 30);
    tc.batch_size = ctx.cfg.get_int("dm.batch_size", 16);
    tc.adamw.lr = static_cast<float>(ctx.cfg.get_double("dm.lr", 1e-3));
    tc.checkpoint_every = ctx.cfg.get_int("dm.checkpoint_every", 0);

    auto train_one = [&](const std::string& tag, const std::vector<Tensor>& images, const std::vector<int>* labels,
                         int num_classes, std::uint64_t seed) {
        DenoiserConfig dc = denoiser_config_from(ctx.cfg, num_classes);
        Rng init_rng(seed);
        DenoiserModel model = build_denoiser<float>(dc, init_rng);
        DMTrainConfig cfg_i = tc;
        cfg_i.seed = Rng(seed).split(1).seed();
        cfg_i.checkpoint_dir = ctx.out / "dm_checkpoints" / tag;
        cfg_i.checkpoint_meta = denoiser_meta(dc);
        cfg_i.checkpoint_meta["checkpoint_id"] = "dm_" + tag;
        auto history = train_dm(model, images, sched, cfg_i, labels);
        std::ofstream hist(ctx.out / "dm_checkpoints" / tag / "history.csv");
        hist << "epoch,mean_loss\n";
        char buf[64];
        for (std::size_t e = 0; e < history.size(); ++e) {
            std::snprintf(buf, sizeof(buf), "%zu,%.6f", e + 1, static_cast<double>(history[e]));
            hist << buf << "\n";
        }
        log_line(ctx, "train-dm[" + tag + "]: " + std::to_string(history.size()) + " epochs, first " +
                          (history.empty() ? std::string("n/a") : std::to_string(history.front())) + " final " +
                          (history.empty() ? std::string("n/a") : std::to_string(history.back())));
    };

    Rng stage_rng(ctx.seed);
    if (conditional) {
        auto images = load_preprocessed(dm_train, spec);
        auto labels = labels_of(dm_train);
        train_one("conditional", images, &labels, dm_train.num_classes(), stage_rng.split(100).seed());
    } else {
        for (std::size_t c = 0; c < dm_train.classes.size(); ++c) {
            LabeledDataset per_class;
            per_class.root = dm_train.root;
            per_class.classes = dm_train.classes;
            for (const auto& it : dm_train.items)
                if (it.label == static_cast<int>(c)) per_class.items.push_back(it);
            auto images = load_preprocessed(per_class, spec);
            train_one(dm_train.classes[c], images, nullptr, 0, stage_rng.split(100 + c).seed());
        }
    }
    write_marker(ctx, "train-dm");
}

void stage_generate(PipelineContext& ctx) {
    auto [dm_train, holdout] = load_split(ctx);
    (void)holdout;
    const bool conditional = ctx.cfg.get_bool("dm.conditional", false);
    const auto dm_dir = ctx.out / "dm_checkpoints";

    const auto check_ckpt = [&](const std::filesystem::path& dir) {
        if (!std::filesystem::exists(dir / "manifest.txt"))
            throw std::runtime_error("generate: missing diffusion checkpoint " + dir.string() +
                                     "; run the train-dm stage first");
    };

    std::vector<int> counts;
    const int per_class = ctx.cfg.get_int("gen.per_class", 300);
    counts = ctx.cfg.get_int_list("gen.counts", std::vector<int>(dm_train.classes.size(), per_class));
    if (counts.size() != dm_train.classes.size()) throw std::runtime_error("generate: gen.counts length mismatch");

    SamplerConfig sampler;
    sampler.batch = ctx.cfg.get_int("gen.batch", 64);

    std::vector<std::string> ckpt_ids;
    std::vector<DenoiserModel> models;
    models.reserve(dm_train.classes.size());
    DenoiserModel conditional_model;
    if (conditional) {
        check_ckpt(dm_dir / "conditional");
        Checkpoint ckpt = load_checkpoint(dm_dir / "conditional");
        DenoiserConfig dc = denoiser_config_from_meta(ckpt.metadata);
        Rng rng(0);
        conditional_model = build_denoiser<float>(dc, rng);
        restore_params(conditional_model.params, ckpt);
        sampler.schedule = schedule_from_meta(ckpt.metadata);
        for (std::size_t c = 0; c < dm_train.classes.size(); ++c) ckpt_ids.push_back(ckpt.metadata.at("checkpoint_id"));
    } else {
        for (const auto& cls : dm_train.classes) {
            check_ckpt(dm_dir / cls);
            Checkpoint ckpt = load_checkpoint(dm_dir / cls);
            DenoiserConfig dc = denoiser_config_from_meta(ckpt.metadata);
            Rng rng(0);
            DenoiserModel model = build_denoiser<float>(dc, rng);
            restore_params(model.params, ckpt);
            sampler.schedule = schedule_from_meta(ckpt.metadata);
            models.push_back(std::move(model));
            ckpt_ids.push_back(ckpt.metadata.at("checkpoint_id"));
        }
    }

    std::vector<DenoiserModel*> model_ptrs;
    for (auto& m : models) model_ptrs.push_back(&m);
    const auto manifest = generate_dataset(model_ptrs, conditional ? &conditional_model : nullptr, dm_train.classes,
                                           counts, ctx.out / "synthetic", Rng(ctx.seed).split(200).seed(), sampler,
                                           ckpt_ids);
    log_line(ctx, "generate: manifest at " + manifest.string());
    write_marker(ctx, "generate");
}

void stage_train_cnn(PipelineContext& ctx) {
    const auto synth_manifest = ctx.out / "synthetic" / "manifest.csv";
    if (!std::filesystem::exists(synth_manifest))
        throw std::runtime_error("train-cnn: missing synthetic dataset manifest " + synth_manifest.string() +
                                 "; run the generate stage first");
    LabeledDataset synth = load_dataset(ctx.out / "synthetic", "synthetic");
    const int k = ctx.cfg.get_int("cnn.folds", 5);
    const auto families = ctx.cfg.get_list("cnn.families", {"residual"});

    Rng stage_rng(ctx.seed);
    for (std::size_t fi = 0; fi < families.size(); ++fi) {
        const auto& family_name = families[fi];
        ClassifierConfig cc = classifier_config_from(ctx.cfg, classifier_family_from_string(family_name),
                                                     synth.num_classes());
        auto cv = cross_validate(synth, k, cc, stage_rng.split(300 + fi).seed());
        const auto fam_dir = ctx.out / "cnn_runs" / family_name;
        std::filesystem::create_directories(fam_dir);
        char buf[256];
        std::ofstream summary(fam_dir / "cv_summary.csv");
        summary << "fold,best_epoch,train_loss,train_acc,val_loss,val_acc,early_stopped\n";
        for (std::size_t f = 0; f < cv.folds.size(); ++f) {
            auto& fr = cv.folds[f];
            const auto fold_dir = fam_dir / ("fold" + std::to_string(f));
            std::filesystem::create_directories(fold_dir);
            std::ofstream hist(fold_dir / "history.csv");
            hist << "epoch,train_loss,train_acc,val_loss,val_acc\n";
            for (std::size_t e = 0; e < fr.run.train_loss.size(); ++e) {
                std::snprintf(buf, sizeof(buf), "%zu,%.6f,%.6f,%.6f,%.6f", e + 1,
                              static_cast<double>(fr.run.train_loss[e]), static_cast<double>(fr.run.train_acc[e]),
                              static_cast<double>(fr.run.val_loss[e]), static_cast<double>(fr.run.val_acc[e]));
                hist << buf << "\n";
            }
            std::map<std::string, std::string> meta;
            meta["family"] = family_name;
            meta["num_classes"] = std::to_string(cc.num_classes);
            meta["input_size"] = std::to_string(cc.input_size);
            meta["channels"] = std::to_string(cc.in_channels);
            std::string mean_s, std_s;
            for (std::size_t c = 0; c < fr.spec.mean.size(); ++c) {
                std::snprintf(buf, sizeof(buf), "%.8f", static_cast<double>(fr.spec.mean[c]));
                mean_s += (c ? "," : "") + std::string(buf);
                std::snprintf(buf, sizeof(buf), "%.8f", static_cast<double>(fr.spec.stdev[c]));
                std_s += (c ? "," : "") + std::string(buf);
            }
            meta["norm_mean"] = mean_s;
            meta["norm_std"] = std_s;
            save_checkpoint(fold_dir / "checkpoint", fr.model.params, meta);
            std::snprintf(buf, sizeof(buf), "%zu,%d,%.6f,%.6f,%.6f,%.6f,%d", f, fr.run.best_epoch,
                          static_cast<double>(fr.run.best_train_loss()), static_cast<double>(fr.run.best_train_acc()),
                          static_cast<double>(fr.run.best_val_loss()), static_cast<double>(fr.run.best_val_acc()),
                          fr.run.early_stopped ? 1 : 0);
            summary << buf << "\n";
        }
        log_line(ctx, "train-cnn[" + family_name + "]: mean val acc " + std::to_string(cv.mean_val_acc));
    }
    write_marker(ctx, "train-cnn");
}

void stage_evaluate(PipelineContext& ctx) {
    auto [dm_train, holdout] = load_split(ctx);
    if (holdout.items.empty()) throw std::runtime_error("evaluate: holdout split is empty");

    // leak check: the holdout must be disjoint from every training-side input
    std::set<std::string> train_rel;
    for (const auto& it : dm_train.items) train_rel.insert(it.relative_path);
    for (const auto& it : holdout.items)
        if (train_rel.count(it.relative_path))
            throw std::runtime_error("evaluate: holdout item also appears in the dm_train split (leak): " +
                                     it.relative_path);
    if (std::filesystem::exists(ctx.out / "synthetic" / "manifest.csv")) {
        std::error_code ec;
        const auto synth_canon = std::filesystem::weakly_canonical(ctx.out / "synthetic", ec);
        for (const auto& it : holdout.items) {
            const auto p = std::filesystem::weakly_canonical(holdout.item_path(it), ec);
            if (!ec && p.string().rfind(synth_canon.string() + "/", 0) == 0)
                throw std::runtime_error("evaluate: holdout item lives inside the synthetic set (leak): " +
                                         it.relative_path);
        }
    }

    const auto families = ctx.cfg.get_list("cnn.families", {"residual"});
    std::filesystem::create_directories(ctx.out / "reports");
    for (const auto& family_name : families) {
        const auto rows = read_cv_summary(ctx.out / "cnn_runs" / family_name / "cv_summary.csv");
        const int fold = best_fold_of(rows);
        PreprocessSpec spec;
        int num_classes = 0;
        ClassifierModel model = load_classifier(ctx, family_name, fold, spec, num_classes);
        if (num_classes != holdout.num_classes())
            throw std::runtime_error("evaluate: class count mismatch between classifier and holdout");
        HoldoutResult res = evaluate_holdout(model, holdout, spec);
        char buf[256];
        std::ofstream f(ctx.out / "reports" / ("metrics_" + family_name + ".csv"));
        f << "model,dataset,best_fold,test_loss,test_acc,precision,recall,f1\n";
        std::snprintf(buf, sizeof(buf), "%s,%s,%d,%.6f,%.6f,%.6f,%.6f,%.6f", family_name.c_str(),
                      ctx.dataset_name().c_str(), fold, res.mean_loss, res.accuracy, res.report.macro_precision,
                      res.report.macro_recall, res.report.macro_f1);
        f << buf << "\n";
        write_per_class_metrics(res.cm, res.report, holdout.classes,
                                ctx.out / "reports" / ("per_class_" + family_name + ".txt"));
        log_line(ctx, "evaluate[" + family_name + "]: test acc " + std::to_string(res.accuracy));
    }
    write_marker(ctx, "evaluate");
}

void stage_explain(PipelineContext& ctx) {
    auto [dm_train, holdout] = load_split(ctx);
    (void)dm_train;
    const auto families = ctx.cfg.get_list("cnn.families", {"residual"});
    const int per_class = ctx.cfg.get_int("lime.per_class", 1);
    const int top_k = ctx.cfg.get_int("lime.top_k", 5);

    for (const auto& family_name : families) {
        const auto rows = read_cv_summary(ctx.out / "cnn_runs" / family_name / "cv_summary.csv");
        const int fold = best_fold_of(rows);
        PreprocessSpec spec;
        int num_classes = 0;
        ClassifierModel model = load_classifier(ctx, family_name, fold, spec, num_classes);

        PredictFn fn = [&model](const Tensor& img) {
            Tensor batch({1, img.extent(0), img.extent(1), img.extent(2)});
            std::copy(img.data(), img.data() + img.numel(), batch.data());
            Tensor probs = predict(model, batch);
            return std::vector<double>(probs.data(), probs.data() + probs.numel());
        };

        Rng stage_rng(ctx.seed);
        std::vector<int> taken(static_cast<std::size_t>(holdout.num_classes()), 0);
        for (std::size_t i = 0; i < holdout.items.size(); ++i) {
            const auto& item = holdout.items[i];
            if (taken[static_cast<std::size_t>(item.label)] >= per_class) continue;
            taken[static_cast<std::size_t>(item.label)]++;

            Tensor input = preprocess_file(holdout.item_path(item), spec);
            LimeConfig lc;
            lc.cell = ctx.cfg.get_int("lime.cell", 0);
            lc.num_samples = ctx.cfg.get_int("lime.samples", 1000);
            lc.kernel_width = ctx.cfg.get_double("lime.kernel_width", 0.0);
            lc.ridge_lambda = ctx.cfg.get_double("lime.ridge", 1e-3);
            lc.seed = stage_rng.split(static_cast<std::uint64_t>(400 + i)).seed();
            Explanation ex = explain(fn, input, lc);

            // display copy: resized [0,1] pixels without normalization
            PreprocessSpec display = spec;
            display.mode = PreprocessSpec::Mode::diffusion;
            Tensor shown = preprocess_file(holdout.item_path(item), display);
            for (std::size_t j = 0; j < shown.numel(); ++j) shown[j] = (shown[j] + 1.0f) * 0.5f;

            const std::string cls = holdout.classes[static_cast<std::size_t>(item.label)];
            const auto dir = ctx.out / "explanations" / family_name /
                             (cls + "_" + std::to_string(taken[static_cast<std::size_t>(item.label)] - 1));
            std::filesystem::create_directories(dir);
            save_png(dir / "overlay.png", render_heatmap(ex, shown, std::min(top_k, ex.segmap.segments)));
            char buf[128];
            std::ofstream wf(dir / "weights.txt");
            wf << "item = " << item.relative_path << "\n";
            wf << "true_class = " << cls << "\n";
            wf << "explained_class = " << holdout.classes[static_cast<std::size_t>(ex.class_id)] << "\n";
            std::snprintf(buf, sizeof(buf), "intercept = %.6f", ex.intercept);
            wf << buf << "\n";
            std::snprintf(buf, sizeof(buf), "r_squared = %.6f%s", ex.r_squared, ex.low_fit_flag ? " (low fit)" : "");
            wf << buf << "\n";
            wf << "kernel_width = " << ex.kernel_width << "\n";
            wf << "num_perturbations = " << ex.num_perturbations << "\n";
            for (std::size_t s = 0; s < ex.weights.size(); ++s) {
                std::snprintf(buf, sizeof(buf), "segment %zu = %.6f", s, ex.weights[s]);
                wf << buf << "\n";
            }
        }
        log_line(ctx, "explain[" + family_name + "]: wrote explanations for fold " + std::to_string(fold));
    }
    write_marker(ctx, "explain");
}

void stage_report(PipelineContext& ctx) {
    const auto families = ctx.cfg.get_list("cnn.families", {"residual"});
    std::vector<ReportRow> rows;
    for (const auto& family_name : families) {
        const auto cv_rows = read_cv_summary(ctx.out / "cnn_runs" / family_name / "cv_summary.csv");
        const int fold = best_fold_of(cv_rows);
        const FoldSummaryRow& fr = cv_rows.at(static_cast<std::size_t>(fold));

        const auto metrics_file = ctx.out / "reports" / ("metrics_" + family_name + ".csv");
        std::ifstream mf(metrics_file);
        if (!mf)
            throw std::runtime_error("report: missing " + metrics_file.string() + "; run the evaluate stage first");
        std::string line;
        std::getline(mf, line);
        std::getline(mf, line);
        auto parts = split_csv_line(line);

        ReportRow row;
        row.model_name = family_name;
        row.dataset_name = ctx.dataset_name();
        row.train_loss = fr.train_loss;
        row.train_acc = fr.train_acc;
        row.val_loss = fr.val_loss;
        row.val_acc = fr.val_acc;
        row.test_loss = std::stod(parts.at(3));
        row.test_acc = std::stod(parts.at(4));
        row.precision = std::stod(parts.at(5));
        row.recall = std::stod(parts.at(6));
        row.f1 = std::stod(parts.at(7));
        rows.push_back(std::move(row));
    }
    std::filesystem::create_directories(ctx.out / "reports");
    emit_report(rows, ctx.out / "reports" / "report.csv");
    log_line(ctx, "report: wrote " + (ctx.out / "reports" / "report.csv").string());
    write_marker(ctx, "report");
}

void run_stage(PipelineContext& ctx, const std::string& stage) {
    if (stage == "toy-data")
        stage_toy_data(ctx);
    else if (stage == "split")
        stage_split(ctx);
    else if (stage == "train-dm")
        stage_train_dm(ctx);
    else if (stage == "generate")
        stage_generate(ctx);
    else if (stage == "train-cnn")
        stage_train_cnn(ctx);
    else if (stage == "evaluate")
        stage_evaluate(ctx);
    else if (stage == "explain")
        stage_explain(ctx);
    else if (stage == "report")
        stage_report(ctx);
    else
        throw std::runtime_error("unknown stage: " + stage);
}

void run_pipeline(PipelineContext& ctx, const std::string& only_stage) {
    std::vector<std::string> stages;
    if (!ctx.cfg.get_list("toy.classes", {}).empty()) stages.push_back("toy-data");
    for (const auto* s : {"split", "train-dm", "generate", "train-cnn", "evaluate", "explain", "report"})
        stages.push_back(s);

    if (!only_stage.empty()) {
        run_stage(ctx, only_stage);
        return;
    }
    for (const auto& stage : stages) {
        const int state = marker_state(ctx, stage);
        if (state == 1) {
            log_line(ctx, "pipeline: stage " + stage + " already complete, skipping");
            continue;
        }
        if (state == -1)
            throw std::runtime_error("pipeline: stage " + stage +
                                     " was completed with a different config or seed; use a fresh output directory");
        const auto t0 = std::chrono::steady_clock::now();
        run_stage(ctx, stage);
        const auto dt = std::chrono::duration_cast<std::chrono::seconds>(std::chrono::steady_clock::now() - t0);
        log_line(ctx, "pipeline: stage " + stage + " finished in " + std::to_string(dt.count()) + "s");
    }
}

}  // namespace diffgen
