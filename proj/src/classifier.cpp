#include "diffgen/classifier.hpp"

#include <algorithm>
#include <numeric>

namespace diffgen {

using layers::Conv2dLayer;
using layers::GroupNormLayer;
using layers::LinearLayer;
using layers::make_conv;
using layers::make_group_norm;
using layers::make_linear;

namespace {

constexpr int kNormGroups = 4;

using Var = VarT<float>;
using Fwd = std::function<Var(const Var&)>;

struct ConvBnAct {
    Conv2dLayer<float> conv;
    GroupNormLayer<float> norm;
    Var operator()(const Var& x) const { return relu(norm(conv(x))); }
};

ConvBnAct make_cba(ParamStoreT<float>& ps, const std::string& name, int cin, int cout, int k, Rng& rng,
                   Conv2dSpec spec = {}) {
    return {make_conv<float>(ps, name + ".conv", cin, cout, k, rng, spec),
            make_group_norm<float>(ps, name + ".norm", cout, kNormGroups)};
}

Fwd build_plain(ParamStoreT<float>& ps, const ClassifierConfig& cfg, Rng& rng, int& out_channels) {
    const int stages = cfg.depth_preset == 0 ? 2 : 3;
    std::vector<ConvBnAct> convs;
    int c = cfg.in_channels;
    int width = 16;
    for (int s = 0; s < stages; ++s) {
        convs.push_back(make_cba(ps, "stage" + std::to_string(s) + ".conv0", c, width, 3, rng, {.stride = 1, .pad = 1}));
        convs.push_back(
            make_cba(ps, "stage" + std::to_string(s) + ".conv1", width, width, 3, rng, {.stride = 1, .pad = 1}));
        c = width;
        width *= 2;
    }
    out_channels = c;
    const int per_stage = 2;
    return [convs, stages, per_stage](const Var& x) {
        Var h = x;
        for (int s = 0; s < stages; ++s) {
            for (int i = 0; i < per_stage; ++i) h = convs[static_cast<std::size_t>(s * per_stage + i)](h);
            h = maxpool2d(h, 2, 2);
        }
        return h;
    };
}

struct PlainResBlock {
    Conv2dLayer<float> conv1, conv2;
    GroupNormLayer<float> norm1, norm2;
    std::optional<Conv2dLayer<float>> proj;

    Var operator()(const Var& x) const {
        Var h = relu(norm1(conv1(x)));
        h = norm2(conv2(h));
        return relu(add(h, proj ? (*proj)(x) : x));
    }
};

PlainResBlock make_res(ParamStoreT<float>& ps, const std::string& name, int cin, int cout, int stride, Rng& rng) {
    PlainResBlock blk;
    blk.conv1 = make_conv<float>(ps, name + ".conv1", cin, cout, 3, rng, {.stride = stride, .pad = 1});
    blk.norm1 = make_group_norm<float>(ps, name + ".norm1", cout, kNormGroups);
    blk.conv2 = make_conv<float>(ps, name + ".conv2", cout, cout, 3, rng, {.stride = 1, .pad = 1});
    blk.norm2 = make_group_norm<float>(ps, name + ".norm2", cout, kNormGroups);
    if (cin != cout || stride != 1)
        blk.proj = make_conv<float>(ps, name + ".proj", cin, cout, 1, rng, {.stride = stride, .pad = 0});
    return blk;
}

Fwd build_residual(ParamStoreT<float>& ps, const ClassifierConfig& cfg, Rng& rng, int& out_channels) {
    const int stages = cfg.depth_preset == 0 ? 2 : 3;
    const int blocks = cfg.depth_preset == 0 ? 1 : 2;
    ConvBnAct stem = make_cba(ps, "stem", cfg.in_channels, 16, 3, rng, {.stride = 1, .pad = 1});
    std::vector<PlainResBlock> body;
    int c = 16;
    for (int s = 0; s < stages; ++s) {
        const int target = 16 << s;
        for (int b = 0; b < blocks; ++b) {
            const int stride = (s > 0 && b == 0) ? 2 : 1;
            body.push_back(make_res(ps, "stage" + std::to_string(s) + ".block" + std::to_string(b), c, target, stride, rng));
            c = target;
        }
    }
    out_channels = c;
    return [stem, body](const Var& x) {
        Var h = stem(x);
        for (const auto& blk : body) h = blk(h);
        return h;
    };
}

struct DenseLayer {
    GroupNormLayer<float> norm;
    Conv2dLayer<float> conv;
    Var operator()(const Var& x) const { return conv(relu(norm(x))); }
};

Fwd build_dense(ParamStoreT<float>& ps, const ClassifierConfig& cfg, Rng& rng, int& out_channels) {
    const int blocks = cfg.depth_preset == 0 ? 2 : 3;
    const int layers_per_block = 3;
    const int growth = 8;
    ConvBnAct stem = make_cba(ps, "stem", cfg.in_channels, 16, 3, rng, {.stride = 1, .pad = 1});
    std::vector<std::vector<DenseLayer>> dense(static_cast<std::size_t>(blocks));
    std::vector<DenseLayer> transitions;
    int c = 16;
    for (int bidx = 0; bidx < blocks; ++bidx) {
        for (int l = 0; l < layers_per_block; ++l) {
            const std::string name = "block" + std::to_string(bidx) + ".layer" + std::to_string(l);
            dense[static_cast<std::size_t>(bidx)].push_back(
                {make_group_norm<float>(ps, name + ".norm", c, kNormGroups),
                 make_conv<float>(ps, name + ".conv", c, growth, 3, rng, {.stride = 1, .pad = 1})});
            c += growth;
        }
        if (bidx + 1 < blocks) {
            int half = c / 2;
            half -= half % kNormGroups;  // keep channels group-divisible
            const std::string name = "transition" + std::to_string(bidx);
            transitions.push_back({make_group_norm<float>(ps, name + ".norm", c, kNormGroups),
                                   make_conv<float>(ps, name + ".conv", c, half, 1, rng)});
            c = half;
        }
    }
    out_channels = c;
    return [stem, dense, transitions](const Var& x) {
        Var h = stem(x);
        for (std::size_t bidx = 0; bidx < dense.size(); ++bidx) {
            for (const auto& layer : dense[bidx]) h = concat_channels<float>({h, layer(h)});
            if (bidx < transitions.size()) h = maxpool2d(transitions[bidx](h), 2, 2);
        }
        return h;
    };
}

struct SepBlock {
    Conv2dLayer<float> dw, pw;
    GroupNormLayer<float> norm_dw, norm_pw;
    Var operator()(const Var& x) const { return relu(norm_pw(pw(relu(norm_dw(dw(x)))))); }
};

SepBlock make_sep(ParamStoreT<float>& ps, const std::string& name, int cin, int cout, int stride, Rng& rng) {
    return {make_conv<float>(ps, name + ".dw", cin, cin, 3, rng, {.stride = stride, .pad = 1, .groups = cin}),
            make_conv<float>(ps, name + ".pw", cin, cout, 1, rng),
            make_group_norm<float>(ps, name + ".norm_dw", cin, kNormGroups),
            make_group_norm<float>(ps, name + ".norm_pw", cout, kNormGroups)};
}

Fwd build_separable(ParamStoreT<float>& ps, const ClassifierConfig& cfg, Rng& rng, int& out_channels) {
    ConvBnAct stem = make_cba(ps, "stem", cfg.in_channels, 16, 3, rng, {.stride = 1, .pad = 1});
    std::vector<SepBlock> body;
    body.push_back(make_sep(ps, "sep0", 16, 32, 1, rng));
    body.push_back(make_sep(ps, "sep1", 32, 32, 2, rng));
    body.push_back(make_sep(ps, "sep2", 32, 64, 1, rng));
    int c = 64;
    if (cfg.depth_preset == 1) {
        body.push_back(make_sep(ps, "sep3", 64, 64, 2, rng));
        body.push_back(make_sep(ps, "sep4", 64, 128, 1, rng));
        c = 128;
    }
    out_channels = c;
    return [stem, body](const Var& x) {
        Var h = stem(x);
        for (const auto& blk : body) h = blk(h);
        return h;
    };
}

struct InceptionModule {
    ConvBnAct b1;            // 1x1
    ConvBnAct b2a, b2b;      // 1x1 -> 3x3
    ConvBnAct b3a, b3b;      // 1x1 -> 5x5
    ConvBnAct b4;            // pool -> 1x1
    Var operator()(const Var& x) const {
        Var p = maxpool2d(x, 3, 1, 1);
        return concat_channels<float>({b1(x), b2b(b2a(x)), b3b(b3a(x)), b4(p)});
    }
};

InceptionModule make_inception(ParamStoreT<float>& ps, const std::string& name, int cin, Rng& rng) {
    return {make_cba(ps, name + ".b1", cin, 8, 1, rng),
            make_cba(ps, name + ".b2a", cin, 8, 1, rng),
            make_cba(ps, name + ".b2b", 8, 12, 3, rng, {.stride = 1, .pad = 1}),
            make_cba(ps, name + ".b3a", cin, 4, 1, rng),
            make_cba(ps, name + ".b3b", 4, 8, 5, rng, {.stride = 1, .pad = 2}),
            make_cba(ps, name + ".b4", cin, 8, 1, rng)};
}

Fwd build_inception(ParamStoreT<float>& ps, const ClassifierConfig& cfg, Rng& rng, int& out_channels) {
    const int modules = cfg.depth_preset == 0 ? 2 : 3;
    ConvBnAct stem = make_cba(ps, "stem", cfg.in_channels, 16, 3, rng, {.stride = 1, .pad = 1});
    std::vector<InceptionModule> body;
    int c = 16;
    for (int m = 0; m < modules; ++m) {
        body.push_back(make_inception(ps, "module" + std::to_string(m), c, rng));
        c = 36;  // 8 + 12 + 8 + 8
    }
    out_channels = c;
    return [stem, body](const Var& x) {
        Var h = stem(x);
        for (const auto& mod : body) h = maxpool2d(mod(h), 2, 2);
        return h;
    };
}

}  // namespace

ClassifierFamily classifier_family_from_string(const std::string& name) {
    if (name == "plain_conv") return ClassifierFamily::plain_conv;
    if (name == "residual") return ClassifierFamily::residual;
    if (name == "dense") return ClassifierFamily::dense;
    if (name == "separable") return ClassifierFamily::separable;
    if (name == "inception") return ClassifierFamily::inception;
    throw std::invalid_argument("unknown classifier family: " + name);
}

std::string to_string(ClassifierFamily family) {
    switch (family) {
        case ClassifierFamily::plain_conv: return "plain_conv";
        case ClassifierFamily::residual: return "residual";
        case ClassifierFamily::dense: return "dense";
        case ClassifierFamily::separable: return "separable";
        case ClassifierFamily::inception: return "inception";
    }
    throw std::logic_error("unreachable");
}

std::vector<ClassifierFamily> all_classifier_families() {
    return {ClassifierFamily::plain_conv, ClassifierFamily::residual, ClassifierFamily::dense,
            ClassifierFamily::separable, ClassifierFamily::inception};
}

ClassifierModel build_classifier(const ClassifierConfig& cfg, Rng& rng) {
    cfg.validate();
    ClassifierModel m;
    m.config = cfg;
    int feat = 0;
    Fwd body;
    switch (cfg.family) {
        case ClassifierFamily::plain_conv: body = build_plain(m.params, cfg, rng, feat); break;
        case ClassifierFamily::residual: body = build_residual(m.params, cfg, rng, feat); break;
        case ClassifierFamily::dense: body = build_dense(m.params, cfg, rng, feat); break;
        case ClassifierFamily::separable: body = build_separable(m.params, cfg, rng, feat); break;
        case ClassifierFamily::inception: body = build_inception(m.params, cfg, rng, feat); break;
    }
    LinearLayer<float> head = make_linear<float>(m.params, "head", feat, cfg.num_classes, rng);
    m.forward = [body, head](const Var& x) { return head(global_avg_pool(body(x))); };
    return m;
}

namespace {

Tensor stack_batch(const std::vector<Tensor>& items, const std::vector<int>& order, int begin, int bs) {
    const Shape& s = items[static_cast<std::size_t>(order[static_cast<std::size_t>(begin)])].shape();
    Tensor batch({bs, s[0], s[1], s[2]});
    const std::size_t per = shape_numel(s);
    for (int b = 0; b < bs; ++b) {
        const auto& t = items[static_cast<std::size_t>(order[static_cast<std::size_t>(begin + b)])];
        std::copy(t.data(), t.data() + per, batch.data() + static_cast<std::size_t>(b) * per);
    }
    return batch;
}

int argmax_row(const Tensor& t, int row) {
    const int C = t.extent(1);
    const float* p = t.data() + static_cast<std::size_t>(row) * C;
    return static_cast<int>(std::max_element(p, p + C) - p);
}

struct EvalResult {
    double loss = 0;
    double acc = 0;
};

EvalResult evaluate_on(ClassifierModel& model, const std::vector<Tensor>& xs, const std::vector<int>& ys, int batch) {
    model.set_training(false);
    std::vector<int> order(xs.size());
    std::iota(order.begin(), order.end(), 0);
    double loss_sum = 0;
    int correct = 0;
    const int n = static_cast<int>(xs.size());
    for (int begin = 0; begin < n; begin += batch) {
        const int bs = std::min(batch, n - begin);
        Tensor xb = stack_batch(xs, order, begin, bs);
        std::vector<int> yb(ys.begin() + begin, ys.begin() + begin + bs);
        auto logits = model.forward(constant(std::move(xb)));
        auto loss = cross_entropy(logits, yb);
        loss_sum += static_cast<double>(loss->value.item()) * bs;
        for (int b = 0; b < bs; ++b)
            if (argmax_row(logits->value, b) == yb[static_cast<std::size_t>(b)]) ++correct;
    }
    model.set_training(true);
    return {loss_sum / n, static_cast<double>(correct) / n};
}

}  // namespace

TrainRun train_classifier(ClassifierModel& model, const std::vector<Tensor>& train_x, const std::vector<int>& train_y,
                          const std::vector<Tensor>& val_x, const std::vector<int>& val_y, const ClassifierConfig& cfg,
                          std::uint64_t seed) {
    cfg.validate();
    if (train_x.empty() || val_x.empty()) throw std::invalid_argument("train_classifier: empty train or val set");
    if (train_x.size() != train_y.size() || val_x.size() != val_y.size())
        throw std::invalid_argument("train_classifier: image/label count mismatch");

    model.set_training(true);
    AdamW opt({.lr = cfg.lr, .beta1 = 0.9f, .beta2 = 0.999f, .eps = 1e-8f, .weight_decay = cfg.weight_decay},
              model.params.params());
    Rng rng(seed);
    EarlyStopper stopper(cfg.patience);
    TrainRun run;
    std::vector<std::pair<std::string, Tensor>> best_params;

    std::vector<int> order(train_x.size());
    std::iota(order.begin(), order.end(), 0);
    const int n = static_cast<int>(train_x.size());

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        rng.shuffle(order.begin(), order.end());
        double loss_sum = 0;
        int correct = 0;
        for (int begin = 0; begin < n; begin += cfg.batch_size) {
            const int bs = std::min(cfg.batch_size, n - begin);
            Tensor xb = stack_batch(train_x, order, begin, bs);
            std::vector<int> yb(static_cast<std::size_t>(bs));
            for (int b = 0; b < bs; ++b) yb[static_cast<std::size_t>(b)] = train_y[static_cast<std::size_t>(order[static_cast<std::size_t>(begin + b)])];
            model.params.zero_grad();
            auto logits = model.forward(constant(std::move(xb)));
            auto loss = cross_entropy(logits, yb);
            const float lv = loss->value.item();
            if (!std::isfinite(lv)) throw std::runtime_error("train_classifier: non-finite loss");
            backward(loss);
            opt.step();
            loss_sum += static_cast<double>(lv) * bs;
            for (int b = 0; b < bs; ++b)
                if (argmax_row(logits->value, b) == yb[static_cast<std::size_t>(b)]) ++correct;
        }
        run.train_loss.push_back(static_cast<float>(loss_sum / n));
        run.train_acc.push_back(static_cast<float>(correct) / static_cast<float>(n));

        const EvalResult val = evaluate_on(model, val_x, val_y, cfg.batch_size);
        run.val_loss.push_back(static_cast<float>(val.loss));
        run.val_acc.push_back(static_cast<float>(val.acc));

        const int prev_best = stopper.best_epoch();
        const bool stop = stopper.record(val.loss);
        if (stopper.best_epoch() != prev_best) {
            best_params.clear();
            for (const auto& p : model.params.params()) best_params.emplace_back(p->name, p->value);
        }
        if (stop) {
            run.early_stopped = true;
            break;
        }
    }
    run.best_epoch = stopper.best_epoch();
    for (const auto& [name, value] : best_params) model.params.find(name)->value = value;
    model.set_training(false);
    return run;
}

int CrossValResult::best_fold() const {
    int best = 0;
    for (std::size_t f = 1; f < folds.size(); ++f)
        if (folds[f].run.best_val_loss() < folds[static_cast<std::size_t>(best)].run.best_val_loss())
            best = static_cast<int>(f);
    return best;
}

CrossValResult cross_validate(const LabeledDataset& ds, int k, const ClassifierConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    auto folds = kfold_split(ds, k, seed);
    CrossValResult result;
    Rng base(seed);
    for (std::size_t f = 0; f < folds.size(); ++f) {
        const auto& [train_ds, val_ds] = folds[f];
        FoldResult fr;
        fr.spec = make_classifier_spec(cfg.input_size, cfg.in_channels, train_ds);
        auto train_x = load_preprocessed(train_ds, fr.spec);
        auto val_x = load_preprocessed(val_ds, fr.spec);
        Rng fold_rng = base.split(1000 + f);
        fr.model = build_classifier(cfg, fold_rng);
        fr.run = train_classifier(fr.model, train_x, labels_of(train_ds), val_x, labels_of(val_ds), cfg,
                                  fold_rng.split(1).seed());
        result.folds.push_back(std::move(fr));
    }
    double sum_l = 0, sum_l2 = 0, sum_a = 0, sum_a2 = 0;
    for (const auto& fr : result.folds) {
        sum_l += fr.run.best_val_loss();
        sum_l2 += static_cast<double>(fr.run.best_val_loss()) * fr.run.best_val_loss();
        sum_a += fr.run.best_val_acc();
        sum_a2 += static_cast<double>(fr.run.best_val_acc()) * fr.run.best_val_acc();
    }
    const double kk = static_cast<double>(result.folds.size());
    result.mean_val_loss = sum_l / kk;
    result.std_val_loss = std::sqrt(std::max(0.0, sum_l2 / kk - result.mean_val_loss * result.mean_val_loss));
    result.mean_val_acc = sum_a / kk;
    result.std_val_acc = std::sqrt(std::max(0.0, sum_a2 / kk - result.mean_val_acc * result.mean_val_acc));
    return result;
}

Tensor predict(const ClassifierModel& model, const Tensor& images) {
    auto& store = const_cast<ParamStoreT<float>&>(model.params);
    std::vector<bool> flags;
    for (const auto& p : store.params()) flags.push_back(p->requires_grad);
    store.set_requires_grad(false);
    Tensor probs = kernels::softmax_rows<float>(model.forward(constant(Tensor(images)))->value);
    for (std::size_t i = 0; i < flags.size(); ++i) store.params()[i]->requires_grad = flags[i];
    return probs;
}

Tensor predict_items(const ClassifierModel& model, const std::vector<Tensor>& images, int batch) {
    if (images.empty()) throw std::invalid_argument("predict_items: empty batch");
    const Shape& s = images[0].shape();
    const std::size_t per = shape_numel(s);
    const int n = static_cast<int>(images.size());
    Tensor out({n, model.config.num_classes});
    for (int begin = 0; begin < n; begin += batch) {
        const int bs = std::min(batch, n - begin);
        Tensor xb({bs, s[0], s[1], s[2]});
        for (int b = 0; b < bs; ++b)
            std::copy(images[static_cast<std::size_t>(begin + b)].data(),
                      images[static_cast<std::size_t>(begin + b)].data() + per, xb.data() + static_cast<std::size_t>(b) * per);
        Tensor probs = predict(model, xb);
        std::copy(probs.data(), probs.data() + probs.numel(),
                  out.data() + static_cast<std::size_t>(begin) * model.config.num_classes);
    }
    return out;
}

}  // namespace diffgen
