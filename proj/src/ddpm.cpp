#include "diffgen/ddpm.hpp"

#include <fstream>
#include <numeric>

namespace diffgen {

std::vector<float> train_dm(DenoiserModel& model, const std::vector<Tensor>& images, const NoiseSchedule& sched,
                            const DMTrainConfig& cfg, const std::vector<int>* labels) {
    if (images.empty()) throw std::invalid_argument("train_dm: dataset is empty");
    if (cfg.epochs < 0 || cfg.batch_size < 1) throw std::invalid_argument("train_dm: invalid epochs/batch_size");
    if (labels && labels->size() != images.size())
        throw std::invalid_argument("train_dm: label count does not match image count");
    const Shape img_shape = model.image_shape();
    for (const auto& img : images)
        if (!(img.shape() == img_shape))
            throw std::invalid_argument("train_dm: image shape " + shape_str(img.shape()) +
                                        " does not match model geometry " + shape_str(img_shape));

    std::vector<float> history;
    if (cfg.epochs == 0) return history;

    model.set_training(true);
    AdamW opt(cfg.adamw, model.params.params());
    Rng rng(cfg.seed);
    const std::size_t per = shape_numel(img_shape);
    const int n = static_cast<int>(images.size());

    auto write_ckpt = [&]() {
        if (cfg.checkpoint_dir.empty()) return;
        auto meta = cfg.checkpoint_meta;
        meta["schedule_kind"] = sched.kind;
        meta["schedule_T"] = std::to_string(sched.T);
        meta["schedule_beta_start"] = std::to_string(sched.beta_start);
        meta["schedule_beta_end"] = std::to_string(sched.beta_end);
        save_checkpoint(cfg.checkpoint_dir, model.params, meta);
    };

    std::vector<int> order(images.size());
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order.begin(), order.end());
        double loss_sum = 0.0;
        for (int begin = 0; begin < n; begin += cfg.batch_size) {
            const int bs = std::min(cfg.batch_size, n - begin);
            Tensor batch({bs, img_shape[0], img_shape[1], img_shape[2]});
            std::vector<int> batch_labels(static_cast<std::size_t>(bs));
            for (int b = 0; b < bs; ++b) {
                const int idx = order[static_cast<std::size_t>(begin + b)];
                std::copy(images[static_cast<std::size_t>(idx)].data(),
                          images[static_cast<std::size_t>(idx)].data() + per, batch.data() + static_cast<std::size_t>(b) * per);
                if (labels) batch_labels[static_cast<std::size_t>(b)] = (*labels)[static_cast<std::size_t>(idx)];
            }
            model.params.zero_grad();
            auto loss = simple_loss<float>(model, batch, sched, rng, labels ? &batch_labels : nullptr);
            const float lv = loss->value.item();
            if (!std::isfinite(lv))
                throw std::runtime_error("train_dm: non-finite loss at epoch " + std::to_string(epoch + 1) +
                                         "; last checkpoint retained");
            backward(loss);
            opt.step();
            loss_sum += static_cast<double>(lv) * bs;
        }
        history.push_back(static_cast<float>(loss_sum / n));
        if (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0) write_ckpt();
    }
    write_ckpt();
    model.set_training(false);
    return history;
}

std::vector<GenerationItem> plan_generation(const std::vector<std::string>& class_names, const std::vector<int>& counts,
                                            std::uint64_t seed, const std::vector<std::string>& checkpoint_ids) {
    if (class_names.empty() || class_names.size() != counts.size())
        throw std::invalid_argument("plan_generation: class/count mismatch");
    if (checkpoint_ids.size() != class_names.size())
        throw std::invalid_argument("plan_generation: class/checkpoint mismatch");
    for (std::size_t c = 0; c < counts.size(); ++c)
        if (counts[c] <= 0)
            throw std::invalid_argument("plan_generation: count for class '" + class_names[c] + "' must be positive");
    std::vector<GenerationItem> items;
    Rng base(seed);
    for (std::size_t c = 0; c < class_names.size(); ++c) {
        Rng class_rng = base.split(static_cast<std::uint64_t>(c));
        for (int i = 0; i < counts[c]; ++i) {
            GenerationItem item;
            char buf[32];
            std::snprintf(buf, sizeof(buf), "_%05d.png", i);
            item.relative_path = class_names[c] + "/" + class_names[c] + buf;
            item.class_label = class_names[c];
            item.class_id = static_cast<int>(c);
            item.stream_seed = class_rng.split(static_cast<std::uint64_t>(i)).seed();
            item.checkpoint_id = checkpoint_ids[c];
            items.push_back(std::move(item));
        }
    }
    return items;
}

std::filesystem::path generate_dataset(const std::vector<DenoiserModel*>& per_class, DenoiserModel* conditional,
                                       const std::vector<std::string>& class_names, const std::vector<int>& counts,
                                       const std::filesystem::path& out_dir, std::uint64_t seed,
                                       const SamplerConfig& sampler,
                                       const std::vector<std::string>& checkpoint_ids) {
    if (!conditional && per_class.size() != class_names.size())
        throw std::invalid_argument("generate_dataset: need one model per class (or a conditional model)");
    if (conditional && conditional->config.num_classes != static_cast<int>(class_names.size()))
        throw std::invalid_argument("generate_dataset: conditional model class count mismatch");
    auto plan = plan_generation(class_names, counts, seed, checkpoint_ids);

    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw std::runtime_error("generate_dataset: cannot create " + out_dir.string());

    std::size_t cursor = 0;
    for (std::size_t c = 0; c < class_names.size(); ++c) {
        std::filesystem::create_directories(out_dir / class_names[c], ec);
        if (ec) throw std::runtime_error("generate_dataset: cannot create class directory " + class_names[c]);
        const int n = counts[c];
        std::vector<Rng> streams;
        streams.reserve(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) streams.push_back(Rng(plan[cursor + static_cast<std::size_t>(i)].stream_seed));
        DenoiserModel& model = conditional ? *conditional : *per_class[c];
        std::vector<int> ids(static_cast<std::size_t>(n), static_cast<int>(c));
        auto imgs = sample_streams<float>(model, std::move(streams), sampler, conditional ? &ids : nullptr);
        for (int i = 0; i < n; ++i) {
            Tensor unit(imgs[static_cast<std::size_t>(i)].shape());
            for (std::size_t j = 0; j < unit.numel(); ++j)
                unit[j] = (imgs[static_cast<std::size_t>(i)][j] + 1.0f) * 0.5f;
            save_png(out_dir / plan[cursor + static_cast<std::size_t>(i)].relative_path, tensor_to_image(unit));
        }
        cursor += static_cast<std::size_t>(n);
    }

    const auto manifest_path = out_dir / "manifest.csv";
    std::ofstream manifest(manifest_path);
    if (!manifest) throw std::runtime_error("generate_dataset: cannot write " + manifest_path.string());
    manifest << "relative_path,class_label,seed,model_checkpoint_id\n";
    for (const auto& item : plan)
        manifest << item.relative_path << "," << item.class_label << "," << item.stream_seed << ","
                 << item.checkpoint_id << "\n";
    return manifest_path;
}

}  // namespace diffgen
