#include "diffgen/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "diffgen/version.hpp"

namespace diffgen {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint io assumes a little-endian host");

std::string shape_token(const Shape& shape) {
    std::string s;
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += 'x';
        s += std::to_string(shape[i]);
    }
    return s;
}

Shape parse_shape_token(const std::string& token) {
    Shape shape;
    std::stringstream ss(token);
    std::string part;
    while (std::getline(ss, part, 'x')) shape.push_back(std::stoi(part));
    return shape;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, const std::vector<std::pair<std::string, const Tensor*>>& params,
                     const std::map<std::string, std::string>& metadata) {
    std::filesystem::create_directories(dir);
    std::ofstream manifest(dir / "manifest.txt");
    if (!manifest) throw std::runtime_error("checkpoint: cannot write " + (dir / "manifest.txt").string());
    manifest << "pipeline_version = " << kPipelineVersion << "\n";
    manifest << "dtype = f32\n";
    for (const auto& [key, value] : metadata) manifest << "meta." << key << " = " << value << "\n";
    for (const auto& [name, tensor] : params) {
        manifest << "param = " << name << " " << shape_token(tensor->shape()) << "\n";
        std::ofstream bin(dir / (name + ".bin"), std::ios::binary);
        if (!bin) throw std::runtime_error("checkpoint: cannot write " + (dir / (name + ".bin")).string());
        bin.write(reinterpret_cast<const char*>(tensor->data()),
                  static_cast<std::streamsize>(tensor->numel() * sizeof(float)));
    }
}

void save_checkpoint(const std::filesystem::path& dir, const ParamStoreT<float>& store,
                     const std::map<std::string, std::string>& metadata) {
    std::vector<std::pair<std::string, const Tensor*>> params;
    params.reserve(store.params().size());
    for (const auto& p : store.params()) params.emplace_back(p->name, &p->value);
    save_checkpoint(dir, params, metadata);
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
    std::ifstream manifest(dir / "manifest.txt");
    if (!manifest) throw std::runtime_error("checkpoint: missing manifest at " + dir.string());
    Checkpoint ckpt;
    std::string line;
    while (std::getline(manifest, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        std::string key = line.substr(0, eq);
        std::string value = line.substr(eq + 1);
        auto trim = [](std::string& s) {
            const auto b = s.find_first_not_of(" \t");
            const auto e = s.find_last_not_of(" \t\r");
            s = (b == std::string::npos) ? "" : s.substr(b, e - b + 1);
        };
        trim(key);
        trim(value);
        if (key == "param") {
            const auto sp = value.rfind(' ');
            if (sp == std::string::npos) throw std::runtime_error("checkpoint: malformed param line: " + line);
            std::string name = value.substr(0, sp);
            Shape shape = parse_shape_token(value.substr(sp + 1));
            Tensor t(shape);
            std::ifstream bin(dir / (name + ".bin"), std::ios::binary);
            if (!bin) throw std::runtime_error("checkpoint: missing tensor file " + (dir / (name + ".bin")).string());
            bin.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(float)));
            if (static_cast<std::size_t>(bin.gcount()) != t.numel() * sizeof(float))
                throw std::runtime_error("checkpoint: truncated tensor file for " + name);
            ckpt.params.emplace_back(std::move(name), std::move(t));
        } else if (key.rfind("meta.", 0) == 0) {
            ckpt.metadata[key.substr(5)] = value;
        } else {
            ckpt.metadata[key] = value;
        }
    }
    return ckpt;
}

void restore_params(ParamStoreT<float>& store, const Checkpoint& ckpt) {
    for (const auto& p : store.params()) {
        const Tensor* t = ckpt.find(p->name);
        if (!t) throw std::runtime_error("checkpoint: parameter not found: " + p->name);
        if (!(t->shape() == p->value.shape()))
            throw std::runtime_error("checkpoint: shape mismatch for " + p->name + ": " + shape_str(t->shape()) +
                                     " vs " + shape_str(p->value.shape()));
        p->value = *t;
    }
}

}  // namespace diffgen
