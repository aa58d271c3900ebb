#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include "shadowphase/errors.hpp"
#include "shadowphase/nn/model.hpp"
#include "shadowphase/nn/params.hpp"

namespace shadowphase::nn {

inline constexpr char kCheckpointMagic[4] = {'S', 'P', 'N', 'N'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail_ckpt {

template <class P>
void put(std::ofstream& out, const P& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(P));
}

template <class P>
P get(std::ifstream& in, const char* what) {
    P v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(P));
    if (!in) throw FormatError(std::string("checkpoint: truncated while reading ") + what);
    return v;
}

inline void put_tensor(std::ofstream& out, const Tensor<float>& t) {
    put(out, static_cast<std::uint32_t>(t.shape.size()));
    for (std::int64_t d : t.shape) put(out, static_cast<std::int64_t>(d));
    out.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size() * sizeof(float)));
}

inline Tensor<float> get_tensor(std::ifstream& in) {
    const auto ndim = get<std::uint32_t>(in, "tensor rank");
    std::vector<std::int64_t> shape(ndim);
    for (auto& d : shape) d = get<std::int64_t>(in, "tensor dim");
    Tensor<float> t = Tensor<float>::zeros(shape);
    in.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    if (!in) throw FormatError("checkpoint: truncated tensor payload");
    return t;
}

}  // namespace detail_ckpt

// Versioned binary checkpoint: named tensors plus Adam moments and the step
// counter. Round trips are bit-exact.
inline void checkpoint_save(const ParamStore<float>& store, const ClassifierConfig& cfg,
                            const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("checkpoint_save: cannot open " + path);
    out.write(kCheckpointMagic, 4);
    detail_ckpt::put(out, kCheckpointVersion);
    const std::uint32_t arch = cfg.arch == ClassifierConfig::Arch::kBiRnn ? 0u : 1u;
    detail_ckpt::put(out, arch);
    detail_ckpt::put(out, static_cast<std::uint32_t>(cfg.use_gru ? 1 : 0));
    detail_ckpt::put(out, store.step);
    detail_ckpt::put(out, static_cast<std::uint32_t>(store.entries().size()));
    for (const auto& e : store.entries()) {
        detail_ckpt::put(out, static_cast<std::uint16_t>(e.name.size()));
        out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
        detail_ckpt::put(out, static_cast<std::uint8_t>(e.trainable ? 1 : 0));
        const std::uint8_t has_moments = !e.adam_m.data.empty();
        detail_ckpt::put(out, has_moments);
        detail_ckpt::put_tensor(out, e.value);
        if (has_moments) {
            detail_ckpt::put_tensor(out, e.adam_m);
            detail_ckpt::put_tensor(out, e.adam_v);
        }
    }
    if (!out) throw FormatError("checkpoint_save: write failed for " + path);
}

struct LoadedCheckpoint {
    ParamStore<float> store;
    ClassifierConfig::Arch arch = ClassifierConfig::Arch::kBiRnn;
    bool use_gru = true;
};

inline LoadedCheckpoint checkpoint_load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("checkpoint_load: cannot open " + path);
    char magic[4] = {};
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw FormatError("checkpoint_load: bad magic in " + path);
    const auto version = detail_ckpt::get<std::uint32_t>(in, "version");
    if (version != kCheckpointVersion)
        throw FormatError("checkpoint_load: unsupported version " + std::to_string(version));
    LoadedCheckpoint out;
    const auto arch = detail_ckpt::get<std::uint32_t>(in, "arch");
    out.arch = arch == 0 ? ClassifierConfig::Arch::kBiRnn : ClassifierConfig::Arch::kCnn;
    out.use_gru = detail_ckpt::get<std::uint32_t>(in, "use_gru") != 0;
    out.store.step = detail_ckpt::get<std::int64_t>(in, "step");
    const auto n = detail_ckpt::get<std::uint32_t>(in, "entry count");
    for (std::uint32_t i = 0; i < n; ++i) {
        const auto len = detail_ckpt::get<std::uint16_t>(in, "name length");
        std::string name(len, '\0');
        in.read(name.data(), len);
        if (!in) throw FormatError("checkpoint_load: truncated name");
        const auto trainable = detail_ckpt::get<std::uint8_t>(in, "trainable flag");
        const auto has_moments = detail_ckpt::get<std::uint8_t>(in, "moment flag");
        auto& e = out.store.add(name, detail_ckpt::get_tensor(in), trainable != 0);
        if (has_moments) {
            e.adam_m = detail_ckpt::get_tensor(in);
            e.adam_v = detail_ckpt::get_tensor(in);
        }
    }
    return out;
}

// Structural validation of a loaded checkpoint against a config: every
// expected parameter present with the expected shape, nothing extra.
inline void validate_checkpoint(const LoadedCheckpoint& loaded, const ClassifierConfig& cfg) {
    if (loaded.arch != cfg.arch)
        throw FormatError("checkpoint: architecture mismatch (have " +
                          std::string(loaded.arch == ClassifierConfig::Arch::kBiRnn ? "birnn" : "cnn") +
                          ", expected " + cfg.arch_name() + ")");
    ParamStore<float> expected;
    init_classifier_params(expected, cfg, /*seed=*/0);
    if (expected.entries().size() != loaded.store.entries().size())
        throw FormatError("checkpoint: parameter count mismatch");
    for (const auto& e : expected.entries()) {
        if (!loaded.store.has(e.name)) throw FormatError("checkpoint: missing parameter " + e.name);
        const auto& have = loaded.store.at(e.name).value;
        if (have.shape != e.value.shape)
            throw FormatError("checkpoint: shape mismatch for " + e.name + ": have " +
                              have.shape_str() + ", expected " + e.value.shape_str());
    }
}

}  // namespace shadowphase::nn
