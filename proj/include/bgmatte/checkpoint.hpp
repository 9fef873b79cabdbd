#pragma once

#include "bgmatte/model.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

namespace bgmatte::harness {

/// Adam first/second moments per parameter, stored in visit order.
struct AdamState {
    std::vector<MatF> m, v;
    long step = 0;
};

/// Everything needed to resume or reproduce a run; round-trips bit-exactly.
struct Checkpoint {
    model::ModelParams<float> params;
    AdamState opt;
    std::uint64_t rng_state = 0;
    long step = 0;
};

namespace detail {

inline void write_bytes(std::ofstream& f, const void* p, std::size_t n) {
    f.write(reinterpret_cast<const char*>(p), std::streamsize(n));
}

inline void read_bytes(std::ifstream& f, void* p, std::size_t n) {
    f.read(reinterpret_cast<char*>(p), std::streamsize(n));
    if (!f) throw std::runtime_error("checkpoint: truncated file");
}

template <typename T>
void write_pod(std::ofstream& f, const T& v) {
    write_bytes(f, &v, sizeof v);
}

template <typename T>
T read_pod(std::ifstream& f) {
    T v;
    read_bytes(f, &v, sizeof v);
    return v;
}

inline void write_string(std::ofstream& f, const std::string& s) {
    write_pod(f, std::uint64_t(s.size()));
    write_bytes(f, s.data(), s.size());
}

inline std::string read_string(std::ifstream& f) {
    auto n = read_pod<std::uint64_t>(f);
    std::string s(n, '\0');
    read_bytes(f, s.data(), n);
    return s;
}

inline void write_mat(std::ofstream& f, const MatF& m) {
    write_pod(f, std::int64_t(m.rows()));
    write_pod(f, std::int64_t(m.cols()));
    write_bytes(f, m.data(), sizeof(float) * std::size_t(m.size()));
}

inline MatF read_mat(std::ifstream& f) {
    auto rows = read_pod<std::int64_t>(f);
    auto cols = read_pod<std::int64_t>(f);
    MatF m(rows, cols);
    read_bytes(f, m.data(), sizeof(float) * std::size_t(m.size()));
    return m;
}

constexpr char kMagic[8] = {'B', 'G', 'M', 'C', 'K', 'P', 'T', '1'};

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
    detail::write_bytes(f, detail::kMagic, sizeof detail::kMagic);
    detail::write_string(f, config_to_text(ckpt.params.cfg));
    detail::write_pod(f, std::uint64_t(ckpt.params.cfg.seed));

    std::vector<std::pair<std::string, const MatF*>> mats;
    model::visit_params(const_cast<model::ModelParams<float>&>(ckpt.params),
                        [&](const std::string& name, MatF& m) { mats.push_back({name, &m}); });
    detail::write_pod(f, std::uint64_t(mats.size()));
    for (const auto& [name, m] : mats) {
        detail::write_string(f, name);
        detail::write_mat(f, *m);
    }

    bool has_opt = !ckpt.opt.m.empty();
    detail::write_pod(f, std::uint8_t(has_opt ? 1 : 0));
    if (has_opt) {
        detail::write_pod(f, std::int64_t(ckpt.opt.step));
        detail::write_pod(f, std::uint64_t(ckpt.opt.m.size()));
        for (std::size_t i = 0; i < ckpt.opt.m.size(); ++i) {
            detail::write_mat(f, ckpt.opt.m[i]);
            detail::write_mat(f, ckpt.opt.v[i]);
        }
    }
    detail::write_pod(f, ckpt.rng_state);
    detail::write_pod(f, std::int64_t(ckpt.step));
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[8];
    detail::read_bytes(f, magic, sizeof magic);
    if (std::memcmp(magic, detail::kMagic, sizeof magic) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path);

    std::string cfg_text = detail::read_string(f);
    auto seed = detail::read_pod<std::uint64_t>(f);
    std::istringstream ss(cfg_text);
    TrainConfig cfg = config_from_key_values(parse_key_values(ss));
    cfg.seed = seed;

    Checkpoint ckpt;
    ckpt.params = model::build_model<float>(cfg, seed);

    auto count = detail::read_pod<std::uint64_t>(f);
    std::vector<std::pair<std::string, MatF*>> mats;
    model::visit_params(ckpt.params, [&](const std::string& name, MatF& m) { mats.push_back({name, &m}); });
    if (count != mats.size())
        throw std::runtime_error("checkpoint: parameter count mismatch, file has " + std::to_string(count) +
                                 ", model expects " + std::to_string(mats.size()));
    for (std::size_t i = 0; i < count; ++i) {
        std::string name = detail::read_string(f);
        MatF m = detail::read_mat(f);
        if (name != mats[i].first)
            throw std::runtime_error("checkpoint: parameter order mismatch at '" + name + "', expected '" +
                                     mats[i].first + "'");
        if (m.rows() != mats[i].second->rows() || m.cols() != mats[i].second->cols())
            throw std::runtime_error("checkpoint: shape mismatch for '" + name + "'");
        *mats[i].second = std::move(m);
    }

    auto has_opt = detail::read_pod<std::uint8_t>(f);
    if (has_opt) {
        ckpt.opt.step = detail::read_pod<std::int64_t>(f);
        auto n = detail::read_pod<std::uint64_t>(f);
        for (std::uint64_t i = 0; i < n; ++i) {
            ckpt.opt.m.push_back(detail::read_mat(f));
            ckpt.opt.v.push_back(detail::read_mat(f));
        }
    }
    ckpt.rng_state = detail::read_pod<std::uint64_t>(f);
    ckpt.step = detail::read_pod<std::int64_t>(f);
    return ckpt;
}

}  // namespace bgmatte::harness
