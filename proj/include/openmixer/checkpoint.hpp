// Copyright (C) 2026 the openmixer authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "openmixer/common.hpp"
#include "openmixer/model.hpp"
#include "openmixer/nn.hpp"
#include "openmixer/tensor.hpp"

namespace openmixer::ckpt {

// Parameters, optimizer moments and run metadata. Doubles are stored as raw
// host-endian bytes so a restore reproduces forward passes bit for bit.
struct Checkpoint {
    std::map<std::string, Tensor> params;
    bool has_optimizer = false;
    std::uint64_t step_count = 0;
    std::map<std::string, std::pair<Tensor, Tensor>> optimizer;  // name -> (m, v)
    int epoch = 0;
    std::string config_json;
};

namespace detail {

constexpr const char* kMagic = "openmixer-checkpoint 1";

inline void write_u64(std::ostream& out, std::uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

inline void write_i32(std::ostream& out, std::int32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

inline void write_string(std::ostream& out, const std::string& s) {
    write_u64(out, s.size());
    out.write(s.data(), static_cast<long>(s.size()));
}

inline void write_tensor(std::ostream& out, const Tensor& t) {
    write_i32(out, t.ndim());
    for (int i = 0; i < t.ndim(); ++i) write_i32(out, t.dim(i));
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<long>(t.numel() * sizeof(double)));
}

inline std::uint64_t read_u64(std::istream& in, const std::string& path) {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!in) throw InputError(path + ": truncated checkpoint");
    return v;
}

inline std::int32_t read_i32(std::istream& in, const std::string& path) {
    std::int32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!in) throw InputError(path + ": truncated checkpoint");
    return v;
}

inline std::string read_string(std::istream& in, const std::string& path) {
    const std::uint64_t n = read_u64(in, path);
    if (n > (1ull << 30)) throw InputError(path + ": implausible string length");
    std::string s(n, '\0');
    in.read(s.data(), static_cast<long>(n));
    if (!in) throw InputError(path + ": truncated checkpoint");
    return s;
}

inline Tensor read_tensor(std::istream& in, const std::string& path) {
    const std::int32_t nd = read_i32(in, path);
    if (nd < 1 || nd > 8) throw InputError(path + ": implausible tensor rank");
    std::vector<int> dims(static_cast<std::size_t>(nd));
    for (auto& d : dims) {
        d = read_i32(in, path);
        if (d < 1 || d > (1 << 24)) throw InputError(path + ": implausible tensor dim");
    }
    Tensor t(dims);
    in.read(reinterpret_cast<char*>(t.raw().data()),
            static_cast<long>(t.numel() * sizeof(double)));
    if (!in) throw InputError(path + ": truncated checkpoint");
    return t;
}

}  // namespace detail

inline Checkpoint snapshot(const model::OpenMixerModel& m, const AdamW* opt, int epoch) {
    Checkpoint c;
    for (const auto& [name, p] : m.params.all()) c.params[name] = p->value;
    if (opt != nullptr) {
        c.has_optimizer = true;
        c.step_count = opt->step_count();
        for (const auto& [name, st] : opt->state()) c.optimizer[name] = {st.m, st.v};
    }
    c.epoch = epoch;
    c.config_json = config::format_config(m.cfg);
    return c;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& c) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write checkpoint: " + path);
    out << detail::kMagic << '\n';
    detail::write_u64(out, c.params.size());
    for (const auto& [name, t] : c.params) {
        detail::write_string(out, name);
        detail::write_tensor(out, t);
    }
    out.put(c.has_optimizer ? 1 : 0);
    if (c.has_optimizer) {
        detail::write_u64(out, c.step_count);
        detail::write_u64(out, c.optimizer.size());
        for (const auto& [name, mv] : c.optimizer) {
            detail::write_string(out, name);
            detail::write_tensor(out, mv.first);
            detail::write_tensor(out, mv.second);
        }
    }
    detail::write_i32(out, c.epoch);
    detail::write_string(out, c.config_json);
    if (!out) throw InputError("checkpoint write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open checkpoint: " + path);
    std::string magic;
    if (!std::getline(in, magic) || magic != detail::kMagic)
        throw ValidationError(path + ": not an openmixer checkpoint");
    Checkpoint c;
    const std::uint64_t np = detail::read_u64(in, path);
    for (std::uint64_t i = 0; i < np; ++i) {
        const std::string name = detail::read_string(in, path);
        c.params[name] = detail::read_tensor(in, path);
    }
    const int flag = in.get();
    if (flag != 0 && flag != 1) throw InputError(path + ": truncated checkpoint");
    c.has_optimizer = flag == 1;
    if (c.has_optimizer) {
        c.step_count = detail::read_u64(in, path);
        const std::uint64_t ns = detail::read_u64(in, path);
        for (std::uint64_t i = 0; i < ns; ++i) {
            const std::string name = detail::read_string(in, path);
            Tensor m = detail::read_tensor(in, path);
            Tensor v = detail::read_tensor(in, path);
            c.optimizer[name] = {std::move(m), std::move(v)};
        }
    }
    c.epoch = detail::read_i32(in, path);
    c.config_json = detail::read_string(in, path);
    return c;
}

// Copies stored values into an assembled model. Parameter names must match
// exactly in both directions; shape drift is an architecture mismatch.
inline void restore(model::OpenMixerModel& m, const Checkpoint& c, AdamW* opt = nullptr) {
    for (const auto& [name, p] : m.params.all()) {
        const auto it = c.params.find(name);
        if (it == c.params.end())
            throw ValidationError("checkpoint missing parameter '" + name + "'");
        if (!it->second.same_shape(p->value))
            throw ValidationError("checkpoint shape mismatch for '" + name + "'");
        p->value = it->second;
    }
    for (const auto& [name, t] : c.params)
        if (!m.params.has(name))
            throw ValidationError("checkpoint has unknown parameter '" + name + "'");
    if (opt != nullptr) {
        if (!c.has_optimizer)
            throw ValidationError("checkpoint carries no optimizer state");
        opt->set_step_count(c.step_count);
        opt->state().clear();
        for (const auto& [name, mv] : c.optimizer) {
            if (!m.params.has(name))
                throw ValidationError("checkpoint optimizer state for unknown '" + name + "'");
            opt->state()[name] = {mv.first, mv.second};
        }
    }
}

}  // namespace openmixer::ckpt
