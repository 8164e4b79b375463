#pragma once

// Single checkpoint container shared by the denoiser, restorers and the probe
// classifier: a magic header, a JSON manifest and named float32 blobs, with a
// trailing whole-file checksum. Writes are atomic (tmp file + rename).

#include <json.hpp>

#include <cstdio>
#include <filesystem>

#include "diffloss/core/fileio.hpp"
#include "diffloss/core/nn.hpp"
#include "diffloss/schedule.hpp"

namespace diffloss {

using json = nlohmann::json;

inline constexpr char kCheckpointMagic[8] = {'D', 'L', 'O', 'S', 'S', 'C', 'K', 'P'};
inline constexpr uint32_t kCheckpointVersion = 1;

// Distinct load failures, as distinguishable types and messages.
class CorruptCheckpointError : public DataError {
public:
    explicit CorruptCheckpointError(const std::string& msg) : DataError("corrupt checkpoint: " + msg) {}
};

class CheckpointVersionError : public DataError {
public:
    explicit CheckpointVersionError(const std::string& msg) : DataError("checkpoint version: " + msg) {}
};

class CheckpointShapeError : public ConfigError {
public:
    explicit CheckpointShapeError(const std::string& msg) : ConfigError("checkpoint shape: " + msg) {}
};

class CheckpointMismatchError : public ConfigError {
public:
    explicit CheckpointMismatchError(const std::string& msg)
        : ConfigError("checkpoint mismatch: " + msg) {}
};

// What every checkpoint carries besides the weights.
struct CheckpointManifest {
    std::string kind;  // "denoiser" | "restorer" | "probe"
    uint32_t format_version = kCheckpointVersion;
    json config = json::object();  // module-specific construction config
    ScheduleDescriptor schedule;   // meaningful for kind == "denoiser"
    int64_t step = 0;              // training steps represented by the weights
    uint64_t seed = 0;             // seed of the run that produced them

    json to_json() const {
        return json{{"format_version", format_version},
                    {"kind", kind},
                    {"config", config},
                    {"schedule",
                     {{"T", schedule.T}, {"beta_start", schedule.beta_start}, {"beta_end", schedule.beta_end}}},
                    {"step", step},
                    {"seed", seed}};
    }

    static CheckpointManifest from_json(const json& j) {
        CheckpointManifest m;
        m.format_version = j.at("format_version").get<uint32_t>();
        m.kind = j.at("kind").get<std::string>();
        m.config = j.at("config");
        m.schedule.T = j.at("schedule").at("T").get<int>();
        m.schedule.beta_start = j.at("schedule").at("beta_start").get<double>();
        m.schedule.beta_end = j.at("schedule").at("beta_end").get<double>();
        m.step = j.at("step").get<int64_t>();
        m.seed = j.at("seed").get<uint64_t>();
        return m;
    }
};

struct CheckpointData {
    CheckpointManifest manifest;
    std::vector<std::pair<std::string, Tensor>> blobs;

    const Tensor* find(const std::string& name) const {
        for (const auto& [n, t] : blobs)
            if (n == name) return &t;
        return nullptr;
    }
};

namespace detail {

template <class T>
inline void put(std::string& out, const T& v) {
    out.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
inline T take(const std::string& buf, size_t& off) {
    if (off + sizeof(T) > buf.size()) throw CorruptCheckpointError("truncated file");
    T v;
    std::memcpy(&v, buf.data() + off, sizeof(T));
    off += sizeof(T);
    return v;
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, const CheckpointManifest& manifest,
                            const ParamRegistry& reg) {
    std::string out;
    out.append(kCheckpointMagic, sizeof(kCheckpointMagic));
    detail::put(out, kCheckpointVersion);
    std::string mj = manifest.to_json().dump();
    detail::put(out, static_cast<uint64_t>(mj.size()));
    out += mj;
    detail::put(out, static_cast<uint32_t>(reg.params().size()));
    for (size_t i = 0; i < reg.params().size(); ++i) {
        const std::string& name = reg.names()[i];
        const Tensor& t = reg.params()[i]->value;
        detail::put(out, static_cast<uint32_t>(name.size()));
        out += name;
        detail::put(out, static_cast<uint32_t>(t.shape().size()));
        for (int64_t d : t.shape()) detail::put(out, d);
        detail::put(out, static_cast<uint64_t>(t.numel()) * sizeof(float));
        out.append(reinterpret_cast<const char*>(t.data()), static_cast<size_t>(t.numel()) * sizeof(float));
    }
    detail::put(out, fnv1a64(out.data(), out.size()));
    write_file_atomic(path, out);
}

inline CheckpointData read_checkpoint(const std::filesystem::path& path) {
    std::string buf = read_file(path);
    if (buf.size() < sizeof(kCheckpointMagic) + sizeof(uint32_t) + sizeof(uint64_t))
        throw CorruptCheckpointError("file too small: " + path.string());
    if (std::memcmp(buf.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0)
        throw CorruptCheckpointError("bad magic: " + path.string());
    uint64_t stored;
    std::memcpy(&stored, buf.data() + buf.size() - sizeof(uint64_t), sizeof(uint64_t));
    if (fnv1a64(buf.data(), buf.size() - sizeof(uint64_t)) != stored)
        throw CorruptCheckpointError("checksum mismatch: " + path.string());

    size_t off = sizeof(kCheckpointMagic);
    uint32_t version = detail::take<uint32_t>(buf, off);
    if (version != kCheckpointVersion)
        throw CheckpointVersionError("file has format_version " + std::to_string(version) +
                                     ", this build reads " + std::to_string(kCheckpointVersion));
    uint64_t mlen = detail::take<uint64_t>(buf, off);
    if (off + mlen > buf.size()) throw CorruptCheckpointError("truncated manifest");
    CheckpointData out;
    try {
        out.manifest = CheckpointManifest::from_json(json::parse(buf.substr(off, mlen)));
    } catch (const json::exception& e) {
        throw CorruptCheckpointError(std::string("manifest: ") + e.what());
    }
    off += mlen;

    uint32_t n_params = detail::take<uint32_t>(buf, off);
    out.blobs.reserve(n_params);
    for (uint32_t i = 0; i < n_params; ++i) {
        uint32_t nlen = detail::take<uint32_t>(buf, off);
        if (off + nlen > buf.size()) throw CorruptCheckpointError("truncated name");
        std::string name = buf.substr(off, nlen);
        off += nlen;
        uint32_t ndim = detail::take<uint32_t>(buf, off);
        Shape shape(ndim);
        for (uint32_t d = 0; d < ndim; ++d) shape[d] = detail::take<int64_t>(buf, off);
        uint64_t dlen = detail::take<uint64_t>(buf, off);
        Tensor t(shape);
        if (static_cast<uint64_t>(t.numel()) * sizeof(float) != dlen)
            throw CorruptCheckpointError("blob size disagrees with shape for " + name);
        if (off + dlen > buf.size()) throw CorruptCheckpointError("truncated blob " + name);
        std::memcpy(t.data(), buf.data() + off, dlen);
        off += dlen;
        out.blobs.emplace_back(std::move(name), std::move(t));
    }
    return out;
}

// Copies blobs into an already constructed registry; the name set and every
// shape must agree exactly.
inline void fill_params(ParamRegistry& reg, const CheckpointData& data) {
    if (data.blobs.size() != reg.params().size())
        throw CheckpointShapeError("parameter count " + std::to_string(data.blobs.size()) +
                                   " in file vs " + std::to_string(reg.params().size()) + " in model");
    for (size_t i = 0; i < reg.params().size(); ++i) {
        const std::string& name = reg.names()[i];
        const Tensor* blob = data.find(name);
        if (!blob) throw CheckpointShapeError("missing parameter " + name);
        Tensor& dst = reg.params()[i]->value;
        if (blob->shape() != dst.shape())
            throw CheckpointShapeError("parameter " + name + " has shape " + shape_str(blob->shape()) +
                                       " in file vs " + shape_str(dst.shape()) + " in model");
        std::memcpy(dst.data(), blob->data(), static_cast<size_t>(dst.numel()) * sizeof(float));
    }
}

}  // namespace diffloss
