#pragma once

// Binary checkpoints, little-endian:
//   "CCDN1" | version u32 | count u32 | per tensor: name_len u32, name, ndim u32, dims u32..., f64 data
//   | epochs_trained u32 | config_len u32 | config text
// The config echo is enough to rebuild the graph, so eval needs only the checkpoint.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "ccdn/backbone.hpp"
#include "ccdn/config.hpp"
#include "ccdn/errors.hpp"

namespace ccdn {

inline constexpr char checkpoint_magic[5] = {'C', 'C', 'D', 'N', '1'};
inline constexpr std::uint32_t checkpoint_version = 1;

namespace detail {

class ByteWriter {
public:
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    void f64(double d) {
        const auto v = std::bit_cast<std::uint64_t>(d);
        for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    void raw(const char* p, std::size_t n) { bytes_.insert(bytes_.end(), p, p + n); }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        raw(s.data(), s.size());
    }
    const std::vector<char>& bytes() const { return bytes_; }

private:
    std::vector<char> bytes_;
};

class ByteReader {
public:
    ByteReader(std::vector<char> bytes, std::string origin) : bytes_(std::move(bytes)), origin_(std::move(origin)) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }
    double f64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += 8;
        return std::bit_cast<double>(v);
    }
    std::string raw(std::size_t n) {
        need(n);
        std::string s(bytes_.data() + pos_, n);
        pos_ += n;
        return s;
    }
    std::string str() { return raw(u32()); }
    bool at_end() const { return pos_ == bytes_.size(); }
    const std::string& origin() const { return origin_; }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) throw ParseError(origin_ + ": truncated checkpoint");
    }
    std::vector<char> bytes_;
    std::string origin_;
    std::size_t pos_ = 0;
};

struct StoredTensor {
    std::string name;
    Shape dims;
    std::vector<double> values;
};

struct CheckpointFile {
    std::vector<StoredTensor> tensors;
    std::size_t epochs_trained = 0;
    std::string config_text;
};

inline CheckpointFile read_checkpoint_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open checkpoint " + path.string());
    ByteReader r(std::vector<char>(std::istreambuf_iterator<char>(in), {}), path.string());
    if (r.raw(sizeof checkpoint_magic) != std::string(checkpoint_magic, sizeof checkpoint_magic)) {
        throw ParseError(path.string() + ": bad magic, not a checkpoint");
    }
    if (const auto v = r.u32(); v != checkpoint_version) {
        throw ParseError(path.string() + ": unsupported checkpoint version " + std::to_string(v));
    }
    CheckpointFile f;
    const std::uint32_t count = r.u32();
    for (std::uint32_t k = 0; k < count; ++k) {
        StoredTensor t;
        t.name = r.str();
        const std::uint32_t ndim = r.u32();
        for (std::uint32_t i = 0; i < ndim; ++i) t.dims.push_back(r.u32());
        const std::size_t n = numel(t.dims);
        t.values.reserve(n);
        for (std::size_t i = 0; i < n; ++i) t.values.push_back(r.f64());
        f.tensors.push_back(std::move(t));
    }
    f.epochs_trained = r.u32();
    f.config_text = r.str();
    if (!r.at_end()) throw ParseError(path.string() + ": trailing bytes after checkpoint");
    return f;
}

}  // namespace detail

/// Writes to a temporary sibling and renames, so a crash never leaves a half-written checkpoint.
inline void save_checkpoint(ModelParams& m, const RunConfig& config, const std::filesystem::path& path) {
    detail::ByteWriter w;
    std::uint32_t count = 0;
    for_each_tensor(m, [&](const std::string&, Tensor&, bool) { ++count; });
    w.raw(checkpoint_magic, sizeof checkpoint_magic);
    w.u32(checkpoint_version);
    w.u32(count);
    for_each_tensor(m, [&](const std::string& name, Tensor& t, bool) {
        w.str(name);
        w.u32(static_cast<std::uint32_t>(t.rank()));
        for (std::size_t d : t.dims()) w.u32(static_cast<std::uint32_t>(d));
        for (double v : t.values()) w.f64(v);
    });
    w.u32(static_cast<std::uint32_t>(m.epochs_trained));
    w.str(to_text(config));

    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write checkpoint " + tmp.string());
        out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
        if (!out) throw std::runtime_error("short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

/// Loads tensors into an existing model. Every name and shape is checked before anything is
/// written, so on error `m` is untouched. Returns the stored config text.
inline std::string load_checkpoint_into(const std::filesystem::path& path, ModelParams& m) {
    const detail::CheckpointFile f = detail::read_checkpoint_file(path);
    std::vector<Tensor*> targets;
    std::size_t k = 0;
    for_each_tensor(m, [&](const std::string& name, Tensor& t, bool) {
        if (k >= f.tensors.size()) throw ParseError(path.string() + ": checkpoint lacks tensor " + name);
        const auto& s = f.tensors[k++];
        if (s.name != name) throw ParseError(path.string() + ": expected tensor " + name + ", found " + s.name);
        if (s.dims != t.dims()) {
            throw ShapeError(path.string() + ": tensor " + name + " has dims " + to_string(s.dims) + ", model expects " +
                             to_string(t.dims()));
        }
        targets.push_back(&t);
    });
    if (k != f.tensors.size()) throw ParseError(path.string() + ": unexpected tensor " + f.tensors[k].name);
    for (std::size_t i = 0; i < targets.size(); ++i) {
        auto dst = targets[i]->mutable_values();
        std::copy(f.tensors[i].values.begin(), f.tensors[i].values.end(), dst.begin());
    }
    m.epochs_trained = f.epochs_trained;
    return f.config_text;
}

struct Checkpoint {
    RunConfig config;
    ModelParams model;
};

/// Rebuilds the model from the config echo, then loads the stored tensors.
inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    const detail::CheckpointFile f = detail::read_checkpoint_file(path);
    Checkpoint c;
    c.config = parse_config_text(f.config_text, path.string() + " (config echo)");
    c.model = init_model(c.config.model, c.config.seed);
    load_checkpoint_into(path, c.model);
    return c;
}

}  // namespace ccdn
