#include "osteo/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

namespace osteo {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr std::uint32_t kMaxRank = 8;

struct Entry {
    std::string name;
    std::vector<std::uint32_t> dims;
    DType dtype;
    std::string payload;
};

std::size_t dtype_size(DType t) {
    switch (t) {
    case DType::f32: return 4;
    case DType::f64: return 8;
    case DType::u8: return 1;
    case DType::u64: return 8;
    }
    return 0;
}

class Writer {
public:
    void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
    void u32(std::uint32_t v) { raw(&v, sizeof v); }
    void u64(std::uint64_t v) { raw(&v, sizeof v); }
    void raw(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }

    void entry(const std::string& name, const Shape& shape, DType dtype, const void* data) {
        u32(static_cast<std::uint32_t>(name.size()));
        raw(name.data(), name.size());
        u32(static_cast<std::uint32_t>(shape.size()));
        for (auto d : shape) u32(static_cast<std::uint32_t>(d));
        u8(static_cast<std::uint8_t>(dtype));
        raw(data, shape_numel(shape) * dtype_size(dtype));
    }

    std::string take() { return std::move(out_); }

private:
    std::string out_;
};

class Reader {
public:
    explicit Reader(std::string_view bytes) : bytes_(bytes) {}

    std::size_t remaining() const { return bytes_.size() - pos_; }

    void need(std::size_t n, const std::string& what) {
        if (remaining() < n) {
            throw CheckpointError("truncated checkpoint: " + what + " needs " + std::to_string(n) + " bytes, " +
                                  std::to_string(remaining()) + " left");
        }
    }
    std::string_view take(std::size_t n, const std::string& what) {
        need(n, what);
        auto s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::uint32_t u32(const std::string& what) {
        std::uint32_t v;
        std::memcpy(&v, take(4, what).data(), 4);
        return v;
    }
    std::uint64_t u64(const std::string& what) {
        std::uint64_t v;
        std::memcpy(&v, take(8, what).data(), 8);
        return v;
    }
    std::uint8_t u8(const std::string& what) { return static_cast<std::uint8_t>(take(1, what)[0]); }

private:
    std::string_view bytes_;
    std::size_t pos_ = 0;
};

Entry read_entry(Reader& r, std::uint32_t index) {
    Entry e;
    const std::string where = "tensor #" + std::to_string(index);
    const auto name_len = r.u32(where + " name length");
    if (name_len == 0 || name_len > 4096) {
        throw CheckpointError("corrupt checkpoint: " + where + " has name length " + std::to_string(name_len));
    }
    e.name = std::string(r.take(name_len, where + " name"));
    const std::string tensor = "tensor '" + e.name + "'";
    const auto rank = r.u32(tensor + " rank");
    if (rank == 0 || rank > kMaxRank) {
        throw CheckpointError("corrupt checkpoint: " + tensor + " has rank " + std::to_string(rank));
    }
    std::uint64_t count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
        const auto d = r.u32(tensor + " dims");
        if (d == 0) throw CheckpointError("corrupt checkpoint: " + tensor + " has a zero dimension");
        e.dims.push_back(d);
        count *= d;
        if (count > (std::uint64_t{1} << 40)) {
            throw CheckpointError("corrupt checkpoint: " + tensor + " declares an implausible element count");
        }
    }
    const auto tag = r.u8(tensor + " dtype");
    if (tag < 1 || tag > 4) {
        throw CheckpointError("corrupt checkpoint: " + tensor + " has unknown dtype tag " + std::to_string(tag));
    }
    e.dtype = static_cast<DType>(tag);
    const std::uint64_t bytes = count * dtype_size(e.dtype);
    if (bytes > r.remaining()) {
        throw CheckpointError("corrupt checkpoint: " + tensor + " payload of " + std::to_string(bytes) +
                              " bytes exceeds the remaining " + std::to_string(r.remaining()) +
                              " (bad dims or truncated file)");
    }
    e.payload = std::string(r.take(static_cast<std::size_t>(bytes), tensor + " payload"));
    return e;
}

Shape to_shape(const std::vector<std::uint32_t>& dims) { return Shape(dims.begin(), dims.end()); }

std::vector<float> as_floats(const Entry& e) {
    if (e.dtype != DType::f32) throw CheckpointError("tensor '" + e.name + "' must be float32");
    std::vector<float> v(e.payload.size() / 4);
    std::memcpy(v.data(), e.payload.data(), e.payload.size());
    return v;
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ck) {
    const std::string config = ck.params.config.canonical();
    Writer w;
    w.raw(kCheckpointMagic.data(), kCheckpointMagic.size());
    const std::size_t count = 4 + ck.params.parameters.size() + ck.params.buffers.size() + ck.optimizer.momentum.size();
    w.u32(static_cast<std::uint32_t>(count));
    w.entry("config", {config.size()}, DType::u8, config.data());
    const std::uint64_t epoch = static_cast<std::uint64_t>(ck.epoch);
    w.entry("meta.epoch", {1}, DType::u64, &epoch);
    w.entry("meta.best_val_accuracy", {1}, DType::f64, &ck.best_val_accuracy);
    const std::string rng = ck.rng_state.empty() ? std::string(" ") : ck.rng_state;
    w.entry("meta.rng", {rng.size()}, DType::u8, rng.data());
    for (const auto& [name, t] : ck.params.parameters) w.entry("param/" + name, t.shape(), DType::f32, t.data().data());
    for (const auto& [name, t] : ck.params.buffers) w.entry("buffer/" + name, t.shape(), DType::f32, t.data().data());
    for (const auto& [name, m] : ck.optimizer.momentum) {
        w.entry("momentum/" + name, {m.size()}, DType::f32, m.data());
    }
    w.u64(config_hash(ck.params.config));
    return w.take();
}

Checkpoint deserialize_checkpoint(std::string_view bytes, HashPolicy policy, std::vector<std::string>* warnings) {
    Reader r(bytes);
    if (bytes.size() < kCheckpointMagic.size() || bytes.substr(0, kCheckpointMagic.size()) != kCheckpointMagic) {
        throw CheckpointError("not a checkpoint: magic/version mismatch (expected OSTEOCKPT1)");
    }
    r.take(kCheckpointMagic.size(), "magic");
    const auto count = r.u32("tensor count");
    if (count > 1000000) throw CheckpointError("corrupt checkpoint: implausible tensor count " + std::to_string(count));
    std::map<std::string, Entry> entries;
    std::string previous;
    // A wrong dimension shifts every later record, so framing errors also
    // name the record just read.
    auto framed = [&](auto&& step) {
        try {
            return step();
        } catch (const CheckpointError& e) {
            if (previous.empty()) throw;
            throw CheckpointError(std::string(e.what()) + " (after tensor '" + previous + "'; its dims may be wrong)");
        }
    };
    for (std::uint32_t i = 0; i < count; ++i) {
        auto e = framed([&] { return read_entry(r, i); });
        if (entries.count(e.name)) throw CheckpointError("corrupt checkpoint: duplicate tensor '" + e.name + "'");
        previous = e.name;
        entries.emplace(e.name, std::move(e));
    }
    const auto stored_hash = framed([&] {
        const auto h = r.u64("trailing config hash");
        if (r.remaining() != 0) {
            throw CheckpointError("corrupt checkpoint: " + std::to_string(r.remaining()) + " trailing bytes");
        }
        return h;
    });

    auto get = [&](const std::string& name) -> const Entry& {
        auto it = entries.find(name);
        if (it == entries.end()) throw CheckpointError("checkpoint is missing tensor '" + name + "'");
        return it->second;
    };

    Checkpoint ck;
    const auto& cfg = get("config");
    if (cfg.dtype != DType::u8) throw CheckpointError("tensor 'config' must be bytes");
    NetworkConfig config;
    try {
        config = NetworkConfig::from_canonical(cfg.payload);
    } catch (const Error& e) {
        throw CheckpointError(std::string("checkpoint config is invalid: ") + e.what());
    }
    if (config_hash(config) != stored_hash) {
        const std::string msg = "checkpoint config hash mismatch";
        if (policy == HashPolicy::fail) throw CheckpointError(msg);
        if (warnings) warnings->push_back(msg);
    }

    const auto& epoch = get("meta.epoch");
    if (epoch.dtype != DType::u64 || epoch.payload.size() != 8) throw CheckpointError("tensor 'meta.epoch' malformed");
    std::uint64_t e64;
    std::memcpy(&e64, epoch.payload.data(), 8);
    ck.epoch = static_cast<int>(e64);
    const auto& best = get("meta.best_val_accuracy");
    if (best.dtype != DType::f64 || best.payload.size() != 8) {
        throw CheckpointError("tensor 'meta.best_val_accuracy' malformed");
    }
    std::memcpy(&ck.best_val_accuracy, best.payload.data(), 8);
    const auto& rng = get("meta.rng");
    if (rng.dtype != DType::u8) throw CheckpointError("tensor 'meta.rng' must be bytes");
    ck.rng_state = rng.payload == " " ? std::string() : rng.payload;

    ck.params.config = config;
    std::set<std::string> expected{"config", "meta.epoch", "meta.best_val_accuracy", "meta.rng"};
    for (const auto& spec : describe_parameters(config)) {
        const std::string key = (spec.trainable ? "param/" : "buffer/") + spec.name;
        expected.insert(key);
        const auto& entry = get(key);
        if (to_shape(entry.dims) != spec.shape) {
            throw CheckpointError("tensor '" + key + "' has shape " + shape_string(to_shape(entry.dims)) +
                                  ", config expects " + shape_string(spec.shape));
        }
        Tensor<float> t(spec.shape, as_floats(entry));
        if (spec.trainable) {
            t.set_requires_grad(true);
            ck.params.parameters.emplace(spec.name, std::move(t));
        } else {
            ck.params.buffers.emplace(spec.name, std::move(t));
        }
        if (spec.trainable) {
            auto it = entries.find("momentum/" + spec.name);
            if (it != entries.end()) {
                expected.insert(it->first);
                auto m = as_floats(it->second);
                if (m.size() != shape_numel(spec.shape)) {
                    throw CheckpointError("tensor '" + it->first + "' does not match its parameter size");
                }
                ck.optimizer.momentum.emplace(spec.name, std::move(m));
            }
        }
    }
    for (const auto& [name, e] : entries) {
        if (!expected.count(name)) throw CheckpointError("checkpoint has unexpected tensor '" + name + "'");
    }
    return ck;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
    const auto bytes = serialize_checkpoint(checkpoint);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path, HashPolicy policy, std::vector<std::string>* warnings) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return deserialize_checkpoint(bytes, policy, warnings);
    } catch (const CheckpointError& e) {
        throw CheckpointError(path.string() + ": " + e.what());
    }
}

}  // namespace osteo
