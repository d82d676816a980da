#include "hidiff/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace hidiff {

namespace {

class Writer {
public:
    template <typename V>
    void pod(V v) {
        out_.append(reinterpret_cast<const char*>(&v), sizeof v);
    }
    void str(const std::string& s) {
        pod<uint64_t>(s.size());
        out_ += s;
    }
    void bytes(const void* p, size_t n) { out_.append(static_cast<const char*>(p), n); }
    std::string take() { return std::move(out_); }

private:
    std::string out_;
};

class Reader {
public:
    explicit Reader(const std::string& in) : in_(in) {}
    template <typename V>
    V pod() {
        V v;
        std::memcpy(&v, need(sizeof v), sizeof v);
        return v;
    }
    std::string str() {
        const auto n = pod<uint64_t>();
        return std::string(need(n), n);
    }
    const char* need(size_t n) {
        if (n > in_.size() - pos_) throw std::runtime_error("checkpoint truncated at byte " + std::to_string(pos_));
        const char* p = in_.data() + pos_;
        pos_ += n;
        return p;
    }
    bool done() const { return pos_ == in_.size(); }

private:
    const std::string& in_;
    size_t pos_ = 0;
};

template <typename T>
void write_tensor(Writer& w, const Tensor<T>& t) {
    w.pod<uint8_t>(std::is_same_v<T, float> ? 0 : 1);
    w.pod<uint32_t>(static_cast<uint32_t>(t.ndim()));
    for (int d : t.shape()) w.pod<int64_t>(d);
    w.bytes(t.data(), t.size() * sizeof(T));
}

template <typename T>
Tensor<T> read_tensor(Reader& r, uint32_t ndim) {
    Shape shape;
    for (uint32_t i = 0; i < ndim; ++i) {
        const auto d = r.pod<int64_t>();
        if (d < 0 || d > (int64_t(1) << 31)) throw std::runtime_error("checkpoint tensor has invalid dimension");
        shape.push_back(static_cast<int>(d));
    }
    Tensor<T> t(shape);
    std::memcpy(t.data(), r.need(t.size() * sizeof(T)), t.size() * sizeof(T));
    return t;
}

}  // namespace

const TensorRecord* Checkpoint::find(const std::string& name) const {
    for (const auto& r : records)
        if (r.name == name) return &r;
    return nullptr;
}

template <std::floating_point T>
void Checkpoint::add_params(const ParamStore<T>& store) {
    for (const auto& p : store.params()) records.push_back({"param/" + p.name, p.var.value()});
}

template <std::floating_point T>
size_t Checkpoint::load_params(ParamStore<T>& store, const std::string& prefix) const {
    size_t n = 0;
    for (auto& p : store.params()) {
        if (p.name.rfind(prefix, 0) != 0) continue;
        const TensorRecord* rec = find("param/" + p.name);
        if (!rec) throw std::runtime_error("checkpoint lacks parameter " + p.name);
        const auto* t = std::get_if<Tensor<T>>(&rec->value);
        if (!t) throw std::runtime_error("checkpoint parameter " + p.name + " has a different precision");
        if (!t->same_shape(p.var.value())) {
            throw std::runtime_error("checkpoint parameter " + p.name + " has shape " + shape_str(t->shape()) +
                                     ", model expects " + shape_str(p.var.shape()));
        }
        p.var.mutable_value() = *t;
        ++n;
    }
    return n;
}

template void Checkpoint::add_params(const ParamStore<float>&);
template void Checkpoint::add_params(const ParamStore<double>&);
template size_t Checkpoint::load_params(ParamStore<float>&, const std::string&) const;
template size_t Checkpoint::load_params(ParamStore<double>&, const std::string&) const;

std::string serialize(const Checkpoint& ck) {
    Writer w;
    w.bytes(kCheckpointMagic, sizeof kCheckpointMagic);
    w.pod<uint32_t>(kCheckpointVersion);
    w.pod<uint32_t>(ck.stage);
    w.pod<uint64_t>(ck.step);
    w.str(ck.config);
    w.str(ck.rng_state);
    w.pod<uint32_t>(static_cast<uint32_t>(ck.meta.size()));
    for (const auto& [k, v] : ck.meta) {
        w.str(k);
        w.str(v);
    }
    w.pod<uint64_t>(ck.records.size());
    for (const auto& rec : ck.records) {
        w.str(rec.name);
        std::visit([&](const auto& t) { write_tensor(w, t); }, rec.value);
    }
    return w.take();
}

Checkpoint deserialize(const std::string& bytes) {
    Reader r(bytes);
    if (bytes.size() < sizeof kCheckpointMagic || std::memcmp(r.need(8), kCheckpointMagic, 8) != 0) {
        throw std::runtime_error("not a checkpoint (bad magic)");
    }
    const auto version = r.pod<uint32_t>();
    if (version != kCheckpointVersion) {
        throw std::runtime_error("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                                 std::to_string(kCheckpointVersion) + ")");
    }
    Checkpoint ck;
    ck.stage = r.pod<uint32_t>();
    ck.step = r.pod<uint64_t>();
    ck.config = r.str();
    ck.rng_state = r.str();
    const auto n_meta = r.pod<uint32_t>();
    for (uint32_t i = 0; i < n_meta; ++i) {
        std::string k = r.str();
        ck.meta[k] = r.str();
    }
    const auto n = r.pod<uint64_t>();
    for (uint64_t i = 0; i < n; ++i) {
        TensorRecord rec;
        rec.name = r.str();
        const auto dtype = r.pod<uint8_t>();
        const auto ndim = r.pod<uint32_t>();
        if (dtype == 0) rec.value = read_tensor<float>(r, ndim);
        else if (dtype == 1) rec.value = read_tensor<double>(r, ndim);
        else throw std::runtime_error("checkpoint record " + rec.name + " has unknown dtype");
        ck.records.push_back(std::move(rec));
    }
    if (!r.done()) throw std::runtime_error("trailing bytes after checkpoint records");
    return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        const std::string bytes = serialize(ck);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw std::runtime_error("failed writing " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        return deserialize(ss.str());
    } catch (const std::runtime_error& e) {
        throw std::runtime_error(path.string() + ": " + e.what());
    }
}

}  // namespace hidiff
