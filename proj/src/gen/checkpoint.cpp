#include "lac/gen/checkpoint.hpp"

#include "lac/error.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace lac {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void Checkpoint::put(const std::string& name, Matrix m) {
    if (has(name)) {
        throw ConfigError("checkpoint: duplicate tensor " + name);
    }
    tensors.emplace_back(name, std::move(m));
}

bool Checkpoint::has(const std::string& name) const {
    for (const auto& [n, m] : tensors) {
        if (n == name) {
            return true;
        }
    }
    return false;
}

const Matrix& Checkpoint::get(const std::string& name) const {
    for (const auto& [n, m] : tensors) {
        if (n == name) {
            return m;
        }
    }
    throw ConfigError("checkpoint: missing tensor " + name);
}

const std::string& Checkpoint::meta_at(const std::string& key) const {
    auto it = meta.find(key);
    if (it == meta.end()) {
        throw ConfigError("checkpoint: missing metadata key " + key);
    }
    return it->second;
}

void Checkpoint::put_params(const std::string& prefix, const ParamSet& p) {
    for (const auto& e : p.entries()) {
        put(prefix + e.name, e.value);
    }
}

ParamSet Checkpoint::params(const std::string& prefix) const {
    ParamSet p;
    for (const auto& [n, m] : tensors) {
        if (n.compare(0, prefix.size(), prefix) == 0) {
            p.add(n.substr(prefix.size()), m);
        }
    }
    return p;
}

namespace {

template <class T>
void put_raw(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

void put_str(std::string& out, const std::string& s) {
    put_raw<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
    out += s;
}

class Reader {
public:
    Reader(const std::string& b, std::size_t pos) : b_(b), pos_(pos) {}

    template <class T>
    T raw() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, b_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }

    std::string str() {
        const auto n = raw<std::uint32_t>();
        need(n);
        std::string s = b_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    void doubles(double* dst, std::size_t n) {
        if (n > (b_.size() - pos_) / sizeof(double)) {
            throw ConfigError("checkpoint: truncated tensor data");
        }
        std::memcpy(dst, b_.data() + pos_, n * sizeof(double));
        pos_ += n * sizeof(double);
    }

    [[nodiscard]] bool done() const { return pos_ == b_.size(); }

private:
    void need(std::size_t n) const {
        if (n > b_.size() - pos_) {
            throw ConfigError("checkpoint: truncated file");
        }
    }

    const std::string& b_;
    std::size_t pos_;
};

}  // namespace

std::string encode_checkpoint(const Checkpoint& c) {
    std::string out(kCheckpointMagic, 8);
    put_raw<std::uint32_t>(out, static_cast<std::uint32_t>(c.meta.size()));
    for (const auto& [k, v] : c.meta) {
        put_str(out, k);
        put_str(out, v);
    }
    put_raw<std::uint32_t>(out, static_cast<std::uint32_t>(c.tensors.size()));
    for (const auto& [name, m] : c.tensors) {
        put_str(out, name);
        put_raw<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
        put_raw<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
        out.append(reinterpret_cast<const char*>(m.data()), static_cast<std::size_t>(m.size()) * sizeof(double));
    }
    return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
    if (bytes.size() < 8 || bytes.compare(0, 8, kCheckpointMagic) != 0) {
        throw ConfigError("checkpoint: bad magic (expected LATCKPT1)");
    }
    Reader r(bytes, 8);
    Checkpoint c;
    const auto nmeta = r.raw<std::uint32_t>();
    for (std::uint32_t i = 0; i < nmeta; ++i) {
        std::string k = r.str();
        c.meta[k] = r.str();
    }
    const auto nt = r.raw<std::uint32_t>();
    for (std::uint32_t i = 0; i < nt; ++i) {
        std::string name = r.str();
        const auto rows = r.raw<std::uint64_t>();
        const auto cols = r.raw<std::uint64_t>();
        if (rows > (1ULL << 31) || cols > (1ULL << 31)) {
            throw ConfigError("checkpoint: implausible shape for " + name);
        }
        Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
        r.doubles(m.data(), static_cast<std::size_t>(m.size()));
        c.put(name, std::move(m));
    }
    if (!r.done()) {
        throw ConfigError("checkpoint: trailing bytes");
    }
    return c;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
    const std::string bytes = encode_checkpoint(c);
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) {
            throw Error("cannot open " + tmp.string() + " for writing");
        }
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        f.flush();
        if (!f) {
            throw Error("write failed: " + tmp.string());
        }
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw ConfigError("cannot open checkpoint " + path.string());
    }
    std::ostringstream ss;
    ss << f.rdbuf();
    return decode_checkpoint(ss.str());
}

}  // namespace lac
