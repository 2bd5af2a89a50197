#include "esn/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unordered_map>

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload is little-endian; big-endian hosts are unsupported");

namespace esn {

namespace {

template <typename T>
const char* dtype_name();
template <>
const char* dtype_name<float>() {
    return "f32";
}
template <>
const char* dtype_name<double>() {
    return "f64";
}

constexpr const char* kMagic = "ESNCKPT 1";

}  // namespace

template <typename T>
void save_checkpoint(const std::string& path, const NamedTensors<T>& tensors) {
    std::ostringstream header;
    header << kMagic << "\n" << tensors.size() << "\n";
    std::size_t offset = 0;
    for (const auto& [name, t] : tensors) {
        if (name.find_first_of(" \n\t") != std::string::npos) {
            throw DataError("checkpoint: tensor name '" + name + "' contains whitespace");
        }
        const Shape s = t.shape();
        header << name << " " << dtype_name<T>() << " " << s.b << " " << s.c << " " << s.h << " "
               << s.w << " " << offset << "\n";
        offset += t.data().size() * sizeof(T);
    }
    header << "DATA\n";

    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("checkpoint: cannot open '" + tmp + "' for writing");
        const std::string h = header.str();
        out.write(h.data(), static_cast<std::streamsize>(h.size()));
        for (const auto& [name, t] : tensors) {
            out.write(reinterpret_cast<const char*>(t.data().data()),
                      static_cast<std::streamsize>(t.data().size() * sizeof(T)));
        }
        if (!out) throw DataError("checkpoint: write failed for '" + tmp + "'");
    }
    std::filesystem::rename(tmp, path);
}

template <typename T>
NamedTensors<T> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("checkpoint: cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line) || line != kMagic) {
        throw DataError("checkpoint: bad magic in '" + path + "'");
    }
    std::size_t count = 0;
    if (!std::getline(in, line)) throw DataError("checkpoint: truncated header");
    count = std::stoull(line);

    struct Entry {
        std::string name;
        Shape shape;
        std::size_t offset;
    };
    std::vector<Entry> entries;
    entries.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        if (!std::getline(in, line)) throw DataError("checkpoint: truncated header");
        std::istringstream ls(line);
        Entry e;
        std::string dtype;
        if (!(ls >> e.name >> dtype >> e.shape.b >> e.shape.c >> e.shape.h >> e.shape.w >>
              e.offset)) {
            throw DataError("checkpoint: malformed header line '" + line + "'");
        }
        if (dtype != dtype_name<T>()) {
            throw DataError("checkpoint: entry '" + e.name + "' has dtype " + dtype +
                            ", expected " + dtype_name<T>());
        }
        entries.push_back(std::move(e));
    }
    if (!std::getline(in, line) || line != "DATA") {
        throw DataError("checkpoint: missing DATA marker");
    }
    const std::streampos data_start = in.tellg();

    NamedTensors<T> result;
    result.reserve(entries.size());
    for (const Entry& e : entries) {
        Tensor<T> t(e.shape);
        in.seekg(data_start + static_cast<std::streamoff>(e.offset));
        in.read(reinterpret_cast<char*>(t.data().data()),
                static_cast<std::streamsize>(t.data().size() * sizeof(T)));
        if (in.gcount() != static_cast<std::streamsize>(t.data().size() * sizeof(T))) {
            throw DataError("checkpoint: truncated payload for '" + e.name + "'");
        }
        result.emplace_back(e.name, std::move(t));
    }
    return result;
}

template <typename T>
void assign_named(NamedTensors<T>& dst, const NamedTensors<T>& src) {
    std::unordered_map<std::string, const Tensor<T>*> index;
    for (const auto& [name, t] : src) index[name] = &t;
    for (auto& [name, t] : dst) {
        auto it = index.find(name);
        if (it == index.end()) throw DataError("checkpoint: missing tensor '" + name + "'");
        if (!(it->second->shape() == t.shape())) {
            throw DataError("checkpoint: shape mismatch for '" + name + "': file has " +
                            it->second->shape().str() + ", model expects " + t.shape().str());
        }
        t.data() = it->second->data();
    }
}

template void save_checkpoint(const std::string&, const NamedTensors<float>&);
template void save_checkpoint(const std::string&, const NamedTensors<double>&);
template NamedTensors<float> load_checkpoint(const std::string&);
template NamedTensors<double> load_checkpoint(const std::string&);
template void assign_named(NamedTensors<float>&, const NamedTensors<float>&);
template void assign_named(NamedTensors<double>&, const NamedTensors<double>&);

}  // namespace esn
