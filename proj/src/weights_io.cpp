#include "qpalf/weights_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "qpalf/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "weight files are little-endian; big-endian hosts need byte swaps");

namespace qpalf {

namespace {

constexpr char kMagic[8] = {'Q', 'P', 'A', 'L', 'F', 'W', 'T', '1'};

std::string join_ints(const std::vector<int>& v) {
    std::ostringstream os;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) os << ",";
        os << v[i];
    }
    return os.str();
}

std::string join_dims(const std::vector<std::int64_t>& v) {
    std::ostringstream os;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) os << ",";
        os << v[i];
    }
    return os.str();
}

std::vector<std::int64_t> parse_dims(const std::string& s) {
    std::vector<std::int64_t> out;
    std::istringstream is(s);
    std::string tok;
    while (std::getline(is, tok, ',')) {
        try {
            out.push_back(std::stoll(tok));
        } catch (const std::exception&) {
            throw FormatError("weight manifest: bad shape token '" + tok + "'");
        }
    }
    if (out.empty()) throw FormatError("weight manifest: empty shape");
    return out;
}

std::string encoding_name(QpEncoding e) {
    return e == QpEncoding::ONE_HOT_RANGE ? "range" : "list";
}

}  // namespace

void save_weights(const QpalfWeights<float>& weights, const std::string& path) {
    const auto& cfg = weights.config;
    cfg.validate();

    std::ostringstream manifest;
    manifest << "version 1\n";
    manifest << "channels " << cfg.channels << "\n";
    manifest << "rfa_count " << cfg.rfa_count << "\n";
    manifest << "variant " << variant_name(cfg.variant) << "\n";
    manifest << "qp_encoding " << encoding_name(cfg.qp_domain.encoding) << "\n";
    manifest << "qps " << join_ints(cfg.qp_domain.qps) << "\n";

    std::uint64_t offset = 0;
    for (const auto& [name, t] : weights.params.items()) {
        manifest << "tensor " << name << " " << join_dims(t.shape()) << " " << offset << "\n";
        offset += static_cast<std::uint64_t>(t.numel()) * 4;
    }
    const std::string text = manifest.str();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out.write(kMagic, sizeof(kMagic));
    const std::uint32_t len = static_cast<std::uint32_t>(text.size());
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, t] : weights.params.items()) {
        out.write(reinterpret_cast<const char*>(t.data().data()),
                  static_cast<std::streamsize>(t.numel()) * 4);
    }
    out.flush();
    if (!out) throw IoError("write failed for '" + path + "'");
}

QpalfWeights<float> load_weights(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for reading");

    char magic[8];
    in.read(magic, sizeof(magic));
    if (in.gcount() != sizeof(magic)) throw TruncatedError("'" + path + "': missing magic");
    if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw FormatError("'" + path + "' is not a QPALFWT1 weight file");
    }

    std::uint32_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    if (in.gcount() != sizeof(len)) throw TruncatedError("'" + path + "': missing manifest length");
    std::string text(len, '\0');
    in.read(text.data(), len);
    if (in.gcount() != static_cast<std::streamsize>(len)) {
        throw TruncatedError("'" + path + "': manifest shorter than declared");
    }

    NetworkConfig cfg;
    cfg.qp_domain.qps.clear();
    struct Record {
        std::string name;
        std::vector<std::int64_t> shape;
        std::uint64_t offset;
    };
    std::vector<Record> records;
    bool saw_version = false;

    std::istringstream ms(text);
    std::string line;
    while (std::getline(ms, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "version") {
            int v = 0;
            ls >> v;
            if (v != 1) throw FormatError("'" + path + "': unsupported weight format version");
            saw_version = true;
        } else if (key == "channels") {
            ls >> cfg.channels;
        } else if (key == "rfa_count") {
            ls >> cfg.rfa_count;
        } else if (key == "variant") {
            std::string v;
            ls >> v;
            cfg.variant = parse_variant(v);
        } else if (key == "qp_encoding") {
            std::string v;
            ls >> v;
            if (v == "list") {
                cfg.qp_domain.encoding = QpEncoding::ONE_HOT_LIST;
            } else if (v == "range") {
                cfg.qp_domain.encoding = QpEncoding::ONE_HOT_RANGE;
            } else {
                throw FormatError("'" + path + "': unknown qp_encoding '" + v + "'");
            }
        } else if (key == "qps") {
            std::string v;
            ls >> v;
            for (std::int64_t q : parse_dims(v)) cfg.qp_domain.qps.push_back(static_cast<int>(q));
        } else if (key == "tensor") {
            Record r;
            std::string shape_s;
            ls >> r.name >> shape_s >> r.offset;
            if (ls.fail()) throw FormatError("'" + path + "': malformed tensor record '" + line + "'");
            r.shape = parse_dims(shape_s);
            records.push_back(std::move(r));
        } else {
            throw FormatError("'" + path + "': unknown manifest key '" + key + "'");
        }
        if (ls.fail()) throw FormatError("'" + path + "': malformed manifest line '" + line + "'");
    }
    if (!saw_version) throw FormatError("'" + path + "': manifest lacks a version line");
    try {
        cfg.validate();
    } catch (const ConfigError& e) {
        throw FormatError("'" + path + "': manifest config invalid: " + e.what());
    }

    // The tensor list must be exactly the topology the config implies, in
    // canonical order with contiguous offsets.
    QpalfWeights<float> expected = init_weights<float>(cfg, 0);
    const auto& items = expected.params.items();
    if (records.size() != items.size()) {
        throw FormatError("'" + path + "': manifest lists " + std::to_string(records.size()) +
                          " tensors, topology has " + std::to_string(items.size()));
    }
    std::uint64_t offset = 0;
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (records[i].name != items[i].first) {
            throw FormatError("'" + path + "': tensor " + std::to_string(i) + " is '" +
                              records[i].name + "', expected '" + items[i].first + "'");
        }
        if (records[i].shape != items[i].second.shape()) {
            throw FormatError("'" + path + "': tensor '" + records[i].name + "' has shape " +
                              join_dims(records[i].shape) + ", expected " +
                              join_dims(items[i].second.shape()));
        }
        if (records[i].offset != offset) {
            throw FormatError("'" + path + "': tensor '" + records[i].name +
                              "' offset out of order");
        }
        offset += static_cast<std::uint64_t>(items[i].second.numel()) * 4;
    }

    QpalfWeights<float> out;
    out.config = cfg;
    for (const auto& [name, proto] : items) {
        std::vector<float> data(static_cast<std::size_t>(proto.numel()));
        in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size()) * 4);
        if (in.gcount() != static_cast<std::streamsize>(data.size() * 4)) {
            throw TruncatedError("'" + path + "': blob shorter than manifest declares");
        }
        out.params.add(name, Tensor<float>::from_data(proto.shape(), std::move(data), true));
    }
    in.peek();
    if (!in.eof()) throw FormatError("'" + path + "': trailing bytes after weight blob");
    return out;
}

QpalfWeights<float> load_weights(const std::string& path, const NetworkConfig& expected) {
    QpalfWeights<float> w = load_weights(path);
    if (!(w.config == expected)) {
        throw ConfigMismatchError("'" + path + "' holds a " + variant_name(w.config.variant) +
                                  " C=" + std::to_string(w.config.channels) +
                                  " D=" + std::to_string(w.config.rfa_count) +
                                  " model, which does not match the requested configuration");
    }
    return w;
}

}  // namespace qpalf
