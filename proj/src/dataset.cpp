#include "qpalf/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "qpalf/errors.hpp"
#include "qpalf/image_io.hpp"
#include "qpalf/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "dataset files are little-endian; big-endian hosts need byte swaps");

namespace qpalf {

std::vector<PatchRecord> extract_patches(const FramePlane& recon, const FramePlane& orig,
                                         int size, int stride) {
    if (!recon.same_size(orig)) {
        throw std::invalid_argument("extract_patches: plane dimensions differ");
    }
    if (size < 1 || stride < 1) {
        throw std::invalid_argument("extract_patches: size and stride must be positive");
    }
    std::vector<PatchRecord> out;
    if (recon.width < size || recon.height < size) return out;
    const int nx = (recon.width - size) / stride + 1;
    const int ny = (recon.height - size) / stride + 1;
    out.reserve(static_cast<std::size_t>(nx) * ny);
    for (int by = 0; by < ny; ++by) {
        for (int bx = 0; bx < nx; ++bx) {
            const int x0 = bx * stride, y0 = by * stride;
            PatchRecord rec;
            rec.recon.resize(static_cast<std::size_t>(size) * size);
            rec.orig.resize(rec.recon.size());
            for (int y = 0; y < size; ++y) {
                std::memcpy(rec.recon.data() + static_cast<std::size_t>(y) * size,
                            recon.samples.data() + static_cast<std::size_t>(y0 + y) * recon.width + x0,
                            static_cast<std::size_t>(size));
                std::memcpy(rec.orig.data() + static_cast<std::size_t>(y) * size,
                            orig.samples.data() + static_cast<std::size_t>(y0 + y) * orig.width + x0,
                            static_cast<std::size_t>(size));
            }
            out.push_back(std::move(rec));
        }
    }
    return out;
}

namespace {

// PSNR of one record; +inf for identical patches.
double patch_psnr(const PatchRecord& rec) {
    std::uint64_t acc = 0;
    for (std::size_t i = 0; i < rec.recon.size(); ++i) {
        const std::int64_t d = static_cast<std::int64_t>(rec.recon[i]) - rec.orig[i];
        acc += static_cast<std::uint64_t>(d * d);
    }
    if (acc == 0) return std::numeric_limits<double>::infinity();
    const double m = static_cast<double>(acc) / static_cast<double>(rec.recon.size());
    return 10.0 * std::log10(255.0 * 255.0 / m);
}

}  // namespace

std::vector<PatchRecord> filter_by_psnr(const std::vector<PatchRecord>& records, double low,
                                        double high, std::size_t* rejected_low,
                                        std::size_t* rejected_high) {
    std::vector<PatchRecord> kept;
    std::size_t n_low = 0, n_high = 0;
    for (const auto& rec : records) {
        const double p = patch_psnr(rec);
        if (p < low) {
            ++n_low;
        } else if (p > high) {
            ++n_high;
        } else {
            kept.push_back(rec);
        }
    }
    if (rejected_low) *rejected_low = n_low;
    if (rejected_high) *rejected_high = n_high;
    return kept;
}

std::string BuildReport::csv() const {
    std::ostringstream os;
    os << "image,qp,extracted,kept,rejected_low,rejected_high\n";
    for (const auto& r : rows) {
        os << r.image << "," << r.qp << "," << r.extracted << "," << r.kept << ","
           << r.rejected_low << "," << r.rejected_high << "\n";
    }
    return os.str();
}

Dataset build_dataset(const std::vector<std::string>& image_paths, const std::vector<int>& qps,
                      const CodecConfig& codec, int patch_size, int stride, double psnr_low,
                      double psnr_high, BuildReport* report) {
    if (image_paths.empty()) throw DatasetError("dataset build: no input images");
    if (qps.empty()) throw DatasetError("dataset build: empty QP list");

    Dataset out;
    out.patch_size = patch_size;
    out.qps = qps;
    std::sort(out.qps.begin(), out.qps.end());
    out.qps.erase(std::unique(out.qps.begin(), out.qps.end()), out.qps.end());

    for (const auto& path : image_paths) {
        FramePlane orig;
        try {
            orig = load_pgm(path);
        } catch (const IoError& e) {
            std::cerr << "warning: skipping '" << path << "': " << e.what() << "\n";
            continue;
        }
        if (orig.width < patch_size || orig.height < patch_size) {
            std::cerr << "warning: '" << path << "' is smaller than one " << patch_size << "x"
                      << patch_size << " patch, no records extracted\n";
        }
        for (int qp : out.qps) {
            CodecConfig cfg = codec;
            cfg.qp = qp;
            const FramePlane recon = encode_decode(orig, cfg);
            auto records = extract_patches(recon, orig, patch_size, stride);
            BuildRow row;
            row.image = path;
            row.qp = qp;
            row.extracted = records.size();
            auto kept = filter_by_psnr(records, psnr_low, psnr_high, &row.rejected_low,
                                       &row.rejected_high);
            row.kept = kept.size();
            for (auto& rec : kept) {
                rec.qp = static_cast<std::uint8_t>(qp);
                out.records.push_back(std::move(rec));
            }
            if (report) report->rows.push_back(std::move(row));
        }
    }
    if (out.records.empty()) {
        throw DatasetError("dataset build: zero records survived extraction and filtering");
    }
    return out;
}

Dataset shuffle_mix(const std::vector<Dataset>& inputs, std::uint64_t seed) {
    if (inputs.empty()) throw std::invalid_argument("shuffle_mix: no input datasets");
    Dataset out;
    out.patch_size = inputs[0].patch_size;
    std::set<int> qps;
    std::size_t total = 0;
    for (const auto& d : inputs) {
        if (d.patch_size != out.patch_size) {
            throw std::invalid_argument("shuffle_mix: patch size mismatch (" +
                                        std::to_string(d.patch_size) + " vs " +
                                        std::to_string(out.patch_size) + ")");
        }
        qps.insert(d.qps.begin(), d.qps.end());
        total += d.records.size();
    }
    out.qps.assign(qps.begin(), qps.end());
    out.records.reserve(total);
    for (const auto& d : inputs) {
        out.records.insert(out.records.end(), d.records.begin(), d.records.end());
    }
    Rng rng(seed);
    rng.shuffle(out.records);
    return out;
}

std::pair<std::vector<std::string>, std::vector<std::string>>
split_train_valid(const std::vector<std::string>& images, double ratio, std::uint64_t seed) {
    if (images.size() < 2) {
        throw std::invalid_argument("split: need at least 2 images for a non-empty split");
    }
    if (!(ratio > 0.0 && ratio < 1.0)) {
        throw std::invalid_argument("split: ratio must be in (0,1)");
    }
    std::vector<std::string> shuffled = images;
    Rng rng(seed);
    rng.shuffle(shuffled);
    const auto n = static_cast<std::int64_t>(shuffled.size());
    std::int64_t n_train = std::llround(ratio * static_cast<double>(n));
    n_train = std::clamp<std::int64_t>(n_train, 1, n - 1);
    std::vector<std::string> train(shuffled.begin(), shuffled.begin() + n_train);
    std::vector<std::string> valid(shuffled.begin() + n_train, shuffled.end());
    return {std::move(train), std::move(valid)};
}

namespace {

constexpr char kMagic[8] = {'Q', 'P', 'D', 'S', '0', '0', '0', '1'};

template <typename T>
void write_pod(std::ofstream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

template <typename T>
T read_pod(std::ifstream& in, const std::string& path, const char* what) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (in.gcount() != sizeof(v)) {
        throw TruncatedError("'" + path + "': missing " + std::string(what));
    }
    return v;
}

}  // namespace

void save_dataset(const Dataset& dataset, const std::string& path) {
    if (dataset.patch_size < 1) throw std::invalid_argument("save_dataset: bad patch size");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out.write(kMagic, sizeof(kMagic));
    write_pod(out, static_cast<std::uint32_t>(dataset.patch_size));
    write_pod(out, static_cast<std::uint64_t>(dataset.records.size()));
    write_pod(out, static_cast<std::uint32_t>(dataset.qps.size()));
    for (int qp : dataset.qps) write_pod(out, static_cast<std::uint8_t>(qp));
    const std::size_t patch_bytes =
        static_cast<std::size_t>(dataset.patch_size) * dataset.patch_size;
    for (const auto& rec : dataset.records) {
        if (rec.recon.size() != patch_bytes || rec.orig.size() != patch_bytes) {
            throw std::invalid_argument("save_dataset: record patch size mismatch");
        }
        write_pod(out, rec.qp);
        out.write(reinterpret_cast<const char*>(rec.recon.data()),
                  static_cast<std::streamsize>(patch_bytes));
        out.write(reinterpret_cast<const char*>(rec.orig.data()),
                  static_cast<std::streamsize>(patch_bytes));
    }
    out.flush();
    if (!out) throw IoError("write failed for '" + path + "'");
}

Dataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for reading");

    char magic[8];
    in.read(magic, sizeof(magic));
    if (in.gcount() != sizeof(magic)) throw TruncatedError("'" + path + "': missing magic");
    if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw FormatError("'" + path + "' is not a QPDS0001 dataset file");
    }

    Dataset out;
    out.patch_size = static_cast<int>(read_pod<std::uint32_t>(in, path, "patch size"));
    if (out.patch_size < 1 || out.patch_size > 4096) {
        throw FormatError("'" + path + "': implausible patch size " +
                          std::to_string(out.patch_size));
    }
    const std::uint64_t count = read_pod<std::uint64_t>(in, path, "record count");
    const std::uint32_t n_qps = read_pod<std::uint32_t>(in, path, "QP list length");
    for (std::uint32_t i = 0; i < n_qps; ++i) {
        out.qps.push_back(read_pod<std::uint8_t>(in, path, "QP list entry"));
    }

    const std::size_t patch_bytes =
        static_cast<std::size_t>(out.patch_size) * out.patch_size;
    out.records.resize(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        auto& rec = out.records[i];
        rec.qp = read_pod<std::uint8_t>(in, path, "record qp");
        rec.recon.resize(patch_bytes);
        rec.orig.resize(patch_bytes);
        in.read(reinterpret_cast<char*>(rec.recon.data()),
                static_cast<std::streamsize>(patch_bytes));
        if (in.gcount() != static_cast<std::streamsize>(patch_bytes)) {
            throw TruncatedError("'" + path + "': record " + std::to_string(i) + " truncated");
        }
        in.read(reinterpret_cast<char*>(rec.orig.data()),
                static_cast<std::streamsize>(patch_bytes));
        if (in.gcount() != static_cast<std::streamsize>(patch_bytes)) {
            throw TruncatedError("'" + path + "': record " + std::to_string(i) + " truncated");
        }
    }
    in.peek();
    if (!in.eof()) throw FormatError("'" + path + "': trailing bytes after last record");
    return out;
}

}  // namespace qpalf
