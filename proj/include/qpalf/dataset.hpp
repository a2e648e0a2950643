#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qpalf/codec.hpp"
#include "qpalf/frame.hpp"

namespace qpalf {

/// One training sample: a reconstructed patch, its original, and the QP the
/// reconstruction was coded at. Patches stay 8-bit; normalization to [0,1]
/// happens when batches are assembled.
struct PatchRecord {
    std::uint8_t qp = 0;
    std::vector<std::uint8_t> recon;
    std::vector<std::uint8_t> orig;
};

struct Dataset {
    int patch_size = 64;
    std::vector<int> qps;  // QPs the build coded at, ascending
    std::vector<PatchRecord> records;
};

/// Top-left anchored size x size grid with the given stride; no partial
/// patches. Per dimension the count is floor((dim-size)/stride)+1, or 0 when
/// the image is smaller than a patch. qp on the returned records is 0.
std::vector<PatchRecord> extract_patches(const FramePlane& recon, const FramePlane& orig,
                                         int size = 64, int stride = 16);

/// Keeps records with low <= PSNR(recon, orig) <= high (peak 255). Identical
/// patches (infinite PSNR) are always dropped. The optional counters receive
/// how many records fell below low and above high.
std::vector<PatchRecord> filter_by_psnr(const std::vector<PatchRecord>& records,
                                        double low = 20.0, double high = 50.0,
                                        std::size_t* rejected_low = nullptr,
                                        std::size_t* rejected_high = nullptr);

struct BuildRow {
    std::string image;
    int qp = 0;
    std::size_t extracted = 0;
    std::size_t kept = 0;
    std::size_t rejected_low = 0;
    std::size_t rejected_high = 0;
};

struct BuildReport {
    std::vector<BuildRow> rows;
    std::string csv() const;  // header image,qp,extracted,kept,rejected_low,rejected_high
};

/// Codes every readable image at every QP, extracts and filters patches, and
/// appends the survivors. Unreadable images are skipped with a warning on
/// stderr; zero total records is an error. codec.qp is overridden per list
/// entry. Deterministic given inputs.
Dataset build_dataset(const std::vector<std::string>& image_paths, const std::vector<int>& qps,
                      const CodecConfig& codec, int patch_size = 64, int stride = 16,
                      double psnr_low = 20.0, double psnr_high = 50.0,
                      BuildReport* report = nullptr);

/// Concatenates datasets of identical patch size and applies one seeded
/// uniform permutation over all records.
Dataset shuffle_mix(const std::vector<Dataset>& inputs, std::uint64_t seed);

/// Seeded disjoint split at the image level. Needs at least two entries so
/// both sides are non-empty; the train side gets round(ratio * n), clamped to
/// [1, n-1].
std::pair<std::vector<std::string>, std::vector<std::string>>
split_train_valid(const std::vector<std::string>& images, double ratio, std::uint64_t seed);

/// Binary dataset file: magic "QPDS0001", patch_size u32, record count u64,
/// QP list (u32 length, u8 entries), then per record qp u8 + recon + orig
/// bytes. Little-endian, bit-exact round trip.
void save_dataset(const Dataset& dataset, const std::string& path);
Dataset load_dataset(const std::string& path);

}  // namespace qpalf
