#include "fluxattn/label_io.hpp"

#include <stdexcept>

#include "fluxattn/budget_oracle.hpp"
#include "fluxattn/io_util.hpp"

namespace fluxattn {

namespace {
constexpr char kScanMagic[4] = {'F', 'X', 'S', '1'};
constexpr char kLabelMagic[4] = {'F', 'X', 'L', '1'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kScanCols = 4 + kFeatureCount + 5 + 1;
constexpr std::uint32_t kLabelCols = 4 + kFeatureCount + 3;
} // namespace

void write_scan(const ScanDataset& ds, const std::string& path, std::uint64_t input_hash) {
    BinaryWriter bw(path);
    bw.magic(kScanMagic);
    bw.u32(kVersion);
    bw.u64(input_hash);
    bw.u64(ds.rows.size());
    bw.u32(kScanCols);
    for (const auto& r : ds.rows) {
        bw.f32(float(r.sample));
        bw.f32(float(r.layer));
        bw.f32(float(r.head));
        bw.f32(float(r.step));
        for (double f : r.features) bw.f32(float(f));
        for (float b : r.budgets) bw.f32(b);
        bw.f32(r.streaming);
    }
}

ScanDataset read_scan(const std::string& path, std::uint64_t* input_hash) {
    BinaryReader br(path);
    br.expect_magic(kScanMagic, "version-mismatch");
    if (br.u32() != kVersion) throw std::runtime_error("version-mismatch: scan file");
    const std::uint64_t hash = br.u64();
    if (input_hash) *input_hash = hash;
    const std::uint64_t rows = br.u64();
    if (br.u32() != kScanCols) throw std::runtime_error("version-mismatch: scan row width");
    ScanDataset ds;
    ds.rows.resize(rows);
    for (auto& r : ds.rows) {
        r.sample = std::uint32_t(br.f32());
        r.layer = std::uint32_t(br.f32());
        r.head = std::uint32_t(br.f32());
        r.step = std::uint32_t(br.f32());
        for (auto& f : r.features) f = double(br.f32());
        for (auto& b : r.budgets) b = br.f32();
        r.streaming = br.f32();
    }
    return ds;
}

void write_labels(const LabelDataset& ds, const std::string& path, std::uint64_t input_hash) {
    BinaryWriter bw(path);
    bw.magic(kLabelMagic);
    bw.u32(kVersion);
    bw.u64(input_hash);
    bw.u64(ds.rows.size());
    bw.u32(kLabelCols);
    for (const auto& r : ds.rows) {
        bw.f32(float(r.sample));
        bw.f32(float(r.layer));
        bw.f32(float(r.head));
        bw.f32(float(r.step));
        for (double f : r.features) bw.f32(float(f));
        bw.f32(r.bgt0);
        bw.f32(r.k);
        bw.f32(r.streaming);
    }
}

LabelDataset read_labels(const std::string& path, std::uint64_t* input_hash) {
    BinaryReader br(path);
    br.expect_magic(kLabelMagic, "version-mismatch");
    if (br.u32() != kVersion) throw std::runtime_error("version-mismatch: label file");
    const std::uint64_t hash = br.u64();
    if (input_hash) *input_hash = hash;
    const std::uint64_t rows = br.u64();
    if (br.u32() != kLabelCols) throw std::runtime_error("version-mismatch: label row width");
    LabelDataset ds;
    ds.rows.resize(rows);
    for (auto& r : ds.rows) {
        r.sample = std::uint32_t(br.f32());
        r.layer = std::uint32_t(br.f32());
        r.head = std::uint32_t(br.f32());
        r.step = std::uint32_t(br.f32());
        for (auto& f : r.features) f = double(br.f32());
        r.bgt0 = br.f32();
        r.k = br.f32();
        r.streaming = br.f32();
    }
    return ds;
}

LabelDataset fit_labels(const ScanDataset& scans, FitDiagnostics* diag) {
    LabelDataset out;
    out.rows.reserve(scans.rows.size());
    const std::array<int, 4> blks{16, 32, 64, 128};
    for (const auto& s : scans.rows) {
        std::array<std::pair<int, double>, 4> points;
        for (std::size_t i = 0; i < 4; ++i) points[i] = {blks[i], double(s.budgets[i + 1])};
        const FitResult fit =
            fit_curve(points, double(s.budgets[0]), s.streaming != 0.0f);
        LabelRow r;
        r.sample = s.sample;
        r.layer = s.layer;
        r.head = s.head;
        r.step = s.step;
        r.features = s.features;
        r.bgt0 = float(fit.props.bgt0);
        r.k = float(fit.props.k);
        r.streaming = s.streaming;
        out.rows.push_back(r);
        if (diag) {
            diag->free_intercept.push_back(fit.free_intercept);
            diag->max_abs_residual.push_back(fit.max_abs_residual);
            diag->anchor_gap.push_back(std::abs(fit.free_intercept - fit.props.bgt0));
        }
    }
    return out;
}

} // namespace fluxattn
