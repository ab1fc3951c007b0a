#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "fluxattn/features.hpp"

namespace fluxattn {

/// One oracle-scanned row: raw features plus the minimum budgets at the five
/// labeling granularities and the streaming flag (pre-fit stage).
struct ScanRow {
    std::uint32_t sample = 0;
    std::uint32_t layer = 0;
    std::uint32_t head = 0;
    std::uint32_t step = 0;
    FeatureVector features{};
    std::array<float, 5> budgets{}; // at blk {1, 16, 32, 64, 128}
    float streaming = 0.0f;
};

struct ScanDataset {
    std::vector<ScanRow> rows;
};

/// One training row: raw features plus the fitted (bgt0, k, s) labels.
struct LabelRow {
    std::uint32_t sample = 0;
    std::uint32_t layer = 0;
    std::uint32_t head = 0;
    std::uint32_t step = 0;
    FeatureVector features{};
    float bgt0 = 0.0f;
    float k = 0.0f;
    float streaming = 0.0f;
};

struct LabelDataset {
    std::vector<LabelRow> rows;
};

// FXS1 scan file: magic | version u32 | input_hash u64 | rows u64 | cols u32 (= 51)
// row: sample, layer, head, step, 41 features, 5 budgets, streaming (all f32)
void write_scan(const ScanDataset& ds, const std::string& path, std::uint64_t input_hash = 0);
ScanDataset read_scan(const std::string& path, std::uint64_t* input_hash = nullptr);

// FXL1 label file: magic | version u32 | input_hash u64 | rows u64 | cols u32 (= 48)
// row: sample, layer, head, step, 41 features, bgt0, k, streaming (all f32)
void write_labels(const LabelDataset& ds, const std::string& path, std::uint64_t input_hash = 0);
LabelDataset read_labels(const std::string& path, std::uint64_t* input_hash = nullptr);

/// Per-row Eq-1 fit over the {16,32,64,128} budgets with bgt0 anchored to the
/// blk=1 budget. Returns per-row fit diagnostics through `diag` when set.
struct FitDiagnostics {
    std::vector<double> free_intercept;
    std::vector<double> max_abs_residual;
    std::vector<double> anchor_gap; // |free intercept - measured bgt0|
};

LabelDataset fit_labels(const ScanDataset& scans, FitDiagnostics* diag = nullptr);

} // namespace fluxattn
