#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace vseg {

struct CaseRecord {
    std::string id;
    std::string patient;
    std::string volume_path;
    std::string mask_path;
    std::string center;
    // Optional complete ground truth, present for synthetic suites where the
    // referenced mask is deliberately partial.
    std::optional<std::string> full_mask_path;
};

/// Case list plus named split assignment. Split values are case ids.
struct DatasetManifest {
    std::vector<CaseRecord> cases;
    std::map<std::string, std::vector<std::string>> splits;

    const CaseRecord& find_case(const std::string& id) const;
    std::vector<const CaseRecord*> split_cases(const std::string& split) const;
    std::vector<std::string> patients() const;  // unique, in first-appearance order

    /// Validates id uniqueness and referenced-file existence.
    void validate(bool check_files) const;
};

DatasetManifest load_manifest(const std::string& path);
void save_manifest(const DatasetManifest& m, const std::string& path);

/// Patient-wise train/val/test assignment, deterministic for a fixed seed.
/// Ratios must be positive and sum to 1 (1e-9). When they do not divide the
/// patient count, leftover patients go to train first, then test, then val.
/// Throws when any split would end up empty.
DatasetManifest split_dataset(const DatasetManifest& manifest, std::array<double, 3> ratios,
                              std::uint64_t seed);

/// K-fold cross-validation manifests. The k test sets partition the patient
/// set; sizes differ by at most one. Each fold's train split is the rest.
std::vector<DatasetManifest> make_folds(const DatasetManifest& manifest, int k, std::uint64_t seed);

}  // namespace vseg
