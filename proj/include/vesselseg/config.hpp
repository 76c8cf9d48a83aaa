#pragma once

#include <map>
#include <string>
#include <vector>

#include "vesselseg/preprocess.hpp"
#include "vesselseg/trainer.hpp"

namespace vseg {

enum class Provenance { method_default, artifact_default, user };

std::string provenance_name(Provenance p);

struct ConfigEntry {
    std::string value;
    Provenance provenance = Provenance::artifact_default;
};

/// Flat key = value configuration with per-field provenance. Defaults that
/// mirror the published training recipe are tagged method_default; values
/// chosen for this implementation are artifact_default; anything set via file
/// or flag becomes user. Unknown keys are rejected.
class RunConfig {
public:
    RunConfig();  // all defaults

    /// Parses a flat key = value file ('#' comments, quoted strings, bools,
    /// numbers) and overrides the defaults.
    void load_file(const std::string& path);

    void set(const std::string& key, const std::string& value);  // user override
    const std::string& get(const std::string& key) const;
    bool has(const std::string& key) const;

    TrainerConfig trainer() const;
    PreprocessConfig preprocessor() const;

    const std::map<std::string, ConfigEntry>& entries() const { return entries_; }

    /// Resolved key/value/provenance listing, e.g. for `report --provenance`.
    std::string describe() const;

private:
    std::map<std::string, ConfigEntry> entries_;
};

}  // namespace vseg
