#include "vesselseg/manifest.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "vesselseg/rng.hpp"

namespace vseg {

const CaseRecord& DatasetManifest::find_case(const std::string& id) const {
    for (const auto& c : cases)
        if (c.id == id) return c;
    throw std::runtime_error("manifest has no case with id " + id);
}

std::vector<const CaseRecord*> DatasetManifest::split_cases(const std::string& split) const {
    auto it = splits.find(split);
    if (it == splits.end()) return {};
    std::vector<const CaseRecord*> out;
    out.reserve(it->second.size());
    for (const auto& id : it->second) out.push_back(&find_case(id));
    return out;
}

std::vector<std::string> DatasetManifest::patients() const {
    std::vector<std::string> out;
    std::set<std::string> seen;
    for (const auto& c : cases)
        if (seen.insert(c.patient).second) out.push_back(c.patient);
    return out;
}

void DatasetManifest::validate(bool check_files) const {
    std::set<std::string> ids;
    for (const auto& c : cases) {
        if (!ids.insert(c.id).second) throw std::runtime_error("duplicate case id: " + c.id);
        if (check_files) {
            if (!std::filesystem::exists(c.volume_path))
                throw std::runtime_error("missing volume file: " + c.volume_path);
            if (!std::filesystem::exists(c.mask_path))
                throw std::runtime_error("missing mask file: " + c.mask_path);
            if (c.full_mask_path && !std::filesystem::exists(*c.full_mask_path))
                throw std::runtime_error("missing full mask file: " + *c.full_mask_path);
        }
    }
    for (const auto& [name, members] : splits)
        for (const auto& id : members)
            if (!ids.count(id))
                throw std::runtime_error("split '" + name + "' references unknown case " + id);
}

DatasetManifest load_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open manifest: " + path);
    nlohmann::json j;
    f >> j;

    DatasetManifest m;
    for (const auto& jc : j.at("cases")) {
        CaseRecord c;
        c.id = jc.at("id").get<std::string>();
        c.patient = jc.at("patient").get<std::string>();
        c.volume_path = jc.at("volume").get<std::string>();
        c.mask_path = jc.at("mask").get<std::string>();
        c.center = jc.value("center", std::string("unknown"));
        if (jc.contains("full_mask")) c.full_mask_path = jc.at("full_mask").get<std::string>();
        m.cases.push_back(std::move(c));
    }
    if (j.contains("splits"))
        for (auto it = j["splits"].begin(); it != j["splits"].end(); ++it)
            m.splits[it.key()] = it.value().get<std::vector<std::string>>();
    m.validate(/*check_files=*/false);
    return m;
}

void save_manifest(const DatasetManifest& m, const std::string& path) {
    nlohmann::json j;
    j["cases"] = nlohmann::json::array();
    for (const auto& c : m.cases) {
        nlohmann::json jc{{"id", c.id},
                          {"patient", c.patient},
                          {"volume", c.volume_path},
                          {"mask", c.mask_path},
                          {"center", c.center}};
        if (c.full_mask_path) jc["full_mask"] = *c.full_mask_path;
        j["cases"].push_back(jc);
    }
    j["splits"] = nlohmann::json::object();
    for (const auto& [name, members] : m.splits) j["splits"][name] = members;
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write manifest: " + path);
    f << j.dump(2) << "\n";
}

namespace {

std::vector<std::string> shuffled_patients(const DatasetManifest& m, std::uint64_t seed,
                                           std::string_view stream) {
    std::vector<std::string> patients = m.patients();
    std::sort(patients.begin(), patients.end());
    Rng rng = Rng::fork(seed, stream);
    std::shuffle(patients.begin(), patients.end(), rng.engine());
    return patients;
}

std::vector<std::string> cases_of_patients(const DatasetManifest& m,
                                           const std::set<std::string>& patients) {
    std::vector<std::string> out;
    for (const auto& c : m.cases)
        if (patients.count(c.patient)) out.push_back(c.id);
    return out;
}

}  // namespace

DatasetManifest split_dataset(const DatasetManifest& manifest, std::array<double, 3> ratios,
                              std::uint64_t seed) {
    double sum = ratios[0] + ratios[1] + ratios[2];
    if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("split ratios must sum to 1");
    for (double r : ratios)
        if (!(r > 0.0)) throw std::invalid_argument("split ratios must be positive");

    std::vector<std::string> patients = shuffled_patients(manifest, seed, "split_dataset");
    const std::size_t P = patients.size();

    std::size_t n_train = static_cast<std::size_t>(ratios[0] * static_cast<double>(P));
    std::size_t n_val = static_cast<std::size_t>(ratios[1] * static_cast<double>(P));
    std::size_t n_test = static_cast<std::size_t>(ratios[2] * static_cast<double>(P));
    // Remainders go to train first, then test, then val.
    std::size_t assigned = n_train + n_val + n_test;
    std::size_t* order[3] = {&n_train, &n_test, &n_val};
    for (int i = 0; assigned < P; i = (i + 1) % 3) {
        ++*order[i];
        ++assigned;
    }
    if (n_train == 0 || n_val == 0 || n_test == 0)
        throw std::runtime_error("not enough patients to populate train/val/test");

    std::set<std::string> train(patients.begin(), patients.begin() + n_train);
    std::set<std::string> val(patients.begin() + n_train, patients.begin() + n_train + n_val);
    std::set<std::string> test(patients.begin() + n_train + n_val, patients.end());

    DatasetManifest out = manifest;
    out.splits.clear();
    out.splits["train"] = cases_of_patients(manifest, train);
    out.splits["val"] = cases_of_patients(manifest, val);
    out.splits["test"] = cases_of_patients(manifest, test);
    return out;
}

std::vector<DatasetManifest> make_folds(const DatasetManifest& manifest, int k,
                                        std::uint64_t seed) {
    if (k < 2) throw std::invalid_argument("fold count must be at least 2");
    std::vector<std::string> patients = shuffled_patients(manifest, seed, "make_folds");
    if (static_cast<std::size_t>(k) > patients.size())
        throw std::runtime_error("more folds than patients");

    // Deal patients round-robin; test-set sizes differ by at most one.
    std::vector<std::set<std::string>> test_sets(static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < patients.size(); ++i)
        test_sets[i % static_cast<std::size_t>(k)].insert(patients[i]);

    std::vector<DatasetManifest> folds;
    folds.reserve(static_cast<std::size_t>(k));
    for (int f = 0; f < k; ++f) {
        std::set<std::string> train;
        for (const auto& p : patients)
            if (!test_sets[static_cast<std::size_t>(f)].count(p)) train.insert(p);
        DatasetManifest fold = manifest;
        fold.splits.clear();
        fold.splits["train"] = cases_of_patients(manifest, train);
        fold.splits["test"] = cases_of_patients(manifest, test_sets[static_cast<std::size_t>(f)]);
        folds.push_back(std::move(fold));
    }
    return folds;
}

}  // namespace vseg
