#include "vesselseg/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "vesselseg/config.hpp"
#include "vesselseg/log.hpp"
#include "vesselseg/manifest.hpp"
#include "vesselseg/mesh.hpp"
#include "vesselseg/metrics.hpp"
#include "vesselseg/nifti.hpp"
#include "vesselseg/phantom.hpp"
#include "vesselseg/preprocess.hpp"
#include "vesselseg/surface_distance.hpp"
#include "vesselseg/trainer.hpp"

namespace vseg::cli {

namespace {

constexpr const char* kVersion = "vesselseg 0.1.0";
namespace fs = std::filesystem;

void write_run_record(const std::string& out_dir, const std::string& command,
                      const std::vector<std::string>& argv, std::uint64_t seed,
                      const RunConfig* config) {
    fs::create_directories(out_dir);
    nlohmann::json j;
    j["command"] = command;
    j["argv"] = argv;
    j["seed"] = seed;
    j["version"] = kVersion;
    if (config) {
        nlohmann::json jc;
        for (const auto& [key, entry] : config->entries())
            jc[key] = {{"value", entry.value}, {"provenance", provenance_name(entry.provenance)}};
        j["config"] = jc;
    }
    std::ofstream f(fs::path(out_dir) / "run.json");
    f << j.dump(2) << "\n";
}

std::vector<std::string> collect_args(int argc, const char* const* argv) {
    std::vector<std::string> out;
    for (int i = 0; i < argc; ++i) out.emplace_back(argv[i]);
    return out;
}

// ---- phantom ------------------------------------------------------------------

int cmd_phantom(const std::vector<std::string>& raw_args, CLI::App& app, int& n, int& size,
                std::string& out, std::uint64_t& seed, PhantomSpec& spec) {
    spec.grid_size = size;
    phantom_suite(n, spec, seed, out);
    write_run_record(out, "phantom", raw_args, seed, nullptr);
    std::cout << "wrote " << n << " phantom cases to " << out << "\n";
    (void)app;
    return 0;
}

// ---- evaluate -----------------------------------------------------------------

struct EvalRow {
    CaseReport report;
};

nlohmann::json report_to_json(const std::string& name, const std::vector<CaseReport>& rows) {
    nlohmann::json j;
    j["name"] = name;
    j["cases"] = nlohmann::json::array();
    std::vector<double> sens, prec, spec, dsc, jac, vs, serr, fine, fserr;
    for (const auto& r : rows) {
        nlohmann::json jc{{"id", r.case_id},
                          {"sensitivity", r.pixel.sensitivity},
                          {"precision", r.pixel.precision},
                          {"specificity", r.pixel.specificity},
                          {"dsc", r.pixel.dsc},
                          {"jaccard", r.pixel.jaccard},
                          {"volume_similarity", r.pixel.volume_similarity},
                          {"surface_error", r.surface_error_mm}};
        if (r.fine_vessel_sensitivity) jc["fine_vessel_sensitivity"] = *r.fine_vessel_sensitivity;
        if (r.full_surface_error_mm) jc["full_surface_error"] = *r.full_surface_error_mm;
        j["cases"].push_back(jc);
        sens.push_back(r.pixel.sensitivity);
        prec.push_back(r.pixel.precision);
        spec.push_back(r.pixel.specificity);
        dsc.push_back(r.pixel.dsc);
        jac.push_back(r.pixel.jaccard);
        vs.push_back(r.pixel.volume_similarity);
        serr.push_back(r.surface_error_mm);
        if (r.fine_vessel_sensitivity) fine.push_back(*r.fine_vessel_sensitivity);
        if (r.full_surface_error_mm) fserr.push_back(*r.full_surface_error_mm);
    }
    auto agg = [](const std::vector<double>& v) {
        AggregateStats s = aggregate(v);
        return nlohmann::json{{"mean", s.mean}, {"std", s.stddev}, {"n", s.n}};
    };
    j["aggregate"] = {{"sensitivity", agg(sens)},       {"precision", agg(prec)},
                      {"specificity", agg(spec)},       {"dsc", agg(dsc)},
                      {"jaccard", agg(jac)},            {"volume_similarity", agg(vs)},
                      {"surface_error", agg(serr)}};
    if (!fine.empty()) j["aggregate"]["fine_vessel_sensitivity"] = agg(fine);
    if (!fserr.empty()) j["aggregate"]["full_surface_error"] = agg(fserr);
    return j;
}

CaseReport evaluate_one_case(const CaseRecord& rec, const LabelMask& pred) {
    LabelMask gt = load_mask(rec.mask_path);
    if (!gt.data.same_shape(pred.data))
        throw std::runtime_error("prediction shape differs from ground truth for case " + rec.id);
    const AnnotationExtent roi = mask_bounding_box(gt);
    CaseReport r = evaluate_case(pred, gt, roi, gt.spacing);
    r.case_id = rec.id;

    if (rec.full_mask_path) {
        LabelMask full = load_mask(*rec.full_mask_path);
        // Recall on the withheld fine-vessel voxels (full minus partial),
        // over the whole volume.
        std::int64_t fine_total = 0, fine_hit = 0;
        for (std::size_t i = 0; i < full.data.size(); ++i) {
            if (full.data[i] != 0.0 && gt.data[i] == 0.0) {
                ++fine_total;
                if (pred.data[i] != 0.0) ++fine_hit;
            }
        }
        if (fine_total > 0)
            r.fine_vessel_sensitivity =
                static_cast<double>(fine_hit) / static_cast<double>(fine_total);

        if (pred.foreground_count() == 0) {
            double diag = 0.0;
            for (int a = 0; a < 3; ++a) {
                const double e = full.dim(a) * full.spacing[static_cast<std::size_t>(a)];
                diag += e * e;
            }
            r.full_surface_error_mm = std::sqrt(diag);
        } else {
            r.full_surface_error_mm =
                surface_error(extract_surface(full), extract_surface(pred));
        }
    }
    return r;
}

int cmd_evaluate(const std::vector<std::string>& raw_args, const std::string& pred_dir,
                 const std::string& manifest_path, const std::string& out_path,
                 const std::string& split, const std::string& name) {
    DatasetManifest manifest = load_manifest(manifest_path);
    std::vector<const CaseRecord*> records;
    if (!split.empty()) {
        records = manifest.split_cases(split);
        if (records.empty())
            throw std::runtime_error("manifest has no cases in split '" + split + "'");
    } else if (manifest.splits.count("test")) {
        records = manifest.split_cases("test");
    } else {
        for (const auto& c : manifest.cases) records.push_back(&c);
    }

    std::vector<CaseReport> rows;
    for (const auto* rec : records) {
        const std::string pred_path = (fs::path(pred_dir) / (rec->id + ".nii.gz")).string();
        if (!fs::exists(pred_path))
            throw std::runtime_error("missing prediction for case " + rec->id + ": " + pred_path);
        rows.push_back(evaluate_one_case(*rec, load_mask(pred_path)));
    }

    nlohmann::json j = report_to_json(name.empty() ? fs::path(pred_dir).filename().string() : name,
                                      rows);
    std::ofstream f(out_path);
    if (!f) throw std::runtime_error("cannot write report: " + out_path);
    f << j.dump(2) << "\n";
    write_run_record(fs::path(out_path).parent_path().string(), "evaluate", raw_args, 0, nullptr);
    std::cout << "evaluated " << rows.size() << " cases -> " << out_path << "\n";
    return 0;
}

// ---- report -------------------------------------------------------------------

struct MetricSpec {
    const char* key;
    const char* label;
};
const MetricSpec kTableMetrics[] = {
    {"sensitivity", "Sensitivity"},  {"precision", "Precision"},
    {"specificity", "Specificity"},  {"jaccard", "Jac"},
    {"volume_similarity", "VS"},     {"dsc", "DSC"},
    {"surface_error", "Surface Error"},
    {"fine_vessel_sensitivity", "Fine-Vessel Sensitivity"},
    {"full_surface_error", "Full-Mask Surface Error"},
};

std::string fmt_cell(const nlohmann::json& agg, const std::string& key) {
    if (!agg.contains(key)) return "/";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.4f ± %.4f", agg[key]["mean"].get<double>(),
                  agg[key]["std"].get<double>());
    return buf;
}

std::vector<double> surface_errors_of(const nlohmann::json& rep) {
    std::vector<double> out;
    for (const auto& c : rep["cases"]) out.push_back(c["surface_error"].get<double>());
    return out;
}

int cmd_report(const std::vector<std::string>& ins, const std::string& format,
               const std::string& baseline_path, const std::string& out_path) {
    std::vector<nlohmann::json> reports;
    for (const auto& p : ins) {
        std::ifstream f(p);
        if (!f) throw std::runtime_error("cannot open report: " + p);
        nlohmann::json j;
        f >> j;
        reports.push_back(std::move(j));
    }
    std::optional<nlohmann::json> baseline;
    if (!baseline_path.empty()) {
        std::ifstream f(baseline_path);
        if (!f) throw std::runtime_error("cannot open baseline report: " + baseline_path);
        nlohmann::json j;
        f >> j;
        baseline = std::move(j);
    }

    std::ostringstream os;
    if (format == "md") {
        os << "| Metric |";
        for (const auto& r : reports) os << " " << r["name"].get<std::string>() << " |";
        os << "\n|---|";
        for (std::size_t i = 0; i < reports.size(); ++i) os << "---|";
        os << "\n";
        for (const auto& m : kTableMetrics) {
            bool any = false;
            for (const auto& r : reports) any = any || r["aggregate"].contains(m.key);
            if (!any) continue;
            os << "| " << m.label << " |";
            for (const auto& r : reports) os << " " << fmt_cell(r["aggregate"], m.key) << " |";
            os << "\n";
        }
        if (baseline) {
            os << "| p-value |";
            for (const auto& r : reports) {
                auto res = paired_test(surface_errors_of(*baseline), surface_errors_of(r));
                char buf[32];
                std::snprintf(buf, sizeof(buf), "%.4g%s", res.p_value,
                              res.degenerate ? " (degenerate)" : "");
                os << " " << buf << " |";
            }
            os << "\n";
        }
    } else if (format == "csv") {
        os << "metric";
        for (const auto& r : reports) os << "," << r["name"].get<std::string>();
        os << "\n";
        for (const auto& m : kTableMetrics) {
            bool any = false;
            for (const auto& r : reports) any = any || r["aggregate"].contains(m.key);
            if (!any) continue;
            os << m.label;
            for (const auto& r : reports) {
                os << ",";
                if (r["aggregate"].contains(m.key))
                    os << r["aggregate"][m.key]["mean"].get<double>() << " ± "
                       << r["aggregate"][m.key]["std"].get<double>();
                else
                    os << "/";
            }
            os << "\n";
        }
        if (baseline) {
            os << "p-value";
            for (const auto& r : reports) {
                auto res = paired_test(surface_errors_of(*baseline), surface_errors_of(r));
                os << "," << res.p_value;
            }
            os << "\n";
        }
    } else {
        throw std::runtime_error("unknown report format: " + format);
    }

    if (out_path.empty()) {
        std::cout << os.str();
    } else {
        std::ofstream f(out_path);
        f << os.str();
        std::cout << "wrote " << out_path << "\n";
    }
    return 0;
}

}  // namespace

int run(int argc, const char* const* argv) {
    const std::vector<std::string> raw_args = collect_args(argc, argv);

    CLI::App app{"Semi-supervised 3D vessel segmentation pipeline"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);

    // phantom
    auto* sc_phantom = app.add_subcommand("phantom", "Generate a synthetic vascular case suite");
    int ph_n = 16, ph_size = 64;
    std::string ph_out;
    std::uint64_t ph_seed = 0;
    PhantomSpec ph_spec;
    sc_phantom->add_option("--n", ph_n, "number of cases");
    sc_phantom->add_option("--size", ph_size, "grid size per axis");
    sc_phantom->add_option("--out", ph_out, "output directory")->required();
    sc_phantom->add_option("--seed", ph_seed, "suite seed");
    sc_phantom->add_option("--depth", ph_spec.tree_depth, "tree depth");
    sc_phantom->add_option("--trunk-radius", ph_spec.trunk_radius_mm, "trunk radius (mm)");
    sc_phantom->add_option("--annotation-radius", ph_spec.annotation_radius_mm,
                           "labeling radius threshold (mm)");
    sc_phantom->add_option("--noise", ph_spec.noise_sigma, "additive noise sigma");
    sc_phantom->add_option("--spacing", ph_spec.spacing_mm, "voxel spacing (mm)");

    // preprocess
    auto* sc_pre = app.add_subcommand("preprocess",
                                      "Resample, normalize and group patches for a manifest");
    std::string pre_manifest, pre_out, pre_config;
    double pre_spacing = -1.0;
    int pre_patch = -1, pre_stride = -1;
    sc_pre->add_option("--manifest", pre_manifest, "dataset manifest")->required();
    sc_pre->add_option("--out", pre_out, "cache output directory")->required();
    sc_pre->add_option("--spacing", pre_spacing, "target spacing (mm)");
    sc_pre->add_option("--patch", pre_patch, "patch size");
    sc_pre->add_option("--stride", pre_stride, "patch stride");
    sc_pre->add_option("--config", pre_config, "config file for the remaining knobs");

    // train
    auto* sc_train = app.add_subcommand("train", "Teacher-student training on a preprocessed cache");
    std::string tr_manifest, tr_config, tr_out;
    bool tr_resume = false;
    std::vector<std::string> tr_sets;
    sc_train->add_option("--manifest", tr_manifest, "preprocessed cache manifest")->required();
    sc_train->add_option("--config", tr_config, "training config file");
    sc_train->add_option("--out", tr_out, "run directory")->required();
    sc_train->add_flag("--resume", tr_resume, "resume from the run directory's last checkpoint");
    sc_train->add_option("--set", tr_sets, "override config entries as key=value")->take_all();

    // predict
    auto* sc_pred = app.add_subcommand("predict", "Full-volume sliding-window inference");
    std::string pd_ckpt, pd_volume, pd_out, pd_network = "student", pd_input = "auto";
    int pd_stride = 0;
    sc_pred->add_option("--checkpoint", pd_ckpt, "training checkpoint")->required();
    sc_pred->add_option("--volume", pd_volume, "input volume (.nii/.nii.gz/.raw)")->required();
    sc_pred->add_option("--out", pd_out, "output mask path (.nii.gz)")->required();
    sc_pred->add_option("--network", pd_network, "student|teacher (default student)");
    sc_pred->add_option("--input", pd_input, "raw|vessel_like|auto (default: by network)");
    sc_pred->add_option("--stride", pd_stride, "window stride (default: patch size)");

    // evaluate
    auto* sc_eval = app.add_subcommand("evaluate", "Per-case metrics against the manifest masks");
    std::string ev_pred_dir, ev_manifest, ev_out, ev_split, ev_name;
    sc_eval->add_option("--pred-dir", ev_pred_dir, "directory with <case>.nii.gz predictions")
        ->required();
    sc_eval->add_option("--manifest", ev_manifest, "dataset manifest")->required();
    sc_eval->add_option("--out", ev_out, "report JSON output")->required();
    sc_eval->add_option("--split", ev_split, "restrict to a split (default: test if present)");
    sc_eval->add_option("--name", ev_name, "column name for this report");

    // report
    auto* sc_rep = app.add_subcommand("report", "Render mean ± std tables from report JSON");
    std::vector<std::string> rp_in;
    std::string rp_format = "md", rp_out, rp_baseline, rp_config;
    bool rp_prov = false;
    sc_rep->add_option("--in", rp_in, "report JSON file(s)")->take_all();
    sc_rep->add_option("--format", rp_format, "md|csv");
    sc_rep->add_option("--out", rp_out, "output file (default stdout)");
    sc_rep->add_option("--baseline", rp_baseline, "baseline report for the paired test");
    sc_rep->add_flag("--provenance", rp_prov, "list hyperparameters with their provenance");
    sc_rep->add_option("--config", rp_config, "config file to annotate for --provenance");

    // split
    auto* sc_split = app.add_subcommand("split", "Patient-wise split or k-fold assignment");
    std::string sp_manifest, sp_out, sp_ratios = "0.7,0.1,0.2";
    std::uint64_t sp_seed = 0;
    int sp_folds = 0;
    sc_split->add_option("--manifest", sp_manifest, "dataset manifest")->required();
    sc_split->add_option("--out", sp_out, "output manifest path (or directory for folds)")
        ->required();
    sc_split->add_option("--ratios", sp_ratios, "train,val,test ratios");
    sc_split->add_option("--seed", sp_seed, "split seed");
    sc_split->add_option("--folds", sp_folds, "emit k cross-validation folds instead");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::CallForVersion& e) {
        std::cout << kVersion << "\n";
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n\n" << app.help();
        return 2;
    }

    try {
        if (sc_phantom->parsed())
            return cmd_phantom(raw_args, app, ph_n, ph_size, ph_out, ph_seed, ph_spec);

        if (sc_pre->parsed()) {
            RunConfig rc;
            if (!pre_config.empty()) rc.load_file(pre_config);
            if (pre_spacing > 0) rc.set("target_spacing", std::to_string(pre_spacing));
            if (pre_patch > 0) rc.set("patch_size", std::to_string(pre_patch));
            if (pre_stride > 0) rc.set("stride", std::to_string(pre_stride));
            DatasetManifest manifest = load_manifest(pre_manifest);
            manifest.validate(/*check_files=*/true);
            preprocess_cases(manifest, rc.preprocessor(), pre_out);
            write_run_record(pre_out, "preprocess", raw_args, 0, &rc);
            std::cout << "preprocessed " << manifest.cases.size() << " cases -> " << pre_out
                      << "\n";
            return 0;
        }

        if (sc_train->parsed()) {
            RunConfig rc;
            if (!tr_config.empty()) rc.load_file(tr_config);
            for (const auto& kv : tr_sets) {
                const auto eq = kv.find('=');
                if (eq == std::string::npos)
                    throw std::runtime_error("--set expects key=value, got " + kv);
                rc.set(kv.substr(0, eq), kv.substr(eq + 1));
            }
            TrainerConfig cfg = rc.trainer();
            DatasetManifest manifest = load_manifest(tr_manifest);
            TeacherStudentState state(cfg.network);
            write_run_record(tr_out, "train", raw_args, cfg.seed, &rc);
            FitResult result = fit(state, manifest, cfg, tr_out, tr_resume);
            std::cout << "trained " << cfg.epochs << " epochs; best val DSC "
                      << result.best_val_dsc << "; checkpoints in " << tr_out << "\n";
            return 0;
        }

        if (sc_pred->parsed()) {
            TeacherStudentState state = load_state(pd_ckpt);
            nn::SegmentationNetwork& net =
                pd_network == "teacher" ? state.teacher : state.student;
            if (pd_network != "teacher" && pd_network != "student")
                throw std::runtime_error("--network must be student or teacher");
            bool vessel_like = pd_network == "student";
            if (pd_input == "raw") vessel_like = false;
            else if (pd_input == "vessel_like") vessel_like = true;
            else if (pd_input != "auto")
                throw std::runtime_error("--input must be raw, vessel_like or auto");

            Volume vol = load_volume(pd_volume);
            const int patch = net.config().patch_size;
            const int stride = pd_stride > 0 ? pd_stride : patch;
            VolumePrediction pred = predict_volume(net, vol, patch, stride, vessel_like);
            save_mask(pred.mask, pd_out);
            const std::string prob_path =
                (fs::path(pd_out).parent_path() /
                 (fs::path(pd_out).filename().string() + ".prob.nii.gz"))
                    .string();
            save_volume(pred.probability, prob_path);
            write_run_record(fs::path(pd_out).parent_path().string(), "predict", raw_args, 0,
                             nullptr);
            std::cout << "wrote " << pd_out << " (+ probability volume)\n";
            return 0;
        }

        if (sc_eval->parsed())
            return cmd_evaluate(raw_args, ev_pred_dir, ev_manifest, ev_out, ev_split, ev_name);

        if (sc_rep->parsed()) {
            if (rp_prov) {
                RunConfig rc;
                if (!rp_config.empty()) rc.load_file(rp_config);
                std::cout << rc.describe();
                return 0;
            }
            if (rp_in.empty()) throw std::runtime_error("report needs --in (or --provenance)");
            return cmd_report(rp_in, rp_format, rp_baseline, rp_out);
        }

        if (sc_split->parsed()) {
            DatasetManifest manifest = load_manifest(sp_manifest);
            if (sp_folds > 0) {
                auto folds = make_folds(manifest, sp_folds, sp_seed);
                fs::create_directories(sp_out);
                for (std::size_t i = 0; i < folds.size(); ++i)
                    save_manifest(folds[i],
                                  (fs::path(sp_out) / ("fold" + std::to_string(i) + ".json"))
                                      .string());
                std::cout << "wrote " << folds.size() << " folds to " << sp_out << "\n";
            } else {
                std::array<double, 3> ratios{};
                std::stringstream ss(sp_ratios);
                std::string tok;
                int idx = 0;
                while (std::getline(ss, tok, ',') && idx < 3)
                    ratios[static_cast<std::size_t>(idx++)] = std::stod(tok);
                if (idx != 3) throw std::runtime_error("--ratios expects three numbers");
                save_manifest(split_dataset(manifest, ratios, sp_seed), sp_out);
                std::cout << "wrote split manifest " << sp_out << "\n";
            }
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}

}  // namespace vseg::cli
