// camds: synthetic corpus generation, patient-level fold splitting, training,
// evaluation, ROC analysis, inter-rater agreement and activation-map export
// behind one executable. Exit codes: 0 success, 1 runtime failure, 2 usage
// error.

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "camds/checkpoint.hpp"
#include "camds/dataset.hpp"
#include "camds/heatmap.hpp"
#include "camds/image_io.hpp"
#include "camds/metrics.hpp"
#include "camds/model.hpp"
#include "camds/synthetic.hpp"
#include "camds/train.hpp"

namespace fs = std::filesystem;
using namespace camds;

namespace {

// flag-level problems discovered after CLI11 parsing still exit with 2
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

int worker_threads() {
    const char* env = std::getenv("CAMDS_THREADS");
    if (!env) return 1;
    try {
        size_t pos = 0;
        const int v = std::stoi(env, &pos);
        if (pos != std::string(env).size() || v < 1) throw std::invalid_argument("");
        return v;
    } catch (...) {
        throw UsageError(std::string("CAMDS_THREADS must be a positive integer, got '") + env +
                         "'");
    }
}

uint64_t fnv1a64_bytes(const void* data, size_t n, uint64_t h) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

// digest over sorted relative file names and contents
std::string directory_digest(const std::string& dir) {
    std::vector<std::string> files;
    for (const auto& entry : fs::recursive_directory_iterator(dir))
        if (entry.is_regular_file()) files.push_back(fs::relative(entry.path(), dir).string());
    std::sort(files.begin(), files.end());
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& rel : files) {
        h = fnv1a64_bytes(rel.data(), rel.size(), h);
        std::ifstream in(fs::path(dir) / rel, std::ios::binary);
        std::string content((std::istreambuf_iterator<char>(in)),
                            std::istreambuf_iterator<char>());
        h = fnv1a64_bytes(content.data(), content.size(), h);
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

SyntheticSpec parse_synth_spec(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError(path + ": cannot open spec file");
    SyntheticSpec spec;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw UsageError(path + ":" + std::to_string(lineno) + ": expected key=value");
        const std::string key = line.substr(0, eq);
        const std::string value = line.substr(eq + 1);
        try {
            if (key == "patients_per_class")
                spec.patients_per_class = std::stoi(value);
            else if (key == "frames_per_patient_min")
                spec.frames_per_patient_min = std::stoi(value);
            else if (key == "frames_per_patient_max")
                spec.frames_per_patient_max = std::stoi(value);
            else if (key == "image_size")
                spec.image_size = std::stoi(value);
            else if (key == "normal_stroke_thickness")
                spec.normal_stroke_thickness = std::stod(value);
            else if (key == "abnormal_stroke_thickness")
                spec.abnormal_stroke_thickness = std::stod(value);
            else if (key == "strokes_per_frame")
                spec.strokes_per_frame = std::stoi(value);
            else if (key == "tangle_density")
                spec.tangle_density = std::stod(value);
            else if (key == "region_fraction")
                spec.region_fraction = std::stod(value);
            else if (key == "seed")
                spec.seed = std::stoull(value);
            else
                throw UsageError(path + ":" + std::to_string(lineno) + ": unknown key '" + key +
                                 "'");
        } catch (const UsageError&) {
            throw;
        } catch (...) {
            throw UsageError(path + ":" + std::to_string(lineno) + ": bad value '" + value +
                             "' for " + key);
        }
    }
    return spec;
}

std::map<std::string, FrameLabel> patient_labels_of(std::span<const FrameRecord> records) {
    std::map<std::string, FrameLabel> labels;
    for (const auto& r : records) labels.emplace(r.patient_id, r.label);
    return labels;
}

const FoldSplit& find_fold(const std::vector<FoldSplit>& folds, int fold_index) {
    for (const auto& f : folds)
        if (f.fold_index == fold_index) return f;
    throw UsageError("fold " + std::to_string(fold_index) + " not present in the folds file (" +
                     std::to_string(folds.size()) + " folds available)");
}

std::vector<FrameRecord> records_for_role(std::span<const FrameRecord> records,
                                          const FoldSplit& fold, const std::string& role) {
    const std::vector<std::string>* ids = nullptr;
    if (role == "train")
        ids = &fold.train;
    else if (role == "val")
        ids = &fold.val;
    else if (role == "test")
        ids = &fold.test;
    else
        throw UsageError("unknown split '" + role + "' (expected train, val or test)");
    const std::set<std::string> wanted(ids->begin(), ids->end());
    std::vector<FrameRecord> out;
    for (const auto& r : records)
        if (wanted.count(r.patient_id)) out.push_back(r);
    return out;
}

void print_fold_count_table(const std::string& title, const std::vector<FoldSplit>& folds,
                            const std::map<std::string, FrameLabel>& labels,
                            const std::map<std::string, int>& frames_per_patient,
                            bool count_frames) {
    auto count = [&](const std::vector<std::string>& ids, FrameLabel want) {
        int64_t total = 0;
        for (const auto& id : ids) {
            if (labels.at(id) != want) continue;
            total += count_frames ? frames_per_patient.at(id) : 1;
        }
        return total;
    };
    std::cout << title << "\n";
    std::cout << "dataset";
    for (const auto& f : folds) std::cout << "\tfold " << f.fold_index;
    std::cout << "\n";
    const struct {
        const char* name;
        const std::vector<std::string> FoldSplit::* member;
    } roles[] = {{"training", &FoldSplit::train},
                 {"validation", &FoldSplit::val},
                 {"testing", &FoldSplit::test}};
    for (const auto& role : roles) {
        for (int cls = 0; cls < 3; ++cls) {
            std::cout << role.name;
            if (cls == 0)
                std::cout << " (normal)";
            else if (cls == 1)
                std::cout << " (abnormal)";
            else
                std::cout << " (normal + abnormal)";
            for (const auto& f : folds) {
                const auto& ids = f.*role.member;
                int64_t v = 0;
                if (cls == 0 || cls == 2) v += count(ids, FrameLabel::Normal);
                if (cls == 1 || cls == 2) v += count(ids, FrameLabel::Abnormal);
                std::cout << "\t" << v;
            }
            std::cout << "\n";
        }
    }
}

struct PredictionRow {
    std::string patient_id;
    int frame_index;
    double prob;
    int label;
};

std::vector<PredictionRow> load_predictions(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error(path + ": cannot open file");
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error(path + ":1: missing header");
    if (line.find("patient_id,frame_index,prob,label") != 0)
        throw std::runtime_error(path + ":1: bad header (expected patient_id,frame_index,prob,label)");
    std::vector<PredictionRow> rows;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::stringstream ss(line);
        PredictionRow row;
        std::string field;
        try {
            std::getline(ss, row.patient_id, ',');
            std::getline(ss, field, ',');
            row.frame_index = std::stoi(field);
            std::getline(ss, field, ',');
            row.prob = std::stod(field);
            std::getline(ss, field, ',');
            row.label = std::stoi(field);
            if (row.label != 0 && row.label != 1) throw std::invalid_argument("");
        } catch (...) {
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": bad prediction row");
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

ModelConfig make_model_config(int input_size, int stages, const std::string& channels,
                              int blocks, const std::string& head, uint64_t seed) {
    ModelConfig mc;
    mc.input_size = input_size;
    mc.num_resolutions = stages;
    mc.blocks_per_stage = blocks;
    mc.head = head_from_name(head);
    mc.seed = seed;
    mc.channels_per_stage.clear();
    std::stringstream ss(channels);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        try {
            mc.channels_per_stage.push_back(std::stoi(tok));
        } catch (...) {
            throw UsageError("bad --channels entry '" + tok + "'");
        }
    }
    try {
        mc.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    return mc;
}

void write_text(const std::string& path, const std::string& content) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error(path + ": cannot open for writing");
    out << content;
    if (!out) throw std::runtime_error(path + ": write failed");
}

Tensor load_model_input(const std::string& path, int input_size) {
    Image img = read_pnm(path);
    if (img.width != input_size || img.height != input_size) {
        const int target_w =
            img.width <= img.height
                ? input_size
                : static_cast<int>(std::lround(static_cast<double>(input_size) * img.width /
                                               img.height));
        img = center_crop_square(resize_width(img, target_w));
        if (img.width != input_size)
            throw std::runtime_error(path + ": cannot fit image to the model input size");
    }
    auto t = image_to_tensor(img);
    std::vector<float> batch(t.data().begin(), t.data().end());
    return Tensor::from_data({1, 3, input_size, input_size}, std::move(batch));
}

// ---------------------------------------------------------------------------

int cmd_synth(const std::string& spec_path, const std::string& out_dir, int64_t seed_flag,
              bool seed_given) {
    SyntheticSpec spec = parse_synth_spec(spec_path);
    if (seed_given) spec.seed = static_cast<uint64_t>(seed_flag);
    std::cout << "config: patients_per_class=" << spec.patients_per_class
              << " frames=[" << spec.frames_per_patient_min << "," << spec.frames_per_patient_max
              << "] image_size=" << spec.image_size << " seed=" << spec.seed << "\n";
    const SyntheticSummary summary = generate_synthetic(spec, out_dir);
    std::cout << "manifest: " << summary.manifest_path << "\n"
              << "patients: " << summary.num_patients << "\n"
              << "frames: " << summary.num_frames << "\n"
              << "masks: " << summary.num_masks << "\n"
              << "corpus digest: " << directory_digest(out_dir) << "\n";
    return 0;
}

int cmd_split(const std::string& manifest_path, int k, uint64_t seed, const std::string& out_path,
              bool stratify) {
    std::cout << "config: manifest=" << manifest_path << " folds=" << k << " seed=" << seed
              << " stratify=" << (stratify ? 1 : 0) << "\n";
    const auto records = load_manifest(manifest_path);
    const auto labels = patient_labels_of(records);
    const auto folds = split_folds(labels, k, SplitRatios{}, seed, stratify);
    save_folds(folds, out_path);

    std::map<std::string, int> frames_per_patient;
    for (const auto& r : records) frames_per_patient[r.patient_id] += 1;
    print_fold_count_table("number of patients per fold", folds, labels, frames_per_patient,
                           false);
    print_fold_count_table("number of frames per fold", folds, labels, frames_per_patient, true);
    std::cout << "folds written to " << out_path << "\n";
    return 0;
}

struct TrainFlags {
    std::string manifest, folds_file, out_dir, head = "cam-ds", resume;
    int fold = 1;
    int input_size = 64, stages = 3, blocks = 2;
    std::string channels = "8,16,32";
    TrainConfig tc;
    int64_t seed = 0;
};

int cmd_train(const TrainFlags& f) {
    TrainConfig tc = f.tc;
    tc.seed = static_cast<uint64_t>(f.seed);
    try {
        tc.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }

    const auto all_records = load_manifest_resolved(f.manifest);
    const auto folds = load_folds(f.folds_file);
    const auto& fold = find_fold(folds, f.fold);

    auto filtered = filter_informative(all_records);
    for (const auto& p : filtered.patients_left_empty)
        std::cout << "warning: patient " << p << " has no informative frames\n";

    Model model = Model::build(make_model_config(f.input_size, f.stages, f.channels, f.blocks,
                                                 f.head, static_cast<uint64_t>(f.seed)));
    std::cout << "config: head=" << f.head << " input_size=" << f.input_size
              << " stages=" << f.stages << " channels=" << f.channels << " blocks=" << f.blocks
              << " seed=" << f.seed << "\n"
              << "config: base_lr=" << tc.base_lr << " lr_step=" << tc.lr_step
              << " decay=" << tc.lr_decay_factor << " max_iterations=" << tc.max_iterations
              << " batch_size=" << tc.batch_size << " momentum=" << tc.momentum
              << " weight_decay=" << tc.weight_decay << " flip_p=" << tc.flip_probability << "\n";
    std::cout << "parameters: " << model.parameter_count() << "\n";

    const auto train_records = records_for_role(filtered.records, fold, "train");
    const auto val_records = records_for_role(filtered.records, fold, "val");
    if (train_records.empty()) throw std::runtime_error("training split is empty");
    const TrainDataset train_set = TrainDataset::load(train_records, f.input_size);
    const TrainDataset val_set = TrainDataset::load(val_records, f.input_size);
    std::cout << "train frames: " << train_set.size() << ", val frames: " << val_set.size()
              << "\n";

    fs::create_directories(f.out_dir);
    Trainer trainer(model, train_set, val_set.size() ? &val_set : nullptr, tc);

    if (!f.resume.empty()) {
        Checkpoint ck = load_checkpoint(f.resume);
        // resumed weights replace the fresh initialization
        model = std::move(ck.model);
        Trainer resumed(model, train_set, val_set.size() ? &val_set : nullptr, tc);
        resumed.resume(std::move(ck.optimizer), ck.iteration, ck.rng.seed);
        TrainHistory history = resumed.run(f.out_dir);
        history.write_csv((fs::path(f.out_dir) / "history.csv").string());
        save_checkpoint(model, resumed.optimizer_state(), resumed.iteration(),
                        resumed.rng_state(), (fs::path(f.out_dir) / "checkpoint_final.camds").string());
    } else {
        TrainHistory history = trainer.run(f.out_dir);
        history.write_csv((fs::path(f.out_dir) / "history.csv").string());
        save_checkpoint(model, trainer.optimizer_state(), trainer.iteration(),
                        trainer.rng_state(), (fs::path(f.out_dir) / "checkpoint_final.camds").string());
    }
    std::cout << "final checkpoint: " << (fs::path(f.out_dir) / "checkpoint_final.camds").string()
              << "\n"
              << "history: " << (fs::path(f.out_dir) / "history.csv").string() << "\n";
    return 0;
}

int cmd_eval(const std::string& checkpoint_path, const std::string& manifest_path,
             const std::string& folds_file, int fold_index, const std::string& split,
             const std::string& out_dir, int batch_size) {
    std::cout << "config: checkpoint=" << checkpoint_path << " fold=" << fold_index
              << " split=" << split << "\n";
    Checkpoint ck = load_checkpoint(checkpoint_path);
    const auto all_records = load_manifest_resolved(manifest_path);
    const auto folds = load_folds(folds_file);
    const auto& fold = find_fold(folds, fold_index);

    auto filtered = filter_informative(all_records);
    const auto records = records_for_role(filtered.records, fold, split);
    if (records.empty())
        throw std::runtime_error("split '" + split + "' of fold " + std::to_string(fold_index) +
                                 " contains no informative frames");
    const TrainDataset data = TrainDataset::load(records, ck.config.input_size);
    const std::vector<double> probs = predict_dataset(ck.model, data, batch_size);

    fs::create_directories(out_dir);
    {
        std::string csv = "patient_id,frame_index,prob,label\n";
        char buf[64];
        for (size_t i = 0; i < probs.size(); ++i) {
            std::snprintf(buf, sizeof(buf), "%.9g", probs[i]);
            csv += data.patient_ids[i] + "," + std::to_string(data.frame_indices[i]) + "," + buf +
                   "," + std::to_string(data.labels[i]) + "\n";
        }
        write_text((fs::path(out_dir) / "predictions.csv").string(), csv);
    }

    const ConfusionCounts counts = confusion(probs, data.labels);
    const FrameMetrics fm = metrics(counts);
    std::vector<FoldReportRow> rows{{"fold " + std::to_string(fold_index), fm}};
    write_text((fs::path(out_dir) / "metrics.csv").string(), fold_report_csv(rows));
    std::cout << fold_report_table(rows);
    std::cout << "frames: " << probs.size() << " tp=" << counts.tp << " fp=" << counts.fp
              << " tn=" << counts.tn << " fn=" << counts.fn << "\n";

    // patient-clip aggregation
    std::map<std::string, std::pair<std::vector<double>, int>> per_patient;
    for (size_t i = 0; i < probs.size(); ++i) {
        auto& entry = per_patient[data.patient_ids[i]];
        entry.first.push_back(probs[i]);
        entry.second = data.labels[i];
    }
    std::vector<PatientPrediction> predictions;
    for (auto& [id, entry] : per_patient)
        predictions.push_back(make_patient_prediction(id, std::move(entry.first), entry.second));
    {
        std::string csv = "patient_id,aggregated_prob,predicted,label\n";
        char buf[64];
        int64_t correct = 0;
        for (const auto& p : predictions) {
            std::snprintf(buf, sizeof(buf), "%.9g", p.aggregated);
            csv += p.patient_id + "," + buf + "," + std::to_string(p.predicted) + "," +
                   std::to_string(p.true_label) + "\n";
            if (p.predicted == p.true_label) ++correct;
        }
        write_text((fs::path(out_dir) / "patients.csv").string(), csv);
        std::cout << "patients: " << predictions.size() << ", correct clips: " << correct << "\n";
    }
    const auto failures = patient_failures(predictions);
    if (failures.empty()) {
        std::cout << "patient failures: none\n";
    } else {
        std::cout << "patient failures (worst first):\n";
        for (const auto& fail : failures)
            std::cout << "  " << fail.patient_id << " aggregated=" << fail.aggregated << " ("
                      << (fail.false_positive ? "false positive" : "false negative") << ")\n";
    }
    return 0;
}

int cmd_roc(const std::vector<std::string>& prediction_files, const std::string& out_dir,
            const std::vector<double>& operating_sens) {
    std::vector<double> probs;
    std::vector<int> labels;
    for (const auto& path : prediction_files)
        for (const auto& row : load_predictions(path)) {
            probs.push_back(row.prob);
            labels.push_back(row.label);
        }
    std::cout << "pooled predictions: " << probs.size() << " from " << prediction_files.size()
              << " file(s)\n";
    const RocCurve curve = roc(probs, labels);
    const double area = auc(curve);

    fs::create_directories(out_dir);
    {
        std::string csv = "threshold,sensitivity,specificity\n";
        char buf[96];
        for (const auto& p : curve.points) {
            std::snprintf(buf, sizeof(buf), "%.9g,%.9g,%.9g\n", p.threshold, p.sensitivity,
                          1.0 - p.fpr);
            csv += buf;
        }
        write_text((fs::path(out_dir) / "roc.csv").string(), csv);
    }
    {
        // quick-look rendering: white curve on black, sensitivity up
        Image img;
        img.width = 256;
        img.height = 256;
        img.channels = 1;
        img.pixels.assign(256 * 256, 0);
        auto plot = [&](double fpr, double tpr) {
            const int x = std::clamp(static_cast<int>(std::lround(fpr * 255)), 0, 255);
            const int y = std::clamp(static_cast<int>(std::lround((1.0 - tpr) * 255)), 0, 255);
            img.pixels[static_cast<size_t>(y) * 256 + x] = 255;
        };
        for (size_t i = 1; i < curve.points.size(); ++i) {
            const auto& a = curve.points[i - 1];
            const auto& b = curve.points[i];
            for (int s = 0; s <= 64; ++s) {
                const double t = s / 64.0;
                plot(a.fpr + t * (b.fpr - a.fpr),
                     a.sensitivity + t * (b.sensitivity - a.sensitivity));
            }
        }
        write_pgm(img, (fs::path(out_dir) / "roc.pgm").string());
    }

    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", area);
    std::cout << "auc: " << buf << "\n";
    std::string op_csv = "target_sensitivity,threshold,sensitivity,specificity\n";
    for (double target : operating_sens) {
        const OperatingPoint op = operating_point(curve, target);
        std::snprintf(buf, sizeof(buf), "%.9g,%.9g,%.9g,%.9g\n", target, op.threshold,
                      op.sensitivity, op.specificity);
        op_csv += buf;
        std::cout << "operating point @ sensitivity >= " << target << ": threshold "
                  << op.threshold << ", sensitivity " << op.sensitivity << ", specificity "
                  << op.specificity << "\n";
    }
    write_text((fs::path(out_dir) / "operating_points.csv").string(), op_csv);
    return 0;
}

int cmd_agreement(const std::string& ratings_path, const std::string& gold_path) {
    const RatingMatrix matrix = RatingMatrix::read_csv(ratings_path);
    std::cout << "raters: " << matrix.raters.size() << ", items: " << matrix.items.size() << "\n";
    const AlphaResult alpha = krippendorff_alpha(matrix);
    if (!alpha.defined) {
        std::cout << "krippendorff_alpha: undefined (zero expected disagreement)\n";
    } else {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.6f", alpha.value);
        std::cout << "krippendorff_alpha: " << buf << "\n";
    }

    if (!gold_path.empty()) {
        // gold CSV: item,label with labels normal/abnormal
        std::ifstream in(gold_path);
        if (!in) throw std::runtime_error(gold_path + ": cannot open file");
        std::string line;
        if (!std::getline(in, line) || line.find("item,label") != 0)
            throw std::runtime_error(gold_path + ":1: bad header (expected item,label)");
        std::map<std::string, int> gold;
        int lineno = 1;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty()) continue;
            const auto comma = line.find(',');
            if (comma == std::string::npos)
                throw std::runtime_error(gold_path + ":" + std::to_string(lineno) +
                                         ": expected item,label");
            std::string label = line.substr(comma + 1);
            if (!label.empty() && label.back() == '\r') label.pop_back();
            if (label != "normal" && label != "abnormal")
                throw std::runtime_error(gold_path + ":" + std::to_string(lineno) +
                                         ": unknown label token '" + label + "'");
            gold[line.substr(0, comma)] = label == "abnormal" ? 1 : 0;
        }

        std::vector<FoldReportRow> rows;
        for (size_t r = 0; r < matrix.raters.size(); ++r) {
            ConfusionCounts c;
            for (size_t i = 0; i < matrix.items.size(); ++i) {
                const auto& cell = matrix.at(r, i);
                auto g = gold.find(matrix.items[i]);
                if (!cell || g == gold.end()) continue;
                if (*cell != "normal" && *cell != "abnormal")
                    throw std::runtime_error("rater " + matrix.raters[r] +
                                             " uses label '" + *cell +
                                             "' which cannot be scored against the gold standard");
                const int predicted = *cell == "abnormal" ? 1 : 0;
                if (predicted == 1 && g->second == 1)
                    ++c.tp;
                else if (predicted == 1)
                    ++c.fp;
                else if (g->second == 1)
                    ++c.fn;
                else
                    ++c.tn;
            }
            rows.push_back({matrix.raters[r], metrics(c)});
        }
        rows = with_average_row(std::move(rows));
        std::cout << fold_report_table(rows);
    }
    return 0;
}

int cmd_cam(const std::string& checkpoint_path, const std::string& image_path,
            const std::string& cls_name, int resolution, const std::string& out_dir) {
    Checkpoint ck = load_checkpoint(checkpoint_path);
    if (ck.config.head == HeadKind::FcBaseline)
        throw UsageError("the fc-baseline head produces no activation maps");
    const int cls = cls_name == "abnormal" ? 1 : cls_name == "normal" ? 0 : -1;
    if (cls < 0) throw UsageError("--class must be normal or abnormal, got '" + cls_name + "'");
    if (resolution < 1 || resolution > ck.config.num_resolutions)
        throw UsageError("--resolution " + std::to_string(resolution) +
                         " out of range [1," + std::to_string(ck.config.num_resolutions) + "]");
    if (ck.config.head == HeadKind::Cam && resolution != ck.config.num_resolutions)
        throw UsageError("the cam head only scores resolution " +
                         std::to_string(ck.config.num_resolutions));

    Tensor input = load_model_input(image_path, ck.config.input_size);
    auto out = ck.model.forward(input, Mode::Eval);
    const SpatialMap map = ck.model.positive_cam(out, resolution, cls);

    // consistency: the global average of the unclamped map is the side score
    int head_idx = 0;
    for (size_t i = 0; i < out.head_resolutions.size(); ++i)
        if (out.head_resolutions[i] == resolution) head_idx = static_cast<int>(i);
    const auto& cam = out.cams[head_idx];
    const int hw = cam.shape()[2] * cam.shape()[3];
    double mean = 0;
    for (int i = 0; i < hw; ++i) mean += cam.data()[static_cast<int64_t>(cls) * hw + i];
    mean /= hw;
    const float side = out.side_scores[head_idx].data()[cls];
    std::cout << "side score (t=" << resolution << ", class " << cls_name << "): " << side
              << ", unclamped map mean: " << mean << "\n";
    std::cout << "abnormal probability: " << predict_proba(out)[0] << "\n";

    fs::create_directories(out_dir);
    const Image frame = read_pnm(image_path);
    const std::string stem = fs::path(image_path).stem().string();
    const std::string prefix =
        (fs::path(out_dir) / (stem + "_cam_" + cls_name + "_t" + std::to_string(resolution)))
            .string();
    const CamExportPaths paths = export_cam(map, &frame, ck.config.input_size, prefix);
    std::cout << "heatmap: " << paths.heatmap << "\noverlay: " << paths.overlay << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"deeply supervised activation-map classifier toolkit"};
    app.require_subcommand(1);

    // synth -----------------------------------------------------------------
    auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
    std::string synth_spec, synth_out;
    int64_t synth_seed = 0;
    synth->add_option("--spec", synth_spec, "key=value spec file")->required();
    synth->add_option("--out", synth_out, "output directory")->required();
    auto* synth_seed_opt = synth->add_option("--seed", synth_seed, "overrides the spec seed");
    synth->set_config("--config");

    // split -----------------------------------------------------------------
    auto* split = app.add_subcommand("split", "patient-level fold splitting");
    std::string split_manifest, split_out;
    int split_k = 5;
    uint64_t split_seed = 0;
    bool split_stratify = false;
    split->add_option("--manifest", split_manifest, "manifest CSV")->required();
    split->add_option("--folds", split_k, "number of folds")->check(CLI::PositiveNumber);
    split->add_option("--seed", split_seed, "split seed");
    split->add_option("--out", split_out, "output folds CSV")->required();
    split->add_flag("--stratify", split_stratify, "split each class separately");
    split->set_config("--config");

    // train -----------------------------------------------------------------
    auto* train = app.add_subcommand("train", "train a model on one fold");
    TrainFlags tf;
    train->add_option("--manifest", tf.manifest, "manifest CSV")->required();
    train->add_option("--folds-file", tf.folds_file, "folds CSV from split")->required();
    train->add_option("--fold", tf.fold, "fold index (1-based)")->check(CLI::PositiveNumber);
    train->add_option("--head", tf.head, "fc-baseline | cam | cam-ds")
        ->check(CLI::IsMember({"fc-baseline", "cam", "cam-ds"}));
    train->add_option("--out", tf.out_dir, "output directory")->required();
    train->add_option("--resume", tf.resume, "checkpoint to resume from");
    train->add_option("--input-size", tf.input_size, "square input size");
    train->add_option("--stages", tf.stages, "pyramid depth T");
    train->add_option("--channels", tf.channels, "comma list, one per stage");
    train->add_option("--blocks", tf.blocks, "residual blocks per stage");
    train->add_option("--seed", tf.seed, "run seed");
    train->add_option("--base-lr", tf.tc.base_lr, "initial learning rate");
    train->add_option("--lr-decay-factor", tf.tc.lr_decay_factor, "decay factor");
    train->add_option("--lr-step", tf.tc.lr_step, "iterations per decay");
    train->add_option("--max-iterations", tf.tc.max_iterations, "iterations to run");
    train->add_option("--momentum", tf.tc.momentum, "SGD momentum");
    train->add_option("--weight-decay", tf.tc.weight_decay, "coupled weight decay");
    train->add_option("--batch-size", tf.tc.batch_size, "batch size");
    train->add_option("--flip-probability", tf.tc.flip_probability, "augmentation flip p");
    train->add_flag("--vertical-flip", tf.tc.vertical_flip, "also draw vertical flips");
    train->add_option("--val-interval", tf.tc.val_interval, "iterations between validations");
    train->add_option("--checkpoint-interval", tf.tc.checkpoint_interval,
                      "iterations between periodic checkpoints (0 = none)");
    train->set_config("--config");

    // eval ------------------------------------------------------------------
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on one fold split");
    std::string eval_ck, eval_manifest, eval_folds, eval_split = "test", eval_out;
    int eval_fold = 1, eval_batch = 16;
    eval->add_option("--checkpoint", eval_ck, "checkpoint file")->required();
    eval->add_option("--manifest", eval_manifest, "manifest CSV")->required();
    eval->add_option("--folds-file", eval_folds, "folds CSV")->required();
    eval->add_option("--fold", eval_fold, "fold index")->check(CLI::PositiveNumber);
    eval->add_option("--split", eval_split, "train | val | test")
        ->check(CLI::IsMember({"train", "val", "test"}));
    eval->add_option("--out", eval_out, "output directory")->required();
    eval->add_option("--batch-size", eval_batch, "evaluation batch size");
    eval->set_config("--config");

    // roc -------------------------------------------------------------------
    auto* roc_cmd = app.add_subcommand("roc", "pooled ROC over prediction files");
    std::vector<std::string> roc_files;
    std::string roc_out;
    std::vector<double> roc_sens = {0.95, 0.99};
    roc_cmd->add_option("--predictions", roc_files, "prediction CSV files")
        ->required()
        ->expected(-1);
    roc_cmd->add_option("--out", roc_out, "output directory")->required();
    roc_cmd->add_option("--operating-sens", roc_sens, "target sensitivities")
        ->delimiter(',');
    roc_cmd->set_config("--config");

    // agreement ---------------------------------------------------------------
    auto* agree = app.add_subcommand("agreement", "inter-rater agreement");
    std::string agree_ratings, agree_gold;
    agree->add_option("--ratings", agree_ratings, "ratings CSV (raters x items)")->required();
    agree->add_option("--gold", agree_gold, "item,label gold CSV for per-rater metrics");
    agree->set_config("--config");

    // cam ---------------------------------------------------------------------
    auto* cam = app.add_subcommand("cam", "export activation heatmaps for one image");
    std::string cam_ck, cam_image, cam_class = "abnormal", cam_out;
    int cam_resolution = 1;
    cam->add_option("--checkpoint", cam_ck, "checkpoint file")->required();
    cam->add_option("--image", cam_image, "input PPM/PGM image")->required();
    cam->add_option("--class", cam_class, "normal | abnormal");
    cam->add_option("--resolution", cam_resolution, "pyramid resolution t (1 = highest)");
    cam->add_option("--out", cam_out, "output directory")->required();
    cam->set_config("--config");

    try {
        app.parse(argc, argv);
        (void)worker_threads();  // validate CAMDS_THREADS up front

        if (synth->parsed())
            return cmd_synth(synth_spec, synth_out, synth_seed, synth_seed_opt->count() > 0);
        if (split->parsed())
            return cmd_split(split_manifest, split_k, split_seed, split_out, split_stratify);
        if (train->parsed()) return cmd_train(tf);
        if (eval->parsed())
            return cmd_eval(eval_ck, eval_manifest, eval_folds, eval_fold, eval_split, eval_out,
                            eval_batch);
        if (roc_cmd->parsed()) return cmd_roc(roc_files, roc_out, roc_sens);
        if (agree->parsed()) return cmd_agreement(agree_ratings, agree_gold);
        if (cam->parsed()) return cmd_cam(cam_ck, cam_image, cam_class, cam_resolution, cam_out);
        return 2;
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);  // prints usage, exits 0
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
