#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "camds/dataset.hpp"
#include "camds/image_io.hpp"

using namespace camds;
namespace fs = std::filesystem;

#ifndef CAMDS_BIN
#error "CAMDS_BIN must point at the camds executable"
#endif

namespace {

struct RunResult {
    int exit_code;
    std::string output;
};

RunResult run(const std::string& args) {
    const std::string out_file = (fs::temp_directory_path() / "camds_cli_out.txt").string();
    const std::string cmd = std::string(CAMDS_BIN) + " " + args + " > " + out_file + " 2>&1";
    const int status = std::system(cmd.c_str());
    RunResult res;
    res.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream in(out_file);
    res.output.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    return res;
}

fs::path work_dir() {
    const auto dir = fs::temp_directory_path() / "camds_cli_work";
    fs::create_directories(dir);
    return dir;
}

std::string write_spec(int patients_per_class, int frames, int size, uint64_t seed) {
    const auto path = work_dir() / "synth.spec";
    std::ofstream out(path);
    out << "patients_per_class=" << patients_per_class << "\n"
        << "frames_per_patient_min=" << frames << "\n"
        << "frames_per_patient_max=" << frames << "\n"
        << "image_size=" << size << "\n"
        << "seed=" << seed << "\n";
    return path.string();
}

std::string extract_line(const std::string& output, const std::string& prefix) {
    size_t pos = output.find(prefix);
    if (pos == std::string::npos) return "";
    const size_t end = output.find('\n', pos);
    return output.substr(pos, end - pos);
}

}  // namespace

TEST_CASE("help exits 0 for every subcommand, without side effects") {
    CHECK(run("--help").exit_code == 0);
    for (const char* sub : {"synth", "split", "train", "eval", "roc", "agreement", "cam"}) {
        auto res = run(std::string(sub) + " --help");
        CHECK(res.exit_code == 0);
        CHECK(res.output.find("--help") != std::string::npos);
    }
}

TEST_CASE("usage errors exit 2") {
    CHECK(run("").exit_code == 2);
    CHECK(run("unknown-subcommand").exit_code == 2);
    CHECK(run("synth --spec /nonexistent.spec").exit_code == 2);       // missing --out
    CHECK(run("split --manifest x.csv").exit_code == 2);               // missing --out
    CHECK(run("train --manifest x.csv --folds-file y.csv").exit_code == 2);
    CHECK(run("train --manifest x --folds-file y --out z --head nonsense").exit_code == 2);
}

TEST_CASE("CAMDS_THREADS is validated") {
    auto res = run("synth --spec /nonexistent --out /tmp/x --seed 1");
    (void)res;  // baseline behaviour checked elsewhere
    const std::string out_file = (fs::temp_directory_path() / "camds_cli_out.txt").string();
    const std::string cmd = std::string("CAMDS_THREADS=banana ") + CAMDS_BIN +
                            " split --manifest a --out b > " + out_file + " 2>&1";
    const int status = std::system(cmd.c_str());
    CHECK(WEXITSTATUS(status) == 2);
}

TEST_CASE("synth: runs, digests identically per seed, and differs across seeds") {
    const auto dir = work_dir();
    const std::string spec = write_spec(1, 2, 32, 9);

    fs::remove_all(dir / "corpus_a");
    auto a = run("synth --spec " + spec + " --out " + (dir / "corpus_a").string());
    REQUIRE(a.exit_code == 0);
    const std::string digest_a = extract_line(a.output, "corpus digest:");
    CHECK(!digest_a.empty());

    fs::remove_all(dir / "corpus_b");
    auto b = run("synth --spec " + spec + " --out " + (dir / "corpus_b").string());
    REQUIRE(b.exit_code == 0);
    // the digest covers relative paths and contents, so reruns match exactly
    CHECK(extract_line(b.output, "corpus digest:") == digest_a);

    fs::remove_all(dir / "corpus_c");
    auto c = run("synth --spec " + spec + " --out " + (dir / "corpus_c").string() + " --seed 10");
    REQUIRE(c.exit_code == 0);
    CHECK(extract_line(c.output, "corpus digest:") != digest_a);
}

TEST_CASE("split: prints the appendix-style tables and respects the fold file schema") {
    const auto dir = work_dir();
    const std::string spec = write_spec(10, 2, 32, 3);
    fs::remove_all(dir / "corpus_split");
    REQUIRE(run("synth --spec " + spec + " --out " + (dir / "corpus_split").string()).exit_code ==
            0);
    const std::string manifest = (dir / "corpus_split" / "manifest.csv").string();
    const std::string folds = (dir / "split_folds.csv").string();
    auto res = run("split --manifest " + manifest + " --folds 2 --seed 4 --out " + folds);
    REQUIRE(res.exit_code == 0);
    CHECK(res.output.find("number of patients per fold") != std::string::npos);
    CHECK(res.output.find("number of frames per fold") != std::string::npos);
    CHECK(res.output.find("training (normal + abnormal)\t16\t16") != std::string::npos);

    const auto loaded = load_folds(folds);
    REQUIRE(loaded.size() == 2);
    CHECK(loaded[0].train.size() == 16);
    CHECK(loaded[0].val.size() == 2);
    CHECK(loaded[0].test.size() == 2);
}

TEST_CASE("train/eval/cam/roc: end-to-end on a miniature corpus") {
    const auto dir = work_dir();
    const std::string spec = write_spec(4, 6, 32, 11);
    fs::remove_all(dir / "corpus_e2e");
    REQUIRE(run("synth --spec " + spec + " --out " + (dir / "corpus_e2e").string()).exit_code ==
            0);
    const std::string manifest = (dir / "corpus_e2e" / "manifest.csv").string();
    const std::string folds = (dir / "e2e_folds.csv").string();
    REQUIRE(run("split --manifest " + manifest + " --folds 2 --seed 1 --stratify --out " + folds)
                .exit_code == 0);

    // zero-iteration run still emits a checkpoint (exit 0)
    fs::remove_all(dir / "run0");
    auto res0 = run("train --manifest " + manifest + " --folds-file " + folds +
                    " --fold 1 --head cam-ds --out " + (dir / "run0").string() +
                    " --input-size 32 --stages 2 --channels 4,6 --blocks 1 --seed 3"
                    " --max-iterations 0");
    REQUIRE(res0.exit_code == 0);
    CHECK(fs::exists(dir / "run0" / "checkpoint_final.camds"));
    CHECK(fs::exists(dir / "run0" / "history.csv"));

    // same seed twice: identical checkpoint bytes
    fs::remove_all(dir / "run1");
    fs::remove_all(dir / "run2");
    const std::string train_args = "train --manifest " + manifest + " --folds-file " + folds +
                                   " --fold 1 --head cam-ds --input-size 32 --stages 2"
                                   " --channels 4,6 --blocks 1 --seed 3 --max-iterations 6"
                                   " --batch-size 4 --base-lr 1e-3 --val-interval 3 --out ";
    REQUIRE(run(train_args + (dir / "run1").string()).exit_code == 0);
    REQUIRE(run(train_args + (dir / "run2").string()).exit_code == 0);
    auto slurp = [](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    };
    CHECK(slurp(dir / "run1" / "checkpoint_final.camds") ==
          slurp(dir / "run2" / "checkpoint_final.camds"));
    CHECK(slurp(dir / "run1" / "history.csv") == slurp(dir / "run2" / "history.csv"));

    // eval writes one prediction row per informative test frame
    fs::remove_all(dir / "eval1");
    auto ev = run("eval --checkpoint " + (dir / "run1" / "checkpoint_final.camds").string() +
                  " --manifest " + manifest + " --folds-file " + folds + " --fold 1 --out " +
                  (dir / "eval1").string());
    REQUIRE(ev.exit_code == 0);
    std::ifstream pred(dir / "eval1" / "predictions.csv");
    int rows = -1;  // header
    for (std::string line; std::getline(pred, line);) ++rows;
    CHECK(rows == 12);  // 2 test patients x 6 frames

    // roc on the predictions
    fs::remove_all(dir / "roc1");
    auto rc = run("roc --predictions " + (dir / "eval1" / "predictions.csv").string() +
                  " --out " + (dir / "roc1").string() + " --operating-sens 0.95");
    REQUIRE(rc.exit_code == 0);
    CHECK(rc.output.find("auc:") != std::string::npos);
    CHECK(fs::exists(dir / "roc1" / "roc.csv"));
    CHECK(fs::exists(dir / "roc1" / "roc.pgm"));

    // cam export on one frame
    const auto records = load_manifest(manifest);
    std::string abnormal_frame;
    for (const auto& r : records)
        if (r.label == FrameLabel::Abnormal) {
            abnormal_frame = resolve_frame_path(manifest, r.path);
            break;
        }
    REQUIRE(!abnormal_frame.empty());
    fs::remove_all(dir / "cam1");
    auto cm = run("cam --checkpoint " + (dir / "run1" / "checkpoint_final.camds").string() +
                  " --image " + abnormal_frame + " --class abnormal --resolution 1 --out " +
                  (dir / "cam1").string());
    REQUIRE(cm.exit_code == 0);
    CHECK(cm.output.find("side score") != std::string::npos);
    bool found_pgm = false;
    for (const auto& e : fs::directory_iterator(dir / "cam1"))
        if (e.path().extension() == ".pgm") found_pgm = true;
    CHECK(found_pgm);

    // invalid resolution exits 2
    auto bad = run("cam --checkpoint " + (dir / "run1" / "checkpoint_final.camds").string() +
                   " --image " + abnormal_frame + " --resolution 9 --out " +
                   (dir / "cam_bad").string());
    CHECK(bad.exit_code == 2);

    // resume: 3 iterations then 3 more equals 6 straight
    fs::remove_all(dir / "run_short");
    REQUIRE(run("train --manifest " + manifest + " --folds-file " + folds +
                " --fold 1 --head cam-ds --input-size 32 --stages 2 --channels 4,6 --blocks 1"
                " --seed 3 --max-iterations 3 --batch-size 4 --base-lr 1e-3 --val-interval 0"
                " --out " + (dir / "run_short").string())
                .exit_code == 0);
    fs::remove_all(dir / "run_resumed");
    REQUIRE(run("train --manifest " + manifest + " --folds-file " + folds +
                " --fold 1 --head cam-ds --input-size 32 --stages 2 --channels 4,6 --blocks 1"
                " --seed 999 --max-iterations 6 --batch-size 4 --base-lr 1e-3 --val-interval 0"
                " --resume " + (dir / "run_short" / "checkpoint_final.camds").string() +
                " --out " + (dir / "run_resumed").string())
                .exit_code == 0);
    // resumed checkpoint carries the original seed, so bytes match run1
    CHECK(slurp(dir / "run_resumed" / "checkpoint_final.camds") ==
          slurp(dir / "run1" / "checkpoint_final.camds"));
}

TEST_CASE("eval: empty split errors with exit 1") {
    const auto dir = work_dir();
    // craft a folds file whose test split has a patient with no frames
    const std::string manifest = (dir / "empty_manifest.csv").string();
    {
        std::ofstream out(manifest);
        out << "patient_id,frame_index,path,label,informative\n";
        out << "p1,0,nowhere.ppm,normal,1\n";
    }
    const std::string folds = (dir / "empty_folds.csv").string();
    {
        std::ofstream out(folds);
        out << "fold,role,patient_id\n1,train,p1\n1,test,p_ghost\n";
    }
    auto res = run("eval --checkpoint /nonexistent.camds --manifest " + manifest +
                   " --folds-file " + folds + " --fold 1 --out " + (dir / "ev").string());
    CHECK(res.exit_code == 1);  // checkpoint missing -> runtime failure
}

TEST_CASE("roc: one-class input reports AUC undefined with exit 1") {
    const auto dir = work_dir();
    const std::string pred = (dir / "oneclass.csv").string();
    {
        std::ofstream out(pred);
        out << "patient_id,frame_index,prob,label\np1,0,0.9,1\np1,1,0.7,1\n";
    }
    auto res = run("roc --predictions " + pred + " --out " + (dir / "roc_bad").string());
    CHECK(res.exit_code == 1);
    CHECK(res.output.find("AUC undefined") != std::string::npos);
}

TEST_CASE("roc: perfectly separated predictions give AUC 1") {
    const auto dir = work_dir();
    const std::string pred = (dir / "sep.csv").string();
    {
        std::ofstream out(pred);
        out << "patient_id,frame_index,prob,label\n";
        out << "p1,0,0.9,1\np1,1,0.8,1\np2,0,0.2,0\np2,1,0.1,0\n";
    }
    fs::remove_all(dir / "roc_sep");
    auto res = run("roc --predictions " + pred + " --out " + (dir / "roc_sep").string());
    REQUIRE(res.exit_code == 0);
    CHECK(res.output.find("auc: 1.000000") != std::string::npos);
}

TEST_CASE("agreement: identical raters give alpha 1, gold metrics recount") {
    const auto dir = work_dir();
    const std::string ratings = (dir / "ratings.csv").string();
    {
        std::ofstream out(ratings);
        out << "rater,i1,i2,i3,i4\n";
        out << "a,normal,abnormal,normal,abnormal\n";
        out << "b,normal,abnormal,normal,abnormal\n";
    }
    auto res = run("agreement --ratings " + ratings);
    REQUIRE(res.exit_code == 0);
    CHECK(res.output.find("krippendorff_alpha: 1.000000") != std::string::npos);

    const std::string gold = (dir / "gold.csv").string();
    {
        std::ofstream out(gold);
        out << "item,label\ni1,normal\ni2,abnormal\ni3,abnormal\ni4,abnormal\n";
    }
    auto res2 = run("agreement --ratings " + ratings + " --gold " + gold);
    REQUIRE(res2.exit_code == 0);
    // each rater: tp=2 fn=1 tn=1 fp=0 -> sens 2/3, spec 1, acc 3/4
    CHECK(res2.output.find("accuracy\t75.0\t75.0\t75.0") != std::string::npos);
}

TEST_CASE("agreement: the 2x4 hand example value") {
    const auto dir = work_dir();
    const std::string ratings = (dir / "ratings24.csv").string();
    {
        std::ofstream out(ratings);
        out << "rater,i1,i2,i3,i4\n";
        out << "a,A,A,B,B\n";
        out << "b,A,B,B,B\n";
    }
    auto res = run("agreement --ratings " + ratings);
    REQUIRE(res.exit_code == 0);
    // 1 - (2/8)/(30/56) = 0.533333...
    CHECK(res.output.find("krippendorff_alpha: 0.533333") != std::string::npos);
}
