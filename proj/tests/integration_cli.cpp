#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ufnet/bundle.hpp"
#include "ufnet/experiment.hpp"
#include "ufnet/metrics.hpp"

using namespace ufnet;
namespace fs = std::filesystem;

namespace {

// one scratch tree per run; everything below uses absolute paths so the
// recorded manifests replay regardless of cwd
const fs::path kRoot = fs::temp_directory_path() / "ufnet_itest";

std::string p(const std::string& rel) { return (kRoot / rel).string(); }

int cli(std::vector<std::string> args) {
    args.insert(args.begin(), "ufnet");
    std::vector<char*> argv;
    for (std::string& a : args) argv.push_back(a.data());
    return cli_main(static_cast<int>(argv.size()), argv.data());
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

ordered_json load_json(const std::string& path) {
    return ordered_json::parse(read_file(path));
}

void expect_identical(const std::string& a, const std::string& b) {
    CAPTURE(a);
    CAPTURE(b);
    CHECK(read_file(a) == read_file(b));
}

std::vector<std::string> data_flags(const std::string& cohort) {
    return {"--data",    "tapping=" + p(cohort + "/tapping.csv"),
            "--data",    "smile=" + p(cohort + "/smile.csv"),
            "--data",    "speech=" + p(cohort + "/speech.csv"),
            "--mapping", p(cohort + "/mapping.json"),
            "--split-seed", "3"};
}

std::vector<std::string> with(std::vector<std::string> base, std::vector<std::string> extra) {
    base.insert(base.end(), extra.begin(), extra.end());
    return base;
}

// small fusion config written once, reused by several cases
void write_fuse_config(const std::string& path) {
    UfnetConfig cfg;
    cfg.tasks = {TaskId::Tapping, TaskId::Smile, TaskId::Speech};
    cfg.proj_dim = 16;
    cfg.qkv_dim = 8;
    cfg.hidden_dim = 8;
    cfg.dropout_p = 0.1;
    cfg.eta = 2.0;
    cfg.mc_rounds = 15;
    cfg.batch_size = 64;
    cfg.epochs = 20;
    cfg.opt.lr = 0.3;
    cfg.opt.momentum = 0.9;
    cfg.seed = 21;
    write_text_file(path, json_of(cfg).dump(2));
}

} // namespace

TEST_CASE("pipeline: generate, train, fuse, evaluate, analyze, replay") {
    fs::remove_all(kRoot);
    fs::create_directories(kRoot);

    // ---- gen-synth ----
    REQUIRE(cli({"gen-synth", "--subjects", "60", "--seed", "11", "--dims", "12", "10", "14",
                 "--informative", "4", "4", "4", "--signal", "0.8", "0.7", "0.9", "--out",
                 p("cohort")}) == 0);
    for (const char* f : {"tapping.csv", "smile.csv", "speech.csv", "subjects.csv",
                          "spec.json", "mapping.json", "manifest.json"})
        CHECK(fs::exists(kRoot / "cohort" / f));

    // ---- train-task: sweep, aggregate, bundles ----
    REQUIRE(cli(with({"train-task", "--task", "tapping", "--data", p("cohort/tapping.csv"),
                      "--mapping", p("cohort/mapping.json"), "--split-seed", "3", "--preset",
                      "tapping", "--epochs", "12", "--rounds", "25", "--seed", "5", "--seeds",
                      "2"},
                     {"--out", p("tt")})) == 0);
    CHECK(fs::exists(kRoot / "tt/bundle_seed5.json"));
    CHECK(fs::exists(kRoot / "tt/bundle_seed6.json"));
    const ordered_json tt_report = load_json(p("tt/report.json"));
    CHECK(tt_report.at("seeds") == ordered_json({5, 6}));
    CHECK(tt_report.at("per_seed").size() == 2);

    // the aggregate must equal a recomputation from the per-seed rows
    std::vector<double> accs;
    for (const auto& row : tt_report.at("per_seed"))
        accs.push_back(row.at("val").at("accuracy").get<double>());
    const MeanCi want = aggregate_values(accs);
    CHECK(tt_report.at("aggregate_val").at("accuracy").at("mean").get<double>() == want.mean);
    CHECK(tt_report.at("aggregate_val").at("accuracy").at("half_width").get<double>() ==
          want.half_width);

    // the recorded config keeps the overrides
    CHECK(load_json(p("tt/manifest.json")).at("args").at("config").at("epochs") == 12);

    // ---- remaining task models ----
    for (const char* t : {"smile", "speech"})
        REQUIRE(cli(with({"train-task", "--task", t, "--data",
                          p(std::string("cohort/") + t + ".csv"), "--mapping",
                          p("cohort/mapping.json"), "--split-seed", "3", "--preset", "tapping",
                          "--epochs", "12", "--rounds", "25", "--seed", "5"},
                         {"--out", p(std::string("t_") + t)})) == 0);

    // ---- train-fuse: hybrid and early heads differ in width ----
    write_fuse_config(p("fuse_cfg.json"));
    const std::vector<std::string> bundles{
        "--bundles", p("tt/bundle_seed5.json") + "," + p("t_smile/bundle_seed5.json") + "," +
                         p("t_speech/bundle_seed5.json")};
    REQUIRE(cli(with(with({"train-fuse", "--tasks", "tapping,smile,speech", "--config",
                           p("fuse_cfg.json"), "--compare-singletask"},
                          bundles),
                     with(data_flags("cohort"), {"--out", p("fuse")}))) == 0);
    REQUIRE(cli(with(with({"train-fuse", "--tasks", "tapping,smile,speech", "--config",
                           p("fuse_cfg.json"), "--fusion-mode", "early"},
                          bundles),
                     with(data_flags("cohort"), {"--out", p("fuse_early")}))) == 0);
    const FusionBundle hybrid = load_fusion_bundle(p("fuse/fusion_seed21.json"));
    const FusionBundle early = load_fusion_bundle(p("fuse_early/fusion_seed21.json"));
    CHECK(hybrid.model.head.config().in_dim == 3 * 8 + 3);
    CHECK(early.model.head.config().in_dim == 3 * 8);
    CHECK(load_json(p("fuse/report.json")).at("single_task").size() == 3);

    // ---- majority baseline: report only, no training ----
    REQUIRE(cli(with(with({"train-fuse", "--tasks", "tapping,smile,speech", "--config",
                           p("fuse_cfg.json"), "--baseline", "majority"},
                          bundles),
                     with(data_flags("cohort"), {"--out", p("maj")}))) == 0);
    CHECK(load_json(p("maj/report.json")).at("model") == "majority");
    CHECK(!fs::exists(kRoot / "maj/fusion_seed21.json"));

    // ---- eval: no withholding keeps everything ----
    REQUIRE(cli(with(with({"eval", "--bundle", p("fuse/fusion_seed21.json"), "--withhold",
                           "none"},
                          data_flags("cohort")),
                     {"--out", p("ev_none")})) == 0);
    const ordered_json ev_none = load_json(p("ev_none/eval.json"));
    CHECK(ev_none.at("retained").at("coverage").get<double>() == 1.0);
    CHECK(ev_none.at("withheld").at("count") == 0);

    // ---- eval: mc-ci withholding stays consistent across files ----
    REQUIRE(cli(with(with({"eval", "--bundle", p("fuse/fusion_seed21.json"), "--withhold",
                           "mc-ci"},
                          data_flags("cohort")),
                     {"--out", p("ev_mcci")})) == 0);
    const ordered_json ev_mcci = load_json(p("ev_mcci/eval.json"));
    const std::size_t n_test = ev_mcci.at("test_sessions").get<std::size_t>();
    const std::size_t withheld = ev_mcci.at("withheld").at("count").get<std::size_t>();
    const std::string csv = read_file(p("ev_mcci/predictions.csv"));
    std::size_t lines = 0, withheld_rows = 0;
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line); // header
    while (std::getline(in, line)) {
        ++lines;
        if (line.find(",withheld,") != std::string::npos) ++withheld_rows;
    }
    CHECK(lines == n_test);
    CHECK(withheld_rows == withheld);
    const double cov = ev_mcci.at("retained").at("coverage").get<double>();
    CHECK(cov >= 0.0);
    CHECK(cov <= 1.0);
    CHECK(cov == doctest::Approx(1.0 - double(withheld) / n_test).epsilon(1e-12));

    // ---- subgroup report carries all four analyses ----
    REQUIRE(cli(with(with({"subgroup", "--bundle", p("fuse/fusion_seed21.json")},
                          data_flags("cohort")),
                     {"--out", p("sg")})) == 0);
    const ordered_json sg = load_json(p("sg/subgroup.json"));
    for (const char* key : {"sex", "ethnicity", "age", "duration"}) CHECK(sg.contains(key));
    CHECK(sg.at("sex").at("groups").size() == 2);

    // ---- search picks the argmax trial ----
    REQUIRE(cli(with({"search", "--family", "task", "--task", "tapping", "--data",
                      p("cohort/tapping.csv"), "--mapping", p("cohort/mapping.json"),
                      "--split-seed", "3", "--trials", "3", "--search-seed", "9", "--out",
                      p("srch")},
                     {})) == 0);
    const ordered_json trials = load_json(p("srch/trials.json"));
    const ordered_json best = load_json(p("srch/best.json"));
    REQUIRE(trials.size() == 3);
    double top = -1.0;
    for (const auto& t : trials) top = std::max(top, t.at("val_auroc").get<double>());
    CHECK(best.at("val_auroc").get<double>() == top);

    // ---- replays are byte identical ----
    REQUIRE(cli({"rerun", p("tt/manifest.json"), "--out", p("tt_replay")}) == 0);
    for (const char* f : {"report.json", "report.txt", "bundle_seed5.json",
                          "bundle_seed6.json"})
        expect_identical(p(std::string("tt/") + f), p(std::string("tt_replay/") + f));
    REQUIRE(cli({"rerun", p("fuse/manifest.json"), "--out", p("fuse_replay")}) == 0);
    for (const char* f : {"report.json", "fusion_seed21.json"})
        expect_identical(p(std::string("fuse/") + f), p(std::string("fuse_replay/") + f));
    REQUIRE(cli({"rerun", p("ev_mcci/manifest.json"), "--out", p("ev_replay")}) == 0);
    for (const char* f : {"eval.json", "eval.txt", "predictions.csv"})
        expect_identical(p(std::string("ev_mcci/") + f), p(std::string("ev_replay/") + f));
    REQUIRE(cli({"rerun", p("srch/manifest.json"), "--out", p("srch_replay")}) == 0);
    expect_identical(p("srch/trials.json"), p("srch_replay/trials.json"));
}

TEST_CASE("pipeline: conformal evaluation on a cohort with enough calibration data") {
    REQUIRE(cli({"gen-synth", "--subjects", "150", "--seed", "11", "--dims", "12", "10", "14",
                 "--informative", "4", "4", "4", "--signal", "0.8", "0.7", "0.9", "--out",
                 p("cohort_big")}) == 0);
    REQUIRE(cli({"train-task", "--task", "tapping", "--data", p("cohort_big/tapping.csv"),
                 "--mapping", p("cohort_big/mapping.json"), "--split-seed", "3", "--preset",
                 "tapping", "--epochs", "12", "--rounds", "25", "--seed", "5", "--out",
                 p("tt_big")}) == 0);
    REQUIRE(cli({"eval", "--bundle", p("tt_big/bundle_seed5.json"), "--data",
                 "tapping=" + p("cohort_big/tapping.csv"), "--mapping",
                 p("cohort_big/mapping.json"), "--split-seed", "3", "--withhold", "conformal",
                 "--platt", "--smoothing", "0.1", "--out", p("ev_conf")}) == 0);
    const ordered_json ev = load_json(p("ev_conf/eval.json"));
    CHECK(ev.at("conformal").at("qhat").is_number());
    CHECK(ev.at("conformal").at("calibration_size").get<std::size_t>() >= 10);
    CHECK(ev.at("conformal").at("smoothing_used").get<double>() == 0.1);
    CHECK(ev.at("conformal").at("platt").contains("a"));

    // conformal replay includes the retrain; still byte identical
    REQUIRE(cli({"rerun", p("ev_conf/manifest.json"), "--out", p("ev_conf_replay")}) == 0);
    expect_identical(p("ev_conf/eval.json"), p("ev_conf_replay/eval.json"));
    expect_identical(p("ev_conf/predictions.csv"), p("ev_conf_replay/predictions.csv"));
}

TEST_CASE("pipeline: refusals and exit codes") {
    // unknown preset lists the menu and exits 2
    CHECK(cli({"train-task", "--task", "smile", "--data", p("cohort/smile.csv"), "--preset",
               "bogus", "--out", p("x1")}) == 2);
    // --platt outside conformal is a usage error
    CHECK(cli(with(with({"eval", "--bundle", p("tt/bundle_seed5.json"), "--withhold", "mc-ci",
                         "--platt"},
                        data_flags("cohort")),
                   {"--out", p("x2")})) == 2);
    // unparsable flags exit 2
    CHECK(cli({"train-task", "--no-such-flag"}) == 2);
    // missing data file exits 3
    CHECK(cli({"train-task", "--task", "smile", "--data", p("cohort/absent.csv"), "--preset",
               "smile", "--out", p("x3")}) == 3);

    // bundles from different subject splits refuse to fuse
    REQUIRE(cli({"train-task", "--task", "smile", "--data", p("cohort/smile.csv"), "--mapping",
                 p("cohort/mapping.json"), "--split-seed", "4", "--preset", "tapping",
                 "--epochs", "5", "--seed", "5", "--out", p("t_smile_other")}) == 0);
    CHECK(cli(with(with({"train-fuse", "--tasks", "tapping,smile,speech", "--config",
                         p("fuse_cfg.json"), "--bundles",
                         p("tt/bundle_seed5.json") + "," +
                             p("t_smile_other/bundle_seed5.json") + "," +
                             p("t_speech/bundle_seed5.json")},
                        data_flags("cohort")),
                   {"--out", p("x4")})) == 3);

    // silently changed training data refuses to evaluate or replay
    const std::string csv = read_file(p("cohort/tapping.csv"));
    write_text_file(p("cohort/tapping.csv"), csv + "#\n");
    CHECK(cli(with(with({"eval", "--bundle", p("tt/bundle_seed5.json"), "--withhold", "none"},
                        data_flags("cohort")),
                   {"--out", p("x5")})) == 3);
    CHECK(cli({"rerun", p("tt/manifest.json"), "--out", p("x6")}) == 3);
    write_text_file(p("cohort/tapping.csv"), csv);

    // env var sets the output directory when --out is absent
    setenv("UFNET_OUT_DIR", p("env_out").c_str(), 1);
    CHECK(cli({"gen-synth", "--subjects", "12", "--seed", "1"}) == 0);
    unsetenv("UFNET_OUT_DIR");
    CHECK(fs::exists(kRoot / "env_out/subjects.csv"));
}
