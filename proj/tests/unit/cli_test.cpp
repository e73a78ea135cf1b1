#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <regex>
#include <sstream>

#include <opencv2/imgcodecs.hpp>

#include "fixtures.hpp"
#include "osteo/cli.hpp"
#include "osteo/config.hpp"
#include "osteo/report.hpp"
#include "osteo/synth.hpp"
#include "osteo/train.hpp"

using namespace osteo;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    int code = -1;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string quote(const std::string& s) {
    std::string q = "'";
    for (char c : s) q += c == '\'' ? std::string("'\\''") : std::string(1, c);
    return q + "'";
}

/// Runs the installed binary in a child process.
Outcome osteo_exe(const std::vector<std::string>& args) {
    static int counter = 0;
    const auto dir = fs::temp_directory_path() / "osteo_cli_capture";
    fs::create_directories(dir);
    const auto out = dir / ("out" + std::to_string(counter));
    const auto err = dir / ("err" + std::to_string(counter++));
    std::string cmd = quote(OSTEO_CLI_PATH);
    for (const auto& a : args) cmd += " " + quote(a);
    cmd += " >" + quote(out.string()) + " 2>" + quote(err.string());
    const int status = std::system(cmd.c_str());
    Outcome o;
    o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    o.out = slurp(out);
    o.err = slurp(err);
    return o;
}

Outcome osteo_run(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    Outcome o;
    o.code = cli::run(args, out, err);
    o.out = out.str();
    o.err = err.str();
    return o;
}

bool well_formed_error(const std::string& err, int code) {
    static const std::regex line(R"(^error:(\d):([a-z_]+):[^\n]+\n$)");
    std::smatch m;
    return std::regex_match(err, m, line) && std::stoi(m[1]) == code;
}

const char* kTinyModel =
    "[model]\npreset = toy\ninput_size = 32\nbase_width = 2\nhead_width = 8\ncbam_reduction = 4\nblocks = 1,1,1,1\n";

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream f(p);
    f << text;
}

RunConfig parse_config(const std::string& text) {
    std::istringstream in(text);
    return parse_run_config(in, "/base", "test.ini");
}

}  // namespace

TEST(Cli, HelpAndUsage) {
    auto help = osteo_exe({"--help"});
    EXPECT_EQ(help.code, 0);
    for (const char* sub : {"synth", "split", "train", "eval", "gradcam", "report"})
        EXPECT_NE(help.out.find(sub), std::string::npos) << sub;
    EXPECT_NE(help.out.find("Exit codes"), std::string::npos);

    auto none = osteo_exe({});
    EXPECT_EQ(none.code, 2);
    EXPECT_TRUE(well_formed_error(none.err, 2)) << none.err;

    auto bogus = osteo_exe({"split", "--manifest", "x.csv", "--no-such-flag"});
    EXPECT_EQ(bogus.code, 2);
    EXPECT_TRUE(well_formed_error(bogus.err, 2)) << bogus.err;
}

TEST(Cli, ErrorCodes) {
    const auto dir = check::scratch_dir("cli_errors");
    auto missing = osteo_exe({"split", "--manifest", (dir / "nope.csv").string(), "--seed", "1"});
    EXPECT_EQ(missing.code, 3);
    EXPECT_TRUE(well_formed_error(missing.err, 3)) << missing.err;

    write_text(dir / "m.csv", "path,kl_grade\na.png,1\n");
    auto ratios = osteo_exe({"split", "--manifest", (dir / "m.csv").string(), "--ratios", "7:2", "--seed", "1"});
    EXPECT_EQ(ratios.code, 4);
    EXPECT_TRUE(well_formed_error(ratios.err, 4)) << ratios.err;

    write_text(dir / "bad.ini", "[data]\nmanifest = m.csv\n[train]\nwarmup = 3\n");
    auto cfg = osteo_exe({"train", "--config", (dir / "bad.ini").string(), "--out", (dir / "run").string()});
    EXPECT_EQ(cfg.code, 4);
    EXPECT_TRUE(well_formed_error(cfg.err, 4)) << cfg.err;
    EXPECT_NE(cfg.err.find("warmup"), std::string::npos);

    EXPECT_EQ(static_cast<int>(NumericError("x").code()), 5);
    EXPECT_EQ(static_cast<int>(UndefinedKappaError("x").code()), 5);
    EXPECT_EQ(static_cast<int>(CheckpointError("x").code()), 3);
    EXPECT_EQ(static_cast<int>(LookupError("x").code()), 3);
    EXPECT_EQ(static_cast<int>(DimensionError("x").code()), 4);
}

TEST(Cli, SynthAndSplit) {
    const auto dir = check::scratch_dir("cli_split");
    auto s = osteo_run({"synth", "--out", dir.string(), "--per-grade", "10", "--size", "32"});
    ASSERT_EQ(s.code, 0) << s.err;
    EXPECT_NE(s.out.find("seed="), std::string::npos);
    EXPECT_NE(s.out.find("wrote 50 images"), std::string::npos);

    const auto manifest = (dir / "manifest.csv").string();
    auto a = osteo_run({"split", "--manifest", manifest, "--seed", "3", "--out", (dir / "a.csv").string()});
    ASSERT_EQ(a.code, 0) << a.err;
    EXPECT_NE(a.out.find("train=35 test=10 val=5"), std::string::npos) << a.out;
    for (int g = 0; g < 5; ++g)
        EXPECT_NE(a.out.find("grade " + std::to_string(g) + ": train=7 test=2 val=1"), std::string::npos);
    auto b = osteo_run({"split", "--manifest", manifest, "--seed", "3", "--out", (dir / "b.csv").string()});
    EXPECT_EQ(slurp(dir / "a.csv"), slurp(dir / "b.csv"));
    EXPECT_EQ(load_manifest(dir / "a.csv").split_size(Split::test), 10u);

    auto g = osteo_run({"split", "--manifest", manifest, "--seed", "3", "--group-by", "visit"});
    EXPECT_EQ(g.code, 4);
}

TEST(Cli, TrainEvalGradcamReport) {
    const auto dir = check::scratch_dir("cli_flow");
    ASSERT_EQ(osteo_run({"synth", "--out", (dir / "data").string(), "--per-grade", "6", "--size", "32", "--seed", "2"}).code, 0);
    ASSERT_EQ(osteo_run({"split", "--manifest", (dir / "data" / "manifest.csv").string(), "--seed", "2"}).code, 0);
    write_text(dir / "run.ini", std::string("[data]\nmanifest = data/manifest.csv\n") + kTinyModel +
                                    "[train]\nlearning_rate = 0.01\nepochs = 2\nbatch_size = 8\nseed = 4\n");

    auto t = osteo_exe({"train", "--config", (dir / "run.ini").string(), "--out", (dir / "run").string()});
    ASSERT_EQ(t.code, 0) << t.err;
    EXPECT_EQ(t.out.find("randomly chosen"), std::string::npos);
    EXPECT_NE(t.out.find("epoch 2 "), std::string::npos);
    EXPECT_TRUE(fs::exists(dir / "run" / "last.ckpt"));
    EXPECT_TRUE(fs::exists(dir / "run" / "best.ckpt"));
    std::istringstream log(slurp(dir / "run" / "epoch_log.csv"));
    std::string line;
    std::getline(log, line);
    EXPECT_EQ(line, "epoch,train_loss,val_acc,val_mae,val_qwk");

    // The CLI must report exactly what the library computes.
    const auto ckpt = (dir / "run" / "last.ckpt").string();
    const auto manifest_path = (dir / "data" / "manifest.csv").string();
    auto ev = osteo_exe({"eval", "--checkpoint", ckpt, "--manifest", manifest_path, "--split", "test", "--report",
                         (dir / "metrics.csv").string(), "--confusion", (dir / "cm.csv").string()});
    ASSERT_EQ(ev.code, 0) << ev.err;
    const auto lib = evaluate(load_checkpoint(ckpt), load_manifest(manifest_path), Split::test);
    std::ostringstream expect;
    expect << std::setprecision(17) << "samples=" << lib.report.samples << " accuracy=" << lib.report.accuracy
           << " mae=" << lib.report.mae << " qwk=" << lib.report.qwk << '\n';
    EXPECT_EQ(ev.out, expect.str());
    std::ifstream cm_in(dir / "cm.csv");
    EXPECT_EQ(ConfusionMatrix::read_csv(cm_in), lib.confusion);
    EXPECT_NE(slurp(dir / "metrics.csv").find("accuracy,"), std::string::npos);

    auto rp = osteo_exe({"report", "--confusion", (dir / "cm.csv").string(), "--render", (dir / "cm.png").string()});
    ASSERT_EQ(rp.code, 0) << rp.err;
    EXPECT_NE(rp.out.find("samples=" + std::to_string(lib.confusion.total())), std::string::npos);
    EXPECT_FALSE(cv::imread((dir / "cm.png").string()).empty());

    const auto image = load_manifest(manifest_path).resolve(load_manifest(manifest_path).records[0]);
    auto gc = osteo_exe({"gradcam", "--checkpoint", ckpt, "--image", image.string(), "--class", "0", "--class", "4",
                         "--layer", "merged", "--layer", "stage2.branch1", "--out", (dir / "cam").string(), "--alpha",
                         "0.4"});
    ASSERT_EQ(gc.code, 0) << gc.err;
    const auto stem = image.stem().string();
    for (const char* cls : {"0", "4"})
        for (const char* layer : {"merged", "stage2.branch1"}) {
            const auto p = dir / "cam" / (stem + "_grade" + cls + "_" + layer + ".png");
            const auto img = cv::imread(p.string(), cv::IMREAD_UNCHANGED);
            ASSERT_FALSE(img.empty()) << p;
            EXPECT_EQ(img.channels(), 3);
            EXPECT_EQ(img.cols, 32);
        }

    auto bad_layer = osteo_exe({"gradcam", "--checkpoint", ckpt, "--image", image.string(), "--class", "0", "--layer",
                                "nowhere", "--out", (dir / "cam").string()});
    EXPECT_EQ(bad_layer.code, 3);
    EXPECT_TRUE(well_formed_error(bad_layer.err, 3)) << bad_layer.err;
    auto bad_alpha = osteo_exe({"gradcam", "--checkpoint", ckpt, "--image", image.string(), "--class", "0", "--out",
                                (dir / "cam").string(), "--alpha", "1.5"});
    EXPECT_EQ(bad_alpha.code, 2);

    auto garbage = dir / "garbage.ckpt";
    write_text(garbage, "not a checkpoint at all");
    auto bad_ckpt = osteo_exe({"eval", "--checkpoint", garbage.string(), "--manifest", manifest_path});
    EXPECT_EQ(bad_ckpt.code, 3);
    EXPECT_NE(bad_ckpt.err.find("magic"), std::string::npos);

    // Resume continues the epoch count.
    write_text(dir / "more.ini", std::string("[data]\nmanifest = data/manifest.csv\n") + kTinyModel +
                                     "[train]\nlearning_rate = 0.01\nepochs = 3\nbatch_size = 8\nseed = 4\n");
    auto more = osteo_run({"train", "--config", (dir / "more.ini").string(), "--out", (dir / "run2").string(),
                           "--resume", ckpt});
    ASSERT_EQ(more.code, 0) << more.err;
    EXPECT_NE(more.out.find("epoch 3 "), std::string::npos);
    EXPECT_EQ(more.out.find("epoch 1 "), std::string::npos);
}

TEST(RunConfig, Defaults) {
    auto rc = parse_config("[data]\nmanifest = m.csv\n");
    EXPECT_EQ(rc.manifest, fs::path("/base/m.csv"));
    EXPECT_EQ(rc.network.input_size, 224);
    EXPECT_EQ(rc.train.batch_size, 24);
    EXPECT_EQ(rc.train.learning_rate, 5e-4);
    EXPECT_EQ(rc.train.epochs, 30);
    EXPECT_FALSE(rc.seed_given);
    EXPECT_EQ(rc.train.loss, LossKind::ordinal);
}

TEST(RunConfig, Overrides) {
    auto rc = parse_config(
        "[data]\nmanifest = /abs/m.csv\n[model]\npreset = toy\ncbam = off\n[train]\nseed = 9\nepochs = 3\n"
        "[augment]\nenabled = on\nrotation_degrees = 5\n[loss]\ntype = cross_entropy\n");
    EXPECT_EQ(rc.manifest, fs::path("/abs/m.csv"));
    EXPECT_EQ(rc.network.input_size, 64);
    EXPECT_FALSE(rc.network.use_cbam);
    EXPECT_TRUE(rc.seed_given);
    EXPECT_EQ(rc.train.seed, 9u);
    EXPECT_TRUE(rc.train.augmentation.enabled);
    EXPECT_EQ(rc.train.augmentation.rotation_degrees, 5.0);
    EXPECT_EQ(rc.train.loss, LossKind::cross_entropy);
    auto p = parse_config("[data]\nmanifest = m\n[loss]\npenalty = 1 1 1 1 1; 1 1 1 1 1; 1 1 1 1 1; 1 1 1 1 1; 1 1 1 1 1\n");
    EXPECT_EQ(p.train.penalty(4, 0), 1.0);
}

TEST(RunConfig, Rejections) {
    EXPECT_THROW(parse_config("[model]\npreset = toy\n"), ConfigError);
    EXPECT_THROW(parse_config("[data]\nmanifest = m\n[optim]\nlr = 1\n"), ConfigError);
    EXPECT_THROW(parse_config("[data]\nmanifest = m\n[train]\nepochs = many\n"), ConfigError);
    EXPECT_THROW(parse_config("[data]\nmanifest = m\n[model]\nblocks = 1,2\n"), ConfigError);
    EXPECT_THROW(parse_config("[data]\nmanifest = m\n[model]\npreset = huge\n"), ConfigError);
    EXPECT_THROW(parse_config("[data]\nmanifest = m\n[augment]\nrotation_degrees = 30\n"), ConfigError);
    EXPECT_THROW(parse_config("[data]\nmanifest = m\n[loss]\ntype = hinge\n"), ConfigError);
    EXPECT_THROW(parse_config("[data]\nmanifest = m\n[model]\ninput_size = 100\n"), ConfigError);
    EXPECT_THROW(load_run_config("/nonexistent/run.ini"), ConfigError);
}

TEST(Report, ConfusionImage) {
    ConfusionMatrix cm;
    for (int i = 0; i < 5; ++i) cm.counts[i][i] = 3;
    cm.counts[0][4] = 1;
    const auto img = confusion_image(cm);
    EXPECT_FALSE(img.empty());
    EXPECT_EQ(img.type(), CV_8UC3);
    EXPECT_EQ(img.rows, img.cols);
}
