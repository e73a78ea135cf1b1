#include "osteo/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <random>
#include <sstream>

#include <CLI11.hpp>

#include "osteo/checkpoint.hpp"
#include "osteo/config.hpp"
#include "osteo/data.hpp"
#include "osteo/gradcam.hpp"
#include "osteo/report.hpp"
#include "osteo/synth.hpp"
#include "osteo/train.hpp"

namespace osteo::cli {

namespace {

namespace fs = std::filesystem;

constexpr const char* kFooter =
    "Exit codes: 0 success, 2 usage, 3 data, 4 config, 5 numeric (non-finite values).\n"
    "OSTEO_THREADS sets image decoder threads (0 = single-threaded, deterministic).";

std::string one_line(std::string s) {
    for (auto& c : s)
        if (c == '\n' || c == '\r') c = ' ';
    return s;
}

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& given, std::ostream& out) {
    if (given) return *given;
    std::random_device rd;
    const std::uint64_t seed = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
    out << "seed=" << seed << " (randomly chosen; pass --seed " << seed << " to reproduce)\n";
    return seed;
}

int loader_threads(int configured) {
    const char* env = std::getenv("OSTEO_THREADS");
    if (!env || !*env) return configured;
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (*end != '\0' || v < 0 || v > 256) throw ConfigError("OSTEO_THREADS must be an integer in [0,256]");
    return static_cast<int>(v);
}

void print_report(const MetricsReport& r, std::ostream& out) {
    out << std::setprecision(17) << "samples=" << r.samples << " accuracy=" << r.accuracy << " mae=" << r.mae
        << " qwk=" << r.qwk << '\n';
}

template <typename Fn>
void write_file(const fs::path& path, Fn&& fn) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream os(path);
    if (!os) throw DataError("cannot write " + path.string());
    fn(os);
    if (!os) throw DataError("failed writing " + path.string());
}

struct SynthArgs {
    std::string out;
    int per_grade = 10;
    std::optional<std::uint64_t> seed;
    int size = 128;
    bool planted = false;
};

struct SplitArgs {
    std::string manifest;
    std::string ratios = "7:2:1";
    std::optional<std::uint64_t> seed;
    std::string group_by;
    std::string out;
    bool strict = false;
};

struct TrainArgs {
    std::string config;
    std::string out;
    std::string resume;
    std::optional<std::uint64_t> seed;
};

struct EvalArgs {
    std::string checkpoint;
    std::string manifest;
    std::string split = "test";
    std::string report;
    std::string confusion;
};

struct GradcamArgs {
    std::string checkpoint;
    std::vector<std::string> images;
    std::vector<int> classes;
    std::vector<std::string> layers{"merged"};
    std::string out;
    double alpha = 0.5;
};

struct ReportArgs {
    std::string confusion;
    std::string render;
};

void do_synth(const SynthArgs& a, std::ostream& out) {
    const auto seed = resolve_seed(a.seed, out);
    if (a.planted) {
        const auto m = planted_feature_dataset(a.out, a.per_grade, seed, a.size);
        out << "wrote " << m.records.size() << " images and " << (fs::path(a.out) / "manifest.csv").string() << '\n';
        return;
    }
    const auto ds = synth_dataset(a.out, a.per_grade, seed, a.size);
    out << "wrote " << ds.manifest.records.size() << " images and " << (fs::path(a.out) / "manifest.csv").string()
        << '\n';
}

void do_split(const SplitArgs& a, std::ostream& out) {
    if (!a.group_by.empty() && a.group_by != "patient") throw ConfigError("--group-by accepts only 'patient'");
    const auto seed = resolve_seed(a.seed, out);
    const auto manifest = load_manifest(a.manifest);
    SplitOptions opts;
    opts.group_by_patient = !a.group_by.empty();
    opts.strict = a.strict;
    const auto result = stratified_split(manifest, SplitRatios::parse(a.ratios), seed, opts);
    for (const auto& w : result.warnings) out << "warning: " << one_line(w) << '\n';
    const fs::path dest = a.out.empty() ? fs::path(a.manifest) : fs::path(a.out);
    save_manifest(result.manifest, dest);
    out << "train=" << result.manifest.split_size(Split::train) << " test=" << result.manifest.split_size(Split::test)
        << " val=" << result.manifest.split_size(Split::val) << '\n';
    for (int g = 0; g < kNumGrades; ++g) {
        out << "grade " << g << ": train=" << result.manifest.count(Split::train, g)
            << " test=" << result.manifest.count(Split::test, g) << " val=" << result.manifest.count(Split::val, g)
            << '\n';
    }
    out << "manifest=" << dest.string() << '\n';
}

void do_train(const TrainArgs& a, std::ostream& out) {
    auto rc = load_run_config(a.config);
    std::optional<std::uint64_t> seed = a.seed;
    if (!seed && rc.seed_given) seed = rc.train.seed;
    rc.train.seed = resolve_seed(seed, out);
    rc.train.loader_threads = loader_threads(rc.train.loader_threads);
    const fs::path dir(a.out);
    fs::create_directories(dir);
    if (rc.train.checkpoint_every > 0) rc.train.checkpoint_dir = dir;

    const auto manifest = load_manifest(rc.manifest);
    const auto& net = rc.network;
    const auto train_set = load_split(manifest, Split::train, net.input_size, net.input_channels, rc.train.loader_threads);
    const auto val_set = load_split(manifest, Split::val, net.input_size, net.input_channels, rc.train.loader_threads);
    for (const auto& e : train_set.errors) out << "skipped: " << one_line(e) << '\n';
    for (const auto& e : val_set.errors) out << "skipped: " << one_line(e) << '\n';
    out << "train images=" << train_set.size() << " val images=" << val_set.size() << '\n';

    std::optional<Checkpoint> resume;
    if (!a.resume.empty()) resume = load_checkpoint(a.resume);
    const auto result = train(net, rc.train, train_set, val_set, resume ? &*resume : nullptr, [&](const EpochLog& e) {
        out << "epoch " << e.epoch << " train_loss=" << e.train_loss << " val_acc=" << e.val_acc
            << " val_mae=" << e.val_mae << " val_qwk=" << e.val_qwk << '\n'
            << std::flush;
    });
    save_checkpoint(result.last, dir / "last.ckpt");
    if (result.best) save_checkpoint(*result.best, dir / "best.ckpt");
    write_file(dir / "epoch_log.csv", [&](std::ostream& os) { write_epoch_log(result.log, os); });
    out << "checkpoints written to " << dir.string() << '\n';
}

void do_eval(const EvalArgs& a, std::ostream& out) {
    const auto ck = load_checkpoint(a.checkpoint);
    const auto manifest = load_manifest(a.manifest);
    const auto split = parse_split(a.split);
    auto params = ck.params.clone();
    const auto set = load_split(manifest, split, params.config.input_size, params.config.input_channels,
                                loader_threads(0));
    for (const auto& e : set.errors) out << "skipped: " << one_line(e) << '\n';
    const auto ev = evaluate(params, set);
    print_report(ev.report, out);
    if (!a.report.empty()) write_file(a.report, [&](std::ostream& os) { ev.report.write_csv(os); });
    if (!a.confusion.empty()) write_file(a.confusion, [&](std::ostream& os) { ev.confusion.write_csv(os); });
}

void do_gradcam(const GradcamArgs& a, std::ostream& out) {
    const auto ck = load_checkpoint(a.checkpoint);
    auto params = ck.params.clone();
    const auto& cfg = params.config;
    const fs::path dir(a.out);
    fs::create_directories(dir);
    for (const auto& path : a.images) {
        const cv::Mat gray = read_grayscale(path);
        const auto input = normalize_image(gray, cfg.input_size, cfg.input_channels);
        for (int cls : a.classes) {
            for (const auto& layer : a.layers) {
                const auto hm = gradcam(params, input, cls, layer);
                const auto img = render_overlay(hm, gray, a.alpha);
                const auto name = fs::path(path).stem().string() + "_grade" + std::to_string(cls) + "_" + layer + ".png";
                write_image(dir / name, img);
                out << (dir / name).string() << '\n';
            }
        }
    }
}

void do_report(const ReportArgs& a, std::ostream& out) {
    std::ifstream in(a.confusion);
    if (!in) throw DataError("cannot open " + a.confusion);
    const auto cm = ConfusionMatrix::read_csv(in, a.confusion);
    out << std::setprecision(17) << "samples=" << cm.total() << " accuracy=" << accuracy(cm);
    try {
        out << " qwk=" << qwk(cm);
    } catch (const UndefinedKappaError&) {
        out << " qwk=undefined";
    }
    out << '\n';
    if (!a.render.empty()) {
        render_confusion(cm, a.render);
        out << "rendered " << a.render << '\n';
    }
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Ordinal knee osteoarthritis grading: data preparation, training, evaluation and explanation",
                 "osteo"};
    app.footer(kFooter);
    app.require_subcommand(1, 1);

    SynthArgs synth;
    auto* s = app.add_subcommand("synth", "Generate a synthetic phantom dataset with a manifest");
    s->add_option("--out", synth.out, "Output directory")->required();
    s->add_option("--per-grade", synth.per_grade, "Images per grade")->check(CLI::PositiveNumber);
    s->add_option("--seed", synth.seed, "Random seed");
    s->add_option("--size", synth.size, "Image side in pixels")->check(CLI::Range(8, 4096));
    s->add_flag("--planted", synth.planted, "Planted-square dataset (grades 0 and 4) instead of phantoms");

    SplitArgs split;
    auto* sp = app.add_subcommand("split", "Assign train/test/val splits stratified by grade");
    sp->add_option("--manifest", split.manifest, "Manifest CSV")->required();
    sp->add_option("--ratios", split.ratios, "train:test:val weights");
    sp->add_option("--seed", split.seed, "Random seed");
    sp->add_option("--group-by", split.group_by, "Keep records of one patient together ('patient')");
    sp->add_option("--out", split.out, "Output manifest (default: rewrite the input)");
    sp->add_flag("--strict", split.strict, "Fail instead of warning when a grade cannot fill every split");

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "Train from an INI run config");
    t->add_option("--config", tr.config, "Run config file")->required();
    t->add_option("--out", tr.out, "Output directory for checkpoints and epoch log")->required();
    t->add_option("--resume", tr.resume, "Checkpoint to continue from");
    t->add_option("--seed", tr.seed, "Random seed (overrides the config)");

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "Evaluate a checkpoint on a manifest split");
    e->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
    e->add_option("--manifest", ev.manifest, "Manifest CSV")->required();
    e->add_option("--split", ev.split, "train, test or val");
    e->add_option("--report", ev.report, "Metrics CSV output");
    e->add_option("--confusion", ev.confusion, "Confusion matrix CSV output");

    GradcamArgs gc;
    auto* g = app.add_subcommand("gradcam", "Write Grad-CAM overlays");
    g->add_option("--checkpoint", gc.checkpoint, "Checkpoint file")->required();
    g->add_option("--image", gc.images, "Input image (repeatable)")->required();
    g->add_option("--class", gc.classes, "Target grade (repeatable)")->required()->check(CLI::Range(0, 4));
    g->add_option("--layer", gc.layers, "Feature map: merged, attended, stem, stage<i>.branch<j> (repeatable)");
    g->add_option("--out", gc.out, "Output directory")->required();
    g->add_option("--alpha", gc.alpha, "Heatmap blend weight")->check(CLI::Range(0.0, 1.0));

    ReportArgs rp;
    auto* r = app.add_subcommand("report", "Summarize and render a confusion matrix CSV");
    r->add_option("--confusion", rp.confusion, "Confusion matrix CSV")->required();
    r->add_option("--render", rp.render, "Image output (.png, .ppm, ...)");

    auto fail = [&](ErrorCode code, const std::string& kind, const std::string& msg) {
        err << "error:" << static_cast<int>(code) << ':' << kind << ':' << one_line(msg) << std::endl;
        return static_cast<int>(code);
    };

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& pe) {
        return fail(ErrorCode::usage, "usage", pe.what());
    }

    try {
        if (s->parsed()) do_synth(synth, out);
        else if (sp->parsed()) do_split(split, out);
        else if (t->parsed()) do_train(tr, out);
        else if (e->parsed()) do_eval(ev, out);
        else if (g->parsed()) do_gradcam(gc, out);
        else if (r->parsed()) do_report(rp, out);
    } catch (const Error& ex) {
        return fail(ex.code(), ex.kind(), ex.what());
    } catch (const cv::Exception& ex) {
        return fail(ErrorCode::data, "image", ex.what());
    } catch (const fs::filesystem_error& ex) {
        return fail(ErrorCode::data, "io", ex.what());
    }
    return 0;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run(args, out, err);
}

}  // namespace osteo::cli
