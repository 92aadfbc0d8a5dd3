// lcfm: light-curve foundation-model pipeline driver.
//
// Subcommands: ingest, simulate, pretrain, finetune, score, forecast,
// generate, simulate, report. Every run takes --config (key=value file),
// --set overrides, --seed, --out; the effective configuration is echoed
// next to the outputs and all artifacts are written atomically. Exit codes:
// 0 ok, 2 input error, 3 numeric failure, 4 configuration error.

#include <CLI11.hpp>
#include <chrono>
#include <filesystem>
#include <iostream>
#include <set>
#include <sstream>

#include "lcfm/lcfm.hpp"

namespace fs = std::filesystem;
using namespace lcfm;

namespace {

int exit_code_for(ErrorCode c) {
    switch (c) {
        case ErrorCode::BadKey:
        case ErrorCode::BadConfig:
            return 4;
        case ErrorCode::NonFiniteLoss:
            return 3;
        default:
            return 2;
    }
}

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string out_dir = ".";
    std::uint64_t seed = 0;
    bool seed_given = false;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "key=value configuration file");
    cmd->add_option("--set", args.overrides, "override: key=value (repeatable)");
    cmd->add_option("--out", args.out_dir, "output directory");
    cmd->add_option("--seed", args.seed, "run seed")->each([&](const std::string&) { args.seed_given = true; });
}

KvConfig assemble(const CommonArgs& args) {
    KvConfig cfg;
    if (!args.config_path.empty()) cfg = KvConfig::parse_file(args.config_path);
    for (const auto& kv : args.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) raise(ErrorCode::BadKey, "--set expects key=value, got " + kv);
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (args.seed_given) cfg.set("seed", std::to_string(args.seed));
    return cfg;
}

/// Echo the effective config and keep timestamps confined to run.log.
void write_run_sidecars(const fs::path& out, const KvConfig& cfg, const std::string& command) {
    fs::create_directories(out);
    atomic_write((out / "config_echo.txt").string(), cfg.echo());
    const auto now = std::chrono::system_clock::now();
    const auto t = std::chrono::system_clock::to_time_t(now);
    std::ostringstream log;
    log << "command=" << command << "\nstarted=" << std::put_time(std::gmtime(&t), "%F %T UTC") << "\n";
    atomic_write((out / "run.log").string(), log.str());
}

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

const std::set<std::string> kModelKeys{"model.n_latents", "model.latent_dim", "model.z_dim",
                                       "model.blocks",    "model.heads",      "model.ff_mult",
                                       "enc.bands",       "enc.max_freq",     "enc.include_raw"};

ModelConfig model_from(const KvConfig& cfg) {
    ModelConfig mc;
    mc.n_latents = cfg.get_size("model.n_latents", mc.n_latents);
    mc.latent_dim = cfg.get_size("model.latent_dim", mc.latent_dim);
    mc.z_dim = cfg.get_size("model.z_dim", mc.z_dim);
    mc.self_attn_blocks = cfg.get_size("model.blocks", mc.self_attn_blocks);
    mc.heads = cfg.get_size("model.heads", mc.heads);
    mc.ff_mult = cfg.get_size("model.ff_mult", mc.ff_mult);
    mc.enc.bands = cfg.get_size("enc.bands", mc.enc.bands);
    mc.enc.max_freq = cfg.get_double("enc.max_freq", mc.enc.max_freq);
    mc.enc.include_raw = cfg.get_bool("enc.include_raw", mc.enc.include_raw);
    return mc;
}

// ---------------------------------------------------------------------------
// ingest
// ---------------------------------------------------------------------------

int cmd_ingest(const CommonArgs& common, const std::vector<std::string>& inputs) {
    KvConfig cfg = assemble(common);
    cfg.require_known({"seed", "in"});
    std::vector<std::string> paths = inputs;
    if (cfg.has("in")) {
        std::stringstream ss(cfg.get_str("in", ""));
        std::string p;
        while (std::getline(ss, p, ',')) paths.push_back(p);
    }

    std::vector<fs::path> files;
    for (const auto& p : paths) {
        if (fs::is_directory(p)) {
            for (const auto& e : fs::directory_iterator(p))
                if (e.is_regular_file() && e.path().extension() == ".txt") files.push_back(e.path());
            std::sort(files.begin(), files.end());
        } else if (fs::is_regular_file(p)) {
            files.push_back(p);
        } else {
            raise(ErrorCode::IoError, "no such input: " + p);
        }
    }
    if (files.empty()) raise(ErrorCode::EmptyFile, "no input files found");

    const fs::path out(common.out_dir);
    write_run_sidecars(out, cfg, "ingest");

    std::vector<LightCurve> curves;
    ParseCounts totals;
    for (const auto& f : files) {
        std::ifstream in(f);
        if (!in) raise(ErrorCode::IoError, "cannot open " + f.string());
        auto res = parse_track_file(in);
        totals.accepted_lines += res.counts.accepted_lines;
        totals.skipped_lines += res.counts.skipped_lines;
        totals.tracks += res.counts.tracks;
        for (auto& raw : res.curves) {
            raw.id = f.stem().string() + "#" + raw.id;
            curves.push_back(to_light_curve(raw));
        }
    }

    std::ostringstream body;
    write_jsonl(body, curves);
    atomic_write((out / "curves.jsonl").string(), body.str());
    nlohmann::json summary{{"files", files.size()},
                           {"tracks", totals.tracks},
                           {"records", totals.accepted_lines},
                           {"skipped_lines", totals.skipped_lines},
                           {"curves", curves.size()}};
    atomic_write((out / "summary.json").string(), summary.dump(2) + "\n");
    std::cout << "ingested " << curves.size() << " curves from " << files.size() << " files ("
              << totals.skipped_lines << " lines skipped)\n";
    return 0;
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

int cmd_simulate(const CommonArgs& common) {
    KvConfig cfg = assemble(common);
    cfg.require_known({"seed", "sim.family", "sim.n", "sim.seed", "sim.noise", "sim.cycles",
                       "sim.amplitude", "sim.trend", "sim.anomaly_kind"});
    const std::uint64_t seed = cfg.get_u64("sim.seed", cfg.get_u64("seed", 0));
    const std::size_t n = cfg.get_size("sim.n", 100);
    std::string family = cfg.get_str("sim.family", "NORMAL");

    std::vector<std::string> families;
    if (family == "motion6")
        families = {"INERTIAL", "SAFE", "SPIN", "SUN", "TUMBLING", "YAW"};
    else if (family == "anomaly2")
        families = {"NORMAL", "ANOMALY"};
    else {
        std::stringstream ss(family);
        std::string f;
        while (std::getline(ss, f, ',')) families.push_back(f);
    }

    const fs::path out(common.out_dir);
    write_run_sidecars(out, cfg, "simulate");

    std::vector<LightCurve> curves;
    if (families.size() == 1) {
        MotionFamily fam;
        fam.class_name = families[0];
        if (cfg.has("sim.noise")) fam.noise = cfg.get_double("sim.noise", 0.0);
        if (cfg.has("sim.cycles")) fam.cycles = cfg.get_double("sim.cycles", 0.0);
        if (cfg.has("sim.amplitude")) fam.amplitude = cfg.get_double("sim.amplitude", 0.0);
        if (cfg.has("sim.trend")) fam.trend = cfg.get_double("sim.trend", 0.0);
        if (cfg.has("sim.anomaly_kind")) fam.anomaly_kind = cfg.get_str("sim.anomaly_kind", "");
        curves = simulate_labeled(fam, n, seed);
    } else {
        curves = simulate_corpus(families, n, seed);
    }

    const bool motion_labels =
        std::none_of(families.begin(), families.end(),
                     [](const std::string& f) { return f == "NORMAL" || f == "ANOMALY"; });
    const ClassVocab vocab = motion_labels ? motion_vocab() : anomaly_vocab();
    std::ostringstream body;
    write_jsonl(body, curves, &vocab);
    atomic_write((out / "curves.jsonl").string(), body.str());
    nlohmann::json summary{{"curves", curves.size()}, {"families", families}, {"seed", seed}};
    atomic_write((out / "summary.json").string(), summary.dump(2) + "\n");
    std::cout << "simulated " << curves.size() << " labelled curves\n";
    return 0;
}

// ---------------------------------------------------------------------------
// pretrain
// ---------------------------------------------------------------------------

const std::set<std::string> kPretrainKeys = [] {
    std::set<std::string> k = kModelKeys;
    k.insert({"seed", "data", "pretrain.lr", "pretrain.batch", "pretrain.alpha", "pretrain.clip",
              "pretrain.sched_factor", "pretrain.sched_patience", "pretrain.early_patience",
              "pretrain.max_epochs", "pretrain.mask_fraction", "pretrain.forecast_fraction",
              "pretrain.val_fraction", "pretrain.stop_recon"});
    return k;
}();

TrainConfig train_config_from(const KvConfig& cfg) {
    TrainConfig tc;
    tc.lr = cfg.get_double("pretrain.lr", tc.lr);
    tc.batch = cfg.get_size("pretrain.batch", tc.batch);
    tc.alpha = cfg.get_double("pretrain.alpha", tc.alpha);
    tc.clip = cfg.get_double("pretrain.clip", tc.clip);
    tc.sched_factor = cfg.get_double("pretrain.sched_factor", tc.sched_factor);
    tc.sched_patience = cfg.get_size("pretrain.sched_patience", tc.sched_patience);
    tc.early_patience = cfg.get_size("pretrain.early_patience", tc.early_patience);
    tc.max_epochs = cfg.get_size("pretrain.max_epochs", tc.max_epochs);
    tc.mask_fraction = cfg.get_double("pretrain.mask_fraction", tc.mask_fraction);
    tc.forecast_fraction = cfg.get_double("pretrain.forecast_fraction", tc.forecast_fraction);
    tc.val_fraction = cfg.get_double("pretrain.val_fraction", tc.val_fraction);
    return tc;
}

int cmd_pretrain(const CommonArgs& common) {
    KvConfig cfg = assemble(common);
    cfg.require_known(kPretrainKeys);
    const std::string data = cfg.get_str("data", "");
    if (data.empty()) raise(ErrorCode::BadKey, "pretrain requires data=<curves.jsonl>");
    auto [curves, counts] = read_jsonl_file(data);
    const std::uint64_t seed = cfg.get_u64("seed", 0);

    const fs::path out(common.out_dir);
    write_run_sidecars(out, cfg, "pretrain");

    const ModelConfig mc = model_from(cfg);
    const TrainConfig tc = train_config_from(cfg);

    LoopOptions opt = lcfm::detail::loop_options_from(tc);
    opt.stop_when_train_recon_below = cfg.get_double("pretrain.stop_recon", 0.0);
    ModelParams init = init_model(mc, seed);
    Rng master(seed);
    Rng split_rng = master.fork(1);
    auto [train_idx, val_idx] = lcfm::detail::holdout_split(curves.size(), tc.val_fraction, split_rng);
    if (curves.size() < 2) raise(ErrorCode::EmptyDataset, "pre-training needs at least 2 curves");
    TrainResult res = train_loop(init, curves, train_idx, val_idx, opt, master.raw());

    save_checkpoint((out / "checkpoint.lcfm").string(), res.params, seed, cfg.items());
    atomic_write((out / "history.csv").string(), history_csv(res.history, false));
    const auto& last = res.history.back();
    nlohmann::json metrics{{"epochs", res.history.size()},
                           {"best_epoch", res.best_epoch},
                           {"train_total", last.train.total},
                           {"val_total", last.val.total},
                           {"train_recon", last.train.recon},
                           {"train_kl", last.train.kl}};
    atomic_write((out / "metrics.json").string(), metrics.dump(2) + "\n");
    std::cout << "pretrained " << res.history.size() << " epochs; best epoch " << res.best_epoch
              << ", final train recon " << last.train.recon << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// finetune
// ---------------------------------------------------------------------------

const std::set<std::string> kFinetuneKeys{
    "seed",
    "data",
    "init",
    "task",
    "finetune.lr",
    "finetune.batch",
    "finetune.alpha",
    "finetune.clip",
    "finetune.sched_factor",
    "finetune.sched_patience",
    "finetune.early_patience",
    "finetune.max_epochs",
    "finetune.mask_fraction",
    "finetune.forecast_fraction",
    "finetune.class_weight",
    "finetune.stratified",
    "finetune.train_frac",
    "finetune.val_frac",
    "finetune.test_frac",
};

int cmd_finetune(const CommonArgs& common) {
    KvConfig cfg = assemble(common);
    cfg.require_known(kFinetuneKeys);
    const std::string task = cfg.get_str("task", "");
    if (task != "anomaly" && task != "motion")
        raise(ErrorCode::BadKey, "task must be anomaly or motion");
    const ClassVocab vocab = task == "anomaly" ? anomaly_vocab() : motion_vocab();

    const std::string data = cfg.get_str("data", "");
    const std::string init = cfg.get_str("init", "");
    if (data.empty() || init.empty())
        raise(ErrorCode::BadKey, "finetune requires data=<labelled.jsonl> and init=<checkpoint>");
    auto [curves, counts] = read_jsonl_file(data, &vocab);
    Checkpoint ck = load_checkpoint(init);

    FinetuneConfig fc;
    fc.lr = cfg.get_double("finetune.lr", fc.lr);
    fc.batch = cfg.get_size("finetune.batch", fc.batch);
    fc.alpha = cfg.get_double("finetune.alpha", fc.alpha);
    fc.clip = cfg.get_double("finetune.clip", fc.clip);
    fc.sched_factor = cfg.get_double("finetune.sched_factor", fc.sched_factor);
    fc.sched_patience = cfg.get_size("finetune.sched_patience", task == "motion" ? 10 : 0);
    fc.early_patience = cfg.get_size("finetune.early_patience", fc.early_patience);
    fc.max_epochs = cfg.get_size("finetune.max_epochs", fc.max_epochs);
    fc.mask_fraction = cfg.get_double("finetune.mask_fraction", fc.mask_fraction);
    fc.forecast_fraction = cfg.get_double("finetune.forecast_fraction", fc.forecast_fraction);
    fc.class_weight = cfg.get_double("finetune.class_weight", fc.class_weight);
    fc.stratified_batches = cfg.get_bool("finetune.stratified", fc.stratified_batches);
    fc.split = {cfg.get_double("finetune.train_frac", 0.70), cfg.get_double("finetune.val_frac", 0.15),
                cfg.get_double("finetune.test_frac", 0.15)};
    const std::uint64_t seed = cfg.get_u64("seed", 0);

    const fs::path out(common.out_dir);
    write_run_sidecars(out, cfg, "finetune");

    FinetuneResult res = finetune(ck.params, curves, vocab, fc, seed);

    save_checkpoint((out / "checkpoint.lcfm").string(), res.params, seed, cfg.items());
    atomic_write((out / "history.csv").string(), history_csv(res.history, true));

    const MetricsReport test = evaluate_classifier(res.params, curves, res.splits.test);
    nlohmann::json metrics{{"epochs", res.history.size()},
                           {"best_epoch", res.best_epoch},
                           {"val_accuracy", res.history[res.best_epoch].val_accuracy},
                           {"test", metrics_to_json(test, vocab)}};
    nlohmann::json per_epoch = nlohmann::json::array();
    for (const auto& rep : res.epoch_reports)
        per_epoch.push_back({{"accuracy", rep.accuracy}, {"roc_auc", rep.roc_auc}});
    metrics["val_per_epoch"] = per_epoch;
    atomic_write((out / "metrics.json").string(), metrics.dump(2) + "\n");
    atomic_write((out / "metrics.txt").string(), metrics_table(test, vocab));
    std::cout << "finetuned " << res.history.size() << " epochs; test accuracy " << test.accuracy
              << ", ROC AUC " << test.roc_auc << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// score / forecast / generate / report
// ---------------------------------------------------------------------------

int cmd_score(const CommonArgs& common) {
    KvConfig cfg = assemble(common);
    cfg.require_known({"seed", "ckpt", "data", "top"});
    const std::string ckpt = cfg.get_str("ckpt", "");
    const std::string data = cfg.get_str("data", "");
    if (ckpt.empty() || data.empty()) raise(ErrorCode::BadKey, "score requires ckpt= and data=");
    Checkpoint ck = load_checkpoint(ckpt);
    auto [curves, counts] =
        read_jsonl_file(data, ck.params.cfg.n_classes > 0 ? &ck.params.vocab : nullptr);
    const std::size_t top = cfg.get_size("top", 10);

    const fs::path out(common.out_dir);
    write_run_sidecars(out, cfg, "score");

    RankedAnomalies ranked = rank_anomalies(ck.params, curves, top);
    std::string csv = "rank,id,error,prob_anomaly,name,norad\n";
    for (std::size_t r = 0; r < ranked.all.size(); ++r) {
        const auto& rec = ranked.all[r];
        csv += std::to_string(r + 1) + ',' + rec.id + ',' + fmt17(rec.error) + ',';
        if (rec.prob_anomaly) csv += fmt17(*rec.prob_anomaly);
        csv += ',';
        if (rec.meta.name) csv += *rec.meta.name;
        csv += ',';
        if (rec.meta.norad) csv += std::to_string(*rec.meta.norad);
        csv += '\n';
    }
    atomic_write((out / "ranked.csv").string(), csv);

    double mean_err = 0.0;
    for (const auto& r : ranked.all) mean_err += r.error / static_cast<double>(ranked.all.size());
    nlohmann::json summary{{"curves", ranked.all.size()},
                           {"mean_error", mean_err},
                           {"highest_error_id", ranked.all.front().id},
                           {"lowest_error_id", ranked.all.back().id}};
    atomic_write((out / "summary.json").string(), summary.dump(2) + "\n");
    std::cout << "scored " << ranked.all.size() << " curves; highest error " << ranked.all.front().error
              << " (" << ranked.all.front().id << ")\n";
    return 0;
}

int cmd_forecast(const CommonArgs& common) {
    KvConfig cfg = assemble(common);
    cfg.require_known({"seed", "ckpt", "data", "fraction"});
    const std::string ckpt = cfg.get_str("ckpt", "");
    const std::string data = cfg.get_str("data", "");
    if (ckpt.empty() || data.empty()) raise(ErrorCode::BadKey, "forecast requires ckpt= and data=");
    Checkpoint ck = load_checkpoint(ckpt);
    auto [curves, counts] = read_jsonl_file(data);
    const double fraction = cfg.get_double("fraction", 0.25);

    const fs::path out(common.out_dir);
    write_run_sidecars(out, cfg, "forecast");

    const MaskSpec tail = make_forecast_mask(fraction);
    std::string csv = "id,error";
    for (std::size_t i : tail.indices) csv += ",t" + std::to_string(i);
    csv += '\n';
    double mean = 0.0, m2 = 0.0;
    std::size_t n = 0;
    for (const auto& c : curves) {
        const ForecastResult r = forecast(ck.params, c, fraction);
        csv += c.id + ',' + fmt17(r.error);
        for (double v : r.predicted_tail) csv += ',' + fmt17(v);
        csv += '\n';
        n += 1;
        const double d = r.error - mean;
        mean += d / static_cast<double>(n);
        m2 += d * (r.error - mean);
    }
    atomic_write((out / "forecast.csv").string(), csv);
    nlohmann::json summary{{"curves", n},
                           {"mean_error", mean},
                           {"stddev_error", n > 1 ? std::sqrt(m2 / static_cast<double>(n - 1)) : 0.0}};
    atomic_write((out / "summary.json").string(), summary.dump(2) + "\n");
    std::cout << "forecast " << n << " curves; mean tail error " << mean << "\n";
    return 0;
}

int cmd_generate(const CommonArgs& common) {
    KvConfig cfg = assemble(common);
    cfg.require_known({"seed", "ckpt", "data", "gen.class", "gen.threshold", "gen.noise_scale",
                       "gen.top_fraction", "gen.count", "gen.refs", "gen.sigma"});
    const std::string ckpt = cfg.get_str("ckpt", "");
    const std::string data = cfg.get_str("data", "");
    if (ckpt.empty() || data.empty()) raise(ErrorCode::BadKey, "generate requires ckpt= and data=");
    Checkpoint ck = load_checkpoint(ckpt);
    if (ck.params.cfg.n_classes == 0) raise(ErrorCode::NoHead, "checkpoint has no classifier head");
    auto [curves, counts] = read_jsonl_file(data, &ck.params.vocab);

    const std::string cls = cfg.get_str("gen.class", "");
    if (cls.empty()) raise(ErrorCode::BadKey, "generate requires gen.class=<name>");
    GenSpec spec;
    spec.target_class = ck.params.vocab.index_of(cls);
    spec.threshold = cfg.get_double("gen.threshold", spec.threshold);
    spec.noise_scale = cfg.get_double("gen.noise_scale", spec.noise_scale);
    spec.top_fraction = cfg.get_double("gen.top_fraction", spec.top_fraction);
    spec.count = cfg.get_size("gen.count", spec.count);
    spec.sigma = cfg.get_double("gen.sigma", spec.sigma);
    const std::uint64_t seed = cfg.get_u64("seed", 0);
    const std::size_t max_refs = cfg.get_size("gen.refs", 8);
    spec.validate();

    const fs::path out(common.out_dir);
    write_run_sidecars(out, cfg, "generate");

    auto refs = select_references(ck.params, curves, *spec.target_class, spec.threshold);
    if (refs.size() > max_refs) refs.resize(max_refs);

    std::vector<LightCurve> synthetic;
    for (std::size_t r = 0; r < refs.size(); ++r) {
        GenSpec per_ref = spec;
        per_ref.seed = Rng(seed).fork(refs[r].index).raw();  // per-reference stream
        auto batch = generate(ck.params, curves[refs[r].index], per_ref);
        synthetic.insert(synthetic.end(), batch.begin(), batch.end());
    }
    std::ostringstream body;
    write_jsonl(body, synthetic, &ck.params.vocab);
    atomic_write((out / "synthetic.jsonl").string(), body.str());
    nlohmann::json summary{{"references", refs.size()},
                           {"curves", synthetic.size()},
                           {"class", cls},
                           {"noise_scale", spec.noise_scale}};
    atomic_write((out / "summary.json").string(), summary.dump(2) + "\n");
    std::cout << "generated " << synthetic.size() << " curves around " << refs.size() << " references\n";
    return 0;
}

int cmd_report(const CommonArgs& common, const std::string& input) {
    KvConfig cfg = assemble(common);
    cfg.require_known({"seed", "in"});
    const std::string in_path = !input.empty() ? input : cfg.get_str("in", "");
    if (in_path.empty()) raise(ErrorCode::BadKey, "report requires an input file");

    const fs::path out(common.out_dir);
    write_run_sidecars(out, cfg, "report");

    if (fs::path(in_path).extension() == ".json") {
        std::ifstream f(in_path);
        if (!f) raise(ErrorCode::IoError, "cannot open " + in_path);
        nlohmann::json j = nlohmann::json::parse(f);
        const nlohmann::json& test = j.contains("test") ? j.at("test") : j;
        ClassVocab vocab;
        for (const auto& e : test.at("per_class")) vocab.names.push_back(e.at("class").get<std::string>());
        const MetricsReport rep = metrics_from_json(test, vocab);
        atomic_write((out / "table.txt").string(), metrics_table(rep, vocab));
        if (j.contains("val_per_epoch")) {
            Series acc{"val_accuracy", {}}, auc{"val_roc_auc", {}};
            for (const auto& e : j.at("val_per_epoch")) {
                acc.y.push_back(e.at("accuracy").get<double>());
                auc.y.push_back(e.at("roc_auc").get<double>());
            }
            atomic_write((out / "metrics.svg").string(), svg_line_plot({acc, auc}, "validation metrics"));
        }
        std::cout << "report written to " << (out / "table.txt").string() << "\n";
        return 0;
    }

    // CSV history: plot every numeric column against epoch
    std::ifstream f(in_path);
    if (!f) raise(ErrorCode::IoError, "cannot open " + in_path);
    auto [names, cols] = read_csv_columns(f);
    std::vector<Series> series;
    std::string stats = "column,min,max,last\n";
    for (std::size_t c = 0; c < names.size(); ++c) {
        if (names[c] == "epoch" || cols[c].empty()) continue;
        series.push_back({names[c], cols[c]});
        const auto [mn, mx] = std::minmax_element(cols[c].begin(), cols[c].end());
        stats += names[c] + ',' + fmt17(*mn) + ',' + fmt17(*mx) + ',' + fmt17(cols[c].back()) + '\n';
    }
    atomic_write((out / "history.svg").string(), svg_line_plot(series, fs::path(in_path).filename()));
    atomic_write((out / "stats.csv").string(), stats);
    std::cout << "report written to " << (out / "history.svg").string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"light-curve foundation model pipeline"};
    app.require_subcommand(1);

    CommonArgs common;
    std::vector<std::string> inputs;
    std::string report_in;

    auto* ingest = app.add_subcommand("ingest", "parse track/JSONL inputs into a curve corpus");
    add_common(ingest, common);
    ingest->add_option("inputs", inputs, "track files or directories");

    auto* simulate = app.add_subcommand(
        "simulate", "labelled parametric corpus (keys: sim.family sim.n sim.seed sim.noise ...)");
    add_common(simulate, common);

    auto* pretrain = app.add_subcommand(
        "pretrain", "self-supervised pre-training (keys: data model.* enc.* pretrain.* seed)");
    add_common(pretrain, common);
    std::string data_flag, ckpt_flag, init_flag, task_flag, class_flag;
    pretrain->add_option("--data", data_flag, "curves.jsonl corpus");

    auto* finetune = app.add_subcommand(
        "finetune", "supervised fine-tuning (keys: data init task finetune.* seed)");
    add_common(finetune, common);
    finetune->add_option("--data", data_flag, "labelled curves.jsonl");
    finetune->add_option("--init", init_flag, "pre-trained checkpoint");
    finetune->add_option("--task", task_flag, "anomaly | motion");

    auto* score = app.add_subcommand("score", "reconstruction-error anomaly ranking (keys: ckpt data top)");
    add_common(score, common);
    score->add_option("--ckpt", ckpt_flag, "model checkpoint");
    score->add_option("--data", data_flag, "curves.jsonl to score");

    auto* forecast = app.add_subcommand("forecast", "predict the final 25% of each curve (keys: ckpt data fraction)");
    add_common(forecast, common);
    forecast->add_option("--ckpt", ckpt_flag, "model checkpoint");
    forecast->add_option("--data", data_flag, "curves.jsonl");

    auto* generate = app.add_subcommand(
        "generate", "latent-neighbourhood synthetic curves (keys: ckpt data gen.* seed)");
    add_common(generate, common);
    generate->add_option("--ckpt", ckpt_flag, "fine-tuned checkpoint");
    generate->add_option("--data", data_flag, "reference corpus");
    generate->add_option("--class", class_flag, "target class name");

    auto* report = app.add_subcommand("report", "SVG plots and tables from history.csv / metrics.json");
    add_common(report, common);
    report->add_option("input", report_in, "history CSV or metrics JSON");

    CLI11_PARSE(app, argc, argv);

    try {
        if (!data_flag.empty()) common.overrides.push_back("data=" + data_flag);
        if (!ckpt_flag.empty()) common.overrides.push_back("ckpt=" + ckpt_flag);
        if (!init_flag.empty()) common.overrides.push_back("init=" + init_flag);
        if (!task_flag.empty()) common.overrides.push_back("task=" + task_flag);
        if (!class_flag.empty()) common.overrides.push_back("gen.class=" + class_flag);

        if (ingest->parsed()) return cmd_ingest(common, inputs);
        if (simulate->parsed()) return cmd_simulate(common);
        if (pretrain->parsed()) return cmd_pretrain(common);
        if (finetune->parsed()) return cmd_finetune(common);
        if (score->parsed()) return cmd_score(common);
        if (forecast->parsed()) return cmd_forecast(common);
        if (generate->parsed()) return cmd_generate(common);
        if (report->parsed()) return cmd_report(common, report_in);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e.code());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
