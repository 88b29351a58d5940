// Command-line interface for the AEGRU neural motor decoder toolkit.
//
// Subcommands: synth, train, prune, quantize, bench, grid, sweep-tpr,
// ablate. Every command is deterministic given its flags and seeds. A
// config file of `key = value` lines (# comments) can provide any option;
// flags given on the command line take precedence. Exit codes: 0 success,
// 2 configuration error, 3 data/format error, 4 numeric failure.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "aegru/aegru.hpp"

namespace {

using namespace aegru;

// ---------------------------------------------------------------------------
// Config file handling: the file's key/value pairs are translated into
// option tokens injected before the explicit command-line ones, so the
// command line wins wherever both speak.

std::vector<std::pair<std::string, std::string>> read_config_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file: " + path);
    std::vector<std::pair<std::string, std::string>> entries;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        const std::string stripped = trim(line);
        if (stripped.empty()) continue;
        const auto eq = stripped.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(lineno) +
                              ": expected 'key = value'");
        const std::string key = trim(stripped.substr(0, eq));
        const std::string value = trim(stripped.substr(eq + 1));
        if (key.empty() || value.empty())
            throw ConfigError(path + ":" + std::to_string(lineno) +
                              ": expected 'key = value'");
        entries.emplace_back(key, value);
    }
    return entries;
}

bool truthy(const std::string& v) {
    return v == "1" || v == "true" || v == "yes" || v == "on";
}

// Expands --config into option tokens for the named subcommand. Unknown
// keys are rejected.
std::vector<std::string> merge_config(const CLI::App& app,
                                      std::vector<std::string> args) {
    std::size_t sub_pos = 0;
    const CLI::App* sub = nullptr;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i].rfind("-", 0) == 0) continue;
        for (const CLI::App* candidate : app.get_subcommands(nullptr))
            if (candidate->get_name() == args[i]) sub = candidate;
        sub_pos = i;
        break;
    }
    if (sub == nullptr) return args;

    std::string config_path;
    for (std::size_t i = sub_pos + 1; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) config_path = args[i + 1];
        else if (args[i].rfind("--config=", 0) == 0) config_path = args[i].substr(9);
    }
    if (config_path.empty()) return args;

    std::vector<std::string> injected;
    for (const auto& [key, value] : read_config_file(config_path)) {
        if (key == "config") throw ConfigError("config: nested config files not allowed");
        const CLI::Option* opt = nullptr;
        try {
            opt = sub->get_option("--" + key);
        } catch (const CLI::OptionNotFound&) {
            throw ConfigError("config: unknown key '" + key + "' for command '" +
                              sub->get_name() + "'");
        }
        if (opt->get_expected_min() == 0) {  // flag
            if (truthy(value)) injected.push_back("--" + key);
        } else {
            injected.push_back("--" + key);
            injected.push_back(value);
        }
    }
    args.insert(args.begin() + sub_pos + 1, injected.begin(), injected.end());
    return args;
}

// ---------------------------------------------------------------------------
// Shared option bundles.

struct TrainFlags {
    std::size_t ws = 20, n = 5, stride = 1;
    std::size_t c_f = 32, c_h = 32, c_sigma = 32;
    TrainConfig tcfg;
};

void add_window_options(CLI::App* cmd, TrainFlags& f) {
    cmd->add_option("--ws", f.ws, "Samples per sub-window")->check(CLI::PositiveNumber);
    cmd->add_option("--n", f.n, "Sub-windows per input (GRU steps)")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--stride", f.stride, "Samples between predictions")
        ->check(CLI::PositiveNumber);
}

void add_train_options(CLI::App* cmd, TrainFlags& f) {
    add_window_options(cmd, f);
    cmd->add_option("--epochs", f.tcfg.epochs, "Training epochs")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--lr", f.tcfg.lr, "Base learning rate")->check(CLI::PositiveNumber);
    cmd->add_option("--weight-decay", f.tcfg.weight_decay, "Decoupled weight decay")
        ->check(CLI::NonNegativeNumber);
    cmd->add_option("--batch", f.tcfg.batch_size, "Mini-batch size")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--wv", f.tcfg.w_v, "Velocity loss weight")
        ->check(CLI::NonNegativeNumber);
    cmd->add_option("--wx", f.tcfg.w_x, "Reconstruction loss weight")
        ->check(CLI::NonNegativeNumber);
    cmd->add_option("--seed", f.tcfg.seed, "Run seed");
    cmd->add_option("--cf", f.c_f, "Latent features")->check(CLI::PositiveNumber);
    cmd->add_option("--ch", f.c_h, "GRU hidden size")->check(CLI::PositiveNumber);
    cmd->add_option("--csigma", f.c_sigma, "Variance head width")
        ->check(CLI::PositiveNumber);
}

ModelConfig model_config(const Recording& rec, const TrainFlags& f) {
    return ModelConfig{rec.channel_count, f.c_f, f.c_h, f.c_sigma};
}

void write_text(const std::string& path, const std::string& content) {
    std::ofstream os(path);
    if (!os) throw FormatError("cannot open for writing: " + path);
    os << content;
}

std::string history_csv(const std::vector<EpochStats>& history) {
    std::string out = "epoch,train_loss,val_r2\n";
    for (const EpochStats& e : history) {
        char buf[96];
        std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9g\n", e.epoch, e.train_loss, e.val_r2);
        out += buf;
    }
    return out;
}

WindowDataset split_dataset(const Recording& rec, const PreprocessConfig& pcfg,
                            const std::string& split) {
    if (split == "all") return WindowDataset(rec, pcfg);
    const SplitRecordings s = split_recording(rec);
    if (split == "train") return WindowDataset(s.train, pcfg);
    if (split == "val") return WindowDataset(s.val, pcfg);
    return WindowDataset(s.test, pcfg);
}

std::size_t default_jobs() {
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : hw;
}

// ---------------------------------------------------------------------------
// Commands.

void cmd_synth(const SynthConfig& cfg, const std::string& out) {
    validate(cfg);
    const Recording rec = generate_synthetic(cfg);
    save_ndr(rec, out);
    double total = 0.0;
    for (std::uint16_t s : rec.spikes) total += s;
    std::printf("wrote %s: %zu channels, %zu samples, mean count %.4f per 4 ms bin\n",
                out.c_str(), rec.channel_count, rec.sample_count(),
                total / static_cast<double>(rec.spikes.size()));
}

void cmd_train(const std::string& data, const std::string& out, const std::string& history,
               TrainFlags& f) {
    const PreprocessConfig pcfg{f.ws, f.n, f.stride};
    validate(pcfg);
    validate(f.tcfg);
    const Recording rec = load_ndr(data);
    const ModelConfig mcfg = model_config(rec, f);
    validate(mcfg);

    TrainResult result = train_model(rec, pcfg, mcfg, f.tcfg);
    write_text(history.empty() ? out + ".history.csv" : history,
               history_csv(result.history));
    save_checkpoint(result.params, f.ws, f.n, out);

    const SplitRecordings split = split_recording(rec);
    const R2Score r2 = evaluate(result.params, WindowDataset(split.test, pcfg));
    std::printf("trained %zu epochs on %s; final val R2 %.4f\n", f.tcfg.epochs, data.c_str(),
                result.history.back().val_r2);
    std::printf("test R2 mean %.4f (x %.4f, y %.4f); checkpoint %s\n", r2.mean, r2.x, r2.y,
                out.c_str());
}

void cmd_prune(const std::string& model, const std::string& data, const std::string& out,
               const PruneConfig& prune_cfg, bool no_finetune,
               const std::string& sparsity_path, TrainFlags& f) {
    Checkpoint ckpt = load_checkpoint(model);
    const Recording rec = load_ndr(data);
    const PreprocessConfig pcfg{ckpt.ws, ckpt.n, f.stride};

    l1_prune(ckpt.params, prune_cfg);
    if (!no_finetune && !ckpt.params.masks.empty() && prune_cfg.finetune_epochs > 0)
        finetune(ckpt.params, rec, pcfg, f.tcfg, prune_cfg.finetune_epochs);

    save_checkpoint(ckpt.params, ckpt.ws, ckpt.n, out);
    const SparsityReport report = sparsity_report(ckpt.params);
    if (!sparsity_path.empty()) write_text(sparsity_path, sparsity_csv(report));

    const SplitRecordings split = split_recording(rec);
    const R2Score r2 = evaluate(ckpt.params, WindowDataset(split.test, pcfg));
    std::printf("pruned at rate %.2f (%zu of %zu weights zero)%s; test R2 %.4f; wrote %s\n",
                prune_cfg.tpr, report.zeros, report.total,
                no_finetune || ckpt.params.masks.empty() ? "" : ", fine-tuned", r2.mean,
                out.c_str());
}

void cmd_quantize(const std::string& model, const std::string& out) {
    Checkpoint ckpt = load_checkpoint(model);
    quantize(ckpt.params);
    save_checkpoint(ckpt.params, ckpt.ws, ckpt.n, out);
    std::printf("quantized backbone weights to 8-bit fixed point (qf=7); wrote %s\n",
                out.c_str());
}

void cmd_bench(const std::string& model, const std::string& data, const std::string& out,
               const std::string& csv, const std::string& split, std::size_t stride) {
    Checkpoint ckpt = load_checkpoint(model);
    const Recording rec = load_ndr(data);
    const PreprocessConfig pcfg{ckpt.ws, ckpt.n, stride};
    const WindowDataset dataset = split_dataset(rec, pcfg, split);

    const BenchmarkReport report = benchmark(ckpt.params, dataset, pcfg);
    if (!out.empty()) write_report_json(report, out);
    if (!csv.empty()) write_report_csv(report, csv);
    std::printf("%s split (%zu windows)\n", split.c_str(), dataset.size());
    std::printf("  R2 mean %.4f (x %.4f, y %.4f)\n", report.r2_mean, report.r2_x,
                report.r2_y);
    std::printf("  footprint %llu bytes\n",
                static_cast<unsigned long long>(report.footprint_bytes));
    std::printf("  effective MACs %.1f per inference (dense %llu), ACs %.0f\n",
                report.effective_macs, static_cast<unsigned long long>(report.dense_macs),
                report.effective_acs);
}

void cmd_grid(const std::string& data, const std::vector<std::size_t>& ws_list,
              const std::vector<std::size_t>& n_list, const std::string& out, TrainFlags& f,
              std::size_t jobs) {
    const Recording rec = load_ndr(data);
    const ModelConfig mcfg = model_config(rec, f);
    const auto cells = grid_search(rec, ws_list, n_list, mcfg, f.tcfg, f.stride, jobs);
    std::string csv = "ws,n,r2_mean,r2_x,r2_y\n";
    for (const GridCell& c : cells) {
        char buf[128];
        std::snprintf(buf, sizeof(buf), "%zu,%zu,%.9g,%.9g,%.9g\n", c.ws, c.n, c.r2_mean,
                      c.r2_x, c.r2_y);
        csv += buf;
        std::printf("ws=%zu n=%zu -> R2 %.4f\n", c.ws, c.n, c.r2_mean);
    }
    write_text(out, csv);
}

void cmd_sweep_tpr(const std::string& data, const std::string& model,
                   const std::vector<double>& tpr_list, const std::string& out,
                   std::size_t finetune_epochs, TrainFlags& f, std::size_t jobs) {
    if (tpr_list.empty()) throw ConfigError("sweep-tpr: --tpr-list must be non-empty");
    const Recording rec = load_ndr(data);

    AegruParams base;
    std::size_t ws = f.ws, n = f.n;
    if (!model.empty()) {
        Checkpoint ckpt = load_checkpoint(model);
        base = std::move(ckpt.params);
        ws = ckpt.ws;
        n = ckpt.n;
    } else {
        const ModelConfig mcfg = model_config(rec, f);
        base = train_model(rec, {ws, n, f.stride}, mcfg, f.tcfg).params;
    }
    const PreprocessConfig pcfg{ws, n, f.stride};
    const SplitRecordings split = split_recording(rec);

    struct Row {
        double tpr, r2_x, r2_y, r2_mean, macs;
    };
    std::vector<Row> rows(tpr_list.size());
    detail::parallel_for(tpr_list.size(), jobs, [&](std::size_t i) {
        AegruParams params = base;
        PruneConfig pc;
        pc.tpr = tpr_list[i];
        pc.finetune_epochs = finetune_epochs;
        l1_prune(params, pc);
        TrainConfig tcfg = f.tcfg;
        tcfg.seed = f.tcfg.seed + i;
        if (!params.masks.empty() && finetune_epochs > 0)
            finetune(params, rec, pcfg, tcfg, finetune_epochs);
        const WindowDataset test_ds(split.test, pcfg);
        const R2Score r2 = evaluate(params, test_ds);
        const EffectiveMacs macs = effective_macs(params, test_ds);
        rows[i] = Row{tpr_list[i], r2.x, r2.y, r2.mean, macs.total()};
    });

    std::string csv = "tpr,r2_x,r2_y,r2_mean,effective_macs\n";
    for (const Row& r : rows) {
        char buf[160];
        std::snprintf(buf, sizeof(buf), "%.9g,%.9g,%.9g,%.9g,%.9g\n", r.tpr, r.r2_x, r.r2_y,
                      r.r2_mean, r.macs);
        csv += buf;
        std::printf("tpr=%.2f -> R2 %.4f, effective MACs %.1f\n", r.tpr, r.r2_mean, r.macs);
    }
    write_text(out, csv);
}

void cmd_ablate(const std::string& data, const std::string& out, std::size_t seeds,
                TrainFlags& f, std::size_t jobs) {
    if (seeds < 1) throw ConfigError("ablate: --seeds must be >= 1");
    const Recording rec = load_ndr(data);
    const ModelConfig mcfg = model_config(rec, f);
    const PreprocessConfig pcfg{f.ws, f.n, f.stride};
    const SplitRecordings split = split_recording(rec);

    // Matched seeds: task 2i trains the AEGRU and 2i+1 the vanilla GRU with
    // the same seed.
    std::vector<double> r2_aegru(seeds), r2x_aegru(seeds), r2y_aegru(seeds);
    std::vector<double> r2_vanilla(seeds), r2x_vanilla(seeds), r2y_vanilla(seeds);
    detail::parallel_for(2 * seeds, jobs, [&](std::size_t task) {
        const std::size_t s = task / 2;
        TrainConfig tcfg = f.tcfg;
        tcfg.seed = f.tcfg.seed + s;
        const WindowDataset test_ds(split.test, pcfg);
        if (task % 2 == 0) {
            const TrainResult r = train_model(rec, pcfg, mcfg, tcfg);
            const R2Score r2 = evaluate(r.params, test_ds);
            r2_aegru[s] = r2.mean;
            r2x_aegru[s] = r2.x;
            r2y_aegru[s] = r2.y;
        } else {
            const VanillaTrainResult r = train_vanilla(rec, pcfg, mcfg, tcfg);
            const R2Score r2 = evaluate(r.params, test_ds);
            r2_vanilla[s] = r2.mean;
            r2x_vanilla[s] = r2.x;
            r2y_vanilla[s] = r2.y;
        }
    });

    auto mean_of = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x;
        return s / static_cast<double>(v.size());
    };
    auto std_of = [&](const std::vector<double>& v) {
        const double m = mean_of(v);
        double s = 0.0;
        for (double x : v) s += (x - m) * (x - m);
        return v.size() > 1 ? std::sqrt(s / static_cast<double>(v.size() - 1)) : 0.0;
    };

    std::string csv = "model,seed,r2_x,r2_y,r2_mean\n";
    char buf[160];
    for (std::size_t s = 0; s < seeds; ++s) {
        std::snprintf(buf, sizeof(buf), "aegru,%llu,%.9g,%.9g,%.9g\n",
                      static_cast<unsigned long long>(f.tcfg.seed + s), r2x_aegru[s],
                      r2y_aegru[s], r2_aegru[s]);
        csv += buf;
    }
    for (std::size_t s = 0; s < seeds; ++s) {
        std::snprintf(buf, sizeof(buf), "vanilla_gru,%llu,%.9g,%.9g,%.9g\n",
                      static_cast<unsigned long long>(f.tcfg.seed + s), r2x_vanilla[s],
                      r2y_vanilla[s], r2_vanilla[s]);
        csv += buf;
    }
    std::snprintf(buf, sizeof(buf), "aegru,mean,%.9g,%.9g,%.9g\n", mean_of(r2x_aegru),
                  mean_of(r2y_aegru), mean_of(r2_aegru));
    csv += buf;
    std::snprintf(buf, sizeof(buf), "aegru,std,%.9g,%.9g,%.9g\n", std_of(r2x_aegru),
                  std_of(r2y_aegru), std_of(r2_aegru));
    csv += buf;
    std::snprintf(buf, sizeof(buf), "vanilla_gru,mean,%.9g,%.9g,%.9g\n", mean_of(r2x_vanilla),
                  mean_of(r2y_vanilla), mean_of(r2_vanilla));
    csv += buf;
    std::snprintf(buf, sizeof(buf), "vanilla_gru,std,%.9g,%.9g,%.9g\n", std_of(r2x_vanilla),
                  std_of(r2y_vanilla), std_of(r2_vanilla));
    csv += buf;
    write_text(out, csv);
    std::printf("ablation over %zu seeds: AEGRU R2 %.4f +- %.4f, vanilla GRU %.4f +- %.4f\n",
                seeds, mean_of(r2_aegru), std_of(r2_aegru), mean_of(r2_vanilla),
                std_of(r2_vanilla));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"AEGRU neural motor decoder toolkit"};
    app.require_subcommand(1);

    std::string config_path, data, model, out, csv, history, sparsity_path;
    std::string split = "test";

    // synth
    SynthConfig scfg;
    CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic recording");
    synth->add_option("--config", config_path, "key = value config file");
    synth->add_option("--out", out, "Output NDR file")->required();
    synth->add_option("--seed", scfg.seed, "Generator seed");
    synth->add_option("--channels", scfg.channel_count, "Channel count")
        ->check(CLI::PositiveNumber);
    synth->add_option("--samples", scfg.duration_samples, "Recording length in samples")
        ->check(CLI::PositiveNumber);
    synth->add_option("--baseline-log-rate", scfg.baseline_log_rate,
                      "Log mean count per 4 ms bin");
    synth->add_option("--tuning-gain", scfg.tuning_gain, "Velocity tuning gain");
    synth->add_option("--smoothness", scfg.velocity_smoothness,
                      "Velocity time constant in samples");

    // train
    TrainFlags train_flags;
    CLI::App* train = app.add_subcommand("train", "Train a decoder on a recording");
    train->add_option("--config", config_path, "key = value config file");
    train->add_option("--data", data, "Input NDR recording")->required();
    train->add_option("--out", out, "Output AEGW checkpoint")->required();
    train->add_option("--history", history, "Per-epoch CSV (default <out>.history.csv)");
    add_train_options(train, train_flags);

    // prune
    TrainFlags prune_flags;
    PruneConfig prune_cfg;
    bool no_finetune = false;
    CLI::App* prune = app.add_subcommand("prune", "Magnitude-prune and fine-tune");
    prune->add_option("--config", config_path, "key = value config file");
    prune->add_option("--model", model, "Input AEGW checkpoint")->required();
    prune->add_option("--data", data, "Recording for fine-tuning and scoring")->required();
    prune->add_option("--out", out, "Output AEGW checkpoint")->required();
    prune->add_option("--tpr", prune_cfg.tpr, "Target pruning rate")
        ->check(CLI::Range(0.0, 1.0));
    prune->add_option("--finetune-epochs", prune_cfg.finetune_epochs,
                      "Fine-tuning epochs after pruning");
    prune->add_flag("--no-finetune", no_finetune, "Skip fine-tuning");
    prune->add_flag("--global", prune_cfg.global,
                    "Rank weights across tensors instead of per tensor");
    prune->add_option("--sparsity-csv", sparsity_path, "Write per-tensor sparsity CSV");
    add_train_options(prune, prune_flags);

    // quantize
    CLI::App* quant = app.add_subcommand("quantize", "8-bit fixed-point weights");
    quant->add_option("--config", config_path, "key = value config file");
    quant->add_option("--model", model, "Input AEGW checkpoint")->required();
    quant->add_option("--out", out, "Output AEGW checkpoint")->required();

    // bench
    std::size_t bench_stride = 1;
    CLI::App* bench = app.add_subcommand("bench", "Benchmark R2, footprint and MACs");
    bench->add_option("--config", config_path, "key = value config file");
    bench->add_option("--model", model, "AEGW checkpoint")->required();
    bench->add_option("--data", data, "NDR recording")->required();
    bench->add_option("--out", out, "Write the report as JSON");
    bench->add_option("--csv", csv, "Write the report as CSV");
    bench->add_option("--split", split, "Recording portion: train, val, test or all")
        ->check(CLI::IsMember({"train", "val", "test", "all"}));
    bench->add_option("--stride", bench_stride, "Samples between predictions")
        ->check(CLI::PositiveNumber);

    // grid
    TrainFlags grid_flags;
    std::vector<std::size_t> ws_list, n_list;
    std::size_t jobs = default_jobs();
    CLI::App* grid = app.add_subcommand("grid", "Window-size / step-count sweep");
    grid->add_option("--config", config_path, "key = value config file");
    grid->add_option("--data", data, "NDR recording")->required();
    grid->add_option("--ws-list", ws_list, "Sub-window sizes to sweep")
        ->required()->delimiter(',');
    grid->add_option("--n-list", n_list, "Step counts to sweep")->required()->delimiter(',');
    grid->add_option("--out", out, "Output CSV")->required();
    grid->add_option("--jobs", jobs, "Parallel workers")->check(CLI::PositiveNumber);
    add_train_options(grid, grid_flags);

    // sweep-tpr
    TrainFlags sweep_flags;
    std::vector<double> tpr_list;
    std::size_t sweep_finetune = 10;
    std::size_t sweep_jobs = default_jobs();
    CLI::App* sweep = app.add_subcommand("sweep-tpr", "Pruning-rate sweep");
    sweep->add_option("--config", config_path, "key = value config file");
    sweep->add_option("--data", data, "NDR recording")->required();
    sweep->add_option("--model", model, "Reuse a trained checkpoint instead of training");
    sweep->add_option("--tpr-list", tpr_list, "Pruning rates to sweep")
        ->required()->delimiter(',');
    sweep->add_option("--out", out, "Output CSV")->required();
    sweep->add_option("--finetune-epochs", sweep_finetune, "Fine-tuning epochs per rate");
    sweep->add_option("--jobs", sweep_jobs, "Parallel workers")->check(CLI::PositiveNumber);
    add_train_options(sweep, sweep_flags);

    // ablate
    TrainFlags ablate_flags;
    std::size_t seeds = 5;
    std::size_t ablate_jobs = default_jobs();
    CLI::App* ablate = app.add_subcommand("ablate", "AEGRU vs vanilla GRU over seeds");
    ablate->add_option("--config", config_path, "key = value config file");
    ablate->add_option("--data", data, "NDR recording")->required();
    ablate->add_option("--out", out, "Output CSV")->required();
    ablate->add_option("--seeds", seeds, "Number of matched seeds")
        ->check(CLI::PositiveNumber);
    ablate->add_option("--jobs", ablate_jobs, "Parallel workers")
        ->check(CLI::PositiveNumber);
    add_train_options(ablate, ablate_flags);

    // Config-file tokens are injected ahead of the explicit ones; taking the
    // last occurrence lets the command line override the file.
    for (CLI::App* sub : app.get_subcommands([](CLI::App*) { return true; }))
        for (CLI::Option* opt : sub->get_options())
            opt->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

    try {
        std::vector<std::string> args(argv + 1, argv + argc);
        args = merge_config(app, std::move(args));
        std::reverse(args.begin(), args.end());
        app.parse(args);

        if (*synth) cmd_synth(scfg, out);
        if (*train) cmd_train(data, out, history, train_flags);
        if (*prune) cmd_prune(model, data, out, prune_cfg, no_finetune, sparsity_path,
                              prune_flags);
        if (*quant) cmd_quantize(model, out);
        if (*bench) cmd_bench(model, data, out, csv, split, bench_stride);
        if (*grid) cmd_grid(data, ws_list, n_list, out, grid_flags, jobs);
        if (*sweep) cmd_sweep_tpr(data, model, tpr_list, out, sweep_finetune, sweep_flags,
                                  sweep_jobs);
        if (*ablate) cmd_ablate(data, out, seeds, ablate_flags, ablate_jobs);
        return 0;
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return 2;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const ContractError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 3;
    } catch (const FormatError& e) {
        std::fprintf(stderr, "format error: %s\n", e.what());
        return 3;
    } catch (const DomainError& e) {
        std::fprintf(stderr, "numeric error: %s\n", e.what());
        return 4;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric error: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
