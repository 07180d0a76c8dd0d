#include "kst/cli.hpp"

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "kst/data.hpp"
#include "kst/model.hpp"
#include "kst/trainer.hpp"
#include "kst/version.hpp"

namespace kst {

namespace {

namespace fs = std::filesystem;

std::string iso8601_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string fnv1a64_hex(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path + " for hashing");
    uint64_t h = 0xCBF29CE484222325ULL;
    char buf[1 << 16];
    while (is) {
        is.read(buf, sizeof(buf));
        const std::streamsize n = is.gcount();
        for (std::streamsize i = 0; i < n; ++i) {
            h ^= static_cast<uint8_t>(buf[i]);
            h *= 0x100000001B3ULL;
        }
    }
    char out[17];
    std::snprintf(out, sizeof(out), "%016llx", static_cast<unsigned long long>(h));
    return out;
}

void write_text_atomic(const fs::path& path, const std::string& content) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw IoError("cannot write " + path.string());
        os << content;
    }
    fs::rename(tmp, path);
}

// Reproducibility record: written (status "running") before the work starts
// and rewritten (status "complete"/"failed") when it ends.
class Manifest {
public:
    Manifest(fs::path path, std::string command) : path_(std::move(path)) {
        j_["command"] = std::move(command);
        j_["library_version"] = kLibraryVersion;
        j_["started_at"] = iso8601_now();
        j_["input_hashes"] = nlohmann::json::object();
        j_["output_paths"] = nlohmann::json::array();
    }

    void set_config(const nlohmann::json& cfg) { j_["config"] = cfg; }
    void set_seed(uint64_t seed) { j_["seed"] = seed; }
    void add_input(const std::string& path) { j_["input_hashes"][path] = fnv1a64_hex(path); }
    void add_output(const std::string& path) { j_["output_paths"].push_back(path); }
    void set(const std::string& key, const nlohmann::json& value) { j_[key] = value; }

    void begin() {
        j_["status"] = "running";
        write_text_atomic(path_, j_.dump(2) + "\n");
    }

    void finish(bool ok) {
        j_["status"] = ok ? "complete" : "failed";
        j_["finished_at"] = iso8601_now();
        write_text_atomic(path_, j_.dump(2) + "\n");
    }

private:
    fs::path path_;
    nlohmann::json j_;
};

struct ResolvedConfig {
    ModelConfig model;
    TrainConfig train;
};

nlohmann::json resolved_to_json(const ResolvedConfig& cfg) {
    nlohmann::json j;
    j["model"] = cfg.model.to_json();
    j["train"] = cfg.train.to_json();
    return j;
}

nlohmann::json load_json_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path);
    try {
        nlohmann::json j;
        is >> j;
        return j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("invalid JSON in " + path + ": " + e.what());
    }
}

// defaults < config file < flags
struct ConfigFlags {
    std::optional<int> d_model, heads, n_feat_layers, n_ccab, n_deep, batch_size, epochs,
        decay_every, repeats;
    std::optional<double> sparse_ratio, dropout_p, lr0, decay_factor, eval_split, clip_norm;
    std::optional<uint64_t> seed;
    std::string config_path;

    void register_common(CLI::App* cmd) {
        cmd->add_option("--config", config_path, "JSON config file ({\"model\":{},\"train\":{}})");
        cmd->add_option("--seed", seed, "run seed");
        cmd->add_option("--d-model", d_model, "model width");
        cmd->add_option("--heads", heads, "attention heads");
        cmd->add_option("--n-feat-layers", n_feat_layers, "feature-extraction layers per modality");
        cmd->add_option("--n-ccab", n_ccab, "cross-attention blocks");
        cmd->add_option("--n-deep", n_deep, "deep-fusion layers");
        cmd->add_option("--sparse-ratio", sparse_ratio, "kept fraction of key positions");
        cmd->add_option("--dropout", dropout_p, "dropout probability");
        cmd->add_option("--lr0", lr0, "initial learning rate");
        cmd->add_option("--decay-factor", decay_factor, "lr decay factor");
        cmd->add_option("--decay-every", decay_every, "epochs between lr decays");
        cmd->add_option("--batch-size", batch_size, "batch size");
        cmd->add_option("--epochs", epochs, "training epochs");
        cmd->add_option("--eval-split", eval_split, "dev fraction of --data");
        cmd->add_option("--repeats", repeats, "repeated runs with derived seeds");
        cmd->add_option("--clip-norm", clip_norm, "gradient clipping norm (0 = off)");
    }

    ResolvedConfig resolve() const {
        ResolvedConfig cfg;
        if (!config_path.empty()) {
            nlohmann::json j = load_json_file(config_path);
            if (j.contains("model")) cfg.model = ModelConfig::from_json(j["model"]);
            if (j.contains("train")) cfg.train = TrainConfig::from_json(j["train"]);
        }
        if (d_model) cfg.model.d_model = *d_model;
        if (heads) cfg.model.heads = *heads;
        if (n_feat_layers) cfg.model.n_feat_layers = *n_feat_layers;
        if (n_ccab) cfg.model.n_ccab = *n_ccab;
        if (n_deep) cfg.model.n_deep = *n_deep;
        if (sparse_ratio) cfg.model.sparse_ratio = *sparse_ratio;
        if (dropout_p) cfg.model.dropout_p = *dropout_p;
        if (lr0) cfg.train.lr0 = *lr0;
        if (decay_factor) cfg.train.decay_factor = *decay_factor;
        if (decay_every) cfg.train.decay_every = *decay_every;
        if (batch_size) cfg.train.batch_size = *batch_size;
        if (epochs) cfg.train.epochs = *epochs;
        if (eval_split) cfg.train.eval_split = *eval_split;
        if (repeats) cfg.train.repeats = *repeats;
        if (clip_norm) cfg.train.clip_norm = *clip_norm;
        if (seed) cfg.train.seed = *seed;
        return cfg;
    }
};

struct SplitData {
    std::vector<Sample> train;
    std::vector<Sample> dev;
};

SplitData split_dataset(const Dataset& ds, double eval_split, uint64_t seed) {
    std::vector<size_t> idx(ds.samples.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Rng rng(seed ^ 0x5EEDDA7AULL);
    rng.shuffle(idx);
    size_t n_dev = static_cast<size_t>(std::llround(eval_split * static_cast<double>(idx.size())));
    n_dev = std::max<size_t>(1, std::min(n_dev, idx.size() - 1));
    SplitData out;
    for (size_t i = 0; i < idx.size(); ++i) {
        (i < idx.size() - n_dev ? out.train : out.dev).push_back(ds.samples[idx[i]]);
    }
    return out;
}

std::vector<double> parse_values_list(const std::string& list) {
    std::vector<double> values;
    std::stringstream ss(list);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        try {
            size_t pos = 0;
            values.push_back(std::stod(item, &pos));
            if (pos != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw ConfigError("cannot parse sweep value '" + item + "'");
        }
    }
    if (values.empty()) throw ConfigError("--values is empty");
    return values;
}

int do_train(const std::string& data_path, const std::string& out_dir, const ConfigFlags& flags) {
    ResolvedConfig cfg = flags.resolve();
    Dataset ds = load_dataset(data_path);
    // Input widths are physical properties of the dataset.
    cfg.model.audio_in_dim = ds.audio_dim;
    cfg.model.text_in_dim = ds.text_dim;
    cfg.model.validate();
    cfg.train.validate();

    Manifest manifest(fs::path(out_dir) / "manifest.json", "train");
    manifest.set_config(resolved_to_json(cfg));
    manifest.set_seed(cfg.train.seed);
    manifest.add_input(data_path);
    manifest.begin();

    try {
        SplitData split = split_dataset(ds, cfg.train.eval_split, cfg.train.seed);
        RepeatedTrainResult agg = train_repeated(cfg.model, cfg.train, split.train, split.dev);
        const TrainResult& best = agg.runs[static_cast<size_t>(agg.best_run)];

        const std::string ckpt_dir = (fs::path(out_dir) / "checkpoint").string();
        save_checkpoint(ckpt_dir, *agg.best_model, agg.run_seeds[static_cast<size_t>(agg.best_run)],
                        best.best_epoch, history_to_json(best.history));
        write_text_atomic(fs::path(out_dir) / "history.json", history_to_json(best.history).dump(2) + "\n");
        write_text_atomic(fs::path(out_dir) / "history.csv", history_to_csv(best.history));
        manifest.add_output(ckpt_dir);
        manifest.add_output((fs::path(out_dir) / "history.json").string());
        manifest.add_output((fs::path(out_dir) / "history.csv").string());

        nlohmann::json summary;
        summary["runs"] = cfg.train.repeats;
        summary["mean_dev_ua"] = agg.mean_ua;
        summary["std_dev_ua"] = agg.std_ua;
        summary["mean_dev_wa"] = agg.mean_wa;
        summary["std_dev_wa"] = agg.std_wa;
        summary["best_run"] = agg.best_run;
        summary["best_epoch"] = best.best_epoch;
        summary["best_dev_ua"] = best.best_dev_ua;
        summary["best_dev_wa"] = best.best_dev_wa;
        summary["diverged"] = best.diverged;
        manifest.set("summary", summary);
        manifest.finish(true);
        std::cout << summary.dump(2) << "\n";
        return 0;
    } catch (...) {
        manifest.finish(false);
        throw;
    }
}

int do_eval(const std::string& ckpt_dir, const std::string& data_path) {
    LoadedCheckpoint ckpt = load_checkpoint(ckpt_dir);
    Dataset ds = load_dataset(data_path);
    if (ds.audio_dim != ckpt.model.config().audio_in_dim ||
        ds.text_dim != ckpt.model.config().text_in_dim) {
        throw ConfigError("dataset dimensions do not match the checkpointed model");
    }
    MetricReport report = evaluate(ckpt.model, ds.samples, 0);
    std::cout << report.to_json().dump(2) << "\n";
    return 0;
}

int do_sweep(const std::string& kind_str, const std::string& values_list,
             const std::string& data_path, const std::string& out_dir, const ConfigFlags& flags) {
    SweepKind kind;
    if (kind_str == "sparsity") {
        kind = SweepKind::Sparsity;
    } else if (kind_str == "ccab") {
        kind = SweepKind::Ccab;
    } else {
        throw ConfigError("--kind must be sparsity or ccab, got " + kind_str);
    }
    const std::vector<double> values = parse_values_list(values_list);

    ResolvedConfig cfg = flags.resolve();
    Dataset ds = load_dataset(data_path);
    cfg.model.audio_in_dim = ds.audio_dim;
    cfg.model.text_in_dim = ds.text_dim;
    cfg.model.validate();
    cfg.train.validate();

    Manifest manifest(fs::path(out_dir) / "manifest.json", "sweep");
    manifest.set_config(resolved_to_json(cfg));
    manifest.set_seed(cfg.train.seed);
    manifest.add_input(data_path);
    manifest.set("kind", kind_str);
    manifest.set("values", values);
    manifest.begin();

    try {
        SplitData split = split_dataset(ds, cfg.train.eval_split, cfg.train.seed);
        SweepTable table = sweep(kind, values, cfg.model, cfg.train, split.train, split.dev);
        write_text_atomic(fs::path(out_dir) / "sweep.json", table.to_json().dump(2) + "\n");
        write_text_atomic(fs::path(out_dir) / "sweep.csv", table.to_csv());
        manifest.add_output((fs::path(out_dir) / "sweep.json").string());
        manifest.add_output((fs::path(out_dir) / "sweep.csv").string());
        manifest.finish(true);
        std::cout << table.to_csv();
        return 0;
    } catch (...) {
        manifest.finish(false);
        throw;
    }
}

int do_gradcheck(const std::string& preset, double h, double tol, uint64_t seed) {
    ModelConfig mcfg;
    if (preset == "tiny") {
        mcfg = tiny_preset();
    } else if (preset == "small") {
        mcfg = small_preset();
    } else {
        throw ConfigError("--preset must be tiny or small, got " + preset);
    }

    SynthSpec spec;
    spec.n_samples = 1;
    spec.audio_dim = mcfg.audio_in_dim;
    spec.text_dim = mcfg.text_in_dim;
    spec.audio_len_min = 5;
    spec.audio_len_max = 7;
    spec.text_len_min = 4;
    spec.text_len_max = 5;
    spec.signal_token_count = 2;
    spec.seed = seed;
    SynthResult synth = generate_synthetic(spec);

    Model model(mcfg, seed);
    FiniteDiffReport report = model_gradient_check(model, synth.dataset.samples[0], h, tol);
    std::printf("parameters checked: %zu tensors, %lld elements\n", report.per_param.size(),
                static_cast<long long>(model.parameter_count()));
    std::printf("max relative error: %.3e (worst: %s), h=%.1e, tol=%.1e\n", report.max_rel_err,
                report.worst_param.c_str(), report.h, report.tol);
    std::printf("%s\n", report.pass ? "PASS" : "FAIL");
    if (!report.pass) {
        std::cerr << "error: numeric: gradient check failed with max relative error "
                  << report.max_rel_err << "\n";
        return 1;
    }
    return 0;
}

int do_synth(const std::string& spec_path, const SynthSpec& flag_spec,
             const std::vector<std::string>& set_flags, const std::string& out_path) {
    SynthSpec spec;
    if (!spec_path.empty()) spec = SynthSpec::from_json(load_json_file(spec_path));
    // Flags override individual spec-file fields.
    for (const auto& name : set_flags) {
        if (name == "n-samples") spec.n_samples = flag_spec.n_samples;
        if (name == "classes") spec.n_classes = flag_spec.n_classes;
        if (name == "audio-dim") spec.audio_dim = flag_spec.audio_dim;
        if (name == "text-dim") spec.text_dim = flag_spec.text_dim;
        if (name == "signal-tokens") spec.signal_token_count = flag_spec.signal_token_count;
        if (name == "noise-tokens") spec.noise_token_count = flag_spec.noise_token_count;
        if (name == "signal-strength") spec.signal_strength = flag_spec.signal_strength;
        if (name == "seed") spec.seed = flag_spec.seed;
        if (name == "audio-len-min") spec.audio_len_min = flag_spec.audio_len_min;
        if (name == "audio-len-max") spec.audio_len_max = flag_spec.audio_len_max;
        if (name == "text-len-min") spec.text_len_min = flag_spec.text_len_min;
        if (name == "text-len-max") spec.text_len_max = flag_spec.text_len_max;
        if (name == "imbalance") spec.class_weights = flag_spec.class_weights;
    }
    spec.validate();

    Manifest manifest(out_path + ".manifest.json", "synth");
    manifest.set_config(spec.to_json());
    manifest.set_seed(spec.seed);
    manifest.begin();
    try {
        SynthResult result = generate_synthetic(spec);
        save_dataset(out_path, result.dataset);
        manifest.add_output(out_path);
        manifest.set("record_count", result.dataset.samples.size());
        manifest.finish(true);
        std::cout << "wrote " << result.dataset.samples.size() << " records to " << out_path << "\n";
        return 0;
    } catch (...) {
        manifest.finish(false);
        throw;
    }
}

// One character per cell, weight deciles from ' ' to '@'; dropped key
// columns render as '·'-less blanks in the sparse grid.
void render_trace(const AttnTrace& trace) {
    static const char ramp[] = " .:-=+*#%@";
    for (const auto& e : trace.entries) {
        for (int h = 0; h < e.heads; ++h) {
            std::cout << e.layer << " head " << h << " (" << e.rows << "x" << e.cols << ")\n";
            for (int64_t r = 0; r < e.rows; ++r) {
                std::string dense_row, sparse_row;
                for (int64_t c = 0; c < e.cols; ++c) {
                    const size_t idx = static_cast<size_t>((h * e.rows + r) * e.cols + c);
                    auto shade = [&](double w) {
                        int level = static_cast<int>(w * 10.0);
                        level = std::max(0, std::min(9, level));
                        return ramp[level];
                    };
                    dense_row.push_back(shade(e.dense[idx]));
                    sparse_row.push_back(shade(e.sparse[idx]));
                }
                std::cout << "  " << dense_row << "  |  " << sparse_row << "\n";
            }
        }
    }
}

int do_inspect_attn(const std::string& ckpt_dir, const std::string& data_path,
                    const std::string& sample_id, const std::string& out_path, bool render) {
    LoadedCheckpoint ckpt = load_checkpoint(ckpt_dir);
    Dataset ds = load_dataset(data_path);
    const Sample* sample = nullptr;
    for (const auto& s : ds.samples) {
        if (s.id == sample_id) {
            sample = &s;
            break;
        }
    }
    if (!sample) throw ContractError("sample id '" + sample_id + "' not found in " + data_path);

    Manifest manifest(out_path + ".manifest.json", "inspect-attn");
    manifest.set_config(ckpt.model.config().to_json());
    manifest.set_seed(ckpt.seed);
    manifest.add_input(data_path);
    manifest.set("sample", sample_id);
    manifest.begin();
    try {
        AttnTrace trace;
        ForwardCtx ctx;
        ctx.trace = &trace;
        ckpt.model.forward(sample->audio, sample->text, ctx);
        write_text_atomic(out_path, attn_trace_to_json(trace) + "\n");
        manifest.add_output(out_path);
        manifest.finish(true);
        if (render) render_trace(trace);
        std::cout << "wrote attention trace for " << sample_id << " (" << trace.entries.size()
                  << " attention sites) to " << out_path << "\n";
        return 0;
    } catch (...) {
        manifest.finish(false);
        throw;
    }
}

int do_fmt_dump(const std::string& in_path) {
    Dataset ds = load_dataset(in_path);
    std::cout << "KSEF v1: " << ds.samples.size() << " records, audio_dim=" << ds.audio_dim
              << ", text_dim=" << ds.text_dim << "\n";
    std::cout << "labels:";
    for (const auto& n : ds.label_names) std::cout << " " << n;
    std::cout << "\n";
    const auto hist = ds.class_histogram();
    std::cout << "class histogram:";
    for (size_t c = 0; c < hist.size(); ++c) std::cout << " " << ds.label_names[c] << "=" << hist[c];
    std::cout << "\n";
    for (size_t i = 0; i < ds.samples.size(); ++i) {
        const Sample& s = ds.samples[i];
        std::cout << "#" << i << " id=" << s.id << " label=" << ds.label_names[static_cast<size_t>(s.label)]
                  << " L_a=" << s.audio.dim(0) << " L_t=" << s.text.dim(0) << "\n";
    }
    return 0;
}

} // namespace

int run_cli(const std::vector<std::string>& args) {
    CLI::App app{"key-sparse transformer toolkit"};
    app.require_subcommand(1);

    // train
    std::string train_data, train_out;
    ConfigFlags train_flags;
    CLI::App* train_cmd = app.add_subcommand("train", "train a model on a KSEF dataset");
    train_cmd->add_option("--data", train_data, "KSEF dataset")->required();
    train_cmd->add_option("--out", train_out, "output directory")->required();
    train_flags.register_common(train_cmd);

    // eval
    std::string eval_ckpt, eval_data;
    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a KSEF dataset");
    eval_cmd->add_option("--ckpt", eval_ckpt, "checkpoint directory")->required();
    eval_cmd->add_option("--data", eval_data, "KSEF dataset")->required();

    // sweep
    std::string sweep_kind, sweep_values, sweep_data, sweep_out;
    ConfigFlags sweep_flags;
    CLI::App* sweep_cmd = app.add_subcommand("sweep", "ablation sweep over sparsity or CCAB count");
    sweep_cmd->add_option("--kind", sweep_kind, "sparsity or ccab")->required();
    sweep_cmd->add_option("--values", sweep_values, "comma-separated values")->required();
    sweep_cmd->add_option("--data", sweep_data, "KSEF dataset")->required();
    sweep_cmd->add_option("--out", sweep_out, "output directory")->required();
    sweep_flags.register_common(sweep_cmd);

    // gradcheck
    std::string gc_preset = "tiny";
    double gc_h = 1e-4, gc_tol = 1e-3;
    uint64_t gc_seed = 1;
    CLI::App* gc_cmd = app.add_subcommand("gradcheck", "finite-difference gradient check");
    gc_cmd->add_option("--preset", gc_preset, "tiny or small");
    gc_cmd->add_option("--step", gc_h, "finite-difference step");
    gc_cmd->add_option("--tol", gc_tol, "relative tolerance");
    gc_cmd->add_option("--seed", gc_seed, "seed");

    // synth
    std::string synth_spec_path, synth_out, synth_imbalance;
    SynthSpec synth_flag_spec;
    CLI::App* synth_cmd = app.add_subcommand("synth", "generate a synthetic KSEF dataset");
    synth_cmd->add_option("--spec", synth_spec_path, "SynthSpec JSON file");
    synth_cmd->add_option("--out", synth_out, "output KSEF path")->required();
    synth_cmd->add_option("--n-samples", synth_flag_spec.n_samples, "sample count");
    synth_cmd->add_option("--classes", synth_flag_spec.n_classes, "class count");
    synth_cmd->add_option("--audio-dim", synth_flag_spec.audio_dim, "audio feature width");
    synth_cmd->add_option("--text-dim", synth_flag_spec.text_dim, "text feature width");
    synth_cmd->add_option("--signal-tokens", synth_flag_spec.signal_token_count,
                          "class-signal tokens per sequence");
    synth_cmd->add_option("--noise-tokens", synth_flag_spec.noise_token_count,
                          "noise tokens per sequence (0 uses length ranges)");
    synth_cmd->add_option("--signal-strength", synth_flag_spec.signal_strength, "signal magnitude");
    synth_cmd->add_option("--seed", synth_flag_spec.seed, "generator seed");
    synth_cmd->add_option("--audio-len-min", synth_flag_spec.audio_len_min, "min audio length");
    synth_cmd->add_option("--audio-len-max", synth_flag_spec.audio_len_max, "max audio length");
    synth_cmd->add_option("--text-len-min", synth_flag_spec.text_len_min, "min text length");
    synth_cmd->add_option("--text-len-max", synth_flag_spec.text_len_max, "max text length");
    synth_cmd->add_option("--imbalance", synth_imbalance, "comma-separated class weights");

    // inspect-attn
    std::string ia_ckpt, ia_data, ia_sample, ia_out;
    bool ia_render = false;
    CLI::App* ia_cmd = app.add_subcommand("inspect-attn", "export attention weights as JSON");
    ia_cmd->add_option("--ckpt", ia_ckpt, "checkpoint directory")->required();
    ia_cmd->add_option("--data", ia_data, "KSEF dataset")->required();
    ia_cmd->add_option("--sample", ia_sample, "sample id")->required();
    ia_cmd->add_option("--out", ia_out, "output JSON path")->required();
    ia_cmd->add_flag("--render", ia_render, "also print plain-text weight grids");

    // fmt-dump
    std::string fd_in;
    CLI::App* fd_cmd = app.add_subcommand("fmt-dump", "print KSEF header and record summary");
    fd_cmd->add_option("--in", fd_in, "KSEF file")->required();

    std::vector<const char*> argv;
    argv.push_back("kst");
    for (const auto& a : args) argv.push_back(a.c_str());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "usage error: " << e.what() << "\n\n";
        CLI::App* failing = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
        std::cerr << failing->help() << "\n";
        return 2;
    }

    try {
        if (train_cmd->parsed()) return do_train(train_data, train_out, train_flags);
        if (eval_cmd->parsed()) return do_eval(eval_ckpt, eval_data);
        if (sweep_cmd->parsed())
            return do_sweep(sweep_kind, sweep_values, sweep_data, sweep_out, sweep_flags);
        if (gc_cmd->parsed()) return do_gradcheck(gc_preset, gc_h, gc_tol, gc_seed);
        if (synth_cmd->parsed()) {
            std::vector<std::string> set_flags;
            for (const char* name :
                 {"n-samples", "classes", "audio-dim", "text-dim", "signal-tokens", "noise-tokens",
                  "signal-strength", "seed", "audio-len-min", "audio-len-max", "text-len-min",
                  "text-len-max"}) {
                if (synth_cmd->count(std::string("--") + name)) set_flags.push_back(name);
            }
            if (synth_cmd->count("--imbalance")) {
                synth_flag_spec.class_weights = parse_values_list(synth_imbalance);
                set_flags.push_back("imbalance");
            }
            return do_synth(synth_spec_path, synth_flag_spec, set_flags, synth_out);
        }
        if (ia_cmd->parsed()) return do_inspect_attn(ia_ckpt, ia_data, ia_sample, ia_out, ia_render);
        if (fd_cmd->parsed()) return do_fmt_dump(fd_in);
        std::cerr << "usage error: no subcommand\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.category() << ": " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << e.what() << "\n";
        return 1;
    }
}

} // namespace kst
