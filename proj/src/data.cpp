#include "kst/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "bytes.hpp"
#include "json.hpp"
#include "kst/model.hpp"
#include "kst/rng.hpp"

namespace kst {

namespace {

constexpr char kMagic[4] = {'K', 'S', 'E', 'F'};
constexpr uint8_t kVersion = 1;

std::string header_json(const Dataset& ds) {
    nlohmann::json h;
    h["audio_dim"] = ds.audio_dim;
    h["text_dim"] = ds.text_dim;
    h["label_names"] = ds.label_names;
    return h.dump();
}

} // namespace

std::vector<int64_t> Dataset::class_histogram() const {
    std::vector<int64_t> hist(label_names.size(), 0);
    for (const auto& s : samples) {
        if (s.label >= 0 && static_cast<size_t>(s.label) < hist.size()) ++hist[static_cast<size_t>(s.label)];
    }
    return hist;
}

void save_dataset(std::ostream& os, const Dataset& ds) {
    os.write(kMagic, 4);
    bytes::write_u8(os, kVersion);
    bytes::write_u32(os, static_cast<uint32_t>(ds.samples.size()));
    const std::string header = header_json(ds);
    bytes::write_u32(os, static_cast<uint32_t>(header.size()));
    bytes::write_bytes(os, header);
    for (const auto& s : ds.samples) {
        bytes::write_u32(os, static_cast<uint32_t>(s.id.size()));
        bytes::write_bytes(os, s.id);
        bytes::write_u8(os, static_cast<uint8_t>(s.label));
        bytes::write_u32(os, static_cast<uint32_t>(s.audio.dim(0)));
        bytes::write_u32(os, static_cast<uint32_t>(s.text.dim(0)));
        for (double v : s.audio.values()) bytes::write_f32(os, static_cast<float>(v));
        for (double v : s.text.values()) bytes::write_f32(os, static_cast<float>(v));
    }
}

void save_dataset(const std::string& path, const Dataset& ds) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write " + path);
    save_dataset(os, ds);
    if (!os) throw IoError("write failed for " + path);
}

Dataset load_dataset(std::istream& is, const std::string& origin) {
    char magic[4];
    bytes::read_exact(is, magic, 4, "magic");
    if (std::memcmp(magic, kMagic, 4) != 0) {
        throw FormatError("bad magic in " + origin + ": not a KSEF file");
    }
    const uint8_t version = bytes::read_u8(is, "version");
    if (version != kVersion) {
        throw FormatError("unsupported KSEF version " + std::to_string(version) + " in " + origin);
    }
    const uint32_t count = bytes::read_u32(is, "record count");
    const uint32_t header_len = bytes::read_u32(is, "header length");
    const std::string header = bytes::read_string(is, header_len, "header");

    Dataset ds;
    try {
        nlohmann::json h = nlohmann::json::parse(header);
        ds.audio_dim = h.at("audio_dim").get<int>();
        ds.text_dim = h.at("text_dim").get<int>();
        ds.label_names = h.at("label_names").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError("invalid KSEF header in " + origin + ": " + e.what());
    }
    if (ds.audio_dim < 1 || ds.text_dim < 1 || ds.label_names.empty()) {
        throw SchemaError("KSEF header declares degenerate dimensions in " + origin);
    }

    ds.samples.reserve(count);
    for (uint32_t r = 0; r < count; ++r) {
        const uint32_t id_len = bytes::read_u32(is, "record id length");
        Sample s;
        s.id = bytes::read_string(is, id_len, "record id");
        const uint8_t label = bytes::read_u8(is, "record label");
        if (label >= ds.label_names.size()) {
            throw SchemaError("record " + std::to_string(r) + " in " + origin + " has unknown label id " +
                              std::to_string(label));
        }
        s.label = label;
        const uint32_t la = bytes::read_u32(is, "audio length");
        const uint32_t lt = bytes::read_u32(is, "text length");
        if (la < 1 || lt < 1) {
            throw SchemaError("record " + std::to_string(r) + " in " + origin +
                              " has an empty sequence");
        }
        std::vector<double> av(static_cast<size_t>(la) * ds.audio_dim);
        for (double& v : av) v = bytes::read_f32(is, "audio values");
        std::vector<double> tv(static_cast<size_t>(lt) * ds.text_dim);
        for (double& v : tv) v = bytes::read_f32(is, "text values");
        s.audio = Tensor::from_data({la, ds.audio_dim}, std::move(av));
        s.text = Tensor::from_data({lt, ds.text_dim}, std::move(tv));
        ds.samples.push_back(std::move(s));
    }
    is.peek();
    if (!is.eof()) throw CorruptFileError("trailing bytes after last record in " + origin);
    return ds;
}

Dataset load_dataset(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path);
    return load_dataset(is, path);
}

void SynthSpec::validate() const {
    if (n_samples < 1) throw ConfigError("n_samples must be >= 1");
    if (n_classes < 2) throw ConfigError("n_classes must be >= 2");
    if (audio_dim < 1 || text_dim < 1) throw ConfigError("dims must be >= 1");
    if (signal_token_count < 1) throw ConfigError("signal_token_count must be >= 1");
    if (noise_token_count < 0) throw ConfigError("noise_token_count must be >= 0");
    if (signal_strength < 0.0) throw ConfigError("signal_strength must be >= 0");
    if (noise_token_count == 0) {
        if (audio_len_min < signal_token_count || text_len_min < signal_token_count) {
            throw ConfigError("length ranges must fit signal_token_count");
        }
        if (audio_len_max < audio_len_min || text_len_max < text_len_min) {
            throw ConfigError("length ranges must be non-empty");
        }
    }
    if (!class_weights.empty() && static_cast<int>(class_weights.size()) != n_classes) {
        throw ConfigError("class_weights must have one entry per class");
    }
}

nlohmann::json SynthSpec::to_json() const {
    nlohmann::json j;
    j["n_samples"] = n_samples;
    j["n_classes"] = n_classes;
    j["audio_dim"] = audio_dim;
    j["text_dim"] = text_dim;
    j["signal_token_count"] = signal_token_count;
    j["noise_token_count"] = noise_token_count;
    j["signal_strength"] = signal_strength;
    j["seed"] = seed;
    j["audio_len_min"] = audio_len_min;
    j["audio_len_max"] = audio_len_max;
    j["text_len_min"] = text_len_min;
    j["text_len_max"] = text_len_max;
    j["class_weights"] = class_weights;
    return j;
}

SynthSpec SynthSpec::from_json(const nlohmann::json& j) {
    SynthSpec s;
    s.n_samples = j.value("n_samples", s.n_samples);
    s.n_classes = j.value("n_classes", s.n_classes);
    s.audio_dim = j.value("audio_dim", s.audio_dim);
    s.text_dim = j.value("text_dim", s.text_dim);
    s.signal_token_count = j.value("signal_token_count", s.signal_token_count);
    s.noise_token_count = j.value("noise_token_count", s.noise_token_count);
    s.signal_strength = j.value("signal_strength", s.signal_strength);
    s.seed = j.value("seed", s.seed);
    s.audio_len_min = j.value("audio_len_min", s.audio_len_min);
    s.audio_len_max = j.value("audio_len_max", s.audio_len_max);
    s.text_len_min = j.value("text_len_min", s.text_len_min);
    s.text_len_max = j.value("text_len_max", s.text_len_max);
    s.class_weights = j.value("class_weights", s.class_weights);
    s.validate();
    return s;
}

std::vector<std::vector<double>> synth_class_directions(int n_classes, int dim) {
    std::vector<std::vector<double>> dirs;
    dirs.reserve(static_cast<size_t>(n_classes));
    for (int c = 0; c < n_classes; ++c) {
        Rng rng(0xC1A55ULL * 1000003ULL + static_cast<uint64_t>(c) * 7919ULL +
                static_cast<uint64_t>(dim));
        std::vector<double> d(static_cast<size_t>(dim));
        double norm2 = 0.0;
        for (double& v : d) {
            v = rng.uniform(-1.0, 1.0);
            norm2 += v * v;
        }
        const double inv = 1.0 / std::sqrt(norm2);
        for (double& v : d) v *= inv;
        dirs.push_back(std::move(d));
    }
    return dirs;
}

namespace {

std::vector<int> pick_positions(Rng& rng, int length, int count) {
    std::vector<int> all(static_cast<size_t>(length));
    for (int i = 0; i < length; ++i) all[static_cast<size_t>(i)] = i;
    rng.shuffle(all);
    all.resize(static_cast<size_t>(count));
    std::sort(all.begin(), all.end());
    return all;
}

Tensor synth_sequence(Rng& rng, int length, int dim, const std::vector<double>& direction,
                      const std::vector<int>& signal_pos, double strength) {
    Tensor seq = Tensor::zeros({length, dim});
    double* v = seq.values_mut().data();
    for (int t = 0; t < length; ++t)
        for (int c = 0; c < dim; ++c) v[t * dim + c] = rng.next_gaussian();
    for (int pos : signal_pos) {
        for (int c = 0; c < dim; ++c) {
            v[pos * dim + c] += strength * direction[static_cast<size_t>(c)];
        }
    }
    return seq;
}

} // namespace

SynthResult generate_synthetic(const SynthSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);

    // Label sequence: exactly balanced by default, then shuffled; weighted
    // draws when an imbalance is requested.
    std::vector<int> labels(static_cast<size_t>(spec.n_samples));
    if (spec.class_weights.empty()) {
        for (int i = 0; i < spec.n_samples; ++i) labels[static_cast<size_t>(i)] = i % spec.n_classes;
        rng.shuffle(labels);
    } else {
        double total = 0.0;
        for (double w : spec.class_weights) {
            if (w < 0.0) throw ConfigError("class_weights must be non-negative");
            total += w;
        }
        if (total <= 0.0) throw ConfigError("class_weights must not sum to zero");
        for (int i = 0; i < spec.n_samples; ++i) {
            double u = rng.next_double() * total;
            int c = 0;
            for (; c + 1 < spec.n_classes; ++c) {
                if (u < spec.class_weights[static_cast<size_t>(c)]) break;
                u -= spec.class_weights[static_cast<size_t>(c)];
            }
            labels[static_cast<size_t>(i)] = c;
        }
    }

    const auto audio_dirs = synth_class_directions(spec.n_classes, spec.audio_dim);
    const auto text_dirs = synth_class_directions(spec.n_classes, spec.text_dim);

    SynthResult out;
    out.dataset.audio_dim = spec.audio_dim;
    out.dataset.text_dim = spec.text_dim;
    for (int c = 0; c < spec.n_classes; ++c) {
        out.dataset.label_names.push_back(c < static_cast<int>(kEmotionNames.size())
                                              ? std::string(kEmotionNames[static_cast<size_t>(c)])
                                              : "class" + std::to_string(c));
    }

    for (int i = 0; i < spec.n_samples; ++i) {
        const int label = labels[static_cast<size_t>(i)];
        const int la = spec.noise_token_count > 0
                           ? spec.signal_token_count + spec.noise_token_count
                           : spec.audio_len_min +
                                 static_cast<int>(rng.next_below(
                                     static_cast<uint64_t>(spec.audio_len_max - spec.audio_len_min + 1)));
        const int lt = spec.noise_token_count > 0
                           ? spec.signal_token_count + spec.noise_token_count
                           : spec.text_len_min +
                                 static_cast<int>(rng.next_below(
                                     static_cast<uint64_t>(spec.text_len_max - spec.text_len_min + 1)));

        const auto apos = pick_positions(rng, la, spec.signal_token_count);
        const auto tpos = pick_positions(rng, lt, spec.signal_token_count);

        Sample s;
        s.id = "synth-" + std::to_string(spec.seed) + "-" + std::to_string(i);
        s.label = label;
        s.audio = synth_sequence(rng, la, spec.audio_dim, audio_dirs[static_cast<size_t>(label)],
                                 apos, spec.signal_strength);
        s.text = synth_sequence(rng, lt, spec.text_dim, text_dirs[static_cast<size_t>(label)], tpos,
                                spec.signal_strength);
        out.dataset.samples.push_back(std::move(s));
        out.audio_signal_pos.push_back(apos);
        out.text_signal_pos.push_back(tpos);
    }
    return out;
}

CollatedBatch collate(const std::vector<Sample>& samples, int64_t max_audio_len,
                      int64_t max_text_len) {
    if (samples.empty()) throw ContractError("collate requires at least one sample");
    const int64_t B = static_cast<int64_t>(samples.size());
    const int64_t ad = samples[0].audio.dim(1);
    const int64_t td = samples[0].text.dim(1);

    int64_t la_max = 1, lt_max = 1;
    for (const auto& s : samples) {
        la_max = std::max(la_max, std::min(s.audio.dim(0), max_audio_len));
        lt_max = std::max(lt_max, std::min(s.text.dim(0), max_text_len));
    }

    CollatedBatch batch;
    batch.audio = Tensor::zeros({B, la_max, ad});
    batch.text = Tensor::zeros({B, lt_max, td});
    double* av = batch.audio.values_mut().data();
    double* tv = batch.text.values_mut().data();
    for (int64_t b = 0; b < B; ++b) {
        const Sample& s = samples[static_cast<size_t>(b)];
        if (s.audio.dim(1) != ad || s.text.dim(1) != td) {
            throw ShapeError("collate: sample " + s.id + " has mismatched feature dimensions");
        }
        const int64_t la = std::min(s.audio.dim(0), max_audio_len);
        const int64_t lt = std::min(s.text.dim(0), max_text_len);
        for (int64_t t = 0; t < la; ++t)
            for (int64_t c = 0; c < ad; ++c)
                av[(b * la_max + t) * ad + c] = s.audio.values()[static_cast<size_t>(t * ad + c)];
        for (int64_t t = 0; t < lt; ++t)
            for (int64_t c = 0; c < td; ++c)
                tv[(b * lt_max + t) * td + c] = s.text.values()[static_cast<size_t>(t * td + c)];
        std::vector<uint8_t> amask(static_cast<size_t>(la_max), 0);
        std::fill(amask.begin(), amask.begin() + la, 1);
        std::vector<uint8_t> tmask(static_cast<size_t>(lt_max), 0);
        std::fill(tmask.begin(), tmask.begin() + lt, 1);
        batch.audio_valid.push_back(std::move(amask));
        batch.text_valid.push_back(std::move(tmask));
        batch.labels.push_back(s.label);
        batch.ids.push_back(s.id);
    }
    return batch;
}

std::vector<Sample> decollate(const CollatedBatch& batch) {
    const int64_t B = batch.audio.dim(0);
    const int64_t la_max = batch.audio.dim(1), ad = batch.audio.dim(2);
    const int64_t lt_max = batch.text.dim(1), td = batch.text.dim(2);
    std::vector<Sample> out;
    out.reserve(static_cast<size_t>(B));
    for (int64_t b = 0; b < B; ++b) {
        int64_t la = 0, lt = 0;
        for (int64_t t = 0; t < la_max; ++t) la += batch.audio_valid[static_cast<size_t>(b)][static_cast<size_t>(t)] ? 1 : 0;
        for (int64_t t = 0; t < lt_max; ++t) lt += batch.text_valid[static_cast<size_t>(b)][static_cast<size_t>(t)] ? 1 : 0;
        Sample s;
        s.id = batch.ids[static_cast<size_t>(b)];
        s.label = batch.labels[static_cast<size_t>(b)];
        std::vector<double> av(static_cast<size_t>(la * ad));
        for (int64_t t = 0; t < la; ++t)
            for (int64_t c = 0; c < ad; ++c)
                av[static_cast<size_t>(t * ad + c)] = batch.audio.values()[static_cast<size_t>((b * la_max + t) * ad + c)];
        std::vector<double> tv(static_cast<size_t>(lt * td));
        for (int64_t t = 0; t < lt; ++t)
            for (int64_t c = 0; c < td; ++c)
                tv[static_cast<size_t>(t * td + c)] = batch.text.values()[static_cast<size_t>((b * lt_max + t) * td + c)];
        s.audio = Tensor::from_data({la, ad}, std::move(av));
        s.text = Tensor::from_data({lt, td}, std::move(tv));
        out.push_back(std::move(s));
    }
    return out;
}

} // namespace kst
