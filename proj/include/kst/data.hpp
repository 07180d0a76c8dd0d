#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"
#include "kst/tensor.hpp"

namespace kst {

// One labeled two-modality example. Values are held as doubles in memory;
// the KSEF container stores 32-bit floats, so a load-save cycle after the
// first quantization is byte-identical.
struct Sample {
    std::string id;
    int label = 0;
    Tensor audio; // [L_a, audio_dim]
    Tensor text;  // [L_t, text_dim]
};

struct Dataset {
    int audio_dim = 0;
    int text_dim = 0;
    std::vector<std::string> label_names;
    std::vector<Sample> samples;

    std::vector<int64_t> class_histogram() const;
};

// KSEF v1 container:
//   magic "KSEF", u8 version=1, u32le record count,
//   u32le header length, UTF-8 JSON header {audio_dim, text_dim, label_names},
//   then per record: u32le id length, id bytes, u8 label, u32le L_a, u32le L_t,
//   L_a*audio_dim f32le, L_t*text_dim f32le.
Dataset load_dataset(const std::string& path);
Dataset load_dataset(std::istream& is, const std::string& origin);
void save_dataset(const std::string& path, const Dataset& ds);
void save_dataset(std::ostream& os, const Dataset& ds);

// Synthetic two-modality classification data. Each sample's class is carried
// by signal_token_count class-specific direction vectors placed at random
// positions in both modalities; every other position is class-independent
// noise. With signal_strength 0 the features are independent of the label.
struct SynthSpec {
    int n_samples = 800;
    int n_classes = 4;
    int audio_dim = 12;
    int text_dim = 10;
    int signal_token_count = 2;
    int noise_token_count = 0; // >0 pins length to signal+noise; 0 uses the ranges below
    double signal_strength = 4.0;
    uint64_t seed = 1;
    int audio_len_min = 6, audio_len_max = 12;
    int text_len_min = 4, text_len_max = 8;
    std::vector<double> class_weights; // empty = exactly balanced

    void validate() const;
    nlohmann::json to_json() const;
    static SynthSpec from_json(const nlohmann::json& j);
};

struct SynthResult {
    Dataset dataset;
    // Per sample, the positions that carry class signal (generator metadata,
    // used by oracles and analysis, never by the model).
    std::vector<std::vector<int>> audio_signal_pos;
    std::vector<std::vector<int>> text_signal_pos;
};

SynthResult generate_synthetic(const SynthSpec& spec);

// The class direction vectors the generator plants, unit norm, deterministic
// per (class, dimension).
std::vector<std::vector<double>> synth_class_directions(int n_classes, int dim);

// Fixed-size batch with per-position validity masks. Preserves sample
// content exactly: decollate() recovers the original sequences.
struct CollatedBatch {
    Tensor audio; // [B, L_a_max, audio_dim], zero padded
    Tensor text;  // [B, L_t_max, text_dim], zero padded
    std::vector<std::vector<uint8_t>> audio_valid;
    std::vector<std::vector<uint8_t>> text_valid;
    std::vector<int> labels;
    std::vector<std::string> ids;
};

CollatedBatch collate(const std::vector<Sample>& samples, int64_t max_audio_len,
                      int64_t max_text_len);
std::vector<Sample> decollate(const CollatedBatch& batch);

} // namespace kst
