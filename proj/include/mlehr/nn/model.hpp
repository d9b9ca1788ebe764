#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mlehr/nn/graph.hpp"

namespace mlehr::nn {

enum class EncoderKind { text, code_based, common_feature };

std::string to_string(EncoderKind kind);
EncoderKind parse_encoder_kind(const std::string& text);

struct ModelConfig {
    EncoderKind kind = EncoderKind::text;
    int d_model = 128;
    int n_layers_f = 2;
    int n_layers_g = 2;
    int n_heads = 4;
    int ffn_mult = 4;
    int max_tokens_per_event = 64;
    int max_events_per_stay = 256;
    double dropout = 0.3;
    int vocab_types = 0;    // text: tokenizer type count; ids are 2 * type + space flag
    int code_vocab = 0;     // code_based: codes including UNK (row 0)
    int bin_vocab = 0;      // code_based: value-bin rows including UNK (row 0)
    int common_inputs = 0;  // common_feature: 2 * variables (value, missing)
    std::vector<int> head_classes;

    void validate() const;
    std::string to_json() const;
    static ModelConfig from_json(const std::string& text);
    bool operator==(const ModelConfig&) const = default;
};

// One forward pass worth of stays. Event payloads are deduplicated: events
// lists, per occurrence, the payload row it uses.
struct BatchInput {
    // text: token ids; code_based: {code, value-bin rows...}
    std::vector<const std::vector<std::int32_t>*> tokens;
    // common_feature: one row of common_inputs values
    std::vector<const std::vector<float>*> features;
    std::vector<int> events;        // payload index per event occurrence, stays contiguous
    std::vector<double> minutes;    // per occurrence
    Segments stays;                 // ranges over occurrences
    std::vector<std::vector<int>> labels;  // per stay; may be empty for inference

    size_t payloads() const { return tokens.empty() ? features.size() : tokens.size(); }
};

// Parameters live in a deque so graph nodes can hold references to them.
template <class T>
class Model {
   public:
    Model(const ModelConfig& config, std::uint64_t seed);
    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;

    const ModelConfig& config() const { return config_; }
    std::deque<Param<T>>& params() { return params_; }
    const std::deque<Param<T>>& params() const { return params_; }
    Param<T>& param(const std::string& name);
    size_t parameter_count() const;
    const std::vector<HeadSlice>& heads() const { return heads_; }

    // Event vectors m, one row per payload.
    Var embed_events(Graph<T>& g, const BatchInput& in);
    // Patient vectors h, one row per stay.
    Var encode_stays(Graph<T>& g, Var event_vectors, const BatchInput& in);
    Var predict(Graph<T>& g, Var stay_vectors);
    Var forward(Graph<T>& g, const BatchInput& in);

    void zero_grad();
    std::vector<Mat<T>> state() const;
    void load_state(const std::vector<Mat<T>>& state);

    // Tokens dropped from over-long events since construction.
    std::uint64_t truncated_tokens() const { return truncated_tokens_; }

   private:
    struct Block {
        Param<T>*ln1_g, *ln1_b, *w_qkv, *b_qkv, *w_o, *b_o, *ln2_g, *ln2_b, *w_1, *b_1, *w_2, *b_2;
    };
    Param<T>& add(const std::string& name, int rows, int cols);
    Block make_block(const std::string& prefix, util::Rng& rng);
    Var run_block(Graph<T>& g, Var x, const Block& b, const Segments& segments);

    ModelConfig config_;
    std::deque<Param<T>> params_;
    std::map<std::string, Param<T>*> by_name_;
    std::vector<HeadSlice> heads_;
    std::vector<Block> f_blocks_, g_blocks_;
    std::uint64_t truncated_tokens_ = 0;
};

extern template class Model<float>;
extern template class Model<double>;

// Sinusoidal encoding of minutes since admission, d columns.
Mat<double> time_encoding(const std::vector<double>& minutes, int d);

// Checkpoint file:
//
//   "MLEHRCKP" u32 version
//   str model config JSON
//   str metadata JSON (free-form: vocabularies, bin edges, provenance)
//   u64 n_tensors, then per tensor: str name, u64 rows, u64 cols, f32[rows*cols] row-major
//
// Little-endian, written atomically.
struct Checkpoint {
    ModelConfig config;
    std::string metadata = "{}";
    std::vector<std::string> names;
    std::vector<Mat<float>> tensors;
};

Checkpoint make_checkpoint(const Model<float>& model, std::string metadata = "{}");
void apply_checkpoint(Model<float>& model, const Checkpoint& ckpt);
std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes, const std::string& source = "<checkpoint>");
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct AdamOptions {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double clip_norm = 1.0;  // global gradient norm; <= 0 disables
};

class Adam {
   public:
    explicit Adam(AdamOptions options) : opt_(options) {}
    // Returns the pre-clipping gradient norm.
    double step(Model<float>& model);
    std::int64_t steps() const { return t_; }

   private:
    AdamOptions opt_;
    std::int64_t t_ = 0;
};

struct GradcheckResult {
    std::string tensor;
    double relative_error = 0.0;  // ||analytic - numeric|| / max(||analytic||, ||numeric||)
    double analytic_norm = 0.0;
};

// Central differences on every entry of every tensor of a double-precision
// model in eval mode.
std::vector<GradcheckResult> gradient_check(const ModelConfig& config, std::uint64_t seed, const BatchInput& in,
                                            double eps = 1e-5);

}  // namespace mlehr::nn
