#include "mlehr/nn/model.hpp"

#include <cmath>

#include "json.hpp"
#include "mlehr/error.hpp"
#include "mlehr/util/binio.hpp"
#include "mlehr/util/fs.hpp"

namespace mlehr::nn {

using nlohmann::json;

std::string to_string(EncoderKind kind) {
    switch (kind) {
        case EncoderKind::text:
            return "text";
        case EncoderKind::code_based:
            return "code_based";
        case EncoderKind::common_feature:
            return "common_feature";
    }
    return "text";
}

EncoderKind parse_encoder_kind(const std::string& text) {
    if (text == "text") return EncoderKind::text;
    if (text == "code_based") return EncoderKind::code_based;
    if (text == "common_feature") return EncoderKind::common_feature;
    fail("InvalidConfig", "unknown encoder kind '" + text + "'");
}

void ModelConfig::validate() const {
    if (d_model <= 0 || n_heads <= 0 || d_model % n_heads != 0)
        fail("InvalidConfig", "d_model must be a positive multiple of n_heads");
    if (n_layers_f < 0 || n_layers_g < 0 || ffn_mult <= 0) fail("InvalidConfig", "layer counts");
    if (max_tokens_per_event <= 0 || max_events_per_stay <= 0) fail("InvalidConfig", "caps must be positive");
    if (dropout < 0.0 || dropout >= 1.0) fail("InvalidConfig", "dropout must be in [0, 1)");
    if (head_classes.empty()) fail("InvalidConfig", "no task heads");
    for (int c : head_classes)
        if (c < 2) fail("InvalidConfig", "a head needs at least 2 classes");
    switch (kind) {
        case EncoderKind::text:
            if (vocab_types <= 2) fail("InvalidConfig", "vocab_types");
            break;
        case EncoderKind::code_based:
            if (code_vocab <= 0 || bin_vocab <= 0) fail("InvalidConfig", "code_vocab / bin_vocab");
            break;
        case EncoderKind::common_feature:
            if (common_inputs <= 0) fail("InvalidConfig", "common_inputs");
            break;
    }
}

std::string ModelConfig::to_json() const {
    json j = {{"kind", to_string(kind)},
              {"d_model", d_model},
              {"n_layers_f", n_layers_f},
              {"n_layers_g", n_layers_g},
              {"n_heads", n_heads},
              {"ffn_mult", ffn_mult},
              {"max_tokens_per_event", max_tokens_per_event},
              {"max_events_per_stay", max_events_per_stay},
              {"dropout", dropout},
              {"vocab_types", vocab_types},
              {"code_vocab", code_vocab},
              {"bin_vocab", bin_vocab},
              {"common_inputs", common_inputs},
              {"head_classes", head_classes}};
    return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
    ModelConfig c;
    try {
        json j = json::parse(text);
        c.kind = parse_encoder_kind(j.value("kind", std::string("text")));
        c.d_model = j.at("d_model").get<int>();
        c.n_layers_f = j.at("n_layers_f").get<int>();
        c.n_layers_g = j.at("n_layers_g").get<int>();
        c.n_heads = j.at("n_heads").get<int>();
        c.ffn_mult = j.value("ffn_mult", 4);
        c.max_tokens_per_event = j.at("max_tokens_per_event").get<int>();
        c.max_events_per_stay = j.at("max_events_per_stay").get<int>();
        c.dropout = j.value("dropout", 0.3);
        c.vocab_types = j.value("vocab_types", 0);
        c.code_vocab = j.value("code_vocab", 0);
        c.bin_vocab = j.value("bin_vocab", 0);
        c.common_inputs = j.value("common_inputs", 0);
        c.head_classes = j.at("head_classes").get<std::vector<int>>();
    } catch (const json::exception& e) {
        fail("InvalidConfig", std::string("model config: ") + e.what());
    }
    c.validate();
    return c;
}

Mat<double> time_encoding(const std::vector<double>& minutes, int d) {
    Mat<double> out(static_cast<Eigen::Index>(minutes.size()), d);
    std::vector<double> freq;
    for (int i = 0; i < d; i += 2) freq.push_back(std::pow(10000.0, -static_cast<double>(i) / d));
    for (size_t r = 0; r < minutes.size(); ++r) {
        for (int i = 0; i < d; i += 2) {
            double a = minutes[r] * freq[static_cast<size_t>(i / 2)];
            out(static_cast<Eigen::Index>(r), i) = std::sin(a);
            if (i + 1 < d) out(static_cast<Eigen::Index>(r), i + 1) = std::cos(a);
        }
    }
    return out;
}

template <class T>
Param<T>& Model<T>::add(const std::string& name, int rows, int cols) {
    params_.push_back(Param<T>{name, Mat<T>::Zero(rows, cols), Mat<T>(), Mat<T>(), Mat<T>()});
    by_name_[name] = &params_.back();
    return params_.back();
}

namespace {

template <class T>
void init_normal(Param<T>& p, util::Rng& rng, double std) {
    for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = static_cast<T>(rng.normal() * std);
}

template <class T>
void init_xavier(Param<T>& p, util::Rng& rng) {
    double a = std::sqrt(6.0 / static_cast<double>(p.value.rows() + p.value.cols()));
    for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = static_cast<T>(rng.uniform(-a, a));
}

}  // namespace

template <class T>
typename Model<T>::Block Model<T>::make_block(const std::string& prefix, util::Rng& rng) {
    const int d = config_.d_model, h = config_.d_model * config_.ffn_mult;
    Block b{};
    b.ln1_g = &add(prefix + ".ln1.gamma", 1, d);
    b.ln1_g->value.setOnes();
    b.ln1_b = &add(prefix + ".ln1.beta", 1, d);
    b.w_qkv = &add(prefix + ".attn.w_qkv", d, 3 * d);
    init_xavier(*b.w_qkv, rng);
    b.b_qkv = &add(prefix + ".attn.b_qkv", 1, 3 * d);
    b.w_o = &add(prefix + ".attn.w_out", d, d);
    init_xavier(*b.w_o, rng);
    b.b_o = &add(prefix + ".attn.b_out", 1, d);
    b.ln2_g = &add(prefix + ".ln2.gamma", 1, d);
    b.ln2_g->value.setOnes();
    b.ln2_b = &add(prefix + ".ln2.beta", 1, d);
    b.w_1 = &add(prefix + ".ffn.w_in", d, h);
    init_xavier(*b.w_1, rng);
    b.b_1 = &add(prefix + ".ffn.b_in", 1, h);
    b.w_2 = &add(prefix + ".ffn.w_out", h, d);
    init_xavier(*b.w_2, rng);
    b.b_2 = &add(prefix + ".ffn.b_out", 1, d);
    return b;
}

template <class T>
Model<T>::Model(const ModelConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    util::Rng rng(seed);
    const int d = config_.d_model;
    switch (config_.kind) {
        case EncoderKind::text:
            init_normal(add("f.token_embedding", config_.vocab_types, d), rng, 0.1);
            init_normal(add("f.space_embedding", 2, d), rng, 0.1);
            init_normal(add("f.position_embedding", config_.max_tokens_per_event, d), rng, 0.1);
            for (int l = 0; l < config_.n_layers_f; ++l) f_blocks_.push_back(make_block("f.block" + std::to_string(l), rng));
            add("f.ln_final.gamma", 1, d).value.setOnes();
            add("f.ln_final.beta", 1, d);
            break;
        case EncoderKind::code_based:
            init_normal(add("f.code_embedding", config_.code_vocab, d), rng, 0.1);
            init_normal(add("f.bin_embedding", config_.bin_vocab, d), rng, 0.1);
            break;
        case EncoderKind::common_feature:
            init_xavier(add("f.input.w", config_.common_inputs, d), rng);
            add("f.input.b", 1, d);
            break;
    }
    init_xavier(add("g.time.w", d, d), rng);
    for (int l = 0; l < config_.n_layers_g; ++l) g_blocks_.push_back(make_block("g.block" + std::to_string(l), rng));
    int total = 0;
    for (int c : config_.head_classes) {
        heads_.push_back(HeadSlice{total, c});
        total += c;
    }
    init_xavier(add("head.w", d, total), rng);
    add("head.b", 1, total);
}

template <class T>
Param<T>& Model<T>::param(const std::string& name) {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) fail("UnknownParameter", name);
    return *it->second;
}

template <class T>
size_t Model<T>::parameter_count() const {
    size_t n = 0;
    for (const auto& p : params_) n += static_cast<size_t>(p.value.size());
    return n;
}

template <class T>
Var Model<T>::run_block(Graph<T>& g, Var x, const Block& b, const Segments& segments) {
    Var h = g.layernorm(x, *b.ln1_g, *b.ln1_b);
    h = g.linear(h, *b.w_qkv, b.b_qkv);
    h = g.attention(h, segments, config_.n_heads);
    h = g.linear(h, *b.w_o, b.b_o);
    x = g.add(x, g.dropout(h, config_.dropout));
    h = g.layernorm(x, *b.ln2_g, *b.ln2_b);
    h = g.gelu(g.linear(h, *b.w_1, b.b_1));
    h = g.linear(h, *b.w_2, b.b_2);
    return g.add(x, g.dropout(h, config_.dropout));
}

template <class T>
Var Model<T>::embed_events(Graph<T>& g, const BatchInput& in) {
    switch (config_.kind) {
        case EncoderKind::text: {
            std::vector<std::int32_t> types, flags, positions;
            Segments segments;
            segments.reserve(in.tokens.size());
            for (const auto* toks : in.tokens) {
                Segment s{static_cast<int>(types.size()), 0};
                for (std::int32_t id : *toks) {
                    if ((id >> 1) == 0) continue;  // padding
                    if (s.length == config_.max_tokens_per_event) {
                        ++truncated_tokens_;
                        continue;
                    }
                    types.push_back(id >> 1);
                    flags.push_back(id & 1);
                    positions.push_back(s.length);
                    ++s.length;
                }
                if (s.length == 0) fail("EmptyInput", "event without tokens");
                segments.push_back(s);
            }
            Var x = g.add(g.add(g.embed(param("f.token_embedding"), types), g.embed(param("f.space_embedding"), flags)),
                          g.embed(param("f.position_embedding"), positions));
            x = g.dropout(x, config_.dropout);
            for (const auto& b : f_blocks_) x = run_block(g, x, b, segments);
            x = g.layernorm(x, param("f.ln_final.gamma"), param("f.ln_final.beta"));
            return g.segment_mean(x, segments);
        }
        case EncoderKind::code_based: {
            std::vector<std::int32_t> codes, bins;
            Segments per_event;
            for (const auto* p : in.tokens) {
                if (p->empty()) fail("EmptyInput", "code payload without a code");
                std::int32_t c = (*p)[0];
                codes.push_back(c < 0 || c >= config_.code_vocab ? 0 : c);
                Segment s{static_cast<int>(bins.size()), static_cast<int>(p->size()) - 1};
                for (size_t i = 1; i < p->size(); ++i) {
                    std::int32_t b = (*p)[i];
                    bins.push_back(b < 0 || b >= config_.bin_vocab ? 0 : b);
                }
                per_event.push_back(s);
            }
            Var x = g.embed(param("f.code_embedding"), codes);
            if (!bins.empty()) x = g.add(x, g.segment_sum(g.embed(param("f.bin_embedding"), bins), per_event));
            return g.dropout(x, config_.dropout);
        }
        case EncoderKind::common_feature: {
            Mat<T> x(static_cast<Eigen::Index>(in.features.size()), config_.common_inputs);
            for (size_t r = 0; r < in.features.size(); ++r) {
                if (static_cast<int>(in.features[r]->size()) != config_.common_inputs)
                    fail("ShapeMismatch", "common feature row width");
                for (int c = 0; c < config_.common_inputs; ++c)
                    x(static_cast<Eigen::Index>(r), c) = static_cast<T>((*in.features[r])[static_cast<size_t>(c)]);
            }
            Var v = g.linear(g.constant(std::move(x)), param("f.input.w"), &param("f.input.b"));
            return g.dropout(v, config_.dropout);
        }
    }
    fail("InvalidConfig", "encoder kind");
}

template <class T>
Var Model<T>::encode_stays(Graph<T>& g, Var event_vectors, const BatchInput& in) {
    if (in.events.size() != in.minutes.size()) fail("ShapeMismatch", "events and minutes");
    Segments segments = in.stays;
    for (auto& s : segments) {
        if (s.length <= 0) fail("NoEvents", "stay without events");
        if (s.length > config_.max_events_per_stay) {
            s.start += s.length - config_.max_events_per_stay;
            s.length = config_.max_events_per_stay;
        }
    }
    Var x = g.gather(event_vectors, in.events);
    Var t = g.linear(g.constant(time_encoding(in.minutes, config_.d_model).template cast<T>()), param("g.time.w"), nullptr);
    x = g.add(x, t);
    for (const auto& b : g_blocks_) x = run_block(g, x, b, segments);
    return g.segment_mean(x, segments);
}

template <class T>
Var Model<T>::predict(Graph<T>& g, Var stay_vectors) {
    Var h = g.dropout(stay_vectors, config_.dropout);
    return g.linear(h, param("head.w"), &param("head.b"));
}

template <class T>
Var Model<T>::forward(Graph<T>& g, const BatchInput& in) {
    return predict(g, encode_stays(g, embed_events(g, in), in));
}

template <class T>
void Model<T>::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

template <class T>
std::vector<Mat<T>> Model<T>::state() const {
    std::vector<Mat<T>> s;
    s.reserve(params_.size());
    for (const auto& p : params_) s.push_back(p.value);
    return s;
}

template <class T>
void Model<T>::load_state(const std::vector<Mat<T>>& state) {
    if (state.size() != params_.size()) fail("ShapeMismatch", "state tensor count");
    size_t i = 0;
    for (auto& p : params_) {
        const auto& s = state[i++];
        if (s.rows() != p.value.rows() || s.cols() != p.value.cols()) fail("ShapeMismatch", p.name);
        p.value = s;
    }
}

template class Model<float>;
template class Model<double>;

Checkpoint make_checkpoint(const Model<float>& model, std::string metadata) {
    Checkpoint c;
    c.config = model.config();
    c.metadata = std::move(metadata);
    for (const auto& p : model.params()) {
        c.names.push_back(p.name);
        c.tensors.push_back(p.value);
    }
    return c;
}

void apply_checkpoint(Model<float>& model, const Checkpoint& ckpt) {
    if (!(model.config() == ckpt.config)) fail("ShapeMismatch", "checkpoint config differs from model config");
    size_t i = 0;
    for (const auto& p : model.params()) {
        if (i >= ckpt.names.size() || ckpt.names[i] != p.name) fail("ShapeMismatch", "checkpoint tensor " + p.name);
        ++i;
    }
    model.load_state(ckpt.tensors);
}

namespace {
constexpr char kMagic[8] = {'M', 'L', 'E', 'H', 'R', 'C', 'K', 'P'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

std::string encode_checkpoint(const Checkpoint& ckpt) {
    util::BinWriter w;
    w.raw(kMagic, 8);
    w.u32(kVersion);
    w.str(ckpt.config.to_json());
    w.str(ckpt.metadata);
    w.u64(ckpt.tensors.size());
    for (size_t i = 0; i < ckpt.tensors.size(); ++i) {
        const auto& t = ckpt.tensors[i];
        w.str(ckpt.names[i]);
        w.u64(static_cast<std::uint64_t>(t.rows()));
        w.u64(static_cast<std::uint64_t>(t.cols()));
        w.raw(t.data(), static_cast<size_t>(t.size()) * sizeof(float));
    }
    return w.data();
}

Checkpoint decode_checkpoint(const std::string& bytes, const std::string& source) {
    util::BinReader r(bytes, source);
    char magic[8];
    r.raw(magic, 8);
    if (std::string(magic, 8) != std::string(kMagic, 8)) fail("CorruptFile", source + ": bad magic");
    if (r.u32() != kVersion) fail("CorruptFile", source + ": unsupported version");
    Checkpoint c;
    c.config = ModelConfig::from_json(r.str());
    c.metadata = r.str();
    auto n = r.u64();
    for (std::uint64_t i = 0; i < n; ++i) {
        c.names.push_back(r.str());
        auto rows = r.u64(), cols = r.u64();
        if (rows * cols > bytes.size()) fail("CorruptFile", source + ": tensor size");
        Mat<float> t(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
        r.raw(t.data(), static_cast<size_t>(rows * cols) * sizeof(float));
        if (!t.allFinite()) fail("CorruptFile", source + ": non-finite tensor " + c.names.back());
        c.tensors.push_back(std::move(t));
    }
    if (!r.done()) fail("CorruptFile", source + ": trailing bytes");
    return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    util::atomic_write(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) fail("MissingCheckpoint", path.string());
    return decode_checkpoint(util::read_text(path), path.string());
}

double Adam::step(Model<float>& model) {
    ++t_;
    double sq = 0.0;
    for (auto& p : model.params()) {
        if (p.grad.size() == 0) p.zero_grad();
        sq += p.grad.template cast<double>().squaredNorm();
    }
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) fail("Diverged", "non-finite gradient");
    const float scale = opt_.clip_norm > 0.0 && norm > opt_.clip_norm ? static_cast<float>(opt_.clip_norm / norm) : 1.0f;
    const float b1 = static_cast<float>(opt_.beta1), b2 = static_cast<float>(opt_.beta2);
    const float c1 = static_cast<float>(1.0 - std::pow(opt_.beta1, static_cast<double>(t_)));
    const float c2 = static_cast<float>(1.0 - std::pow(opt_.beta2, static_cast<double>(t_)));
    const float lr = static_cast<float>(opt_.learning_rate), eps = static_cast<float>(opt_.epsilon);
    for (auto& p : model.params()) {
        if (p.m.size() == 0) {
            p.m.setZero(p.value.rows(), p.value.cols());
            p.v.setZero(p.value.rows(), p.value.cols());
        }
        const float* g = p.grad.data();
        float* m = p.m.data();
        float* v = p.v.data();
        float* w = p.value.data();
        for (Eigen::Index i = 0; i < p.value.size(); ++i) {
            float gi = g[i] * scale;
            m[i] = b1 * m[i] + (1.0f - b1) * gi;
            v[i] = b2 * v[i] + (1.0f - b2) * gi * gi;
            w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
        }
    }
    return norm;
}

std::vector<GradcheckResult> gradient_check(const ModelConfig& config, std::uint64_t seed, const BatchInput& in,
                                            double eps) {
    Model<double> model(config, seed);
    auto loss_of = [&] {
        Graph<double> g(false);
        Var loss = g.multitask_loss(model.forward(g, in), model.heads(), in.labels);
        return g.value(loss)(0, 0);
    };
    {
        Graph<double> g(false);
        model.zero_grad();
        Var loss = g.multitask_loss(model.forward(g, in), model.heads(), in.labels);
        g.backward(loss);
    }
    std::vector<GradcheckResult> out;
    for (auto& p : model.params()) {
        Mat<double> numeric(p.value.rows(), p.value.cols());
        for (Eigen::Index i = 0; i < p.value.size(); ++i) {
            double keep = p.value.data()[i];
            p.value.data()[i] = keep + eps;
            double up = loss_of();
            p.value.data()[i] = keep - eps;
            double down = loss_of();
            p.value.data()[i] = keep;
            numeric.data()[i] = (up - down) / (2.0 * eps);
        }
        double an = p.grad.norm(), nn = numeric.norm();
        double denom = std::max({an, nn, 1e-12});
        out.push_back(GradcheckResult{p.name, (p.grad - numeric).norm() / denom, an});
    }
    return out;
}

}  // namespace mlehr::nn
