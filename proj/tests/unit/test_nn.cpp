#include <cmath>

#include "doctest.h"
#include "mlehr/error.hpp"
#include "mlehr/nn/model.hpp"
#include "test_util.hpp"

using namespace mlehr;
using namespace mlehr::nn;

namespace {

ModelConfig tiny_config(EncoderKind kind = EncoderKind::text) {
    ModelConfig c;
    c.kind = kind;
    c.d_model = 8;
    c.n_layers_f = 1;
    c.n_layers_g = 1;
    c.n_heads = 2;
    c.ffn_mult = 2;
    c.max_tokens_per_event = 8;
    c.max_events_per_stay = 16;
    c.dropout = 0.0;
    c.vocab_types = 12;
    c.code_vocab = 6;
    c.bin_vocab = 5;
    c.common_inputs = 4;
    c.head_classes = {2, 3};
    return c;
}

// Owns payloads and exposes a BatchInput over them.
struct Fixture {
    std::vector<std::vector<std::int32_t>> tokens;
    std::vector<std::vector<float>> features;
    BatchInput in;

    void add_stay(const std::vector<int>& payloads, const std::vector<double>& minutes, std::vector<int> labels) {
        Segment s{static_cast<int>(in.events.size()), static_cast<int>(payloads.size())};
        for (size_t i = 0; i < payloads.size(); ++i) {
            in.events.push_back(payloads[i]);
            in.minutes.push_back(minutes[i]);
        }
        in.stays.push_back(s);
        in.labels.push_back(std::move(labels));
    }
    BatchInput& bind() {
        in.tokens.clear();
        in.features.clear();
        for (const auto& t : tokens) in.tokens.push_back(&t);
        for (const auto& f : features) in.features.push_back(&f);
        return in;
    }
};

Fixture two_event_fixture() {
    Fixture f;
    f.tokens = {{2 * 3 + 0, 2 * 5 + 1, 2 * 7 + 1}, {2 * 4 + 0, 2 * 9 + 1}};
    f.add_stay({0, 1}, {30.0, 400.0}, {1, 2});
    return f;
}

double loss_value(Model<double>& m, const BatchInput& in) {
    Graph<double> g(false);
    return g.value(g.multitask_loss(m.forward(g, in), m.heads(), in.labels))(0, 0);
}

Mat<double> stay_vectors(Model<double>& m, const BatchInput& in) {
    Graph<double> g(false);
    return g.value(m.encode_stays(g, m.embed_events(g, in), in));
}

}  // namespace

TEST_CASE("gradient check on an 8-dim two-event stay") {
    auto f = two_event_fixture();
    auto results = gradient_check(tiny_config(), 7, f.bind());
    REQUIRE(!results.empty());
    for (const auto& r : results) {
        INFO(r.tensor);
        CHECK(r.relative_error <= 1e-4);
    }
}

TEST_CASE("gradient check for the baseline encoders") {
    Fixture code;
    code.tokens = {{1, 2}, {4}, {9, 3, 4}};
    code.add_stay({0, 1}, {10.0, 20.0}, {0, 1});
    code.add_stay({2, 0, 1}, {5.0, 50.0, 600.0}, {1, -1});
    for (const auto& r : gradient_check(tiny_config(EncoderKind::code_based), 3, code.bind())) {
        INFO(r.tensor);
        CHECK(r.relative_error <= 1e-4);
    }
    Fixture common;
    common.features = {{0.5f, 0.0f, -1.0f, 1.0f}, {0.0f, 1.0f, 0.0f, 1.0f}};
    common.add_stay({0, 1}, {30.0, 90.0}, {1, 0});
    for (const auto& r : gradient_check(tiny_config(EncoderKind::common_feature), 3, common.bind())) {
        INFO(r.tensor);
        CHECK(r.relative_error <= 1e-4);
    }
}

TEST_CASE("all labels masked gives zero loss and zero gradient") {
    auto f = two_event_fixture();
    f.in.labels = {{-1, -1}};
    Model<double> m(tiny_config(), 1);
    Graph<double> g(false);
    m.zero_grad();
    Var loss = g.multitask_loss(m.forward(g, f.bind()), m.heads(), f.in.labels);
    CHECK(g.value(loss)(0, 0) == 0.0);
    g.backward(loss);
    for (const auto& p : m.params()) CHECK(p.grad.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("a fully masked extra task leaves the loss unchanged") {
    auto cfg = tiny_config();
    Mat<double> logits(2, 5);
    logits << 0.3, -0.2, 1.0, 0.1, -0.5, -1.0, 0.7, 0.2, 0.2, 0.9;
    Graph<double> g(false);
    Var l = g.constant(logits);
    double base = g.value(g.multitask_loss(l, {{0, 2}, {2, 3}}, {{1, 0}, {0, -1}}))(0, 0);
    Mat<double> wider(2, 7);
    wider << logits, Mat<double>::Constant(2, 2, 0.4);
    Var w = g.constant(wider);
    double extended = g.value(g.multitask_loss(w, {{0, 2}, {2, 3}, {5, 2}}, {{1, 0, -1}, {0, -1, -1}}))(0, 0);
    CHECK(extended == base);
}

TEST_CASE("multitask loss matches the closed form on a 2x2 batch") {
    Mat<double> logits(2, 4);
    logits << 1.0, 2.0, 0.0, 0.5, -1.0, 3.0, 2.0, 2.0;
    Graph<double> g(false);
    double got = g.value(g.multitask_loss(g.constant(logits), {{0, 2}, {2, 2}}, {{1, 0}, {0, 1}}))(0, 0);
    auto ce = [](double a, double b, int y) {
        double z = std::log(std::exp(a) + std::exp(b));
        return z - (y == 0 ? a : b);
    };
    double expected = (ce(1.0, 2.0, 1) + ce(0.0, 0.5, 0) + ce(-1.0, 3.0, 0) + ce(2.0, 2.0, 1)) / 4.0;
    CHECK(got == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("a confident correct logit drives the loss to zero") {
    Mat<double> logits(1, 2);
    logits << -40.0, 40.0;
    Graph<double> g(false);
    CHECK(g.value(g.multitask_loss(g.constant(logits), {{0, 2}}, {{1}}))(0, 0) < 1e-30);
}

TEST_CASE("event embedding ignores padding and is deterministic") {
    Model<double> m(tiny_config(), 5);
    Fixture f;
    f.tokens = {{6, 11, 15}, {6, 11, 15}, {6, 0, 11, 1, 15, 0}};
    f.add_stay({0, 1, 2}, {0, 1, 2}, {0, 0});
    Graph<double> g(false);
    const auto& e = g.value(m.embed_events(g, f.bind()));
    CHECK(e.row(0) == e.row(1));
    CHECK((e.row(0) - e.row(2)).cwiseAbs().maxCoeff() < 1e-12);
    Fixture empty;
    empty.tokens = {{0, 1}};
    empty.add_stay({0}, {0}, {0, 0});
    Graph<double> g2(false);
    CHECK_THROWS_AS(m.embed_events(g2, empty.bind()), Error);
}

TEST_CASE("event embedding is locally Lipschitz in the input embedding") {
    Model<double> m(tiny_config(), 11);
    auto f = two_event_fixture();
    auto& table = m.param("f.token_embedding");
    Graph<double> g0(false);
    Mat<double> base = g0.value(m.embed_events(g0, f.bind()));
    // Local constant from a small probe, then a check at a smaller step.
    double lip = 0.0;
    for (double eps : {1e-3, 1e-4}) {
        table.value(3, 2) += eps;
        Graph<double> g(false);
        double change = (g.value(m.embed_events(g, f.bind())) - base).norm();
        table.value(3, 2) -= eps;
        if (lip == 0.0) {
            lip = change / eps;
            CHECK(lip > 0.0);
        } else {
            CHECK(change <= 1.5 * lip * eps);
        }
    }
}

TEST_CASE("stay encoding is invariant to event order with attached timestamps") {
    Model<double> m(tiny_config(), 9);
    Fixture a;
    a.tokens = {{6, 9}, {8, 13, 15}, {20, 5}};
    a.add_stay({0, 1, 2}, {15.0, 300.0, 700.0}, {0, 0});
    Fixture b = a;
    b.in = BatchInput{};
    b.add_stay({2, 0, 1}, {700.0, 15.0, 300.0}, {0, 0});
    auto ha = stay_vectors(m, a.bind());
    auto hb = stay_vectors(m, b.bind());
    CHECK((ha - hb).cwiseAbs().maxCoeff() <= 1e-6);
    Fixture c = a;
    c.in = BatchInput{};
    c.add_stay({2, 0, 1}, {15.0, 300.0, 700.0}, {0, 0});
    CHECK((ha - stay_vectors(m, c.bind())).cwiseAbs().maxCoeff() > 1e-6);
}

TEST_CASE("zero-weight sequence encoder returns the mean event vector") {
    Model<double> m(tiny_config(), 4);
    for (auto& p : m.params())
        if (p.name.rfind("g.", 0) == 0) p.value.setZero();
    Fixture f;
    f.tokens = {{6, 9}, {8, 13, 15}};
    f.add_stay({0, 1, 1}, {1.0, 2.0, 3.0}, {0, 0});
    Graph<double> g(false);
    Var ev = m.embed_events(g, f.bind());
    Mat<double> e = g.value(ev);
    Mat<double> h = g.value(m.encode_stays(g, ev, f.in));
    Eigen::RowVectorXd mean = (e.row(0) + 2.0 * e.row(1)) / 3.0;
    CHECK((h.row(0) - mean).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("single-event stay encoding is deterministic and needs events") {
    Model<double> m(tiny_config(), 4);
    Fixture f;
    f.tokens = {{6, 9}};
    f.add_stay({0}, {60.0}, {0, 0});
    CHECK(stay_vectors(m, f.bind()) == stay_vectors(m, f.bind()));
    Fixture none;
    none.tokens = {{6, 9}};
    none.add_stay({}, {}, {0, 0});
    Graph<double> g(false);
    Var ev = m.embed_events(g, none.bind());
    CHECK_THROWS_WITH_AS(m.encode_stays(g, ev, none.in), doctest::Contains("NoEvents"), Error);
}

TEST_CASE("events beyond the cap keep the most recent ones") {
    auto cfg = tiny_config();
    cfg.max_events_per_stay = 2;
    Model<double> m(cfg, 4);
    Fixture all;
    all.tokens = {{6}, {8}, {10}};
    all.add_stay({0, 1, 2}, {1.0, 2.0, 3.0}, {0, 0});
    Fixture recent = all;
    recent.in = BatchInput{};
    recent.add_stay({1, 2}, {2.0, 3.0}, {0, 0});
    CHECK(stay_vectors(m, all.bind()) == stay_vectors(m, recent.bind()));
}

TEST_CASE("code baseline shares rows for equal codes and maps unseen codes to UNK") {
    Model<double> m(tiny_config(EncoderKind::code_based), 2);
    Fixture f;
    f.tokens = {{3, 1}, {3, 1}, {99, 1}, {0, 1}, {3}, {3, 3}, {3, 1, 3}};
    f.add_stay({0}, {0}, {0, 0});
    Graph<double> g(false);
    const auto& e = g.value(m.embed_events(g, f.bind()));
    CHECK(e.row(0) == e.row(1));
    CHECK(e.row(2) == e.row(3));
    CHECK(e.row(0) != e.row(4));
    CHECK(e.row(4) != e.row(5));
    const auto& codes = m.param("f.code_embedding").value;
    const auto& bins = m.param("f.bin_embedding").value;
    CHECK((e.row(4) - codes.row(3)).cwiseAbs().maxCoeff() < 1e-15);
    CHECK((e.row(6) - (codes.row(3) + bins.row(1) + bins.row(3))).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("checkpoint round trip is bit identical") {
    testutil::TempDir dir;
    auto cfg = tiny_config();
    Model<float> a(cfg, 12);
    save_checkpoint(make_checkpoint(a, R"({"site":"x"})"), dir / "m.ckpt");
    auto loaded = load_checkpoint(dir / "m.ckpt");
    CHECK(loaded.metadata == R"({"site":"x"})");
    Model<float> b(cfg, 99);
    apply_checkpoint(b, loaded);
    auto f = two_event_fixture();
    const auto& in = f.bind();
    Graph<float> ga(false), gb(false);
    CHECK(ga.value(a.forward(ga, in)) == gb.value(b.forward(gb, in)));
    CHECK(encode_checkpoint(make_checkpoint(b, loaded.metadata)) == encode_checkpoint(make_checkpoint(a, loaded.metadata)));
    auto bytes = encode_checkpoint(loaded);
    CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), Error);
    CHECK_THROWS_WITH_AS(load_checkpoint(dir / "missing.ckpt"), doctest::Contains("MissingCheckpoint"), Error);
    auto other = tiny_config();
    other.d_model = 16;
    Model<float> c(other, 1);
    CHECK_THROWS_AS(apply_checkpoint(c, loaded), Error);
}

TEST_CASE("fixed seed gives identical parameters after training steps") {
    auto cfg = tiny_config();
    cfg.dropout = 0.3;
    auto run = [&] {
        Model<float> m(cfg, 21);
        Adam opt(AdamOptions{1e-2});
        util::Rng rng(5);
        auto f = two_event_fixture();
        for (int step = 0; step < 10; ++step) {
            Graph<float> g(true, &rng);
            m.zero_grad();
            Var loss = g.multitask_loss(m.forward(g, f.bind()), m.heads(), f.in.labels);
            g.backward(loss);
            opt.step(m);
        }
        return m.state();
    };
    auto a = run(), b = run();
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("training reduces the loss on a memorisable batch") {
    auto cfg = tiny_config();
    Model<float> m(cfg, 3);
    Adam opt(AdamOptions{1e-2});
    Fixture f;
    f.tokens = {{6, 9}, {8, 13}};
    f.add_stay({0}, {10.0}, {0, 2});
    f.add_stay({1}, {10.0}, {1, 0});
    auto& in = f.bind();
    double first = 0, last = 0;
    for (int step = 0; step < 200; ++step) {
        Graph<float> g(false);
        m.zero_grad();
        Var loss = g.multitask_loss(m.forward(g, in), m.heads(), in.labels);
        if (step == 0) first = g.value(loss)(0, 0);
        last = g.value(loss)(0, 0);
        g.backward(loss);
        opt.step(m);
    }
    CHECK(last < 0.05 * first);
}

TEST_CASE("model config validation and JSON round trip") {
    auto cfg = tiny_config();
    CHECK(ModelConfig::from_json(cfg.to_json()) == cfg);
    auto bad = cfg;
    bad.n_heads = 3;
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = cfg;
    bad.max_tokens_per_event = 0;
    CHECK_THROWS_AS(bad.validate(), Error);
    CHECK_THROWS_AS(parse_encoder_kind("rnn"), Error);
}

TEST_CASE("time encoding alternates sine and cosine") {
    auto t = time_encoding({0.0, 90.0}, 4);
    CHECK(t(0, 0) == 0.0);
    CHECK(t(0, 1) == 1.0);
    CHECK(t(1, 0) == doctest::Approx(std::sin(90.0)));
    CHECK(t(1, 3) == doctest::Approx(std::cos(90.0 * 0.01)));
}
