#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <fstream>

#include <nlohmann/json.hpp>

#include "baa/errors.hpp"
#include "baa/models.hpp"
#include "baa/random.hpp"
#include "test_support.hpp"

using namespace baa;
using baa::testing::TempDir;

namespace {

Tensor random_batch(std::size_t b, std::size_t side, std::uint64_t seed) {
    Rng rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Tensor t({b, side, side, 3});
    for (auto& v : t.data)
        v = u(rng);
    return t;
}

HeadConfig no_dropout() {
    HeadConfig h;
    h.dropout_rate = 0.0;
    return h;
}

struct WeightsEnvGuard {
    WeightsEnvGuard() {
        if (const char* v = std::getenv("BAA_WEIGHTS_DIR"))
            saved = v;
        ::unsetenv("BAA_WEIGHTS_DIR");
    }
    ~WeightsEnvGuard() {
        if (!saved.empty())
            ::setenv("BAA_WEIGHTS_DIR", saved.c_str(), 1);
    }
    std::string saved;
};

} // namespace

TEST_SUITE("models") {

TEST_CASE("registry lists the four ImageNet backbones and the test backbone") {
    const auto all = list_backbones();
    REQUIRE(all.size() == 5);
    CHECK(all[0].id == "vgg16");
    CHECK(all[1].id == "inception_v3");
    CHECK(all[2].id == "mobilenet");
    CHECK(all[3].id == "xception");
    CHECK(all[4].id == "tiny_test");
    CHECK(find_backbone("tiny_test").pretrained_source == PretrainedSource::random);
    for (int i = 0; i < 4; ++i)
        CHECK(all[i].pretrained_source == PretrainedSource::imagenet);
    CHECK_THROWS_AS(find_backbone("resnet50"), UnknownBackbone);
    CHECK_THROWS_AS(build_model("resnet50", Regime::full, HeadConfig{}), UnknownBackbone);
}

TEST_CASE("input conventions per backbone") {
    CHECK(find_backbone("vgg16").input_spec.target_height == 224);
    CHECK(find_backbone("mobilenet").input_spec.target_width == 224);
    CHECK(find_backbone("inception_v3").input_spec.target_height == 299);
    CHECK(find_backbone("xception").input_spec.target_height == 299);
    CHECK(find_backbone("inception_v3").input_spec.scaling == Scaling::symmetric);
}

TEST_CASE("regime names") {
    CHECK(to_string(Regime::full) == "FULL");
    CHECK(to_string(Regime::frozen) == "FROZEN");
    CHECK(regime_from_string("frozen") == Regime::frozen);
    CHECK(regime_from_string("FULL") == Regime::full);
    CHECK_THROWS_AS(regime_from_string("partial"), ConfigError);
}

TEST_CASE("ImageNet backbones without weights are unavailable") {
    WeightsEnvGuard guard;
    TempDir empty;
    CHECK_THROWS_AS(build_model("vgg16", Regime::full, HeadConfig{}), WeightsUnavailable);
    BuildOptions opts;
    opts.weights_dir = empty.path();
    CHECK_THROWS_AS(build_model("mobilenet", Regime::frozen, HeadConfig{}, opts), WeightsUnavailable);

    // A blob with the wrong channel count is rejected too.
    save_backbone(baa::testing::fake_pretrained_backbone("mobilenet", 16, 1), empty / "mobilenet.baaw");
    CHECK_THROWS_AS(build_model("mobilenet", Regime::frozen, HeadConfig{}, opts), WeightsUnavailable);
}

TEST_CASE("FROZEN trainable count matches a hand count of the head") {
    const auto model = build_model("tiny_test", Regime::frozen, HeadConfig{}, {1});
    const std::size_t c = 8;
    const std::size_t gamma = c, beta = c, dense_w = c, dense_b = 1;
    CHECK(model.trainable_parameter_count() == gamma + beta + dense_w + dense_b);
    CHECK(model.trainable_parameter_count() == 25);
}

TEST_CASE("FULL trainable count is everything but the BatchNorm running statistics") {
    auto model = build_model("tiny_test", Regime::full, HeadConfig{}, {1});
    // conv 3->8, 8->8, 8->8 with 3x3 kernels and biases.
    const std::size_t backbone = (27 * 8 + 8) + 2 * (72 * 8 + 8);
    CHECK(model.backbone().parameter_count() == backbone);
    CHECK(model.trainable_parameter_count() == backbone + 25);
    CHECK(model.total_parameter_count() == backbone + 25 + 2 * 8);
    std::size_t listed = 0;
    for (const auto& p : model.trainable_parameters())
        listed += p.param->size();
    CHECK(listed == model.trainable_parameter_count());
}

TEST_CASE("FROZEN < FULL trainable count for every registered backbone") {
    WeightsEnvGuard guard;
    TempDir weights;
    baa::testing::write_fake_weights(weights.path());
    BuildOptions opts;
    opts.weights_dir = weights.path();
    for (const auto& spec : list_backbones()) {
        CAPTURE(spec.id);
        const auto full = build_model(spec.id, Regime::full, HeadConfig{}, opts);
        const auto frozen = build_model(spec.id, Regime::frozen, HeadConfig{}, opts);
        CHECK(frozen.trainable_parameter_count() < full.trainable_parameter_count());
        CHECK(frozen.trainable_parameter_count() == 3 * std::size_t(spec.feature_channels) + 1);
        CHECK(full.total_parameter_count() == frozen.total_parameter_count());
    }
}

TEST_CASE("head stages follow the backbone in order for every backbone") {
    WeightsEnvGuard guard;
    TempDir weights;
    baa::testing::write_fake_weights(weights.path());
    BuildOptions opts;
    opts.weights_dir = weights.path();
    for (const auto& spec : list_backbones()) {
        const auto layers = build_model(spec.id, Regime::full, HeadConfig{}, opts).describe_architecture();
        REQUIRE(layers.size() >= 5);
        const std::size_t n = layers.size();
        CHECK(layers[n - 4].starts_with("batch_normalization"));
        CHECK(layers[n - 3].starts_with("global_average_pooling"));
        CHECK(layers[n - 2].starts_with("dropout"));
        CHECK(layers[n - 1].starts_with("dense"));
        for (std::size_t i = 0; i + 4 < n; ++i) {
            CHECK_FALSE(layers[i].starts_with("batch_normalization"));
            CHECK_FALSE(layers[i].starts_with("dense"));
        }
    }
}

TEST_CASE("pretrained weights do not depend on the seed, the head does") {
    WeightsEnvGuard guard;
    TempDir weights;
    baa::testing::write_fake_weights(weights.path());
    BuildOptions a, b;
    a.weights_dir = b.weights_dir = weights.path();
    a.seed = 1;
    b.seed = 2;
    const auto m1 = build_model("vgg16", Regime::full, HeadConfig{}, a);
    const auto m2 = build_model("vgg16", Regime::full, HeadConfig{}, b);
    CHECK(serialize_backbone(m1.backbone()) == serialize_backbone(m2.backbone()));
    CHECK(serialize_backbone(m1.backbone()) == serialize_backbone(load_backbone(weights / "vgg16.baaw")));
    CHECK(m1.head().dense_weight.value != m2.head().dense_weight.value);
}

TEST_CASE("forward output shape, finiteness and eval determinism") {
    auto model = build_model("tiny_test", Regime::full, HeadConfig{}, {3});
    const auto x = random_batch(4, 32, 1);
    model.set_mode(ModelMode::eval);
    const auto y = model.forward(x, 1);
    CHECK(y.shape == std::vector<std::size_t>{4, 1});
    for (double v : y.data)
        CHECK(std::isfinite(v));
    CHECK(model.forward(x, 999) == y);
    CHECK_THROWS_AS(model.forward(random_batch(2, 16, 1)), ShapeMismatch);
}

TEST_CASE("dropout is active in train mode only") {
    auto model = build_model("tiny_test", Regime::full, HeadConfig{}, {3});
    // Give the dense layer enough weight for dropout to matter.
    for (auto& w : model.head().dense_weight.value)
        w = 1.0;
    model.head().beta.value.assign(8, 1.0);
    const auto x = random_batch(4, 32, 2);
    model.set_mode(ModelMode::train);
    const auto a = model.forward(x, 1);
    const auto b = model.forward(x, 2);
    CHECK(a != b);
}

TEST_CASE("dense head is linear in the pooled features") {
    const auto model = build_model("tiny_test", Regime::full, HeadConfig{}, {5});
    Rng rng(1);
    std::normal_distribution<double> n;
    Tensor f({3, 8}), zero({3, 8}), scaled({3, 8});
    for (auto& v : f.data)
        v = n(rng);
    const double alpha = 2.5;
    for (std::size_t i = 0; i < f.size(); ++i)
        scaled.data[i] = alpha * f.data[i];
    const auto y = model.dense_output(f);
    const auto y0 = model.dense_output(zero);
    const auto ya = model.dense_output(scaled);
    for (std::size_t i = 0; i < 3; ++i)
        CHECK(ya[i] - y0[i] == doctest::Approx(alpha * (y[i] - y0[i])).epsilon(1e-12));
}

TEST_CASE("head initialisation") {
    const auto model = build_model("tiny_test", Regime::frozen, HeadConfig{}, {8});
    const auto& h = model.head();
    CHECK(h.gamma.value == std::vector<double>(8, 1.0));
    CHECK(h.beta.value == std::vector<double>(8, 0.0));
    CHECK(h.running_var == std::vector<double>(8, 1.0));
    CHECK(h.dense_bias.value == std::vector<double>{0.0});
    const double limit = std::sqrt(6.0 / (8 + 1));
    for (double w : h.dense_weight.value)
        CHECK(std::abs(w) <= limit);
}

TEST_CASE("head config validation and JSON") {
    HeadConfig h;
    h.dropout_rate = 1.0;
    CHECK_THROWS_AS(h.validate(), ConfigError);
    CHECK(head_config_from_json(to_json(HeadConfig{})) == HeadConfig{});
    CHECK_THROWS_AS(head_config_from_json(nlohmann::json{{"dropout", 0.2}}), ConfigError);
}

TEST_CASE("FULL gradients match central finite differences") {
    auto model = build_model("tiny_test", Regime::full, no_dropout(), {11});
    model.set_mode(ModelMode::train);
    const auto x = random_batch(3, 32, 4);
    const std::vector<double> coeff{0.7, -1.3, 0.4};
    auto loss = [&] {
        const auto y = model.forward(x, 0);
        double l = 0;
        for (std::size_t i = 0; i < 3; ++i)
            l += coeff[i] * y.data[i];
        return l;
    };
    loss();
    model.backward(coeff);

    Rng rng(5);
    const double h = 1e-6;
    int checked = 0;
    for (auto& ref : model.trainable_parameters()) {
        const auto analytic = ref.param->grad;
        for (int k = 0; k < 4; ++k) {
            const std::size_t i = rng() % ref.param->size();
            const double orig = ref.param->value[i];
            ref.param->value[i] = orig + h;
            const double up = loss();
            ref.param->value[i] = orig - h;
            const double down = loss();
            ref.param->value[i] = orig;
            const double numeric = (up - down) / (2 * h);
            CAPTURE(ref.name);
            CAPTURE(i);
            CHECK(analytic[i] == doctest::Approx(numeric).epsilon(1e-4).scale(1e-3));
            ++checked;
        }
    }
    CHECK(checked == 4 * 10);
}

TEST_CASE("FROZEN backward leaves backbone gradients empty") {
    auto model = build_model("tiny_test", Regime::frozen, no_dropout(), {11});
    model.set_mode(ModelMode::train);
    model.forward(random_batch(2, 32, 4), 0);
    model.backward(std::vector<double>{1.0, 1.0});
    for (auto& ref : model.parameters()) {
        if (!ref.name.starts_with("backbone/"))
            continue;
        for (double g : ref.param->grad)
            CHECK(g == 0.0);
    }
    CHECK(model.head().dense_bias.grad[0] == doctest::Approx(2.0));
}

TEST_CASE("checkpoint round trip reproduces eval outputs") {
    TempDir dir;
    auto model = build_model("tiny_test", Regime::frozen, HeadConfig{}, {21});
    model.head().running_mean.assign(8, 0.25);
    save_checkpoint(model, {4, 12.5, 21}, dir / "c.bin", dir / "c.json");

    CheckpointInfo info;
    auto loaded = load_checkpoint(dir / "c.bin", dir / "c.json", &info);
    CHECK(info.epoch == 4);
    CHECK(info.val_mae == 12.5);
    CHECK(loaded.regime() == Regime::frozen);
    CHECK(loaded.spec().id == "tiny_test");

    const auto x = random_batch(3, 32, 9);
    model.set_mode(ModelMode::eval);
    loaded.set_mode(ModelMode::eval);
    CHECK(loaded.forward(x) == model.forward(x));

    auto side = nlohmann::json::parse(baa::testing::read_file(dir / "c.json"));
    CHECK(side["regime"] == "FROZEN");
    side["backbone_id"] = "vgg16";
    std::ofstream(dir / "c.json") << side.dump();
    CHECK_THROWS_AS(load_checkpoint(dir / "c.bin", dir / "c.json"), CheckpointMismatch);

    baa::testing::write_file(dir / "junk.bin", "not a checkpoint");
    side["backbone_id"] = "tiny_test";
    std::ofstream(dir / "c.json") << side.dump();
    CHECK_THROWS_AS(load_checkpoint(dir / "junk.bin", dir / "c.json"), CheckpointMismatch);
}

TEST_CASE("backbone blobs round-trip") {
    const auto b = make_tiny_backbone(8, 3);
    CHECK(serialize_backbone(deserialize_backbone(serialize_backbone(b))) == serialize_backbone(b));
    CHECK(b.output_channels() == 8);
    CHECK(make_tiny_backbone(8, 3).layers.size() == b.layers.size());
    CHECK(serialize_backbone(make_tiny_backbone(8, 4)) != serialize_backbone(b));
}

TEST_CASE("window output sizes") {
    CHECK(window_output_size(224, 3, 1, Padding::same) == 224);
    CHECK(window_output_size(224, 2, 2, Padding::valid) == 112);
    CHECK(window_output_size(299, 3, 2, Padding::valid) == 149);
    CHECK(window_output_size(299, 3, 2, Padding::same) == 150);
}

} // TEST_SUITE
