#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "mowe/evaluate.hpp"
#include "mowe/synthdata.hpp"
#include "mowe/training.hpp"

using namespace mowe;
namespace fs = std::filesystem;

TEST_CASE("rmse value examples") {
    const std::size_t C = 2, H = 4, W = 4;
    std::vector<float> a(C * H * W), b(C * H * W);
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = b[i] = static_cast<float>(i);
    auto zero = rmse(a.data(), b.data(), C, H, W, Weighting::uniform);
    CHECK(zero[0] == 0.0);
    CHECK(zero[1] == 0.0);

    for (auto& x : a) x += 3.0f;
    auto three = rmse(a.data(), b.data(), C, H, W, Weighting::uniform);
    CHECK(three[0] == doctest::Approx(3.0).epsilon(1e-6));
    CHECK(three[1] == doctest::Approx(3.0).epsilon(1e-6));
}

TEST_CASE("rmse matches an explicit loop oracle") {
    Rng rng(4);
    const std::size_t C = 3, H = 8, W = 8;
    std::vector<float> a(C * H * W), b(C * H * W);
    for (auto& x : a) x = static_cast<float>(rng.normal());
    for (auto& x : b) x = static_cast<float>(rng.normal());
    auto got = rmse(a.data(), b.data(), C, H, W, Weighting::uniform);
    for (std::size_t c = 0; c < C; ++c) {
        double s = 0;
        for (std::size_t i = 0; i < H * W; ++i) {
            const double d = double(a[c * H * W + i]) - double(b[c * H * W + i]);
            s += d * d;
        }
        CHECK(std::abs(got[c] - std::sqrt(s / (H * W))) < 1e-6);
    }
}

TEST_CASE("cosine-latitude weighting needs a latitude axis and then works") {
    const std::size_t C = 1, H = 4, W = 2;
    std::vector<float> a(C * H * W, 1.0f), b(C * H * W, 0.0f);
    CHECK_THROWS_AS(rmse(a.data(), b.data(), C, H, W, Weighting::coslat), ConfigError);

    std::vector<double> lats{60.0, 20.0, -20.0, -60.0};
    auto got = rmse(a.data(), b.data(), C, H, W, Weighting::coslat, &lats);
    // constant unit error: weighted rmse is still exactly 1
    CHECK(got[0] == doctest::Approx(1.0).epsilon(1e-12));

    // concentrate the error on the most and least weighted rows
    std::fill(a.begin(), a.end(), 0.0f);
    a[2] = a[3] = 2.0f;  // row 1 (lat 20)
    auto hi = rmse(a.data(), b.data(), C, H, W, Weighting::coslat, &lats)[0];
    std::fill(a.begin(), a.end(), 0.0f);
    a[0] = a[1] = 2.0f;  // row 0 (lat 60)
    auto lo = rmse(a.data(), b.data(), C, H, W, Weighting::coslat, &lats)[0];
    CHECK(hi > lo);

    std::vector<double> wrong{10.0, 20.0};
    CHECK_THROWS_AS(rmse(a.data(), b.data(), C, H, W, Weighting::coslat, &wrong), ConfigError);
}

TEST_CASE("pct_diff reproduces the reference examples") {
    CHECK(pct_diff(0.6810, 0.6803) == doctest::Approx(0.10).epsilon(0.05));
    CHECK(pct_diff(45.9691, 45.6734) == doctest::Approx(0.65).epsilon(0.01));
    CHECK(pct_diff(1.25, 1.25) == 0.0);
    CHECK_THROWS_AS(pct_diff(1.0, 0.0), ConfigError);
    CHECK_THROWS_AS(pct_diff(1.0, -2.0), ConfigError);
}

TEST_CASE("pct_diff is antisymmetric to first order for small deltas") {
    Rng rng(9);
    for (int i = 0; i < 50; ++i) {
        const double b = rng.uniform(0.5, 100.0);
        const double a = b * (1.0 + rng.uniform(-0.009, 0.009));
        CHECK(std::abs(pct_diff(a, b) + pct_diff(b, a)) < 0.01);
    }
}

namespace {

struct EvalFixture {
    fs::path dir;
    std::string train_path, test_path;
    GenerationConfig gen;

    explicit EvalFixture(const std::string& tag, bool perfect_first = false,
                         bool identical = false, double n1 = 0.1, double n2 = 0.2) {
        dir = fs::temp_directory_path() / ("mowe_eval_" + tag);
        fs::create_directories(dir);
        gen.sim.channels = 1;
        gen.sim.height = 16;
        gen.sim.width = 16;
        gen.sim.lead_hours = {6, 12};
        gen.sim.channel_offset = {270.0};
        gen.sim.channel_scale = {10.0};
        gen.sim.velocity_amplitude = 1.5;
        gen.sim.hyperdiffusion = 0.05;
        gen.train_inits = 30;
        gen.test_inits = 10;
        gen.base_seed = 91;
        ExpertProfile a;
        a.name = "alpha";
        a.blur_radius = {0.0, 0.0};
        a.noise_amplitude = {n1, n1};
        a.seed = 1;
        ExpertProfile b;
        b.name = "beta";
        b.blur_radius = {0.0, 0.0};
        b.noise_amplitude = {n2, n2};
        b.seed = 2;
        if (perfect_first) a.noise_amplitude = {0.0, 0.0};
        if (identical) {
            b = a;
            b.name = "beta";
        }
        gen.experts = {a, b};
        auto paths = generate_dataset(gen, (dir / "ds").string(), 2);
        train_path = paths.first;
        test_path = paths.second;
    }
    ~EvalFixture() { fs::remove_all(dir); }

    GateConfig gate() const {
        GateConfig g;
        g.n_experts = 2;
        g.channels = 1;
        g.height = 16;
        g.width = 16;
        g.patch = 4;
        g.hidden = 8;
        g.depth = 1;
        g.heads = 2;
        g.mlp_ratio = 2.0;
        g.lead_hours = {6, 12};
        return g;
    }
};

}  // namespace

TEST_CASE("evaluate_leads: mean row matches an independent recomputation") {
    EvalFixture fx("meanrow");
    DatasetReader test(fx.test_path);
    GateNet<float> net(fx.gate(), 3);
    ScoreTable table = evaluate_leads(net, test, nullptr, "untrained", Weighting::uniform, 2);

    const DatasetManifest& m = test.manifest();
    const std::size_t hw = m.height * m.width;
    for (std::size_t l = 0; l < 2; ++l) {
        double sse = 0;
        std::vector<float> truth(hw), experts(2 * hw);
        for (std::size_t init = 0; init < m.n_inits; ++init) {
            test.read_truth(init, l, truth.data());
            test.read_experts(init, l, experts.data());
            for (std::size_t i = 0; i < hw; ++i) {
                const double mean = 0.5 * (double(experts[i]) + double(experts[hw + i]));
                const double d = mean - truth[i];
                sse += d * d;
            }
        }
        const double ref = std::sqrt(sse / (m.n_inits * hw));
        CHECK(std::abs(table.at(table.model_index("mean"), 0, l) - ref) < 1e-6 * ref + 1e-9);
    }
}

TEST_CASE("evaluate_leads: untrained gate row equals the mean row") {
    EvalFixture fx("step0");
    DatasetReader test(fx.test_path);
    GateNet<float> net(fx.gate(), 3);
    ScoreTable table = evaluate_leads(net, test, nullptr, "untrained", Weighting::uniform, 1);
    for (std::size_t c = 0; c < table.channels.size(); ++c)
        for (std::size_t l = 0; l < table.leads.size(); ++l) {
            const double mean = table.at(table.model_index("mean"), c, l);
            const double mowe = table.at(table.model_index("mowe"), c, l);
            CHECK(std::abs(mowe - mean) < 1e-5 * std::max(1.0, mean));
        }
}

TEST_CASE("evaluate_leads: expert error grows with lead; results are thread-invariant") {
    EvalFixture fx("growth", false, false, 0.1, 0.2);
    // bump the second lead's noise so growth is guaranteed
    fx.gen.experts[0].noise_amplitude = {0.1, 0.3};
    fx.gen.experts[1].noise_amplitude = {0.15, 0.4};
    auto paths = generate_dataset(fx.gen, (fx.dir / "ds2").string(), 2);
    DatasetReader test(paths.second);
    GateNet<float> net(fx.gate(), 3);
    ScoreTable t1 = evaluate_leads(net, test, nullptr, "untrained", Weighting::uniform, 1);
    ScoreTable t2 = evaluate_leads(net, test, nullptr, "untrained", Weighting::uniform, 2);
    CHECK(t1.values == t2.values);
    for (const char* name : {"alpha", "beta"}) {
        const std::size_t mi = t1.model_index(name);
        CHECK(t1.at(mi, 0, 0) <= t1.at(mi, 0, 1));
    }
    CHECK(t1.to_csv().find("model,channel,lead_hours,rmse") != std::string::npos);
    CHECK(t1.to_json().find("\"rows\"") != std::string::npos);
}

TEST_CASE("evaluate_leads refuses wrong split or mismatched hash") {
    EvalFixture fx("guards");
    DatasetReader train(fx.train_path);
    GateNet<float> net(fx.gate(), 3);
    CHECK_THROWS_AS(evaluate_leads(net, train, nullptr, "x", Weighting::uniform, 1),
                    ConfigError);
    DatasetReader test(fx.test_path);
    std::array<std::uint8_t, 32> wrong{};
    CHECK_THROWS_AS(evaluate_leads(net, test, &wrong, "x", Weighting::uniform, 1), ConfigError);
    // coslat without a latitude axis is rejected up front
    CHECK_THROWS_AS(evaluate_leads(net, test, nullptr, "x", Weighting::coslat, 1), ConfigError);
}

TEST_CASE("oracle recovers a perfect expert") {
    EvalFixture fx("perfect", /*perfect_first=*/true);
    DatasetReader train(fx.train_path);
    DatasetReader test(fx.test_path);
    OracleResult oracle = oracle_blend(train, test, 1e-6, 2);
    // all weight on the perfect expert, near-zero error
    CHECK(oracle.mean_weight[0][0] > 0.95);
    CHECK(oracle.table.at(0, 0, 0) < 0.05 * test.manifest().std_dev[0]);
}

TEST_CASE("oracle on identical experts matches their common error") {
    EvalFixture fx("identical", false, /*identical=*/true);
    DatasetReader train(fx.train_path);
    DatasetReader test(fx.test_path);
    OracleResult oracle = oracle_blend(train, test, 1e-4, 2);

    GateNet<float> net(fx.gate(), 3);
    ScoreTable table = evaluate_leads(net, test, nullptr, "untrained", Weighting::uniform, 1);
    const double expert_rmse = table.at(table.model_index("alpha"), 0, 0);
    CHECK(oracle.table.at(0, 0, 0) == doctest::Approx(expert_rmse).epsilon(0.02));
}

TEST_CASE("oracle matches the two-expert closed form") {
    // two unbiased experts with independent noise of std 0.3 and 0.6:
    // optimal weight on the first is 0.36 / (0.09 + 0.36) = 0.8
    EvalFixture fx("closedform", false, false, 0.3, 0.6);
    DatasetReader train(fx.train_path);
    DatasetReader test(fx.test_path);
    OracleResult oracle = oracle_blend(train, test, 1e-4, 2);
    for (std::size_t l = 0; l < 2; ++l) {
        CHECK(std::abs(oracle.mean_weight[l][0] - 0.8) < 0.02);
        CHECK(std::abs(oracle.mean_weight[l][1] - 0.2) < 0.02);
    }
}

TEST_CASE("oracle rejects non-sibling datasets and zero ridge on degenerate pixels") {
    EvalFixture fx("guards2");
    EvalFixture other("guards3", false, false, 0.11, 0.21);
    other.gen.base_seed = 555;  // different truth statistics: different family
    auto other_paths = generate_dataset(other.gen, (other.dir / "o").string(), 1);
    DatasetReader train(fx.train_path);
    DatasetReader wrong_test(other_paths.second);
    CHECK_THROWS_AS(oracle_blend(train, wrong_test, 1e-4, 1), ConfigError);

    // identical experts make the delta direction singular at lambda = 0
    EvalFixture degen("degen", false, /*identical=*/true);
    DatasetReader dtrain(degen.train_path);
    DatasetReader dtest(degen.test_path);
    CHECK_THROWS_WITH_AS(oracle_blend(dtrain, dtest, 0.0, 1), doctest::Contains("ridge"),
                         ConfigError);
}

TEST_CASE("export_weight_maps writes unit-sum maps and a summary") {
    EvalFixture fx("export");
    DatasetReader test(fx.test_path);
    GateNet<float> net(fx.gate(), 3);
    const std::string prefix = (fx.dir / "maps").string();
    auto summaries = export_weight_maps(net, test, 1, {6, 12}, prefix);
    REQUIRE(summaries.size() == 2);

    // untrained gate: exactly uniform weights, entropy ln 2
    for (const auto& s : summaries) {
        CHECK(s.mean_weight[0] == doctest::Approx(0.5).epsilon(1e-7));
        CHECK(s.mean_weight[1] == doctest::Approx(0.5).epsilon(1e-7));
        CHECK(s.mean_entropy == doctest::Approx(std::log(2.0)).epsilon(1e-6));
    }

    const std::size_t hw = 16 * 16;
    auto bytes = read_file(prefix + "_init1_lead6_weights.f32");
    REQUIRE(bytes.size() == 2 * hw * 4);
    const float* w = reinterpret_cast<const float*>(bytes.data());
    for (std::size_t i = 0; i < hw; ++i)
        CHECK(std::abs(double(w[i]) + double(w[hw + i]) - 1.0) < 1e-5);
    CHECK(fs::exists(prefix + "_init1_lead6_bias.f32"));
    CHECK(fs::exists(prefix + "_init1_lead6.dims"));
    CHECK(fs::exists(prefix + "_summary.txt"));

    CHECK_THROWS_AS(export_weight_maps(net, test, 99, {6}, prefix), ConfigError);
    CHECK_THROWS_AS(export_weight_maps(net, test, 0, {7}, prefix), ConfigError);
}

TEST_CASE("trained gate beats the mean baseline on an easy bias-dominated setup") {
    // one expert carries a large fixed bias: the gate can weight it down and
    // subtract the bias, so even a short training run must beat the mean
    EvalFixture fx("trainable");
    fx.gen.experts[0].bias_amplitude = 0.8;
    fx.gen.experts[0].bias_pattern = 1;
    fx.gen.experts[0].noise_amplitude = {0.05, 0.05};
    fx.gen.experts[1].noise_amplitude = {0.05, 0.05};
    auto paths = generate_dataset(fx.gen, (fx.dir / "dsb").string(), 2);
    DatasetReader train_ds(paths.first);
    DatasetReader test_ds(paths.second);

    TrainConfig t;
    t.gate = fx.gate();
    t.steps = 150;
    t.batch_size = 4;
    t.lr = 2e-3;
    t.seed = 11;
    t.jobs = 2;
    t.out_path = (fx.dir / "trained.ckpt").string();
    TrainResult res = train(t, train_ds);

    GateNet<float> net(t.gate, 0);
    res.checkpoint.restore(net, nullptr);
    ScoreTable table = evaluate_leads(net, test_ds, nullptr, "trained", Weighting::uniform, 2);
    for (std::size_t l = 0; l < 2; ++l) {
        const double mowe = table.aggregate_std(table.model_index("mowe"), l);
        const double mean = table.aggregate_std(table.model_index("mean"), l);
        CHECK(mowe < mean);
    }
}
