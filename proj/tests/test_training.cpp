#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "mowe/synthdata.hpp"
#include "mowe/training.hpp"

using namespace mowe;
namespace fs = std::filesystem;

namespace {

struct Fixture {
    fs::path dir;
    std::string train_path, test_path;
    GenerationConfig gen;

    Fixture() {
        dir = fs::temp_directory_path() / "mowe_train_test";
        fs::create_directories(dir);
        gen.sim.channels = 2;
        gen.sim.height = 16;
        gen.sim.width = 16;
        gen.sim.lead_hours = {6, 12};
        gen.sim.channel_offset = {270.0, 0.0};
        gen.sim.channel_scale = {10.0, 4.0};
        gen.sim.velocity_amplitude = 1.5;
        gen.sim.hyperdiffusion = 0.05;
        gen.train_inits = 6;
        gen.test_inits = 3;
        gen.base_seed = 31;
        ExpertProfile a;
        a.name = "alpha";
        a.blur_radius = {0.0, 0.0};
        a.noise_amplitude = {0.1, 0.3};
        a.bias_amplitude = 0.15;
        a.bias_pattern = 1;
        a.seed = 1;
        ExpertProfile b;
        b.name = "beta";
        b.blur_radius = {0.5, 1.0};
        b.noise_amplitude = {0.05, 0.1};
        b.seed = 2;
        gen.experts = {a, b};
        auto paths = generate_dataset(gen, (dir / "ds").string(), 2);
        train_path = paths.first;
        test_path = paths.second;
    }
    ~Fixture() { fs::remove_all(dir); }

    TrainConfig config(const std::string& out) const {
        TrainConfig t;
        t.gate.n_experts = 2;
        t.gate.channels = 2;
        t.gate.height = 16;
        t.gate.width = 16;
        t.gate.patch = 4;
        t.gate.hidden = 8;
        t.gate.depth = 1;
        t.gate.heads = 2;
        t.gate.mlp_ratio = 2.0;
        t.gate.lead_hours = {6, 12};
        t.batch_size = 3;
        t.steps = 4;
        t.seed = 77;
        t.out_path = (dir / out).string();
        return t;
    }
};

}  // namespace

TEST_CASE("mse_loss value examples") {
    Tape<double> tape;
    auto a = tape.leaf(Tensor<double>({2, 2}, {1, 2, 3, 4}));
    CHECK(mse_loss(tape, a, a)->data()[0] == 0.0);
    auto b = tape.leaf(Tensor<double>({2, 2}, {3, 4, 5, 6}));
    CHECK(mse_loss(tape, b, a)->data()[0] == doctest::Approx(4.0).epsilon(1e-12));
    Rng rng(3);
    Tensor<double> x = Tensor<double>::randn({3, 5}, rng);
    Tensor<double> y = Tensor<double>::randn({3, 5}, rng);
    double ref = 0;
    for (std::size_t i = 0; i < 15; ++i) ref += (x.v[i] - y.v[i]) * (x.v[i] - y.v[i]);
    ref /= 15;
    auto loss = mse_loss(tape, tape.leaf(x), tape.leaf(y));
    CHECK(std::abs(loss->data()[0] - ref) < 1e-10);
    auto bad = tape.leaf(Tensor<double>({4}));
    CHECK_THROWS_AS(mse_loss(tape, a, bad), ShapeError);
}

TEST_CASE("step-0 loss equals the mean-baseline loss on the same batch") {
    Fixture fx;
    DatasetReader data(fx.train_path);
    TrainConfig cfg = fx.config("step0.ckpt");
    cfg.steps = 1;
    TrainResult res = train(cfg, data);

    // replay the sampler and compute the uniform-blend loss independently
    Rng rng(seed_of(cfg.seed, 0x62617463686573ULL));
    Batch batch = sample_batch(data, cfg.batch_size, rng);
    const std::size_t fv = data.manifest().field_values();
    double loss = 0;
    for (std::size_t s = 0; s < batch.size; ++s) {
        double acc = 0;
        for (std::size_t i = 0; i < fv; ++i) {
            const double mean = 0.5 * (batch.experts[s * 2 * fv + i] +
                                       batch.experts[s * 2 * fv + fv + i]);
            const double d = mean - batch.truth[s * fv + i];
            acc += d * d;
        }
        loss += acc / static_cast<double>(fv);
    }
    loss /= static_cast<double>(batch.size);
    CHECK(std::abs(res.losses[0] - loss) < 1e-6);
}

TEST_CASE("training is bit-deterministic and independent of the worker count") {
    Fixture fx;
    DatasetReader data(fx.train_path);

    TrainConfig c1 = fx.config("a.ckpt");
    TrainResult r1 = train(c1, data);
    TrainConfig c2 = fx.config("b.ckpt");
    TrainResult r2 = train(c2, data);
    CHECK(r1.losses == r2.losses);
    CHECK(read_file(c1.out_path) == read_file(c2.out_path));

    TrainConfig c3 = fx.config("c.ckpt");
    c3.jobs = 2;
    TrainResult r3 = train(c3, data);
    CHECK(r1.losses == r3.losses);
    CHECK(read_file(c1.out_path) == read_file(c3.out_path));

    TrainConfig c4 = fx.config("d.ckpt");
    c4.deterministic = true;
    c4.jobs = 2;  // deterministic mode forces serial anyway
    TrainResult r4 = train(c4, data);
    CHECK(r1.losses == r4.losses);
}

TEST_CASE("losses drop on a learnable toy problem") {
    Fixture fx;
    DatasetReader data(fx.train_path);
    TrainConfig cfg = fx.config("learn.ckpt");
    cfg.steps = 60;
    cfg.batch_size = 4;
    cfg.lr = 2e-3;
    TrainResult res = train(cfg, data);
    double early = 0, late = 0;
    for (std::size_t i = 0; i < 10; ++i) {
        early += res.losses[i];
        late += res.losses[res.losses.size() - 10 + i];
    }
    CHECK(late < early);
}

TEST_CASE("training refuses a test split or mismatched dimensions") {
    Fixture fx;
    DatasetReader test_data(fx.test_path);
    TrainConfig cfg = fx.config("bad.ckpt");
    CHECK_THROWS_AS(train(cfg, test_data), ConfigError);

    DatasetReader data(fx.train_path);
    TrainConfig wrong = fx.config("bad2.ckpt");
    wrong.gate.channels = 3;
    CHECK_THROWS_AS(train(wrong, data), ConfigError);
    TrainConfig wrong_leads = fx.config("bad3.ckpt");
    wrong_leads.gate.lead_hours = {6, 18};
    CHECK_THROWS_AS(train(wrong_leads, data), ConfigError);
}

TEST_CASE("gradient clipping stays finite and runs") {
    Fixture fx;
    DatasetReader data(fx.train_path);
    TrainConfig cfg = fx.config("clip.ckpt");
    cfg.grad_clip = true;
    cfg.clip_norm = 0.5;
    cfg.steps = 3;
    TrainResult res = train(cfg, data);
    for (float l : res.losses) CHECK(std::isfinite(l));
}

TEST_CASE("checkpoint round trip is byte-identical and restores inference exactly") {
    Fixture fx;
    DatasetReader data(fx.train_path);
    TrainConfig cfg = fx.config("rt.ckpt");
    TrainResult res = train(cfg, data);

    // save -> load -> save produces identical bytes
    Checkpoint loaded = load_checkpoint(cfg.out_path);
    save_checkpoint(cfg.out_path + ".again", loaded);
    CHECK(read_file(cfg.out_path) == read_file(cfg.out_path + ".again"));
    CHECK(loaded.step == cfg.steps);
    CHECK(loaded.loss_history.size() == cfg.steps);

    // inference before save equals inference after load, bit for bit
    GateNet<float> restored(loaded.config, 999);
    loaded.restore(restored, nullptr);
    GateNet<float> original(cfg.gate, cfg.seed);
    Checkpoint direct = res.checkpoint;
    direct.restore(original, nullptr);

    Rng rng(5);
    Tensor<float> ex = Tensor<float>::randn({2, 2, 16, 16}, rng);
    Tape<float> t1, t2;
    auto o1 = original.forward(t1, t1.leaf(ex), 6.0, nullptr);
    auto o2 = restored.forward(t2, t2.leaf(ex), 6.0, nullptr);
    CHECK(*o1.expert_logits->val == *o2.expert_logits->val);
    CHECK(*o1.bias_field->val == *o2.bias_field->val);
}

TEST_CASE("periodic checkpoints appear at the configured interval") {
    Fixture fx;
    DatasetReader data(fx.train_path);
    TrainConfig cfg = fx.config("periodic.ckpt");
    cfg.steps = 4;
    cfg.checkpoint_interval = 2;
    train(cfg, data);
    CHECK(fs::exists(cfg.out_path));
    CHECK(fs::exists(cfg.out_path + ".step2"));
    CHECK(!fs::exists(cfg.out_path + ".step4"));  // the final write covers it
    Checkpoint mid = load_checkpoint(cfg.out_path + ".step2");
    CHECK(mid.step == 2);
    CHECK(mid.loss_history.size() == 2);
}

TEST_CASE("corrupted checkpoints are refused with the tensor named") {
    Fixture fx;
    DatasetReader data(fx.train_path);
    TrainConfig cfg = fx.config("corrupt.ckpt");
    cfg.steps = 1;
    train(cfg, data);

    auto bytes = read_file(cfg.out_path);
    // truncate in the middle of the tensor block
    auto cut = bytes;
    cut.resize(bytes.size() / 2);
    const std::string cut_path = (fx.dir / "cut.ckpt").string();
    atomic_write(cut_path, cut.data(), cut.size());
    try {
        load_checkpoint(cut_path);
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        // the offending tensor (or block) is named in the message
        CHECK(std::string(e.what()).find("tensor") != std::string::npos);
    }

    auto bad = bytes;
    bad[0] = 'X';
    const std::string bad_path = (fx.dir / "badmagic.ckpt").string();
    atomic_write(bad_path, bad.data(), bad.size());
    CHECK_THROWS_WITH_AS(load_checkpoint(bad_path), doctest::Contains("magic"), FormatError);
}

TEST_CASE("checkpoint summary lists the key fields") {
    Fixture fx;
    DatasetReader data(fx.train_path);
    TrainConfig cfg = fx.config("sum.ckpt");
    cfg.steps = 2;
    TrainResult res = train(cfg, data);
    const std::string s = checkpoint_summary(res.checkpoint);
    CHECK(s.find("step = 2") != std::string::npos);
    CHECK(s.find("hidden = 8") != std::string::npos);
    CHECK(s.find("dataset_hash = ") != std::string::npos);
}
