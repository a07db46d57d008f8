#include <cstdio>
#include <cstring>
#include <filesystem>
#include <string>
#include <thread>

#include "CLI11.hpp"
#include "mowe/checkpoint.hpp"
#include "mowe/dataset.hpp"
#include "mowe/evaluate.hpp"
#include "mowe/fusion.hpp"
#include "mowe/gradcheck_suite.hpp"
#include "mowe/sha256.hpp"
#include "mowe/synthdata.hpp"
#include "mowe/training.hpp"

namespace fs = std::filesystem;
using namespace mowe;

namespace {

// exit codes: 0 ok, 1 user/config error, 2 data/format error, 3 internal
constexpr int kOk = 0;
constexpr int kUserError = 1;
constexpr int kDataError = 2;
constexpr int kInternalError = 3;

std::size_t default_jobs() {
    const unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : hc;
}

void print_kv(const char* key, const std::string& value) {
    std::printf("%-22s= %s\n", key, value.c_str());
}

void apply_size_preset(GateConfig& gate, const std::string& size) {
    GateConfig preset;
    if (size == "base")
        preset = GateConfig::base_preset();
    else if (size == "small")
        preset = GateConfig::small_preset();
    else
        throw ConfigError("unknown --size '" + size + "' (expected base or small)");
    gate.patch = preset.patch;
    gate.hidden = preset.hidden;
    gate.depth = preset.depth;
    gate.heads = preset.heads;
    gate.mlp_ratio = preset.mlp_ratio;
}

int cmd_generate(const std::string& config_path, const std::string& out_prefix,
                 std::size_t jobs, bool deterministic) {
    KvConfig kv = KvConfig::parse_file(config_path);
    GenerationConfig gen = GenerationConfig::from_kv(kv);
    if (deterministic) jobs = 1;

    print_kv("command", "generate");
    print_kv("config", config_path);
    print_kv("out_prefix", out_prefix);
    print_kv("grid", std::to_string(gen.sim.channels) + "x" + std::to_string(gen.sim.height) +
                         "x" + std::to_string(gen.sim.width));
    print_kv("experts", std::to_string(gen.experts.size()));
    print_kv("train_inits", std::to_string(gen.train_inits));
    print_kv("test_inits", std::to_string(gen.test_inits));
    print_kv("seed", std::to_string(gen.base_seed));
    print_kv("jobs", std::to_string(jobs));

    auto [train_path, test_path] = generate_dataset(gen, out_prefix, jobs);
    std::printf("wrote %s\n", train_path.c_str());
    std::printf("wrote %s\n", test_path.c_str());
    return kOk;
}

int cmd_train(const std::string& config_path, const std::string& data_path,
              const std::string& out_path, const std::string& size, std::int64_t seed,
              std::int64_t steps, std::int64_t batch, std::int64_t ckpt_every, std::size_t jobs,
              bool deterministic) {
    DatasetReader data(data_path);
    const DatasetManifest& m = data.manifest();

    TrainConfig cfg;
    if (!config_path.empty()) {
        KvConfig kv = KvConfig::parse_file(config_path);
        cfg.gate.patch = static_cast<std::size_t>(kv.get_int("patch", 8));
        cfg.gate.hidden = static_cast<std::size_t>(kv.get_int("hidden", 256));
        cfg.gate.depth = static_cast<std::size_t>(kv.get_int("depth", 3));
        cfg.gate.heads = static_cast<std::size_t>(kv.get_int("heads", 4));
        cfg.gate.mlp_ratio = kv.get_real("mlp_ratio", 4.0);
        cfg.gate.noise_dim = static_cast<std::size_t>(kv.get_int("noise_dim", 0));
        cfg.lr = kv.get_real("lr", 3e-4);
        cfg.beta1 = kv.get_real("beta1", 0.9);
        cfg.beta2 = kv.get_real("beta2", 0.999);
        cfg.eps = kv.get_real("eps", 1e-8);
        cfg.batch_size = static_cast<std::size_t>(kv.get_int("batch", 8));
        cfg.steps = static_cast<std::size_t>(kv.get_int("steps", 1000));
        cfg.checkpoint_interval = static_cast<std::size_t>(kv.get_int("ckpt_interval", 0));
        cfg.seed = static_cast<std::uint64_t>(kv.get_int("seed", 0));
        cfg.grad_clip = kv.get_int("grad_clip", 0) != 0;
        cfg.clip_norm = kv.get_real("clip_norm", 1.0);
    }
    if (!size.empty()) apply_size_preset(cfg.gate, size);
    if (seed >= 0) cfg.seed = static_cast<std::uint64_t>(seed);
    if (steps > 0) cfg.steps = static_cast<std::size_t>(steps);
    if (batch > 0) cfg.batch_size = static_cast<std::size_t>(batch);
    if (ckpt_every > 0) cfg.checkpoint_interval = static_cast<std::size_t>(ckpt_every);

    cfg.gate.n_experts = m.n_experts;
    cfg.gate.channels = m.channels;
    cfg.gate.height = m.height;
    cfg.gate.width = m.width;
    cfg.gate.lead_hours = m.lead_hours;
    cfg.jobs = jobs;
    cfg.deterministic = deterministic;
    cfg.out_path = out_path;
    cfg.validate();

    print_kv("command", "train");
    print_kv("data", data_path);
    print_kv("out", out_path);
    print_kv("patch", std::to_string(cfg.gate.patch));
    print_kv("hidden", std::to_string(cfg.gate.hidden));
    print_kv("depth", std::to_string(cfg.gate.depth));
    print_kv("heads", std::to_string(cfg.gate.heads));
    print_kv("mlp_ratio", std::to_string(cfg.gate.mlp_ratio));
    print_kv("parameters", std::to_string(count_params(cfg.gate)));
    print_kv("lr", std::to_string(cfg.lr));
    print_kv("batch", std::to_string(cfg.batch_size));
    print_kv("steps", std::to_string(cfg.steps));
    print_kv("seed", std::to_string(cfg.seed));
    print_kv("jobs", std::to_string(cfg.deterministic ? 1 : cfg.jobs));
    print_kv("deterministic", cfg.deterministic ? "yes" : "no");

    TrainResult res = train(cfg, data, [&](std::size_t step, double loss) {
        if (step % 50 == 0 || step + 1 == cfg.steps)
            std::printf("step %6zu  loss %.6f\n", step, loss);
    });
    std::printf("final loss %.6f\n", static_cast<double>(res.losses.back()));
    std::printf("wrote %s\n", out_path.c_str());
    return kOk;
}

int cmd_evaluate(const std::string& ckpt_path, const std::string& data_path,
                 const std::string& out_path, bool with_oracle,
                 const std::string& train_data_path, double oracle_lambda,
                 const std::string& weighting_name, std::size_t jobs, bool deterministic) {
    if (deterministic) jobs = 1;
    Weighting weighting;
    if (weighting_name == "uniform")
        weighting = Weighting::uniform;
    else if (weighting_name == "coslat")
        weighting = Weighting::coslat;
    else
        throw ConfigError("unknown --weighting '" + weighting_name + "'");

    Checkpoint ckpt = load_checkpoint(ckpt_path);
    DatasetReader test(data_path);

    print_kv("command", "evaluate");
    print_kv("checkpoint", ckpt_path);
    print_kv("checkpoint_step", std::to_string(ckpt.step));
    print_kv("data", data_path);
    print_kv("out", out_path);
    print_kv("weighting", weighting_name);
    print_kv("oracle", with_oracle ? "yes" : "no");
    print_kv("jobs", std::to_string(jobs));

    GateNet<float> net(ckpt.config, 0);
    ckpt.restore(net, nullptr);
    const std::string ckpt_id = fs::path(ckpt_path).filename().string() + "@step" +
                                std::to_string(ckpt.step);
    ScoreTable table = evaluate_leads(net, test, &ckpt.dataset_hash, ckpt_id, weighting, jobs);

    if (with_oracle) {
        if (train_data_path.empty())
            throw ConfigError("--oracle needs --train-data to fit the reference blend");
        DatasetReader train_ds(train_data_path);
        OracleResult oracle = oracle_blend(train_ds, test, oracle_lambda, jobs);
        table.models.push_back("oracle");
        table.values.insert(table.values.end(), oracle.table.values.begin(),
                            oracle.table.values.end());
    }

    table.write(out_path);
    std::printf("wrote %s and %s.json\n", out_path.c_str(), out_path.c_str());

    std::printf("\naggregate standardized rmse by lead:\n%-10s", "model");
    for (std::uint32_t h : table.leads) std::printf("  %8uh", h);
    std::printf("\n");
    for (std::size_t mi = 0; mi < table.models.size(); ++mi) {
        std::printf("%-10s", table.models[mi].c_str());
        for (std::size_t l = 0; l < table.leads.size(); ++l)
            std::printf("  %9.4f", table.aggregate_std(mi, l));
        std::printf("\n");
    }
    return kOk;
}

int cmd_fuse(const std::string& ckpt_path, const std::string& data_path, std::int64_t init,
             std::int64_t lead, const std::string& out_prefix) {
    if (init < 0) throw ConfigError("--init must be non-negative");
    if (lead <= 0) throw ConfigError("--lead must be positive hours");
    Checkpoint ckpt = load_checkpoint(ckpt_path);
    DatasetReader data(data_path);
    const DatasetManifest& m = data.manifest();

    print_kv("command", "fuse");
    print_kv("checkpoint", ckpt_path);
    print_kv("data", data_path);
    print_kv("init", std::to_string(init));
    print_kv("lead_hours", std::to_string(lead));
    print_kv("out_prefix", out_prefix);

    GateNet<float> net(ckpt.config, 0);
    ckpt.restore(net, nullptr);
    if (ckpt.dataset_hash != m.family_hash())
        throw ConfigError("checkpoint dataset family " + Sha256::hex(ckpt.dataset_hash) +
                          " does not match '" + data_path + "' (" +
                          Sha256::hex(m.family_hash()) + ")");

    const std::size_t li = data.lead_index(static_cast<std::uint32_t>(lead));
    const std::size_t fv = m.field_values();
    std::vector<float> experts_raw(m.n_experts * fv), truth_raw(fv),
        experts_std(m.n_experts * fv);
    data.read_experts(static_cast<std::size_t>(init), li, experts_raw.data());
    data.read_truth(static_cast<std::size_t>(init), li, truth_raw.data());

    const std::size_t hw = m.height * m.width;
    for (std::size_t c = 0; c < m.channels; ++c) {
        const double mu = m.mean[c], inv = 1.0 / m.std_dev[c];
        for (std::size_t e = 0; e < m.n_experts; ++e)
            for (std::size_t i = 0; i < hw; ++i)
                experts_std[(e * m.channels + c) * hw + i] =
                    static_cast<float>((experts_raw[(e * m.channels + c) * hw + i] - mu) * inv);
    }

    Tape<float> tape;
    Var<float> ex_std = tape.leaf(
        Tensor<float>({m.n_experts, m.channels, m.height, m.width}, experts_std));
    GateOutput<float> out = net.forward(tape, ex_std, static_cast<double>(lead), nullptr);
    Tensor<float> experts_phys({m.n_experts, m.channels, m.height, m.width}, experts_raw);
    Tensor<float> forecast =
        fuse_standardized(experts_phys, m.mean, m.std_dev, out.expert_logits, out.bias_field);

    atomic_write(out_prefix + "_forecast.f32", forecast.data(), forecast.numel() * 4);
    {
        std::string dims = "forecast " + std::to_string(m.channels) + " " +
                           std::to_string(m.height) + " " + std::to_string(m.width) +
                           "\ndtype f32 little-endian row-major\n";
        atomic_write(out_prefix + "_forecast.dims", dims.data(), dims.size());
    }
    export_weight_maps(net, data, static_cast<std::size_t>(init),
                       {static_cast<std::uint32_t>(lead)}, out_prefix);

    auto scores = rmse(forecast.data(), truth_raw.data(), m.channels, m.height, m.width,
                       Weighting::uniform);
    std::printf("\nper-channel rmse vs stored truth:\n");
    for (std::size_t c = 0; c < m.channels; ++c)
        std::printf("  c%zu: %.6g\n", c, scores[c]);
    std::printf("wrote %s_forecast.f32 and weight maps\n", out_prefix.c_str());
    return kOk;
}

int cmd_gradcheck(bool full, std::size_t jobs) {
    print_kv("command", "gradcheck");
    print_kv("mode", full ? "full (20 seeds)" : "quick (5 seeds)");
    print_kv("jobs", std::to_string(jobs));
    std::printf("\n%-26s %-12s %-10s %s\n", "kernel", "max_rel_err", "tolerance", "status");
    bool all_ok = true;
    run_gradcheck_suite(full, jobs, [&](const KernelCheckResult& r) {
        std::printf("%-26s %-12.3e %-10.0e %s\n", r.name.c_str(), r.max_rel_err, r.tolerance,
                    r.passed() ? "ok" : "FAIL");
        std::fflush(stdout);
        all_ok = all_ok && r.passed();
    });
    if (!all_ok) {
        std::fprintf(stderr, "gradient check failed\n");
        return kInternalError;
    }
    std::printf("all kernels within tolerance\n");
    return kOk;
}

int cmd_inspect(const std::string& path) {
    print_kv("command", "inspect");
    print_kv("file", path);
    std::vector<std::uint8_t> head = read_file(path);
    if (head.size() >= 8 && std::memcmp(head.data(), "MOWEDS\0\0", 8) == 0) {
        DatasetReader reader(path);
        std::printf("\n%s", reader.manifest().text_summary().c_str());
        return kOk;
    }
    if (head.size() >= 8 && std::memcmp(head.data(), "MOWECKPT", 8) == 0) {
        Checkpoint ckpt = load_checkpoint(path);
        std::printf("\n%s", checkpoint_summary(ckpt).c_str());
        return kOk;
    }
    throw FormatError("'" + path + "' carries no known magic (dataset or checkpoint)");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"mixture-of-experts forecast fusion workbench"};
    app.require_subcommand(1);

    std::size_t jobs = default_jobs();
    bool deterministic = false;
    app.add_option("--jobs", jobs, "worker threads for parallel stages");
    app.add_flag("--deterministic", deterministic, "force serial execution paths");

    auto* gen = app.add_subcommand("generate", "synthesize a train/test forecast dataset");
    std::string gen_config, gen_out;
    gen->add_option("--config", gen_config, "generation config file")->required();
    gen->add_option("--out", gen_out, "output path prefix")->required();

    auto* tr = app.add_subcommand("train", "train the gating network");
    std::string tr_config, tr_data, tr_out, tr_size;
    std::int64_t tr_seed = -1, tr_steps = 0, tr_batch = 0, tr_ckpt_every = 0;
    tr->add_option("--config", tr_config, "training config file");
    tr->add_option("--data", tr_data, "training dataset")->required();
    tr->add_option("--out", tr_out, "output checkpoint path")->required();
    tr->add_option("--size", tr_size, "architecture preset: base or small");
    tr->add_option("--seed", tr_seed, "training seed (overrides config)");
    tr->add_option("--steps", tr_steps, "training steps (overrides config)");
    tr->add_option("--batch", tr_batch, "batch size (overrides config)");
    tr->add_option("--ckpt-every", tr_ckpt_every, "periodic checkpoint interval");

    auto* ev = app.add_subcommand("evaluate", "score a checkpoint on a test dataset");
    std::string ev_ckpt, ev_data, ev_out, ev_train_data, ev_weighting = "uniform";
    bool ev_oracle = false;
    double ev_lambda = 1e-4;
    ev->add_option("--ckpt", ev_ckpt, "checkpoint file")->required();
    ev->add_option("--data", ev_data, "test dataset")->required();
    ev->add_option("--out", ev_out, "output score table (csv; a .json mirror is added)")
        ->required();
    ev->add_flag("--oracle", ev_oracle, "add the per-pixel ridge oracle row");
    ev->add_option("--train-data", ev_train_data, "training dataset for the oracle fit");
    ev->add_option("--oracle-lambda", ev_lambda, "oracle ridge strength");
    ev->add_option("--weighting", ev_weighting, "uniform or coslat");

    auto* fu = app.add_subcommand("fuse", "blend one stored sample and export weight maps");
    std::string fu_ckpt, fu_data, fu_out;
    std::int64_t fu_init = -1, fu_lead = 0;
    fu->add_option("--ckpt", fu_ckpt, "checkpoint file")->required();
    fu->add_option("--data", fu_data, "dataset")->required();
    fu->add_option("--init", fu_init, "initialization index")->required();
    fu->add_option("--lead", fu_lead, "lead time in hours")->required();
    fu->add_option("--out", fu_out, "output path prefix")->required();

    auto* gc = app.add_subcommand("gradcheck", "finite-difference verification of all kernels");
    bool gc_full = false;
    gc->add_flag("--full", gc_full, "20 seeds per kernel plus the end-to-end composite");

    auto* in = app.add_subcommand("inspect", "dump the header of a dataset or checkpoint");
    std::string in_path;
    in->add_option("file", in_path, "artifact file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUserError;
    }

    try {
        if (gen->parsed())
            return cmd_generate(gen_config, gen_out, jobs, deterministic);
        if (tr->parsed())
            return cmd_train(tr_config, tr_data, tr_out, tr_size, tr_seed, tr_steps, tr_batch,
                             tr_ckpt_every, jobs, deterministic);
        if (ev->parsed())
            return cmd_evaluate(ev_ckpt, ev_data, ev_out, ev_oracle, ev_train_data, ev_lambda,
                                ev_weighting, jobs, deterministic);
        if (fu->parsed()) return cmd_fuse(fu_ckpt, fu_data, fu_init, fu_lead, fu_out);
        if (gc->parsed()) return cmd_gradcheck(gc_full, jobs);
        if (in->parsed()) return cmd_inspect(in_path);
        std::fprintf(stderr, "no subcommand\n");
        return kUserError;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kUserError;
    } catch (const FormatError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kDataError;
    } catch (const DataError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kDataError;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "internal error: %s\n", e.what());
        return kInternalError;
    }
}
