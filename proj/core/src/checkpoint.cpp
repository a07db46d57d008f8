#include "mowe/checkpoint.hpp"

#include <cstring>
#include <sstream>

#include "mowe/io.hpp"
#include "mowe/sha256.hpp"

namespace mowe {

namespace {

constexpr char kMagic[8] = {'M', 'O', 'W', 'E', 'C', 'K', 'P', 'T'};

void write_config(ByteWriter& w, const GateConfig& c) {
    w.u32(static_cast<std::uint32_t>(c.n_experts));
    w.u32(static_cast<std::uint32_t>(c.channels));
    w.u32(static_cast<std::uint32_t>(c.height));
    w.u32(static_cast<std::uint32_t>(c.width));
    w.u32(static_cast<std::uint32_t>(c.patch));
    w.u32(static_cast<std::uint32_t>(c.hidden));
    w.u32(static_cast<std::uint32_t>(c.depth));
    w.u32(static_cast<std::uint32_t>(c.heads));
    w.u32(static_cast<std::uint32_t>(c.noise_dim));
    w.u32(static_cast<std::uint32_t>(c.lead_hours.size()));
    for (std::uint32_t h : c.lead_hours) w.u32(h);
    w.f32(static_cast<float>(c.mlp_ratio));
}

GateConfig read_config(ByteReader& r) {
    GateConfig c;
    c.n_experts = r.u32();
    c.channels = r.u32();
    c.height = r.u32();
    c.width = r.u32();
    c.patch = r.u32();
    c.hidden = r.u32();
    c.depth = r.u32();
    c.heads = r.u32();
    c.noise_dim = r.u32();
    const std::uint32_t n_leads = r.u32();
    if (n_leads > 1024) throw FormatError("implausible lead count in checkpoint");
    c.lead_hours.resize(n_leads);
    for (auto& h : c.lead_hours) h = r.u32();
    c.mlp_ratio = r.f32();
    return c;
}

void write_tensor(ByteWriter& w, const std::string& name, const Tensor<float>& t) {
    w.str16(name);
    if (t.shape.size() > 255) throw InternalError("tensor rank too large");
    w.u8(static_cast<std::uint8_t>(t.shape.size()));
    for (std::size_t e : t.shape) w.u32(static_cast<std::uint32_t>(e));
    w.raw(t.v.data(), t.v.size() * 4);
}

std::pair<std::string, Tensor<float>> read_tensor(ByteReader& r) {
    const std::string name = r.str16();
    try {
        const std::uint8_t rank = r.u8();
        Shape shape(rank);
        for (auto& e : shape) {
            e = r.u32();
            if (e == 0) throw FormatError("zero extent in tensor '" + name + "'");
        }
        Tensor<float> t(shape);
        static_assert(sizeof(float) == 4);
        r.raw(t.v.data(), t.v.size() * 4);
        return {name, std::move(t)};
    } catch (const FormatError& e) {
        throw FormatError(std::string(e.what()) + " (while reading tensor '" + name + "')");
    }
}

}  // namespace

Checkpoint Checkpoint::snapshot(const GateNet<float>& net, const AdamState<float>& adam,
                                std::uint64_t step, const std::array<std::uint8_t, 32>& data_hash,
                                std::vector<float> losses) {
    Checkpoint c;
    c.config = net.cfg;
    c.step = step;
    c.dataset_hash = data_hash;
    for (const auto& p : net.params)
        c.tensors.emplace_back(p.name, Tensor<float>(p.shape, *p.data));
    c.adam_lr = adam.lr;
    c.adam_beta1 = adam.beta1;
    c.adam_beta2 = adam.beta2;
    c.adam_eps = adam.eps;
    if (!adam.m.empty()) {
        if (adam.m.size() != net.params.size())
            throw InternalError("optimizer state does not align with the network");
        for (std::size_t i = 0; i < net.params.size(); ++i) {
            c.adam_tensors.emplace_back("m." + net.params[i].name,
                                        Tensor<float>(net.params[i].shape, adam.m[i]));
            c.adam_tensors.emplace_back("v." + net.params[i].name,
                                        Tensor<float>(net.params[i].shape, adam.v[i]));
        }
    }
    c.loss_history = std::move(losses);
    return c;
}

void Checkpoint::restore(GateNet<float>& net, AdamState<float>* adam) const {
    if (net.params.size() != tensors.size())
        throw FormatError("checkpoint holds " + std::to_string(tensors.size()) +
                          " tensors, network expects " + std::to_string(net.params.size()));
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        if (tensors[i].first != net.params[i].name)
            throw FormatError("checkpoint tensor '" + tensors[i].first + "' does not match '" +
                              net.params[i].name + "'");
        if (tensors[i].second.shape != net.params[i].shape)
            throw FormatError("checkpoint tensor '" + tensors[i].first + "' has shape " +
                              shape_str(tensors[i].second.shape) + ", expected " +
                              shape_str(net.params[i].shape));
        *net.params[i].data = tensors[i].second.v;
    }
    if (adam) {
        adam->lr = adam_lr;
        adam->beta1 = adam_beta1;
        adam->beta2 = adam_beta2;
        adam->eps = adam_eps;
        adam->step_count = step;
        adam->m.clear();
        adam->v.clear();
        if (!adam_tensors.empty()) {
            if (adam_tensors.size() != 2 * tensors.size())
                throw FormatError("optimizer tensor count mismatch in checkpoint");
            for (std::size_t i = 0; i < tensors.size(); ++i) {
                adam->m.push_back(adam_tensors[2 * i].second.v);
                adam->v.push_back(adam_tensors[2 * i + 1].second.v);
            }
        }
    }
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    ByteWriter w;
    w.raw(kMagic, 8);
    w.u32(ckpt.version);
    write_config(w, ckpt.config);
    w.u32(static_cast<std::uint32_t>(ckpt.step));
    w.raw(ckpt.dataset_hash.data(), 32);
    w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& [name, t] : ckpt.tensors) write_tensor(w, name, t);
    // optimizer hyperparameters ride along as one fixed tensor, then moments
    w.u32(static_cast<std::uint32_t>(ckpt.adam_tensors.size() + 1));
    Tensor<float> hyper({4}, {static_cast<float>(ckpt.adam_lr), static_cast<float>(ckpt.adam_beta1),
                              static_cast<float>(ckpt.adam_beta2), static_cast<float>(ckpt.adam_eps)});
    write_tensor(w, "adam.hyper", hyper);
    for (const auto& [name, t] : ckpt.adam_tensors) write_tensor(w, name, t);
    w.u32(static_cast<std::uint32_t>(ckpt.loss_history.size()));
    if (!ckpt.loss_history.empty())
        w.raw(ckpt.loss_history.data(), ckpt.loss_history.size() * 4);
    atomic_write(path, w.bytes.data(), w.bytes.size());
}

Checkpoint load_checkpoint(const std::string& path) {
    const std::vector<std::uint8_t> bytes = read_file(path);
    ByteReader r(bytes.data(), bytes.size(), path);
    char magic[8];
    r.raw(magic, 8);
    if (std::memcmp(magic, kMagic, 8) != 0)
        throw FormatError("'" + path + "': bad magic; not a checkpoint file");
    Checkpoint c;
    c.version = r.u32();
    if (c.version != 1)
        throw FormatError("unsupported checkpoint version " + std::to_string(c.version));
    c.config = read_config(r);
    c.config.validate();
    c.step = r.u32();
    r.raw(c.dataset_hash.data(), 32);

    // validate names and shapes against the architecture the config implies
    GateNet<float> reference(c.config, 0);
    const std::uint32_t n_tensors = r.u32();
    if (n_tensors != reference.params.size())
        throw FormatError("'" + path + "': " + std::to_string(n_tensors) +
                          " tensors, architecture expects " +
                          std::to_string(reference.params.size()));
    for (std::uint32_t i = 0; i < n_tensors; ++i) {
        auto [name, t] = read_tensor(r);
        if (name != reference.params[i].name)
            throw FormatError("'" + path + "': tensor '" + name + "' where '" +
                              reference.params[i].name + "' was expected");
        if (t.shape != reference.params[i].shape)
            throw FormatError("'" + path + "': tensor '" + name + "' has shape " +
                              shape_str(t.shape) + ", architecture expects " +
                              shape_str(reference.params[i].shape));
        c.tensors.emplace_back(std::move(name), std::move(t));
    }

    const std::uint32_t n_adam = r.u32();
    if (n_adam < 1) throw FormatError("'" + path + "': missing optimizer block");
    {
        auto [name, t] = read_tensor(r);
        if (name != "adam.hyper" || t.numel() != 4)
            throw FormatError("'" + path + "': malformed optimizer hyperparameter tensor");
        c.adam_lr = t.v[0];
        c.adam_beta1 = t.v[1];
        c.adam_beta2 = t.v[2];
        c.adam_eps = t.v[3];
    }
    for (std::uint32_t i = 1; i < n_adam; ++i) c.adam_tensors.push_back(read_tensor(r));
    if (!c.adam_tensors.empty() && c.adam_tensors.size() != 2 * c.tensors.size())
        throw FormatError("'" + path + "': optimizer moment tensors do not pair with parameters");

    const std::uint32_t n_loss = r.u32();
    c.loss_history.resize(n_loss);
    if (n_loss > 0) r.raw(c.loss_history.data(), n_loss * 4);
    if (r.remaining() != 0)
        throw FormatError("'" + path + "': " + std::to_string(r.remaining()) +
                          " trailing bytes after the loss history");
    return c;
}

std::string checkpoint_summary(const Checkpoint& c) {
    std::ostringstream os;
    os << "format = mowe-checkpoint v" << c.version << "\n";
    os << "step = " << c.step << "\n";
    os << "experts = " << c.config.n_experts << "\n";
    os << "channels = " << c.config.channels << "\n";
    os << "grid = " << c.config.height << "x" << c.config.width << "\n";
    os << "patch = " << c.config.patch << "\n";
    os << "hidden = " << c.config.hidden << "\n";
    os << "depth = " << c.config.depth << "\n";
    os << "heads = " << c.config.heads << "\n";
    os << "mlp_ratio = " << c.config.mlp_ratio << "\n";
    os << "noise_dim = " << c.config.noise_dim << "\n";
    os << "leads_hours =";
    for (std::uint32_t h : c.config.lead_hours) os << " " << h;
    os << "\n";
    os << "parameters = " << count_params(c.config) << "\n";
    os << "tensors = " << c.tensors.size() << "\n";
    os << "optimizer_moments = " << (c.adam_tensors.empty() ? "absent" : "present") << "\n";
    os << "adam_lr = " << c.adam_lr << "\n";
    os << "loss_history_len = " << c.loss_history.size() << "\n";
    if (!c.loss_history.empty()) {
        os << "first_loss = " << c.loss_history.front() << "\n";
        os << "last_loss = " << c.loss_history.back() << "\n";
    }
    os << "dataset_hash = " << Sha256::hex(c.dataset_hash) << "\n";
    return os.str();
}

}  // namespace mowe
