#pragma once

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "lcfm/autodiff.hpp"
#include "lcfm/dataio.hpp"
#include "lcfm/encoding.hpp"
#include "lcfm/rng.hpp"
#include "lcfm/vocab.hpp"

namespace lcfm {

/// Architecture of the Perceiver-VAE. The decoder widths and output length
/// are fixed for this artifact; the rest is desk-scale tunable.
struct ModelConfig {
    std::size_t n_latents = 64;        // N
    std::size_t latent_dim = 128;      // D
    std::size_t z_dim = 64;            // d_z
    std::size_t self_attn_blocks = 4;
    std::size_t heads = 4;
    std::size_t ff_mult = 2;
    std::size_t dec_hidden1 = 512;
    std::size_t dec_hidden2 = 1024;
    std::size_t output_len = kCurveLen;
    std::size_t n_classes = 0;  // 0 = no classifier head, 2 = binary, >2 = softmax
    EncodingConfig enc;

    void validate() const {
        enc.validate();
        if (n_latents < 1 || latent_dim < 1 || z_dim < 1 || heads < 1 || ff_mult < 1)
            raise(ErrorCode::BadConfig, "model dimensions must be >= 1");
        if (latent_dim % heads != 0) raise(ErrorCode::BadConfig, "latent_dim must be divisible by heads");
        if (output_len != kCurveLen) raise(ErrorCode::BadConfig, "output_len is fixed to 128");
        if (dec_hidden1 != 512 || dec_hidden2 != 1024)
            raise(ErrorCode::BadConfig, "decoder widths are fixed to 512 and 1024");
        if (n_classes == 1) raise(ErrorCode::BadConfig, "n_classes must be 0 or >= 2");
    }

    std::size_t classifier_out() const { return n_classes == 2 ? 1 : n_classes; }
};

/// One forward pass: reconstruction, latent statistics, sampled z, optional
/// class probabilities.
struct ForwardOut {
    Tensor recon;    // [output_len]
    Tensor mu;       // [z_dim]
    Tensor logvar;   // [z_dim]
    Tensor z;        // [z_dim]
    std::optional<Tensor> class_probs;  // simplex over n_classes
};

/// Named parameter tensors plus the config and class vocabulary they belong
/// to. Value-semantic: snapshots are plain copies.
struct ModelParams {
    ModelConfig cfg;
    ClassVocab vocab;  // non-empty iff cfg.n_classes > 0
    std::vector<ad::Param> params;
    std::unordered_map<std::string, std::size_t> index;

    ad::Param& at(const std::string& name) {
        auto it = index.find(name);
        if (it == index.end()) raise(ErrorCode::BadConfig, "unknown parameter " + name);
        return params[it->second];
    }
    const ad::Param& at(const std::string& name) const {
        auto it = index.find(name);
        if (it == index.end()) raise(ErrorCode::BadConfig, "unknown parameter " + name);
        return params[it->second];
    }
    bool has(const std::string& name) const { return index.count(name) > 0; }

    void add(const std::string& name, Tensor value) {
        if (index.count(name)) raise(ErrorCode::BadConfig, "duplicate parameter " + name);
        index.emplace(name, params.size());
        params.emplace_back(name, std::move(value));
    }

    void zero_grads() {
        for (auto& p : params) p.zero_grad();
    }

    std::size_t total_parameters() const {
        std::size_t n = 0;
        for (const auto& p : params) n += p.value.numel();
        return n;
    }
};

namespace detail {

inline Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    Tensor w({fan_in, fan_out});
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (double& v : w.data) v = rng.uniform(-a, a);
    return w;
}

inline void add_linear(ModelParams& mp, const std::string& prefix, std::size_t in, std::size_t out,
                       Rng& rng, bool zero_init = false) {
    mp.add(prefix + ".w", zero_init ? Tensor::zeros({in, out}) : xavier_uniform(in, out, rng));
    mp.add(prefix + ".b", Tensor::zeros({out}));
}

inline void add_layer_norm(ModelParams& mp, const std::string& prefix, std::size_t d) {
    mp.add(prefix + ".gamma", Tensor::full({d}, 1.0));
    mp.add(prefix + ".beta", Tensor::zeros({d}));
}

inline void add_mha(ModelParams& mp, const std::string& prefix, std::size_t q_in, std::size_t kv_in,
                    std::size_t d, Rng& rng) {
    add_linear(mp, prefix + ".q", q_in, d, rng);
    add_linear(mp, prefix + ".k", kv_in, d, rng);
    add_linear(mp, prefix + ".v", kv_in, d, rng);
    add_linear(mp, prefix + ".o", d, d, rng);
}

inline void add_ff(ModelParams& mp, const std::string& prefix, std::size_t d, std::size_t mult, Rng& rng) {
    add_linear(mp, prefix + ".l1", d, d * mult, rng);
    add_linear(mp, prefix + ".l2", d * mult, d, rng);
}

}  // namespace detail

/// Fresh parameters for the given architecture. The latent array and linear
/// weights use scaled normal/uniform initialisers; the mu, logvar and
/// classifier heads start at zero so an untrained model has mu = logvar = 0
/// (hence KL = 0) and uniform class probabilities.
inline ModelParams init_model(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ModelParams mp;
    mp.cfg = cfg;
    Rng rng(seed);

    const std::size_t n = cfg.n_latents, d = cfg.latent_dim, c = cfg.enc.input_channels();

    Tensor latents({n, d});
    for (double& v : latents.data) v = rng.normal(0.0, 0.02);
    mp.add("latents", std::move(latents));

    detail::add_layer_norm(mp, "cross.ln_q", d);
    detail::add_layer_norm(mp, "cross.ln_kv", c);
    detail::add_mha(mp, "cross.attn", d, c, d, rng);
    detail::add_layer_norm(mp, "cross.ln_ff", d);
    detail::add_ff(mp, "cross.ff", d, cfg.ff_mult, rng);

    for (std::size_t b = 0; b < cfg.self_attn_blocks; ++b) {
        const std::string p = "self" + std::to_string(b);
        detail::add_layer_norm(mp, p + ".ln_attn", d);
        detail::add_mha(mp, p + ".attn", d, d, d, rng);
        detail::add_layer_norm(mp, p + ".ln_ff", d);
        detail::add_ff(mp, p + ".ff", d, cfg.ff_mult, rng);
    }

    detail::add_linear(mp, "head.mu", d, cfg.z_dim, rng, /*zero_init=*/true);
    detail::add_linear(mp, "head.logvar", d, cfg.z_dim, rng, /*zero_init=*/true);

    detail::add_linear(mp, "dec.l1", cfg.z_dim, cfg.dec_hidden1, rng);
    detail::add_layer_norm(mp, "dec.ln1", cfg.dec_hidden1);
    detail::add_linear(mp, "dec.l2", cfg.dec_hidden1, cfg.dec_hidden2, rng);
    detail::add_layer_norm(mp, "dec.ln2", cfg.dec_hidden2);
    detail::add_linear(mp, "dec.l3", cfg.dec_hidden2, cfg.output_len, rng);

    if (cfg.n_classes > 0)
        detail::add_linear(mp, "cls", cfg.z_dim, cfg.classifier_out(), rng, /*zero_init=*/true);

    return mp;
}

// ---------------------------------------------------------------------------
// Tape-level forward pieces
// ---------------------------------------------------------------------------

/// Resolves parameter names to tape leaves. In training mode the leaves are
/// bound so gradients accumulate into ModelParams; in eval mode they are
/// plain constants and the parameter set stays untouched (and shareable).
class ParamSource {
public:
    ParamSource(ad::Tape& tape, ModelParams& mp) : tape_(tape), mutable_(&mp), const_(&mp) {}
    ParamSource(ad::Tape& tape, const ModelParams& mp) : tape_(tape), mutable_(nullptr), const_(&mp) {}

    ad::Tape::Id operator()(const std::string& name) {
        if (mutable_) return tape_.param(mutable_->at(name));
        auto it = cache_.find(name);
        if (it != cache_.end()) return it->second;
        const ad::Tape::Id id = tape_.input(const_->at(name).value);
        cache_.emplace(name, id);
        return id;
    }

    const ModelParams& model() const { return *const_; }

private:
    ad::Tape& tape_;
    ModelParams* mutable_;
    const ModelParams* const_;
    std::unordered_map<std::string, ad::Tape::Id> cache_;
};

namespace detail {

inline ad::Tape::Id mha(ad::Tape& t, ParamSource& ps, const std::string& prefix, ad::Tape::Id q_in,
                        ad::Tape::Id kv_in, std::size_t heads) {
    const auto q = t.linear(q_in, ps(prefix + ".q.w"), ps(prefix + ".q.b"));
    const auto k = t.linear(kv_in, ps(prefix + ".k.w"), ps(prefix + ".k.b"));
    const auto v = t.linear(kv_in, ps(prefix + ".v.w"), ps(prefix + ".v.b"));
    const std::size_t d = t.val(q).cols();
    const std::size_t dh = d / heads;
    std::vector<ad::Tape::Id> outs;
    outs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t c0 = h * dh, c1 = c0 + dh;
        outs.push_back(ad::attention(t, t.slice_cols(q, c0, c1), t.slice_cols(k, c0, c1),
                                     t.slice_cols(v, c0, c1)));
    }
    return t.linear(t.concat_cols(outs), ps(prefix + ".o.w"), ps(prefix + ".o.b"));
}

inline ad::Tape::Id ff(ad::Tape& t, ParamSource& ps, const std::string& prefix, ad::Tape::Id x) {
    const auto h = t.relu(t.linear(x, ps(prefix + ".l1.w"), ps(prefix + ".l1.b")));
    return t.linear(h, ps(prefix + ".l2.w"), ps(prefix + ".l2.b"));
}

}  // namespace detail

struct EncodeIds {
    ad::Tape::Id mu;
    ad::Tape::Id logvar;
};

/// Pre-norm Perceiver encoder: one cross-attention + FF block with residuals,
/// then the latent self-attention stack, mean-pool over latents, and the two
/// variational heads. logvar is clamped to [-10, 10] before any exp.
inline EncodeIds encode_on_tape(ad::Tape& t, ParamSource& ps, ad::Tape::Id input) {
    const ModelConfig& cfg = ps.model().cfg;
    if (t.val(input).rows() != kCurveLen || t.val(input).cols() != cfg.enc.input_channels())
        raise(ErrorCode::ShapeMismatch, "encoder input must be " + std::to_string(kCurveLen) + "x" +
                                            std::to_string(cfg.enc.input_channels()));

    auto lat = ps("latents");
    {
        const auto q_in = t.layer_norm(lat, ps("cross.ln_q.gamma"), ps("cross.ln_q.beta"));
        const auto kv_in = t.layer_norm(input, ps("cross.ln_kv.gamma"), ps("cross.ln_kv.beta"));
        lat = t.add(lat, detail::mha(t, ps, "cross.attn", q_in, kv_in, cfg.heads));
        const auto ff_in = t.layer_norm(lat, ps("cross.ln_ff.gamma"), ps("cross.ln_ff.beta"));
        lat = t.add(lat, detail::ff(t, ps, "cross.ff", ff_in));
    }
    for (std::size_t b = 0; b < cfg.self_attn_blocks; ++b) {
        const std::string p = "self" + std::to_string(b);
        const auto a_in = t.layer_norm(lat, ps(p + ".ln_attn.gamma"), ps(p + ".ln_attn.beta"));
        lat = t.add(lat, detail::mha(t, ps, p + ".attn", a_in, a_in, cfg.heads));
        const auto f_in = t.layer_norm(lat, ps(p + ".ln_ff.gamma"), ps(p + ".ln_ff.beta"));
        lat = t.add(lat, detail::ff(t, ps, p + ".ff", f_in));
    }

    const auto pooled = t.mean_rows(lat);
    EncodeIds out;
    out.mu = t.linear(pooled, ps("head.mu.w"), ps("head.mu.b"));
    out.logvar = t.clamp(t.linear(pooled, ps("head.logvar.w"), ps("head.logvar.b")), -10.0, 10.0);
    return out;
}

/// Linear(z_dim -> 512) -> LayerNorm -> ReLU -> Linear(512 -> 1024)
/// -> LayerNorm -> ReLU -> Linear(1024 -> output_len).
inline ad::Tape::Id decode_on_tape(ad::Tape& t, ParamSource& ps, ad::Tape::Id z) {
    const auto h1 = t.relu(t.layer_norm(t.linear(z, ps("dec.l1.w"), ps("dec.l1.b")),
                                        ps("dec.ln1.gamma"), ps("dec.ln1.beta")));
    const auto h2 = t.relu(t.layer_norm(t.linear(h1, ps("dec.l2.w"), ps("dec.l2.b")),
                                        ps("dec.ln2.gamma"), ps("dec.ln2.beta")));
    return t.linear(h2, ps("dec.l3.w"), ps("dec.l3.b"));
}

/// Classifier logits from z: [1] in binary mode, [n_classes] otherwise.
inline ad::Tape::Id classifier_logits_on_tape(ad::Tape& t, ParamSource& ps, ad::Tape::Id z) {
    if (!ps.model().has("cls.w")) raise(ErrorCode::NoHead, "model has no classifier head");
    return t.linear(z, ps("cls.w"), ps("cls.b"));
}

/// Probabilities as a full simplex vector over n_classes. Binary mode runs a
/// sigmoid on the single logit and reports [1-p, p].
inline ad::Tape::Id classifier_probs_on_tape(ad::Tape& t, ParamSource& ps, ad::Tape::Id z) {
    const auto logits = classifier_logits_on_tape(t, ps, z);
    return ps.model().cfg.n_classes == 2 ? t.sigmoid(logits) : t.softmax_rows(logits);
}

inline Tensor expand_binary_probs(const Tensor& p) {
    return Tensor::vector({1.0 - p[0], p[0]});
}

struct ForwardIds {
    ad::Tape::Id input;
    ad::Tape::Id mu;
    ad::Tape::Id logvar;
    ad::Tape::Id z;
    ad::Tape::Id recon;
    std::optional<ad::Tape::Id> probs;  // sigmoid p (binary) or softmax row
};

/// Full pass on an existing tape. `eps` must have z_dim entries; pass zeros
/// for eval-mode determinism.
inline ForwardIds forward_on_tape(ad::Tape& t, ParamSource& ps, const Tensor& input, const Tensor& eps,
                                  bool with_classifier) {
    ForwardIds ids;
    ids.input = t.input(input);
    const auto enc = encode_on_tape(t, ps, ids.input);
    ids.mu = enc.mu;
    ids.logvar = enc.logvar;
    ids.z = t.reparameterize(ids.mu, ids.logvar, eps);
    ids.recon = decode_on_tape(t, ps, ids.z);
    if (with_classifier) ids.probs = classifier_probs_on_tape(t, ps, ids.z);
    return ids;
}

inline Tensor draw_eps(std::size_t z_dim, Rng& rng) {
    Tensor eps({z_dim});
    for (double& v : eps.data) v = rng.normal();
    return eps;
}

/// Plain-value forward pass. Training mode draws a fresh eps from `rng`;
/// eval mode (rng == nullptr) uses eps = 0, so z == mu bit-exactly and the
/// result is a pure function of (params, curve).
inline ForwardOut forward(const ModelParams& mp, const LightCurve& curve, Rng* rng = nullptr) {
    ad::Tape t;
    ParamSource ps(t, mp);
    const Tensor x = build_input(curve, mp.cfg.enc);
    const Tensor eps = rng ? draw_eps(mp.cfg.z_dim, *rng) : Tensor::zeros({mp.cfg.z_dim});
    const auto ids = forward_on_tape(t, ps, x, eps, mp.cfg.n_classes > 0);
    ForwardOut out;
    out.mu = t.val(ids.mu);
    out.logvar = t.val(ids.logvar);
    out.z = t.val(ids.z);
    out.recon = t.val(ids.recon);
    if (ids.probs) {
        const Tensor& p = t.val(*ids.probs);
        out.class_probs = mp.cfg.n_classes == 2 ? expand_binary_probs(p) : p;
    }
    return out;
}

/// Eval-mode (mu, logvar) without decoding; the generation path's encoder.
inline std::pair<Tensor, Tensor> encode(const ModelParams& mp, const LightCurve& curve) {
    ad::Tape t;
    ParamSource ps(t, mp);
    const auto ids = encode_on_tape(t, ps, t.input(build_input(curve, mp.cfg.enc)));
    return {t.val(ids.mu), t.val(ids.logvar)};
}

/// Eval-mode decode of an arbitrary latent vector.
inline Tensor decode(const ModelParams& mp, const Tensor& z) {
    if (z.numel() != mp.cfg.z_dim) raise(ErrorCode::ShapeMismatch, "z must have z_dim entries");
    ad::Tape t;
    ParamSource ps(t, mp);
    return t.val(decode_on_tape(t, ps, t.input(z)));
}

/// Eval-mode class probabilities for a latent vector.
inline Tensor classify(const ModelParams& mp, const Tensor& z) {
    ad::Tape t;
    ParamSource ps(t, mp);
    const Tensor p = t.val(classifier_probs_on_tape(t, ps, t.input(z)));
    return mp.cfg.n_classes == 2 ? expand_binary_probs(p) : p;
}

// ---------------------------------------------------------------------------
// Checkpoints: magic, JSON header, little-endian float64 blob
// ---------------------------------------------------------------------------

namespace detail {

constexpr char kCheckpointMagic[] = "LCFM1\n";

inline nlohmann::json config_json(const ModelConfig& cfg) {
    return nlohmann::json{
        {"n_latents", cfg.n_latents},
        {"latent_dim", cfg.latent_dim},
        {"z_dim", cfg.z_dim},
        {"self_attn_blocks", cfg.self_attn_blocks},
        {"heads", cfg.heads},
        {"ff_mult", cfg.ff_mult},
        {"dec_hidden1", cfg.dec_hidden1},
        {"dec_hidden2", cfg.dec_hidden2},
        {"output_len", cfg.output_len},
        {"n_classes", cfg.n_classes},
        {"enc", {{"bands", cfg.enc.bands}, {"max_freq", cfg.enc.max_freq}, {"include_raw", cfg.enc.include_raw}}},
    };
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
    ModelConfig cfg;
    cfg.n_latents = j.at("n_latents").get<std::size_t>();
    cfg.latent_dim = j.at("latent_dim").get<std::size_t>();
    cfg.z_dim = j.at("z_dim").get<std::size_t>();
    cfg.self_attn_blocks = j.at("self_attn_blocks").get<std::size_t>();
    cfg.heads = j.at("heads").get<std::size_t>();
    cfg.ff_mult = j.at("ff_mult").get<std::size_t>();
    cfg.dec_hidden1 = j.at("dec_hidden1").get<std::size_t>();
    cfg.dec_hidden2 = j.at("dec_hidden2").get<std::size_t>();
    cfg.output_len = j.at("output_len").get<std::size_t>();
    cfg.n_classes = j.at("n_classes").get<std::size_t>();
    cfg.enc.bands = j.at("enc").at("bands").get<std::size_t>();
    cfg.enc.max_freq = j.at("enc").at("max_freq").get<double>();
    cfg.enc.include_raw = j.at("enc").at("include_raw").get<bool>();
    return cfg;
}

}  // namespace detail

/// Writes the checkpoint atomically (temp file + rename). `config_echo`
/// carries the run's effective key=value configuration verbatim.
inline void save_checkpoint(const std::string& path, const ModelParams& mp, std::uint64_t seed,
                            const std::map<std::string, std::string>& config_echo = {}) {
    nlohmann::json header;
    header["config"] = detail::config_json(mp.cfg);
    header["vocab"] = mp.vocab.names;
    header["seed"] = seed;
    header["config_echo"] = config_echo;
    nlohmann::json tensors = nlohmann::json::array();
    std::size_t offset = 0;
    for (const auto& p : mp.params) {
        tensors.push_back({{"name", p.name}, {"shape", p.value.shape}, {"offset", offset}});
        offset += p.value.numel() * sizeof(double);
    }
    header["tensors"] = tensors;
    const std::string hs = header.dump();

    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary);
        if (!f) raise(ErrorCode::IoError, "cannot open " + tmp + " for writing");
        f.write(detail::kCheckpointMagic, 6);
        const std::uint64_t hlen = hs.size();
        f.write(reinterpret_cast<const char*>(&hlen), sizeof hlen);  // little-endian host
        f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
        for (const auto& p : mp.params)
            f.write(reinterpret_cast<const char*>(p.value.data.data()),
                    static_cast<std::streamsize>(p.value.numel() * sizeof(double)));
        if (!f) raise(ErrorCode::IoError, "short write to " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

struct Checkpoint {
    ModelParams params;
    std::uint64_t seed = 0;
    std::map<std::string, std::string> config_echo;
};

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) raise(ErrorCode::IoError, "cannot open " + path);
    char magic[6];
    f.read(magic, 6);
    if (!f || std::memcmp(magic, detail::kCheckpointMagic, 6) != 0)
        raise(ErrorCode::IncompatibleCheckpoint, path + " is not a checkpoint file");
    std::uint64_t hlen = 0;
    f.read(reinterpret_cast<char*>(&hlen), sizeof hlen);
    std::string hs(hlen, '\0');
    f.read(hs.data(), static_cast<std::streamsize>(hlen));
    if (!f) raise(ErrorCode::IncompatibleCheckpoint, "truncated checkpoint header");
    nlohmann::json header = nlohmann::json::parse(hs);

    Checkpoint ck;
    ck.params.cfg = detail::config_from_json(header.at("config"));
    ck.params.cfg.validate();
    ck.params.vocab.names = header.at("vocab").get<std::vector<std::string>>();
    ck.seed = header.at("seed").get<std::uint64_t>();
    if (header.contains("config_echo"))
        ck.config_echo = header.at("config_echo").get<std::map<std::string, std::string>>();

    for (const auto& tj : header.at("tensors")) {
        const auto shape = tj.at("shape").get<std::vector<std::size_t>>();
        Tensor v(shape);
        f.seekg(static_cast<std::streamoff>(6 + sizeof(std::uint64_t) + hlen + tj.at("offset").get<std::size_t>()));
        f.read(reinterpret_cast<char*>(v.data.data()), static_cast<std::streamsize>(v.numel() * sizeof(double)));
        if (!f) raise(ErrorCode::IncompatibleCheckpoint, "truncated tensor data in " + path);
        ck.params.add(tj.at("name").get<std::string>(), std::move(v));
    }

    // layout sanity: names and shapes must match a fresh model of this config
    ModelParams fresh = init_model(ck.params.cfg, 0);
    if (fresh.params.size() != ck.params.params.size())
        raise(ErrorCode::IncompatibleCheckpoint, "tensor list does not match architecture");
    for (std::size_t i = 0; i < fresh.params.size(); ++i) {
        if (fresh.params[i].name != ck.params.params[i].name ||
            fresh.params[i].value.shape != ck.params.params[i].value.shape)
            raise(ErrorCode::IncompatibleCheckpoint, "tensor " + fresh.params[i].name + " mismatch");
    }
    return ck;
}

/// Refuses checkpoints whose core dims disagree with the runtime config.
inline void check_runtime_compatible(const ModelParams& loaded, const ModelConfig& runtime) {
    if (loaded.cfg.output_len != runtime.output_len || loaded.cfg.z_dim != runtime.z_dim)
        raise(ErrorCode::IncompatibleCheckpoint,
              "checkpoint output_len/z_dim do not match the runtime configuration");
}

}  // namespace lcfm
