#pragma once

#include <cmath>
#include <cstring>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mvgt/eeg.hpp"
#include "mvgt/encodings.hpp"
#include "mvgt/ops.hpp"
#include "mvgt/optim.hpp"
#include "mvgt/spatial.hpp"

namespace mvgt::model {

using numkit::Shape;
using numkit::Tape;
using numkit::Tensor;

struct ModelConfig {
    std::size_t d = 64;  // hidden dimension
    std::size_t K = 32;  // Gaussian basis functions
    std::size_t L = 4;   // MHA layers
    std::size_t M = 2;   // attention heads
    std::size_t R = 3;   // recycling iterations
    std::size_t ffn_multiplier = 4;
    double dropout_p = 0.1;
    std::size_t n_classes = 3;
    std::size_t T = 5; // windows per segment
    std::size_t f = 5; // frequency bands
    std::size_t stride = 1;
    bool use_centrality = true;
    bool use_bre = true;
    bool use_gse = true;
    bool use_inverted = true;
    bool graphnorm_minmax = false; // min-max input normalization variant
    bool recycle_detach = false;   // stop gradients between iterations

    void validate() const {
        if (d == 0 || M == 0 || d % M != 0)
            throw ConfigError("model: hidden dim " + std::to_string(d) +
                              " must be a positive multiple of heads " +
                              std::to_string(M));
        if (R < 1) throw ConfigError("model: recycling iterations must be >= 1");
        if (L < 1 || K < 1 || T < 1 || stride < 1)
            throw ConfigError("model: L, K, T, stride must be >= 1");
        if (f != 5) throw ConfigError("model: feature dimension must be 5 bands");
        if (n_classes < 2) throw ConfigError("model: need >= 2 classes");
        if (dropout_p < 0.0 || dropout_p >= 1.0)
            throw ConfigError("model: dropout must be in [0,1)");
        if (!use_inverted && (use_centrality || use_bre || use_gse))
            throw ConfigError(
                "model: spatial encodings require inverted (channel-token) "
                "mode");
    }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{{"d", c.d},
                       {"K", c.K},
                       {"L", c.L},
                       {"M", c.M},
                       {"R", c.R},
                       {"ffn_multiplier", c.ffn_multiplier},
                       {"dropout_p", c.dropout_p},
                       {"n_classes", c.n_classes},
                       {"T", c.T},
                       {"f", c.f},
                       {"stride", c.stride},
                       {"use_centrality", c.use_centrality},
                       {"use_bre", c.use_bre},
                       {"use_gse", c.use_gse},
                       {"use_inverted", c.use_inverted},
                       {"graphnorm_minmax", c.graphnorm_minmax},
                       {"recycle_detach", c.recycle_detach}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
    j.at("d").get_to(c.d);
    j.at("K").get_to(c.K);
    j.at("L").get_to(c.L);
    j.at("M").get_to(c.M);
    j.at("R").get_to(c.R);
    j.at("ffn_multiplier").get_to(c.ffn_multiplier);
    j.at("dropout_p").get_to(c.dropout_p);
    j.at("n_classes").get_to(c.n_classes);
    j.at("T").get_to(c.T);
    j.at("f").get_to(c.f);
    j.at("stride").get_to(c.stride);
    j.at("use_centrality").get_to(c.use_centrality);
    j.at("use_bre").get_to(c.use_bre);
    j.at("use_gse").get_to(c.use_gse);
    j.at("use_inverted").get_to(c.use_inverted);
    c.graphnorm_minmax = j.value("graphnorm_minmax", false);
    c.recycle_detach = j.value("recycle_detach", false);
}

struct ForwardOptions {
    bool training = false;
    bool keep_attention = false;
    Rng* rng = nullptr; // required when training and dropout_p > 0
};

// Post-softmax attention maps accumulated over segments; indexable by
// (recycle iteration, layer, head).
struct AttentionMaps {
    std::size_t R = 0, L = 0, M = 0, tokens = 0;
    std::size_t count = 0; // segments accumulated
    std::vector<std::vector<double>> sums;

    void init(std::size_t r, std::size_t l, std::size_t m, std::size_t n) {
        R = r;
        L = l;
        M = m;
        tokens = n;
        count = 0;
        sums.assign(R * L * M, std::vector<double>(n * n, 0.0));
    }
    std::vector<double>& at(std::size_t r, std::size_t l, std::size_t m) {
        return sums[(r * L + l) * M + m];
    }
    const std::vector<double>& at(std::size_t r, std::size_t l,
                                  std::size_t m) const {
        return sums[(r * L + l) * M + m];
    }
};

// Spatial encodings computed once per forward pass; shared by every segment
// in the batch (they depend only on parameters).
struct Encodings {
    Tensor centrality;               // [n x d], defined iff use_centrality
    Tensor region;                   // [n x d], defined iff use_bre
    std::vector<Tensor> bias_heads;  // M slices [n x n], defined iff use_gse
};

class MvgtModel {
public:
    MvgtModel(ModelConfig cfg, spatial::ElectrodeLayout layout,
              spatial::RegionScheme scheme, std::uint64_t seed)
        : cfg_(cfg), layout_(std::move(layout)), scheme_(std::move(scheme)) {
        cfg_.validate();
        layout_.validate();
        scheme_.validate_covers(layout_);
        region_idx_ = scheme_.region_indices(layout_);
        dist_ = spatial::distance_tensor(layout_);
        Rng rng(Rng::derive(seed, 0x6D766774));
        build_parameters(rng);
    }

    const ModelConfig& config() const { return cfg_; }
    const spatial::ElectrodeLayout& layout() const { return layout_; }
    const spatial::RegionScheme& scheme() const { return scheme_; }
    Tape& tape() { return tape_; }

    std::size_t n_tokens() const {
        return cfg_.use_inverted ? layout_.size() : cfg_.T;
    }
    std::size_t token_width() const {
        return cfg_.use_inverted ? cfg_.T * cfg_.f : layout_.size() * cfg_.f;
    }

    std::vector<numkit::AdamW::NamedParam>& params() { return params_; }
    const std::vector<numkit::AdamW::NamedParam>& params() const {
        return params_;
    }

    Tensor param(const std::string& name) {
        for (auto& p : params_)
            if (p.name == name) return p.tensor;
        throw ConfigError("model: no parameter named '" + name + "'");
    }

    void zero_grad() {
        for (auto& p : params_) p.tensor.zero_grad();
    }

    // ---- forward stages (exposed for white-box tests) ----

    // segment values in SegmentBatch layout: [n_channels x T*f] row-major
    Tensor tokenize(const std::vector<double>& segment) const {
        const std::size_t n = layout_.size();
        const std::size_t tf = cfg_.T * cfg_.f;
        if (segment.size() != n * tf)
            throw DimensionError("tokenize: segment has " +
                                 std::to_string(segment.size()) +
                                 " values, expected " + std::to_string(n * tf));
        if (cfg_.use_inverted) return Tensor::constant({n, tf}, segment);
        // pointwise: token t carries all channels' bands at window t
        std::vector<double> v(cfg_.T * n * cfg_.f);
        for (std::size_t t = 0; t < cfg_.T; ++t)
            for (std::size_t c = 0; c < n; ++c)
                for (std::size_t b = 0; b < cfg_.f; ++b)
                    v[t * n * cfg_.f + c * cfg_.f + b] =
                        segment[c * tf + t * cfg_.f + b];
        return Tensor::constant({cfg_.T, n * cfg_.f}, std::move(v));
    }

    Tensor input_norm(const Tensor& tokens) {
        using namespace numkit;
        if (cfg_.graphnorm_minmax) {
            const Tensor scaled = minmax_norm_axis0(tokens, 1e-5);
            return add_rowvec(mul_rowvec(scaled, p_gn_gamma_), p_gn_beta_);
        }
        const Tensor mu = mean_axis(tokens, 0);
        const Tensor xc =
            add_rowvec(tokens, neg(mul(p_gn_alpha_, mu)));
        const Tensor var = mean_axis(square(xc), 0);
        const Tensor inv = reciprocal(sqrt_op(add_scalar(var, 1e-5)));
        return add_rowvec(mul_rowvec(mul_rowvec(xc, inv), p_gn_gamma_),
                          p_gn_beta_);
    }

    Encodings compute_encodings() {
        using namespace numkit;
        Encodings enc;
        if (!cfg_.use_inverted) return enc;
        Tensor B;
        if (cfg_.use_gse || cfg_.use_centrality)
            B = spatial::gaussian_basis(basis_bank(), dist_);
        if (cfg_.use_centrality)
            enc.centrality = spatial::centrality_encoding(B, p_w_e_);
        if (cfg_.use_bre)
            enc.region = spatial::region_encoding(region_idx_, p_bre_table_);
        if (cfg_.use_gse) {
            const Tensor bp = spatial::bias_projection(B, projection());
            const std::size_t n = layout_.size();
            enc.bias_heads.reserve(cfg_.M);
            for (std::size_t m = 0; m < cfg_.M; ++m)
                enc.bias_heads.push_back(
                    reshape(slice_lastdim(bp, m, 1), {n, n}));
        }
        return enc;
    }

    Tensor encode_nodes(const Tensor& normed_tokens, const Encodings& enc) {
        using namespace numkit;
        Tensor h = matmul(normed_tokens, p_w_x_);
        if (cfg_.use_centrality) h = add(h, enc.centrality);
        if (cfg_.use_bre) h = add(h, enc.region);
        return h;
    }

    // one pre-LN transformer block
    Tensor block(const Tensor& h, std::size_t layer, const Encodings& enc,
                 const ForwardOptions& opt, AttentionMaps* att,
                 std::size_t recycle_iter) {
        using namespace numkit;
        const Layer& ly = layers_[layer];
        const std::size_t dh = cfg_.d / cfg_.M;
        const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

        const Tensor a = layer_norm(h, ly.ln1_gain, ly.ln1_bias);
        std::vector<Tensor> heads;
        heads.reserve(cfg_.M);
        for (std::size_t m = 0; m < cfg_.M; ++m) {
            const Tensor q = matmul(a, ly.heads[m].w_q);
            const Tensor k = matmul(a, ly.heads[m].w_k);
            const Tensor v = matmul(a, ly.heads[m].w_v);
            Tensor scores = scale(matmul(q, transpose(k)), inv_sqrt_dh);
            if (cfg_.use_gse) scores = add(scores, enc.bias_heads[m]);
            for (double s : scores.data())
                if (std::isnan(s))
                    throw NumericError("attention logits NaN at layer " +
                                       std::to_string(layer + 1) + " head " +
                                       std::to_string(m + 1));
            const Tensor weights = softmax_lastdim(scores);
            if (att != nullptr) {
                auto& acc = att->at(recycle_iter, layer, m);
                const auto& w = weights.data();
                for (std::size_t i = 0; i < w.size(); ++i) acc[i] += w[i];
            }
            heads.push_back(matmul(weights, v));
        }
        Tensor attn = matmul(concat_lastdim(heads), ly.w_o);
        if (opt.training && cfg_.dropout_p > 0.0)
            attn = dropout(attn, cfg_.dropout_p, true, *opt.rng);
        const Tensor h1 = add(h, attn);

        const Tensor b = layer_norm(h1, ly.ln2_gain, ly.ln2_bias);
        Tensor ffn = gelu(add_rowvec(matmul(b, ly.ffn_w1), ly.ffn_b1));
        if (opt.training && cfg_.dropout_p > 0.0)
            ffn = dropout(ffn, cfg_.dropout_p, true, *opt.rng);
        ffn = add_rowvec(matmul(ffn, ly.ffn_w2), ly.ffn_b2);
        return add(h1, ffn);
    }

    // all L blocks once (one recycling iteration)
    Tensor run_stack(Tensor h, const Encodings& enc, const ForwardOptions& opt,
                     AttentionMaps* att, std::size_t recycle_iter) {
        for (std::size_t l = 0; l < cfg_.L; ++l)
            h = block(h, l, enc, opt, att, recycle_iter);
        return h;
    }

    Tensor readout(const Tensor& h) {
        using namespace numkit;
        const Tensor pooled = reshape(mean_axis(h, 0), {1, cfg_.d});
        return add_rowvec(matmul(pooled, p_head_w_), p_head_b_);
    }

    // encodings enter once, at iteration 1; later iterations feed the final
    // node states straight back into layer 1
    Tensor forward_segment(const std::vector<double>& segment,
                           const Encodings& enc, const ForwardOptions& opt,
                           AttentionMaps* att) {
        Tensor h = encode_nodes(input_norm(tokenize(segment)), enc);
        for (std::size_t r = 0; r < cfg_.R; ++r) {
            if (r > 0 && cfg_.recycle_detach) h = numkit::detach(h);
            h = run_stack(h, enc, opt, att, r);
        }
        if (att != nullptr) ++att->count;
        return readout(h); // [1 x n_classes]
    }

    // logits [batch x n_classes]
    Tensor forward(const std::vector<const std::vector<double>*>& segments,
                   const ForwardOptions& opt, AttentionMaps* att = nullptr) {
        if (segments.empty()) throw DataError("forward: empty batch");
        if (opt.training && cfg_.dropout_p > 0.0 && opt.rng == nullptr)
            throw ConfigError("forward: training with dropout needs an rng");
        if (att != nullptr && att->sums.empty())
            att->init(cfg_.R, cfg_.L, cfg_.M, n_tokens());
        const Encodings enc = compute_encodings();
        std::vector<Tensor> logits;
        logits.reserve(segments.size());
        for (const auto* seg : segments)
            logits.push_back(forward_segment(*seg, enc, opt, att));
        return numkit::concat_rows(logits);
    }

    Tensor forward(const eegsig::SegmentBatch& batch, const ForwardOptions& opt,
                   AttentionMaps* att = nullptr) {
        std::vector<const std::vector<double>*> ptrs;
        ptrs.reserve(batch.size());
        for (const auto& s : batch.segments) ptrs.push_back(&s);
        return forward(ptrs, opt, att);
    }

private:
    struct Head {
        Tensor w_q, w_k, w_v; // [d x d/M]
    };
    struct Layer {
        Tensor ln1_gain, ln1_bias;
        std::vector<Head> heads;
        Tensor w_o; // [d x d]
        Tensor ln2_gain, ln2_bias;
        Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
    };

    spatial::GaussianBasisBank basis_bank() const {
        return {p_gse_mu_, p_gse_sigma_, p_gse_alpha_, p_gse_beta_};
    }
    spatial::BiasProjection projection() const {
        return {p_proj_w1_, p_proj_b1_, p_proj_w2_, p_proj_b2_};
    }

    Tensor add_param(const std::string& name, Shape shape,
                     std::vector<double> data) {
        Tensor t = Tensor::leaf(std::move(shape), std::move(data), tape_);
        params_.push_back({name, t});
        return t;
    }

    Tensor xavier(const std::string& name, std::size_t fan_in,
                  std::size_t fan_out, Rng& rng) {
        const double limit =
            std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        std::vector<double> v(fan_in * fan_out);
        for (auto& x : v) x = rng.uniform(-limit, limit);
        return add_param(name, {fan_in, fan_out}, std::move(v));
    }

    Tensor zeros_param(const std::string& name, Shape shape) {
        std::vector<double> v(numkit::shape_numel(shape), 0.0);
        return add_param(name, std::move(shape), std::move(v));
    }

    Tensor ones_param(const std::string& name, Shape shape) {
        std::vector<double> v(numkit::shape_numel(shape), 1.0);
        return add_param(name, std::move(shape), std::move(v));
    }

    void build_parameters(Rng& rng) {
        const std::size_t n = layout_.size();
        const std::size_t width = token_width();
        p_gn_alpha_ = ones_param("graphnorm.alpha", {width});
        p_gn_gamma_ = ones_param("graphnorm.gamma", {width});
        p_gn_beta_ = zeros_param("graphnorm.beta", {width});
        p_w_x_ = xavier("embed.w_x", width, cfg_.d, rng);

        if (cfg_.use_inverted) {
            // spatial parameters exist regardless of ablation flags, so that
            // toggling a flag is numerically a zero-term ablation and never a
            // different initialization stream
            p_bre_table_ =
                xavier("bre.table", scheme_.n_regions(), cfg_.d, rng);
            p_w_e_ = xavier("centrality.w_e", cfg_.K, cfg_.d, rng);
            const double maxd = spatial::max_distance(layout_);
            auto bank =
                spatial::GaussianBasisBank::init(cfg_.K, n, maxd, tape_);
            p_gse_mu_ = bank.mu;
            p_gse_sigma_ = bank.sigma;
            p_gse_alpha_ = bank.alpha;
            p_gse_beta_ = bank.beta;
            params_.push_back({"gse.mu", p_gse_mu_});
            params_.push_back({"gse.sigma", p_gse_sigma_});
            params_.push_back({"gse.alpha", p_gse_alpha_});
            params_.push_back({"gse.beta", p_gse_beta_});
            p_proj_w1_ = xavier("gse.proj.w1", cfg_.K, cfg_.K, rng);
            p_proj_b1_ = zeros_param("gse.proj.b1", {cfg_.K});
            p_proj_w2_ = xavier("gse.proj.w2", cfg_.K, cfg_.M, rng);
            p_proj_b2_ = zeros_param("gse.proj.b2", {cfg_.M});
        }

        const std::size_t dh = cfg_.d / cfg_.M;
        layers_.resize(cfg_.L);
        for (std::size_t l = 0; l < cfg_.L; ++l) {
            const std::string p = "layer" + std::to_string(l + 1) + ".";
            Layer& ly = layers_[l];
            ly.ln1_gain = ones_param(p + "ln1.gain", {cfg_.d});
            ly.ln1_bias = zeros_param(p + "ln1.bias", {cfg_.d});
            ly.heads.resize(cfg_.M);
            for (std::size_t m = 0; m < cfg_.M; ++m) {
                const std::string hp = p + "head" + std::to_string(m + 1) + ".";
                ly.heads[m].w_q = xavier(hp + "w_q", cfg_.d, dh, rng);
                ly.heads[m].w_k = xavier(hp + "w_k", cfg_.d, dh, rng);
                ly.heads[m].w_v = xavier(hp + "w_v", cfg_.d, dh, rng);
            }
            ly.w_o = xavier(p + "w_o", cfg_.d, cfg_.d, rng);
            ly.ln2_gain = ones_param(p + "ln2.gain", {cfg_.d});
            ly.ln2_bias = zeros_param(p + "ln2.bias", {cfg_.d});
            ly.ffn_w1 =
                xavier(p + "ffn.w1", cfg_.d, cfg_.ffn_multiplier * cfg_.d, rng);
            ly.ffn_b1 = zeros_param(p + "ffn.b1", {cfg_.ffn_multiplier * cfg_.d});
            ly.ffn_w2 =
                xavier(p + "ffn.w2", cfg_.ffn_multiplier * cfg_.d, cfg_.d, rng);
            ly.ffn_b2 = zeros_param(p + "ffn.b2", {cfg_.d});
        }
        p_head_w_ = xavier("head.w", cfg_.d, cfg_.n_classes, rng);
        p_head_b_ = zeros_param("head.b", {cfg_.n_classes});
    }

    ModelConfig cfg_;
    spatial::ElectrodeLayout layout_;
    spatial::RegionScheme scheme_;
    std::vector<std::size_t> region_idx_;
    Tensor dist_;
    Tape tape_;
    std::vector<numkit::AdamW::NamedParam> params_;

    Tensor p_gn_alpha_, p_gn_gamma_, p_gn_beta_;
    Tensor p_w_x_;
    Tensor p_bre_table_, p_w_e_;
    Tensor p_gse_mu_, p_gse_sigma_, p_gse_alpha_, p_gse_beta_;
    Tensor p_proj_w1_, p_proj_b1_, p_proj_w2_, p_proj_b2_;
    std::vector<Layer> layers_;
    Tensor p_head_w_, p_head_b_;
};

// ---------------------------------------------------------------------------
// checkpoint format (.mvgt)
// ---------------------------------------------------------------------------

inline void save_checkpoint(const std::filesystem::path& path, MvgtModel& model,
                            const nlohmann::json& extra = {}) {
    nlohmann::json tensors = nlohmann::json::array();
    std::string blob;
    for (const auto& p : model.params()) {
        tensors.push_back({{"name", p.name},
                           {"shape", p.tensor.shape()},
                           {"offset", blob.size()}});
        for (double v : p.tensor.data()) {
            std::uint64_t u;
            std::memcpy(&u, &v, 8);
            eegsig::io::put_u64(blob, u);
        }
    }
    nlohmann::json header{{"config", model.config()},
                          {"layout", spatial::layout_to_json(model.layout())},
                          {"scheme", spatial::scheme_to_json(model.scheme())},
                          {"tensors", tensors}};
    if (!extra.is_null() && !extra.empty()) header["extra"] = extra;
    const std::string hs = header.dump();
    std::string out;
    out += "MVGT";
    eegsig::io::put_u32(out, static_cast<std::uint32_t>(hs.size()));
    out += hs;
    out += blob;
    eegsig::io::write_file(path, out);
}

struct LoadedModel {
    std::unique_ptr<MvgtModel> model;
    nlohmann::json extra;
};

inline LoadedModel load_checkpoint(const std::filesystem::path& path) {
    const std::string data = eegsig::io::read_file(path);
    eegsig::io::Reader r(data, path.string());
    if (r.bytes(4) != "MVGT") throw DataError(path.string() + ": bad magic");
    const std::uint32_t hlen = r.u32();
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(r.bytes(hlen));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path.string() + ": corrupt header: " + e.what());
    }
    const std::string blob = data.substr(8 + hlen);

    ModelConfig cfg = header.at("config").get<ModelConfig>();
    auto layout = spatial::layout_from_json(header.at("layout"));
    auto scheme = spatial::scheme_from_json(header.at("scheme"));
    LoadedModel lm;
    lm.model = std::make_unique<MvgtModel>(cfg, std::move(layout),
                                           std::move(scheme), 0);
    lm.extra = header.value("extra", nlohmann::json::object());

    for (const auto& entry : header.at("tensors")) {
        const auto name = entry.at("name").get<std::string>();
        const auto shape = entry.at("shape").get<Shape>();
        const auto offset = entry.at("offset").get<std::size_t>();
        Tensor t = lm.model->param(name);
        if (t.shape() != shape)
            throw DataError(path.string() + ": tensor '" + name +
                            "' has shape " + numkit::shape_str(shape) +
                            ", expected " + numkit::shape_str(t.shape()));
        const std::size_t bytes = t.numel() * 8;
        if (offset + bytes > blob.size())
            throw DataError(path.string() + ": tensor '" + name +
                            "' overruns parameter blob");
        for (std::size_t i = 0; i < t.numel(); ++i) {
            std::uint64_t u = 0;
            for (int b = 0; b < 8; ++b)
                u |= static_cast<std::uint64_t>(static_cast<unsigned char>(
                         blob[offset + i * 8 + b]))
                     << (8 * b);
            double v;
            std::memcpy(&v, &u, 8);
            t.data()[i] = v;
        }
    }
    return lm;
}

} // namespace mvgt::model
