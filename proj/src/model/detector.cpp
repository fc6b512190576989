#include "detlab/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <spdlog/spdlog.h>

#include "detlab/autodiff/ops.hpp"

namespace detlab::model {

namespace {
constexpr double kAnchorEps = 1e-6;
// Initial foreground probability 0.01 of both classifiers.
const double kFocalPriorLogit = -std::log((1.0 - 0.01) / 0.01);
}

void ModelConfig::validate() const {
    auto positive = [](int v, const char* name) {
        if (v <= 0) throw ConfigError(std::string(name) + " must be positive");
    };
    positive(image_size, "image_size");
    positive(patch_size, "patch_size");
    positive(in_channels, "in_channels");
    positive(hidden_dim, "hidden_dim");
    positive(embed_dim, "embed_dim");
    positive(heads, "heads");
    positive(encoder_layers, "encoder_layers");
    positive(decoder_layers, "decoder_layers");
    positive(ffn_dim, "ffn_dim");
    if (image_size % patch_size != 0) throw ConfigError("image_size must be divisible by patch_size");
    if (hidden_dim % heads != 0) throw ConfigError("hidden_dim must be divisible by heads");
    if (supplement_m < 0) throw ConfigError("supplement_m must be >= 0");
    if (learnable_queries < 0) throw ConfigError("learnable_queries must be >= 0");
    if (anchor_frequencies < 1) throw ConfigError("anchor_frequencies must be >= 1");
    if (!(proposal_prior_cells > 0.0)) throw ConfigError("proposal_prior_cells must be positive");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = {{"image_size", c.image_size},
         {"patch_size", c.patch_size},
         {"in_channels", c.in_channels},
         {"hidden_dim", c.hidden_dim},
         {"embed_dim", c.embed_dim},
         {"heads", c.heads},
         {"encoder_layers", c.encoder_layers},
         {"decoder_layers", c.decoder_layers},
         {"ffn_dim", c.ffn_dim},
         {"supplement_m", c.supplement_m},
         {"learnable_queries", c.learnable_queries},
         {"detach_ranking_input", c.detach_ranking_input},
         {"proposal_prior_cells", c.proposal_prior_cells},
         {"ranking_bias_init", c.ranking_bias_init},
         {"anchor_frequencies", c.anchor_frequencies},
         {"score_residual", c.score_residual}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
    ModelConfig d;
    c.image_size = j.value("image_size", d.image_size);
    c.patch_size = j.value("patch_size", d.patch_size);
    c.in_channels = j.value("in_channels", d.in_channels);
    c.hidden_dim = j.value("hidden_dim", d.hidden_dim);
    c.embed_dim = j.value("embed_dim", d.embed_dim);
    c.heads = j.value("heads", d.heads);
    c.encoder_layers = j.value("encoder_layers", d.encoder_layers);
    c.decoder_layers = j.value("decoder_layers", d.decoder_layers);
    c.ffn_dim = j.value("ffn_dim", d.ffn_dim);
    c.supplement_m = j.value("supplement_m", d.supplement_m);
    c.learnable_queries = j.value("learnable_queries", d.learnable_queries);
    c.detach_ranking_input = j.value("detach_ranking_input", d.detach_ranking_input);
    c.proposal_prior_cells = j.value("proposal_prior_cells", d.proposal_prior_cells);
    c.ranking_bias_init = j.value("ranking_bias_init", d.ranking_bias_init);
    c.anchor_frequencies = j.value("anchor_frequencies", d.anchor_frequencies);
    c.score_residual = j.value("score_residual", d.score_residual);
}

double inverse_sigmoid(double p) {
    p = std::clamp(p, kAnchorEps, 1.0 - kAnchorEps);
    return std::log(p / (1.0 - p));
}

std::vector<std::size_t> top_k_indices(const std::vector<double>& scores, std::size_t k) {
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    k = std::min(k, idx.size());
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    idx.resize(k);
    return idx;
}

Detector::Detector(const ModelConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    Rng rng = Rng::stream(seed, "init");
    const auto C = static_cast<std::size_t>(config_.hidden_dim);
    const auto E = static_cast<std::size_t>(config_.embed_dim);
    const auto H = static_cast<std::size_t>(config_.heads);
    const auto F = static_cast<std::size_t>(config_.ffn_dim);
    const std::size_t N = config_.tokens();
    const auto patch_dim = static_cast<std::size_t>(config_.in_channels * config_.patch_size * config_.patch_size);

    patch_proj_ = Linear::create(params_, "backbone.proj", patch_dim, C, rng);
    pos_embed_ = params_.add_uniform("backbone.pos_embed", {N, C}, C, rng);

    for (int l = 0; l < config_.encoder_layers; ++l) {
        const std::string p = "encoder." + std::to_string(l);
        encoder_.push_back({MultiHeadAttention::create(params_, p + ".attn", C, H, rng),
                            LayerNorm::create(params_, p + ".norm1", C),
                            FeedForward::create(params_, p + ".ffn", C, F, rng),
                            LayerNorm::create(params_, p + ".norm2", C)});
    }
    proposal_score_ = Linear::create(params_, "encoder.proposal.score", C, 1, rng);
    // Low initial foreground prior keeps focal loss stable at start.
    std::fill(proposal_score_.bias.mutable_data().begin(), proposal_score_.bias.mutable_data().end(),
              kFocalPriorLogit);
    proposal_box_ = Linear::create(params_, "encoder.proposal.box", C, 4, rng);
    {
        std::vector<double> prior(N * 4);
        for (std::size_t t = 0; t < N; ++t) {
            const geom::Box b = token_prior(t);
            prior[t * 4] = inverse_sigmoid(b.cx);
            prior[t * 4 + 1] = inverse_sigmoid(b.cy);
            prior[t * 4 + 2] = inverse_sigmoid(b.w);
            prior[t * 4 + 3] = inverse_sigmoid(b.h);
        }
        prior_logits_ = ad::Tensor({N, 4}, std::move(prior));
    }

    rank_attn_ = MultiHeadAttention::create(params_, "ranking.attn", C, H, rng);
    rank_fc1_ = Linear::create(params_, "ranking.fc1", C, C, rng);
    rank_fc2_ = Linear::create(params_, "ranking.fc2", C, C, rng);
    rank_fc3_ = Linear::create(params_, "ranking.fc3", C, 1, rng);
    rank_fc3_.bias.mutable_data()[0] = config_.ranking_bias_init;

    query_fc1_ = Linear::create(params_, "query.fc1", 4, E, rng);
    query_fc2_ = Linear::create(params_, "query.fc2", E, E, rng);
    if (E != C) {
        has_query_proj_ = true;
        query_proj_ = Linear::create(params_, "query.proj", E, C, rng);
    }
    // Geometric frequencies from half a cycle to 16 cycles across the image.
    const auto nf = static_cast<std::size_t>(config_.anchor_frequencies);
    for (std::size_t k = 0; k < nf; ++k) {
        anchor_freqs_.push_back(nf == 1 ? 1.0 : 0.5 * std::pow(32.0, static_cast<double>(k) / static_cast<double>(nf - 1)));
    }
    query_pos_ = Linear::create(params_, "query.pos", 4 * 2 * nf, C, rng);
    if (config_.learnable_queries > 0) {
        const auto K = static_cast<std::size_t>(config_.learnable_queries);
        std::vector<double> anchors(K * 4);
        for (std::size_t k = 0; k < K; ++k) {
            anchors[k * 4] = inverse_sigmoid(rng.uniform(0.05, 0.95));
            anchors[k * 4 + 1] = inverse_sigmoid(rng.uniform(0.05, 0.95));
            anchors[k * 4 + 2] = inverse_sigmoid(config_.proposal_prior_cells / config_.grid());
            anchors[k * 4 + 3] = inverse_sigmoid(config_.proposal_prior_cells / config_.grid());
        }
        slot_anchor_logits_ = params_.add("query.slots.anchor_logits", ad::Tensor({K, 4}, std::move(anchors)));
        slot_embed_ = params_.add_uniform("query.slots.embed", {K, E}, E, rng);
    }

    for (int l = 0; l < config_.decoder_layers; ++l) {
        const std::string p = "decoder." + std::to_string(l);
        decoder_.push_back({MultiHeadAttention::create(params_, p + ".self_attn", C, H, rng),
                            LayerNorm::create(params_, p + ".norm1", C),
                            MultiHeadAttention::create(params_, p + ".cross_attn", C, H, rng),
                            LayerNorm::create(params_, p + ".norm2", C),
                            FeedForward::create(params_, p + ".ffn", C, F, rng),
                            LayerNorm::create(params_, p + ".norm3", C)});
    }
    score_head_ = Linear::create(params_, "head.score", C, 1, rng);
    std::fill(score_head_.bias.mutable_data().begin(), score_head_.bias.mutable_data().end(), kFocalPriorLogit);
    box_fc1_ = Linear::create(params_, "head.box.fc1", C, C, rng);
    box_fc2_ = Linear::create(params_, "head.box.fc2", C, C, rng);
    box_fc3_ = Linear::create(params_, "head.box.fc3", C, 4, rng);
    // Refinement starts as the identity on anchors.
    std::fill(box_fc3_.weight.mutable_data().begin(), box_fc3_.weight.mutable_data().end(), 0.0);
    std::fill(box_fc3_.bias.mutable_data().begin(), box_fc3_.bias.mutable_data().end(), 0.0);
}

geom::Box Detector::token_prior(std::size_t t) const {
    const auto g = static_cast<std::size_t>(config_.grid());
    const double cell = 1.0 / static_cast<double>(g);
    const double side = std::min(config_.proposal_prior_cells * cell, 1.0 - kAnchorEps);
    return {(static_cast<double>(t % g) + 0.5) * cell, (static_cast<double>(t / g) + 0.5) * cell, side, side};
}

ad::Tensor Detector::patchify(const ad::Tensor& image) const {
    const auto ch = static_cast<std::size_t>(config_.in_channels);
    const auto size = static_cast<std::size_t>(config_.image_size);
    if (image.shape() != ad::Shape{ch, size, size}) {
        throw ConfigError("backbone expects image " + ad::shape_str({ch, size, size}) + ", got " +
                          ad::shape_str(image.shape()));
    }
    const auto p = static_cast<std::size_t>(config_.patch_size);
    const auto g = static_cast<std::size_t>(config_.grid());
    const std::size_t patch_dim = ch * p * p;
    std::vector<double> out(g * g * patch_dim);
    const auto px = image.data();
    for (std::size_t gy = 0; gy < g; ++gy) {
        for (std::size_t gx = 0; gx < g; ++gx) {
            double* dst = out.data() + (gy * g + gx) * patch_dim;
            for (std::size_t c = 0; c < ch; ++c) {
                for (std::size_t dy = 0; dy < p; ++dy) {
                    for (std::size_t dx = 0; dx < p; ++dx) {
                        dst[(c * p + dy) * p + dx] = px[(c * size + gy * p + dy) * size + gx * p + dx];
                    }
                }
            }
        }
    }
    return ad::Tensor({g * g, patch_dim}, std::move(out));
}

ad::Tensor Detector::backbone_forward(const ad::Tensor& image) const {
    return ad::add(patch_proj_(patchify(image)), pos_embed_);
}

EncoderOutput Detector::encoder_forward(const ad::Tensor& x_bac) const {
    ad::Tensor x = x_bac;
    for (const auto& layer : encoder_) {
        x = layer.norm1(ad::add(x, layer.attn(x, x, x)));
        x = layer.norm2(ad::add(x, layer.ffn(x)));
    }
    EncoderOutput out;
    out.features = x;
    auto& p = out.proposals;
    p.logits = proposal_score_(x);
    p.boxes = ad::sigmoid(ad::add(proposal_box_(x), prior_logits_));
    const std::size_t n = x.rows();
    p.scores.resize(n);
    p.box_values.resize(n);
    for (std::size_t t = 0; t < n; ++t) {
        p.scores[t] = 1.0 / (1.0 + std::exp(-p.logits[t]));
        p.box_values[t] = {p.boxes[t * 4], p.boxes[t * 4 + 1], p.boxes[t * 4 + 2], p.boxes[t * 4 + 3]};
    }
    return out;
}

ad::Tensor Detector::ranking_head_forward(const ad::Tensor& x_enc) const {
    const ad::Tensor feats = config_.detach_ranking_input ? x_enc.detach() : x_enc;
    const ad::Tensor query = ad::mean(feats, 0);
    const ad::Tensor pooled = rank_attn_(query, feats, feats);
    ad::Tensor h = ad::relu(rank_fc1_(pooled));
    h = ad::relu(rank_fc2_(h));
    return ad::relu(rank_fc3_(h));
}

QuerySet Detector::query_generate(const DenseProposals& proposals, std::size_t x) const {
    const std::size_t n = proposals.scores.size();
    if (x < 1 || x > n) {
        const std::size_t clamped = std::clamp<std::size_t>(x, 1, n);
        spdlog::warn("query count {} outside [1, {}]; using {}", x, n, clamped);
        x = clamped;
    }
    QuerySet q;
    q.token_indices = top_k_indices(proposals.scores, x);
    std::vector<double> coords(x * 4), logits(x * 4), offsets(x);
    for (std::size_t i = 0; i < x; ++i) {
        const geom::Box b = proposals.box_values[q.token_indices[i]];
        offsets[i] = inverse_sigmoid(proposals.scores[q.token_indices[i]]) - kFocalPriorLogit;
        q.anchors.push_back(b);
        const double v[4] = {b.cx, b.cy, b.w, b.h};
        for (int k = 0; k < 4; ++k) {
            coords[i * 4 + k] = v[k];
            logits[i * 4 + k] = inverse_sigmoid(v[k]);
        }
    }
    q.anchor_logits = ad::Tensor({x, 4}, std::move(logits));
    q.score_offsets = ad::Tensor({x, 1}, std::move(offsets));
    q.embeddings = query_fc2_(ad::relu(query_fc1_(ad::Tensor({x, 4}, std::move(coords)))));
    return q;
}

QuerySet Detector::learnable_queries() const {
    if (!slot_embed_.defined()) throw ConfigError("model was built without learnable query slots");
    QuerySet q;
    q.anchor_logits = slot_anchor_logits_;
    q.embeddings = slot_embed_;
    const std::size_t k = slot_embed_.rows();
    for (std::size_t i = 0; i < k; ++i) {
        auto s = [&](int c) { return 1.0 / (1.0 + std::exp(-slot_anchor_logits_[i * 4 + c])); };
        q.anchors.push_back({s(0), s(1), s(2), s(3)});
    }
    return q;
}

ad::Tensor Detector::decoder_forward(const ad::Tensor& x_enc, const QuerySet& queries) const {
    return decoder_forward_all(x_enc, queries).back();
}

std::vector<ad::Tensor> Detector::decoder_forward_all(const ad::Tensor& x_enc, const QuerySet& queries) const {
    std::vector<ad::Tensor> outputs;
    ad::Tensor tgt = has_query_proj_ ? query_proj_(queries.embeddings) : queries.embeddings;
    const ad::Tensor pos = query_pos_(ad::sine_embedding(ad::sigmoid(queries.anchor_logits), anchor_freqs_));
    for (const auto& layer : decoder_) {
        const ad::Tensor q = ad::add(tgt, pos);
        tgt = layer.norm1(ad::add(tgt, layer.self_attn(q, q, tgt)));
        tgt = layer.norm2(ad::add(tgt, layer.cross_attn(ad::add(tgt, pos), x_enc, x_enc)));
        tgt = layer.norm3(ad::add(tgt, layer.ffn(tgt)));
        outputs.push_back(tgt);
    }
    return outputs;
}

Detections Detector::detection_heads(const ad::Tensor& x_dec, const QuerySet& queries) const {
    Detections d;
    d.logits = score_head_(x_dec);
    if (config_.score_residual && queries.score_offsets.defined()) d.logits = ad::add(d.logits, queries.score_offsets);
    const ad::Tensor delta = box_fc3_(ad::relu(box_fc2_(ad::relu(box_fc1_(x_dec)))));
    d.boxes = ad::sigmoid(ad::add(queries.anchor_logits, delta));
    const std::size_t n = x_dec.rows();
    d.scores.resize(n);
    d.box_values.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        d.scores[i] = 1.0 / (1.0 + std::exp(-d.logits[i]));
        d.box_values[i] = {d.boxes[i * 4], d.boxes[i * 4 + 1], d.boxes[i * 4 + 2], d.boxes[i * 4 + 3]};
    }
    return d;
}

}  // namespace detlab::model
