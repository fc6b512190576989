#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "detlab/autodiff/parameter.hpp"
#include "detlab/autodiff/tensor.hpp"
#include "detlab/geometry.hpp"
#include "detlab/layers.hpp"

namespace detlab::model {

struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct ModelConfig {
    int image_size = 64;
    int patch_size = 8;
    int in_channels = 3;
    int hidden_dim = 64;  // C
    int embed_dim = 64;   // E
    int heads = 4;
    int encoder_layers = 2;
    int decoder_layers = 2;
    int ffn_dim = 128;
    int supplement_m = 5;  // M
    // Number of free query slots for the learnable-parameters strategy (0 = none).
    int learnable_queries = 0;
    // Stop ranking-head gradients at x_enc.
    bool detach_ranking_input = false;
    // Side of the per-token prior box, in grid cells.
    double proposal_prior_cells = 2.0;
    double ranking_bias_init = 1.0;
    // Sin/cos frequencies per anchor coordinate feeding the query positional map.
    int anchor_frequencies = 8;
    // Decoder class logits refine the selected proposal's logit instead of
    // starting from the focal prior.
    bool score_residual = true;

    void validate() const;
    int grid() const { return image_size / patch_size; }
    std::size_t tokens() const { return static_cast<std::size_t>(grid() * grid()); }
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

// Coarse per-token predictions of the encoder. The tensors stay attached to
// the graph for the auxiliary loss; the plain copies feed selection logic.
struct DenseProposals {
    ad::Tensor logits;  // [N x 1]
    ad::Tensor boxes;   // [N x 4] cxcywh
    std::vector<double> scores;
    std::vector<geom::Box> box_values;
};

struct EncoderOutput {
    ad::Tensor features;  // x_enc, [N x C] token-major
    DenseProposals proposals;
};

struct QuerySet {
    std::vector<geom::Box> anchors;
    ad::Tensor anchor_logits;  // [X x 4] inverse-sigmoid of the anchors
    ad::Tensor embeddings;     // [X x E]
    std::vector<std::size_t> token_indices;  // originating proposals; empty for free slots
    ad::Tensor score_offsets;  // [X x 1] detached proposal logit minus the focal prior; undefined for free slots

    std::size_t count() const { return anchors.size(); }
};

struct Detections {
    ad::Tensor logits;  // [X x 1]
    ad::Tensor boxes;   // [X x 4]
    std::vector<double> scores;
    std::vector<geom::Box> box_values;
};

double inverse_sigmoid(double p);

// Indices of the k highest scores; ties keep the lower index first.
std::vector<std::size_t> top_k_indices(const std::vector<double>& scores, std::size_t k);

// Desk-scale DETR: patch backbone, transformer encoder with dense proposals,
// ranking head, proposal- or slot-based queries, transformer decoder, heads.
// Token features are laid out token-major ([N x C]).
class Detector {
public:
    Detector(const ModelConfig& config, std::uint64_t seed);

    const ModelConfig& config() const { return config_; }
    ad::ParameterSet& parameters() { return params_; }
    const ad::ParameterSet& parameters() const { return params_; }

    // image [channels x H x W] -> x_bac [N x C]
    ad::Tensor backbone_forward(const ad::Tensor& image) const;
    EncoderOutput encoder_forward(const ad::Tensor& x_bac) const;
    // Scalar R >= 0.
    ad::Tensor ranking_head_forward(const ad::Tensor& x_enc) const;
    // Top-x proposals as anchors; x is clamped into [1, N] with a warning.
    QuerySet query_generate(const DenseProposals& proposals, std::size_t x) const;
    // Image-independent free slots (learnable-parameters strategy).
    QuerySet learnable_queries() const;
    ad::Tensor decoder_forward(const ad::Tensor& x_enc, const QuerySet& queries) const;
    // Output of every decoder layer, last one equal to decoder_forward.
    std::vector<ad::Tensor> decoder_forward_all(const ad::Tensor& x_enc, const QuerySet& queries) const;
    Detections detection_heads(const ad::Tensor& x_dec, const QuerySet& queries) const;

    // Patch-grid prior box of token t.
    geom::Box token_prior(std::size_t t) const;

private:
    struct EncoderLayer {
        MultiHeadAttention attn;
        LayerNorm norm1;
        FeedForward ffn;
        LayerNorm norm2;
    };
    struct DecoderLayer {
        MultiHeadAttention self_attn;
        LayerNorm norm1;
        MultiHeadAttention cross_attn;
        LayerNorm norm2;
        FeedForward ffn;
        LayerNorm norm3;
    };

    ad::Tensor patchify(const ad::Tensor& image) const;

    ModelConfig config_;
    ad::ParameterSet params_;

    Linear patch_proj_;
    ad::Tensor pos_embed_;
    std::vector<EncoderLayer> encoder_;
    Linear proposal_score_, proposal_box_;
    ad::Tensor prior_logits_;

    MultiHeadAttention rank_attn_;
    Linear rank_fc1_, rank_fc2_, rank_fc3_;

    Linear query_fc1_, query_fc2_;
    bool has_query_proj_ = false;
    Linear query_proj_;
    std::vector<double> anchor_freqs_;
    Linear query_pos_;
    ad::Tensor slot_anchor_logits_, slot_embed_;

    std::vector<DecoderLayer> decoder_;
    Linear score_head_;
    Linear box_fc1_, box_fc2_, box_fc3_;
};

}  // namespace detlab::model
