// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "srm/core/random.hpp"
#include "srm/model/config.hpp"
#include "srm/nn/graph.hpp"
#include "srm/nn/parameters.hpp"

namespace srm::model {

/// Pre-LayerNorm causal transformer with rotary self-attention.
///
/// The object only records where its weights live inside a ParameterStore
/// owned by the enclosing model, so copies of the model stay consistent.
class Transformer {
public:
    static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();

    struct Layer {
        std::size_t ln1_g, ln1_b, wq, wk, wv, wo, ln2_g, ln2_b, w1, b1, w2, b2;
    };

    Transformer() = default;

    Transformer(const BackboneConfig& cfg, nn::ParameterStore& store, const std::string& prefix, Rng& rng,
                bool lm_head)
        : cfg_(cfg) {
        cfg.validate();
        const std::size_t d = cfg.hidden_dim, f = cfg.ffn_mult * d;
        const double proj_std = 1.0 / std::sqrt(static_cast<double>(d));
        const double resid_std = proj_std / std::sqrt(2.0 * static_cast<double>(cfg.layers));
        auto ones = [](std::size_t n) { return nn::Tensor::matrix(1, n, real(1)); };
        auto zeros = [](std::size_t r, std::size_t c) { return nn::Tensor::matrix(r, c); };

        embed_ = store.add(prefix + "embed", nn::Tensor::randn(cfg.vocab_size, d, rng, 0.5));
        for (std::size_t l = 0; l < cfg.layers; ++l) {
            const std::string p = prefix + "layer" + std::to_string(l) + ".";
            Layer L{};
            L.ln1_g = store.add(p + "ln1.gain", ones(d));
            L.ln1_b = store.add(p + "ln1.bias", zeros(1, d));
            L.wq = store.add(p + "attn.wq", nn::Tensor::randn(d, d, rng, proj_std));
            L.wk = store.add(p + "attn.wk", nn::Tensor::randn(d, d, rng, proj_std));
            L.wv = store.add(p + "attn.wv", nn::Tensor::randn(d, d, rng, proj_std));
            L.wo = store.add(p + "attn.wo", nn::Tensor::randn(d, d, rng, resid_std));
            L.ln2_g = store.add(p + "ln2.gain", ones(d));
            L.ln2_b = store.add(p + "ln2.bias", zeros(1, d));
            L.w1 = store.add(p + "ffn.w1", nn::Tensor::randn(d, f, rng, proj_std));
            L.b1 = store.add(p + "ffn.b1", zeros(1, f));
            L.w2 = store.add(p + "ffn.w2", nn::Tensor::randn(f, d, rng, resid_std / 2.0));
            L.b2 = store.add(p + "ffn.b2", zeros(1, d));
            layers_.push_back(L);
        }
        lnf_g_ = store.add(prefix + "lnf.gain", ones(d));
        lnf_b_ = store.add(prefix + "lnf.bias", zeros(1, d));
        if (lm_head) lm_head_ = store.add(prefix + "lm_head", nn::Tensor::randn(d, cfg.vocab_size, rng, proj_std));
    }

    const BackboneConfig& config() const noexcept { return cfg_; }
    bool has_lm_head() const noexcept { return lm_head_ != npos; }
    const std::vector<Layer>& layers() const noexcept { return layers_; }
    std::size_t embed_index() const noexcept { return embed_; }
    std::size_t final_gain_index() const noexcept { return lnf_g_; }
    std::size_t final_bias_index() const noexcept { return lnf_b_; }
    std::size_t lm_head_index() const noexcept { return lm_head_; }

    /// Per-position hidden states, T x d. Row t depends on tokens 0..t only.
    nn::Var hidden(nn::Graph& g, std::span<const TokenId> ids) const {
        require(!ids.empty(), "forward_hidden on an empty sequence");
        require(ids.size() <= cfg_.max_len, "sequence of ", ids.size(), " tokens exceeds max_len ", cfg_.max_len);
        std::vector<std::size_t> rows(ids.begin(), ids.end());
        for (auto r : rows) require(r < cfg_.vocab_size, "token id ", r, " outside vocabulary of ", cfg_.vocab_size);
        std::vector<std::size_t> positions(ids.size());
        for (std::size_t t = 0; t < positions.size(); ++t) positions[t] = t;

        const std::size_t dh = cfg_.head_dim();
        const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
        nn::Var x = g.embedding(g.param(embed_), rows);
        for (const Layer& L : layers_) {
            nn::Var h = g.layer_norm(x, g.param(L.ln1_g), g.param(L.ln1_b));
            nn::Var q = g.matmul(h, g.param(L.wq));
            nn::Var k = g.matmul(h, g.param(L.wk));
            nn::Var v = g.matmul(h, g.param(L.wv));
            std::vector<nn::Var> heads;
            for (std::size_t hd = 0; hd < cfg_.heads; ++hd) {
                nn::Var qh = g.rope(g.slice_cols(q, hd * dh, dh), positions, cfg_.rope_base);
                nn::Var kh = g.rope(g.slice_cols(k, hd * dh, dh), positions, cfg_.rope_base);
                nn::Var vh = g.slice_cols(v, hd * dh, dh);
                nn::Var scores = g.scale(g.matmul(qh, g.transpose(kh)), inv_sqrt);
                heads.push_back(g.matmul(g.causal_softmax_rows(scores), vh));
            }
            nn::Var attn = heads.size() == 1 ? heads.front() : g.concat_cols(heads);
            x = g.add(x, g.matmul(attn, g.param(L.wo)));
            nn::Var h2 = g.layer_norm(x, g.param(L.ln2_g), g.param(L.ln2_b));
            nn::Var ff = g.gelu(g.add_row(g.matmul(h2, g.param(L.w1)), g.param(L.b1)));
            x = g.add(x, g.add_row(g.matmul(ff, g.param(L.w2)), g.param(L.b2)));
        }
        return g.layer_norm(x, g.param(lnf_g_), g.param(lnf_b_));
    }

    /// Next-token logits per position, T x vocab.
    nn::Var logits(nn::Graph& g, nn::Var hidden) const {
        require(has_lm_head(), "this backbone was built without a language-model head");
        return g.matmul(hidden, g.param(lm_head_));
    }

private:
    BackboneConfig cfg_;
    std::size_t embed_ = npos;
    std::vector<Layer> layers_;
    std::size_t lnf_g_ = npos;
    std::size_t lnf_b_ = npos;
    std::size_t lm_head_ = npos;
};

}  // namespace srm::model
