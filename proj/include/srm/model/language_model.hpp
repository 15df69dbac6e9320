// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "srm/core/random.hpp"
#include "srm/model/transformer.hpp"
#include "srm/nn/graph.hpp"

namespace srm::model {

/// Causal LM used as actor, old actor and reference policy.
struct LanguageModel {
    BackboneConfig config;
    SpecialTokens specials;
    nn::ParameterStore params;
    Transformer net;

    LanguageModel() = default;

    LanguageModel(const BackboneConfig& cfg, const SpecialTokens& sp, std::uint64_t seed)
        : config(cfg), specials(sp) {
        require(sp.pad < cfg.vocab_size && sp.eos < cfg.vocab_size && sp.end < cfg.vocab_size,
                "special token ids must lie inside the vocabulary");
        Rng rng(seed);
        net = Transformer(cfg, params, "policy.", rng, true);
    }

    /// log pi(a_t | s_t) for every action, T x 1.
    nn::Var action_log_probs(nn::Graph& g, std::span<const TokenId> prompt, std::span<const TokenId> actions) const {
        require(!prompt.empty(), "empty prompt");
        require(!actions.empty(), "no actions to score");
        std::vector<TokenId> seq(prompt.begin(), prompt.end());
        seq.insert(seq.end(), actions.begin(), actions.end());
        // The last action never conditions anything, so it is not fed.
        seq.pop_back();
        nn::Var h = net.hidden(g, seq);
        std::vector<std::size_t> rows(actions.size());
        std::vector<std::size_t> cols(actions.size());
        for (std::size_t t = 0; t < actions.size(); ++t) {
            rows[t] = prompt.size() - 1 + t;
            cols[t] = actions[t];
        }
        nn::Var lp = g.log_softmax_rows(net.logits(g, g.gather_rows(h, std::move(rows))));
        return g.pick(lp, std::move(cols));
    }
};

/// Incremental decoder with a per-layer key/value cache. Mirrors
/// Transformer::hidden + logits exactly, without building a graph.
class DecodeSession {
public:
    DecodeSession(const Transformer& net, const nn::ParameterStore& params) : net_(&net), params_(&params) {
        require(net.has_lm_head(), "decode session needs a language-model head");
        caches_.resize(net.layers().size());
    }

    std::size_t length() const noexcept { return length_; }

    /// Feeds one token and returns the logits for the next position.
    std::vector<real> step(TokenId id) {
        const BackboneConfig& cfg = net_->config();
        require(id < cfg.vocab_size, "token id ", id, " outside vocabulary");
        require(length_ < cfg.max_len, "sequence exceeds max_len ", cfg.max_len);
        const std::size_t d = cfg.hidden_dim, dh = cfg.head_dim(), pos = length_;
        const auto& P = *params_;
        std::vector<real> x(P[net_->embed_index()].value.row_span(id).begin(),
                            P[net_->embed_index()].value.row_span(id).end());
        std::vector<real> h(d), q, k, v, attn(d), tmp;
        const real inv_sqrt = static_cast<real>(1.0 / std::sqrt(static_cast<double>(dh)));
        for (std::size_t l = 0; l < net_->layers().size(); ++l) {
            const auto& L = net_->layers()[l];
            layer_norm(x, P[L.ln1_g].value, P[L.ln1_b].value, h);
            vecmat(h, P[L.wq].value, q);
            vecmat(h, P[L.wk].value, k);
            vecmat(h, P[L.wv].value, v);
            for (std::size_t hd = 0; hd < cfg.heads; ++hd) {
                rotate(std::span<real>(q).subspan(hd * dh, dh), pos, cfg.rope_base);
                rotate(std::span<real>(k).subspan(hd * dh, dh), pos, cfg.rope_base);
            }
            Cache& c = caches_[l];
            c.keys.insert(c.keys.end(), k.begin(), k.end());
            c.values.insert(c.values.end(), v.begin(), v.end());
            const std::size_t n = pos + 1;
            std::vector<real> scores(n);
            for (std::size_t hd = 0; hd < cfg.heads; ++hd) {
                const real* qh = q.data() + hd * dh;
                real mx = -std::numeric_limits<real>::infinity();
                for (std::size_t j = 0; j < n; ++j) {
                    const real* kj = c.keys.data() + j * d + hd * dh;
                    real s = 0;
                    for (std::size_t e = 0; e < dh; ++e) s += qh[e] * kj[e];
                    scores[j] = s * inv_sqrt;
                    mx = std::max(mx, scores[j]);
                }
                real z = 0;
                for (std::size_t j = 0; j < n; ++j) z += std::exp(scores[j] - mx);
                for (std::size_t e = 0; e < dh; ++e) attn[hd * dh + e] = 0;
                for (std::size_t j = 0; j < n; ++j) {
                    const real a = std::exp(scores[j] - mx) / z;
                    const real* vj = c.values.data() + j * d + hd * dh;
                    for (std::size_t e = 0; e < dh; ++e) attn[hd * dh + e] += a * vj[e];
                }
            }
            vecmat(attn, P[L.wo].value, tmp);
            for (std::size_t e = 0; e < d; ++e) x[e] += tmp[e];
            layer_norm(x, P[L.ln2_g].value, P[L.ln2_b].value, h);
            std::vector<real> ff;
            vecmat(h, P[L.w1].value, ff);
            const auto& b1 = P[L.b1].value;
            for (std::size_t e = 0; e < ff.size(); ++e) ff[e] = nn::gelu_tanh(ff[e] + b1[e]);
            vecmat(ff, P[L.w2].value, tmp);
            const auto& b2 = P[L.b2].value;
            for (std::size_t e = 0; e < d; ++e) x[e] += tmp[e] + b2[e];
        }
        layer_norm(x, P[net_->final_gain_index()].value, P[net_->final_bias_index()].value, h);
        std::vector<real> logits;
        vecmat(h, P[net_->lm_head_index()].value, logits);
        ++length_;
        return logits;
    }

private:
    struct Cache {
        std::vector<real> keys;    // rotated, pos-major, d wide
        std::vector<real> values;
    };

    static void vecmat(const std::vector<real>& x, const nn::Tensor& w, std::vector<real>& out) {
        out.assign(w.cols(), real(0));
        for (std::size_t i = 0; i < w.rows(); ++i) {
            const real xv = x[i];
            if (xv == real(0)) continue;
            const real* row = &w(i, 0);
            for (std::size_t j = 0; j < w.cols(); ++j) out[j] += xv * row[j];
        }
    }

    static void layer_norm(const std::vector<real>& x, const nn::Tensor& g, const nn::Tensor& b,
                           std::vector<real>& out) {
        const std::size_t d = x.size();
        real mu = 0;
        for (real v : x) mu += v;
        mu /= static_cast<real>(d);
        real var = 0;
        for (real v : x) var += (v - mu) * (v - mu);
        var /= static_cast<real>(d);
        const real rstd = real(1) / std::sqrt(var + real(1e-5));
        out.resize(d);
        for (std::size_t j = 0; j < d; ++j) out[j] = (x[j] - mu) * rstd * g[j] + b[j];
    }

    static void rotate(std::span<real> v, std::size_t pos, double base) {
        for (std::size_t t = 0; t < v.size() / 2; ++t) {
            const double ang = nn::rope_angle(pos, t, v.size(), base);
            const real c = static_cast<real>(std::cos(ang)), s = static_cast<real>(std::sin(ang));
            const real x0 = v[2 * t], x1 = v[2 * t + 1];
            v[2 * t] = x0 * c - x1 * s;
            v[2 * t + 1] = x0 * s + x1 * c;
        }
    }

    const Transformer* net_;
    const nn::ParameterStore* params_;
    std::vector<Cache> caches_;
    std::size_t length_ = 0;
};

inline std::vector<double> log_softmax(std::span<const real> logits) {
    const real mx = *std::max_element(logits.begin(), logits.end());
    double z = 0;
    for (real v : logits) z += std::exp(double(v - mx));
    const double lz = double(mx) + std::log(z);
    std::vector<double> out(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) out[i] = double(logits[i]) - lz;
    return out;
}

/// log pi(a_t | s_t) under `model` without building a graph.
inline std::vector<double> action_log_probs(const LanguageModel& model, std::span<const TokenId> prompt,
                                            std::span<const TokenId> actions) {
    require(!prompt.empty(), "empty prompt");
    DecodeSession s(model.net, model.params);
    std::vector<real> logits;
    for (TokenId t : prompt) logits = s.step(t);
    std::vector<double> out;
    out.reserve(actions.size());
    for (std::size_t i = 0; i < actions.size(); ++i) {
        out.push_back(log_softmax(logits)[actions[i]]);
        if (i + 1 < actions.size()) logits = s.step(actions[i]);
    }
    return out;
}

struct GenerationConfig {
    double temperature = 1.0;
    std::size_t top_k = 0;  // 0 disables
    double top_p = 1.0;
    std::size_t max_new_tokens = 64;
    std::uint64_t seed = 0;

    void validate() const {
        require(temperature >= 0.0, "temperature must be >= 0");
        require(top_p > 0.0 && top_p <= 1.0, "top_p must lie in (0, 1]");
        require(max_new_tokens >= 1, "max_new_tokens must be >= 1");
    }

    /// Best-of-N candidate sampling defaults.
    static GenerationConfig best_of_n_defaults() { return {0.6, 50, 0.9, 64, 0}; }
};

struct SampleResult {
    std::vector<TokenId> tokens;      // includes the terminating EOS when sampled
    std::vector<double> log_probs;    // untempered log pi(a_t | s_t)
    bool eos = false;
};

/// Samples one continuation. PAD and END are never emitted, and EOS is
/// barred at the first step so every response carries at least one token.
inline SampleResult sample_response(const LanguageModel& policy, std::span<const TokenId> prompt,
                                    const GenerationConfig& gen) {
    gen.validate();
    require(!prompt.empty(), "sample_response: empty prompt");
    const BackboneConfig& cfg = policy.config;
    require(prompt.size() < cfg.max_len, "prompt leaves no room to generate");
    Rng rng(gen.seed);
    DecodeSession s(policy.net, policy.params);
    std::vector<real> logits;
    for (TokenId t : prompt) logits = s.step(t);

    SampleResult out;
    std::vector<std::size_t> order(cfg.vocab_size);
    std::vector<double> probs(cfg.vocab_size);
    for (std::size_t step = 0; step < gen.max_new_tokens; ++step) {
        auto allowed = [&](std::size_t id) {
            if (id == policy.specials.pad || id == policy.specials.end) return false;
            return !(step == 0 && id == policy.specials.eos);
        };
        std::size_t choice = 0;
        if (gen.temperature == 0.0) {
            double best = -std::numeric_limits<double>::infinity();
            for (std::size_t id = 0; id < cfg.vocab_size; ++id)
                if (allowed(id) && logits[id] > best) {
                    best = logits[id];
                    choice = id;
                }
        } else {
            order.clear();
            for (std::size_t id = 0; id < cfg.vocab_size; ++id)
                if (allowed(id)) order.push_back(id);
            std::stable_sort(order.begin(), order.end(),
                             [&](std::size_t a, std::size_t b) { return logits[a] > logits[b]; });
            if (gen.top_k > 0 && order.size() > gen.top_k) order.resize(gen.top_k);
            const double mx = logits[order.front()] / gen.temperature;
            double z = 0;
            for (std::size_t i = 0; i < order.size(); ++i) {
                probs[i] = std::exp(logits[order[i]] / gen.temperature - mx);
                z += probs[i];
            }
            std::size_t keep = order.size();
            if (gen.top_p < 1.0) {
                double cum = 0;
                for (std::size_t i = 0; i < order.size(); ++i) {
                    cum += probs[i] / z;
                    if (cum >= gen.top_p) {
                        keep = i + 1;
                        break;
                    }
                }
            }
            double zk = 0;
            for (std::size_t i = 0; i < keep; ++i) zk += probs[i];
            double u = rng.uniform() * zk;
            choice = order[keep - 1];
            for (std::size_t i = 0; i < keep; ++i) {
                u -= probs[i];
                if (u < 0) {
                    choice = order[i];
                    break;
                }
            }
        }
        const auto lp = log_softmax(logits);
        out.tokens.push_back(static_cast<TokenId>(choice));
        out.log_probs.push_back(lp[choice]);
        if (choice == policy.specials.eos) {
            out.eos = true;
            break;
        }
        if (s.length() >= cfg.max_len) break;
        if (step + 1 < gen.max_new_tokens) logits = s.step(static_cast<TokenId>(choice));
    }
    return out;
}

}  // namespace srm::model
