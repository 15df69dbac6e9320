// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>

#include "srm/core/error.hpp"

namespace srm::model {

using TokenId = std::uint32_t;

struct SpecialTokens {
    TokenId pad = 256;
    TokenId eos = 257;
    TokenId end = 258;  // sentence boundary; reward-model inputs only
};

struct BackboneConfig {
    std::size_t vocab_size = 259;  // 256 bytes + PAD, EOS, END
    std::size_t hidden_dim = 64;
    std::size_t layers = 2;
    std::size_t heads = 4;
    std::size_t max_len = 256;
    std::size_t ffn_mult = 4;
    double rope_base = 1000.0;

    std::size_t head_dim() const { return hidden_dim / heads; }

    void validate() const {
        require(vocab_size > 0, "vocab_size must be positive");
        require(heads > 0 && layers > 0 && max_len > 0, "heads, layers and max_len must be positive");
        require(hidden_dim % (2 * heads) == 0, "hidden_dim ", hidden_dim, " must be divisible by 2*heads (",
                2 * heads, ")");
        require(rope_base > 1.0, "rope_base must exceed 1");
    }

    friend bool operator==(const BackboneConfig&, const BackboneConfig&) = default;
};

}  // namespace srm::model
