#pragma once

#include <memory>
#include <span>
#include <string>
#include <string_view>

#include "ctrlcic/core.hpp"

namespace ctrlcic::modeling {

/// Token- and sentence-level text encoder. Implementations must be
/// deterministic and safe for concurrent read-only use.
class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;

    virtual std::string id() const = 0;
    virtual std::size_t dim() const = 0;

    /// One row per token.
    virtual Matrix encode_tokens(std::span<const core::Token> tokens) const = 0;

    /// Tokenizes with the provider's own tokenizer, then encode_tokens().
    Matrix encode_text(std::string_view text) const;

    virtual Vector encode_sentence(std::string_view text) const = 0;
};

/// Context-free lexical embeddings: each case-folded token maps to a fixed
/// vector derived from its hash. In one-hot mode the vector is a single unit
/// coordinate (bucket = hash mod dim), so identical tokens have cosine 1 and
/// distinct tokens cosine 0 barring bucket collisions.
class HashEmbeddingProvider final : public EmbeddingProvider {
public:
    HashEmbeddingProvider(std::size_t dim, bool one_hot);

    std::string id() const override;
    std::size_t dim() const override { return dim_; }
    Matrix encode_tokens(std::span<const core::Token> tokens) const override;
    Vector encode_sentence(std::string_view text) const override;

    Vector token_vector(std::string_view token) const;

private:
    std::size_t dim_;
    bool one_hot_;
};

/// Builds a provider from its id string ("hash-onehot-4096", "hash-dense-64").
std::unique_ptr<EmbeddingProvider> make_provider(std::string_view id);

}  // namespace ctrlcic::modeling
