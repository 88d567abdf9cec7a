#include "ctrlcic/embedding.hpp"

#include <charconv>

#include <fmt/format.h>

namespace ctrlcic::modeling {

Matrix EmbeddingProvider::encode_text(std::string_view text) const {
    const auto tokens = core::default_tokenizer().segment(text);
    return encode_tokens(tokens);
}

HashEmbeddingProvider::HashEmbeddingProvider(std::size_t dim, bool one_hot) : dim_(dim), one_hot_(one_hot) {
    if (dim_ == 0) throw Error(Errc::DimensionMismatch, "embedding dimension must be positive");
}

std::string HashEmbeddingProvider::id() const {
    return fmt::format("hash-{}-{}", one_hot_ ? "onehot" : "dense", dim_);
}

Vector HashEmbeddingProvider::token_vector(std::string_view token) const {
    const std::string key = core::fold_case(token);
    if (one_hot_) {
        Vector v = Vector::Zero(static_cast<Eigen::Index>(dim_));
        v[static_cast<Eigen::Index>(core::fnv1a64(key) % dim_)] = 1.0;
        return v;
    }
    return core::hashed_unit_vector("tok:" + key, dim_);
}

Matrix HashEmbeddingProvider::encode_tokens(std::span<const core::Token> tokens) const {
    Matrix out(static_cast<Eigen::Index>(tokens.size()), static_cast<Eigen::Index>(dim_));
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        out.row(static_cast<Eigen::Index>(i)) = token_vector(tokens[i].text).transpose();
    }
    return out;
}

Vector HashEmbeddingProvider::encode_sentence(std::string_view text) const {
    const Matrix rows = encode_text(text);
    if (rows.rows() == 0) throw Error(Errc::EmptyCaption, "cannot embed empty text");
    Vector mean = rows.colwise().mean().transpose();
    const double norm = mean.norm();
    if (norm < 1e-12) throw Error(Errc::DegenerateEmbedding, "sentence embedding has zero norm");
    return mean / norm;
}

std::unique_ptr<EmbeddingProvider> make_provider(std::string_view id) {
    auto parse = [&](std::string_view prefix, bool one_hot) -> std::unique_ptr<EmbeddingProvider> {
        if (id.substr(0, prefix.size()) != prefix) return nullptr;
        const auto digits = id.substr(prefix.size());
        std::size_t dim = 0;
        const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), dim);
        if (ec != std::errc{} || ptr != digits.data() + digits.size() || dim == 0) return nullptr;
        return std::make_unique<HashEmbeddingProvider>(dim, one_hot);
    };
    if (auto p = parse("hash-onehot-", true)) return p;
    if (auto p = parse("hash-dense-", false)) return p;
    throw Error(Errc::DataFormatError, fmt::format("unknown embedding provider '{}'", id));
}

}  // namespace ctrlcic::modeling
