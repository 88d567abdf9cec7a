#pragma once

// Encoder-decoder and weight-predictor handles, image-token fusion, and the
// desk-scale toy implementations of both networks.

#include <atomic>
#include <memory>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctrlcic/core.hpp"

namespace ctrlcic::modeling {

/// Token symbol table shared by a model and its weight predictor. Symbols are
/// case-folded; ids 0..4 are reserved for pad/unk/bos/eos/separator.
class Vocabulary {
public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;
    static constexpr int kBos = 2;
    static constexpr int kEos = 3;
    static constexpr int kSep = 4;

    Vocabulary() = default;
    Vocabulary(std::vector<std::string> symbols);

    /// Most frequent tokens of `texts` (ties broken alphabetically) up to
    /// `limit` symbols including the reserved ones.
    static Vocabulary build(const std::vector<std::string>& texts, const std::string& separator, std::size_t limit);

    std::size_t size() const { return symbols_.size(); }
    const std::vector<std::string>& symbols() const { return symbols_; }
    const std::string& separator() const { return symbols_.at(kSep); }
    const core::Tokenizer& tokenizer() const { return *tokenizer_; }

    int id(std::string_view token) const;
    const std::string& symbol(int id) const { return symbols_.at(static_cast<std::size_t>(id)); }

    std::vector<int> encode(std::string_view text) const;
    std::vector<int> encode(std::span<const core::Token> tokens) const;

    /// Joins symbols with spaces; punctuation attaches to the previous symbol.
    /// pad/bos/eos are dropped.
    std::string decode(std::span<const int> ids) const;

private:
    std::vector<std::string> symbols_;
    std::unordered_map<std::string, int> index_;
    std::shared_ptr<core::WordPunctTokenizer> tokenizer_;
};

/// Named parameter tensors. Order is fixed by the owning model.
struct ParamSet {
    std::vector<std::string> names;
    std::vector<Matrix> values;

    std::size_t size() const { return values.size(); }
    std::size_t scalar_count() const;
    ParamSet zeros_like() const;
    void set_zero();

    nlohmann::json to_json() const;
    static ParamSet from_json(const nlohmann::json& j);
};

struct DecodeParams {
    enum class Strategy { Greedy, Beam, Sample };
    Strategy strategy = Strategy::Greedy;
    std::size_t beam_width = 4;
    std::size_t max_length = 128;  // includes any forced prefix tokens
    std::uint64_t seed = 0;
};

/// Abstract encoder-decoder session. One in-flight call per instance.
class EncoderDecoder {
public:
    virtual ~EncoderDecoder() = default;

    virtual const Vocabulary& vocab() const = 0;
    virtual std::size_t model_dim() const = 0;
    virtual std::size_t image_dim() const = 0;
    virtual std::string id() const = 0;

    /// Token embedding rows (N x d).
    virtual Matrix embed(std::span<const int> ids) const = 0;

    /// Image-to-embedding projection (d_img x d); nullptr when identity.
    virtual const Matrix* image_projection() const = 0;

    /// Encoder states for a fused embedding matrix ((N+1) x d).
    virtual Matrix encode(const Matrix& embeddings) const = 0;

    /// Token ids after any forced prefix; the forced prefix is copied into
    /// the returned sequence verbatim. bos/eos are not included.
    virtual std::vector<int> generate(const Matrix& states, std::span<const int> forced_prefix,
                                      const DecodeParams& params) const = 0;
};

class WeightPredictor {
public:
    virtual ~WeightPredictor() = default;

    /// One weight per context token, each strictly inside (0, 1).
    virtual std::vector<double> predict(std::span<const int> ids) const = 0;
    virtual const Vocabulary& vocab() const = 0;
};

/// Prepends the (projected) image feature as row 0. Throws DimensionMismatch
/// when d_img != d and no projection is given.
Matrix fuse_image_token(const Vector& image, const Matrix& text_embeddings, const Matrix* projection);

struct TrainExample {
    std::vector<int> input_ids;
    Vector image;
    std::vector<double> token_weights;  // empty = all ones
    std::vector<int> target_ids;        // without bos, ending in eos
};

struct ToyModelShape {
    std::size_t model_dim = 32;
    std::size_t hidden_dim = 64;
    std::size_t image_dim = 64;
    std::size_t max_output = 192;
};

/// Single-attention encoder-decoder:
///   X = [image W_img ; w_i * E_enc[x_i]],  H = X + tanh(X W_e + b_e)
///   decoder step t reads D_t = E_dec[u_t] + P[t] and attends jointly over
///   encoder states and decoder rows 0..t, then z = tanh([D_t, c_t] W_1 + b_1)
///   and logits = z W_o + b_o.
class ToyModel final : public EncoderDecoder {
public:
    ToyModel(Vocabulary vocab, ToyModelShape shape, std::uint64_t seed);
    ToyModel(Vocabulary vocab, ToyModelShape shape, ParamSet params);

    const Vocabulary& vocab() const override { return vocab_; }
    std::size_t model_dim() const override { return shape_.model_dim; }
    std::size_t image_dim() const override { return shape_.image_dim; }
    std::string id() const override { return "toy-attn-v1"; }
    const ToyModelShape& shape() const { return shape_; }

    Matrix embed(std::span<const int> ids) const override;
    const Matrix* image_projection() const override;
    Matrix encode(const Matrix& embeddings) const override;
    std::vector<int> generate(const Matrix& states, std::span<const int> forced_prefix,
                              const DecodeParams& params) const override;

    /// Mean token cross-entropy; accumulates into `grads` when non-null.
    double loss(const TrainExample& example, ParamSet* grads) const;

    ParamSet& params() { return params_; }
    const ParamSet& params() const { return params_; }

private:
    Vector next_logits(const Matrix& enc_keys, const Matrix& enc_values, std::span<const int> decoder_inputs) const;

    Vocabulary vocab_;
    ToyModelShape shape_;
    ParamSet params_;
    bool has_projection_ = false;
};

/// Local-window token encoder followed by a linear layer and a sigmoid.
class ToyWeightPredictor final : public WeightPredictor {
public:
    ToyWeightPredictor(Vocabulary vocab, std::size_t dim, std::size_t hidden, std::uint64_t seed);
    ToyWeightPredictor(Vocabulary vocab, ParamSet params);

    std::vector<double> predict(std::span<const int> ids) const override;
    const Vocabulary& vocab() const override { return vocab_; }

    /// Mean binary cross-entropy against soft targets in [0, 1].
    double loss(std::span<const int> ids, std::span<const double> targets, ParamSet* grads) const;

    ParamSet& params() { return params_; }
    const ParamSet& params() const { return params_; }

private:
    Vocabulary vocab_;
    ParamSet params_;
};

/// Guards the one-in-flight-call contract of a model session. Concurrent
/// acquisition is a programming error and throws ModelFailure.
class SessionGuard {
public:
    explicit SessionGuard(std::atomic<bool>& busy);
    ~SessionGuard();
    SessionGuard(const SessionGuard&) = delete;
    SessionGuard& operator=(const SessionGuard&) = delete;

private:
    std::atomic<bool>& busy_;
};

}  // namespace ctrlcic::modeling
