#include "ctrlcic/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>

#include <fmt/format.h>

namespace ctrlcic::modeling {

// ---------------------------------------------------------------------------
// Vocabulary

namespace {

bool is_attaching_punct(const std::string& s) {
    static const std::string kAttach = ".,;:!?)]}%'\"";
    return s.size() == 1 && kAttach.find(s[0]) != std::string::npos;
}

}  // namespace

Vocabulary::Vocabulary(std::vector<std::string> symbols) : symbols_(std::move(symbols)) {
    if (symbols_.size() <= static_cast<std::size_t>(kSep)) {
        throw Error(Errc::DataFormatError, "vocabulary is missing reserved symbols");
    }
    for (std::size_t i = 0; i < symbols_.size(); ++i) {
        index_.emplace(core::fold_case(symbols_[i]), static_cast<int>(i));
    }
    tokenizer_ = std::make_shared<core::WordPunctTokenizer>(std::vector<std::string>{symbols_[kSep]});
}

Vocabulary Vocabulary::build(const std::vector<std::string>& texts, const std::string& separator,
                             std::size_t limit) {
    const core::WordPunctTokenizer tokenizer({separator});
    const std::string folded_sep = core::fold_case(separator);
    std::map<std::string, std::size_t> counts;
    for (const auto& text : texts) {
        for (const auto& tok : tokenizer.segment(text)) {
            std::string key = core::fold_case(tok.text);
            if (key == folded_sep) continue;
            ++counts[key];
        }
    }
    std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    std::vector<std::string> symbols{"<pad>", "<unk>", "<bos>", "<eos>", separator};
    for (const auto& [symbol, count] : ranked) {
        if (symbols.size() >= limit) break;
        if (symbol == "<pad>" || symbol == "<unk>" || symbol == "<bos>" || symbol == "<eos>") continue;
        symbols.push_back(symbol);
    }
    return Vocabulary(std::move(symbols));
}

int Vocabulary::id(std::string_view token) const {
    auto it = index_.find(core::fold_case(token));
    return it == index_.end() ? kUnk : it->second;
}

std::vector<int> Vocabulary::encode(std::span<const core::Token> tokens) const {
    std::vector<int> ids;
    ids.reserve(tokens.size());
    for (const auto& t : tokens) ids.push_back(id(t.text));
    return ids;
}

std::vector<int> Vocabulary::encode(std::string_view text) const {
    return encode(tokenizer_->segment(text));
}

std::string Vocabulary::decode(std::span<const int> ids) const {
    std::string out;
    for (int id : ids) {
        if (id == kPad || id == kBos || id == kEos) continue;
        const std::string& s = symbol(id);
        if (!out.empty() && !is_attaching_punct(s)) out.push_back(' ');
        out += s;
    }
    return out;
}

// ---------------------------------------------------------------------------
// ParamSet

std::size_t ParamSet::scalar_count() const {
    std::size_t n = 0;
    for (const auto& m : values) n += static_cast<std::size_t>(m.size());
    return n;
}

ParamSet ParamSet::zeros_like() const {
    ParamSet out;
    out.names = names;
    out.values.reserve(values.size());
    for (const auto& m : values) out.values.push_back(Matrix::Zero(m.rows(), m.cols()));
    return out;
}

void ParamSet::set_zero() {
    for (auto& m : values) m.setZero();
}

nlohmann::json ParamSet::to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (std::size_t i = 0; i < values.size(); ++i) {
        const Matrix& m = values[i];
        std::vector<double> data(static_cast<std::size_t>(m.size()));
        // Row-major on disk.
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c)
                data[static_cast<std::size_t>(r * m.cols() + c)] = m(r, c);
        arr.push_back({{"name", names[i]}, {"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}});
    }
    return arr;
}

ParamSet ParamSet::from_json(const nlohmann::json& j) {
    ParamSet out;
    for (const auto& item : j) {
        const auto rows = item.at("rows").get<Eigen::Index>();
        const auto cols = item.at("cols").get<Eigen::Index>();
        const auto data = item.at("data").get<std::vector<double>>();
        if (static_cast<Eigen::Index>(data.size()) != rows * cols) {
            throw Error(Errc::DataFormatError, "parameter tensor size mismatch");
        }
        Matrix m(rows, cols);
        for (Eigen::Index r = 0; r < rows; ++r)
            for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data[static_cast<std::size_t>(r * cols + c)];
        out.names.push_back(item.at("name").get<std::string>());
        out.values.push_back(std::move(m));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Fusion

Matrix fuse_image_token(const Vector& image, const Matrix& text_embeddings, const Matrix* projection) {
    const Eigen::Index d = text_embeddings.cols();
    Vector row;
    if (projection != nullptr) {
        if (projection->rows() != image.size() || projection->cols() != d) {
            throw Error(Errc::DimensionMismatch, fmt::format("projection is {}x{}, expected {}x{}",
                                                             projection->rows(), projection->cols(), image.size(), d));
        }
        row = projection->transpose() * image;
    } else {
        if (image.size() != d) {
            throw Error(Errc::DimensionMismatch,
                        fmt::format("image dim {} != model dim {} and no projection configured", image.size(), d));
        }
        row = image;
    }
    Matrix fused(text_embeddings.rows() + 1, d);
    fused.row(0) = row.transpose();
    fused.bottomRows(text_embeddings.rows()) = text_embeddings;
    return fused;
}

// ---------------------------------------------------------------------------
// ToyModel

namespace {

enum ToyParam : std::size_t {
    kEncEmb, kImgProj, kWe, kBe, kDecEmb, kDecPos, kWq, kWke, kWve, kWkd, kWvd, kW1, kB1, kWo, kBo, kToyParamCount
};

const char* const kToyNames[] = {"enc_emb", "img_proj", "enc_w", "enc_b", "dec_emb", "dec_pos", "w_q", "w_k_enc",
                                 "w_v_enc", "w_k_dec", "w_v_dec", "w_1",   "b_1",     "w_o",     "b_o"};

Matrix gaussian(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double stddev) {
    std::normal_distribution<double> normal(0.0, stddev);
    Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = normal(rng);
    return m;
}

void softmax_row_inplace(Eigen::Ref<Eigen::RowVectorXd> row) {
    const double mx = row.maxCoeff();
    row = (row.array() - mx).exp();
    row /= row.sum();
}

}  // namespace

ToyModel::ToyModel(Vocabulary vocab, ToyModelShape shape, std::uint64_t seed)
    : vocab_(std::move(vocab)), shape_(shape), has_projection_(shape.image_dim != shape.model_dim) {
    std::mt19937_64 rng(seed);
    const auto V = static_cast<Eigen::Index>(vocab_.size());
    const auto d = static_cast<Eigen::Index>(shape_.model_dim);
    const auto h = static_cast<Eigen::Index>(shape_.hidden_dim);
    const auto di = static_cast<Eigen::Index>(shape_.image_dim);
    const auto T = static_cast<Eigen::Index>(shape_.max_output + 1);
    const double sd = 1.0 / std::sqrt(static_cast<double>(d));

    params_.names.assign(std::begin(kToyNames), std::end(kToyNames));
    params_.values.resize(kToyParamCount);
    params_.values[kEncEmb] = gaussian(rng, V, d, 1.0);
    params_.values[kImgProj] = has_projection_ ? gaussian(rng, di, d, 1.0) : Matrix(0, 0);
    params_.values[kWe] = gaussian(rng, d, d, sd);
    params_.values[kBe] = Matrix::Zero(1, d);
    params_.values[kDecEmb] = gaussian(rng, V, d, 1.0);
    params_.values[kDecPos] = gaussian(rng, T, d, 0.5);
    params_.values[kWq] = gaussian(rng, d, d, sd);
    params_.values[kWke] = gaussian(rng, d, d, sd);
    params_.values[kWve] = gaussian(rng, d, d, sd);
    params_.values[kWkd] = gaussian(rng, d, d, sd);
    params_.values[kWvd] = gaussian(rng, d, d, sd);
    params_.values[kW1] = gaussian(rng, 2 * d, h, 1.0 / std::sqrt(2.0 * static_cast<double>(d)));
    params_.values[kB1] = Matrix::Zero(1, h);
    params_.values[kWo] = gaussian(rng, h, V, 1.0 / std::sqrt(static_cast<double>(h)));
    params_.values[kBo] = Matrix::Zero(1, V);
}

ToyModel::ToyModel(Vocabulary vocab, ToyModelShape shape, ParamSet params)
    : vocab_(std::move(vocab)), shape_(shape), params_(std::move(params)),
      has_projection_(shape.image_dim != shape.model_dim) {
    if (params_.size() != kToyParamCount) throw Error(Errc::DataFormatError, "toy model parameter count mismatch");
    const auto V = static_cast<Eigen::Index>(vocab_.size());
    const auto d = static_cast<Eigen::Index>(shape_.model_dim);
    if (params_.values[kEncEmb].rows() != V || params_.values[kEncEmb].cols() != d ||
        params_.values[kWo].cols() != V || params_.values[kDecPos].rows() < 2) {
        throw Error(Errc::DataFormatError, "toy model parameter shapes do not match vocabulary/shape");
    }
}

Matrix ToyModel::embed(std::span<const int> ids) const {
    const Matrix& E = params_.values[kEncEmb];
    Matrix out(static_cast<Eigen::Index>(ids.size()), E.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = E.row(ids[i]);
    return out;
}

const Matrix* ToyModel::image_projection() const {
    return has_projection_ ? &params_.values[kImgProj] : nullptr;
}

Matrix ToyModel::encode(const Matrix& X) const {
    if (X.cols() != static_cast<Eigen::Index>(shape_.model_dim)) {
        throw Error(Errc::ShapeMismatch, "embedding width does not match model dim");
    }
    const Matrix A = (X * params_.values[kWe]).rowwise() + params_.values[kBe].row(0);
    return X + A.array().tanh().matrix();
}

Vector ToyModel::next_logits(const Matrix& enc_keys, const Matrix& enc_values,
                             std::span<const int> decoder_inputs) const {
    const auto& P = params_.values;
    const auto t_count = static_cast<Eigen::Index>(decoder_inputs.size());
    const auto d = static_cast<Eigen::Index>(shape_.model_dim);
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    Matrix D(t_count, d);
    for (Eigen::Index t = 0; t < t_count; ++t) {
        D.row(t) = P[kDecEmb].row(decoder_inputs[static_cast<std::size_t>(t)]) + P[kDecPos].row(t);
    }
    const Eigen::RowVectorXd q = D.row(t_count - 1) * P[kWq];
    const Matrix Kd = D * P[kWkd];
    const Matrix Vd = D * P[kWvd];
    const Eigen::Index M = enc_keys.rows();
    Eigen::RowVectorXd scores(M + t_count);
    scores.head(M) = (enc_keys * q.transpose()).transpose() * scale;
    scores.tail(t_count) = (Kd * q.transpose()).transpose() * scale;
    softmax_row_inplace(scores);
    const Eigen::RowVectorXd c = scores.head(M) * enc_values + scores.tail(t_count) * Vd;
    Eigen::RowVectorXd g(2 * d);
    g << D.row(t_count - 1), c;
    const Eigen::RowVectorXd z = ((g * P[kW1]) + P[kB1].row(0)).array().tanh().matrix();
    return ((z * P[kWo]) + P[kBo].row(0)).transpose();
}

std::vector<int> ToyModel::generate(const Matrix& states, std::span<const int> forced_prefix,
                                    const DecodeParams& params) const {
    const auto& P = params_.values;
    const Matrix Ke = states * P[kWke];
    const Matrix Ve = states * P[kWve];
    const std::size_t max_len = std::min(params.max_length, shape_.max_output);
    if (forced_prefix.size() > max_len) {
        throw Error(Errc::BudgetExceeded,
                    fmt::format("forced prefix of {} tokens exceeds output budget {}", forced_prefix.size(), max_len));
    }
    for (int id : forced_prefix) {
        if (id < 0 || static_cast<std::size_t>(id) >= vocab_.size()) {
            throw Error(Errc::ModelFailure, fmt::format("forced token id {} outside vocabulary", id));
        }
    }

    auto log_softmax = [](const Vector& logits) {
        const double mx = logits.maxCoeff();
        const double lse = mx + std::log((logits.array() - mx).exp().sum());
        return Vector(logits.array() - lse);
    };

    if (params.strategy != DecodeParams::Strategy::Beam || params.beam_width <= 1) {
        std::mt19937_64 rng(params.seed);
        std::vector<int> inputs{Vocabulary::kBos};
        std::vector<int> out(forced_prefix.begin(), forced_prefix.end());
        inputs.insert(inputs.end(), forced_prefix.begin(), forced_prefix.end());
        while (out.size() < max_len) {
            Vector logits = next_logits(Ke, Ve, inputs);
            logits[Vocabulary::kPad] = -std::numeric_limits<double>::infinity();
            logits[Vocabulary::kBos] = -std::numeric_limits<double>::infinity();
            int next = 0;
            if (params.strategy == DecodeParams::Strategy::Sample) {
                const Vector probs = log_softmax(logits).array().exp();
                std::discrete_distribution<int> dist(probs.data(), probs.data() + probs.size());
                next = dist(rng);
            } else {
                logits.maxCoeff(&next);
            }
            if (next == Vocabulary::kEos) break;
            out.push_back(next);
            inputs.push_back(next);
        }
        return out;
    }

    struct Hypothesis {
        std::vector<int> tokens;  // generated after bos, including forced prefix
        double score = 0.0;
        bool finished = false;
    };
    std::vector<Hypothesis> beams{{{forced_prefix.begin(), forced_prefix.end()}, 0.0, false}};
    while (true) {
        std::vector<Hypothesis> candidates;
        bool any_open = false;
        for (const auto& hyp : beams) {
            if (hyp.finished || hyp.tokens.size() >= max_len) {
                candidates.push_back({hyp.tokens, hyp.score, true});
                continue;
            }
            any_open = true;
            std::vector<int> inputs{Vocabulary::kBos};
            inputs.insert(inputs.end(), hyp.tokens.begin(), hyp.tokens.end());
            Vector lp = log_softmax(next_logits(Ke, Ve, inputs));
            lp[Vocabulary::kPad] = -std::numeric_limits<double>::infinity();
            lp[Vocabulary::kBos] = -std::numeric_limits<double>::infinity();
            std::vector<int> order(static_cast<std::size_t>(lp.size()));
            for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
            const std::size_t keep = std::min(params.beam_width, order.size());
            std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(),
                              [&](int a, int b) { return lp[a] > lp[b] || (lp[a] == lp[b] && a < b); });
            for (std::size_t k = 0; k < keep; ++k) {
                Hypothesis next{hyp.tokens, hyp.score + lp[order[k]], order[k] == Vocabulary::kEos};
                if (!next.finished) next.tokens.push_back(order[k]);
                candidates.push_back(std::move(next));
            }
        }
        std::stable_sort(candidates.begin(), candidates.end(),
                         [](const Hypothesis& a, const Hypothesis& b) { return a.score > b.score; });
        if (candidates.size() > params.beam_width) candidates.resize(params.beam_width);
        beams = std::move(candidates);
        if (!any_open) break;
    }
    return beams.front().tokens;
}

double ToyModel::loss(const TrainExample& ex, ParamSet* grads) const {
    const auto& P = params_.values;
    const auto d = static_cast<Eigen::Index>(shape_.model_dim);
    const auto V = static_cast<Eigen::Index>(vocab_.size());
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    const auto N = static_cast<Eigen::Index>(ex.input_ids.size());
    const auto T = static_cast<Eigen::Index>(ex.target_ids.size());
    if (T == 0) throw Error(Errc::DataFormatError, "empty target sequence");
    if (static_cast<std::size_t>(T) > shape_.max_output) {
        throw Error(Errc::BudgetExceeded, fmt::format("target of {} tokens exceeds model limit", T));
    }
    if (!ex.token_weights.empty() && static_cast<Eigen::Index>(ex.token_weights.size()) != N) {
        throw Error(Errc::ShapeMismatch, "token weights do not match input length");
    }
    auto weight = [&](Eigen::Index i) { return ex.token_weights.empty() ? 1.0 : ex.token_weights[i]; };

    // Encoder.
    Matrix text(N, d);
    for (Eigen::Index i = 0; i < N; ++i) text.row(i) = weight(i) * P[kEncEmb].row(ex.input_ids[i]);
    const Matrix X = fuse_image_token(ex.image, text, image_projection());
    const Eigen::Index M = X.rows();
    const Matrix Th = ((X * P[kWe]).rowwise() + P[kBe].row(0)).array().tanh().matrix();
    const Matrix H = X + Th;

    // Decoder (teacher forcing): inputs are bos followed by targets[0..T-2].
    std::vector<int> inputs(static_cast<std::size_t>(T));
    inputs[0] = Vocabulary::kBos;
    for (Eigen::Index t = 1; t < T; ++t) inputs[t] = ex.target_ids[t - 1];
    Matrix D(T, d);
    for (Eigen::Index t = 0; t < T; ++t) D.row(t) = P[kDecEmb].row(inputs[t]) + P[kDecPos].row(t);

    const Matrix Q = D * P[kWq];
    const Matrix Ke = H * P[kWke];
    const Matrix Ve = H * P[kWve];
    const Matrix Kd = D * P[kWkd];
    const Matrix Vd = D * P[kWvd];

    Matrix Pe = (Q * Ke.transpose()) * scale;
    Matrix Pd = (Q * Kd.transpose()) * scale;
    for (Eigen::Index t = 0; t < T; ++t) {
        for (Eigen::Index j = t + 1; j < T; ++j) Pd(t, j) = -std::numeric_limits<double>::infinity();
        const double mx = std::max(Pe.row(t).maxCoeff(), Pd.row(t).head(t + 1).maxCoeff());
        Pe.row(t) = (Pe.row(t).array() - mx).exp();
        Pd.row(t) = (Pd.row(t).array() - mx).exp();
        const double sum = Pe.row(t).sum() + Pd.row(t).sum();
        Pe.row(t) /= sum;
        Pd.row(t) /= sum;
    }
    const Matrix C = Pe * Ve + Pd * Vd;
    Matrix G(T, 2 * d);
    G << D, C;
    const Matrix Z = ((G * P[kW1]).rowwise() + P[kB1].row(0)).array().tanh().matrix();
    Matrix Lg = (Z * P[kWo]).rowwise() + P[kBo].row(0);

    double total = 0.0;
    Matrix dL(T, V);
    for (Eigen::Index t = 0; t < T; ++t) {
        const double mx = Lg.row(t).maxCoeff();
        Eigen::RowVectorXd e = (Lg.row(t).array() - mx).exp();
        const double sum = e.sum();
        const int y = ex.target_ids[t];
        total += -(Lg(t, y) - mx - std::log(sum));
        dL.row(t) = e / sum;
        dL(t, y) -= 1.0;
    }
    const double loss_value = total / static_cast<double>(T);
    if (grads == nullptr) return loss_value;

    auto& g = grads->values;
    dL /= static_cast<double>(T);
    g[kWo] += Z.transpose() * dL;
    g[kBo] += dL.colwise().sum();
    const Matrix dPre = ((dL * P[kWo].transpose()).array() * (1.0 - Z.array().square())).matrix();
    g[kW1] += G.transpose() * dPre;
    g[kB1] += dPre.colwise().sum();
    const Matrix dG = dPre * P[kW1].transpose();
    Matrix dD = dG.leftCols(d);
    const Matrix dC = dG.rightCols(d);

    const Matrix dPe = dC * Ve.transpose();
    const Matrix dPd = dC * Vd.transpose();
    const Matrix dVe = Pe.transpose() * dC;
    const Matrix dVd = Pd.transpose() * dC;
    const Eigen::VectorXd r =
        (Pe.array() * dPe.array()).rowwise().sum() + (Pd.array() * dPd.array()).rowwise().sum();
    const Matrix dSe = (Pe.array() * (dPe.colwise() - r).array()).matrix();
    const Matrix dSd = (Pd.array() * (dPd.colwise() - r).array()).matrix();

    const Matrix dQ = (dSe * Ke + dSd * Kd) * scale;
    const Matrix dKe = (dSe.transpose() * Q) * scale;
    const Matrix dKd = (dSd.transpose() * Q) * scale;

    g[kWq] += D.transpose() * dQ;
    dD += dQ * P[kWq].transpose();
    g[kWkd] += D.transpose() * dKd;
    dD += dKd * P[kWkd].transpose();
    g[kWvd] += D.transpose() * dVd;
    dD += dVd * P[kWvd].transpose();
    g[kWke] += H.transpose() * dKe;
    g[kWve] += H.transpose() * dVe;
    const Matrix dH = dKe * P[kWke].transpose() + dVe * P[kWve].transpose();

    for (Eigen::Index t = 0; t < T; ++t) {
        g[kDecEmb].row(inputs[t]) += dD.row(t);
        g[kDecPos].row(t) += dD.row(t);
    }

    const Matrix dA = (dH.array() * (1.0 - Th.array().square())).matrix();
    g[kWe] += X.transpose() * dA;
    g[kBe] += dA.colwise().sum();
    const Matrix dX = dH + dA * P[kWe].transpose();
    if (has_projection_) g[kImgProj] += ex.image * dX.row(0);
    for (Eigen::Index i = 0; i < N; ++i) g[kEncEmb].row(ex.input_ids[i]) += weight(i) * dX.row(i + 1);
    (void)M;
    return loss_value;
}

// ---------------------------------------------------------------------------
// ToyWeightPredictor

namespace {
enum PredParam : std::size_t { kPEmb, kPLeft, kPCenter, kPRight, kPBias, kPOut, kPOutBias, kPredParamCount };
const char* const kPredNames[] = {"emb", "w_left", "w_center", "w_right", "b", "w_out", "b_out"};

double sigmoid(double x) {
    return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}
}  // namespace

ToyWeightPredictor::ToyWeightPredictor(Vocabulary vocab, std::size_t dim, std::size_t hidden, std::uint64_t seed)
    : vocab_(std::move(vocab)) {
    std::mt19937_64 rng(seed);
    const auto V = static_cast<Eigen::Index>(vocab_.size());
    const auto d = static_cast<Eigen::Index>(dim);
    const auto h = static_cast<Eigen::Index>(hidden);
    const double sd = 1.0 / std::sqrt(static_cast<double>(d));
    params_.names.assign(std::begin(kPredNames), std::end(kPredNames));
    params_.values.resize(kPredParamCount);
    params_.values[kPEmb] = gaussian(rng, V, d, 1.0);
    params_.values[kPLeft] = gaussian(rng, d, h, sd);
    params_.values[kPCenter] = gaussian(rng, d, h, sd);
    params_.values[kPRight] = gaussian(rng, d, h, sd);
    params_.values[kPBias] = Matrix::Zero(1, h);
    params_.values[kPOut] = gaussian(rng, h, 1, 1.0 / std::sqrt(static_cast<double>(h)));
    params_.values[kPOutBias] = Matrix::Zero(1, 1);
}

ToyWeightPredictor::ToyWeightPredictor(Vocabulary vocab, ParamSet params)
    : vocab_(std::move(vocab)), params_(std::move(params)) {
    if (params_.size() != kPredParamCount ||
        params_.values[kPEmb].rows() != static_cast<Eigen::Index>(vocab_.size())) {
        throw Error(Errc::DataFormatError, "weight predictor parameters do not match vocabulary");
    }
}

namespace {

struct PredictorForward {
    Matrix E;   // N x d token embeddings
    Matrix Hh;  // N x h hidden
    Vector out;
};

PredictorForward predictor_forward(const ParamSet& params, std::span<const int> ids) {
    const auto& P = params.values;
    const auto N = static_cast<Eigen::Index>(ids.size());
    PredictorForward f;
    f.E.resize(N, P[kPEmb].cols());
    for (Eigen::Index i = 0; i < N; ++i) f.E.row(i) = P[kPEmb].row(ids[static_cast<std::size_t>(i)]);
    Matrix pre = (f.E * P[kPCenter]).rowwise() + P[kPBias].row(0);
    if (N > 1) {
        pre.bottomRows(N - 1) += f.E.topRows(N - 1) * P[kPLeft];
        pre.topRows(N - 1) += f.E.bottomRows(N - 1) * P[kPRight];
    }
    f.Hh = pre.array().tanh().matrix();
    f.out = (f.Hh * P[kPOut]).col(0).array() + P[kPOutBias](0, 0);
    return f;
}

}  // namespace

std::vector<double> ToyWeightPredictor::predict(std::span<const int> ids) const {
    const auto f = predictor_forward(params_, ids);
    std::vector<double> out(ids.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        // Clamp so the open-interval contract survives saturation.
        out[i] = std::clamp(sigmoid(f.out[static_cast<Eigen::Index>(i)]), 1e-12, 1.0 - 1e-12);
    }
    return out;
}

double ToyWeightPredictor::loss(std::span<const int> ids, std::span<const double> targets, ParamSet* grads) const {
    if (ids.size() != targets.size()) throw Error(Errc::ShapeMismatch, "targets do not match token count");
    if (ids.empty()) return 0.0;
    const auto f = predictor_forward(params_, ids);
    const auto N = static_cast<Eigen::Index>(ids.size());
    double total = 0.0;
    Vector dlogit(N);
    for (Eigen::Index i = 0; i < N; ++i) {
        const double x = f.out[i];
        const double t = targets[static_cast<std::size_t>(i)];
        // Stable BCE with logits: max(x,0) - x t + log(1 + exp(-|x|)).
        total += std::max(x, 0.0) - x * t + std::log1p(std::exp(-std::abs(x)));
        dlogit[i] = (sigmoid(x) - t) / static_cast<double>(N);
    }
    if (grads != nullptr) {
        const auto& P = params_.values;
        auto& g = grads->values;
        g[kPOut] += f.Hh.transpose() * dlogit;
        g[kPOutBias](0, 0) += dlogit.sum();
        const Matrix dPre = ((dlogit * P[kPOut].transpose()).array() * (1.0 - f.Hh.array().square())).matrix();
        g[kPBias] += dPre.colwise().sum();
        g[kPCenter] += f.E.transpose() * dPre;
        Matrix dE = dPre * P[kPCenter].transpose();
        if (N > 1) {
            g[kPLeft] += f.E.topRows(N - 1).transpose() * dPre.bottomRows(N - 1);
            dE.topRows(N - 1) += dPre.bottomRows(N - 1) * P[kPLeft].transpose();
            g[kPRight] += f.E.bottomRows(N - 1).transpose() * dPre.topRows(N - 1);
            dE.bottomRows(N - 1) += dPre.topRows(N - 1) * P[kPRight].transpose();
        }
        for (Eigen::Index i = 0; i < N; ++i) g[kPEmb].row(ids[static_cast<std::size_t>(i)]) += dE.row(i);
    }
    return total / static_cast<double>(N);
}

// ---------------------------------------------------------------------------

SessionGuard::SessionGuard(std::atomic<bool>& busy) : busy_(busy) {
    bool expected = false;
    if (!busy_.compare_exchange_strong(expected, true)) {
        throw Error(Errc::ModelFailure, "model session already has a generation in flight");
    }
}

SessionGuard::~SessionGuard() { busy_.store(false); }

}  // namespace ctrlcic::modeling
