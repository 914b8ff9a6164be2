#include "rforge/rationalizer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rforge/errors.hpp"

namespace rforge {

namespace {

constexpr std::size_t kSelectClass = 1;

const char* const kEncoderTensors[] = {"embedding", "mix_weight", "mix_bias"};

Tensor uniform_head(std::size_t rows, std::size_t cols, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(cols));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor t = Tensor::zeros({rows, cols}, true);
    for (double& v : t.mutable_data()) {
        v = dist(rng);
    }
    return t;
}

void put_encoder(std::map<std::string, Tensor>& params, const std::string& group, const EncoderParams& enc) {
    params[group + ".embedding"] = enc.embedding;
    params[group + ".mix_weight"] = enc.mix_weight;
    params[group + ".mix_bias"] = enc.mix_bias;
}

Mask threshold_mask(std::span<const double> probs, std::span<const TokenId> tokens,
                    std::optional<double> top_fraction) {
    const std::size_t n = tokens.size();
    Mask mask(n, 0);
    if (!top_fraction) {
        for (std::size_t i = 0; i < n; ++i) {
            mask[i] = (tokens[i] != kPadId && probs[i] >= 0.5) ? 1 : 0;
        }
        return mask;
    }
    const std::size_t live = content_length(tokens);
    const auto k = std::min(live, static_cast<std::size_t>(std::ceil(*top_fraction * static_cast<double>(live))));
    std::vector<std::size_t> order(live);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
    for (std::size_t r = 0; r < k; ++r) {
        mask[order[r]] = 1;
    }
    return mask;
}

Tensor mask_tensor(const Mask& mask) {
    std::vector<double> v(mask.begin(), mask.end());
    return Tensor::vector(std::move(v));
}

SelectionResult finish_train_selection(const Tensor& probs, std::span<const TokenId> tokens, double tau,
                                       const Tensor& noise) {
    const std::size_t n = tokens.size();
    if (noise.shape() != Shape{n, 2}) {
        throw DimensionError("select_train: noise shape " + shape_to_string(noise.shape()) + " expected " +
                             shape_to_string({n, 2}));
    }
    const Tensor live = content_indicator(tokens);
    const Tensor relaxed = gumbel_softmax(log(probs), noise, tau);
    SelectionResult out;
    out.select_prob = column(probs, kSelectClass);
    out.soft_mask = mul(column(relaxed, kSelectClass), live);
    out.hard = mul(column(straight_through(relaxed), kSelectClass), live);
    const auto hard = out.hard.data();
    out.hard_mask.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        out.hard_mask[i] = hard[i] > 0.5 ? 1 : 0;
    }
    return out;
}

void log_term(LossLog* log, const char* name, const Tensor& value) {
    if (log != nullptr) {
        (*log)[name] += value.item();
    }
}

Tensor loss_un_with(const ModelBundle& bundle, const Document& doc, const LossWeights& weights,
                    const SelectionResult& sel, LossLog* log) {
    const std::size_t live = content_length(doc.tokens);
    const Tensor& mask = weights.straight_through_predictor ? sel.hard : sel.soft_mask;
    const Tensor probs = classify(bundle.encoder(EncoderRole::kPredictorUn), bundle.head(HeadRole::kPredictorUn),
                                  doc.tokens, mask);
    const Tensor task = loss_un_task(probs, doc.label);
    const Tensor reg = loss_regularizer(slice(sel.soft_mask, 0, live), weights);
    log_term(log, "un_task", task);
    log_term(log, "regularizer", reg);
    return add(task, reg);
}

} // namespace

std::string_view role_name(EncoderRole role) {
    switch (role) {
    case EncoderRole::kSelectorUn:
        return "selector_encoder.un";
    case EncoderRole::kPredictorUn:
        return "predictor_encoder.un";
    case EncoderRole::kSelectorSup:
        return "selector_encoder.sup";
    case EncoderRole::kPredictorSup:
        return "predictor_encoder.sup";
    case EncoderRole::kShortcut:
        return "shortcut_encoder";
    case EncoderRole::kImitator:
        return "imitator_encoder";
    }
    throw ContractError("role_name: unknown encoder role");
}

std::string_view role_name(HeadRole role) {
    switch (role) {
    case HeadRole::kSelectorUn:
        return "selector_head.un";
    case HeadRole::kSelectorSup:
        return "selector_head.sup";
    case HeadRole::kPredictorUn:
        return "predictor_head.un";
    case HeadRole::kPredictorSup:
        return "predictor_head.sup";
    case HeadRole::kShortcut:
        return "shortcut_head";
    case HeadRole::kImitator:
        return "imitator_head";
    }
    throw ContractError("role_name: unknown head role");
}

ModelBundle ModelBundle::create(const ModelDims& dims, std::uint64_t seed, bool share_imitator_head) {
    if (dims.num_classes < 2) {
        throw SpecError("ModelBundle: need at least 2 classes");
    }
    Rng rng(seed);
    ModelBundle b;
    b.m_dims = dims;
    const std::size_t d = dims.hidden_dim;
    put_encoder(b.m_params, "encoder", EncoderParams::init(dims.vocab_size, d, rng));
    b.m_params["selector_head.weight"] = uniform_head(2, d, rng);
    b.m_params["predictor_head.weight"] = uniform_head(dims.num_classes, d, rng);
    put_encoder(b.m_params, "shortcut_encoder", EncoderParams::init(dims.vocab_size, d, rng));
    b.m_params["shortcut_head.weight"] = uniform_head(dims.num_classes, d, rng);
    if (!share_imitator_head) {
        b.m_params["imitator_head.weight"] = uniform_head(dims.num_classes, d, rng);
    }

    for (auto role : {EncoderRole::kSelectorUn, EncoderRole::kPredictorUn, EncoderRole::kSelectorSup,
                      EncoderRole::kPredictorSup}) {
        b.m_aliases[std::string(role_name(role))] = "encoder";
    }
    b.m_aliases[std::string(role_name(EncoderRole::kShortcut))] = "shortcut_encoder";
    b.m_aliases[std::string(role_name(EncoderRole::kImitator))] = "shortcut_encoder";
    b.m_aliases[std::string(role_name(HeadRole::kSelectorUn))] = "selector_head";
    b.m_aliases[std::string(role_name(HeadRole::kSelectorSup))] = "selector_head";
    b.m_aliases[std::string(role_name(HeadRole::kPredictorUn))] = "predictor_head";
    b.m_aliases[std::string(role_name(HeadRole::kPredictorSup))] = "predictor_head";
    b.m_aliases[std::string(role_name(HeadRole::kShortcut))] = "shortcut_head";
    b.m_aliases[std::string(role_name(HeadRole::kImitator))] = share_imitator_head ? "predictor_head" : "imitator_head";
    return b;
}

ModelBundle ModelBundle::from_parts(const ModelDims& dims, std::map<std::string, Tensor> params,
                                    std::map<std::string, std::string> aliases) {
    ModelBundle reference = create(dims, 0, aliases.count("imitator_head") == 0 ||
                                                aliases.at("imitator_head") == "predictor_head");
    if (aliases != reference.m_aliases) {
        throw ValidationError("ModelBundle: alias map does not match a supported sharing layout");
    }
    for (const auto& [name, tensor] : reference.m_params) {
        auto it = params.find(name);
        if (it == params.end()) {
            throw ValidationError("ModelBundle: missing parameter '" + name + "'");
        }
        if (it->second.shape() != tensor.shape()) {
            throw ValidationError("ModelBundle: parameter '" + name + "' has shape " +
                                  shape_to_string(it->second.shape()) + ", expected " +
                                  shape_to_string(tensor.shape()));
        }
        it->second.set_requires_grad(true);
    }
    if (params.size() != reference.m_params.size()) {
        throw ValidationError("ModelBundle: unexpected extra parameters");
    }
    ModelBundle b;
    b.m_dims = dims;
    b.m_params = std::move(params);
    b.m_aliases = std::move(aliases);
    return b;
}

ModelBundle ModelBundle::clone() const {
    ModelBundle b;
    b.m_dims = m_dims;
    b.m_aliases = m_aliases;
    b.m_imitator_frozen = m_imitator_frozen;
    for (const auto& [name, tensor] : m_params) {
        b.m_params[name] = tensor.clone(true);
    }
    return b;
}

const std::string& ModelBundle::group_of(std::string_view role) const {
    auto it = m_aliases.find(std::string(role));
    if (it == m_aliases.end()) {
        throw ContractError("ModelBundle: unknown role '" + std::string(role) + "'");
    }
    return it->second;
}

EncoderParams ModelBundle::encoder(EncoderRole role) const {
    const std::string& group = group_of(role_name(role));
    return EncoderParams{m_params.at(group + ".embedding"), m_params.at(group + ".mix_weight"),
                         m_params.at(group + ".mix_bias")};
}

Tensor ModelBundle::head(HeadRole role) const { return m_params.at(group_of(role_name(role)) + ".weight"); }

std::vector<std::string> ModelBundle::group_tensor_names(std::string_view group) const {
    std::vector<std::string> names;
    const std::string prefix = std::string(group) + ".";
    for (const auto& [name, tensor] : m_params) {
        if (name.compare(0, prefix.size(), prefix) == 0) {
            names.push_back(name);
        }
    }
    return names;
}

std::vector<std::string> ModelBundle::groups() const {
    std::vector<std::string> out;
    for (const auto& [name, tensor] : m_params) {
        std::string group = name.substr(0, name.find('.'));
        if (out.empty() || out.back() != group) {
            out.push_back(std::move(group));
        }
    }
    return out;
}

bool ModelBundle::imitator_head_shared() const {
    return group_of(role_name(HeadRole::kImitator)) == group_of(role_name(HeadRole::kPredictorUn));
}

void ModelBundle::copy_values_from(const ModelBundle& source, std::span<const std::string> groups) {
    for (const auto& group : groups) {
        for (const auto& name : group_tensor_names(group)) {
            auto it = source.m_params.find(name);
            if (it == source.m_params.end() || it->second.shape() != m_params.at(name).shape()) {
                throw ContractError("ModelBundle::copy_values_from: incompatible tensor '" + name + "'");
            }
            auto dst = m_params.at(name).mutable_data();
            const auto src = it->second.data();
            std::copy(src.begin(), src.end(), dst.begin());
        }
    }
}

void ModelBundle::zero_grads() {
    for (auto& [name, tensor] : m_params) {
        tensor.zero_grad();
    }
}

void LossWeights::validate() const {
    if (alpha < 0.0 || alpha > 1.0) {
        throw SpecError("LossWeights: alpha must lie in [0,1]");
    }
    for (double lambda : {lambda_sparsity, lambda_continuity, lambda_unif, lambda_virt, lambda_diff}) {
        if (lambda < 0.0) {
            throw SpecError("LossWeights: loss weights must be non-negative");
        }
    }
    if (!(tau > 0.0)) {
        throw SpecError("LossWeights: tau must be positive");
    }
}

Tensor content_indicator(std::span<const TokenId> tokens) {
    std::vector<double> live(tokens.size());
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        live[i] = tokens[i] == kPadId ? 0.0 : 1.0;
    }
    return Tensor::vector(std::move(live));
}

Tensor sample_gumbel(Shape shape, Rng& rng) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.mutable_data()) {
        v = gumbel(rng);
    }
    return t;
}

Tensor selector_distribution(const EncoderParams& encoder, const Tensor& head, std::span<const TokenId> tokens) {
    const Encoding enc = encode(encoder, tokens);
    return softmax(matmul_bt(enc.states, head));
}

SelectionResult select_train(const ModelBundle& bundle, std::span<const TokenId> tokens, double tau,
                             const Tensor& noise) {
    const Tensor probs =
        selector_distribution(bundle.encoder(EncoderRole::kSelectorUn), bundle.head(HeadRole::kSelectorUn), tokens);
    return finish_train_selection(probs, tokens, tau, noise);
}

SelectionResult select_train(const ModelBundle& bundle, std::span<const TokenId> tokens, double tau, Rng& rng) {
    const Tensor probs =
        selector_distribution(bundle.encoder(EncoderRole::kSelectorUn), bundle.head(HeadRole::kSelectorUn), tokens);
    return finish_train_selection(probs, tokens, tau, sample_gumbel({tokens.size(), 2}, rng));
}

SelectionResult select_eval(const ModelBundle& bundle, std::span<const TokenId> tokens,
                            std::optional<double> top_fraction) {
    const Tensor probs =
        selector_distribution(bundle.encoder(EncoderRole::kSelectorUn), bundle.head(HeadRole::kSelectorUn), tokens);
    SelectionResult out;
    out.select_prob = column(probs, kSelectClass);
    out.hard_mask = threshold_mask(out.select_prob.data(), tokens, top_fraction);
    out.soft_mask = mask_tensor(out.hard_mask);
    out.hard = out.soft_mask;
    return out;
}

Tensor classify(const EncoderParams& encoder, const Tensor& head, std::span<const TokenId> tokens,
                const std::optional<Tensor>& soft_mask) {
    const Encoding enc = encode(encoder, tokens, soft_mask);
    const std::size_t d = encoder.hidden_dim();
    return reshape(softmax(matmul_bt(reshape(enc.pooled, {1, d}), head)), {head.dim(0)});
}

Tensor predict(const ModelBundle& bundle, std::span<const TokenId> tokens, const std::optional<Tensor>& soft_mask) {
    if (soft_mask) {
        return classify(bundle.encoder(EncoderRole::kPredictorUn), bundle.head(HeadRole::kPredictorUn), tokens,
                        soft_mask);
    }
    return classify(bundle.encoder(EncoderRole::kPredictorSup), bundle.head(HeadRole::kPredictorSup), tokens,
                    std::nullopt);
}

Tensor loss_un_task(const Tensor& class_probs, std::size_t label) {
    if (label >= class_probs.numel()) {
        throw LabelError("loss: label " + std::to_string(label) + " out of range for " +
                         std::to_string(class_probs.numel()) + " classes");
    }
    return scale(log(pick(class_probs, label)), -1.0);
}

Tensor loss_regularizer(const Tensor& soft_mask, const LossWeights& weights) {
    const std::size_t n = soft_mask.numel();
    Tensor total = scale(abs(add_scalar(mean(soft_mask), -weights.alpha)), weights.lambda_sparsity);
    if (n >= 2 && weights.lambda_continuity != 0.0) {
        const Tensor jumps = abs(sub(slice(soft_mask, 1, n), slice(soft_mask, 0, n - 1)));
        total = add(total, scale(sum(jumps), weights.lambda_continuity));
    }
    return total;
}

Tensor loss_select(const Tensor& select_prob, std::span<const std::uint8_t> gold_mask) {
    if (select_prob.rank() != 1 || select_prob.dim(0) != gold_mask.size()) {
        throw DimensionError("loss_select: probabilities " + shape_to_string(select_prob.shape()) + " vs gold mask of " +
                             std::to_string(gold_mask.size()));
    }
    std::vector<double> pos(gold_mask.size()), neg(gold_mask.size());
    for (std::size_t i = 0; i < gold_mask.size(); ++i) {
        pos[i] = gold_mask[i] ? 1.0 : 0.0;
        neg[i] = 1.0 - pos[i];
    }
    const Tensor hit = mul(log(select_prob), Tensor::vector(std::move(pos)));
    const Tensor miss = mul(log(add_scalar(scale(select_prob, -1.0), 1.0)), Tensor::vector(std::move(neg)));
    return scale(sum(add(hit, miss)), -1.0);
}

Tensor loss_un(const ModelBundle& bundle, const Document& doc, const LossWeights& weights, Rng& rng, LossLog* log) {
    const SelectionResult sel = select_train(bundle, doc.tokens, weights.tau, rng);
    return loss_un_with(bundle, doc, weights, sel, log);
}

Tensor loss_un(const ModelBundle& bundle, const Document& doc, const LossWeights& weights, const Tensor& noise,
               LossLog* log) {
    const SelectionResult sel = select_train(bundle, doc.tokens, weights.tau, noise);
    return loss_un_with(bundle, doc, weights, sel, log);
}

Tensor loss_sup(const ModelBundle& bundle, const Document& doc, const LossWeights& weights, LossLog* log) {
    (void)weights;
    if (!doc.gold_mask) {
        throw ContractError("loss_sup: document '" + doc.id + "' has no gold rationale");
    }
    if (doc.gold_mask->size() != doc.tokens.size()) {
        throw ValidationError("loss_sup: gold mask length mismatch in document '" + doc.id + "'");
    }
    const std::size_t live = content_length(doc.tokens);
    const Tensor probs = predict(bundle, doc.tokens);
    const Tensor task = loss_un_task(probs, doc.label);
    const Tensor dist = selector_distribution(bundle.encoder(EncoderRole::kSelectorSup),
                                              bundle.head(HeadRole::kSelectorSup), doc.tokens);
    const Tensor select = loss_select(slice(column(dist, kSelectClass), 0, live),
                                      std::span<const std::uint8_t>(doc.gold_mask->data(), live));
    log_term(log, "sup_task", task);
    log_term(log, "select", select);
    return add(task, select);
}

} // namespace rforge
