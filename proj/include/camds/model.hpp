#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "camds/rng.hpp"
#include "camds/tensor.hpp"

namespace camds {

enum class HeadKind { FcBaseline, Cam, CamDs };

inline std::string head_name(HeadKind h) {
    switch (h) {
        case HeadKind::FcBaseline: return "fc-baseline";
        case HeadKind::Cam: return "cam";
        case HeadKind::CamDs: return "cam-ds";
    }
    throw std::logic_error("unreachable");
}

inline HeadKind head_from_name(const std::string& s) {
    if (s == "fc-baseline") return HeadKind::FcBaseline;
    if (s == "cam") return HeadKind::Cam;
    if (s == "cam-ds") return HeadKind::CamDs;
    throw std::invalid_argument("unknown head '" + s + "' (expected fc-baseline, cam or cam-ds)");
}

struct ModelConfig {
    int input_size = 64;
    int num_resolutions = 3;  // T: pyramid depth, stage t halves the resolution
    std::vector<int> channels_per_stage = {8, 16, 32};
    int num_classes = 2;  // normal = 0, abnormal = 1
    HeadKind head = HeadKind::CamDs;
    int blocks_per_stage = 2;
    uint64_t seed = 0;

    void validate() const {
        if (num_resolutions < 1)
            throw std::invalid_argument("configuration error: num_resolutions must be >= 1");
        if (input_size % (1 << num_resolutions) != 0)
            throw std::invalid_argument("configuration error: input size " +
                                        std::to_string(input_size) + " not divisible by 2^" +
                                        std::to_string(num_resolutions));
        if (input_size / (1 << num_resolutions) < 2)
            throw std::invalid_argument("configuration error: input size " +
                                        std::to_string(input_size) + " leaves a deepest map below "
                                        "2x2 for " + std::to_string(num_resolutions) + " stages");
        if (static_cast<int>(channels_per_stage.size()) != num_resolutions)
            throw std::invalid_argument("configuration error: expected " +
                                        std::to_string(num_resolutions) +
                                        " channel counts, got " +
                                        std::to_string(channels_per_stage.size()));
        for (int c : channels_per_stage)
            if (c < 1) throw std::invalid_argument("configuration error: channel counts must be >= 1");
        if (num_classes != 2)
            throw std::invalid_argument("configuration error: num_classes is fixed at 2");
        if (blocks_per_stage < 0)
            throw std::invalid_argument("configuration error: blocks_per_stage must be >= 0");
    }
};

template <typename T>
struct SpatialMapT {
    int height = 0;
    int width = 0;
    std::vector<T> values;
};

using SpatialMap = SpatialMapT<float>;

template <typename T>
struct ForwardOutputT {
    // resolutions (1-based t) that carry a scoring head, ascending
    std::vector<int> head_resolutions;
    std::vector<TensorT<T>> cams;         // unclamped CAMs per head resolution [B,C,Ht,Wt]
    std::vector<TensorT<T>> side_scores;  // [B,C] per head resolution
    TensorT<T> final_scores;              // [B,C]
    std::vector<TensorT<T>> stage_features;  // post-activation output of every stage
};

template <typename T>
struct LossResultT {
    TensorT<T> total;
    TensorT<T> final_term;                // L_f (equals total for fc/cam heads)
    std::vector<TensorT<T>> side_terms;   // one per head resolution, cam-ds only
};

// Residual pyramid with class-scoring heads. Stage t = strided 3x3 entry conv
// (bn, relu) followed by identity-shortcut residual blocks; each scoring head
// is a bias-free 1x1 convolution whose spatial output is the class activation
// map and whose global average is the class score at that resolution.
template <typename T>
class ModelT {
  public:
    static ModelT build(const ModelConfig& config) {
        config.validate();
        ModelT m;
        m.config_ = config;
        Rng rng(mix_seed(config.seed, rng_tag::kModelInit));

        int in_ch = 3;
        for (int t = 1; t <= config.num_resolutions; ++t) {
            const int out_ch = config.channels_per_stage[t - 1];
            Stage stage;
            const std::string prefix = "stage" + std::to_string(t);
            stage.entry_conv = m.register_conv(prefix + ".entry.conv", out_ch, in_ch, 3, rng);
            stage.entry_bn = m.register_bn(prefix + ".entry.bn", out_ch);
            for (int b = 1; b <= config.blocks_per_stage; ++b) {
                const std::string bp = prefix + ".block" + std::to_string(b);
                Block blk;
                blk.conv1 = m.register_conv(bp + ".conv1", out_ch, out_ch, 3, rng);
                blk.bn1 = m.register_bn(bp + ".bn1", out_ch);
                blk.conv2 = m.register_conv(bp + ".conv2", out_ch, out_ch, 3, rng);
                blk.bn2 = m.register_bn(bp + ".bn2", out_ch);
                stage.blocks.push_back(std::move(blk));
            }
            m.stages_.push_back(std::move(stage));
            in_ch = out_ch;
        }

        switch (config.head) {
            case HeadKind::CamDs:
                for (int t = 1; t <= config.num_resolutions; ++t)
                    m.cam_heads_.push_back(
                        {t, m.register_conv("head.cam" + std::to_string(t), config.num_classes,
                                            config.channels_per_stage[t - 1], 1, rng)});
                break;
            case HeadKind::Cam:
                m.cam_heads_.push_back(
                    {config.num_resolutions,
                     m.register_conv("head.cam" + std::to_string(config.num_resolutions),
                                     config.num_classes,
                                     config.channels_per_stage[config.num_resolutions - 1], 1,
                                     rng)});
                break;
            case HeadKind::FcBaseline: {
                const int feat = config.channels_per_stage[config.num_resolutions - 1];
                const int hidden = 64;
                m.fc1_w_ = m.register_tensor("head.fc1.weight", {hidden, feat},
                                             normal_init(rng, hidden * feat, feat));
                m.fc1_b_ = m.register_tensor("head.fc1.bias", {hidden},
                                             std::vector<T>(hidden, T(0)));
                m.fc2_w_ = m.register_tensor("head.fc2.weight", {config.num_classes, hidden},
                                             normal_init(rng, config.num_classes * hidden, hidden));
                m.fc2_b_ = m.register_tensor("head.fc2.bias", {config.num_classes},
                                             std::vector<T>(config.num_classes, T(0)));
                break;
            }
        }
        return m;
    }

    const ModelConfig& config() const { return config_; }

    std::vector<ParameterT<T>>& parameters() { return params_; }
    const std::vector<ParameterT<T>>& parameters() const { return params_; }

    int64_t parameter_count() const {
        int64_t n = 0;
        for (const auto& p : params_) n += p.tensor.numel();
        return n;
    }

    void zero_grads() {
        for (auto& p : params_) p.tensor.zero_grad();
    }

    struct BnEntry {
        std::string name;
        std::shared_ptr<BnStateT<T>> state;
    };
    const std::vector<BnEntry>& bn_states() const { return bn_states_; }
    std::vector<BnEntry>& bn_states() { return bn_states_; }

    ForwardOutputT<T> forward(const TensorT<T>& batch, Mode mode) {
        if (batch.shape().size() != 4 || batch.shape()[1] != 3 ||
            batch.shape()[2] != config_.input_size || batch.shape()[3] != config_.input_size)
            throw std::invalid_argument("forward: expected input [B,3," +
                                        std::to_string(config_.input_size) + "," +
                                        std::to_string(config_.input_size) + "], got " +
                                        shape_str(batch.shape()));
        ForwardOutputT<T> out;
        TensorT<T> x = batch;
        size_t head_idx = 0;
        for (int t = 1; t <= config_.num_resolutions; ++t) {
            Stage& stage = stages_[t - 1];
            x = relu(batchnorm_layer(conv2d(x, stage.entry_conv.tensor, 2, 1), stage.entry_bn,
                                     mode));
            for (auto& blk : stage.blocks) {
                TensorT<T> h = relu(batchnorm_layer(conv2d(x, blk.conv1.tensor, 1, 1), blk.bn1, mode));
                h = batchnorm_layer(conv2d(h, blk.conv2.tensor, 1, 1), blk.bn2, mode);
                x = relu(add(h, x));
            }
            out.stage_features.push_back(x);
            if (head_idx < cam_heads_.size() && cam_heads_[head_idx].resolution == t) {
                TensorT<T> cam = conv2d(x, cam_heads_[head_idx].conv.tensor, 1, 0);
                out.cams.push_back(cam);
                out.side_scores.push_back(global_avg_pool(cam));
                out.head_resolutions.push_back(t);
                ++head_idx;
            }
        }

        if (config_.head == HeadKind::FcBaseline) {
            TensorT<T> pooled = global_avg_pool(x);
            TensorT<T> hidden = linear(pooled, fc1_w_, fc1_b_);
            out.final_scores = linear(hidden, fc2_w_, fc2_b_);
        } else {
            // final score is the running sum of side scores, t ascending
            TensorT<T> total = out.side_scores[0];
            for (size_t i = 1; i < out.side_scores.size(); ++i)
                total = add(total, out.side_scores[i]);
            out.final_scores = total;
        }
        return out;
    }

    // Deep-supervision loss: cross-entropy of the summed scores plus one
    // cross-entropy per side prediction, unit weights. Other heads use plain
    // cross-entropy on the final scores.
    LossResultT<T> loss(const ForwardOutputT<T>& out, const std::vector<int>& labels) const {
        LossResultT<T> res;
        res.final_term = cross_entropy(out.final_scores, labels);
        if (config_.head != HeadKind::CamDs) {
            res.total = res.final_term;
            return res;
        }
        res.total = res.final_term;
        for (const auto& side : out.side_scores) {
            res.side_terms.push_back(cross_entropy(side, labels));
            res.total = add(res.total, res.side_terms.back());
        }
        return res;
    }

    // Positive part of the CAM for one batch item: what speaks *for* class c.
    SpatialMapT<T> positive_cam(const ForwardOutputT<T>& out, int resolution, int cls,
                                int batch_item = 0) const {
        int idx = -1;
        for (size_t i = 0; i < out.head_resolutions.size(); ++i)
            if (out.head_resolutions[i] == resolution) idx = static_cast<int>(i);
        if (idx < 0)
            throw std::out_of_range("positive_cam: no scoring head at resolution " +
                                    std::to_string(resolution));
        const TensorT<T>& cam = out.cams[idx];
        const int B = cam.shape()[0], C = cam.shape()[1], H = cam.shape()[2], W = cam.shape()[3];
        if (cls < 0 || cls >= C)
            throw std::out_of_range("positive_cam: class " + std::to_string(cls) +
                                    " out of range [0," + std::to_string(C) + ")");
        if (batch_item < 0 || batch_item >= B)
            throw std::out_of_range("positive_cam: batch item " + std::to_string(batch_item) +
                                    " out of range [0," + std::to_string(B) + ")");
        SpatialMapT<T> map;
        map.height = H;
        map.width = W;
        map.values.resize(static_cast<size_t>(H) * W);
        const T* src =
            cam.data().data() + (static_cast<int64_t>(batch_item) * C + cls) * H * W;
        for (int64_t i = 0; i < static_cast<int64_t>(H) * W; ++i)
            map.values[i] = src[i] > T(0) ? src[i] : T(0);
        return map;
    }

  private:
    struct ConvRef {
        TensorT<T> tensor;
    };
    struct BnRef {
        TensorT<T> gamma, beta;
        std::shared_ptr<BnStateT<T>> state;
    };
    struct Block {
        ConvRef conv1, conv2;
        BnRef bn1, bn2;
    };
    struct Stage {
        ConvRef entry_conv;
        BnRef entry_bn;
        std::vector<Block> blocks;
    };
    struct CamHead {
        int resolution;  // 1-based t
        ConvRef conv;
    };

    static std::vector<T> normal_init(Rng& rng, int64_t count, int64_t fan_in) {
        std::vector<T> v(static_cast<size_t>(count));
        const double scale = std::sqrt(2.0 / static_cast<double>(fan_in));
        for (auto& x : v) x = static_cast<T>(rng.next_normal() * scale);
        return v;
    }

    TensorT<T> register_tensor(const std::string& name, Shape shape, std::vector<T> init) {
        for (const auto& p : params_)
            if (p.name == name)
                throw std::logic_error("duplicate parameter name: " + name);
        TensorT<T> t = TensorT<T>::from_data(std::move(shape), std::move(init), true);
        params_.push_back({name, t});
        return t;
    }

    ConvRef register_conv(const std::string& name, int out_ch, int in_ch, int k, Rng& rng) {
        const int64_t count = static_cast<int64_t>(out_ch) * in_ch * k * k;
        return {register_tensor(name + ".weight", {out_ch, in_ch, k, k},
                                normal_init(rng, count, static_cast<int64_t>(in_ch) * k * k))};
    }

    BnRef register_bn(const std::string& name, int ch) {
        BnRef bn;
        bn.gamma = register_tensor(name + ".gamma", {ch}, std::vector<T>(ch, T(1)));
        bn.beta = register_tensor(name + ".beta", {ch}, std::vector<T>(ch, T(0)));
        bn.state = std::make_shared<BnStateT<T>>();
        bn.state->running_mean.assign(ch, T(0));
        bn.state->running_var.assign(ch, T(0));
        bn_states_.push_back({name, bn.state});
        return bn;
    }

    TensorT<T> batchnorm_layer(const TensorT<T>& x, BnRef& bn, Mode mode) {
        return batchnorm(x, bn.gamma, bn.beta, *bn.state, mode,
                         static_cast<T>(kBnMovingAverageFraction), static_cast<T>(kBnEpsilon));
    }

  public:
    // Normalization constants; the fraction weights the previous running value.
    static constexpr double kBnMovingAverageFraction = 0.7;
    static constexpr double kBnEpsilon = 1e-5;

  private:
    ModelConfig config_;
    std::vector<Stage> stages_;
    std::vector<CamHead> cam_heads_;
    TensorT<T> fc1_w_, fc1_b_, fc2_w_, fc2_b_;
    std::vector<ParameterT<T>> params_;
    std::vector<BnEntry> bn_states_;
};

using Model = ModelT<float>;

// Probability of the abnormal class (index 1) per batch item.
template <typename T>
std::vector<T> predict_proba(const ForwardOutputT<T>& out) {
    const int B = out.final_scores.shape()[0];
    const int C = out.final_scores.shape()[1];
    std::vector<T> probs(B);
    const T* s = out.final_scores.data().data();
    for (int b = 0; b < B; ++b) {
        const T* row = s + static_cast<int64_t>(b) * C;
        T mx = std::max(row[0], row[1]);
        const double e0 = std::exp(static_cast<double>(row[0] - mx));
        const double e1 = std::exp(static_cast<double>(row[1] - mx));
        probs[b] = static_cast<T>(e1 / (e0 + e1));
    }
    return probs;
}

}  // namespace camds
