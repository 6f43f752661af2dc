#include "camds/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

namespace fs = std::filesystem;

namespace camds {

void TrainConfig::validate() const {
    if (base_lr <= 0) throw std::invalid_argument("base_lr must be > 0");
    if (lr_decay_factor <= 0) throw std::invalid_argument("lr_decay_factor must be > 0");
    if (lr_step < 1) throw std::invalid_argument("lr_step must be >= 1");
    if (max_iterations < 0) throw std::invalid_argument("max_iterations must be >= 0");
    if (momentum < 0 || momentum >= 1) throw std::invalid_argument("momentum must be in [0,1)");
    if (weight_decay < 0) throw std::invalid_argument("weight_decay must be >= 0");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (flip_probability < 0 || flip_probability > 1)
        throw std::invalid_argument("flip_probability must be in [0,1]");
}

double lr_at(const TrainConfig& config, int64_t iteration) {
    if (iteration < 0) throw std::invalid_argument("lr_at: iteration must be >= 0");
    const int64_t steps = iteration / config.lr_step;
    return config.base_lr * std::pow(config.lr_decay_factor, static_cast<double>(steps));
}

namespace {

// planar [3,S,S] float buffers
void flip_horizontal(float* data, int s) {
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < s; ++y) {
            float* row = data + (static_cast<size_t>(c) * s + y) * s;
            std::reverse(row, row + s);
        }
}

void flip_vertical(float* data, int s) {
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < s / 2; ++y) {
            float* a = data + (static_cast<size_t>(c) * s + y) * s;
            float* b = data + (static_cast<size_t>(c) * s + (s - 1 - y)) * s;
            std::swap_ranges(a, a + s, b);
        }
}

}  // namespace

Tensor augment_flip(const Tensor& image, Rng& rng, double p, bool vertical) {
    if (image.shape().size() != 3 || image.shape()[0] != 3 ||
        image.shape()[1] != image.shape()[2])
        throw std::invalid_argument("augment_flip: expected a square [3,S,S] image, got " +
                                    shape_str(image.shape()));
    const int s = image.shape()[1];
    std::vector<float> data(image.data().begin(), image.data().end());
    if (rng.next_bernoulli(p)) flip_horizontal(data.data(), s);
    if (vertical && rng.next_bernoulli(p)) flip_vertical(data.data(), s);
    return Tensor::from_data(image.shape(), std::move(data));
}

TrainDataset TrainDataset::load(std::span<const FrameRecord> records, int image_size) {
    TrainDataset ds;
    ds.image_size = image_size;
    const size_t stride = static_cast<size_t>(3) * image_size * image_size;
    ds.pixels.reserve(records.size() * stride);
    for (const auto& rec : records) {
        Image img = read_pnm(rec.path);
        if (img.width != image_size || img.height != image_size) {
            // scale the shorter side to the target, then crop square
            const int target_w =
                img.width <= img.height
                    ? image_size
                    : static_cast<int>(std::lround(static_cast<double>(image_size) * img.width /
                                                   img.height));
            img = center_crop_square(resize_width(img, target_w));
            if (img.width != image_size)
                throw std::runtime_error(rec.path + ": cannot fit image to " +
                                         std::to_string(image_size) + "x" +
                                         std::to_string(image_size));
        }
        // interleaved (or gray) to planar RGB
        const size_t base = ds.pixels.size();
        ds.pixels.resize(base + stride);
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < image_size; ++y)
                for (int x = 0; x < image_size; ++x)
                    ds.pixels[base + (static_cast<size_t>(c) * image_size + y) * image_size + x] =
                        img.pixels[img.index(y, x, img.channels == 3 ? c : 0)];
        ds.patient_ids.push_back(rec.patient_id);
        ds.frame_indices.push_back(rec.frame_index);
        ds.labels.push_back(rec.label == FrameLabel::Abnormal ? 1 : 0);
    }
    return ds;
}

std::string TrainHistory::to_csv() const {
    std::string out = "iteration,lr";
    out += ",loss_total,loss_final";
    for (int t = 1; t <= num_side_terms; ++t) out += ",loss_side_" + std::to_string(t);
    out += ",val_accuracy\n";
    char buf[64];
    auto num = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.9g", v);
        return std::string(buf);
    };
    for (const auto& r : rows) {
        out += std::to_string(r.iteration) + "," + num(r.lr) + "," + num(r.loss_total) + "," +
               num(r.loss_final);
        for (double s : r.loss_side) out += "," + num(s);
        out += ",";
        if (r.val_accuracy) out += num(*r.val_accuracy);
        out += "\n";
    }
    return out;
}

void TrainHistory::write_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error(path + ": cannot open for writing");
    out << to_csv();
    if (!out) throw std::runtime_error(path + ": write failed");
}

std::vector<double> predict_dataset(Model& model, const TrainDataset& data, int batch_size) {
    const int s = data.image_size;
    const size_t stride = static_cast<size_t>(3) * s * s;
    std::vector<double> probs;
    probs.reserve(data.size());
    for (size_t start = 0; start < data.size(); start += batch_size) {
        const size_t count = std::min(static_cast<size_t>(batch_size), data.size() - start);
        std::vector<float> buf(count * stride);
        for (size_t i = 0; i < count; ++i) {
            const auto frame = data.frame(start + i);
            for (size_t j = 0; j < stride; ++j)
                buf[i * stride + j] = static_cast<float>(frame[j]) / 255.0f;
        }
        auto batch = Tensor::from_data({static_cast<int>(count), 3, s, s}, std::move(buf));
        auto out = model.forward(batch, Mode::Eval);
        for (float p : predict_proba(out)) probs.push_back(p);
    }
    return probs;
}

double accuracy_at_threshold(std::span<const double> probs, std::span<const int> labels,
                             double threshold) {
    if (probs.empty() || probs.size() != labels.size())
        throw std::invalid_argument("accuracy_at_threshold: inputs empty or mismatched");
    int64_t correct = 0;
    for (size_t i = 0; i < probs.size(); ++i) {
        const int predicted = probs[i] >= threshold ? 1 : 0;
        if (predicted == labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(probs.size());
}

Trainer::Trainer(Model& model, const TrainDataset& train_set, const TrainDataset* val_set,
                 TrainConfig config)
    : model_(model), train_(train_set), val_(val_set), config_(std::move(config)) {
    config_.validate();
    if (train_.size() == 0) throw std::invalid_argument("training split is empty");
    if (train_.image_size != model_.config().input_size)
        throw std::invalid_argument("dataset image size does not match the model input size");
    optimizer_ = SgdState::for_params(model_.parameters());
    effective_seed_ = config_.seed;
}

void Trainer::resume(SgdState optimizer, int64_t iteration, uint64_t seed) {
    if (optimizer.velocity.size() != model_.parameters().size())
        throw std::invalid_argument("resume: optimizer state does not match the model");
    optimizer_ = std::move(optimizer);
    iteration_ = iteration;
    effective_seed_ = seed;
}

Tensor Trainer::assemble_batch(std::span<const size_t> indices, std::vector<int>& labels_out,
                               int64_t iteration) const {
    const int s = train_.image_size;
    const size_t stride = static_cast<size_t>(3) * s * s;
    std::vector<float> buf(indices.size() * stride);
    labels_out.clear();
    Rng flip_rng(mix_seed(effective_seed_, rng_tag::kFlip, static_cast<uint64_t>(iteration)));
    for (size_t i = 0; i < indices.size(); ++i) {
        const auto frame = train_.frame(indices[i]);
        float* dst = buf.data() + i * stride;
        for (size_t j = 0; j < stride; ++j) dst[j] = static_cast<float>(frame[j]) / 255.0f;
        if (flip_rng.next_bernoulli(config_.flip_probability)) flip_horizontal(dst, s);
        if (config_.vertical_flip && flip_rng.next_bernoulli(config_.flip_probability))
            flip_vertical(dst, s);
        labels_out.push_back(train_.labels[indices[i]]);
    }
    return Tensor::from_data({static_cast<int>(indices.size()), 3, s, s}, std::move(buf));
}

double Trainer::validate_accuracy() {
    std::vector<double> probs = predict_dataset(model_, *val_, config_.batch_size);
    return accuracy_at_threshold(probs, val_->labels);
}

TrainHistory Trainer::run(const std::string& checkpoint_dir) {
    TrainHistory history;
    history.num_side_terms =
        model_.config().head == HeadKind::CamDs ? model_.config().num_resolutions : 0;

    const size_t n = train_.size();
    const int64_t batches_per_epoch =
        static_cast<int64_t>((n + config_.batch_size - 1) / config_.batch_size);

    std::vector<size_t> perm(n);
    int64_t perm_epoch = -1;

    while (iteration_ < config_.max_iterations) {
        const int64_t epoch = iteration_ / batches_per_epoch;
        const int64_t batch_in_epoch = iteration_ % batches_per_epoch;
        if (epoch != perm_epoch) {
            for (size_t i = 0; i < n; ++i) perm[i] = i;
            Rng shuffle_rng(
                mix_seed(effective_seed_, rng_tag::kShuffle, static_cast<uint64_t>(epoch)));
            shuffle_rng.shuffle(perm);
            perm_epoch = epoch;
        }
        const size_t begin = static_cast<size_t>(batch_in_epoch) * config_.batch_size;
        const size_t end = std::min(begin + config_.batch_size, n);

        std::vector<int> labels;
        Tensor batch = assemble_batch({perm.data() + begin, end - begin}, labels, iteration_);

        auto out = model_.forward(batch, Mode::Train);
        auto loss = model_.loss(out, labels);
        const double lr = lr_at(config_, iteration_);

        HistoryRow row;
        row.iteration = iteration_ + 1;
        row.lr = lr;
        row.loss_total = loss.total.item();
        row.loss_final = loss.final_term.item();
        for (const auto& side : loss.side_terms) row.loss_side.push_back(side.item());

        if (!std::isfinite(row.loss_total)) {
            std::string detail = "loss diverged at iteration " + std::to_string(iteration_ + 1) +
                                 " (lr " + std::to_string(lr) + "): total " +
                                 std::to_string(row.loss_total) + ", final " +
                                 std::to_string(row.loss_final);
            for (size_t t = 0; t < row.loss_side.size(); ++t)
                detail += ", side" + std::to_string(t + 1) + " " +
                          std::to_string(row.loss_side[t]);
            throw std::runtime_error(detail);
        }

        loss.total.backward();
        sgd_step(model_.parameters(), optimizer_, lr, config_.momentum, config_.weight_decay);
        model_.zero_grads();
        iteration_ += 1;

        const bool last = iteration_ == config_.max_iterations;
        if (val_ && val_->size() > 0 && config_.val_interval > 0 &&
            (iteration_ % config_.val_interval == 0 || last))
            row.val_accuracy = validate_accuracy();
        history.rows.push_back(std::move(row));

        if (!checkpoint_dir.empty() && config_.checkpoint_interval > 0 &&
            iteration_ % config_.checkpoint_interval == 0 && !last) {
            char name[64];
            std::snprintf(name, sizeof(name), "checkpoint_%07lld.camds",
                          static_cast<long long>(iteration_));
            save_checkpoint(model_, optimizer_, iteration_, rng_state(),
                            (fs::path(checkpoint_dir) / name).string());
        }
    }
    return history;
}

}  // namespace camds
