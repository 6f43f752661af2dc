#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "camds/checkpoint.hpp"
#include "camds/dataset.hpp"
#include "camds/model.hpp"
#include "camds/optimizer.hpp"
#include "camds/rng.hpp"

namespace camds {

struct TrainConfig {
    double base_lr = 5e-3;
    double lr_decay_factor = 0.5;
    int64_t lr_step = 10000;       // iterations between decays
    int64_t max_iterations = 2000;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    int batch_size = 16;
    double flip_probability = 0.5;
    bool vertical_flip = false;    // when set, an independent vertical mirror draw
    int64_t val_interval = 200;    // 0 disables periodic validation
    int64_t checkpoint_interval = 0;  // 0 = no periodic checkpoints
    uint64_t seed = 0;

    void validate() const;
};

// base_lr * factor^floor(iteration / lr_step)
double lr_at(const TrainConfig& config, int64_t iteration);

// Horizontal mirror with probability p; with the vertical flag, an
// independent vertical mirror draw. The label never changes.
Tensor augment_flip(const Tensor& image, Rng& rng, double p, bool vertical = false);

// Decoded frames held in memory as planar [3,S,S] uint8. Frames that do not
// match the target size are scaled so the shorter side hits it, then
// center-cropped square.
struct TrainDataset {
    int image_size = 0;
    std::vector<std::string> patient_ids;
    std::vector<int> frame_indices;
    std::vector<int> labels;       // 0 normal, 1 abnormal
    std::vector<uint8_t> pixels;   // size() * 3*S*S

    size_t size() const { return labels.size(); }
    std::span<const uint8_t> frame(size_t i) const {
        const size_t stride = static_cast<size_t>(3) * image_size * image_size;
        return {pixels.data() + i * stride, stride};
    }

    static TrainDataset load(std::span<const FrameRecord> records, int image_size);
};

struct HistoryRow {
    int64_t iteration = 0;  // 1-based, the step just completed
    double lr = 0;
    double loss_total = 0;
    double loss_final = 0;
    std::vector<double> loss_side;
    std::optional<double> val_accuracy;
};

struct TrainHistory {
    int num_side_terms = 0;
    std::vector<HistoryRow> rows;

    std::string to_csv() const;
    void write_csv(const std::string& path) const;
};

// Eval-mode abnormal-class probabilities for every frame of the dataset.
std::vector<double> predict_dataset(Model& model, const TrainDataset& data, int batch_size);

double accuracy_at_threshold(std::span<const double> probs, std::span<const int> labels,
                             double threshold = 0.5);

// SGD training loop: shuffled epochs (seeded, partial final batch kept),
// on-the-fly flips, the deep-supervision loss, momentum updates with the
// stepped schedule. Deterministic for a fixed seed; resumable bit-exactly
// because every random stream is derived from (seed, tag, counter).
class Trainer {
  public:
    Trainer(Model& model, const TrainDataset& train_set, const TrainDataset* val_set,
            TrainConfig config);

    // Continue from a checkpoint: optimizer state, completed iterations and
    // the original run's seed (which overrides the configured one so the
    // derived streams line up).
    void resume(SgdState optimizer, int64_t iteration, uint64_t seed);

    TrainHistory run(const std::string& checkpoint_dir = "");

    const SgdState& optimizer_state() const { return optimizer_; }
    TrainerRngState rng_state() const { return {effective_seed_}; }
    int64_t iteration() const { return iteration_; }

  private:
    Tensor assemble_batch(std::span<const size_t> indices, std::vector<int>& labels_out,
                          int64_t iteration) const;
    double validate_accuracy();

    Model& model_;
    const TrainDataset& train_;
    const TrainDataset* val_;
    TrainConfig config_;
    SgdState optimizer_;
    int64_t iteration_ = 0;
    uint64_t effective_seed_ = 0;
};

}  // namespace camds
