#include "qpalf/training.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "qpalf/adam.hpp"
#include "qpalf/rng.hpp"
#include "qpalf/text.hpp"
#include "qpalf/weights_io.hpp"

namespace qpalf {

std::string TrainHistory::csv() const {
    std::ostringstream os;
    os << "epoch,lr,train_loss,valid_loss,valid_psnr_gain\n";
    for (const auto& e : epochs) {
        os << e.epoch << "," << num(e.lr) << "," << num(e.train_loss) << ","
           << num(e.valid_loss) << "," << num(e.valid_psnr_gain) << "\n";
    }
    return os.str();
}

namespace {

struct Batch {
    Tensor<float> x;       // [B, in_ch, P, P], luma (and QP plane for QP_MAP)
    Tensor<float> y;       // [B, 1, P, P]
    Tensor<float> x_luma;  // channel 0 of x
    std::vector<int> qps;
};

Batch make_batch(const Dataset& ds, const std::vector<std::size_t>& order, std::size_t begin,
                 std::size_t end, const NetworkConfig& cfg) {
    const std::int64_t b = static_cast<std::int64_t>(end - begin);
    const std::int64_t p = ds.patch_size;
    const std::int64_t plane = p * p;
    const std::int64_t in_ch = cfg.head_in_channels();

    std::vector<float> x(static_cast<std::size_t>(b * in_ch * plane));
    std::vector<float> y(static_cast<std::size_t>(b * plane));
    Batch batch;
    batch.qps.reserve(static_cast<std::size_t>(b));
    for (std::int64_t i = 0; i < b; ++i) {
        const PatchRecord& rec = ds.records[order[begin + static_cast<std::size_t>(i)]];
        float* xp = x.data() + i * in_ch * plane;
        for (std::int64_t j = 0; j < plane; ++j) xp[j] = rec.recon[static_cast<std::size_t>(j)] / 255.0f;
        if (in_ch == 2) {
            const float q = static_cast<float>(rec.qp) / 63.0f;
            std::fill(xp + plane, xp + 2 * plane, q);
        }
        float* yp = y.data() + i * plane;
        for (std::int64_t j = 0; j < plane; ++j) yp[j] = rec.orig[static_cast<std::size_t>(j)] / 255.0f;
        batch.qps.push_back(rec.qp);
    }
    batch.x = Tensor<float>::from_data({b, in_ch, p, p}, std::move(x));
    batch.y = Tensor<float>::from_data({b, 1, p, p}, std::move(y));
    batch.x_luma = (in_ch == 2) ? slice_channels(batch.x, 0, 1) : batch.x;
    return batch;
}

Tensor<float> compute_loss(const Tensor<float>& pred, const Batch& batch,
                           const LossConfig& loss_config) {
    if (loss_config.mode == LossConfig::Mode::FOCAL) {
        return focal_mse(pred, batch.y, batch.x_luma, batch.qps, loss_config);
    }
    return loss_mse(pred, batch.y);
}

struct ValidStats {
    double loss = 0.0;
    double psnr_gain = 0.0;
};

ValidStats validate_pass(const QpalfWeights<float>& weights, const Dataset& valid,
                         const Schedule& schedule, const LossConfig& loss_config) {
    NoGradGuard no_grad;
    std::vector<std::size_t> order(valid.records.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    double loss_sum = 0.0, gain_sum = 0.0;
    std::size_t count = 0;
    const std::size_t bs = static_cast<std::size_t>(schedule.batch_size);
    for (std::size_t begin = 0; begin < order.size(); begin += bs) {
        const std::size_t end = std::min(order.size(), begin + bs);
        Batch batch = make_batch(valid, order, begin, end, weights.config);
        Tensor<float> pred = qpalf_forward(batch.x, batch.qps, weights);
        loss_sum += static_cast<double>(compute_loss(pred, batch, loss_config).item()) *
                    static_cast<double>(end - begin);

        const std::int64_t n = pred.dim(0);
        const std::int64_t inner = pred.numel() / n;
        for (std::int64_t i = 0; i < n; ++i) {
            double rec = 0.0, init = 0.0;
            for (std::int64_t j = 0; j < inner; ++j) {
                const double dr = static_cast<double>(pred.data()[i * inner + j]) -
                                  batch.y.data()[i * inner + j];
                const double di = static_cast<double>(batch.x_luma.data()[i * inner + j]) -
                                  batch.y.data()[i * inner + j];
                rec += dr * dr;
                init += di * di;
            }
            gain_sum += 10.0 * std::log10(std::max(init, 1e-12) / std::max(rec, 1e-12));
        }
        count += static_cast<std::size_t>(end - begin);
    }
    ValidStats stats;
    stats.loss = loss_sum / static_cast<double>(count);
    stats.psnr_gain = gain_sum / static_cast<double>(count);
    return stats;
}

// One full protocol stage: epochs of shuffled batches with Adam, validation
// and history per epoch. lr comes from the schedule (or stays fixed for
// fine-tuning). Stops early once schedule.max_steps optimizer steps ran.
TrainHistory run_stage(QpalfWeights<float>& weights, const Dataset& train_set,
                       const Dataset& valid_set, const Schedule& schedule,
                       const LossConfig& loss_config, bool fixed_lr, const TrainOptions& options,
                       const std::string& tag) {
    if (train_set.records.empty()) throw DatasetError("train: empty training dataset");
    if (valid_set.records.empty()) throw DatasetError("train: empty validation dataset");
    if (train_set.patch_size != valid_set.patch_size) {
        throw std::invalid_argument("train: train/valid patch sizes differ");
    }
    schedule.validate();
    loss_config.validate();

    const int epochs = fixed_lr ? schedule.finetune_epochs : schedule.total_epochs;
    Adam<float> adam(weights.params.tensors(),
                     {fixed_lr ? schedule.finetune_lr : lr_at_epoch(schedule, 0)});
    Rng rng(schedule.seed);
    std::vector<std::size_t> order(train_set.records.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    TrainHistory history;
    std::int64_t steps = 0;
    bool step_capped = false;
    for (int epoch = 0; epoch < epochs && !step_capped; ++epoch) {
        const double lr = fixed_lr ? schedule.finetune_lr : lr_at_epoch(schedule, epoch);
        adam.set_lr(lr);
        rng.shuffle(order);

        double loss_sum = 0.0;
        std::size_t seen = 0;
        const std::size_t bs = static_cast<std::size_t>(schedule.batch_size);
        for (std::size_t begin = 0; begin < order.size(); begin += bs) {
            const std::size_t end = std::min(order.size(), begin + bs);
            Batch batch = make_batch(train_set, order, begin, end, weights.config);
            Tensor<float> pred = qpalf_forward(batch.x, batch.qps, weights);
            Tensor<float> loss = compute_loss(pred, batch, loss_config);
            const double value = loss.item();
            if (!std::isfinite(value)) {
                throw DivergenceError("training diverged: loss " + num(value) + " at stage '" +
                                      tag + "' epoch " + std::to_string(epoch) + " step " +
                                      std::to_string(steps));
            }
            adam.zero_grad();
            backward(loss);
            adam.step();
            loss_sum += value * static_cast<double>(end - begin);
            seen += end - begin;
            ++steps;
            if (schedule.max_steps > 0 && steps >= schedule.max_steps) {
                step_capped = true;
                break;
            }
        }

        const ValidStats stats = validate_pass(weights, valid_set, schedule, loss_config);
        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = lr;
        rec.train_loss = loss_sum / static_cast<double>(seen);
        rec.valid_loss = stats.loss;
        rec.valid_psnr_gain = stats.psnr_gain;
        history.epochs.push_back(rec);

        if (options.checkpoint_every > 0 && (epoch + 1) % options.checkpoint_every == 0 &&
            !options.checkpoint_dir.empty()) {
            save_weights(weights, options.checkpoint_dir + "/" + tag + "_epoch" +
                                      std::to_string(epoch + 1) + ".qpw");
        }
    }
    return history;
}

Dataset subset_by_qp(const Dataset& ds, int qp) {
    Dataset out;
    out.patch_size = ds.patch_size;
    out.qps = {qp};
    for (const auto& rec : ds.records) {
        if (rec.qp == qp) out.records.push_back(rec);
    }
    return out;
}

}  // namespace

std::vector<TrainOutput> train(const Dataset& train_set, const Dataset& valid_set,
                               const NetworkConfig& net_config, const Schedule& schedule,
                               const TrainProtocol& protocol, const LossConfig& loss_config,
                               const TrainOptions& options) {
    net_config.validate();
    schedule.validate();

    std::vector<TrainOutput> outputs;
    if (protocol.kind == ProtocolKind::COMBINED) {
        TrainOutput out;
        out.tag = "combined";
        out.weights = init_weights<float>(net_config, schedule.seed);
        out.history = run_stage(out.weights, train_set, valid_set, schedule, loss_config,
                                /*fixed_lr=*/false, options, out.tag);
        outputs.push_back(std::move(out));
        return outputs;
    }
    if (protocol.kind == ProtocolKind::FINETUNE_FOCAL) {
        throw ConfigError("train: the focal protocol fine-tunes existing weights; call finetune "
                          "with initial weights instead");
    }

    // SEPARATE: train the anchor QP from scratch, then warm-start every other
    // QP present in the dataset from the anchor weights at warm_start_lr.
    std::set<int> qps_present;
    for (const auto& rec : train_set.records) qps_present.insert(rec.qp);
    if (!qps_present.count(protocol.anchor_qp)) {
        throw ConfigError("train: anchor QP " + std::to_string(protocol.anchor_qp) +
                          " has no records in the training dataset");
    }

    TrainOutput anchor;
    anchor.tag = "qp" + std::to_string(protocol.anchor_qp);
    anchor.weights = init_weights<float>(net_config, schedule.seed);
    {
        const Dataset train_qp = subset_by_qp(train_set, protocol.anchor_qp);
        const Dataset valid_qp = subset_by_qp(valid_set, protocol.anchor_qp);
        anchor.history = run_stage(anchor.weights, train_qp, valid_qp, schedule, loss_config,
                                   /*fixed_lr=*/false, options, anchor.tag);
    }

    std::vector<int> rest(qps_present.begin(), qps_present.end());
    std::sort(rest.begin(), rest.end(), std::greater<int>());
    outputs.push_back(std::move(anchor));
    for (int qp : rest) {
        if (qp == protocol.anchor_qp) continue;
        TrainOutput out;
        out.tag = "qp" + std::to_string(qp);
        out.weights = clone_weights(outputs.front().weights);
        Schedule warm = schedule;
        warm.initial_lr = protocol.warm_start_lr;
        const Dataset train_qp = subset_by_qp(train_set, qp);
        const Dataset valid_qp = subset_by_qp(valid_set, qp);
        out.history = run_stage(out.weights, train_qp, valid_qp, warm, loss_config,
                                /*fixed_lr=*/false, options, out.tag);
        outputs.push_back(std::move(out));
    }
    return outputs;
}

TrainOutput finetune(const QpalfWeights<float>& weights, const Dataset& train_set,
                     const Dataset& valid_set, const Schedule& schedule,
                     const LossConfig& loss_config, const TrainOptions& options) {
    TrainOutput out;
    out.tag = "finetune";
    out.weights = clone_weights(weights);
    out.history = run_stage(out.weights, train_set, valid_set, schedule, loss_config,
                            /*fixed_lr=*/true, options, out.tag);
    return out;
}

}  // namespace qpalf
