#pragma once

#include <string>

#include "qpalf/codec.hpp"
#include "qpalf/net.hpp"
#include "qpalf/training.hpp"

namespace qpalf {

/// Everything a training run needs, loadable from a flat key=value file
/// (UTF-8, '#' comments). Unknown keys are rejected so typos surface instead
/// of silently running defaults.
struct RunConfig {
    NetworkConfig net;
    CodecConfig codec;  // codec.qp is per-call, not configured here
    int dataset_patch = 64;
    int dataset_stride = 16;
    double dataset_psnr_low = 20.0;
    double dataset_psnr_high = 50.0;
    Schedule schedule;
    TrainProtocol protocol;
    LossConfig loss;
    int checkpoint_every = 0;
    std::string train_dataset;
    std::string valid_dataset;
    std::string out_dir = ".";
    std::string init_weights;  // starting weights for fine-tuning

    void validate() const;
};

RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path);

/// Canonical echo: every key with its resolved value, fixed order, parseable
/// by parse_run_config. Written next to run outputs for reproducibility.
std::string echo_run_config(const RunConfig& config);

std::string protocol_name(ProtocolKind kind);
ProtocolKind parse_protocol(const std::string& name);

}  // namespace qpalf
