#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include "CLI11.hpp"
#include "qpalf/codec.hpp"
#include "qpalf/dataset.hpp"
#include "qpalf/errors.hpp"
#include "qpalf/evaluation.hpp"
#include "qpalf/image_io.hpp"
#include "qpalf/run_config.hpp"
#include "qpalf/text.hpp"
#include "qpalf/training.hpp"
#include "qpalf/weights_io.hpp"

namespace fs = std::filesystem;
using namespace qpalf;

namespace {

// Single-threaded throughout for reproducibility; the env var is validated
// and honored as an upper bound should parallel sections appear.
int worker_cap() {
    const char* env = std::getenv("QPALF_THREADS");
    if (env == nullptr) return static_cast<int>(std::thread::hardware_concurrency());
    try {
        const int v = std::stoi(env);
        if (v >= 1) return v;
    } catch (const std::exception&) {
    }
    std::cerr << "warning: ignoring invalid QPALF_THREADS='" << env << "'\n";
    return static_cast<int>(std::thread::hardware_concurrency());
}

std::vector<std::string> list_pgms(const std::string& dir) {
    if (!fs::is_directory(dir)) throw IoError("'" + dir + "' is not a directory");
    std::vector<std::string> out;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".pgm") {
            out.push_back(entry.path().string());
        }
    }
    std::sort(out.begin(), out.end());
    if (out.empty()) throw IoError("no .pgm images found in '" + dir + "'");
    return out;
}

void write_text(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << content;
    out.flush();
    if (!out) throw IoError("write failed for '" + path + "'");
}

FramePlane load_input_image(const std::string& path, int yuv_width, int yuv_height) {
    if (yuv_width > 0 || yuv_height > 0) {
        if (yuv_width < 1 || yuv_height < 1) {
            throw ConfigError("YUV input needs both --width and --height");
        }
        return load_yuv420(path, yuv_width, yuv_height);
    }
    return load_pgm(path);
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory '" + dir + "': " + ec.message());
}

struct EvalOutputs {
    std::vector<MetricsRow> rows;
    std::vector<double> gains;
};

EvalOutputs evaluate_dataset(const Dataset& ds, const QpalfWeights<float>& weights) {
    EvalOutputs out;
    out.rows.reserve(ds.records.size());
    for (std::size_t i = 0; i < ds.records.size(); ++i) {
        const auto& rec = ds.records[i];
        FramePlane recon(ds.patch_size, ds.patch_size);
        FramePlane orig(ds.patch_size, ds.patch_size);
        recon.samples = rec.recon;
        orig.samples = rec.orig;
        const FilterResult raw = filter_frame(recon, rec.qp, weights, nullptr);
        const GateDecision gate = rd_gate(orig, recon, raw.plane, rec.qp);
        MetricsRow row;
        row.frame = "patch" + std::to_string(i);
        row.qp = rec.qp;
        row.psnr_in = psnr(recon, orig);
        row.psnr_out = psnr(raw.plane, orig);
        row.ssim_in = ssim(recon, orig);
        row.ssim_out = ssim(raw.plane, orig);
        row.gain_rate = 1.0 - mse(raw.plane, orig) / std::max(mse(recon, orig), 1e-12);
        row.flag = gate.enabled;
        out.rows.push_back(std::move(row));
        out.gains.push_back(out.rows.back().gain_rate);
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"QP-conditioned CNN in-loop filter toolkit"};
    app.require_subcommand(1);
    (void)worker_cap();

    // encode
    auto* encode_cmd = app.add_subcommand("encode", "Run the toy intra codec over one image");
    std::string enc_in, enc_out, enc_report;
    int enc_qp = 32, enc_block = 8, enc_width = 0, enc_height = 0;
    bool enc_no_deblock = false, enc_no_dc = false;
    encode_cmd->add_option("--in", enc_in, "input image (.pgm, or raw .yuv with --width/--height)")
        ->required();
    encode_cmd->add_option("--qp", enc_qp, "quantization parameter 0-63")->required();
    encode_cmd->add_option("--out", enc_out, "output reconstruction .pgm")->required();
    encode_cmd->add_option("--report", enc_report, "write a one-line metrics CSV here");
    encode_cmd->add_option("--block", enc_block, "codec block size (4, 8, or 16)");
    encode_cmd->add_option("--width", enc_width, "YUV frame width");
    encode_cmd->add_option("--height", enc_height, "YUV frame height");
    encode_cmd->add_flag("--no-deblock", enc_no_deblock, "disable the boundary low-pass");
    encode_cmd->add_flag("--no-dc-pred", enc_no_dc, "disable DC prediction");
    encode_cmd->callback([&] {
        const FramePlane orig = load_input_image(enc_in, enc_width, enc_height);
        CodecConfig cfg;
        cfg.qp = enc_qp;
        cfg.block_size = enc_block;
        cfg.deblock = !enc_no_deblock;
        cfg.dc_prediction = !enc_no_dc;
        cfg.validate();
        const EncodeResult result = encode_decode_rate(orig, cfg);
        save_pgm(result.recon, enc_out);
        const double p = psnr(orig, result.recon);
        const double s = ssim(orig, result.recon);
        std::cout << "psnr=" << num(p) << " ssim=" << num(s) << " bpp=" << num(result.bpp)
                  << "\n";
        if (!enc_report.empty()) {
            write_text(enc_report, "file,qp,bpp,psnr,ssim\n" + enc_in + "," +
                                       std::to_string(enc_qp) + "," + num(result.bpp) + "," +
                                       num(p) + "," + num(s) + "\n");
        }
    });

    // build-dataset
    auto* build_cmd = app.add_subcommand("build-dataset", "Code images and collect patch records");
    std::string bd_images, bd_out, bd_valid_out, bd_report;
    std::vector<int> bd_qps = {22, 27, 32, 37};
    int bd_patch = 64, bd_stride = 16, bd_block = 8;
    double bd_ratio = 0.875, bd_low = 20.0, bd_high = 50.0;
    std::uint64_t bd_seed = 0;
    bool bd_no_deblock = false, bd_no_dc = false;
    build_cmd->add_option("--images", bd_images, "directory of .pgm images")->required();
    build_cmd->add_option("--out", bd_out, "output dataset file (.qpds)")->required();
    build_cmd->add_option("--qps", bd_qps, "QPs to code at")->delimiter(',');
    build_cmd->add_option("--patch", bd_patch, "patch size");
    build_cmd->add_option("--stride", bd_stride, "patch stride");
    build_cmd->add_option("--psnr-low", bd_low, "keep patches with PSNR >= this");
    build_cmd->add_option("--psnr-high", bd_high, "keep patches with PSNR <= this");
    build_cmd->add_option("--block", bd_block, "codec block size");
    build_cmd->add_option("--report", bd_report, "write the build report CSV here");
    build_cmd->add_option("--valid-out", bd_valid_out,
                          "also build a validation dataset from a held-out image split");
    build_cmd->add_option("--split-ratio", bd_ratio, "train fraction for --valid-out");
    build_cmd->add_option("--seed", bd_seed, "seed for the split and the record shuffle");
    build_cmd->add_flag("--no-deblock", bd_no_deblock, "disable the boundary low-pass");
    build_cmd->add_flag("--no-dc-pred", bd_no_dc, "disable DC prediction");
    build_cmd->callback([&] {
        const std::vector<std::string> images = list_pgms(bd_images);
        CodecConfig codec;
        codec.block_size = bd_block;
        codec.deblock = !bd_no_deblock;
        codec.dc_prediction = !bd_no_dc;

        std::vector<std::string> train_images = images, valid_images;
        if (!bd_valid_out.empty()) {
            auto split = split_train_valid(images, bd_ratio, bd_seed);
            train_images = std::move(split.first);
            valid_images = std::move(split.second);
            std::sort(train_images.begin(), train_images.end());
            std::sort(valid_images.begin(), valid_images.end());
        }

        BuildReport report;
        Dataset train_ds = build_dataset(train_images, bd_qps, codec, bd_patch, bd_stride,
                                         bd_low, bd_high, &report);
        train_ds = shuffle_mix({train_ds}, bd_seed);
        save_dataset(train_ds, bd_out);
        std::cout << "train records: " << train_ds.records.size() << "\n";
        if (!bd_valid_out.empty()) {
            Dataset valid_ds = build_dataset(valid_images, bd_qps, codec, bd_patch, bd_stride,
                                             bd_low, bd_high, &report);
            save_dataset(valid_ds, bd_valid_out);
            std::cout << "valid records: " << valid_ds.records.size() << "\n";
        }
        if (!bd_report.empty()) write_text(bd_report, report.csv());
    });

    // train
    auto* train_cmd = app.add_subcommand("train", "Train a model per the run config");
    std::string tr_config, tr_protocol, tr_out_dir;
    train_cmd->add_option("--config", tr_config, "run config file")->required();
    train_cmd->add_option("--protocol", tr_protocol, "combined|separate (overrides config)");
    train_cmd->add_option("--out-dir", tr_out_dir, "output directory (overrides config)");
    train_cmd->callback([&] {
        RunConfig cfg = load_run_config(tr_config);
        if (!tr_protocol.empty()) cfg.protocol.kind = parse_protocol(tr_protocol);
        if (!tr_out_dir.empty()) cfg.out_dir = tr_out_dir;
        if (cfg.protocol.kind == ProtocolKind::FINETUNE_FOCAL) {
            throw ConfigError("protocol 'focal' fine-tunes existing weights; use the finetune "
                              "command with --init");
        }
        if (cfg.train_dataset.empty() || cfg.valid_dataset.empty()) {
            throw ConfigError("config must set paths.train_dataset and paths.valid_dataset");
        }
        const Dataset train_ds = load_dataset(cfg.train_dataset);
        const Dataset valid_ds = load_dataset(cfg.valid_dataset);
        ensure_dir(cfg.out_dir);
        write_text(cfg.out_dir + "/resolved.cfg", echo_run_config(cfg));
        TrainOptions options;
        options.checkpoint_every = cfg.checkpoint_every;
        options.checkpoint_dir = cfg.out_dir;
        const auto outputs =
            train(train_ds, valid_ds, cfg.net, cfg.schedule, cfg.protocol, cfg.loss, options);
        for (const auto& out : outputs) {
            save_weights(out.weights, cfg.out_dir + "/" + out.tag + ".qpw");
            write_text(cfg.out_dir + "/" + out.tag + "_history.csv", out.history.csv());
            const auto& last = out.history.epochs.back();
            std::cout << out.tag << ": epochs=" << out.history.epochs.size()
                      << " final_valid_loss=" << num(last.valid_loss)
                      << " final_valid_psnr_gain=" << num(last.valid_psnr_gain) << "\n";
        }
    });

    // finetune
    auto* ft_cmd = app.add_subcommand("finetune", "Continue training existing weights");
    std::string ft_config, ft_protocol, ft_out_dir, ft_init;
    ft_cmd->add_option("--config", ft_config, "run config file")->required();
    ft_cmd->add_option("--init", ft_init, "weights to start from (overrides config)");
    ft_cmd->add_option("--protocol", ft_protocol, "focal forces the focal loss");
    ft_cmd->add_option("--out-dir", ft_out_dir, "output directory (overrides config)");
    ft_cmd->callback([&] {
        RunConfig cfg = load_run_config(ft_config);
        if (!ft_out_dir.empty()) cfg.out_dir = ft_out_dir;
        if (!ft_init.empty()) cfg.init_weights = ft_init;
        if (!ft_protocol.empty()) {
            if (parse_protocol(ft_protocol) == ProtocolKind::FINETUNE_FOCAL) {
                cfg.loss.mode = LossConfig::Mode::FOCAL;
            } else {
                throw ConfigError("finetune accepts only --protocol focal; the loss mode in the "
                                  "config drives plain fine-tuning");
            }
        }
        if (cfg.init_weights.empty()) {
            throw ConfigError("finetune requires --init weights (or paths.init_weights)");
        }
        if (cfg.train_dataset.empty() || cfg.valid_dataset.empty()) {
            throw ConfigError("config must set paths.train_dataset and paths.valid_dataset");
        }
        const QpalfWeights<float> init = load_weights(cfg.init_weights, cfg.net);
        const Dataset train_ds = load_dataset(cfg.train_dataset);
        const Dataset valid_ds = load_dataset(cfg.valid_dataset);
        ensure_dir(cfg.out_dir);
        write_text(cfg.out_dir + "/resolved.cfg", echo_run_config(cfg));
        TrainOptions options;
        options.checkpoint_every = cfg.checkpoint_every;
        options.checkpoint_dir = cfg.out_dir;
        const TrainOutput out =
            finetune(init, train_ds, valid_ds, cfg.schedule, cfg.loss, options);
        save_weights(out.weights, cfg.out_dir + "/" + out.tag + ".qpw");
        write_text(cfg.out_dir + "/" + out.tag + "_history.csv", out.history.csv());
        const auto& last = out.history.epochs.back();
        std::cout << out.tag << ": epochs=" << out.history.epochs.size()
                  << " final_valid_loss=" << num(last.valid_loss)
                  << " final_valid_psnr_gain=" << num(last.valid_psnr_gain) << "\n";
    });

    // filter
    auto* filter_cmd = app.add_subcommand("filter", "Apply the filter to one frame");
    std::string fl_in, fl_orig, fl_weights, fl_out;
    int fl_qp = 32;
    bool fl_gate = false;
    filter_cmd->add_option("--in", fl_in, "reconstructed frame (.pgm)")->required();
    filter_cmd->add_option("--qp", fl_qp, "QP the frame was coded at")->required();
    filter_cmd->add_option("--weights", fl_weights, "weight file")->required();
    filter_cmd->add_option("--out", fl_out, "filtered output (.pgm)")->required();
    filter_cmd->add_option("--orig", fl_orig, "original frame, enables metrics and gating");
    filter_cmd->add_flag("--gate", fl_gate, "frame-level RD gate (requires --orig)");
    filter_cmd->callback([&] {
        if (fl_gate && fl_orig.empty()) throw ConfigError("--gate requires --orig");
        const FramePlane recon = load_pgm(fl_in);
        const QpalfWeights<float> weights = load_weights(fl_weights);
        FramePlane orig;
        if (!fl_orig.empty()) orig = load_pgm(fl_orig);
        const FilterResult result =
            filter_frame(recon, fl_qp, weights, fl_gate ? &orig : nullptr);
        save_pgm(result.plane, fl_out);
        if (!fl_orig.empty()) {
            std::cout << "psnr_in=" << num(psnr(recon, orig))
                      << " psnr_out=" << num(psnr(result.plane, orig))
                      << " flag=" << (result.flag ? 1 : 0) << "\n";
        } else {
            std::cout << "flag=" << (result.flag ? 1 : 0) << "\n";
        }
    });

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate weights over a validation dataset");
    std::string ev_valid, ev_weights, ev_out_dir = ".";
    std::string ev_metrics = "metrics.csv", ev_cdf = "cdf.csv";
    eval_cmd->add_option("--valid", ev_valid, "validation dataset (.qpds)")->required();
    eval_cmd->add_option("--weights", ev_weights, "weight file")->required();
    eval_cmd->add_option("--out-dir", ev_out_dir, "where the CSVs go");
    eval_cmd->add_option("--metrics", ev_metrics, "metrics CSV filename");
    eval_cmd->add_option("--cdf", ev_cdf, "gain-rate CDF CSV filename");
    eval_cmd->callback([&] {
        const Dataset ds = load_dataset(ev_valid);
        if (ds.records.empty()) throw DatasetError("'" + ev_valid + "' holds no records");
        const QpalfWeights<float> weights = load_weights(ev_weights);
        const EvalOutputs out = evaluate_dataset(ds, weights);
        ensure_dir(ev_out_dir);
        write_text(ev_out_dir + "/" + ev_metrics, metrics_csv(out.rows));
        write_text(ev_out_dir + "/" + ev_cdf, gain_rate_cdf(out.gains).csv());
        double gain_sum = 0.0;
        std::size_t flags = 0;
        for (const auto& row : out.rows) {
            gain_sum += row.gain_rate;
            flags += row.flag ? 1 : 0;
        }
        std::cout << "records=" << out.rows.size()
                  << " mean_gain_rate=" << num(gain_sum / static_cast<double>(out.rows.size()))
                  << " flags_on=" << flags << "\n";
    });

    // rdcurve
    auto* rd_cmd = app.add_subcommand("rdcurve", "Code an image set across QPs into an RD CSV");
    std::string rd_images, rd_out, rd_weights;
    std::vector<int> rd_qps = {22, 27, 32, 37};
    int rd_block = 8;
    bool rd_timing = false;
    rd_cmd->add_option("--images", rd_images, "directory of .pgm images")->required();
    rd_cmd->add_option("--out", rd_out, "output CSV (qp,bpp,psnr)")->required();
    rd_cmd->add_option("--qps", rd_qps, "QPs to sweep")->delimiter(',');
    rd_cmd->add_option("--weights", rd_weights, "filter reconstructions with these weights");
    rd_cmd->add_option("--block", rd_block, "codec block size");
    rd_cmd->add_flag("--timing", rd_timing, "report the filter's decode-time overhead");
    rd_cmd->callback([&] {
        const std::vector<std::string> images = list_pgms(rd_images);
        QpalfWeights<float> weights;
        const bool filter = !rd_weights.empty();
        if (filter) weights = load_weights(rd_weights);
        std::vector<int> qps = rd_qps;
        std::sort(qps.begin(), qps.end(), std::greater<int>());

        std::vector<RdCsvRow> rows;
        double base_seconds = 0.0, aug_seconds = 0.0;
        for (int qp : qps) {
            CodecConfig cfg;
            cfg.qp = qp;
            cfg.block_size = rd_block;
            cfg.validate();
            double bpp_sum = 0.0, psnr_sum = 0.0;
            for (const auto& path : images) {
                const FramePlane orig = load_pgm(path);
                const auto t0 = std::chrono::steady_clock::now();
                const EncodeResult enc = encode_decode_rate(orig, cfg);
                const auto t1 = std::chrono::steady_clock::now();
                FramePlane final_plane = enc.recon;
                if (filter) {
                    final_plane = filter_frame(enc.recon, qp, weights, &orig).plane;
                }
                const auto t2 = std::chrono::steady_clock::now();
                base_seconds += std::chrono::duration<double>(t1 - t0).count();
                aug_seconds += std::chrono::duration<double>(t2 - t0).count();
                bpp_sum += enc.bpp;
                psnr_sum += psnr(orig, final_plane);
            }
            RdCsvRow row;
            row.qp = qp;
            row.bpp = bpp_sum / static_cast<double>(images.size());
            row.psnr = psnr_sum / static_cast<double>(images.size());
            rows.push_back(row);
        }
        write_text(rd_out, rd_curve_csv(rows));
        std::cout << "points=" << rows.size() << "\n";
        if (rd_timing && filter) {
            TimingReport timing{base_seconds, aug_seconds};
            std::cout << "delta_time=" << num(timing.delta()) << "\n";
        }
    });

    // bdrate
    auto* bd_cmd = app.add_subcommand("bdrate", "Bjontegaard delta rate between two RD CSVs");
    std::string bdr_anchor, bdr_test, bdr_out;
    bd_cmd->add_option("--anchor", bdr_anchor, "anchor curve CSV")->required();
    bd_cmd->add_option("--test", bdr_test, "test curve CSV")->required();
    bd_cmd->add_option("--out", bdr_out, "write a one-line report CSV here");
    bd_cmd->callback([&] {
        const double value = bd_rate(load_rd_csv(bdr_anchor), load_rd_csv(bdr_test));
        std::cout << "bd_rate_percent=" << num(value) << "\n";
        if (!bdr_out.empty()) {
            write_text(bdr_out, "anchor,test,bd_rate_percent\n" + bdr_anchor + "," + bdr_test +
                                    "," + num(value) + "\n");
        }
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const DivergenceError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const ConfigMismatchError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const DatasetError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const EvalError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
