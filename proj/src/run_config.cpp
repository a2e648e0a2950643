#include "qpalf/run_config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "qpalf/errors.hpp"
#include "qpalf/text.hpp"

namespace qpalf {

std::string protocol_name(ProtocolKind kind) {
    switch (kind) {
        case ProtocolKind::COMBINED: return "combined";
        case ProtocolKind::SEPARATE: return "separate";
        case ProtocolKind::FINETUNE_FOCAL: return "focal";
    }
    throw ConfigError("unknown protocol");
}

ProtocolKind parse_protocol(const std::string& name) {
    if (name == "combined") return ProtocolKind::COMBINED;
    if (name == "separate") return ProtocolKind::SEPARATE;
    if (name == "focal") return ProtocolKind::FINETUNE_FOCAL;
    throw ConfigError("unknown protocol '" + name + "' (expected combined, separate, or focal)");
}

void RunConfig::validate() const {
    net.validate();
    if (codec.block_size != 4 && codec.block_size != 8 && codec.block_size != 16) {
        throw ConfigError("codec.block must be 4, 8, or 16");
    }
    if (dataset_patch < 1 || dataset_stride < 1) {
        throw ConfigError("dataset.patch and dataset.stride must be positive");
    }
    if (dataset_psnr_low > dataset_psnr_high) {
        throw ConfigError("dataset.psnr_low must not exceed dataset.psnr_high");
    }
    schedule.validate();
    loss.validate();
    if (checkpoint_every < 0) throw ConfigError("train.checkpoint_every must be >= 0");
}

namespace {

std::string trim(const std::string& s) {
    std::size_t begin = s.find_first_not_of(" \t\r\n");
    if (begin == std::string::npos) return "";
    std::size_t end = s.find_last_not_of(" \t\r\n");
    return s.substr(begin, end - begin + 1);
}

long long parse_int(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const long long v = std::stoll(value, &used);
        if (used != value.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config: " + key + " expects an integer, got '" + value + "'");
    }
}

double parse_float(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const double v = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config: " + key + " expects a number, got '" + value + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "1" || value == "true") return true;
    if (value == "0" || value == "false") return false;
    throw ConfigError("config: " + key + " expects 0/1/true/false, got '" + value + "'");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& value) {
    std::vector<int> out;
    std::istringstream is(value);
    std::string tok;
    while (std::getline(is, tok, ',')) {
        out.push_back(static_cast<int>(parse_int(key, trim(tok))));
    }
    if (out.empty()) throw ConfigError("config: " + key + " expects a comma-separated list");
    return out;
}

}  // namespace

RunConfig parse_run_config(const std::string& text) {
    RunConfig cfg;
    bool alpha_touched = false;

    std::istringstream in(text);
    std::string raw;
    int line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        const std::size_t hash = raw.find('#');
        if (hash != std::string::npos) raw.erase(hash);
        const std::string line = trim(raw);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(line_no) +
                              ": expected key=value, got '" + line + "'");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));

        if (key == "net.channels") {
            cfg.net.channels = static_cast<int>(parse_int(key, value));
        } else if (key == "net.rfa_count") {
            cfg.net.rfa_count = static_cast<int>(parse_int(key, value));
        } else if (key == "net.variant") {
            cfg.net.variant = parse_variant(value);
        } else if (key == "net.qps") {
            cfg.net.qp_domain.qps = parse_int_list(key, value);
        } else if (key == "net.qp_encoding") {
            if (value == "list") {
                cfg.net.qp_domain.encoding = QpEncoding::ONE_HOT_LIST;
            } else if (value == "range") {
                cfg.net.qp_domain.encoding = QpEncoding::ONE_HOT_RANGE;
            } else {
                throw ConfigError("config: net.qp_encoding expects list or range, got '" + value +
                                  "'");
            }
        } else if (key == "codec.block") {
            cfg.codec.block_size = static_cast<int>(parse_int(key, value));
        } else if (key == "codec.deblock") {
            cfg.codec.deblock = parse_bool(key, value);
        } else if (key == "codec.dc_pred") {
            cfg.codec.dc_prediction = parse_bool(key, value);
        } else if (key == "dataset.patch") {
            cfg.dataset_patch = static_cast<int>(parse_int(key, value));
        } else if (key == "dataset.stride") {
            cfg.dataset_stride = static_cast<int>(parse_int(key, value));
        } else if (key == "dataset.psnr_low") {
            cfg.dataset_psnr_low = parse_float(key, value);
        } else if (key == "dataset.psnr_high") {
            cfg.dataset_psnr_high = parse_float(key, value);
        } else if (key == "train.epochs") {
            cfg.schedule.total_epochs = static_cast<int>(parse_int(key, value));
        } else if (key == "train.batch") {
            cfg.schedule.batch_size = static_cast<int>(parse_int(key, value));
        } else if (key == "train.lr") {
            cfg.schedule.initial_lr = parse_float(key, value);
        } else if (key == "train.decay_factor") {
            cfg.schedule.decay_factor = parse_float(key, value);
        } else if (key == "train.decay_every") {
            cfg.schedule.decay_every = static_cast<int>(parse_int(key, value));
        } else if (key == "train.finetune_epochs") {
            cfg.schedule.finetune_epochs = static_cast<int>(parse_int(key, value));
        } else if (key == "train.finetune_lr") {
            cfg.schedule.finetune_lr = parse_float(key, value);
        } else if (key == "train.max_steps") {
            cfg.schedule.max_steps = parse_int(key, value);
        } else if (key == "train.seed") {
            cfg.schedule.seed = static_cast<std::uint64_t>(parse_int(key, value));
        } else if (key == "train.protocol") {
            cfg.protocol.kind = parse_protocol(value);
        } else if (key == "train.anchor_qp") {
            cfg.protocol.anchor_qp = static_cast<int>(parse_int(key, value));
        } else if (key == "train.warm_start_lr") {
            cfg.protocol.warm_start_lr = parse_float(key, value);
        } else if (key == "train.checkpoint_every") {
            cfg.checkpoint_every = static_cast<int>(parse_int(key, value));
        } else if (key == "loss.mode") {
            if (value == "mse") {
                cfg.loss.mode = LossConfig::Mode::MSE;
            } else if (value == "focal") {
                cfg.loss.mode = LossConfig::Mode::FOCAL;
            } else {
                throw ConfigError("config: loss.mode expects mse or focal, got '" + value + "'");
            }
        } else if (key == "loss.gamma") {
            cfg.loss.gamma = parse_float(key, value);
        } else if (key == "loss.epsilon") {
            cfg.loss.epsilon = parse_float(key, value);
        } else if (key.rfind("loss.alpha.", 0) == 0) {
            const std::string qp_part = key.substr(std::string("loss.alpha.").size());
            const int qp = static_cast<int>(parse_int(key, qp_part));
            if (!alpha_touched) {
                cfg.loss.alpha.clear();  // explicit table replaces the default
                alpha_touched = true;
            }
            cfg.loss.alpha[qp] = parse_float(key, value);
        } else if (key == "paths.train_dataset") {
            cfg.train_dataset = value;
        } else if (key == "paths.valid_dataset") {
            cfg.valid_dataset = value;
        } else if (key == "paths.out_dir") {
            cfg.out_dir = value;
        } else if (key == "paths.init_weights") {
            cfg.init_weights = value;
        } else {
            throw ConfigError("config line " + std::to_string(line_no) + ": unknown key '" + key +
                              "'");
        }
    }
    cfg.validate();
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_run_config(buf.str());
}

std::string echo_run_config(const RunConfig& cfg) {
    std::ostringstream os;
    os << "net.channels=" << cfg.net.channels << "\n";
    os << "net.rfa_count=" << cfg.net.rfa_count << "\n";
    os << "net.variant=" << variant_name(cfg.net.variant) << "\n";
    os << "net.qps=";
    for (std::size_t i = 0; i < cfg.net.qp_domain.qps.size(); ++i) {
        if (i) os << ",";
        os << cfg.net.qp_domain.qps[i];
    }
    os << "\n";
    os << "net.qp_encoding="
       << (cfg.net.qp_domain.encoding == QpEncoding::ONE_HOT_RANGE ? "range" : "list") << "\n";
    os << "codec.block=" << cfg.codec.block_size << "\n";
    os << "codec.deblock=" << (cfg.codec.deblock ? 1 : 0) << "\n";
    os << "codec.dc_pred=" << (cfg.codec.dc_prediction ? 1 : 0) << "\n";
    os << "dataset.patch=" << cfg.dataset_patch << "\n";
    os << "dataset.stride=" << cfg.dataset_stride << "\n";
    os << "dataset.psnr_low=" << num(cfg.dataset_psnr_low) << "\n";
    os << "dataset.psnr_high=" << num(cfg.dataset_psnr_high) << "\n";
    os << "train.epochs=" << cfg.schedule.total_epochs << "\n";
    os << "train.batch=" << cfg.schedule.batch_size << "\n";
    os << "train.lr=" << num(cfg.schedule.initial_lr) << "\n";
    os << "train.decay_factor=" << num(cfg.schedule.decay_factor) << "\n";
    os << "train.decay_every=" << cfg.schedule.decay_every << "\n";
    os << "train.finetune_epochs=" << cfg.schedule.finetune_epochs << "\n";
    os << "train.finetune_lr=" << num(cfg.schedule.finetune_lr) << "\n";
    os << "train.max_steps=" << cfg.schedule.max_steps << "\n";
    os << "train.seed=" << cfg.schedule.seed << "\n";
    os << "train.protocol=" << protocol_name(cfg.protocol.kind) << "\n";
    os << "train.anchor_qp=" << cfg.protocol.anchor_qp << "\n";
    os << "train.warm_start_lr=" << num(cfg.protocol.warm_start_lr) << "\n";
    os << "train.checkpoint_every=" << cfg.checkpoint_every << "\n";
    os << "loss.mode=" << (cfg.loss.mode == LossConfig::Mode::FOCAL ? "focal" : "mse") << "\n";
    os << "loss.gamma=" << num(cfg.loss.gamma) << "\n";
    os << "loss.epsilon=" << num(cfg.loss.epsilon) << "\n";
    for (const auto& [qp, a] : cfg.loss.alpha) {
        os << "loss.alpha." << qp << "=" << num(a) << "\n";
    }
    os << "paths.train_dataset=" << cfg.train_dataset << "\n";
    os << "paths.valid_dataset=" << cfg.valid_dataset << "\n";
    os << "paths.out_dir=" << cfg.out_dir << "\n";
    os << "paths.init_weights=" << cfg.init_weights << "\n";
    return os.str();
}

}  // namespace qpalf
