#pragma once

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mlc/decoder.hpp"
#include "mlc/encoder.hpp"
#include "mlc/loss.hpp"
#include "mlc/metrics.hpp"
#include "mlc/optim.hpp"

// Run configuration: `key=value` lines, `#` comments, blank lines ignored.
// Unknown keys are rejected. echo() serializes every key in a fixed order so
// a checkpoint can carry the exact configuration it was trained with.

namespace mlc {

struct TrainConfig {
    std::size_t image_size = 64;
    std::string encoder = "tiny";      // tiny | external
    std::string head = "gap";          // gap | mldecoder
    std::string stages = "8x2,16x2,32x2";
    std::size_t kernel = 3;
    std::size_t feature_dim = 0;       // external encoder input depth; 0 = derive
    std::size_t embed_dim = 32;
    std::size_t groups = 0;            // 0 -> ceil(K / 4)
    std::size_t ffn_dim = 0;           // 0 -> 2 * embed_dim
    bool shared_readout = false;
    std::size_t batch_size = 32;
    std::size_t epochs = 50;
    double peak_lr = 1e-3;
    double final_lr = 1e-6;
    std::size_t warmup_iters = 200;
    double gamma_pos = 0.0;
    double gamma_neg = 5.0;
    std::string reduction = "mean";    // mean | sum
    bool augment = true;
    std::uint64_t seed = 42;
    std::string map_mode = "macro";    // macro | micro
    std::size_t threshold_count = 500;

    static TrainConfig from_text(const std::string& text);
    static TrainConfig from_file(const std::string& path);
    void apply(const std::string& key, const std::string& value);
    void validate() const;
    std::string echo() const;

    std::vector<EncoderStage> parsed_stages() const;

    TinyEncoderConfig encoder_config() const {
        TinyEncoderConfig c;
        c.kernel = kernel;
        c.stages = parsed_stages();
        return c;
    }

    MlDecoderConfig mld_config(std::size_t num_labels, std::size_t feat_dim) const {
        MlDecoderConfig c;
        c.feature_dim = feat_dim;
        c.num_labels = num_labels;
        c.groups = groups;
        c.embed_dim = embed_dim;
        c.ffn_dim = ffn_dim;
        c.shared_readout = shared_readout;
        return c;
    }

    AsymmetricLossConfig loss_config() const {
        AsymmetricLossConfig c;
        c.gamma_pos = gamma_pos;
        c.gamma_neg = gamma_neg;
        c.reduction = reduction == "sum" ? Reduction::sum : Reduction::mean;
        return c;
    }

    ScheduleConfig schedule_config(std::size_t total_iters) const {
        ScheduleConfig c;
        c.peak_lr = peak_lr;
        c.final_lr = final_lr;
        c.warmup_iters = warmup_iters;
        c.total_iters = total_iters;
        return c;
    }

    MapMode parsed_map_mode() const {
        return map_mode == "micro" ? MapMode::micro : MapMode::macro;
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

inline std::size_t parse_size(const std::string& key, const std::string& v) {
    char* end = nullptr;
    errno = 0;
    const unsigned long long x = std::strtoull(v.c_str(), &end, 10);
    if (v.empty() || end != v.c_str() + v.size() || errno != 0 || v[0] == '-')
        throw ConfigError(key + ": '" + v + "' is not a non-negative integer");
    return static_cast<std::size_t>(x);
}

inline double parse_double(const std::string& key, const std::string& v) {
    char* end = nullptr;
    errno = 0;
    const double x = std::strtod(v.c_str(), &end);
    if (v.empty() || end != v.c_str() + v.size() || errno != 0)
        throw ConfigError(key + ": '" + v + "' is not a number");
    return x;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError(key + ": '" + v + "' is not a boolean");
}

inline std::string format_double(double x) {
    std::ostringstream os;
    os.precision(17);
    os << x;
    return os.str();
}

}  // namespace detail

inline std::vector<EncoderStage> TrainConfig::parsed_stages() const {
    std::vector<EncoderStage> out;
    std::string cur;
    std::istringstream is(stages);
    while (std::getline(is, cur, ',')) {
        const std::size_t x = cur.find('x');
        if (x == std::string::npos || x == 0 || x + 1 >= cur.size())
            throw ConfigError("stages: '" + cur + "' is not CHANNELSxSTRIDE");
        EncoderStage s;
        s.channels = detail::parse_size("stages", cur.substr(0, x));
        s.stride = detail::parse_size("stages", cur.substr(x + 1));
        out.push_back(s);
    }
    if (out.empty()) throw ConfigError("stages: empty");
    return out;
}

inline void TrainConfig::apply(const std::string& key, const std::string& value) {
    if (key == "image_size") image_size = detail::parse_size(key, value);
    else if (key == "encoder") encoder = value;
    else if (key == "head") head = value;
    else if (key == "stages") stages = value;
    else if (key == "kernel") kernel = detail::parse_size(key, value);
    else if (key == "feature_dim") feature_dim = detail::parse_size(key, value);
    else if (key == "embed_dim") embed_dim = detail::parse_size(key, value);
    else if (key == "groups") groups = detail::parse_size(key, value);
    else if (key == "ffn_dim") ffn_dim = detail::parse_size(key, value);
    else if (key == "shared_readout") shared_readout = detail::parse_bool(key, value);
    else if (key == "batch_size") batch_size = detail::parse_size(key, value);
    else if (key == "epochs") epochs = detail::parse_size(key, value);
    else if (key == "peak_lr") peak_lr = detail::parse_double(key, value);
    else if (key == "final_lr") final_lr = detail::parse_double(key, value);
    else if (key == "warmup_iters") warmup_iters = detail::parse_size(key, value);
    else if (key == "gamma_pos") gamma_pos = detail::parse_double(key, value);
    else if (key == "gamma_neg") gamma_neg = detail::parse_double(key, value);
    else if (key == "reduction") reduction = value;
    else if (key == "augment") augment = detail::parse_bool(key, value);
    else if (key == "seed") seed = detail::parse_size(key, value);
    else if (key == "map_mode") map_mode = value;
    else if (key == "threshold_count") threshold_count = detail::parse_size(key, value);
    else throw ConfigError("unknown config key: " + key);
}

inline void TrainConfig::validate() const {
    if (encoder != "tiny" && encoder != "external")
        throw ConfigError("encoder must be tiny or external, got " + encoder);
    if (head != "gap" && head != "mldecoder")
        throw ConfigError("head must be gap or mldecoder, got " + head);
    if (reduction != "mean" && reduction != "sum")
        throw ConfigError("reduction must be mean or sum, got " + reduction);
    if (map_mode != "macro" && map_mode != "micro")
        throw ConfigError("map_mode must be macro or micro, got " + map_mode);
    if (image_size == 0) throw ConfigError("image_size must be >= 1");
    if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
    if (peak_lr <= 0.0) throw ConfigError("peak_lr must be > 0");
    if (final_lr < 0.0) throw ConfigError("final_lr must be >= 0");
    if (gamma_pos < 0.0 || gamma_neg < 0.0) throw ConfigError("gamma must be >= 0");
    if (threshold_count < 2) throw ConfigError("threshold_count must be >= 2");
    if (encoder == "external" && feature_dim == 0)
        throw ConfigError("external encoder requires feature_dim");
    if (encoder == "tiny") {
        TinyEncoderConfig ec = encoder_config();
        ec.validate();
        ec.output_dims(image_size, image_size);  // strides must divide evenly
    }
}

inline TrainConfig TrainConfig::from_text(const std::string& text) {
    TrainConfig cfg;
    std::istringstream is(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        const std::string t = detail::trim(line);
        if (t.empty() || t[0] == '#') continue;
        const std::size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(line_no) +
                              ": expected key=value, got '" + t + "'");
        cfg.apply(detail::trim(t.substr(0, eq)), detail::trim(t.substr(eq + 1)));
    }
    return cfg;
}

inline TrainConfig TrainConfig::from_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config: " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return from_text(ss.str());
}

inline std::string TrainConfig::echo() const {
    std::ostringstream os;
    os << "image_size=" << image_size << '\n'
       << "encoder=" << encoder << '\n'
       << "head=" << head << '\n'
       << "stages=" << stages << '\n'
       << "kernel=" << kernel << '\n'
       << "feature_dim=" << feature_dim << '\n'
       << "embed_dim=" << embed_dim << '\n'
       << "groups=" << groups << '\n'
       << "ffn_dim=" << ffn_dim << '\n'
       << "shared_readout=" << (shared_readout ? "true" : "false") << '\n'
       << "batch_size=" << batch_size << '\n'
       << "epochs=" << epochs << '\n'
       << "peak_lr=" << detail::format_double(peak_lr) << '\n'
       << "final_lr=" << detail::format_double(final_lr) << '\n'
       << "warmup_iters=" << warmup_iters << '\n'
       << "gamma_pos=" << detail::format_double(gamma_pos) << '\n'
       << "gamma_neg=" << detail::format_double(gamma_neg) << '\n'
       << "reduction=" << reduction << '\n'
       << "augment=" << (augment ? "true" : "false") << '\n'
       << "seed=" << seed << '\n'
       << "map_mode=" << map_mode << '\n'
       << "threshold_count=" << threshold_count << '\n';
    return os.str();
}

}  // namespace mlc
