// camforge: train a toy dual-branch (CNN + self-attention) classifier, fuse
// its attention into CAMs, and turn refined CAMs into pseudo-label seed masks.
//
// Verbs: gen-data, train, seed, sweep, eval, ablate, gradcheck, dump-attn.
// Config is a flat `key = value` file (--config FILE) with --key VALUE
// overrides. Exit codes: 0 ok, 1 usage/config error, 2 numeric divergence,
// 3 verification failure.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "camforge/dataset.hpp"
#include "camforge/fusion.hpp"
#include "camforge/model.hpp"
#include "camforge/objective.hpp"
#include "camforge/parallel.hpp"
#include "camforge/seeding.hpp"
#include "camforge/verify.hpp"

namespace fs = std::filesystem;
using namespace camforge;

namespace {

struct Options {
    std::map<std::string, std::string> kv;

    bool has(const std::string& k) const { return kv.count(k) > 0; }

    std::string str(const std::string& k, const std::string& fallback = "") const {
        auto it = kv.find(k);
        return it != kv.end() ? it->second : fallback;
    }
    std::string require(const std::string& k) const {
        auto it = kv.find(k);
        if (it == kv.end()) throw std::invalid_argument("missing required option --" + k);
        return it->second;
    }
    std::uint64_t num(const std::string& k, std::uint64_t fallback) const {
        auto it = kv.find(k);
        return it != kv.end() ? std::stoull(it->second) : fallback;
    }
    double real(const std::string& k, double fallback) const {
        auto it = kv.find(k);
        return it != kv.end() ? std::stod(it->second) : fallback;
    }
};

void load_config_file(const std::string& path, std::map<std::string, std::string>& kv) {
    std::ifstream is(path);
    if (!is) throw std::invalid_argument("cannot open config file: " + path);
    std::string line;
    while (std::getline(is, line)) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t");
            const auto e = s.find_last_not_of(" \t");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (!key.empty()) kv[key] = value;
    }
}

Options parse_options(int argc, char** argv, int first) {
    std::map<std::string, std::string> cli;
    for (int i = first; i < argc; ++i) {
        std::string key = argv[i];
        if (key.rfind("--", 0) != 0 || i + 1 >= argc)
            throw std::invalid_argument("expected --key value pairs, got: " + key);
        cli[key.substr(2)] = argv[++i];
    }
    Options opt;
    if (auto it = cli.find("config"); it != cli.end()) load_config_file(it->second, opt.kv);
    for (auto& [k, v] : cli) opt.kv[k] = v;  // CLI overrides the file
    return opt;
}

model::ModelConfig model_config(const Options& opt) {
    model::ModelConfig cfg;
    cfg.image_size = opt.num("image_size", 64);
    cfg.patch_size = opt.num("patch_size", 8);
    cfg.num_blocks = opt.num("blocks", 4);
    cfg.num_heads = opt.num("heads", 4);
    cfg.embed_dim = opt.num("embed_dim", 64);
    cfg.cnn_channels = opt.num("cnn_channels", 32);
    const std::size_t classes = opt.num("classes", 4);  // S, background included
    if (classes < 2) throw std::invalid_argument("classes must be >= 2 (background + foreground)");
    cfg.num_fg_classes = classes - 1;
    cfg.rng_seed = opt.num("seed", 0);
    cfg.validate();
    return cfg;
}

objective::NoiseMode noise_mode(const Options& opt) {
    const std::string mode = opt.str("noise", "1");
    if (mode == "off") return {false, 0.0};
    objective::NoiseMode m;
    m.enabled = true;
    m.multiplier = std::stod(mode);
    if (m.multiplier < 0) throw std::invalid_argument("noise multiplier must be >= 0 or 'off'");
    return m;
}

objective::TrainConfig train_config(const Options& opt) {
    objective::TrainConfig cfg;
    cfg.epochs = opt.num("epochs", 30);
    cfg.batch_size = opt.num("batch_size", 8);
    cfg.learning_rate = opt.real("lr", 1e-3);
    cfg.weight_decay = opt.real("weight_decay", 5e-4);
    cfg.noise = noise_mode(opt);
    cfg.stop_attention_grad = opt.num("stop_attn_grad", 0) != 0;
    cfg.rng_seed = opt.num("seed", 0);
    cfg.validate();
    return cfg;
}

std::vector<double> parse_list(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(std::stod(item));
    return out;
}

std::vector<std::size_t> parse_scales(const Options& opt, std::size_t fallback) {
    std::vector<std::size_t> scales;
    for (double v : parse_list(opt.str("scales", std::to_string(fallback))))
        scales.push_back(static_cast<std::size_t>(v));
    return scales;
}

data::Dataset load_dataset(const Options& opt, std::size_t& num_classes) {
    const std::string dir = opt.require("dataset");
    if (!fs::exists(dir)) throw std::invalid_argument("dataset directory not found: " + dir);
    return data::load(dir, num_classes);
}

void write_loss_csv(const objective::TrainLog& log, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path);
    os << "epoch,step,L_cls,L_Mss,total\n" << std::setprecision(17);
    for (const auto& s : log.steps)
        os << s.epoch << "," << s.step << "," << s.l_cls << "," << s.l_mss << "," << s.total << "\n";
}

// multi-scale refined CAMs for a whole dataset, parallel across images
std::vector<Tensor> infer_cams(const model::ModelState& st, const data::Dataset& ds,
                               const std::vector<std::size_t>& scales) {
    std::vector<Tensor> cams(ds.size());
    parallel_for(ds.size(), [&](std::size_t i) {
        cams[i] = model::infer_multiscale(st, ds[i].image, scales);
    });
    return cams;
}

int cmd_gen_data(const Options& opt) {
    const std::string out = opt.require("out");
    const std::size_t count = opt.num("count", 200);
    const std::size_t classes = opt.num("classes", 4);
    const std::size_t img = opt.num("image_size", 64);
    auto ds = data::generate(opt.num("seed", 0), count, classes, img);
    data::save(ds, classes, out);
    std::cout << "wrote " << count << " samples to " << out << "\n";
    return 0;
}

int cmd_train(const Options& opt) {
    const std::string out = opt.require("out");
    std::size_t num_classes;
    auto ds = load_dataset(opt, num_classes);
    auto mcfg = model_config(opt);
    if (mcfg.num_fg_classes != num_classes - 1)
        throw std::invalid_argument("model classes (" + std::to_string(mcfg.num_fg_classes + 1) +
                                    ") do not match dataset (" + std::to_string(num_classes) + ")");
    if (ds[0].image.dim(1) != mcfg.image_size)
        throw std::invalid_argument("dataset image size does not match config image_size");
    auto tcfg = train_config(opt);

    auto st = model::init(mcfg);
    auto log = objective::train(st, ds, tcfg);
    fs::create_directories(out);
    model::save_checkpoint(st, out + "/checkpoint");
    write_loss_csv(log, out + "/loss.csv");
    std::cout << "final epoch mean loss: " << log.epoch_mean_total.back() << "\n";
    return 0;
}

int cmd_seed(const Options& opt) {
    const std::string out = opt.require("out");
    auto st = model::load_checkpoint(opt.require("checkpoint"));
    std::size_t num_classes;
    auto ds = load_dataset(opt, num_classes);
    const double ht = opt.real("ht", 0.5);
    if (ht < 0 || ht > 1) throw std::invalid_argument("ht must be in [0,1]");
    const auto scales = parse_scales(opt, ds[0].image.dim(1));

    const auto cams = infer_cams(st, ds, scales);
    fs::create_directories(out);
    seeding::ConfusionMatrix cm(num_classes);
    char name[64];
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto mask = seeding::assign_labels(seeding::normalize_cam(cams[i]), ht);
        cm.accumulate(mask, ds[i].gt);
        std::snprintf(name, sizeof name, "mask_%05zu.pgm", i);
        io::save_pgm(mask.ids, mask.h, mask.w, out + "/" + std::string(name));
    }
    const auto res = seeding::miou_from_confusion(cm);
    std::ofstream metrics(out + "/metrics.json");
    metrics << std::setprecision(17) << "{\n  \"ht\": " << ht << ",\n  \"miou\": " << res.miou
            << ",\n  \"per_class_iou\": [";
    for (std::size_t c = 0; c < res.per_class.size(); ++c)
        metrics << (c ? ", " : "") << (res.present[c] ? std::to_string(res.per_class[c]) : "null");
    metrics << "]\n}\n";
    std::cout << "mIoU " << res.miou << " over " << ds.size() << " images at ht " << ht << "\n";
    return 0;
}

int cmd_sweep(const Options& opt) {
    auto st = model::load_checkpoint(opt.require("checkpoint"));
    std::size_t num_classes;
    auto ds = load_dataset(opt, num_classes);
    auto thresholds = parse_list(opt.str("thresholds", "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9"));
    if (thresholds.empty()) throw std::invalid_argument("empty threshold list");
    std::sort(thresholds.begin(), thresholds.end());
    const auto scales = parse_scales(opt, ds[0].image.dim(1));

    const auto cams = infer_cams(st, ds, scales);
    std::vector<seeding::LabelMask> gts;
    for (const auto& s : ds) gts.push_back(s.gt);
    const auto res = seeding::sweep(cams, gts, num_classes, thresholds);

    std::ostream* os = &std::cout;
    std::ofstream file;
    if (opt.has("out")) {
        file.open(opt.str("out"));
        if (!file) throw std::runtime_error("cannot write " + opt.str("out"));
        os = &file;
    }
    *os << "ht,miou\n" << std::setprecision(17);
    for (std::size_t i = 0; i < res.thresholds.size(); ++i)
        *os << res.thresholds[i] << "," << res.miou[i] << "\n";
    return 0;
}

int cmd_eval(const Options& opt) {
    std::size_t num_classes;
    auto ds = load_dataset(opt, num_classes);
    const std::string masks = opt.require("masks");
    seeding::ConfusionMatrix cm(num_classes);
    char name[64];
    for (std::size_t i = 0; i < ds.size(); ++i) {
        std::snprintf(name, sizeof name, "mask_%05zu.pgm", i);
        std::size_t h, w;
        seeding::LabelMask pred;
        pred.ids = io::load_pgm(masks + "/" + std::string(name), h, w);
        pred.h = h;
        pred.w = w;
        cm.accumulate(pred, ds[i].gt);
    }
    const auto res = seeding::miou_from_confusion(cm);
    std::cout << std::setprecision(17) << "miou " << res.miou << "\n";
    for (std::size_t c = 0; c < res.per_class.size(); ++c)
        if (res.present[c]) std::cout << "class " << c << " iou " << res.per_class[c] << "\n";
    return 0;
}

// Table-5-style ablation: same init, three noise modes, seed mIoU per mode
int cmd_ablate(const Options& opt) {
    const std::string out = opt.require("out");
    std::size_t num_classes;
    auto ds = load_dataset(opt, num_classes);
    auto mcfg = model_config(opt);
    auto tcfg = train_config(opt);
    const double ht = opt.real("ht", 0.5);
    const auto scales = parse_scales(opt, ds[0].image.dim(1));

    struct Mode {
        std::string label;
        objective::NoiseMode noise;
    };
    const std::vector<Mode> modes = {{"without-noise", {false, 0.0}},
                                     {"noise-x1", {true, 1.0}},
                                     {"noise-x2", {true, 2.0}}};
    fs::create_directories(out);
    std::ofstream table(out + "/ablation.csv");
    table << "mode,miou\n" << std::setprecision(17);
    std::cout << "mode,miou\n";
    for (const auto& mode : modes) {
        auto st = model::init(mcfg);  // identical init across modes
        auto cfg = tcfg;
        cfg.noise = mode.noise;
        objective::train(st, ds, cfg);
        model::save_checkpoint(st, out + "/" + mode.label);
        const auto cams = infer_cams(st, ds, scales);
        seeding::ConfusionMatrix cm(num_classes);
        for (std::size_t i = 0; i < ds.size(); ++i)
            cm.accumulate(seeding::assign_labels(seeding::normalize_cam(cams[i]), ht), ds[i].gt);
        const double miou = seeding::miou_from_confusion(cm).miou;
        table << mode.label << "," << miou << "\n";
        std::cout << mode.label << "," << miou << "\n";
    }
    return 0;
}

int cmd_gradcheck(const Options& opt) {
    const double tol = 1e-6;
    const std::uint64_t seed = opt.num("seed", 7);

    const double e_loss = verify::check_soft_margin(seed);
    const double e_fused = verify::check_fused_branch(seed);

    auto st = model::init(verify::minimal_config(seed));
    Rng rng(seed + 1);
    Tensor image({3, st.config.image_size, st.config.image_size});
    for (auto& v : image.data) v = rng.uniform();
    std::vector<double> y = {1.0, 0.0};
    const double e_model = verify::check_model_loss(st, image, y, {true, 1.0});

    std::cout << std::setprecision(3) << std::scientific
              << "soft-margin-loss   max rel err " << e_loss << (e_loss < tol ? "  ok" : "  FAIL") << "\n"
              << "fused-attn-branch  max rel err " << e_fused << (e_fused < tol ? "  ok" : "  FAIL") << "\n"
              << "full-model-loss    max rel err " << e_model << (e_model < tol ? "  ok" : "  FAIL") << "\n";
    return (e_loss < tol && e_fused < tol && e_model < tol) ? 0 : 3;
}

int cmd_dump_attn(const Options& opt) {
    const std::string out = opt.require("out");
    auto st = model::load_checkpoint(opt.require("checkpoint"));
    std::size_t num_classes;
    auto ds = load_dataset(opt, num_classes);
    const std::size_t index = opt.num("index", 0);
    if (index >= ds.size()) throw std::invalid_argument("index out of range");

    auto art = model::forward(st, ad::constant(ds[index].image));
    const auto fused = fusion::fuse(art.attention->value);
    fs::create_directories(out);
    const std::vector<std::pair<std::string, const Tensor*>> outputs = {
        {"A", &fused.a}, {"A_star", &fused.a_star}, {"A_bar", &fused.a_bar},
        {"A_bar_star", &fused.a_bar_star}};
    for (const auto& [name, t] : outputs) {
        io::save_tensor(*t, out + "/" + name + ".cftn");
        io::save_heatmap_pgm(*t, out + "/" + name + ".pgm");
    }
    std::cout << "wrote attention maps for image " << index << " to " << out << "\n";
    return 0;
}

void usage() {
    std::cerr << "usage: camforge <verb> [--config FILE] [--key value ...]\n"
                 "verbs: gen-data train seed sweep eval ablate gradcheck dump-attn\n";
}

}  // namespace

int main(int argc, char** argv) {
    if (argc < 2) {
        usage();
        return 1;
    }
    const std::string verb = argv[1];
    try {
        const Options opt = parse_options(argc, argv, 2);
        if (verb == "gen-data") return cmd_gen_data(opt);
        if (verb == "train") return cmd_train(opt);
        if (verb == "seed") return cmd_seed(opt);
        if (verb == "sweep") return cmd_sweep(opt);
        if (verb == "eval") return cmd_eval(opt);
        if (verb == "ablate") return cmd_ablate(opt);
        if (verb == "gradcheck") return cmd_gradcheck(opt);
        if (verb == "dump-attn") return cmd_dump_attn(opt);
        usage();
        return 1;
    } catch (const objective::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
