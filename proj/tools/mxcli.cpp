// mxcli: format inspection, block quantization reports, dot-product
// benchmarks and training experiments.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "microscaling/luts.hpp"
#include "microscaling/train.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace microscaling;

namespace {

enum exit_code : int { ok = 0, usage = 2, data = 3, divergence = 4 };

struct Options {
    std::string format = "e4m3";
    std::size_t block = 32;
    std::string acc = "wide";
    std::string rounding;
    std::string preset = "baseline";
    std::string config;
    std::uint64_t seed = 1;
    std::size_t iters = 100;
    std::string corpus;
    std::string checkpoint;
    std::string out;
    unsigned threads = 1;

    std::string input;
    std::size_t n = 1024;
    std::size_t trials = 100;
    std::string pattern = "normal";
    std::string left = "truncate";
    std::string right = "nearest-away";
    std::size_t batch = 4;
    std::size_t seq_len = 64;
    double lr = 3e-4;
    std::string save;
    std::string prompt = "The king ";
    std::size_t tokens = 64;
    double temperature = 1.0;
};

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

// CSV column names for the rounding policies.
std::string series_name(Rounding r) {
    switch (r) {
        case Rounding::ties_to_away: return "to-nearest";
        case Rounding::ties_to_even: return "to-nearest-even";
        case Rounding::truncate: return "truncate";
    }
    return "?";
}

json to_json(const PrecisionConfig& p) {
    return {{"name", p.name},
            {"weights", p.weights.name()},
            {"activations", p.activations.name()},
            {"gradients", p.gradients.name()},
            {"adam", p.adam.name()},
            {"master_copy", p.master_copy},
            {"matmul", p.matmul.name()},
            {"full_precision_probs", p.full_precision_probs},
            {"accumulator", std::string(to_string(p.accumulator))},
            {"rounding", std::string(to_string(p.rounding))}};
}

MatmulMode parse_matmul(const std::string& s) {
    if (s == "direct") return MatmulMode::direct();
    std::vector<std::string> parts;
    std::stringstream ss(s);
    for (std::string part; std::getline(ss, part, ':');) parts.push_back(part);
    if (parts.size() < 2 || parts[0] != "online_mx") throw mx_error(errc::invalid_spec, "bad matmul mode '" + s + "'");
    MatmulMode m = MatmulMode::mx(preset(parts[1]));
    if (parts.size() > 2) m.block = std::stoul(parts[2]);
    if (parts.size() > 3) m.acc = parse_accumulator(parts[3]);
    return m;
}

PrecisionConfig precision_from_json(const json& j) {
    PrecisionConfig p;
    p.name = j.value("name", "custom");
    p.weights = parse_container(j.value("weights", "wide"));
    p.activations = parse_container(j.value("activations", "wide"));
    p.gradients = parse_container(j.value("gradients", "wide"));
    p.adam = parse_container(j.value("adam", "wide"));
    p.master_copy = j.value("master_copy", false);
    p.matmul = parse_matmul(j.value("matmul", "direct"));
    p.full_precision_probs = j.value("full_precision_probs", true);
    p = p.with_accumulator(parse_accumulator(j.value("accumulator", std::string(to_string(p.matmul.acc)))));
    return p.with_rounding(parse_rounding(j.value("rounding", "nearest-away")));
}

PrecisionConfig resolve_precision(const Options& o, const CLI::App& cmd) {
    PrecisionConfig p;
    if (!o.config.empty()) {
        std::ifstream in(o.config);
        if (!in) throw mx_error(errc::bad_file, "cannot open config " + o.config);
        json j;
        try {
            in >> j;
        } catch (const json::exception& e) {
            throw mx_error(errc::bad_file, o.config + ": " + e.what());
        }
        p = precision_from_json(j);
    } else {
        p = precision_preset(o.preset);
    }
    if (cmd.count("--acc")) p = p.with_accumulator(parse_accumulator(o.acc));
    if (cmd.count("--rounding")) p = p.with_rounding(parse_rounding(o.rounding));
    p.validate();
    return p;
}

std::vector<int> load_tokens(const Options& o) {
    return encode_bytes(o.corpus.empty() ? synthetic_corpus(1) : read_text(o.corpus));
}

fs::path output_dir(const Options& o) {
    fs::path dir = o.out.empty() ? fs::path(".") : fs::path(o.out);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw mx_error(errc::bad_file, "cannot create " + dir.string());
    return dir;
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f || !(f << text)) throw mx_error(errc::bad_file, "cannot write " + path.string());
}

void write_manifest(const fs::path& dir, const std::string& command, const Options& o, json extra) {
    json m;
    m["command"] = command;
    m["seed"] = o.seed;
    m["iterations"] = o.iters;
    m["paths"] = {{"corpus", o.corpus.empty() ? "<synthetic>" : o.corpus},
                  {"checkpoint", o.checkpoint},
                  {"output_dir", dir.string()}};
    for (auto& [k, v] : extra.items()) m[k] = v;
    write_file(dir / "manifest.json", m.dump(2) + "\n");
}

std::string loss_csv(const std::vector<double>& losses) {
    std::string s = "iteration,loss\n";
    for (std::size_t i = 0; i < losses.size(); ++i) s += std::to_string(i) + "," + fmt(losses[i]) + "\n";
    return s;
}

// ---------------------------------------------------------------------------

int cmd_inspect(const Options& o) {
    const FloatSpec s = preset(o.format);
    const auto q = format_queries(s);
    std::cout << "format            " << preset_id(s) << "\n"
              << "exponent bits     " << s.exp_bits() << "\n"
              << "mantissa bits     " << s.man_bits() << "\n"
              << "bias              " << q.bias << "\n"
              << "xi_max            " << q.xi_max << "\n"
              << "xi_min            " << q.xi_min << "\n"
              << "max normal        " << fmt(q.max_normal) << "\n"
              << "min normal        " << fmt(q.min_normal) << "\n"
              << "min positive      " << fmt(q.min_positive) << "\n";
    const auto pf = required_product_format(s);
    std::cout << "product format    E" << pf.exp_bits << "M" << pf.man_bits << "\n"
              << "exact acc. width  " << required_width(s) << "\n";
    return ok;
}

std::vector<double> read_values(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw mx_error(errc::bad_file, "cannot open " + path);
    std::vector<double> v;
    std::string tok;
    while (in >> tok) {
        for (char& c : tok)
            if (c == ',') c = ' ';
        std::stringstream parts(tok);
        for (std::string p; parts >> p;) {
            char* end = nullptr;
            const double x = std::strtod(p.c_str(), &end);
            if (end == p.c_str() || *end != '\0') throw mx_error(errc::bad_file, path + ": not a number '" + p + "'");
            v.push_back(x);
        }
    }
    return v;
}

int cmd_quantize(const Options& o) {
    const FloatSpec s = preset(o.format).with_rounding(o.rounding.empty() ? Rounding::ties_to_away : parse_rounding(o.rounding));
    if (o.block == 0) throw mx_error(errc::invalid_spec, "block length must be positive");
    const auto values = read_values(o.input);
    const auto mx = mx_from_values(values, s, o.block);
    std::string csv = "block,w,max_abs_error,mean_abs_error,nan_elements\n";
    double worst = 0.0, total = 0.0;
    std::size_t counted = 0, nans = 0;
    for (std::size_t j = 0; j < mx.num_blocks(); ++j) {
        double bmax = 0.0, bsum = 0.0;
        std::size_t bn = 0, bnan = 0;
        for (std::size_t i = j * o.block; i < j * o.block + mx.block_size(j); ++i) {
            const double got = mx[i];
            if (std::isnan(got) || std::isnan(values[i])) {
                ++bnan;
                continue;
            }
            const double err = std::fabs(got - values[i]);
            bmax = std::max(bmax, err);
            bsum += err;
            ++bn;
        }
        nans += bnan;
        worst = std::max(worst, bmax);
        total += bsum;
        counted += bn;
        const std::string w = mx.scale_is_nan(j) ? "nan" : std::to_string(mx.scale_exponent(j));
        csv += std::to_string(j) + "," + w + "," + fmt(bmax) + "," + fmt(bn ? bsum / static_cast<double>(bn) : 0.0) + "," +
               std::to_string(bnan) + "\n";
    }
    if (o.out.empty()) {
        std::cout << csv;
    } else {
        const auto dir = output_dir(o);
        write_file(dir / "quantize.csv", csv);
        write_manifest(dir, "quantize", o,
                       {{"format", preset_id(s)}, {"block", o.block}, {"input", o.input}, {"outputs", {"quantize.csv"}}});
    }
    std::cerr << "blocks " << mx.num_blocks() << ", elements " << values.size() << ", max abs error " << fmt(worst)
              << ", mean abs error " << fmt(counted ? total / static_cast<double>(counted) : 0.0) << ", nan elements "
              << nans << "\n";
    return ok;
}

// Correctly rounded dot product of the decompressed vectors.
double oracle_dot(const MxVector& a, const MxVector& b) {
    ExactSum sum(-1300, 1300);
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double p = a[i] * b[i];
        if (!std::isfinite(p)) return p;
        if (p == 0.0) continue;
        int e = 0;
        const double m = std::frexp(p, &e);
        sum.add(static_cast<std::int64_t>(std::ldexp(m, 53)), e - 53);
    }
    return sum.to_double();
}

int cmd_bench_dot(const Options& o) {
    const FloatSpec s = preset(o.format).with_rounding(o.rounding.empty() ? Rounding::ties_to_away : parse_rounding(o.rounding));
    const auto kind = parse_accumulator(o.acc);
    if (o.pattern != "normal" && o.pattern != "adversarial")
        throw mx_error(errc::invalid_spec, "unknown input pattern '" + o.pattern + "'");
    MxDot dot(s, s, o.block, kind);
    std::mt19937_64 rng(o.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const double top = format_queries(s).max_normal;
    double seconds = 0.0, max_abs = 0.0, max_rel = 0.0, max_ulp = 0.0;
    std::size_t overflow = 0, exact_matches = 0;
    std::vector<double> x(o.n), y(o.n);
    for (std::size_t t = 0; t < o.trials; ++t) {
        for (std::size_t i = 0; i < o.n; ++i) {
            if (o.pattern == "adversarial") {
                // two same-sign maxima per block against unit weights
                x[i] = i % o.block < 2 ? top : 0.25 * normal(rng);
                y[i] = 1.0;
            } else {
                x[i] = normal(rng);
                y[i] = normal(rng);
            }
        }
        const auto a = mx_from_values(x, s, o.block), b = mx_from_values(y, s, o.block);
        const auto t0 = std::chrono::steady_clock::now();
        const double got = dot(a, b);
        seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const double want = oracle_dot(a, b);
        if (std::isfinite(want) && !std::isfinite(got)) {
            ++overflow;
            continue;
        }
        const double err = std::fabs(got - want);
        if (err == 0.0) ++exact_matches;
        max_abs = std::max(max_abs, err);
        if (want != 0.0) {
            max_rel = std::max(max_rel, err / std::fabs(want));
            max_ulp = std::max(max_ulp, err / std::ldexp(1.0, std::ilogb(want) - 52));
        }
    }
    if (o.n == 0) seconds = 0.0;
    json r = {{"n", o.n},
              {"block", o.block},
              {"format", preset_id(s)},
              {"acc", std::string(to_string(kind))},
              {"pattern", o.pattern},
              {"trials", o.trials},
              {"ns_per_dot", o.trials ? seconds * 1e9 / static_cast<double>(o.trials) : 0.0},
              {"max_abs_error", max_abs},
              {"max_rel_error", max_rel},
              {"max_ulp_error", max_ulp},
              {"exact_matches", exact_matches},
              {"overflow_count", overflow}};
    std::cout << r.dump(2) << "\n";
    if (!o.out.empty()) {
        const auto dir = output_dir(o);
        write_file(dir / "bench_dot.json", r.dump(2) + "\n");
        write_manifest(dir, "bench-dot", o, {{"outputs", {"bench_dot.json"}}});
    }
    return ok;
}

FinetuneOptions finetune_options(const Options& o, const PrecisionConfig& p) {
    FinetuneOptions f;
    f.precision = p;
    f.iters = o.iters;
    f.seed = o.seed;
    f.batch = o.batch;
    f.seq_len = o.seq_len;
    f.optimizer.lr = o.lr;
    if (!o.checkpoint.empty()) f.init = read_checkpoint(o.checkpoint);
    const std::size_t maxT = f.init ? f.init->config.max_seq_len : f.model.max_seq_len;
    if (f.seq_len == 0 || f.seq_len > maxT || f.batch == 0)
        throw mx_error(errc::invalid_spec, "sequence length must be in [1, " + std::to_string(maxT) + "]");
    return f;
}

int cmd_compare_rounding(const Options& o, const CLI::App& cmd) {
    Options base = o;
    if (!cmd.count("--preset") && o.config.empty()) base.preset = "A";
    const auto prec = resolve_precision(base, cmd);
    const Rounding left = parse_rounding(o.left), right = parse_rounding(o.right);
    const auto corpus = load_tokens(o);
    const auto a = run_finetune(finetune_options(o, prec.with_rounding(left)), corpus).losses;
    const auto b = run_finetune(finetune_options(o, prec.with_rounding(right)), corpus).losses;
    std::string csv = "iteration," + series_name(left) + "," + series_name(right) + "\n";
    for (std::size_t i = 0; i < a.size(); ++i) csv += std::to_string(i) + "," + fmt(a[i]) + "," + fmt(b[i]) + "\n";
    const auto mean = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x;
        return v.empty() ? 0.0 : s / static_cast<double>(v.size());
    };
    const auto dir = output_dir(o);
    write_file(dir / "compare_rounding.csv", csv);
    write_manifest(dir, "compare-rounding", o,
                   {{"precision", to_json(prec)},
                    {"left", std::string(to_string(left))},
                    {"right", std::string(to_string(right))},
                    {"outputs", {"compare_rounding.csv"}}});
    std::cout << "mean " << series_name(left) << " " << fmt(mean(a)) << "\n"
              << "mean " << series_name(right) << " " << fmt(mean(b)) << "\n";
    if (!a.empty() && !(mean(b) < mean(a)))
        std::cerr << "warning: mean loss under " << series_name(right) << " is not below " << series_name(left) << "\n";
    return ok;
}

int cmd_train(const Options& o, const CLI::App& cmd) {
    const auto prec = resolve_precision(o, cmd);
    const auto corpus = load_tokens(o);
    const auto opts = finetune_options(o, prec);
    const auto dir = output_dir(o);
    std::vector<double> losses;
    json extra = {{"preset", prec.name}, {"precision", to_json(prec)}, {"batch", o.batch}, {"seq_len", o.seq_len},
                  {"lr", o.lr}, {"outputs", {"loss.csv"}}};
    try {
        const auto result = run_finetune(opts, corpus, [&](std::size_t it, double loss) {
            losses.push_back(loss);
            std::cerr << "step " << it << " loss " << fmt(loss) << "\n";
        });
        if (!o.save.empty()) {
            Gpt<float> model(opts.init ? opts.init->config : opts.model, prec);
            model.parameters().set_values(result.final_params);
            write_checkpoint(o.save, model);
            extra["saved_checkpoint"] = o.save;
        }
    } catch (const mx_error& e) {
        if (e.code() != errc::non_finite_loss) throw;
        write_file(dir / "loss.csv", loss_csv(losses));
        extra["diverged"] = e.what();
        write_manifest(dir, "train", o, extra);
        throw;
    }
    write_file(dir / "loss.csv", loss_csv(losses));
    write_manifest(dir, "train", o, extra);
    return ok;
}

int cmd_generate(const Options& o, const CLI::App& cmd) {
    const auto prec = resolve_precision(o, cmd);
    if (o.checkpoint.empty()) throw mx_error(errc::invalid_spec, "generate needs --checkpoint");
    const auto ck = read_checkpoint(o.checkpoint);
    auto model = model_from_checkpoint<float>(ck, prec);
    std::vector<int> prompt = encode_bytes(o.prompt);
    for (int t : prompt)
        if (static_cast<std::size_t>(t) >= ck.config.vocab_size)
            throw mx_error(errc::bad_file, "prompt byte outside the checkpoint vocabulary");
    const auto tokens = generate(model, prompt, o.tokens, o.temperature, o.seed);
    const std::string text = decode_bytes(tokens);
    std::cout << o.prompt << text << "\n";
    json extra = {{"preset", prec.name}, {"precision", to_json(prec)}, {"prompt", o.prompt}, {"tokens", o.tokens},
                  {"temperature", o.temperature}, {"outputs", {"tokens.txt"}}};
    if (prec.name != "baseline") {
        auto reference = model_from_checkpoint<float>(ck, precision_preset("baseline"));
        std::vector<int> seq = prompt;
        seq.insert(seq.end(), tokens.begin(), tokens.end());
        const std::size_t len = std::min(seq.size(), ck.config.max_seq_len);
        const std::vector<int> window(seq.end() - static_cast<std::ptrdiff_t>(len), seq.end());
        const double kl = mean_next_token_kl(reference, model, window, 1, len);
        std::cerr << "mean next-token KL vs baseline " << fmt(kl) << "\n";
        extra["kl_vs_baseline"] = kl;
    }
    if (!o.out.empty()) {
        const auto dir = output_dir(o);
        std::string listing;
        for (int t : tokens) listing += std::to_string(t) + "\n";
        write_file(dir / "tokens.txt", listing);
        write_manifest(dir, "generate", o, extra);
    }
    return ok;
}

int cmd_presets() {
    for (auto name : precision_preset_names()) std::cout << to_json(precision_preset(name)).dump() << "\n";
    return ok;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Microscaling formats, exact accumulation and mixed-precision training experiments"};
    app.require_subcommand(1);
    Options o;

    auto add_threads = [&](CLI::App* c) { c->add_option("--threads", o.threads, "Worker threads, 0 for all cores"); };
    auto add_precision = [&](CLI::App* c) {
        c->add_option("--preset", o.preset, "baseline, A, B, C, D, D', E, F, F' or G");
        c->add_option("--config", o.config, "JSON file with an explicit precision configuration");
        c->add_option("--acc", o.acc, "Matmul accumulator: wide, exact or narrow");
        c->add_option("--rounding", o.rounding, "nearest-away, nearest-even or truncate");
    };
    auto add_training = [&](CLI::App* c) {
        c->add_option("--seed", o.seed, "Random seed");
        c->add_option("--iters", o.iters, "Training iterations");
        c->add_option("--corpus", o.corpus, "Plain text corpus (default: built-in synthetic text)");
        c->add_option("--checkpoint", o.checkpoint, "Initial weights (llm.c or native checkpoint)");
        c->add_option("--out", o.out, "Output directory");
        c->add_option("--batch", o.batch, "Sequences per step");
        c->add_option("--seq-len", o.seq_len, "Tokens per sequence");
        c->add_option("--lr", o.lr, "AdamW learning rate");
        add_threads(c);
    };

    auto* inspect = app.add_subcommand("inspect", "Print the properties of a minifloat format");
    inspect->add_option("format_id", o.format, "Format id (e4m3, e5m2, e3m4, e5m10, e8m7, f32)");
    inspect->add_option("--format", o.format, "Format id");

    auto* quantize = app.add_subcommand("quantize", "Quantize a file of numbers block by block and report errors");
    quantize->add_option("input", o.input, "Whitespace or comma separated values")->required();
    quantize->add_option("--format", o.format, "Element format id");
    quantize->add_option("--block", o.block, "Block length");
    quantize->add_option("--rounding", o.rounding, "Rounding policy");
    quantize->add_option("--out", o.out, "Output directory (default: CSV on stdout)");

    auto* bench = app.add_subcommand("bench-dot", "Time MX dot products and measure their error");
    bench->add_option("--n", o.n, "Vector length");
    bench->add_option("--block", o.block, "Block length");
    bench->add_option("--format", o.format, "Element format id");
    bench->add_option("--acc", o.acc, "wide, exact or narrow");
    bench->add_option("--rounding", o.rounding, "Rounding policy");
    bench->add_option("--trials", o.trials, "Number of random vector pairs");
    bench->add_option("--seed", o.seed, "Random seed");
    bench->add_option("--input", o.pattern, "normal or adversarial");
    bench->add_option("--out", o.out, "Output directory");

    auto* compare = app.add_subcommand("compare-rounding", "Paired fine-tunes differing only in rounding policy");
    add_precision(compare);
    add_training(compare);
    compare->add_option("--left", o.left, "First rounding policy");
    compare->add_option("--right", o.right, "Second rounding policy");

    auto* train = app.add_subcommand("train", "Fine-tune the toy model under a precision preset");
    add_precision(train);
    add_training(train);
    train->add_option("--save", o.save, "Write the final weights to this checkpoint");

    auto* gen = app.add_subcommand("generate", "Sample text from a checkpoint");
    add_precision(gen);
    gen->add_option("--checkpoint", o.checkpoint, "Model checkpoint")->required();
    gen->add_option("--prompt", o.prompt, "Prompt text");
    gen->add_option("--n", o.tokens, "Tokens to generate");
    gen->add_option("--temperature", o.temperature, "Sampling temperature, 0 for greedy");
    gen->add_option("--seed", o.seed, "Random seed");
    gen->add_option("--out", o.out, "Output directory");
    add_threads(gen);

    auto* presets = app.add_subcommand("presets", "List the precision presets");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? ok : usage;
    }

    set_num_threads(o.threads);
    try {
        if (*inspect) return cmd_inspect(o);
        if (*quantize) return cmd_quantize(o);
        if (*bench) return cmd_bench_dot(o);
        if (*compare) return cmd_compare_rounding(o, *compare);
        if (*train) return cmd_train(o, *train);
        if (*gen) return cmd_generate(o, *gen);
        if (*presets) return cmd_presets();
    } catch (const mx_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        switch (e.code()) {
            case errc::non_finite_loss: return divergence;
            case errc::bad_file:
            case errc::window_overflow:
            case errc::unsupported_special:
            case errc::shape_mismatch:
            case errc::index_out_of_range: return data;
            default: return usage;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return usage;
    }
    return usage;
}
