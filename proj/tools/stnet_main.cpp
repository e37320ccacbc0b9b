// stnet: batch command-line front end for the strassenified-network toolkit.
//
// Subcommands: cost, train, verify-strassen, sensitivity, drift.
// Exit codes: 0 success, 1 verification check failed, 2 usage/config error,
// 3 runtime abort (e.g. non-finite training loss). Thread count is controlled
// only by the OpenMP environment (OMP_NUM_THREADS).
//
// Every run echoes its fully-resolved configuration (defaults included) on
// stdout, and timestamps appear only in header lines so reruns are otherwise
// byte-identical.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "stnet/checkpoint.hpp"
#include "stnet/cost.hpp"
#include "stnet/data.hpp"
#include "stnet/network.hpp"
#include "stnet/spn.hpp"
#include "stnet/train.hpp"

using nlohmann::json;
using namespace stnet;

namespace {

std::string now_iso8601() {
    std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void write_text(const std::string& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("io: cannot open " + path + " for write");
    f << content;
    if (!f) throw std::runtime_error("io: short write to " + path);
}

// Rejects keys outside the documented set so config typos fail loudly.
void allow_keys(const json& obj, const std::string& where,
                std::initializer_list<const char*> allowed) {
    for (const auto& item : obj.items()) {
        bool ok = false;
        for (const char* k : allowed)
            if (item.key() == k) {
                ok = true;
                break;
            }
        if (!ok)
            throw std::invalid_argument("config: unknown key \"" + item.key() +
                                        "\" in " + where);
    }
}

int classify_runtime(const std::runtime_error& e) {
    const std::string msg = e.what();
    if (msg.find("non-finite") != std::string::npos) return 3;
    if (msg.rfind("io:", 0) == 0) return 3;
    return 2;
}

template <class F>
int guarded(F&& body) {
    try {
        return body();
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::runtime_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return classify_runtime(e);
    }
}

// ---------------------------------------------------------------------------
// cost

struct CostFlags {
    std::string arch = "mobilenet-v1";
    double width = 1.0;
    int resolution = 224;
    std::string mode = "all";
    double alpha = 0.5;
    double rho = 1.0;
    std::string out;
};

int run_cost(const CostFlags& f) {
    if (f.arch != "mobilenet-v1" && f.arch != "tinynet")
        throw std::invalid_argument("--arch must be mobilenet-v1 or tinynet");
    const ArchSpec arch = f.arch == "tinynet"
                              ? build_tinynet()
                              : build_mobilenets_v1(f.width, f.resolution);

    std::vector<QuantPlan> plans;
    if (f.mode == "all") {
        plans = standard_table_plans();
    } else {
        QuantPlan p;
        p.mode = quant_mode_from_name(f.mode);  // throws on unknown mode
        if (p.mode == QuantMode::HYBRID) p.alpha = f.alpha;
        p.rho = f.rho;
        plans.push_back(p);
    }

    const json cfg = {{"arch", f.arch},       {"width", f.width},
                      {"resolution", f.resolution}, {"mode", f.mode},
                      {"alpha", f.alpha},     {"rho", f.rho},
                      {"out", f.out}};
    std::cout << "# stnet cost " << now_iso8601() << "\n";
    std::cout << "config: " << cfg.dump() << "\n";

    const std::vector<CostRow> rows = table_report(arch, plans);
    std::cout << cost_rows_csv(rows);
    if (!f.out.empty()) {
        write_text(f.out + ".csv", cost_rows_csv(rows));
        write_text(f.out + ".json", cost_rows_json(rows));
        std::cout << "wrote " << f.out << ".csv and " << f.out << ".json\n";
    }
    return 0;
}

// ---------------------------------------------------------------------------
// train

struct RunConfig {
    std::string arch_name = "tinynet";
    int num_classes = 10;
    double width = 1.0;
    int resolution = 224;
    QuantPlan plan;
    std::string source = "synthetic";
    SyntheticSpec synth;
    std::uint64_t data_seed = 7;
    std::vector<std::string> train_files, eval_files;
    bool normalize = true;  // cifar10 only; synthetic data ships normalized
    TrainConfig train;
    std::uint64_t net_seed = 1;
    std::string out_dir;
    json resolved;
};

RunConfig parse_run_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::invalid_argument("config: cannot open " + path);
    json doc;
    try {
        doc = json::parse(f);
    } catch (const json::exception& e) {
        throw std::invalid_argument("config: " + path + " is not valid JSON: " +
                                    e.what());
    }

    RunConfig rc;
    allow_keys(doc, "the top level",
               {"arch", "plan", "data", "train", "net_seed", "out_dir"});
    if (!doc.contains("out_dir"))
        throw std::invalid_argument("config: missing required key \"out_dir\"");
    rc.out_dir = doc.at("out_dir").get<std::string>();
    rc.net_seed = doc.value("net_seed", std::uint64_t(1));

    if (doc.contains("arch")) {
        const json& a = doc["arch"];
        allow_keys(a, "arch", {"name", "num_classes", "width", "resolution"});
        rc.arch_name = a.value("name", rc.arch_name);
        rc.num_classes = a.value("num_classes", rc.num_classes);
        rc.width = a.value("width", rc.width);
        rc.resolution = a.value("resolution", rc.resolution);
    }
    if (rc.arch_name != "tinynet" && rc.arch_name != "mobilenet-v1")
        throw std::invalid_argument("config: arch.name must be tinynet or mobilenet-v1");

    if (doc.contains("plan")) {
        const json& p = doc["plan"];
        allow_keys(p, "plan",
                   {"mode", "alpha", "rho", "fc_hidden_rho", "threshold_factor"});
        rc.plan.mode = quant_mode_from_name(p.value("mode", "fp16"));
        rc.plan.alpha = p.value("alpha", rc.plan.alpha);
        rc.plan.rho = p.value("rho", rc.plan.rho);
        rc.plan.fc_hidden_rho = p.value("fc_hidden_rho", rc.plan.fc_hidden_rho);
        rc.plan.threshold_factor = p.value("threshold_factor", rc.plan.threshold_factor);
        rc.plan.validate();
    }

    if (doc.contains("data")) {
        const json& d = doc["data"];
        rc.source = d.value("source", rc.source);
        if (rc.source == "synthetic") {
            allow_keys(d, "data",
                       {"source", "classes", "train_count", "eval_count", "channels",
                        "height", "width", "separation", "seed"});
            rc.synth.classes = d.value("classes", rc.synth.classes);
            rc.synth.train_count = d.value("train_count", rc.synth.train_count);
            rc.synth.eval_count = d.value("eval_count", rc.synth.eval_count);
            rc.synth.channels = d.value("channels", rc.synth.channels);
            rc.synth.height = d.value("height", rc.synth.height);
            rc.synth.width = d.value("width", rc.synth.width);
            rc.synth.separation = d.value("separation", rc.synth.separation);
            rc.data_seed = d.value("seed", rc.data_seed);
        } else if (rc.source == "cifar10") {
            allow_keys(d, "data", {"source", "train_files", "eval_files", "normalize"});
            if (!d.contains("train_files") || !d.contains("eval_files"))
                throw std::invalid_argument(
                    "config: cifar10 data needs train_files and eval_files paths");
            rc.train_files = d.at("train_files").get<std::vector<std::string>>();
            rc.eval_files = d.at("eval_files").get<std::vector<std::string>>();
            rc.normalize = d.value("normalize", true);
            if (rc.train_files.empty() || rc.eval_files.empty())
                throw std::invalid_argument("config: empty dataset path list");
        } else {
            throw std::invalid_argument("config: data.source must be synthetic or cifar10");
        }
    }

    rc.train = TrainConfig{};
    rc.train.warmup_epochs = 1;
    if (doc.contains("train")) {
        const json& t = doc["train"];
        allow_keys(t, "train",
                   {"phases", "batch_size", "momentum", "weight_decay", "warmup_epochs",
                    "seed", "distill", "augment"});
        rc.train.batch_size = t.value("batch_size", rc.train.batch_size);
        rc.train.momentum = t.value("momentum", rc.train.momentum);
        rc.train.weight_decay = t.value("weight_decay", rc.train.weight_decay);
        rc.train.warmup_epochs = t.value("warmup_epochs", rc.train.warmup_epochs);
        rc.train.seed = t.value("seed", rc.train.seed);
        if (t.contains("phases")) {
            rc.train.phases.clear();
            for (const json& ph : t.at("phases")) {
                allow_keys(ph, "train.phases[]", {"name", "epochs", "lr0"});
                PhaseConfig pc;
                pc.name = ph.at("name").get<std::string>();
                pc.epochs = ph.value("epochs", pc.epochs);
                pc.lr0 = ph.value("lr0", pc.lr0);
                rc.train.phases.push_back(pc);
            }
        }
        if (t.contains("distill")) {
            const json& ds = t["distill"];
            allow_keys(ds, "train.distill", {"enabled", "temperature", "lambda"});
            rc.train.distill.enabled = ds.value("enabled", false);
            rc.train.distill.temperature =
                ds.value("temperature", rc.train.distill.temperature);
            rc.train.distill.lambda = ds.value("lambda", rc.train.distill.lambda);
        }
        if (t.contains("augment")) {
            const json& ag = t["augment"];
            allow_keys(ag, "train.augment", {"hflip", "random_crop", "crop_pad"});
            rc.train.augment.hflip = ag.value("hflip", false);
            rc.train.augment.random_crop = ag.value("random_crop", false);
            rc.train.augment.crop_pad = ag.value("crop_pad", rc.train.augment.crop_pad);
        }
    }
    if (rc.train.phases.empty())
        rc.train.phases = default_train_config(rc.train.batch_size).phases;
    rc.train.validate();

    json phases = json::array();
    for (const PhaseConfig& p : rc.train.phases)
        phases.push_back({{"name", p.name}, {"epochs", p.epochs}, {"lr0", p.lr0}});
    json data = rc.source == "synthetic"
                    ? json{{"source", "synthetic"},
                           {"classes", rc.synth.classes},
                           {"train_count", rc.synth.train_count},
                           {"eval_count", rc.synth.eval_count},
                           {"channels", rc.synth.channels},
                           {"height", rc.synth.height},
                           {"width", rc.synth.width},
                           {"separation", rc.synth.separation},
                           {"seed", rc.data_seed}}
                    : json{{"source", "cifar10"},
                           {"train_files", rc.train_files},
                           {"eval_files", rc.eval_files},
                           {"normalize", rc.normalize}};
    rc.resolved = {
        {"arch",
         {{"name", rc.arch_name},
          {"num_classes", rc.num_classes},
          {"width", rc.width},
          {"resolution", rc.resolution}}},
        {"plan",
         {{"mode", quant_mode_name(rc.plan.mode)},
          {"alpha", rc.plan.alpha},
          {"rho", rc.plan.rho},
          {"fc_hidden_rho", rc.plan.fc_hidden_rho},
          {"threshold_factor", rc.plan.threshold_factor}}},
        {"data", std::move(data)},
        {"train",
         {{"phases", std::move(phases)},
          {"batch_size", rc.train.batch_size},
          {"momentum", rc.train.momentum},
          {"weight_decay", rc.train.weight_decay},
          {"warmup_epochs", rc.train.warmup_epochs},
          {"seed", rc.train.seed},
          {"distill",
           {{"enabled", rc.train.distill.enabled},
            {"temperature", rc.train.distill.temperature},
            {"lambda", rc.train.distill.lambda}}},
          {"augment",
           {{"hflip", rc.train.augment.hflip},
            {"random_crop", rc.train.augment.random_crop},
            {"crop_pad", rc.train.augment.crop_pad}}}}},
        {"net_seed", rc.net_seed},
        {"out_dir", rc.out_dir}};
    return rc;
}

std::pair<Dataset, Dataset> load_run_data(const RunConfig& rc) {
    if (rc.source == "synthetic") return generate_synthetic(rc.synth, rc.data_seed);
    Dataset train = load_cifar10_binary(rc.train_files);
    Dataset eval = load_cifar10_binary(rc.eval_files);
    if (rc.normalize) {
        auto [mean, stdev] = channel_stats(train);
        normalize_with(train, mean, stdev);
        normalize_with(eval, mean, stdev);
    }
    return {std::move(train), std::move(eval)};
}

std::string epoch_record_json(const EpochRecord& r) {
    return json{{"record", "epoch"},       {"phase", r.phase},
                {"phase_index", r.phase_index}, {"epoch", r.epoch},
                {"lr", r.lr},              {"mean_loss", r.mean_loss},
                {"eval_accuracy", r.eval_accuracy}}
        .dump();
}

int run_train(const std::string& config_path, const std::string& resume_path,
              int max_phases) {
    const RunConfig rc = parse_run_config(config_path);
    std::cout << "# stnet train " << now_iso8601() << "\n";
    std::cout << "config: " << rc.resolved.dump() << "\n";

    const ArchSpec arch = rc.arch_name == "tinynet"
                              ? build_tinynet(rc.num_classes)
                              : build_mobilenets_v1(rc.width, rc.resolution,
                                                    rc.num_classes);
    auto [train_set, eval_set] = load_run_data(rc);

    std::filesystem::create_directories(rc.out_dir);
    const std::string metrics_path = rc.out_dir + "/metrics.jsonl";

    Network<float> net = Network<float>::instantiate(arch, rc.plan, rc.net_seed);
    int start_phase = 0;
    if (!resume_path.empty()) {
        CheckpointMeta meta;
        net = load_checkpoint(resume_path, &meta);
        start_phase = int(meta.phase_cursor);
        if (start_phase >= int(rc.train.phases.size()))
            throw std::invalid_argument("resume: checkpoint already covers every phase");
        std::cout << "resuming after " << start_phase << " completed phase(s)\n";
    }

    // A resumed run past FP_TRAIN reconstructs the distillation teacher from
    // the phase-0 checkpoint (the snapshot the uninterrupted run would hold).
    Network<float> teacher;
    bool have_teacher = false;
    if (rc.train.distill.enabled && start_phase > 0 &&
        rc.train.phases[0].name == "FP_TRAIN") {
        const std::string t_path =
            rc.out_dir + "/phase0_" + rc.train.phases[0].name + ".ckpt";
        teacher = load_checkpoint(t_path);
        have_teacher = true;
    }

    std::ofstream log(metrics_path, resume_path.empty()
                                        ? std::ios::trunc
                                        : (std::ios::app | std::ios::ate));
    if (!log) throw std::runtime_error("io: cannot open " + metrics_path);
    if (resume_path.empty()) {
        log << json{{"record", "header"},
                    {"tool", "stnet train"},
                    {"started", now_iso8601()}}
                   .dump()
            << "\n";
        log << json{{"record", "config"}, {"config", rc.resolved}}.dump() << "\n";
    }

    const int total = int(rc.train.phases.size());
    const int until = max_phases > 0 ? std::min(total, max_phases) : total;
    double final_acc = 0.0;
    for (int p = start_phase; p < until; ++p) {
        TrainConfig sub = rc.train;
        sub.phases = {rc.train.phases[std::size_t(p)]};
        sub.phase_index_offset = p;
        const TrainResult res =
            train(net, train_set, eval_set, sub, have_teacher ? &teacher : nullptr);
        for (const EpochRecord& r : res.records) log << epoch_record_json(r) << "\n";
        final_acc = res.final_eval_accuracy;
        if (sub.phases[0].name == "FP_TRAIN" && rc.train.distill.enabled) {
            teacher = net.clone();
            have_teacher = true;
        }
        CheckpointMeta meta;
        meta.seed = rc.train.seed;
        meta.phase_cursor = std::uint32_t(p + 1);
        const std::string ckpt_path = rc.out_dir + "/phase" + std::to_string(p) + "_" +
                                      sub.phases[0].name + ".ckpt";
        save_checkpoint(ckpt_path, net, meta);
        std::cout << "phase " << p << " (" << sub.phases[0].name
                  << ") done; checkpoint " << ckpt_path << "\n";
    }
    if (until == total) {
        log << json{{"record", "final"}, {"eval_accuracy", final_acc}}.dump() << "\n";
        std::printf("final eval accuracy: %.4f\n", final_acc);
    } else {
        std::cout << "stopped after phase " << (until - 1) << " of " << total - 1
                  << " (--max-phases)\n";
    }
    std::cout << "metrics log: " << metrics_path << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// verify-strassen

int run_verify(int trials, int h6_trials, std::uint64_t h6_seed, bool tamper) {
    bool all_ok = true;
    SpnTriple canonical = make_canonical_strassen();
    if (tamper && !canonical.Wc.entries.empty())
        canonical.Wc.entries[0] = canonical.Wc.entries[0] == 1 ? -1 : 1;

    const bool basis_ok = verify_spn_exact(canonical);
    std::cout << "canonical-7mult-basis: " << (basis_ok ? "PASS" : "FAIL") << "\n";
    all_ok &= basis_ok;

    std::mt19937_64 rng(0xC0DEULL);
    std::uniform_int_distribution<int> d(-9, 9);
    bool random_ok = true;
    for (int t = 0; t < trials && random_ok; ++t) {
        std::vector<long long> a(4), b(4);
        for (auto& x : a) x = d(rng);
        for (auto& x : b) x = d(rng);
        const std::vector<long long> got = spn_matmul(canonical, a, b);
        for (int i = 0; i < 2 && random_ok; ++i)
            for (int j = 0; j < 2; ++j) {
                const long long want = a[i * 2] * b[j] + a[i * 2 + 1] * b[2 + j];
                if (got[std::size_t(i * 2 + j)] != want) {
                    random_ok = false;
                    break;
                }
            }
    }
    std::cout << "canonical-7mult-random-" << trials << ": "
              << (random_ok ? "PASS" : "FAIL") << "\n";
    all_ok &= random_ok;

    const SpnTriple naive = make_naive_expansion(2, 2, 2);
    const bool naive_ok = naive.h == 8 && verify_spn_exact(naive);
    std::cout << "naive-8mult: " << (naive_ok ? "PASS" : "FAIL") << "\n";
    all_ok &= naive_ok;

    SpnSearchConfig cfg;
    cfg.trials = h6_trials;
    cfg.seed = h6_seed;
    const FilterBankTemplate tmpl = shared_value_template();
    const SpnSearchResult res = search_filter_bank_spn(tmpl, 2, 6, cfg);
    if (res.found) {
        const bool ok = verify_spn_exact(res.spn, tmpl);
        std::cout << "shared-value-6mult: " << (ok ? "PASS" : "FAIL") << " (trial "
                  << res.trial << ", step " << res.step << ")\n";
        all_ok &= ok;
    } else {
        std::cout << "shared-value-6mult: SEARCH-EXHAUSTED (" << h6_trials
                  << " trials)\n";
    }
    return all_ok ? 0 : 1;
}

// ---------------------------------------------------------------------------
// sensitivity

std::vector<int> parse_h_list(const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        try {
            std::size_t pos = 0;
            const int h = std::stoi(tok, &pos);
            if (pos != tok.size()) throw std::invalid_argument(tok);
            out.push_back(h);
        } catch (const std::exception&) {
            throw std::invalid_argument("--h-list: \"" + tok + "\" is not an integer");
        }
    }
    if (out.empty()) throw std::invalid_argument("--h-list: empty list");
    return out;
}

int run_sensitivity(const std::string& h_list, std::size_t pairs, std::uint64_t seed,
                    int restarts, const std::string& builtin,
                    const std::string& filter_file, const std::string& out) {
    SensitivityConfig cfg;
    cfg.h_list = parse_h_list(h_list);
    cfg.num_pairs = pairs;
    cfg.seed = seed;
    cfg.restarts = restarts;
    if (!filter_file.empty()) {
        std::ifstream f(filter_file);
        if (!f) throw std::invalid_argument("--filter-file: cannot open " + filter_file);
        json doc;
        try {
            doc = json::parse(f);
        } catch (const json::exception& e) {
            throw std::invalid_argument("--filter-file: not valid JSON: " +
                                        std::string(e.what()));
        }
        allow_keys(doc, "the filter file", {"m", "k", "n", "b"});
        cfg.m = doc.value("m", 2);
        cfg.k = doc.value("k", 2);
        cfg.n = doc.value("n", 1);
        if (doc.contains("b")) cfg.fixed_b = doc.at("b").get<std::vector<double>>();
    } else if (builtin != "matmul2") {
        throw std::invalid_argument("--builtin: only \"matmul2\" is available");
    }

    const json cfgj = {{"h_list", cfg.h_list}, {"pairs", cfg.num_pairs},
                       {"seed", cfg.seed},     {"restarts", cfg.restarts},
                       {"m", cfg.m},           {"k", cfg.k},
                       {"n", cfg.n},           {"fixed_b", cfg.fixed_b},
                       {"out", out}};
    std::cout << "# stnet sensitivity " << now_iso8601() << "\n";
    std::cout << "config: " << cfgj.dump() << "\n";

    const std::vector<SensitivityPoint> points = sensitivity_experiment(cfg);
    std::string csv = "h,loss,exact\n";
    json rows = json::array();
    char buf[96];
    for (const SensitivityPoint& p : points) {
        std::snprintf(buf, sizeof buf, "%d,%.9e,%d\n", p.h, p.loss, p.exact ? 1 : 0);
        csv += buf;
        rows.push_back({{"h", p.h}, {"loss", p.loss}, {"exact", p.exact}});
    }
    std::cout << csv;
    if (!out.empty()) {
        write_text(out + ".csv", csv);
        write_text(out + ".json",
                   json{{"config", cfgj}, {"points", rows}}.dump(2) + "\n");
        std::cout << "wrote " << out << ".csv and " << out << ".json\n";
    }
    return 0;
}

// ---------------------------------------------------------------------------
// drift

int run_drift(const std::string& before_path, const std::string& after_path,
              const std::string& out) {
    Network<float> before = load_checkpoint(before_path);
    Network<float> after = load_checkpoint(after_path);
    const DriftReport rep = drift_analysis(before, after);

    const json cfgj = {{"before", before_path}, {"after", after_path}, {"out", out}};
    std::cout << "# stnet drift " << now_iso8601() << "\n";
    std::cout << "config: " << cfgj.dump() << "\n";

    const DriftSummary& s = rep.summary;
    std::printf("filters: %zu banks, mean %.6g, stdev %.6g, skewness %.6g, "
                "excess_kurtosis %.6g, max %.6g\n",
                rep.layers.size(), s.mean, s.stdev, s.skewness, s.excess_kurtosis,
                s.hist_max);

    std::string csv = "bin,lower,upper,count\n";
    char buf[128];
    for (std::size_t b = 0; b < s.histogram.size(); ++b) {
        const double lo = s.hist_max * double(b) / 32.0;
        const double hi = s.hist_max * double(b + 1) / 32.0;
        std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%llu\n", b, lo, hi,
                      (unsigned long long)s.histogram[b]);
        csv += buf;
    }
    std::cout << csv;
    if (!out.empty()) {
        json layers = json::array();
        for (const DriftLayer& l : rep.layers)
            layers.push_back({{"layer", l.layer}, {"distances", l.distances}});
        const json doc = {{"summary",
                           {{"mean", s.mean},
                            {"stdev", s.stdev},
                            {"skewness", s.skewness},
                            {"excess_kurtosis", s.excess_kurtosis},
                            {"hist_max", s.hist_max},
                            {"histogram", s.histogram}}},
                          {"layers", std::move(layers)}};
        write_text(out + ".csv", csv);
        write_text(out + ".json", doc.dump(2) + "\n");
        std::cout << "wrote " << out << ".csv and " << out << ".json\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "stnet: cost analysis, training, and verification for ternary "
        "strassenified convolution networks"};
    app.require_subcommand(1);

    CostFlags cf;
    CLI::App* cost = app.add_subcommand("cost", "analytic cost model reports");
    cost->add_option("--arch", cf.arch, "architecture: mobilenet-v1 or tinynet");
    cost->add_option("--width", cf.width, "width multiplier")
        ->check(CLI::Range(0.01, 4.0));
    cost->add_option("--resolution", cf.resolution, "input resolution")
        ->check(CLI::Range(8, 1024));
    cost->add_option("--mode", cf.mode, "fp16|twn|strassen|hybrid|all");
    cost->add_option("--alpha", cf.alpha, "full-precision channel fraction (hybrid)")
        ->check(CLI::Range(0.0, 1.0));
    cost->add_option("--rho", cf.rho, "hidden-width ratio")
        ->check(CLI::Range(1e-6, 64.0));
    cost->add_option("--out", cf.out, "output path prefix (.csv/.json appended)");

    std::string config_path, resume_path;
    int max_phases = 0;
    CLI::App* tr = app.add_subcommand("train", "run the phased training schedule");
    tr->add_option("--config", config_path, "run configuration (JSON)")->required();
    tr->add_option("--resume", resume_path, "checkpoint to continue from");
    tr->add_option("--max-phases", max_phases,
                   "stop after this many phases (0 = run all; for testing resume)");

    int vs_trials = 1000, h6_trials = SpnSearchConfig{}.trials;
    std::uint64_t h6_seed = SpnSearchConfig{}.seed;
    bool tamper = false;
    CLI::App* vs = app.add_subcommand("verify-strassen",
                                      "exactness checks for the SPN constructions");
    vs->add_option("--trials", vs_trials, "random integer matmul trials")
        ->check(CLI::Range(1, 1000000));
    vs->add_option("--h6-trials", h6_trials, "search restarts for the 6-mult bank")
        ->check(CLI::Range(0, 10000));
    vs->add_option("--h6-seed", h6_seed, "search seed for the 6-mult bank");
    vs->add_flag("--tamper", tamper, "corrupt one canonical constant (self-test hook)");

    std::string h_list = "2,3,4,5,6,7,8", builtin = "matmul2", filter_file, sens_out;
    std::size_t pairs = SensitivityConfig{}.num_pairs;
    std::uint64_t sens_seed = 1;
    int restarts = SensitivityConfig{}.restarts;
    CLI::App* se = app.add_subcommand("sensitivity",
                                      "hidden-width sweep on a bilinear target");
    se->add_option("--h-list", h_list, "comma-separated hidden widths");
    se->add_option("--pairs", pairs, "training pairs per width")
        ->check(CLI::Range(std::size_t(8), std::size_t(10000000)));
    se->add_option("--seed", sens_seed, "experiment seed");
    se->add_option("--restarts", restarts, "random restarts per width")
        ->check(CLI::Range(1, 1000));
    CLI::Option* ob = se->add_option("--builtin", builtin, "built-in target: matmul2");
    se->add_option("--filter-file", filter_file,
                   "JSON {m,k,n,b} fixing the right factor")
        ->excludes(ob);
    se->add_option("--out", sens_out, "output path prefix (.csv/.json appended)");

    std::string before_path, after_path, drift_out;
    CLI::App* dr = app.add_subcommand("drift",
                                      "per-filter distance between two checkpoints");
    dr->add_option("--before", before_path, "earlier checkpoint")->required();
    dr->add_option("--after", after_path, "later checkpoint")->required();
    dr->add_option("--out", drift_out, "output path prefix (.csv/.json appended)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    if (cost->parsed()) return guarded([&] { return run_cost(cf); });
    if (tr->parsed())
        return guarded([&] { return run_train(config_path, resume_path, max_phases); });
    if (vs->parsed())
        return guarded([&] { return run_verify(vs_trials, h6_trials, h6_seed, tamper); });
    if (se->parsed())
        return guarded([&] {
            return run_sensitivity(h_list, pairs, sens_seed, restarts, builtin,
                                   filter_file, sens_out);
        });
    if (dr->parsed())
        return guarded(
            [&] { return run_drift(before_path, after_path, drift_out); });
    return 2;  // unreachable: require_subcommand enforces one
}
