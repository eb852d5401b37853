#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>

#include "kgfuse/checkpoint.hpp"
#include "kgfuse/common.hpp"
#include "kgfuse/config.hpp"
#include "kgfuse/evalkit.hpp"
#include "kgfuse/pipeline.hpp"
#include "kgfuse/synth.hpp"

namespace fs = std::filesystem;
using namespace kgfuse;

namespace {

struct CommonOpts {
    std::string config_path;
    uint64_t seed_override = 0;
    bool has_seed_override = false;
    std::string query_mode;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--config", opts.config_path, "experiment config JSON")->required();
    cmd->add_option("--seed-override", opts.seed_override, "replace the config seed")
        ->each([&](const std::string&) { opts.has_seed_override = true; });
    cmd->add_option("--query-mode", opts.query_mode, "fusion query source")
        ->check(CLI::IsMember({"plm", "kgc"}));
}

ExperimentConfig load_config(const CommonOpts& opts) {
    ExperimentConfig config = ExperimentConfig::from_file(opts.config_path);
    if (const char* root = std::getenv("KGFUSE_OUTPUT_ROOT"); root && *root)
        config.output_root = root;
    if (opts.has_seed_override) config.seed = opts.seed_override;
    if (opts.query_mode == "plm") config.query_mode = QueryMode::plm;
    if (opts.query_mode == "kgc") config.query_mode = QueryMode::kgc;
    config.validate(false);
    return config;
}

int cmd_generate(const CommonOpts& opts, const std::string& which, bool force) {
    ExperimentConfig config = load_config(opts);
    config.validate(true);
    // The three artifact families come from one deterministic generation pass;
    // `which` restricts what gets reported, the files are rebuilt together.
    auto counts = generate_data(config, force);
    if (which == "qa" || which.empty()) {
        std::cout << format_stats_table(counts);
    } else if (which == "kgc") {
        const auto train = read_kgc_jsonl(config.kgc_path("train"));
        const auto valid = read_kgc_jsonl(config.kgc_path("valid"));
        std::cout << "kgc.train " << train.size() << "\nkgc.valid " << valid.size() << "\n";
    } else if (which == "mixture") {
        const auto train = read_qa_jsonl(config.mixture_path("train"));
        const auto valid = read_qa_jsonl(config.mixture_path("valid"));
        std::cout << "mixture.train " << train.size() << "\nmixture.valid " << valid.size()
                  << "\n";
    }
    std::cout << "data written under " << config.data_dir() << "\n";
    return 0;
}

int cmd_train(const CommonOpts& opts, const std::string& stage, bool resume) {
    ExperimentConfig config = load_config(opts);
    const std::string dir = run_stage(config, stage, resume, &std::cout);
    std::cout << "checkpoint: " << dir << "\n";
    return 0;
}

int cmd_run_all(const CommonOpts& opts, bool resume) {
    ExperimentConfig config = load_config(opts);
    ArtifactBundle bundle = run_algorithm1(config, resume, &std::cout);
    std::cout << "backbone: " << bundle.backbone_dir << "\n";
    for (const auto& [kg, dir] : bundle.expert_dirs) std::cout << "expert " << kg << ": " << dir
                                                               << "\n";
    std::cout << "kgc: " << bundle.kgc_dir << "\nfusion: " << bundle.fusion_dir << "\n";
    return 0;
}

struct EvalOpts {
    std::string model_ref;
    std::string dataset_path;
    std::string predictions_out;
    std::string attention_out;
    std::string embeddings_out;
    std::vector<std::string> interference_stl;
    std::string interference_multi;
    std::string improvement_results;
    std::string improvement_family = "stl-adapter";
    std::string improvement_out;
};

int cmd_eval(const CommonOpts& opts, const EvalOpts& ev) {
    ExperimentConfig config = load_config(opts);

    if (!ev.improvement_results.empty()) {
        auto cells =
            relative_improvement(read_results_json(ev.improvement_results), ev.improvement_family);
        const std::string out = ev.improvement_out.empty()
                                    ? config.metrics_dir() + "/improvement.csv"
                                    : ev.improvement_out;
        fs::create_directories(fs::path(out).parent_path());
        write_improvement_csv(cells, out);
        std::cout << "improvement grid: " << out << "\n";
        if (ev.model_ref.empty()) return 0;
    }

    if (!ev.interference_stl.empty() || !ev.interference_multi.empty()) {
        if (ev.interference_stl.size() < 2 || ev.interference_multi.empty())
            throw ConfigError(
                "interference needs at least two --interference-stl files and one "
                "--interference-multi file");
        InterferenceInput input;
        for (const auto& p : ev.interference_stl)
            input.stl_records.push_back(read_predictions_jsonl(p));
        input.multi_records = read_predictions_jsonl(ev.interference_multi);
        std::cout << "interference_ratio " << std::fixed << std::setprecision(4)
                  << interference_ratio(input) << "\n";
        if (ev.model_ref.empty()) return 0;
    }

    if (ev.model_ref.empty())
        throw ConfigError("eval: --model is required unless only report extras are requested");
    if (ev.dataset_path.empty()) throw ConfigError("eval: --dataset is required");
    if (!fs::exists(ev.dataset_path))
        throw ConfigError("eval: dataset '" + ev.dataset_path + "' does not exist");

    LoadedModel model = load_model(config, ev.model_ref);
    fs::create_directories(config.metrics_dir());

    if (ev.model_ref == "kgc") {
        auto data = read_kgc_jsonl(ev.dataset_path);
        const double acc =
            evaluate_kgc(model.backbone, model.kgc_adapter, model.kgc_head, model.tokenizer, data);
        std::cout << "accuracy " << std::fixed << std::setprecision(4) << acc << "\n";
        return 0;
    }

    QaDataset dataset = read_qa_jsonl(ev.dataset_path);
    ScoringOpts sopts;
    sopts.answer_only = config.answer_only_scoring;
    EvalResult result = evaluate(model.view, model.tokenizer, dataset, ev.model_ref, sopts);
    std::cout << "accuracy " << std::fixed << std::setprecision(4) << result.accuracy << "\n";

    std::string tag = ev.model_ref;
    for (char& c : tag)
        if (c == ':') c = '-';
    const std::string pred_out = ev.predictions_out.empty()
                                     ? config.metrics_dir() + "/" + tag + ".predictions.jsonl"
                                     : ev.predictions_out;
    write_predictions_jsonl(result.records, pred_out);
    std::cout << "predictions: " << pred_out << "\n";

    if (!ev.attention_out.empty()) {
        write_attention_csv(attention_dump(model.view, model.tokenizer, dataset),
                            ev.attention_out);
        std::cout << "attention: " << ev.attention_out << "\n";
    }
    if (!ev.embeddings_out.empty()) {
        write_embeddings_csv(export_cls_embeddings(model.view, model.tokenizer, dataset),
                             ev.embeddings_out);
        std::cout << "embeddings: " << ev.embeddings_out << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"kgfuse: modular zero-shot QA over multiple knowledge graphs"};
    app.require_subcommand(1);

    CommonOpts gen_opts, train_opts, run_opts, eval_opts_c;
    std::string gen_which = "qa";
    bool gen_force = false;
    auto* gen = app.add_subcommand("generate", "build synthetic QA / KGC / mixture datasets");
    add_common(gen, gen_opts);
    gen->add_option("--which", gen_which, "which stats to report")
        ->check(CLI::IsMember({"qa", "kgc", "mixture"}));
    gen->add_flag("--force", gen_force, "overwrite existing dataset files");

    std::string train_stage;
    bool train_resume = false;
    auto* train = app.add_subcommand("train", "run one training stage");
    add_common(train, train_opts);
    train->add_option("--stage", train_stage,
                      "backbone | expert:<kg> | kgc | fusion | stl-plm:<kg> | mtl")
        ->required();
    train->add_flag("--resume", train_resume, "skip when already complete");

    bool run_resume = false;
    auto* runall = app.add_subcommand("run-all", "generate data and train the full framework");
    add_common(runall, run_opts);
    runall->add_flag("--resume", run_resume, "skip completed stages");

    EvalOpts ev;
    auto* eval = app.add_subcommand("eval", "evaluate checkpoints, dump analysis files");
    add_common(eval, eval_opts_c);
    eval->add_option("--model", ev.model_ref, "backbone|expert:<kg>|kgc|fusion|stl-plm:<kg>|mtl");
    eval->add_option("--dataset", ev.dataset_path, "QA (or KGC) JSONL file");
    eval->add_option("--predictions", ev.predictions_out, "predictions JSONL output");
    eval->add_option("--attention", ev.attention_out, "fusion attention CSV output");
    eval->add_option("--embeddings", ev.embeddings_out, "CLS embedding CSV output");
    eval->add_option("--interference-stl", ev.interference_stl,
                     "STL prediction files (repeat; needs >= 2)");
    eval->add_option("--interference-multi", ev.interference_multi,
                     "multi-KG prediction file");
    eval->add_option("--improvement", ev.improvement_results,
                     "results JSON for the relative-improvement grid");
    eval->add_option("--baseline-family", ev.improvement_family,
                     "baseline model tag for the grid");
    eval->add_option("--improvement-out", ev.improvement_out, "grid CSV output");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (gen->parsed()) return cmd_generate(gen_opts, gen_which, gen_force);
        if (train->parsed()) return cmd_train(train_opts, train_stage, train_resume);
        if (runall->parsed()) return cmd_run_all(run_opts, run_resume);
        if (eval->parsed()) return cmd_eval(eval_opts_c, ev);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
