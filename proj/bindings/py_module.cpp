#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "kgfuse/common.hpp"
#include "kgfuse/config.hpp"
#include "kgfuse/evalkit.hpp"
#include "kgfuse/kg.hpp"
#include "kgfuse/objectives.hpp"
#include "kgfuse/pipeline.hpp"
#include "kgfuse/synth.hpp"

namespace py = pybind11;
using namespace kgfuse;

namespace {

QaDataset py_generate_qa(const KgSource& source, const TemplateRegistry& registry, int m,
                         uint64_t seed, bool same_relation_distractors) {
    SeededRng rng(seed);
    return generate_qa(source, registry, m, rng, same_relation_distractors);
}

std::string py_render_question(const Triple& triple, const TemplateRegistry& registry,
                               uint64_t seed) {
    SeededRng rng(seed);
    return render_question(triple, registry, rng);
}

std::pair<QaDataset, QaDataset> py_split(const QaDataset& ds, double valid_fraction,
                                         uint64_t seed) {
    SeededRng rng(seed);
    return split(ds, valid_fraction, rng);
}

double py_ranking_loss(const std::vector<double>& scores, int label, double margin) {
    ScoredOptions scored;
    scored.scores = scores;
    scored.token_counts.assign(scores.size(), 1);
    RankingHyper hyper;
    hyper.margin = margin;
    hyper.option_count = static_cast<int>(scores.size());
    return ranking_loss(scored, label, hyper);
}

int py_predict(const std::vector<double>& scores) {
    ScoredOptions scored;
    scored.scores = scores;
    scored.token_counts.assign(scores.size(), 1);
    return predict(scored);
}

double py_interference(const std::vector<std::vector<PredictionRecord>>& stl,
                       const std::vector<PredictionRecord>& multi) {
    InterferenceInput input;
    input.stl_records = stl;
    input.multi_records = multi;
    return interference_ratio(input);
}

std::map<std::string, std::string> py_run_algorithm1(const std::string& config_path,
                                                     bool resume) {
    ExperimentConfig config = ExperimentConfig::from_file(config_path);
    ArtifactBundle bundle = run_algorithm1(config, resume);
    std::map<std::string, std::string> out;
    out["backbone"] = bundle.backbone_dir;
    for (const auto& [kg, dir] : bundle.expert_dirs) out["expert:" + kg] = dir;
    out["kgc"] = bundle.kgc_dir;
    out["fusion"] = bundle.fusion_dir;
    return out;
}

py::tuple py_evaluate(const std::string& config_path, const std::string& model_ref,
                      const std::string& dataset_path) {
    ExperimentConfig config = ExperimentConfig::from_file(config_path);
    LoadedModel model = load_model(config, model_ref);
    QaDataset dataset = read_qa_jsonl(dataset_path);
    ScoringOpts opts;
    opts.answer_only = config.answer_only_scoring;
    EvalResult result = evaluate(model.view, model.tokenizer, dataset, model_ref, opts);
    return py::make_tuple(result.accuracy, result.records);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "kgfuse: modular zero-shot QA over multiple knowledge graphs";

    py::register_exception<kgfuse::Error>(m, "KgfuseError");

    py::class_<Triple>(m, "Triple")
        .def(py::init<std::string, std::string, std::string>(), py::arg("head"),
             py::arg("relation"), py::arg("tail"))
        .def_readwrite("head", &Triple::head)
        .def_readwrite("relation", &Triple::relation)
        .def_readwrite("tail", &Triple::tail)
        .def("__repr__", [](const Triple& t) {
            return "Triple(" + t.head + ", " + t.relation + ", " + t.tail + ")";
        });

    py::class_<KgSource>(m, "KgSource")
        .def_readonly("name", &KgSource::name)
        .def_readonly("triples", &KgSource::triples)
        .def_readonly("relation_set", &KgSource::relation_set)
        .def("__len__", [](const KgSource& s) { return s.triples.size(); });

    py::class_<TemplateRegistry>(m, "TemplateRegistry")
        .def_readonly("mask_token", &TemplateRegistry::mask_token)
        .def_readonly("name_pool", &TemplateRegistry::name_pool)
        .def("has", &TemplateRegistry::has)
        .def("prefix", &TemplateRegistry::prefix)
        .def("add", &TemplateRegistry::add)
        .def("to_json", &TemplateRegistry::to_json)
        .def_static("from_json", &TemplateRegistry::from_json);

    py::class_<QaSample>(m, "QaSample")
        .def_readonly("id", &QaSample::id)
        .def_readonly("question", &QaSample::question)
        .def_readonly("options", &QaSample::options)
        .def_readonly("label", &QaSample::label)
        .def_readonly("kg", &QaSample::kg);

    py::class_<QaDataset>(m, "QaDataset")
        .def_readonly("kg", &QaDataset::kg)
        .def_readonly("samples", &QaDataset::samples)
        .def("__len__", [](const QaDataset& d) { return d.samples.size(); });

    py::class_<KgcSample>(m, "KgcSample")
        .def_readonly("id", &KgcSample::id)
        .def_readonly("statement", &KgcSample::statement)
        .def_readonly("kg_label", &KgcSample::kg_label)
        .def_readonly("kg", &KgcSample::kg);

    py::class_<PredictionRecord>(m, "PredictionRecord")
        .def(py::init([](std::string id, int gold, int pred) {
                 PredictionRecord r;
                 r.id = std::move(id);
                 r.gold = gold;
                 r.pred = pred;
                 return r;
             }),
             py::arg("id"), py::arg("gold"), py::arg("pred"))
        .def_readwrite("id", &PredictionRecord::id)
        .def_readwrite("gold", &PredictionRecord::gold)
        .def_readwrite("pred", &PredictionRecord::pred)
        .def_readwrite("scores", &PredictionRecord::scores)
        .def_readwrite("model", &PredictionRecord::model);

    m.def("load_triples", &load_triples, py::arg("path"), py::arg("kg_name"));
    m.def("default_templates", &default_templates);
    m.def("render_question", &py_render_question, py::arg("triple"), py::arg("registry"),
          py::arg("seed") = 0);
    m.def("generate_qa", &py_generate_qa, py::arg("source"), py::arg("registry"), py::arg("m"),
          py::arg("seed") = 0, py::arg("same_relation_distractors") = false);
    m.def(
        "derive_kgc",
        [](const std::vector<QaDataset>& datasets, const std::string& mask_token) {
            return derive_kgc(datasets, mask_token);
        },
        py::arg("datasets"), py::arg("mask_token") = "[MASK]");
    m.def(
        "build_fusion_mixture",
        [](const std::vector<QaDataset>& datasets, size_t per_kg_count, uint64_t seed) {
            return build_fusion_mixture(datasets, MixtureSpec{per_kg_count, seed});
        },
        py::arg("datasets"), py::arg("per_kg_count"), py::arg("seed") = 0);
    m.def("split_dataset", &py_split, py::arg("dataset"), py::arg("valid_fraction"),
          py::arg("seed") = 0);
    m.def("write_qa_jsonl", &write_qa_jsonl, py::arg("dataset"), py::arg("path"));
    m.def("read_qa_jsonl", &read_qa_jsonl, py::arg("path"));

    m.def("ranking_loss", &py_ranking_loss, py::arg("scores"), py::arg("label"),
          py::arg("margin") = 1.0);
    m.def("predict_option", &py_predict, py::arg("scores"));
    m.def("kgc_loss", &kgc_loss, py::arg("y_hat"), py::arg("y_onehot"));
    m.def("interference_ratio", &py_interference, py::arg("stl_records"),
          py::arg("multi_records"));
    m.def(
        "relative_improvement",
        [](const std::vector<std::tuple<std::string, std::vector<std::string>, std::string,
                                        double>>& entries,
           const std::string& baseline_family) {
            std::vector<ResultEntry> results;
            for (const auto& [model, kgs, benchmark, acc] : entries)
                results.push_back({model, kgs, benchmark, acc});
            std::vector<std::tuple<std::string, std::vector<std::string>, std::string, double>>
                out;
            for (const auto& c : relative_improvement(results, baseline_family))
                out.emplace_back(c.model, c.kgs, c.benchmark, c.points);
            return out;
        },
        py::arg("results"), py::arg("baseline_family"),
        "entries are (model, kgs, benchmark, accuracy); returns points cells");

    m.def("run_algorithm1", &py_run_algorithm1, py::arg("config_path"),
          py::arg("resume") = false,
          py::call_guard<py::gil_scoped_release>());
    m.def("evaluate_checkpoint", &py_evaluate, py::arg("config_path"), py::arg("model_ref"),
          py::arg("dataset_path"));

    m.attr("__version__") = "0.1.0";
}
