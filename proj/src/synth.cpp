#include "kgfuse/synth.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>

#include "kgfuse/common.hpp"

namespace kgfuse {

using nlohmann::json;

void validate(const QaSample& s) {
    if (s.options.size() < 2) throw Error("sample '" + s.id + "': needs at least 2 options");
    if (s.label < 0 || s.label >= static_cast<int>(s.options.size()))
        throw Error("sample '" + s.id + "': label out of range");
    for (size_t i = 0; i < s.options.size(); ++i)
        for (size_t j = i + 1; j < s.options.size(); ++j)
            if (s.options[i] == s.options[j])
                throw Error("sample '" + s.id + "': duplicate options");
    if (s.question.empty()) throw Error("sample '" + s.id + "': empty question");
}

std::string fill_option(const std::string& question, const std::string& option,
                        const std::string& mask_token) {
    if (option.empty()) throw Error("empty answer option");
    if (question.find(mask_token) != std::string::npos)
        return replace_all(question, mask_token, option);
    return question + " " + option;
}

QaDataset generate_qa(const KgSource& source, const TemplateRegistry& registry, int m,
                      SeededRng& rng, bool same_relation_distractors) {
    if (m < 2) throw Error("generate_qa: option count must be at least 2");
    std::set<std::string> distinct_tails;
    for (const auto& t : source.triples) distinct_tails.insert(t.tail);
    if (distinct_tails.size() < static_cast<size_t>(m))
        throw Error("KG '" + source.name + "' has only " +
                    std::to_string(distinct_tails.size()) + " distinct tails, need " +
                    std::to_string(m));
    for (const auto& rel : source.relation_set)
        if (!registry.has(rel))
            throw Error("KG '" + source.name + "': unregistered relation '" + rel + "'");

    constexpr int kRetryCap = 1000;
    QaDataset ds;
    ds.kg = source.name;
    ds.samples.reserve(source.triples.size());
    for (size_t i = 0; i < source.triples.size(); ++i) {
        const Triple& t = source.triples[i];
        QaSample s;
        s.id = "qa-" + source.name + "-" + std::to_string(i);
        s.kg = source.name;
        s.question = render_question(t, registry, rng);

        std::vector<std::string> opts{t.tail};
        int retries = 0;
        while (static_cast<int>(opts.size()) < m) {
            size_t j = static_cast<size_t>(rng.uniform_int(source.triples.size()));
            const Triple& other = source.triples[j];
            bool ok = j != i && other.tail != t.tail &&
                      std::find(opts.begin(), opts.end(), other.tail) == opts.end();
            if (ok && same_relation_distractors && other.relation != t.relation) ok = false;
            if (ok) {
                opts.push_back(other.tail);
            } else if (++retries > kRetryCap) {
                throw Error("KG '" + source.name + "': could not sample " + std::to_string(m - 1) +
                            " distinct distractors for triple " + std::to_string(i));
            }
        }
        // Shuffle option order; the gold index is wherever the tail landed.
        rng.shuffle(opts);
        s.options = opts;
        s.label = static_cast<int>(
            std::find(opts.begin(), opts.end(), t.tail) - opts.begin());
        validate(s);
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

std::vector<KgcSample> derive_kgc(const std::vector<QaDataset>& datasets,
                                  const std::string& mask_token) {
    std::set<std::string> seen;
    for (const auto& d : datasets) {
        if (d.kg == "mixture") throw Error("derive_kgc: mixture datasets are not allowed");
        if (!seen.insert(d.kg).second) throw Error("derive_kgc: duplicate KG tag '" + d.kg + "'");
    }
    std::vector<KgcSample> out;
    for (size_t k = 0; k < datasets.size(); ++k) {
        for (const auto& s : datasets[k].samples) {
            KgcSample g;
            g.id = "kgc-" + s.id;
            g.kg = datasets[k].kg;
            g.kg_label = static_cast<int>(k);
            g.statement =
                fill_option(s.question, s.options[static_cast<size_t>(s.label)], mask_token);
            if (g.statement.empty() || g.statement.back() != '.') g.statement += ".";
            out.push_back(std::move(g));
        }
    }
    return out;
}

QaDataset build_fusion_mixture(const std::vector<QaDataset>& datasets, const MixtureSpec& spec) {
    if (spec.per_kg_count == 0) throw Error("mixture: per_kg_count must be positive");
    SeededRng rng(derive_seed(spec.seed, "mixture"));
    QaDataset mix;
    mix.kg = "mixture";
    for (const auto& d : datasets) {
        if (d.samples.size() <= spec.per_kg_count) {
            // Shortfall: the whole dataset contributes.
            for (const auto& s : d.samples) mix.samples.push_back(s);
        } else {
            auto idx = rng.sample_without_replacement(d.samples.size(), spec.per_kg_count);
            std::sort(idx.begin(), idx.end());
            for (size_t i : idx) mix.samples.push_back(d.samples[i]);
        }
    }
    rng.shuffle(mix.samples);
    return mix;
}

std::pair<QaDataset, QaDataset> split(const QaDataset& dataset, double valid_fraction,
                                      SeededRng& rng) {
    if (!(valid_fraction > 0.0 && valid_fraction < 1.0))
        throw Error("split: valid_fraction must be in (0, 1)");
    std::vector<size_t> order(dataset.samples.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    const size_t n_valid =
        static_cast<size_t>(static_cast<double>(dataset.samples.size()) * valid_fraction);
    QaDataset train, valid;
    train.kg = valid.kg = dataset.kg;
    for (size_t i = 0; i < order.size(); ++i)
        (i < n_valid ? valid : train).samples.push_back(dataset.samples[order[i]]);
    return {std::move(train), std::move(valid)};
}

// --- JSONL ---

void write_qa_jsonl(const QaDataset& ds, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write '" + path + "'");
    for (const auto& s : ds.samples) {
        json j{{"id", s.id},
               {"question", s.question},
               {"options", s.options},
               {"label", s.label},
               {"kg", s.kg}};
        out << j.dump() << "\n";
    }
}

QaDataset read_qa_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open dataset '" + path + "'");
    QaDataset ds;
    std::string line;
    long line_no = 0;
    std::set<std::string> kgs, ids;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        QaSample s;
        try {
            json j = json::parse(line);
            s.id = j.at("id").get<std::string>();
            s.question = j.at("question").get<std::string>();
            s.options = j.at("options").get<std::vector<std::string>>();
            s.label = j.at("label").get<int>();
            s.kg = j.at("kg").get<std::string>();
        } catch (const json::exception& e) {
            throw ParseError(path, line_no, e.what());
        }
        try {
            validate(s);
        } catch (const Error& e) {
            throw ParseError(path, line_no, e.what());
        }
        if (!ids.insert(s.id).second) throw ParseError(path, line_no, "duplicate id '" + s.id + "'");
        kgs.insert(s.kg);
        ds.samples.push_back(std::move(s));
    }
    if (ds.samples.empty()) throw Error("empty dataset '" + path + "'");
    ds.kg = kgs.size() == 1 ? *kgs.begin() : "mixture";
    return ds;
}

void write_kgc_jsonl(const std::vector<KgcSample>& samples, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write '" + path + "'");
    for (const auto& s : samples) {
        json j{{"id", s.id}, {"statement", s.statement}, {"kg_label", s.kg_label}, {"kg", s.kg}};
        out << j.dump() << "\n";
    }
}

std::vector<KgcSample> read_kgc_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open dataset '" + path + "'");
    std::vector<KgcSample> out;
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        KgcSample s;
        try {
            json j = json::parse(line);
            s.id = j.at("id").get<std::string>();
            s.statement = j.at("statement").get<std::string>();
            s.kg_label = j.at("kg_label").get<int>();
            s.kg = j.at("kg").get<std::string>();
        } catch (const json::exception& e) {
            throw ParseError(path, line_no, e.what());
        }
        out.push_back(std::move(s));
    }
    if (out.empty()) throw Error("empty dataset '" + path + "'");
    return out;
}

std::string format_stats_table(const std::vector<KgCounts>& rows) {
    size_t name_w = 2;
    for (const auto& r : rows) name_w = std::max(name_w, r.kg.size());
    std::ostringstream os;
    os << std::left;
    auto line = [&](const std::string& kg, const std::string& tr, const std::string& va,
                    const std::string& to) {
        os.width(static_cast<std::streamsize>(name_w + 2));
        os << kg;
        os.width(12);
        os << tr;
        os.width(12);
        os << va;
        os << to << "\n";
    };
    line("KG", "Train", "Validation", "Total");
    size_t tt = 0, tv = 0;
    for (const auto& r : rows) {
        line(r.kg, std::to_string(r.train), std::to_string(r.valid),
             std::to_string(r.train + r.valid));
        tt += r.train;
        tv += r.valid;
    }
    line("Whole", std::to_string(tt), std::to_string(tv), std::to_string(tt + tv));
    return os.str();
}

}  // namespace kgfuse
