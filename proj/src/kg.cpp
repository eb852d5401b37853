#include "kgfuse/kg.hpp"

#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "kgfuse/common.hpp"

namespace kgfuse {

using nlohmann::json;

bool TemplateRegistry::has(const std::string& relation) const {
    for (const auto& [rel, pre] : entries)
        if (rel == relation) return true;
    return false;
}

const std::string& TemplateRegistry::prefix(const std::string& relation) const {
    for (const auto& [rel, pre] : entries)
        if (rel == relation) return pre;
    throw Error("unregistered relation '" + relation + "'");
}

PrefixStyle TemplateRegistry::style(const std::string& relation) const {
    const std::string& pre = prefix(relation);
    size_t first = pre.find(mask_token);
    if (first == std::string::npos) return PrefixStyle::event;
    if (pre.find(mask_token, first + mask_token.size()) != std::string::npos)
        throw Error("prefix for '" + relation + "' contains more than one mask slot");
    return PrefixStyle::cloze;
}

void TemplateRegistry::add(const std::string& relation, const std::string& prefix) {
    for (auto& [rel, pre] : entries) {
        if (rel == relation) {
            pre = prefix;
            return;
        }
    }
    entries.emplace_back(relation, prefix);
}

std::string TemplateRegistry::to_json() const {
    json j;
    json rels = json::object();
    for (const auto& [rel, pre] : entries) rels[rel] = pre;
    j["relations"] = rels;
    j["mask_token"] = mask_token;
    j["name_pool"] = name_pool;
    return j.dump(2);
}

TemplateRegistry TemplateRegistry::from_json(const std::string& text) {
    json j = json::parse(text);
    TemplateRegistry r;
    r.mask_token = j.at("mask_token").get<std::string>();
    r.name_pool = j.at("name_pool").get<std::vector<std::string>>();
    for (auto& [rel, pre] : j.at("relations").items())
        r.entries.emplace_back(rel, pre.get<std::string>());
    return r;
}

KgSource load_triples(const std::string& path, const std::string& kg_name) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open triple file '" + path + "'");
    KgSource src;
    src.name = kg_name;
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        std::vector<std::string> fields;
        size_t start = 0;
        while (true) {
            size_t tab = line.find('\t', start);
            if (tab == std::string::npos) {
                fields.push_back(line.substr(start));
                break;
            }
            fields.push_back(line.substr(start, tab - start));
            start = tab + 1;
        }
        if (fields.size() != 3)
            throw ParseError(path, line_no,
                             "expected 3 tab-separated fields, got " +
                                 std::to_string(fields.size()));
        Triple t{trim(fields[0]), trim(fields[1]), trim(fields[2])};
        if (t.head.empty() || t.relation.empty() || t.tail.empty())
            throw ParseError(path, line_no, "empty field in triple");
        src.relation_set.insert(t.relation);
        src.triples.push_back(std::move(t));
    }
    if (src.triples.empty()) throw Error("empty KG source '" + path + "'");
    return src;
}

TemplateRegistry default_templates() {
    TemplateRegistry r;
    r.mask_token = "[MASK]";
    r.name_pool = {"Dana",  "Alex",   "Riley", "Jordan", "Taylor", "Casey",  "Morgan", "Jamie",
                   "Quinn", "Avery",  "Skyler", "Rowan",  "Harper", "Emerson", "Finley", "Sage",
                   "Reese", "Parker", "Drew",  "Blake",  "Kendall", "Logan",  "Micah",  "Devon"};
    r.add("xAttr", ". PersonX is seen as");
    r.add("xIntent", ". Before, PersonX wanted");
    r.add("xNeed", ". Before, PersonX needed to");
    r.add("xReact", ". As a result, PersonX felt");
    r.add("xWant", ". As a result, PersonX wanted to");
    r.add("xEffect", ". PersonX then");
    r.add("oReact", ". As a result, others felt");
    r.add("oWant", ". As a result, others wanted to");
    r.add("oEffect", ". Others then");
    r.add("Causes", "can cause [MASK]");
    r.add("UsedFor", "can be used for [MASK]");
    r.add("CapableOf", "is capable of [MASK]");
    r.add("CausesDesire", "causes desire for [MASK]");
    r.add("IsA", "is a [MASK]");
    r.add("SymbolOf", "is a symbol of [MASK]");
    r.add("MadeOf", "can be made of [MASK]");
    r.add("LocatedNear", "is often located near [MASK]");
    r.add("Desires", "desires [MASK]");
    r.add("AtLocation", "can be found at [MASK]");
    r.add("HasProperty", "has property [MASK]");
    r.add("PartOf", "is part of [MASK]");
    r.add("HasFirstSubevent", "starts by [MASK]");
    r.add("HasLastSubevent", "ends by [MASK]");
    return r;
}

std::string render_question(const Triple& triple, const TemplateRegistry& registry,
                            SeededRng& rng) {
    const std::string& pre = registry.prefix(triple.relation);
    const PrefixStyle st = registry.style(triple.relation);
    std::string head = trim(triple.head);

    if (st == PrefixStyle::cloze) return head + " " + pre;

    // Event style. The prefix supplies the sentence boundary, so a head that
    // already ends with a period would double it.
    std::string joined;
    if (!head.empty() && head.back() == '.' && !pre.empty() && pre.front() == '.')
        joined = head + pre.substr(1);
    else
        joined = head + pre;

    static const char* kPlaceholders[] = {"PersonX", "PersonY", "PersonZ"};
    std::vector<std::string> pool = registry.name_pool;
    for (const char* ph : kPlaceholders) {
        if (joined.find(ph) == std::string::npos) continue;
        if (pool.empty()) throw Error("name pool exhausted while rendering '" + triple.head + "'");
        size_t pick = static_cast<size_t>(rng.uniform_int(pool.size()));
        std::string name = pool[static_cast<size_t>(pick)];
        pool.erase(pool.begin() + static_cast<long>(pick));
        joined = replace_all(joined, ph, name);
    }
    return joined;
}

}  // namespace kgfuse
