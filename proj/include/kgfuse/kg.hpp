#pragma once

#include <set>
#include <string>
#include <vector>

#include "kgfuse/rng.hpp"

namespace kgfuse {

struct Triple {
    std::string head;
    std::string relation;
    std::string tail;
};

struct KgSource {
    std::string name;
    std::vector<Triple> triples;
    std::set<std::string> relation_set;
};

// Relation prefixes come in two shapes. Event-style prefixes are appended
// after the head sentence and carry no mask slot (". PersonX is seen as");
// concept-style prefixes contain exactly one mask slot ("is a [MASK]").
enum class PrefixStyle { event, cloze };

struct TemplateRegistry {
    std::vector<std::pair<std::string, std::string>> entries;  // relation -> prefix, ordered
    std::string mask_token = "[MASK]";
    std::vector<std::string> name_pool;

    bool has(const std::string& relation) const;
    const std::string& prefix(const std::string& relation) const;  // throws if unregistered
    PrefixStyle style(const std::string& relation) const;
    void add(const std::string& relation, const std::string& prefix);

    std::string to_json() const;
    static TemplateRegistry from_json(const std::string& text);
};

// Parses a UTF-8 TSV file (head \t relation \t tail, one triple per line).
// Malformed lines and empty files are hard errors so KG coverage loss cannot
// pass silently.
KgSource load_triples(const std::string& path, const std::string& kg_name);

// The built-in relation->prefix table plus a default mask token and name pool.
TemplateRegistry default_templates();

// Renders the question stem for (head, relation). Event-style: head sentence
// followed by the prefix, with PersonX/PersonY/PersonZ replaced by names drawn
// from the registry pool (without replacement, consistent within the sample).
// Concept-style: head + " " + prefix; the mask slot survives verbatim. The
// tail never appears in the output.
std::string render_question(const Triple& triple, const TemplateRegistry& registry,
                            SeededRng& rng);

}  // namespace kgfuse
