#include <doctest.h>

#include "kgfuse/common.hpp"
#include "kgfuse/kg.hpp"
#include "support/test_util.hpp"

using namespace kgfuse;
using kgfuse::test::TempDir;
using kgfuse::test::write_text;

TEST_SUITE("kg") {
    TEST_CASE("loads tab-separated triples in file order") {
        TempDir dir;
        write_text(dir.file("kg.tsv"),
                   "pentode\tIsA\tvacuum tube\n"
                   "badminton\tIsA\ttype of sport\n"
                   "princewood\tPartOf\tgenus Cordia\n");
        KgSource src = load_triples(dir.file("kg.tsv"), "cn");
        REQUIRE(src.triples.size() == 3);
        CHECK(src.name == "cn");
        CHECK(src.triples[0].head == "pentode");
        CHECK(src.triples[0].relation == "IsA");
        CHECK(src.triples[0].tail == "vacuum tube");
        CHECK(src.triples[1].tail == "type of sport");
        CHECK(src.relation_set == std::set<std::string>{"IsA", "PartOf"});
    }

    TEST_CASE("malformed lines fail with their line number") {
        TempDir dir;
        write_text(dir.file("bad.tsv"), "a\tIsA\tb\nonly two\tfields\n");
        try {
            load_triples(dir.file("bad.tsv"), "x");
            FAIL("expected a parse error");
        } catch (const ParseError& e) {
            CHECK(e.line_number == 2);
        }
    }

    TEST_CASE("empty files are an error") {
        TempDir dir;
        write_text(dir.file("empty.tsv"), "\n\n");
        CHECK_THROWS_WITH_AS(load_triples(dir.file("empty.tsv"), "x"),
                             doctest::Contains("empty KG source"), Error);
    }

    TEST_CASE("blank fields are an error") {
        TempDir dir;
        write_text(dir.file("blank.tsv"), "a\t\tb\n");
        CHECK_THROWS_AS(load_triples(dir.file("blank.tsv"), "x"), ParseError);
    }

    TEST_CASE("default templates carry the full relation table") {
        TemplateRegistry reg = default_templates();
        CHECK(reg.entries.size() == 23);
        CHECK(reg.prefix("xAttr") == ". PersonX is seen as");
        CHECK(reg.style("xAttr") == PrefixStyle::event);
        CHECK(reg.prefix("PartOf") == "is part of [MASK]");
        CHECK(reg.style("PartOf") == PrefixStyle::cloze);
        CHECK(reg.prefix("HasLastSubevent") == "ends by [MASK]");
        CHECK(reg.name_pool.size() >= 20);
        CHECK_THROWS_WITH_AS(reg.prefix("NoSuchRel"), doctest::Contains("unregistered"), Error);
    }

    TEST_CASE("renders event-style questions with consistent name substitution") {
        TemplateRegistry reg = default_templates();
        reg.name_pool = {"Dana"};
        SeededRng rng(1);
        Triple t{"PersonX speeds on the highway.", "xAttr", "risky"};
        CHECK(render_question(t, reg, rng) == "Dana speeds on the highway. Dana is seen as");
    }

    TEST_CASE("renders concept-style questions with the mask slot intact") {
        TemplateRegistry reg = default_templates();
        SeededRng rng(1);
        Triple t{"princewood", "PartOf", "genus Cordia"};
        CHECK(render_question(t, reg, rng) == "princewood is part of [MASK]");
        Triple t2{"pentode", "IsA", "vacuum tube"};
        CHECK(render_question(t2, reg, rng) == "pentode is a [MASK]");
    }

    TEST_CASE("event-style heads without placeholders pass through") {
        TemplateRegistry reg = default_templates();
        SeededRng rng(1);
        Triple t{"The storm hit the coast", "oEffect", "flooding"};
        CHECK(render_question(t, reg, rng) == "The storm hit the coast. Others then");
    }

    TEST_CASE("PersonX and PersonY get distinct names within one sample") {
        TemplateRegistry reg = default_templates();
        reg.name_pool = {"Dana", "Riley"};
        SeededRng rng(3);
        Triple t{"PersonX lends PersonY a book", "xAttr", "kind"};
        const std::string q = render_question(t, reg, rng);
        const bool ab = q.find("Dana") != std::string::npos &&
                        q.find("Riley") != std::string::npos;
        CHECK(ab);
        CHECK(q.find("PersonX") == std::string::npos);
        CHECK(q.find("PersonY") == std::string::npos);
    }

    TEST_CASE("rendering is deterministic for a fixed seed") {
        TemplateRegistry reg = default_templates();
        Triple t{"PersonX mixes the batter.", "xReact", "happy"};
        SeededRng a(99), b(99);
        CHECK(render_question(t, reg, a) == render_question(t, reg, b));
    }

    TEST_CASE("rendered questions keep the prefix and never leak the tail") {
        TemplateRegistry reg = default_templates();
        SeededRng rng(4);
        for (const auto& [rel, prefix] : reg.entries) {
            Triple t{"subject item", rel, "hidden tail"};
            const std::string q = render_question(t, reg, rng);
            CHECK(q.find("hidden tail") == std::string::npos);
            if (reg.style(rel) == PrefixStyle::cloze) {
                // Concept prefixes appear verbatim, mask slot exactly once.
                CHECK(q.find(prefix) != std::string::npos);
                const size_t first = q.find(reg.mask_token);
                REQUIRE(first != std::string::npos);
                CHECK(q.find(reg.mask_token, first + 1) == std::string::npos);
            } else {
                CHECK(q.find(reg.mask_token) == std::string::npos);
            }
        }
    }

    TEST_CASE("registry round-trips through JSON") {
        TemplateRegistry reg = default_templates();
        TemplateRegistry back = TemplateRegistry::from_json(reg.to_json());
        CHECK(back.mask_token == reg.mask_token);
        CHECK(back.name_pool == reg.name_pool);
        REQUIRE(back.entries.size() == reg.entries.size());
        for (const auto& [rel, prefix] : reg.entries) CHECK(back.prefix(rel) == prefix);
    }

    TEST_CASE("multi-slot prefixes are rejected") {
        TemplateRegistry reg = default_templates();
        reg.add("Weird", "[MASK] maps to [MASK]");
        CHECK_THROWS(reg.style("Weird"));
    }
}
