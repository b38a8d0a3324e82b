#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "selfdetect/prompts.hpp"

using namespace selfdetect;

TEST_CASE("render substitutes placeholders and ignores unused bindings") {
    PromptTemplate t{TemplateId::Base, "Hello {who}, answer {q}"};
    PlaceholderMap b{{"who", "world"}, {"q", "now"}, {"unused", "x"}};
    CHECK(render(t, b) == "Hello world, answer now");

    PlaceholderMap partial{{"who", "world"}};
    CHECK_THROWS_WITH_AS(render(t, partial), "unbound placeholder {q}", TemplateIncomplete);
}

TEST_CASE("substituted values are not re-scanned") {
    PromptTemplate t{TemplateId::Base, "{a}"};
    CHECK(render(t, {{"a", "literal {b} stays"}}) == "literal {b} stays");
}

TEST_CASE("p_true prompt ends with the verbatim question") {
    TemplateSet ts;
    PlaceholderMap b{{"instruction", "classify the sentiment. Great movie!"},
                     {"label", "Positive"}};
    auto text = render(ts.get(TemplateId::PTrue), b);
    const std::string tail = "Label: Positive. Is the label correct or incorrect?";
    REQUIRE(text.size() >= tail.size());
    CHECK(text.substr(text.size() - tail.size()) == tail);
}

TEST_CASE("justification prompt carries the fixed instruction sentence") {
    TemplateSet ts;
    PlaceholderMap b{{"instruction_only", "classify the sentiment"},
                     {"question", "Great movie!"},
                     {"choices", "Answer Choices:\npositive\nnegative"},
                     {"answer", "positive"}};
    auto text = render(ts.get(TemplateId::Justify), b);
    CHECK(text.find("Please generate an explanation to try to justify the answer judgment.") !=
          std::string::npos);
    CHECK(text.find("The answer is positive.") != std::string::npos);
}

TEST_CASE("orders_for_t3 returns identity plus reversal") {
    auto two = orders_for_t3(2);
    REQUIRE(two.size() == 2);
    CHECK(two[0].permutation == std::vector<int>{0, 1});
    CHECK(two[1].permutation == std::vector<int>{1, 0});

    auto three = orders_for_t3(3);
    CHECK(three[0].permutation == std::vector<int>{0, 1, 2});
    CHECK(three[1].permutation == std::vector<int>{2, 1, 0});

    auto five = orders_for_t3(5);
    CHECK(five[0].permutation == std::vector<int>{0, 1, 2, 3, 4});
    CHECK(five[1].permutation == std::vector<int>{4, 3, 2, 1, 0});

    CHECK_THROWS_AS(orders_for_t3(1), InvalidAnswerSpace);
}

TEST_CASE("render is deterministic") {
    TemplateSet ts;
    PlaceholderMap b{{"instruction", "task. input"}, {"label", "x"}};
    auto a = render(ts.get(TemplateId::PTrue), b);
    auto c = render(ts.get(TemplateId::PTrue), b);
    CHECK(a == c);
}

TEST_CASE("choice rendering styles and presentations") {
    std::vector<CandidateAnswer> s{CandidateAnswer::from_surface("(a) plate"),
                                   CandidateAnswer::from_surface("(b) jar")};
    auto given = render_choices(s, {0, 1}, ChoiceStyle::AsGiven);
    CHECK(given.block == "Answer Choices:\n(a) plate\n(b) jar");
    CHECK(given.presentation.letters == std::vector<char>{'a', 'b'});

    auto alpha_rev = render_choices(s, {1, 0}, ChoiceStyle::Alphabetic);
    CHECK(alpha_rev.block == "A. jar\nB. plate");
    CHECK(alpha_rev.presentation.order == std::vector<int>{1, 0});

    auto item = render_choices(s, {0, 1}, ChoiceStyle::Itemized);
    CHECK(item.block == "- plate\n- jar");
}

TEST_CASE("explanation block numbering is positional, permutation picks texts") {
    std::vector<std::string> texts{"first text", "second text"};
    CHECK(render_explanations(texts, ExplanationOrder::identity(2)) ==
          "Possible explanation 1: first text\nPossible explanation 2: second text");
    CHECK(render_explanations(texts, ExplanationOrder::reversed(2)) ==
          "Possible explanation 1: second text\nPossible explanation 2: first text");
}

TEST_CASE("bundled template files match the built-in texts") {
    TemplateSet builtin;
    std::filesystem::path dir = std::filesystem::path(SELFDETECT_SOURCE_DIR) / "templates";
    for (auto id : TemplateSet::all_ids()) {
        auto path = dir / template_file_name(id);
        INFO("template file ", path.string());
        REQUIRE(std::filesystem::exists(path));
        std::ifstream in(path, std::ios::binary);
        std::ostringstream ss;
        ss << in.rdbuf();
        std::string body = ss.str();
        if (!body.empty() && body.back() == '\n') body.pop_back();
        CHECK(body == builtin.get(id).body);
    }
    auto loaded = TemplateSet::load_dir(dir);
    for (auto id : TemplateSet::all_ids()) CHECK(loaded.get(id).body == builtin.get(id).body);
}

TEST_CASE("template directory overrides only the files present") {
    auto dir = std::filesystem::temp_directory_path() / "selfdetect_tpl_test";
    std::filesystem::create_directories(dir);
    {
        std::ofstream out(dir / "base.txt");
        out << "custom {instruction}!\n";
    }
    auto ts = TemplateSet::load_dir(dir);
    CHECK(ts.get(TemplateId::Base).body == "custom {instruction}!");
    CHECK(ts.get(TemplateId::PTrue).body == TemplateSet().get(TemplateId::PTrue).body);
    std::filesystem::remove_all(dir);
}

TEST_CASE("three misleading contexts ship by default") {
    auto ms = TemplateSet().misleaders();
    REQUIRE(ms.size() == 3);
    for (const auto& m : ms) CHECK(m.find("{wrong_choice}") != std::string::npos);
}
