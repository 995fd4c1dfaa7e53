#include "ram2c/eval_harness.hpp"
#include "support.hpp"

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <random>

using namespace ram2c;
using namespace ram2c::testing;
using nlohmann::json;

namespace {

template <typename Fn>
Errc code_of(Fn&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "expected ram2c::Error";
    return Errc::invalid_argument;
}

std::vector<EvalPair> make_pairs(std::size_t n) {
    std::vector<EvalPair> pairs;
    for (std::size_t i = 0; i < n; ++i)
        pairs.push_back({"Q" + std::to_string(i), "A" + std::to_string(i), "cand-" + std::to_string(i),
                         "base-" + std::to_string(i)});
    return pairs;
}

Choice choice(const std::string& vol, const std::string& item, ChoiceVerdict v,
              HtsDimension d = HtsDimension::H) {
    return {vol, item, d, v, ""};
}

// Fleiss' kappa computed from raw rating lists: observed agreement counts
// agreeing ordered rater pairs per item; chance agreement draws two ratings
// from the pooled list with replacement.
double kappa_oracle(const std::vector<std::vector<int>>& ratings, bool* degenerate) {
    double p_bar = 0.0;
    std::vector<int> pooled;
    for (const auto& item : ratings) {
        int agree = 0;
        const int n = static_cast<int>(item.size());
        for (int a = 0; a < n; ++a)
            for (int b = 0; b < n; ++b)
                if (a != b && item[a] == item[b]) ++agree;
        p_bar += static_cast<double>(agree) / (n * (n - 1));
        pooled.insert(pooled.end(), item.begin(), item.end());
    }
    p_bar /= static_cast<double>(ratings.size());
    long long same = 0;
    for (int x : pooled)
        for (int y : pooled)
            if (x == y) ++same;
    const double p_e = static_cast<double>(same) / (static_cast<double>(pooled.size()) * pooled.size());
    *degenerate = same == static_cast<long long>(pooled.size() * pooled.size());
    return *degenerate ? 1.0 : (p_bar - p_e) / (1.0 - p_e);
}

std::vector<std::array<int, 3>> to_counts(const std::vector<std::vector<int>>& ratings) {
    std::vector<std::array<int, 3>> out;
    for (const auto& item : ratings) {
        std::array<int, 3> row{};
        for (int r : item) ++row[r];
        out.push_back(row);
    }
    return out;
}

}  // namespace

TEST(Rubric, ShippedAssetHasAllCriteria) {
    auto rubric = load_rubric(asset_dir() / "rubric.json");
    EXPECT_EQ(rubric.size(), 23u);
    auto h = rubric_for(rubric, HtsDimension::H);
    ASSERT_EQ(h.size(), 7u);
    for (std::size_t i = 0; i < h.size(); ++i) EXPECT_EQ(h[i].id, "1." + std::to_string(i + 1));
    EXPECT_EQ(rubric_for(rubric, HtsDimension::T).size() + rubric_for(rubric, HtsDimension::S).size(), 16u);
    for (const auto& c : rubric_for(rubric, HtsDimension::S)) EXPECT_EQ(c.id[0], '3');
}

TEST(Rubric, ValidationCatchesBadIds) {
    EXPECT_EQ(code_of([] { validate_rubric({{"2.1", HtsDimension::H, "x"}}); }), Errc::invalid_config);
    EXPECT_EQ(code_of([] { validate_rubric({{"1.1", HtsDimension::H, "x"}, {"1.1", HtsDimension::H, "y"}}); }),
              Errc::invalid_config);
    EXPECT_EQ(code_of([] { validate_rubric({{"oops", HtsDimension::H, "x"}}); }), Errc::invalid_config);
    EXPECT_EQ(code_of([] { validate_rubric({{"1.1", HtsDimension::H, " "}}); }), Errc::invalid_config);
}

TEST(Dimension, StringRoundTrip) {
    for (auto d : kAllDimensions) EXPECT_EQ(dimension_from_string(to_string(d)), d);
    EXPECT_EQ(code_of([] { dimension_from_string("X"); }), Errc::invalid_argument);
}

TEST(BuildEvalSet, DeterministicAndPreservesTexts) {
    auto pairs = make_pairs(40);
    auto a = build_eval_set(pairs, 5), b = build_eval_set(pairs, 5), c = build_eval_set(pairs, 6);
    bool differs = false;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        EXPECT_EQ(a[i].left_is, b[i].left_is);
        differs = differs || a[i].left_is != c[i].left_is;
        const auto& cand = a[i].left_is == Side::candidate ? a[i].left : a[i].right;
        const auto& base = a[i].left_is == Side::candidate ? a[i].right : a[i].left;
        EXPECT_EQ(cand, pairs[i].candidate);
        EXPECT_EQ(base, pairs[i].baseline);
        EXPECT_EQ(a[i].Q, pairs[i].Q);
    }
    EXPECT_TRUE(differs);
}

TEST(BuildEvalSet, RejectsIdenticalTextsAndEmptyInput) {
    auto pairs = make_pairs(3);
    pairs[1].baseline = pairs[1].candidate;
    EXPECT_EQ(code_of([&] { build_eval_set(pairs, 1); }), Errc::invalid_record);
    EXPECT_EQ(code_of([] { build_eval_set({}, 1); }), Errc::precondition);
}

TEST(BuildEvalSet, PlacementIsBalanced) {
    auto items = build_eval_set(make_pairs(10'000), 42);
    std::size_t left = 0;
    for (const auto& it : items) left += it.left_is == Side::candidate;
    const double frac = static_cast<double>(left) / items.size();
    EXPECT_GE(frac, 0.47);
    EXPECT_LE(frac, 0.53);
}

TEST(Blinding, AnnotatorPayloadOmitsMapping) {
    auto items = build_eval_set(make_pairs(5), 1);
    for (const auto& it : items) {
        auto j = to_annotator_json(it);
        EXPECT_FALSE(j.contains("left_is"));
        EXPECT_FALSE(j.contains("hidden_map"));
        auto text = j.dump();
        EXPECT_EQ(text.find("candidate"), std::string::npos);
        EXPECT_EQ(text.find("baseline"), std::string::npos);
        auto back = item_from_server_json(to_server_json(it));
        EXPECT_EQ(back.left_is, it.left_is);
        EXPECT_EQ(back.left, it.left);
    }
}

TEST(SampleAssignment, SizeAndDistinctness) {
    auto items = build_eval_set(make_pairs(100), 1);
    auto a = sample_assignment(items, "v1", HtsDimension::T, 9);
    EXPECT_EQ(a.item_ids.size(), kAssignmentSize);
    EXPECT_EQ(std::set<std::string>(a.item_ids.begin(), a.item_ids.end()).size(), kAssignmentSize);
    EXPECT_EQ(a.item_ids, sample_assignment(items, "v1", HtsDimension::T, 9).item_ids);

    auto small = build_eval_set(make_pairs(10), 1);
    auto s = sample_assignment(small, "v", HtsDimension::H, 3);
    EXPECT_EQ(std::set<std::string>(s.item_ids.begin(), s.item_ids.end()).size(), 10u);
    EXPECT_EQ(code_of([] { sample_assignment({}, "v", HtsDimension::H, 1); }), Errc::precondition);
}

TEST(Scoring, ResolveAndPoints) {
    EXPECT_EQ(resolve(ChoiceVerdict::left_better, Side::candidate), Outcome::better);
    EXPECT_EQ(resolve(ChoiceVerdict::left_better, Side::baseline), Outcome::worse);
    EXPECT_EQ(resolve(ChoiceVerdict::right_better, Side::baseline), Outcome::better);
    EXPECT_EQ(resolve(ChoiceVerdict::equal, Side::baseline), Outcome::equal);
    EXPECT_EQ(points(Outcome::better), 4);
    EXPECT_EQ(points(Outcome::equal), 2);
    EXPECT_EQ(points(Outcome::worse), 0);
}

TEST(Scoring, KnownTotals) {
    HiddenMaps hidden{{"i1", Side::candidate}, {"i2", Side::baseline}, {"i3", Side::candidate},
                      {"i4", Side::baseline}, {"i5", Side::candidate}};
    std::vector<Choice> all_better{choice("v", "i1", ChoiceVerdict::left_better),
                                   choice("v", "i2", ChoiceVerdict::right_better)};
    EXPECT_DOUBLE_EQ(score(all_better, hidden), 100.0);
    std::vector<Choice> all_equal{choice("v", "i1", ChoiceVerdict::equal), choice("v", "i2", ChoiceVerdict::equal)};
    EXPECT_DOUBLE_EQ(score(all_equal, hidden), 50.0);
    // 3 better, 1 equal, 1 worse: (12 + 2 + 0) / 20.
    std::vector<Choice> mixed{choice("v", "i1", ChoiceVerdict::left_better),
                              choice("v", "i2", ChoiceVerdict::right_better),
                              choice("v", "i3", ChoiceVerdict::left_better),
                              choice("v", "i4", ChoiceVerdict::equal),
                              choice("v", "i5", ChoiceVerdict::right_better)};
    EXPECT_DOUBLE_EQ(score(mixed, hidden), 70.0);
    EXPECT_EQ(code_of([&] { score({}, hidden); }), Errc::no_choices);
    EXPECT_EQ(code_of([&] { score({choice("v", "zz", ChoiceVerdict::equal)}, hidden); }), Errc::unknown_item);
    EXPECT_EQ(code_of([&] {
                  score({choice("v", "i1", ChoiceVerdict::equal), choice("v", "i1", ChoiceVerdict::equal)}, hidden);
              }),
              Errc::duplicate_choice);
}

TEST(Scoring, PerVolunteerAveragesVolunteerScores) {
    HiddenMaps hidden{{"i1", Side::candidate}, {"i2", Side::candidate}, {"i3", Side::candidate}};
    // v1: one better (100). v2: better, worse, worse (4/12 = 33.3...).
    std::vector<Choice> cs{choice("v1", "i1", ChoiceVerdict::left_better),
                           choice("v2", "i1", ChoiceVerdict::left_better),
                           choice("v2", "i2", ChoiceVerdict::right_better),
                           choice("v2", "i3", ChoiceVerdict::right_better)};
    EXPECT_DOUBLE_EQ(score(cs, hidden), 100.0 * 8 / 16);
    EXPECT_DOUBLE_EQ(score_per_volunteer(cs, hidden), (100.0 + 100.0 / 3) / 2);
}

TEST(Scoring, SwappingSidesMirrorsScore) {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 200; ++trial) {
        HiddenMaps hidden, swapped;
        std::vector<Choice> cs;
        const int n = 1 + static_cast<int>(rng() % 30);
        for (int i = 0; i < n; ++i) {
            const auto id = "i" + std::to_string(i);
            const auto side = rng() % 2 ? Side::candidate : Side::baseline;
            hidden[id] = side;
            swapped[id] = side == Side::candidate ? Side::baseline : Side::candidate;
            cs.push_back(choice("v", id, static_cast<ChoiceVerdict>(rng() % 3)));
        }
        EXPECT_NEAR(score(cs, hidden) + score(cs, swapped), 100.0, 1e-9);
    }
}

TEST(Kappa, FixtureValues) {
    EXPECT_DOUBLE_EQ(fleiss_kappa({{3, 0, 0}, {0, 3, 0}}, 3).kappa, 1.0);
    EXPECT_DOUBLE_EQ(fleiss_kappa({{1, 1, 0}, {1, 1, 0}}, 2).kappa, -1.0);
    // Four items, three raters: P_bar = 2/3, column shares 1/2, 1/2, 0.
    auto k = fleiss_kappa({{3, 0, 0}, {0, 3, 0}, {2, 1, 0}, {1, 2, 0}}, 3);
    EXPECT_NEAR(k.kappa, 1.0 / 3.0, 1e-12);
    auto all_same = fleiss_kappa({{2, 0, 0}, {2, 0, 0}}, 2);
    EXPECT_TRUE(all_same.degenerate);
    EXPECT_DOUBLE_EQ(all_same.kappa, 1.0);
}

TEST(Kappa, InvalidInputs) {
    EXPECT_EQ(code_of([] { fleiss_kappa({{1, 1, 0}}, 3); }), Errc::row_sum_mismatch);
    EXPECT_EQ(code_of([] { fleiss_kappa({{1, 0, 0}}, 1); }), Errc::precondition);
    EXPECT_EQ(code_of([] { fleiss_kappa({}, 2); }), Errc::precondition);
    EXPECT_EQ(code_of([] { fleiss_kappa_variable({{1, 0, 0}}); }), Errc::precondition);
}

TEST(Kappa, MatchesOracleExhaustively) {
    std::size_t checked = 0;
    for (int raters : {2, 3}) {
        int per_item = 1;
        for (int r = 0; r < raters; ++r) per_item *= 3;
        for (int items = 1; items <= 3; ++items) {
            int combos = 1;
            for (int i = 0; i < items; ++i) combos *= per_item;
            for (int code = 0; code < combos; ++code) {
                std::vector<std::vector<int>> ratings(items, std::vector<int>(raters));
                int rest = code;
                for (auto& item : ratings)
                    for (auto& r : item) {
                        r = rest % 3;
                        rest /= 3;
                    }
                bool degenerate = false;
                const double expect = kappa_oracle(ratings, &degenerate);
                auto got = fleiss_kappa(to_counts(ratings), raters);
                ASSERT_EQ(got.degenerate, degenerate);
                ASSERT_NEAR(got.kappa, expect, 1e-9);
                ++checked;
            }
        }
    }
    EXPECT_EQ(checked, (9u + 81 + 729) + (27 + 729 + 19683));
}

TEST(Kappa, VariableRatersMatchOracle) {
    std::vector<std::vector<int>> ratings{{0, 0}, {0, 1, 2}, {2, 2, 2, 1}, {1, 1}};
    bool degenerate = false;
    EXPECT_NEAR(fleiss_kappa_variable(to_counts(ratings)).kappa, kappa_oracle(ratings, &degenerate), 1e-12);
}

TEST(Report, SingleVolunteerHasNoKappa) {
    HiddenMaps hidden{{"i1", Side::candidate}, {"i2", Side::baseline}};
    auto r = build_report(HtsDimension::H,
                          {choice("v", "i1", ChoiceVerdict::left_better), choice("v", "i2", ChoiceVerdict::equal)},
                          hidden);
    EXPECT_EQ(r.n_choices, 2u);
    EXPECT_DOUBLE_EQ(r.score, 75.0);
    EXPECT_FALSE(r.kappa.has_value());
    EXPECT_EQ(r.row(), "75.0 (n/a)");
    EXPECT_TRUE(to_json(r)["kappa"].is_null());
}

TEST(Report, DisjointVolunteersHaveNoKappa) {
    HiddenMaps hidden{{"i1", Side::candidate}, {"i2", Side::baseline}};
    auto r = build_report(HtsDimension::T,
                          {choice("a", "i1", ChoiceVerdict::equal, HtsDimension::T),
                           choice("b", "i2", ChoiceVerdict::equal, HtsDimension::T)},
                          hidden);
    EXPECT_FALSE(r.kappa.has_value());
}

TEST(Report, OverlappingVolunteersYieldKappa) {
    HiddenMaps hidden{{"i1", Side::candidate}, {"i2", Side::baseline}};
    std::vector<Choice> cs{choice("a", "i1", ChoiceVerdict::left_better), choice("b", "i1", ChoiceVerdict::left_better),
                           choice("a", "i2", ChoiceVerdict::left_better), choice("b", "i2", ChoiceVerdict::left_better),
                           choice("a", "i1", ChoiceVerdict::equal, HtsDimension::T)};
    auto r = build_report(HtsDimension::H, cs, hidden);
    EXPECT_EQ(r.n_choices, 4u);
    EXPECT_DOUBLE_EQ(r.score, 50.0);
    ASSERT_TRUE(r.kappa.has_value());
    // Outcomes per item: i1 better x2, i2 worse x2.
    EXPECT_DOUBLE_EQ(*r.kappa, fleiss_kappa({{2, 0, 0}, {0, 0, 2}}, 2).kappa);
    EXPECT_EQ(r.row(), "50.0 (1.00)");
    EXPECT_EQ(code_of([&] { build_report(HtsDimension::S, cs, hidden); }), Errc::no_choices);
}

TEST(EvalStore, PersistsAndRejectsDuplicates) {
    TempDir dir;
    std::vector<std::string> assigned;
    {
        EvalStore store(dir / "eval");
        EXPECT_EQ(code_of([&] { store.assignment("v1", HtsDimension::H, 1); }), Errc::precondition);
        store.set_items(build_eval_set(make_pairs(30), 2));
        auto a = store.assignment("v1", HtsDimension::H, 1);
        EXPECT_EQ(a.item_ids.size(), 25u);
        EXPECT_EQ(store.assignment("v1", HtsDimension::H, 999).item_ids, a.item_ids);
        assigned = a.item_ids;
        store.submit(choice("v1", assigned[0], ChoiceVerdict::left_better));
        EXPECT_EQ(code_of([&] { store.submit(choice("v1", assigned[0], ChoiceVerdict::equal)); }),
                  Errc::duplicate_choice);
        EXPECT_EQ(code_of([&] { store.submit(choice("v1", "item-999999", ChoiceVerdict::equal)); }),
                  Errc::unknown_item);
        EXPECT_EQ(code_of([&] { store.submit(choice("v2", assigned[0], ChoiceVerdict::equal)); }),
                  Errc::unknown_item);
        EXPECT_EQ(code_of([&] { store.assignment(" ", HtsDimension::H, 1); }), Errc::invalid_argument);
    }
    EvalStore reopened(dir / "eval");
    EXPECT_EQ(reopened.items().size(), 30u);
    ASSERT_TRUE(reopened.find_assignment("v1", HtsDimension::H));
    EXPECT_EQ(reopened.find_assignment("v1", HtsDimension::H)->item_ids, assigned);
    ASSERT_EQ(reopened.choices().size(), 1u);
    EXPECT_EQ(code_of([&] { reopened.submit(choice("v1", assigned[0], ChoiceVerdict::equal)); }),
              Errc::duplicate_choice);
    // Same item in another dimension is a separate judgment.
    reopened.assignment("v1", HtsDimension::S, 1);
    auto s_items = reopened.find_assignment("v1", HtsDimension::S)->item_ids;
    EXPECT_NO_THROW(reopened.submit(choice("v1", s_items[0], ChoiceVerdict::equal, HtsDimension::S)));
    EXPECT_EQ(reopened.report(HtsDimension::H).n_choices, 1u);
    EXPECT_EQ(reopened.choices(HtsDimension::S).size(), 1u);
}

TEST(LoadEvalPairs, AcceptsBothShapes) {
    TempDir dir;
    std::ofstream(dir / "p.jsonl") << R"({"Q":"q","A":"a","candidate":"c","baseline":"b"})" << "\n"
                                   << R"({"Q":"q2","A":"a2","chosen":"c2","rejected":"b2","trace_id":"t"})"
                                   << "\n";
    auto pairs = load_eval_pairs(dir / "p.jsonl");
    ASSERT_EQ(pairs.size(), 2u);
    EXPECT_EQ(pairs[1].candidate, "c2");
    EXPECT_EQ(pairs[1].baseline, "b2");
    std::ofstream(dir / "bad.jsonl") << "{nope\n";
    EXPECT_EQ(code_of([&] { load_eval_pairs(dir / "bad.jsonl"); }), Errc::malformed_file);
    EXPECT_EQ(code_of([&] { load_eval_pairs(dir / "missing.jsonl"); }), Errc::unreadable_file);
}
