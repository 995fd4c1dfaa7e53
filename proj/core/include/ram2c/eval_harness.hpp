#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace ram2c {

/// Humanized communication, teaching expertise, safety and ethics.
enum class HtsDimension { H, T, S };

inline constexpr std::array<HtsDimension, 3> kAllDimensions = {HtsDimension::H, HtsDimension::T,
                                                               HtsDimension::S};

std::string to_string(HtsDimension d);
HtsDimension dimension_from_string(const std::string& s);

struct RubricCriterion {
    std::string id;
    HtsDimension dimension = HtsDimension::H;
    std::string text;
};

/// Checks id uniqueness and that the id prefix (1/2/3) matches H/T/S.
void validate_rubric(const std::vector<RubricCriterion>& rubric);
std::vector<RubricCriterion> load_rubric(const std::filesystem::path& path);
std::vector<RubricCriterion> rubric_for(const std::vector<RubricCriterion>& rubric,
                                        HtsDimension dimension);

enum class Side { candidate, baseline };

/// One candidate/baseline response pair to be shown blinded.
struct EvalPair {
    std::string Q;
    std::string A;
    std::string candidate;
    std::string baseline;
};

struct EvalItem {
    std::string item_id;
    std::string Q;
    std::string A;
    std::string left;
    std::string right;
    /// Which model produced the left response. Server-side only.
    Side left_is = Side::candidate;
};

/// Payload shown to annotators: no hidden mapping.
nlohmann::json to_annotator_json(const EvalItem& item);
/// Server-side persistence form, hidden mapping included.
nlohmann::json to_server_json(const EvalItem& item);
EvalItem item_from_server_json(const nlohmann::json& j);

/// Places candidate/baseline left or right by a seeded coin flip per pair.
std::vector<EvalItem> build_eval_set(const std::vector<EvalPair>& pairs, std::uint64_t seed);

inline constexpr std::size_t kAssignmentSize = 25;

struct Assignment {
    std::string volunteer_id;
    HtsDimension dimension = HtsDimension::H;
    std::vector<std::string> item_ids;
};

/// Uniform sample without replacement of min(25, |items|) items.
Assignment sample_assignment(const std::vector<EvalItem>& items, const std::string& volunteer_id,
                             HtsDimension dimension, std::uint64_t seed);

enum class ChoiceVerdict { left_better, equal, right_better };

std::string to_string(ChoiceVerdict v);
ChoiceVerdict choice_verdict_from_string(const std::string& s);

struct Choice {
    std::string volunteer_id;
    std::string item_id;
    HtsDimension dimension = HtsDimension::H;
    ChoiceVerdict verdict = ChoiceVerdict::equal;
    std::string submitted_at;
};

nlohmann::json to_json(const Choice& c);
Choice choice_from_json(const nlohmann::json& j);

/// Judgment from the candidate model's point of view.
enum class Outcome { better = 0, equal = 1, worse = 2 };

Outcome resolve(ChoiceVerdict verdict, Side left_is);
int points(Outcome o);  // 4 / 2 / 0

using HiddenMaps = std::map<std::string, Side>;

/// 100 * sum(points) / (4n), pooled over all choices.
double score(const std::vector<Choice>& choices, const HiddenMaps& hidden);
/// Mean of per-volunteer scores.
double score_per_volunteer(const std::vector<Choice>& choices, const HiddenMaps& hidden);

struct KappaResult {
    double kappa = 0.0;
    /// Every rating fell in one category; kappa is defined as 1.0.
    bool degenerate = false;
};

/// Fleiss' kappa for N items each rated by exactly `raters` raters into 3
/// categories.
KappaResult fleiss_kappa(const std::vector<std::array<int, 3>>& counts, int raters);

/// Fleiss' kappa allowing a different rater count per item (each >= 2).
KappaResult fleiss_kappa_variable(const std::vector<std::array<int, 3>>& counts);

struct ScoreReport {
    HtsDimension dimension = HtsDimension::H;
    std::size_t n_choices = 0;
    double score = 0.0;
    std::optional<double> kappa;
    bool kappa_degenerate = false;

    /// "74.8 (0.42)"; kappa printed as "n/a" when undefined.
    std::string row() const;
};

nlohmann::json to_json(const ScoreReport& r);

/// Pure aggregation over a snapshot of choices.
ScoreReport build_report(HtsDimension dimension, const std::vector<Choice>& choices,
                         const HiddenMaps& hidden, bool per_volunteer = false);

/// Server-side evaluation state under one directory:
/// items.jsonl (snapshot), assignments.jsonl and choices.jsonl (append-only).
class EvalStore {
public:
    explicit EvalStore(std::filesystem::path dir);

    /// Replaces the item set (and clears assignments and choices).
    void set_items(std::vector<EvalItem> items);
    std::vector<EvalItem> items() const;
    std::optional<EvalItem> item(const std::string& item_id) const;
    HiddenMaps hidden_maps() const;

    /// Returns the existing assignment or samples and persists a new one.
    Assignment assignment(const std::string& volunteer_id, HtsDimension dimension,
                          std::uint64_t seed);
    std::optional<Assignment> find_assignment(const std::string& volunteer_id,
                                              HtsDimension dimension) const;

    /// Rejects duplicates and items outside the volunteer's assignment. The
    /// choice is on disk before this returns.
    Choice submit(Choice choice);

    std::vector<Choice> choices() const;
    std::vector<Choice> choices(HtsDimension dimension) const;

    ScoreReport report(HtsDimension dimension, bool per_volunteer = false) const;

private:
    void append_line(const std::filesystem::path& file, const std::string& line);
    void load();

    std::filesystem::path dir_;
    mutable std::shared_mutex mutex_;
    std::vector<EvalItem> items_;
    std::map<std::string, std::size_t> item_index_;
    std::map<std::pair<std::string, HtsDimension>, Assignment> assignments_;
    std::vector<Choice> choices_;
    std::set<std::tuple<std::string, HtsDimension, std::string>> choice_keys_;
};

/// Reads pairs from JSON Lines. Accepts either (Q, A, candidate, baseline) or
/// a preference dataset's (Q, A, chosen, rejected).
std::vector<EvalPair> load_eval_pairs(const std::filesystem::path& path);

}  // namespace ram2c
