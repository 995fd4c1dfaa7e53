#include "ram2c/eval_harness.hpp"

#include "ram2c/error.hpp"
#include "ram2c/util.hpp"

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <random>
#include <tuple>

namespace ram2c {

using nlohmann::json;

std::string to_string(HtsDimension d) {
    switch (d) {
        case HtsDimension::H: return "H";
        case HtsDimension::T: return "T";
        case HtsDimension::S: return "S";
    }
    return "?";
}

HtsDimension dimension_from_string(const std::string& s) {
    if (s == "H") return HtsDimension::H;
    if (s == "T") return HtsDimension::T;
    if (s == "S") return HtsDimension::S;
    fail(Errc::invalid_argument, "unknown HTS dimension: " + s);
}

void validate_rubric(const std::vector<RubricCriterion>& rubric) {
    std::set<std::string> ids;
    for (const auto& c : rubric) {
        if (!ids.insert(c.id).second) fail(Errc::invalid_config, "duplicate rubric id " + c.id);
        auto dot = c.id.find('.');
        if (dot == std::string::npos || dot == 0)
            fail(Errc::invalid_config, "rubric id must look like '<n>.<m>': " + c.id);
        const auto prefix = c.id.substr(0, dot);
        const char* expected = c.dimension == HtsDimension::H   ? "1"
                               : c.dimension == HtsDimension::T ? "2"
                                                                : "3";
        if (prefix != expected)
            fail(Errc::invalid_config, "rubric id " + c.id + " does not match dimension " +
                                           to_string(c.dimension));
        if (trim(c.text).empty()) fail(Errc::invalid_config, "rubric " + c.id + " has no text");
    }
}

std::vector<RubricCriterion> load_rubric(const std::filesystem::path& path) {
    auto j = json::parse(read_file(path), nullptr, false);
    if (j.is_discarded() || !j.is_array()) fail(Errc::malformed_file, "rubric must be a JSON array");
    std::vector<RubricCriterion> out;
    for (const auto& e : j) {
        out.push_back({e.at("id").get<std::string>(),
                       dimension_from_string(e.at("dimension").get<std::string>()),
                       e.at("text").get<std::string>()});
    }
    validate_rubric(out);
    return out;
}

std::vector<RubricCriterion> rubric_for(const std::vector<RubricCriterion>& rubric,
                                        HtsDimension dimension) {
    std::vector<RubricCriterion> out;
    std::copy_if(rubric.begin(), rubric.end(), std::back_inserter(out),
                 [&](const auto& c) { return c.dimension == dimension; });
    return out;
}

// ---------------------------------------------------------------------------

json to_annotator_json(const EvalItem& item) {
    return {{"item_id", item.item_id},
            {"Q", item.Q},
            {"A", item.A},
            {"left", item.left},
            {"right", item.right}};
}

json to_server_json(const EvalItem& item) {
    auto j = to_annotator_json(item);
    j["hidden_map"] = {{"left_is", item.left_is == Side::candidate ? "candidate" : "baseline"}};
    return j;
}

EvalItem item_from_server_json(const json& j) {
    EvalItem item;
    item.item_id = j.at("item_id").get<std::string>();
    item.Q = j.at("Q").get<std::string>();
    item.A = j.at("A").get<std::string>();
    item.left = j.at("left").get<std::string>();
    item.right = j.at("right").get<std::string>();
    const auto side = j.at("hidden_map").at("left_is").get<std::string>();
    if (side != "candidate" && side != "baseline")
        fail(Errc::malformed_file, "bad hidden_map for " + item.item_id);
    item.left_is = side == "candidate" ? Side::candidate : Side::baseline;
    return item;
}

std::vector<EvalItem> build_eval_set(const std::vector<EvalPair>& pairs, std::uint64_t seed) {
    if (pairs.empty()) fail(Errc::precondition, "build_eval_set needs at least one pair");
    std::mt19937_64 rng(seed);
    std::vector<EvalItem> items;
    items.reserve(pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const auto& p = pairs[i];
        if (p.candidate == p.baseline)
            fail(Errc::invalid_record,
                 fmt::format("pair {} has identical candidate and baseline texts", i));
        EvalItem item;
        item.item_id = fmt::format("item-{:06d}", i);
        item.Q = p.Q;
        item.A = p.A;
        const bool candidate_left = (rng() >> 63) != 0;
        item.left_is = candidate_left ? Side::candidate : Side::baseline;
        item.left = candidate_left ? p.candidate : p.baseline;
        item.right = candidate_left ? p.baseline : p.candidate;
        items.push_back(std::move(item));
    }
    return items;
}

Assignment sample_assignment(const std::vector<EvalItem>& items, const std::string& volunteer_id,
                             HtsDimension dimension, std::uint64_t seed) {
    if (items.empty()) fail(Errc::precondition, "cannot sample from an empty item pool");
    Assignment a;
    a.volunteer_id = volunteer_id;
    a.dimension = dimension;
    std::vector<std::string> ids;
    ids.reserve(items.size());
    for (const auto& it : items) ids.push_back(it.item_id);
    std::mt19937_64 rng(seed);
    std::sample(ids.begin(), ids.end(), std::back_inserter(a.item_ids),
                std::min(kAssignmentSize, ids.size()), rng);
    // Selection sampling keeps pool order; present items in random order.
    std::shuffle(a.item_ids.begin(), a.item_ids.end(), rng);
    return a;
}

// ---------------------------------------------------------------------------

std::string to_string(ChoiceVerdict v) {
    switch (v) {
        case ChoiceVerdict::left_better: return "left-better";
        case ChoiceVerdict::equal: return "equal";
        case ChoiceVerdict::right_better: return "right-better";
    }
    return "?";
}

ChoiceVerdict choice_verdict_from_string(const std::string& s) {
    if (s == "left-better") return ChoiceVerdict::left_better;
    if (s == "equal") return ChoiceVerdict::equal;
    if (s == "right-better") return ChoiceVerdict::right_better;
    fail(Errc::invalid_argument, "unknown verdict: " + s);
}

json to_json(const Choice& c) {
    return {{"volunteer_id", c.volunteer_id},
            {"item_id", c.item_id},
            {"dimension", to_string(c.dimension)},
            {"verdict", to_string(c.verdict)},
            {"submitted_at", c.submitted_at}};
}

Choice choice_from_json(const json& j) {
    Choice c;
    c.volunteer_id = j.at("volunteer_id").get<std::string>();
    c.item_id = j.at("item_id").get<std::string>();
    c.dimension = dimension_from_string(j.at("dimension").get<std::string>());
    c.verdict = choice_verdict_from_string(j.at("verdict").get<std::string>());
    c.submitted_at = j.value("submitted_at", "");
    return c;
}

Outcome resolve(ChoiceVerdict verdict, Side left_is) {
    if (verdict == ChoiceVerdict::equal) return Outcome::equal;
    const bool left_won = verdict == ChoiceVerdict::left_better;
    const bool candidate_left = left_is == Side::candidate;
    return left_won == candidate_left ? Outcome::better : Outcome::worse;
}

int points(Outcome o) {
    switch (o) {
        case Outcome::better: return 4;
        case Outcome::equal: return 2;
        case Outcome::worse: return 0;
    }
    return 0;
}

static long long total_points(const std::vector<Choice>& choices, const HiddenMaps& hidden) {
    std::set<std::tuple<std::string, HtsDimension, std::string>> seen;
    long long sum = 0;
    for (const auto& c : choices) {
        auto it = hidden.find(c.item_id);
        if (it == hidden.end()) fail(Errc::unknown_item, "no hidden map for item " + c.item_id);
        if (!seen.emplace(c.volunteer_id, c.dimension, c.item_id).second)
            fail(Errc::duplicate_choice,
                 "volunteer " + c.volunteer_id + " chose item " + c.item_id + " twice");
        sum += points(resolve(c.verdict, it->second));
    }
    return sum;
}

double score(const std::vector<Choice>& choices, const HiddenMaps& hidden) {
    if (choices.empty()) fail(Errc::no_choices, "score needs at least one choice");
    const auto sum = total_points(choices, hidden);
    return 100.0 * static_cast<double>(sum) / (4.0 * static_cast<double>(choices.size()));
}

double score_per_volunteer(const std::vector<Choice>& choices, const HiddenMaps& hidden) {
    if (choices.empty()) fail(Errc::no_choices, "score needs at least one choice");
    total_points(choices, hidden);  // validation
    std::map<std::string, std::vector<Choice>> by_volunteer;
    for (const auto& c : choices) by_volunteer[c.volunteer_id].push_back(c);
    double acc = 0.0;
    for (const auto& [v, cs] : by_volunteer) acc += score(cs, hidden);
    return acc / static_cast<double>(by_volunteer.size());
}

// ---------------------------------------------------------------------------

KappaResult fleiss_kappa_variable(const std::vector<std::array<int, 3>>& counts) {
    if (counts.empty()) fail(Errc::precondition, "kappa needs at least one item");
    double p_bar = 0.0;
    std::array<double, 3> col{};
    double total = 0.0;
    for (const auto& row : counts) {
        long long n = 0, sq = 0;
        for (int c : row) {
            if (c < 0) fail(Errc::row_sum_mismatch, "negative category count");
            n += c;
            sq += static_cast<long long>(c) * c;
        }
        if (n < 2) fail(Errc::precondition, "each item needs at least 2 raters");
        p_bar += static_cast<double>(sq - n) / static_cast<double>(n * (n - 1));
        for (std::size_t j = 0; j < 3; ++j) col[j] += row[j];
        total += static_cast<double>(n);
    }
    p_bar /= static_cast<double>(counts.size());
    double p_e = 0.0;
    for (double c : col) p_e += (c / total) * (c / total);
    if (p_e == 1.0) return {1.0, true};
    return {(p_bar - p_e) / (1.0 - p_e), false};
}

KappaResult fleiss_kappa(const std::vector<std::array<int, 3>>& counts, int raters) {
    if (raters < 2) fail(Errc::precondition, "kappa needs n >= 2 raters per item");
    if (counts.empty()) fail(Errc::precondition, "kappa needs at least one item");
    for (std::size_t i = 0; i < counts.size(); ++i) {
        const auto& r = counts[i];
        if (r[0] < 0 || r[1] < 0 || r[2] < 0 || r[0] + r[1] + r[2] != raters)
            fail(Errc::row_sum_mismatch,
                 fmt::format("row {} sums to {}, expected {}", i, r[0] + r[1] + r[2], raters));
    }
    return fleiss_kappa_variable(counts);
}

std::string ScoreReport::row() const {
    return kappa ? fmt::format("{:.1f} ({:.2f})", score, *kappa) : fmt::format("{:.1f} (n/a)", score);
}

json to_json(const ScoreReport& r) {
    json j = {{"dimension", to_string(r.dimension)},
              {"n_choices", r.n_choices},
              {"score", r.score},
              {"kappa", r.kappa ? json(*r.kappa) : json(nullptr)},
              {"kappa_degenerate", r.kappa_degenerate},
              {"row", r.row()}};
    return j;
}

ScoreReport build_report(HtsDimension dimension, const std::vector<Choice>& choices,
                         const HiddenMaps& hidden, bool per_volunteer) {
    std::vector<Choice> relevant;
    std::copy_if(choices.begin(), choices.end(), std::back_inserter(relevant),
                 [&](const Choice& c) { return c.dimension == dimension; });
    if (relevant.empty())
        fail(Errc::no_choices, "no choices submitted for dimension " + to_string(dimension));

    ScoreReport r;
    r.dimension = dimension;
    r.n_choices = relevant.size();
    r.score = per_volunteer ? score_per_volunteer(relevant, hidden) : score(relevant, hidden);

    std::map<std::string, std::array<int, 3>> per_item;
    for (const auto& c : relevant) {
        auto o = resolve(c.verdict, hidden.at(c.item_id));
        per_item[c.item_id][static_cast<std::size_t>(o)] += 1;
    }
    std::vector<std::array<int, 3>> rows;
    for (const auto& [id, row] : per_item) {
        if (row[0] + row[1] + row[2] >= 2) rows.push_back(row);
    }
    if (!rows.empty()) {
        auto k = fleiss_kappa_variable(rows);
        r.kappa = k.kappa;
        r.kappa_degenerate = k.degenerate;
    }
    return r;
}

// ---------------------------------------------------------------------------

EvalStore::EvalStore(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_);
    load();
}

static std::vector<json> read_jsonl(const std::filesystem::path& path) {
    std::vector<json> out;
    if (!std::filesystem::exists(path)) return out;
    std::ifstream in(path);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        auto j = json::parse(line, nullptr, false);
        if (j.is_discarded()) {
            // A torn final append is tolerated; anything earlier is corruption.
            if (in.peek() == EOF) break;
            fail(Errc::malformed_file, fmt::format("{}:{}: malformed record", path.string(), lineno));
        }
        out.push_back(std::move(j));
    }
    return out;
}

void EvalStore::load() {
    std::unique_lock lock(mutex_);
    items_.clear();
    item_index_.clear();
    for (const auto& j : read_jsonl(dir_ / "items.jsonl")) {
        item_index_[j.at("item_id").get<std::string>()] = items_.size();
        items_.push_back(item_from_server_json(j));
    }
    assignments_.clear();
    for (const auto& j : read_jsonl(dir_ / "assignments.jsonl")) {
        Assignment a;
        a.volunteer_id = j.at("volunteer_id").get<std::string>();
        a.dimension = dimension_from_string(j.at("dimension").get<std::string>());
        a.item_ids = j.at("item_ids").get<std::vector<std::string>>();
        assignments_.emplace(std::make_pair(a.volunteer_id, a.dimension), std::move(a));
    }
    choices_.clear();
    choice_keys_.clear();
    for (const auto& j : read_jsonl(dir_ / "choices.jsonl")) {
        auto c = choice_from_json(j);
        if (choice_keys_.emplace(c.volunteer_id, c.dimension, c.item_id).second)
            choices_.push_back(std::move(c));
    }
}

void EvalStore::append_line(const std::filesystem::path& file, const std::string& line) {
    std::ofstream out(file, std::ios::app | std::ios::binary);
    if (!out) fail(Errc::unreadable_file, "cannot append to " + file.string());
    out << line << '\n';
    out.flush();
    if (!out) fail(Errc::unreadable_file, "append failed for " + file.string());
}

void EvalStore::set_items(std::vector<EvalItem> items) {
    std::string contents;
    for (const auto& it : items) contents += to_server_json(it).dump() + "\n";
    std::unique_lock lock(mutex_);
    write_file_atomic(dir_ / "items.jsonl", contents);
    write_file_atomic(dir_ / "assignments.jsonl", "");
    write_file_atomic(dir_ / "choices.jsonl", "");
    items_ = std::move(items);
    item_index_.clear();
    for (std::size_t i = 0; i < items_.size(); ++i) item_index_[items_[i].item_id] = i;
    assignments_.clear();
    choices_.clear();
    choice_keys_.clear();
}

std::vector<EvalItem> EvalStore::items() const {
    std::shared_lock lock(mutex_);
    return items_;
}

std::optional<EvalItem> EvalStore::item(const std::string& item_id) const {
    std::shared_lock lock(mutex_);
    auto it = item_index_.find(item_id);
    if (it == item_index_.end()) return std::nullopt;
    return items_[it->second];
}

HiddenMaps EvalStore::hidden_maps() const {
    std::shared_lock lock(mutex_);
    HiddenMaps m;
    for (const auto& it : items_) m[it.item_id] = it.left_is;
    return m;
}

std::optional<Assignment> EvalStore::find_assignment(const std::string& volunteer_id,
                                                     HtsDimension dimension) const {
    std::shared_lock lock(mutex_);
    auto it = assignments_.find({volunteer_id, dimension});
    if (it == assignments_.end()) return std::nullopt;
    return it->second;
}

Assignment EvalStore::assignment(const std::string& volunteer_id, HtsDimension dimension,
                                 std::uint64_t seed) {
    if (trim(volunteer_id).empty()) fail(Errc::invalid_argument, "volunteer id must be non-empty");
    std::unique_lock lock(mutex_);
    if (auto it = assignments_.find({volunteer_id, dimension}); it != assignments_.end())
        return it->second;
    if (items_.empty()) fail(Errc::precondition, "no evaluation set has been built");
    const auto per_volunteer_seed =
        seed ^ fnv1a64(volunteer_id + "\x1f" + to_string(dimension));
    auto a = sample_assignment(items_, volunteer_id, dimension, per_volunteer_seed);
    json j = {{"volunteer_id", a.volunteer_id},
              {"dimension", to_string(a.dimension)},
              {"item_ids", a.item_ids}};
    append_line(dir_ / "assignments.jsonl", j.dump());
    assignments_.emplace(std::make_pair(volunteer_id, dimension), a);
    return a;
}

Choice EvalStore::submit(Choice choice) {
    std::unique_lock lock(mutex_);
    if (!item_index_.count(choice.item_id))
        fail(Errc::unknown_item, "unknown item " + choice.item_id);
    auto a = assignments_.find({choice.volunteer_id, choice.dimension});
    if (a == assignments_.end() ||
        std::find(a->second.item_ids.begin(), a->second.item_ids.end(), choice.item_id) ==
            a->second.item_ids.end())
        fail(Errc::unknown_item, "item " + choice.item_id + " is not assigned to " +
                                     choice.volunteer_id + " for " + to_string(choice.dimension));
    auto key = std::make_tuple(choice.volunteer_id, choice.dimension, choice.item_id);
    if (choice_keys_.count(key))
        fail(Errc::duplicate_choice, "item " + choice.item_id + " already chosen");
    if (choice.submitted_at.empty()) choice.submitted_at = utc_timestamp();
    append_line(dir_ / "choices.jsonl", to_json(choice).dump());
    choice_keys_.insert(key);
    choices_.push_back(choice);
    return choice;
}

std::vector<Choice> EvalStore::choices() const {
    std::shared_lock lock(mutex_);
    return choices_;
}

std::vector<Choice> EvalStore::choices(HtsDimension dimension) const {
    std::shared_lock lock(mutex_);
    std::vector<Choice> out;
    std::copy_if(choices_.begin(), choices_.end(), std::back_inserter(out),
                 [&](const Choice& c) { return c.dimension == dimension; });
    return out;
}

ScoreReport EvalStore::report(HtsDimension dimension, bool per_volunteer) const {
    std::vector<Choice> snapshot;
    HiddenMaps hidden;
    {
        std::shared_lock lock(mutex_);
        snapshot = choices_;
        for (const auto& it : items_) hidden[it.item_id] = it.left_is;
    }
    return build_report(dimension, snapshot, hidden, per_volunteer);
}

std::vector<EvalPair> load_eval_pairs(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(Errc::unreadable_file, "cannot read " + path.string());
    std::vector<EvalPair> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        auto j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object())
            fail(Errc::malformed_file, fmt::format("{}:{}: malformed record", path.string(), lineno));
        try {
            EvalPair p;
            p.Q = j.at("Q").get<std::string>();
            p.A = j.at("A").get<std::string>();
            p.candidate = j.contains("candidate") ? j["candidate"].get<std::string>()
                                                  : j.at("chosen").get<std::string>();
            p.baseline = j.contains("baseline") ? j["baseline"].get<std::string>()
                                                : j.at("rejected").get<std::string>();
            out.push_back(std::move(p));
        } catch (const json::exception& e) {
            fail(Errc::malformed_file, fmt::format("{}:{}: {}", path.string(), lineno, e.what()));
        }
    }
    return out;
}

}  // namespace ram2c
