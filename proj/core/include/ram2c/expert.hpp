#pragma once

#include "ram2c/knowledge_base.hpp"

#include <array>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace ram2c {

/// Expert groups: language teachers, educational psychologists, and
/// ethical-safety experts.
enum class Role { T, P, E };

inline constexpr std::array<Role, 3> kAllRoles = {Role::T, Role::P, Role::E};

std::string to_string(Role role);
Role role_from_string(const std::string& s);

/// The reference-value aspects every assessment prompt asks experts to weigh.
inline const std::vector<std::string>& default_value_dimensions() {
    static const std::vector<std::string> dims = {"language style", "vocabulary usage",
                                                  "logical connections"};
    return dims;
}

/// Retrieval scope per group.
std::set<SourceKind> default_source_scope(Role role);

struct ExpertProfile {
    Role role = Role::T;
    int index = 1;
    std::string persona;
    std::set<SourceKind> source_scope;
    std::vector<std::string> value_dimensions = default_value_dimensions();

    /// "T1", "P3", ... Used as the `[ROLE:...]` marker in prompts.
    std::string marker() const;
    void validate() const;
};

/// Replaces `{{name}}` placeholders. Throws Errc::invalid_config for a
/// placeholder without a value.
std::string render_template(const std::string& text, const std::map<std::string, std::string>& values);

/// Persona templates loaded from a directory containing `expert_T.txt`,
/// `expert_P.txt`, `expert_E.txt` (per-expert profiles) and `group_T.txt`,
/// `group_P.txt`, `group_E.txt` (the shared voice used for synthesis).
///
/// Placeholders: {{role}}, {{role_title}}, {{index}}, {{value_dimensions}}.
class PersonaLibrary {
public:
    static PersonaLibrary load(const std::filesystem::path& dir);
    static PersonaLibrary from_templates(std::map<Role, std::string> expert_templates,
                                         std::map<Role, std::string> group_templates);

    std::string expert_persona(Role role, int index,
                               const std::vector<std::string>& value_dimensions) const;
    std::string group_persona(Role role) const;

    /// Builds `count` experts for a role, indices 1..count.
    std::vector<ExpertProfile> make_group(Role role, int count,
                                          const std::set<SourceKind>& source_scope) const;

private:
    std::map<Role, std::string> expert_templates_;
    std::map<Role, std::string> group_templates_;
};

std::string role_title(Role role);

}  // namespace ram2c
