#include "ram2c/expert.hpp"

#include "ram2c/error.hpp"
#include "ram2c/util.hpp"

namespace ram2c {

std::string to_string(Role role) {
    switch (role) {
        case Role::T: return "T";
        case Role::P: return "P";
        case Role::E: return "E";
    }
    return "?";
}

Role role_from_string(const std::string& s) {
    if (s == "T") return Role::T;
    if (s == "P") return Role::P;
    if (s == "E") return Role::E;
    fail(Errc::invalid_config, "unknown role: " + s);
}

std::string role_title(Role role) {
    switch (role) {
        case Role::T: return "Chinese language teacher";
        case Role::P: return "educational psychologist";
        case Role::E: return "ethical safety expert";
    }
    return "";
}

std::set<SourceKind> default_source_scope(Role role) {
    switch (role) {
        case Role::T:
            return {SourceKind::class_records, SourceKind::teaching_theory,
                    SourceKind::literature_works};
        case Role::P:
            return {SourceKind::edu_psych_theory, SourceKind::literature_works};
        case Role::E:
            return {SourceKind::safety_prompts, SourceKind::literature_works};
    }
    return {};
}

std::string ExpertProfile::marker() const {
    return to_string(role) + std::to_string(index);
}

void ExpertProfile::validate() const {
    if (index < 1) fail(Errc::invalid_params, "expert index must be positive");
    if (trim(persona).empty()) fail(Errc::invalid_params, "expert " + marker() + " has no persona");
    if (source_scope.empty()) fail(Errc::invalid_params, "expert " + marker() + " has no source scope");
}

std::string render_template(const std::string& text,
                            const std::map<std::string, std::string>& values) {
    std::string out;
    std::size_t pos = 0;
    while (true) {
        auto open = text.find("{{", pos);
        if (open == std::string::npos) {
            out.append(text, pos, std::string::npos);
            break;
        }
        auto close = text.find("}}", open + 2);
        if (close == std::string::npos)
            fail(Errc::invalid_config, "unterminated placeholder in template");
        out.append(text, pos, open - pos);
        auto name = trim(std::string_view(text).substr(open + 2, close - open - 2));
        auto it = values.find(name);
        if (it == values.end()) fail(Errc::invalid_config, "unknown template placeholder: " + name);
        out += it->second;
        pos = close + 2;
    }
    return out;
}

PersonaLibrary PersonaLibrary::load(const std::filesystem::path& dir) {
    std::map<Role, std::string> experts, groups;
    for (auto role : kAllRoles) {
        auto r = to_string(role);
        experts[role] = read_file(dir / ("expert_" + r + ".txt"));
        groups[role] = read_file(dir / ("group_" + r + ".txt"));
    }
    return from_templates(std::move(experts), std::move(groups));
}

PersonaLibrary PersonaLibrary::from_templates(std::map<Role, std::string> expert_templates,
                                              std::map<Role, std::string> group_templates) {
    PersonaLibrary lib;
    for (auto role : kAllRoles) {
        if (!expert_templates.count(role) || trim(expert_templates[role]).empty() ||
            !group_templates.count(role) || trim(group_templates[role]).empty())
            fail(Errc::invalid_config, "persona templates missing for role " + to_string(role));
    }
    lib.expert_templates_ = std::move(expert_templates);
    lib.group_templates_ = std::move(group_templates);
    return lib;
}

static std::string join_dims(const std::vector<std::string>& dims) {
    std::string out;
    for (std::size_t i = 0; i < dims.size(); ++i) {
        if (i) out += ", ";
        out += dims[i];
    }
    return out;
}

std::string PersonaLibrary::expert_persona(Role role, int index,
                                           const std::vector<std::string>& value_dimensions) const {
    return render_template(expert_templates_.at(role),
                           {{"role", to_string(role)},
                            {"role_title", role_title(role)},
                            {"index", std::to_string(index)},
                            {"value_dimensions", join_dims(value_dimensions)}});
}

std::string PersonaLibrary::group_persona(Role role) const {
    return render_template(group_templates_.at(role),
                           {{"role", to_string(role)},
                            {"role_title", role_title(role)},
                            {"index", "group"},
                            {"value_dimensions", join_dims(default_value_dimensions())}});
}

std::vector<ExpertProfile> PersonaLibrary::make_group(Role role, int count,
                                                      const std::set<SourceKind>& source_scope) const {
    if (count < 1) fail(Errc::invalid_params, "a group needs at least one expert");
    std::vector<ExpertProfile> out;
    for (int i = 1; i <= count; ++i) {
        ExpertProfile p;
        p.role = role;
        p.index = i;
        p.source_scope = source_scope;
        p.persona = expert_persona(role, i, p.value_dimensions);
        p.validate();
        out.push_back(std::move(p));
    }
    return out;
}

}  // namespace ram2c
