#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ram2c {

/// Machine-readable failure categories. The kebab-case names returned by
/// to_string() are part of the CLI and HTTP error contract.
enum class Errc {
    invalid_argument,
    precondition,
    unknown_backend_id,
    backend_unreachable,
    empty_response,
    dimension_mismatch,
    zero_vector,
    invalid_params,
    empty_store,
    mixed_chunk_ids,
    stage_failure,
    distinctness_exhausted,
    invalid_record,
    unknown_item,
    duplicate_choice,
    row_sum_mismatch,
    no_choices,
    unreadable_file,
    malformed_file,
    closed_session,
    not_found,
    config_not_found,
    invalid_config,
    invalid_flag,
};

std::string_view to_string(Errc code) noexcept;

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

[[noreturn]] void fail(Errc code, const std::string& message);

}  // namespace ram2c
