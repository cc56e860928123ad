#pragma once

#include <stdexcept>
#include <string>

namespace shadowlift {

enum class Errc {
    invalid_range,
    shape_mismatch,
    out_of_range,
    indivisible_dimension,
    channel_mismatch,
    already_expanded,
    io_error,
    dataset_error,
    config_error,
    checkpoint_error,
    empty_dataset,
};

const char* errc_name(Errc code);

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& message);

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

}  // namespace shadowlift
