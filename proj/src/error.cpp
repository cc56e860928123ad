#include "shadowlift/error.hpp"

namespace shadowlift {

const char* errc_name(Errc code) {
    switch (code) {
    case Errc::invalid_range: return "invalid-range";
    case Errc::shape_mismatch: return "shape-mismatch";
    case Errc::out_of_range: return "out-of-range";
    case Errc::indivisible_dimension: return "indivisible-dimension";
    case Errc::channel_mismatch: return "channel-mismatch";
    case Errc::already_expanded: return "already-expanded";
    case Errc::io_error: return "io-error";
    case Errc::dataset_error: return "dataset-error";
    case Errc::config_error: return "config-error";
    case Errc::checkpoint_error: return "checkpoint-error";
    case Errc::empty_dataset: return "empty-dataset";
    }
    return "unknown";
}

Error::Error(Errc code, const std::string& message)
    : std::runtime_error(message), code_(code) {}

}  // namespace shadowlift
