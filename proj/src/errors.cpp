#include "ratebench/errors.hpp"

namespace ratebench {

std::string error_code(const std::exception & e) {
    if (dynamic_cast<const std::invalid_argument *>(&e)) return "invalid-argument";
    if (dynamic_cast<const FailedPrecondition *>(&e)) return "failed-precondition";
    if (dynamic_cast<const UnsupportedVersion *>(&e)) return "unsupported-version";
    if (dynamic_cast<const TrainingDiverged *>(&e)) return "training-diverged";
    return "internal";
}

}  // namespace ratebench
