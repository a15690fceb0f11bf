#pragma once

#include <stdexcept>
#include <string>

namespace nestcl {

// Base for every library error. `kind()` is a stable machine-readable tag;
// the CLI prints it verbatim on stderr.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& message)
        : std::runtime_error(kind + ": " + message), m_kind(std::move(kind)) {}

    const std::string& kind() const noexcept { return m_kind; }

private:
    std::string m_kind;
};

#define NESTCL_DEFINE_ERROR(NAME)                                             \
    class NAME : public Error {                                               \
    public:                                                                    \
        explicit NAME(const std::string& message) : Error(#NAME, message) {}   \
    }

NESTCL_DEFINE_ERROR(ShapeError);
NESTCL_DEFINE_ERROR(DegenerateVector);
NESTCL_DEFINE_ERROR(DegenerateRow);
NESTCL_DEFINE_ERROR(ConfigError);
NESTCL_DEFINE_ERROR(IngestError);
NESTCL_DEFINE_ERROR(SplitError);
NESTCL_DEFINE_ERROR(LowShotError);
NESTCL_DEFINE_ERROR(EncodingError);
NESTCL_DEFINE_ERROR(TraceError);
NESTCL_DEFINE_ERROR(CheckpointError);
NESTCL_DEFINE_ERROR(DivergenceError);
NESTCL_DEFINE_ERROR(EvalError);
NESTCL_DEFINE_ERROR(ProbeError);
NESTCL_DEFINE_ERROR(EmptyDataset);

#undef NESTCL_DEFINE_ERROR

} // namespace nestcl
