#pragma once

#include <stdexcept>
#include <string>

namespace hcp {

// Every error carries a short machine-readable kind; the CLI prints
// "error: <kind>: <message>" on a single line.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& message)
        : std::runtime_error(message), kind_(std::move(kind)) {}

    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

#define HCP_DEFINE_ERROR(Name, tag)                                        \
    class Name : public Error {                                            \
    public:                                                                \
        explicit Name(const std::string& message) : Error(tag, message) {} \
    }

HCP_DEFINE_ERROR(ShapeError, "shape");
HCP_DEFINE_ERROR(DomainError, "domain");
HCP_DEFINE_ERROR(ContractError, "contract");
HCP_DEFINE_ERROR(BoundsError, "bounds");
HCP_DEFINE_ERROR(ProtocolError, "protocol");
HCP_DEFINE_ERROR(ConfigError, "config");
HCP_DEFINE_ERROR(DatasetError, "dataset");
HCP_DEFINE_ERROR(RegistryError, "registry");
HCP_DEFINE_ERROR(StateError, "state");
HCP_DEFINE_ERROR(MetricError, "metric");
HCP_DEFINE_ERROR(SchemaError, "schema");
HCP_DEFINE_ERROR(ParseError, "parse");
HCP_DEFINE_ERROR(IoError, "io");
HCP_DEFINE_ERROR(NumericError, "numeric");

#undef HCP_DEFINE_ERROR

}  // namespace hcp
