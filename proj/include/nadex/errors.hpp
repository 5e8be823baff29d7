#pragma once

#include <stdexcept>
#include <string>

namespace nadex {

// Every failure raised by the library derives from Error. The kind string is
// the machine-parsable prefix the CLI prints ("error: <kind>: <message>").
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define NADEX_DEFINE_ERROR(Name, tag)                                    \
  class Name : public Error {                                            \
   public:                                                               \
    explicit Name(const std::string& message) : Error(tag, message) {}   \
  }

NADEX_DEFINE_ERROR(DimensionError, "dimension");
NADEX_DEFINE_ERROR(ConfigError, "config");
NADEX_DEFINE_ERROR(IndexError, "index");
NADEX_DEFINE_ERROR(DomainError, "domain");
NADEX_DEFINE_ERROR(ContractError, "contract");
NADEX_DEFINE_ERROR(ParseError, "parse");
NADEX_DEFINE_ERROR(ValidationError, "validation");
NADEX_DEFINE_ERROR(NumericError, "numeric");
NADEX_DEFINE_ERROR(IoError, "io");
NADEX_DEFINE_ERROR(VersionError, "version");

#undef NADEX_DEFINE_ERROR

}  // namespace nadex
