#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace mlehr {

// Every failure surfaced by the library carries a stable kind ("MissingColumn",
// "CsvParse", ...) plus a detail string naming the offending entry.
class Error : public std::runtime_error {
   public:
    Error(std::string kind, std::string detail)
        : std::runtime_error(kind + ": " + detail), kind_(std::move(kind)), detail_(std::move(detail)) {}

    const std::string& kind() const noexcept { return kind_; }
    const std::string& detail() const noexcept { return detail_; }

   private:
    std::string kind_;
    std::string detail_;
};

[[noreturn]] inline void fail(std::string kind, std::string detail) {
    throw Error(std::move(kind), std::move(detail));
}

}  // namespace mlehr
