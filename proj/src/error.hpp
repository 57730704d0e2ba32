#pragma once

#include <stdexcept>
#include <string>

namespace dygl {

enum class ErrorCode : int {
  dimension = 1,
  configuration = 2,
  contract = 3,
  state = 4,
  numeric = 5,
  format = 6,
  version = 7,
  unsupported = 8,
  io = 9,
};

const char* error_code_name(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(error_code_name(code)) + " error: " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace dygl
