#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ssufs {

enum class Errc {
  NoEntry,       // ENOENT
  Exists,        // EEXIST
  NotDir,        // ENOTDIR
  IsDir,         // EISDIR
  NoSpace,       // ENOSPC
  NameTooLong,   // ENAMETOOLONG
  NotEmpty,      // ENOTEMPTY
  Invalid,       // EINVAL
  Busy,          // EBUSY
};

std::string_view errc_name(Errc e);
int errc_errno(Errc e);

/// A POSIX-style failure of a file-system call.
class FsError : public std::runtime_error {
 public:
  FsError(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}
  Errc code() const { return code_; }

 private:
  Errc code_;
};

/// Durable state violates an invariant the caller relied on.
class CorruptionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ssufs
