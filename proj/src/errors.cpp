#include "ssufs/errors.hpp"

#include <cerrno>

namespace ssufs {

std::string_view errc_name(Errc e) {
  switch (e) {
    case Errc::NoEntry: return "ENOENT";
    case Errc::Exists: return "EEXIST";
    case Errc::NotDir: return "ENOTDIR";
    case Errc::IsDir: return "EISDIR";
    case Errc::NoSpace: return "ENOSPC";
    case Errc::NameTooLong: return "ENAMETOOLONG";
    case Errc::NotEmpty: return "ENOTEMPTY";
    case Errc::Invalid: return "EINVAL";
    case Errc::Busy: return "EBUSY";
  }
  return "EUNKNOWN";
}

int errc_errno(Errc e) {
  switch (e) {
    case Errc::NoEntry: return ENOENT;
    case Errc::Exists: return EEXIST;
    case Errc::NotDir: return ENOTDIR;
    case Errc::IsDir: return EISDIR;
    case Errc::NoSpace: return ENOSPC;
    case Errc::NameTooLong: return ENAMETOOLONG;
    case Errc::NotEmpty: return ENOTEMPTY;
    case Errc::Invalid: return EINVAL;
    case Errc::Busy: return EBUSY;
  }
  return EIO;
}

}  // namespace ssufs
