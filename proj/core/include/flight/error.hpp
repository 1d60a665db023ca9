#pragma once

#include <stdexcept>
#include <string>

namespace flight {

enum class ErrorKind {
  Config,        // invalid model/hardware/schedule configuration
  Data,          // bad numeric payload (non-finite inputs, ...)
  Format,        // malformed binary file / corrupt payload
  Encoding,      // instruction field overflow
  IllegalInst,   // undecodable instruction word
  Compile,       // lowering failure (missing mask, ...)
  Tiling,        // tile exceeds an on-chip buffer
  Allocation,    // off-chip region exceeds capacity
  Capacity,      // runtime capacity exceeded (KV, sequence length)
  Fault,         // simulator datapath/memory fault
  Io,            // filesystem
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& msg) {
  throw Error(kind, msg);
}

inline const char* to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::Config: return "config";
    case ErrorKind::Data: return "data";
    case ErrorKind::Format: return "format";
    case ErrorKind::Encoding: return "encoding";
    case ErrorKind::IllegalInst: return "illegal-instruction";
    case ErrorKind::Compile: return "compile";
    case ErrorKind::Tiling: return "tiling";
    case ErrorKind::Allocation: return "allocation";
    case ErrorKind::Capacity: return "capacity";
    case ErrorKind::Fault: return "fault";
    case ErrorKind::Io: return "io";
  }
  return "unknown";
}

}  // namespace flight
