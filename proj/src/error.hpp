#pragma once

#include <stdexcept>
#include <string>

namespace fkb {

enum class ErrorKind {
  Layout,
  Shape,
  Numeric,
  Spec,
  Cache,
  Client,
  Divergence,
  Config,
  Partition,
  Format,
  Generation,
  Io,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// Raised by local training when the loss stops being finite.
class DivergenceError : public Error {
 public:
  DivergenceError(int round, int client, const std::string& what)
      : Error(ErrorKind::Divergence, what), round_(round), client_(client) {}

  int round() const noexcept { return round_; }
  int client() const noexcept { return client_; }

 private:
  int round_;
  int client_;
};

// Malformed FKB input. `offset` is the byte position where parsing stopped.
class FormatError : public Error {
 public:
  FormatError(std::size_t offset, const std::string& what)
      : Error(ErrorKind::Format, what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace fkb
