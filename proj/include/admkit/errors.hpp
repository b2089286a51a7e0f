#pragma once

#include <stdexcept>
#include <string>

namespace admkit {

// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

// A value would need storage outside its declared grade set.
class GradeError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class SignatureMismatch : public Error {
 public:
  using Error::Error;
};

class RotorError : public Error {
 public:
  using Error::Error;
};

class OrderingError : public Error {
 public:
  using Error::Error;
};

class BinningError : public Error {
 public:
  using Error::Error;
};

class EmptyPriorError : public Error {
 public:
  using Error::Error;
};

class SigningError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

}  // namespace admkit
