#pragma once

#include <stdexcept>
#include <string>

namespace det {

//! Base class for all library errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DimensionMismatch : Error {
  using Error::Error;
};

struct InvalidVolume : Error {
  using Error::Error;
};

struct InvalidWeight : Error {
  using Error::Error;
};

struct EmptyDataset : Error {
  using Error::Error;
};

struct PointOutsideBox : Error {
  using Error::Error;
};

struct IncompatibleSupport : Error {
  using Error::Error;
};

struct InconsistentRatio : Error {
  using Error::Error;
};

struct NoSupport : Error {
  using Error::Error;
};

struct NoFreeDimensions : Error {
  using Error::Error;
};

struct NegativeScale : Error {
  using Error::Error;
};

struct UnknownDimension : Error {
  using Error::Error;
};

//! Parse failure in delimited input; row/column are 1-based, column 0 meaning
//! "whole row".
struct ParseError : Error {
  ParseError(std::size_t row, std::size_t column, const std::string& reason)
    : Error("parse error at row " + std::to_string(row) +
            (column ? ", column " + std::to_string(column) : std::string()) +
            ": " + reason)
    , row(row)
    , column(column)
  {
  }

  std::size_t row;
  std::size_t column;
};

struct MissingColumn : Error {
  using Error::Error;
};

struct NegativeWeight : Error {
  using Error::Error;
};

struct UnsupportedVersion : Error {
  using Error::Error;
};

struct CorruptFile : Error {
  using Error::Error;
};

struct IoFailure : Error {
  using Error::Error;
};

} // namespace det
