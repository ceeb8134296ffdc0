#pragma once

#include <stdexcept>
#include <string>

namespace layerslim {

// Every error raised by the library derives from Error so callers (the CLI in
// particular) can map families of failures onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error { using Error::Error; };
class IndexError : public Error { using Error::Error; };
class GraphStateError : public Error { using Error::Error; };
class ConfigError : public Error { using Error::Error; };
class LengthError : public Error { using Error::Error; };
class VocabError : public Error { using Error::Error; };
class PruneError : public Error { using Error::Error; };
class ComparisonError : public Error { using Error::Error; };
class DataError : public Error { using Error::Error; };
class PromptError : public Error { using Error::Error; };
class OptimizerError : public Error { using Error::Error; };
class EvaluationError : public Error { using Error::Error; };
class CheckpointError : public Error { using Error::Error; };
class ImportError : public Error { using Error::Error; };

// Raised when a loss or activation stops being finite during training.
class NumericError : public Error { using Error::Error; };

}  // namespace layerslim
