#pragma once

#include <stdexcept>
#include <string>

namespace graspadapt {

// Base class for all library errors. Configuration and usage mistakes
// (violated preconditions) throw std::invalid_argument instead.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Sensing produced no points (everything dropped or occluded).
class EmptyObservation : public Error {
 public:
  using Error::Error;
};

// A commanded EEF pose left the configured workspace box.
class WorkspaceLimit : public Error {
 public:
  using Error::Error;
};

// Data collection could not assemble the requested number of entries.
class CollectionFailed : public Error {
 public:
  using Error::Error;
};

// A range restriction left no dataset entries.
class EmptySubset : public Error {
 public:
  using Error::Error;
};

// A dataset file is malformed, truncated, version-mismatched or fails
// its checksum.
class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// An estimator was built from a dataset with no entries.
class EmptyDataset : public Error {
 public:
  using Error::Error;
};

// ICP refinement ended with a residual above the accept threshold.
class RefinementDiverged : public Error {
 public:
  using Error::Error;
};

// Registration input is rank-deficient (fewer than 3 pairs, collinear
// or coincident points).
class DegenerateConfiguration : public Error {
 public:
  using Error::Error;
};

class EmptyCloud : public Error {
 public:
  using Error::Error;
};

// A servo run pushed the EEF out of the workspace.
class DivergedFromWorkspace : public Error {
 public:
  using Error::Error;
};

// A study invariant was breached, e.g. a method that must not read ground
// truth did so. Maps to a distinct CLI exit code.
class ProtocolViolation : public Error {
 public:
  using Error::Error;
};

}  // namespace graspadapt
