#pragma once

#include <filesystem>

#include "cda/models.hpp"

namespace cda {

/// One raw little-endian tensor file per named parameter (snapshot heads
/// included, under "snapshot.") plus index.json listing
/// {name, shape, dtype, sha256, file}.
template <typename T>
void save_checkpoint(DualModel<T>& model, const std::filesystem::path& dir);

/// Loads into a model built from the same ModelConfig. Throws FormatError on
/// missing tensors, shape or dtype mismatch, DataError on digest mismatch.
template <typename T>
void load_checkpoint(DualModel<T>& model, const std::filesystem::path& dir);

}  // namespace cda
