#pragma once

#include <string>

#include "pmetlab/model.hpp"

namespace pmetlab {

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Binary container: magic "PMETLAB1", u32 version, config block (7 little-endian
// 64-bit ints), vocabulary (u32 count, length-prefixed strings), named f64 weight
// blobs (name, rank, dims, row-major data), trailing FNV-1a 64 checksum of all
// preceding bytes. Byte layout is fixed little-endian on every platform.
void save_checkpoint(const ToyTransformer& model, const std::string& path);
ToyTransformer load_checkpoint(const std::string& path);

}  // namespace pmetlab
