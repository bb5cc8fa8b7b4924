#pragma once

#include "fffvdi/types.hpp"

#include <filesystem>
#include <map>
#include <string>

namespace fffvdi::archive {

/// Contents of an npz-compatible container: named arrays (stored as
/// `<name>.npy` members) plus free-form text members such as JSON descriptors.
struct Archive {
    std::map<std::string, torch::Tensor> arrays;
    std::map<std::string, std::string> texts;
};

/// Writes an uncompressed zip readable by numpy.load. The file is written to a
/// temporary sibling and renamed into place.
void save(const std::filesystem::path& path, const Archive& archive);

/// Reads stored or deflated members. Throws Error(Data) on malformed input.
Archive load(const std::filesystem::path& path);

/// Copies every parameter and buffer of `module` into `archive` under
/// `prefix` + "/" + qualified name.
void store_module(Archive& archive, const std::string& prefix, const torch::nn::Module& module);

/// Loads parameters and buffers written by store_module. Missing names or
/// shape mismatches throw Error(Data).
void restore_module(const Archive& archive, const std::string& prefix, torch::nn::Module& module);

std::string encode_npy(const torch::Tensor& tensor);
torch::Tensor decode_npy(const std::string& bytes);

}  // namespace fffvdi::archive
