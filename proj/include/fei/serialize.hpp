#pragma once

#include <filesystem>
#include <string>

#include "fei/nn.hpp"

namespace fei {

/// Weight file layout:
///   8 bytes   magic "FEIW0001"
///   4 bytes   little-endian header length L
///   L bytes   UTF-8 JSON header (layers, shapes, feature flags, offsets)
///   rest      little-endian float32 blob
///
/// Errors carry the codes "bad-magic", "truncated-blob", "header-mismatch",
/// "bad-header" and "io-error".
void save_weights(const NetworkModel& model, const std::filesystem::path& path);
NetworkModel load_weights(const std::filesystem::path& path);

std::string encode_weights(const NetworkModel& model);
NetworkModel decode_weights(const std::string& bytes);

}  // namespace fei
