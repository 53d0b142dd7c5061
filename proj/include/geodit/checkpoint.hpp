#pragma once

#include "geodit/config.hpp"
#include "geodit/dit.hpp"
#include "geodit/types.hpp"

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>

namespace geodit {

inline constexpr int kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// File layout: the 8 bytes "GEODITCK", a little-endian uint32 version, a
/// little-endian uint64 header length, a UTF-8 JSON header (version, stage,
/// step, config, metadata, and the array directory with name, rows, cols and
/// byte offset), then every array as row-major little-endian float64.
struct Checkpoint {
    int version = kCheckpointVersion;
    ModelConfig config;
    Stage stage = Stage::unconditional;
    long step = 0;
    std::map<std::string, std::string> metadata;
    std::map<std::string, MatrixXd> arrays;
};

/// Throws CheckpointError unless the arrays are exactly those of a model built
/// from (config, stage), with matching shapes.
void validate_checkpoint(const Checkpoint &ckpt);

void save_checkpoint(const Checkpoint &ckpt, const std::filesystem::path &path);
Checkpoint load_checkpoint(const std::filesystem::path &path);

template <typename Scalar>
Checkpoint make_checkpoint(const GeoDiT<Scalar> &model, long step,
                           std::map<std::string, std::string> metadata = {});

/// Model of the checkpoint's stage holding its arrays.
template <typename Scalar>
GeoDiT<Scalar> model_from_checkpoint(const Checkpoint &ckpt);

/// Raw array bundle in the same container, for state that is not a model
/// (optimizer moments). `header` must be a JSON object; "arrays" is reserved.
void save_array_file(const std::filesystem::path &path, const std::string &header_json,
                     const std::map<std::string, MatrixXd> &arrays);
std::map<std::string, MatrixXd> load_array_file(const std::filesystem::path &path, std::string *header_json = nullptr);

} // namespace geodit
