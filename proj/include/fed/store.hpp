#pragma once

// On-disk formats. All integers and floats are little-endian.
//
// Prediction store ("FEDP", version 1):
//   magic[4] | u16 version | u16 flags (bit 0: ragged) | u64 N | u64 M | u64 C
//   ragged only: u32 count[N] | u32 member_id[sum count]
//   f32 probabilities, row-major over (i, member, c); ragged mode lists only
//   the members in point i's id table
//   u64 metadata length | metadata JSON (UTF-8)
// In ragged mode N counts every point of the dataset; points with count 0
// are the excluded ones.
//
// Dataset ("FEDD"), member parameters ("FEDM") and generator ("FEDG") files
// share the magic | u16 version | u16 flags prefix; see store.cpp for their
// bodies.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "fed/data.hpp"
#include "fed/generator.hpp"
#include "fed/posterior.hpp"
#include "fed/tensor.hpp"

namespace fed::store {

inline constexpr std::uint16_t kFormatVersion = 1;

struct PredictionStore {
    bool ragged = false;
    Tensor dense;                             // [N x M x C] when !ragged
    posterior::RaggedPredictions heldout;     // when ragged
    nlohmann::json metadata = nlohmann::json::object();
};

std::string encode_predictions(const Tensor& dense, const nlohmann::json& metadata);
std::string encode_predictions(const posterior::RaggedPredictions& heldout, std::size_t total_points,
                               const nlohmann::json& metadata);
/// Throws FormatError on bad magic, version, sizes, or rows not summing to 1 within 1e-6.
PredictionStore decode_predictions(const std::string& bytes);

std::string encode_dataset(const data::LabeledDataset& ds, bool with_labels = true);
data::LabeledDataset decode_dataset(const std::string& bytes);

std::string encode_members(const MlpSpec& spec, const std::vector<ModelParams>& members,
                           const nlohmann::json& metadata);
std::vector<ModelParams> decode_members(const std::string& bytes);

struct GeneratorFile {
    gen::GeneratorSpec spec;
    gen::GeneratorParams params;
    nlohmann::json metadata = nlohmann::json::object();
};

std::string encode_generator(const GeneratorFile& file);
GeneratorFile decode_generator(const std::string& bytes);

nlohmann::json spec_to_json(const gen::GeneratorSpec& spec);
gen::GeneratorSpec spec_from_json(const nlohmann::json& j);

/// Reads a whole file; throws ArtifactError naming `producer` when it is missing.
std::string read_file(const std::filesystem::path& path, const std::string& producer);
/// Writes through a temporary sibling and renames over the target.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);

}  // namespace fed::store
