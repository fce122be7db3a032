#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>

#include <json.hpp>

#include "psiflow/decomp.hpp"
#include "psiflow/psirep.hpp"

namespace psiflow {

/// Model container layout:
///   "PSIF" | u32 version | u64 header length | JSON header |
///   f64 arrays (per local model: hidden weights and biases layer by layer,
///   then beta, all row-major) | u32 CRC-32 of everything before it.
/// Integers and floats are little-endian.
inline constexpr std::uint32_t kModelFormatVersion = 1;

using SystemResolver = std::function<IvpSystem(const std::string& name, const std::map<std::string, double>& params)>;

void save_model(const DecomposedModel& model, const std::string& path);
void save_model(const PsiModel& model, const std::string& path);

/// Throws io-failure, version-mismatch or checksum-mismatch.
DecomposedModel load_model(const std::string& path, const SystemResolver& resolve);

std::string serialize_model(const DecomposedModel& model);
DecomposedModel deserialize_model(const std::string& bytes, const SystemResolver& resolve);

/// Header plus per-model array summaries, for inspection.
nlohmann::json model_manifest(const DecomposedModel& model);

nlohmann::json to_json(const Interval& iv);
nlohmann::json to_json(const TrainingDomain& dom);
Interval interval_from_json(const nlohmann::json& j);
TrainingDomain domain_from_json(const nlohmann::json& j);

}  // namespace psiflow
