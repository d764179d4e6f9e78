#pragma once

// Versioned JSON checkpoints holding a trained model, its normalization and
// the configuration that produced it.

#include <filesystem>
#include <optional>
#include <string>

#include <Eigen/Dense>

#include "elliptic/data.hpp"
#include "elliptic/exact_gp.hpp"
#include "elliptic/variational.hpp"

namespace elliptic {

inline constexpr int kCheckpointFormatVersion = 1;

struct Checkpoint {
  std::string model_kind;             // e.g. "ep-ep"
  std::optional<ModelSpec> variational;
  std::optional<ExactGP> exact;
  Eigen::MatrixXd train_x;            // standardized training inputs (exact GP only)
  Eigen::VectorXd train_y;
  Standardizer stats;
  bool classification = false;
  std::string config_json = "{}";     // opaque run configuration
};

std::string serialize(const Checkpoint& ck);
/// Throws ConfigError on malformed input or an unsupported format version.
Checkpoint deserialize(const std::string& text);

/// JSON text for a single mixing distribution (used for fitted noise models).
std::string serialize_mixing(const MixingDistribution& mixing);
MixingDistribution deserialize_mixing(const std::string& text);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace elliptic
