#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "ridgealign/numkit.hpp"

namespace ridgealign {

/// Raised for malformed archives, missing tensors and shape mismatches.
class ArchiveError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Architecture and pipeline hyperparameters carried in the archive manifest.
struct ModelConfig {
  int c_coarse = 64;
  int c_fine = 32;
  int coarse_blocks = 4;   // N_c
  int fine_rounds = 1;     // N_f
  int block_side = 4;      // S1, query block side in coarse cells
  int sample_side = 8;     // S2, sampled key/value block side
  double span_sigmas = 3;  // r
  int heads = 4;
  double theta = 0.2;
  int window = 25;        // w, fine window side used at inference
  int train_window = 5;   // w used when building the training loss
  double lambda = 0.2;
  double alpha = 0.25;

  /// Desk-scale configuration used by the toy trainer and gradient check.
  static ModelConfig toy();

  /// Throws ConfigError when a field violates its constraint.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

struct TensorSpec {
  std::string name;
  std::vector<Index> shape;
};

/// Every tensor the configured architecture reads, in archive order.
std::vector<TensorSpec> required_tensors(const ModelConfig& config);

/// Named learned parameters plus the manifest. Immutable once built and safe
/// to share across threads.
class WeightArchive {
 public:
  WeightArchive() = default;
  explicit WeightArchive(ModelConfig config) : config_(config) {}

  /// Random initialization from a seed; deterministic.
  static WeightArchive initialize(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ModelConfig& mutable_config() { return config_; }

  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  /// Throws ArchiveError naming the tensor when it is absent.
  const Tensor<double>& at(const std::string& name) const;
  Tensor<double>& at(const std::string& name);
  void set(const std::string& name, Tensor<double> tensor);
  void erase(const std::string& name) { tensors_.erase(name); }

  const std::map<std::string, Tensor<double>>& tensors() const { return tensors_; }

  /// Checks every required tensor is present with the exact expected shape.
  void validate() const;

  /// Rounds every tensor through 32-bit float, the archive's storage format.
  void round_to_storage();

  std::vector<std::uint8_t> serialize() const;
  static WeightArchive deserialize(const std::vector<std::uint8_t>& bytes);

  void write(const std::filesystem::path& path) const;
  static WeightArchive read(const std::filesystem::path& path);

 private:
  ModelConfig config_;
  std::map<std::string, Tensor<double>> tensors_;
};

}  // namespace ridgealign
