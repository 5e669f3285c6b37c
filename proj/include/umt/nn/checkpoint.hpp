#pragma once

// Binary parameter checkpoints.
//
// Layout (little-endian):
//   8 bytes  magic "UMTCKPT\0"
//   u32      format version (currently 1)
//   u32      tensor count
//   per tensor:
//     u32 name length, name bytes
//     u64 rows, u64 cols
//     rows * cols float64 values, row-major

#include "umt/nn/dense.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace umt::nn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Named tensors in write order.
class TensorArchive {
 public:
  void put(const std::string& name, const Matrix& value);
  void put(const std::string& prefix, const Encoder<double>& enc);
  void put(const std::string& prefix, const DenseLayer<double>& layer);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const Matrix& get(const std::string& name) const;

  /// Copies the named tensor into `target`, rejecting any shape difference.
  void restore(const std::string& name, Matrix& target) const;
  void restore(const std::string& name, Vector& target) const;
  void restore(const std::string& prefix, DenseLayer<double>& layer) const;
  void restore(const std::string& prefix, Encoder<double>& enc) const;

  /// Rebuilds an encoder whose architecture is implied by the stored shapes.
  Encoder<double> encoder(const std::string& prefix) const;
  DenseLayer<double> layer(const std::string& prefix) const;
  bool has_encoder(const std::string& prefix) const { return contains(prefix + ".0.weight"); }

  const std::vector<std::pair<std::string, Matrix>>& tensors() const { return tensors_; }

  void save(const std::filesystem::path& path) const;
  static TensorArchive load(const std::filesystem::path& path);

 private:
  std::vector<std::pair<std::string, Matrix>> tensors_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace umt::nn
