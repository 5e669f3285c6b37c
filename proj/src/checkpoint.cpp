#include "umt/nn/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace umt::nn {

namespace {

constexpr char kMagic[8] = {'U', 'M', 'T', 'C', 'K', 'P', 'T', '\0'};

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const std::string& what) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw CheckpointError("truncated checkpoint while reading " + what);
  return v;
}

std::string shape_string(Index r, Index c) { return std::to_string(r) + "x" + std::to_string(c); }

}  // namespace

void TensorArchive::put(const std::string& name, const Matrix& value) {
  if (contains(name)) throw CheckpointError("duplicate tensor name '" + name + "'");
  index_[name] = tensors_.size();
  tensors_.emplace_back(name, value);
}

void TensorArchive::put(const std::string& prefix, const DenseLayer<double>& layer) {
  put(prefix + ".weight", layer.weight);
  put(prefix + ".bias", Matrix(layer.bias));
}

void TensorArchive::put(const std::string& prefix, const Encoder<double>& enc) {
  for (Index i = 0; i < enc.num_layers(); ++i) put(prefix + "." + std::to_string(i), enc.layers()[i]);
}

const Matrix& TensorArchive::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw CheckpointError("checkpoint has no tensor '" + name + "'");
  return tensors_[it->second].second;
}

void TensorArchive::restore(const std::string& name, Matrix& target) const {
  const Matrix& stored = get(name);
  if (stored.rows() != target.rows() || stored.cols() != target.cols()) {
    throw CheckpointError("shape mismatch for '" + name + "': checkpoint has " +
                          shape_string(stored.rows(), stored.cols()) + ", model expects " +
                          shape_string(target.rows(), target.cols()));
  }
  target = stored;
}

void TensorArchive::restore(const std::string& name, Vector& target) const {
  Matrix tmp(target.rows(), 1);
  restore(name, tmp);
  target = tmp.col(0);
}

void TensorArchive::restore(const std::string& prefix, DenseLayer<double>& layer) const {
  restore(prefix + ".weight", layer.weight);
  restore(prefix + ".bias", layer.bias);
}

void TensorArchive::restore(const std::string& prefix, Encoder<double>& enc) const {
  if (contains(prefix + "." + std::to_string(enc.num_layers()) + ".weight")) {
    throw CheckpointError("checkpoint encoder '" + prefix + "' has more layers than the model (" +
                          std::to_string(enc.num_layers()) + ")");
  }
  for (Index i = 0; i < enc.num_layers(); ++i) restore(prefix + "." + std::to_string(i), enc.layers()[i]);
}

DenseLayer<double> TensorArchive::layer(const std::string& prefix) const {
  const Matrix& w = get(prefix + ".weight");
  DenseLayer<double> l(w.cols(), w.rows());
  restore(prefix, l);
  return l;
}

Encoder<double> TensorArchive::encoder(const std::string& prefix) const {
  std::vector<DenseLayer<double>> layers;
  for (int i = 0; contains(prefix + "." + std::to_string(i) + ".weight"); ++i) {
    layers.push_back(layer(prefix + "." + std::to_string(i)));
  }
  if (layers.empty()) throw CheckpointError("checkpoint has no encoder '" + prefix + "'");
  try {
    return Encoder<double>(std::move(layers));
  } catch (const ShapeError& e) {
    throw CheckpointError("checkpoint encoder '" + prefix + "' is inconsistent: " + e.what());
  }
}

void TensorArchive::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError("cannot write checkpoint " + path.string());
  os.write(kMagic, sizeof(kMagic));
  write_pod(os, kCheckpointVersion);
  write_pod(os, static_cast<std::uint32_t>(tensors_.size()));
  for (const auto& [name, m] : tensors_) {
    write_pod(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod(os, static_cast<std::uint64_t>(m.rows()));
    write_pod(os, static_cast<std::uint64_t>(m.cols()));
    for (Index r = 0; r < m.rows(); ++r)
      for (Index c = 0; c < m.cols(); ++c) write_pod(os, m(r, c));
  }
  if (!os) throw CheckpointError("failed writing checkpoint " + path.string());
}

TensorArchive TensorArchive::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot read checkpoint " + path.string());
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
    throw CheckpointError(path.string() + " is not a checkpoint file");
  }
  const auto version = read_pod<std::uint32_t>(is, "version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  const auto count = read_pod<std::uint32_t>(is, "tensor count");
  TensorArchive archive;
  for (std::uint32_t t = 0; t < count; ++t) {
    const auto len = read_pod<std::uint32_t>(is, "name length");
    if (len > 4096) throw CheckpointError("corrupt checkpoint: tensor name too long");
    std::string name(len, '\0');
    is.read(name.data(), len);
    const auto rows = read_pod<std::uint64_t>(is, name + " rows");
    const auto cols = read_pod<std::uint64_t>(is, name + " cols");
    if (rows > (1u << 24) || cols > (1u << 24)) throw CheckpointError("corrupt checkpoint: implausible shape for " + name);
    Matrix m(static_cast<Index>(rows), static_cast<Index>(cols));
    for (Index r = 0; r < m.rows(); ++r)
      for (Index c = 0; c < m.cols(); ++c) m(r, c) = read_pod<double>(is, name);
    archive.put(name, m);
  }
  return archive;
}

}  // namespace umt::nn
