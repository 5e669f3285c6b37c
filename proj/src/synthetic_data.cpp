#include "umt/synthetic_data.hpp"

#include <Eigen/QR>

#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace umt {

std::string to_string(ViewType v) {
  switch (v) {
    case ViewType::kMultiView:
      return "multi_view";
    case ViewType::kSingleViewM1:
      return "single_view_m1";
    case ViewType::kSingleViewM2:
      return "single_view_m2";
  }
  return "unknown";
}

void SyntheticConfig::validate() const {
  if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
  if (input_dim < num_classes) throw ConfigError("input_dim must be >= num_classes (features must fit orthogonally)");
  if (!(single_view_fraction >= 0 && single_view_fraction <= 1))
    throw ConfigError("single_view_fraction must lie in [0, 1]");
  if (!(strong_modality_bias >= 0 && strong_modality_bias <= 1))
    throw ConfigError("strong_modality_bias must lie in [0, 1]");
  if (!(feature_strength > 0)) throw ConfigError("feature_strength must be > 0");
  if (!(weak_signal_scale >= 0)) throw ConfigError("weak_signal_scale must be >= 0");
  if (!(noise_std >= 0)) throw ConfigError("noise_std must be >= 0");
  if (distractor_count < 0) throw ConfigError("distractor_count must be >= 0");
  if (train_size <= 0) throw ConfigError("train_size must be > 0");
  if (test_size <= 0) throw ConfigError("test_size must be > 0");
}

Sample Split::sample(Index i) const {
  return Sample{x_m1.col(i), x_m2.col(i), labels[static_cast<std::size_t>(i)], views[static_cast<std::size_t>(i)]};
}

namespace {

Matrix orthonormal_columns(Index d, Index k, Rng& rng) {
  std::normal_distribution<double> normal;
  Matrix g(d, k);
  for (Index j = 0; j < k; ++j)
    for (Index i = 0; i < d; ++i) g(i, j) = normal(rng);
  Eigen::HouseholderQR<Matrix> qr(g);
  return qr.householderQ() * Matrix::Identity(d, k);
}

Split draw_split(const SyntheticConfig& c, const FeatureDictionary& dict, int n, Rng& rng) {
  Split s;
  s.x_m1.resize(c.input_dim, n);
  s.x_m2.resize(c.input_dim, n);
  s.labels.resize(static_cast<std::size_t>(n));
  s.views.resize(static_cast<std::size_t>(n));

  std::uniform_int_distribution<int> pick_class(0, c.num_classes - 1);
  std::uniform_int_distribution<int> pick_other(0, c.num_classes - 2);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double weak = c.weak_signal_scale;

  for (int i = 0; i < n; ++i) {
    const int y = pick_class(rng);
    ViewType view = ViewType::kMultiView;
    if (unit(rng) < c.single_view_fraction) {
      view = unit(rng) < c.strong_modality_bias ? ViewType::kSingleViewM1 : ViewType::kSingleViewM2;
    }
    auto x1 = s.x_m1.col(i);
    auto x2 = s.x_m2.col(i);
    for (Index r = 0; r < c.input_dim; ++r) x1(r) = c.noise_std * normal(rng);
    for (Index r = 0; r < c.input_dim; ++r) x2(r) = c.noise_std * normal(rng);
    if (view != ViewType::kSingleViewM2) x1 += dict.m1.col(y);
    if (view != ViewType::kSingleViewM1) x2 += weak * dict.m2.col(y);
    for (int t = 0; t < c.distractor_count; ++t) {
      int other = pick_other(rng);
      if (other >= y) ++other;
      x1 += 0.2 * dict.m1.col(other);
    }
    for (int t = 0; t < c.distractor_count; ++t) {
      int other = pick_other(rng);
      if (other >= y) ++other;
      x2 += 0.2 * dict.m2.col(other);
    }
    s.labels[static_cast<std::size_t>(i)] = y;
    s.views[static_cast<std::size_t>(i)] = view;
  }
  return s;
}

}  // namespace

FeatureDictionary make_feature_dictionary(const SyntheticConfig& config) {
  if (config.input_dim < config.num_classes) {
    throw ConfigError("input_dim must be >= num_classes (features must fit orthogonally)");
  }
  Rng rng(derive_seed(config.seed, "feature_dictionary"));
  FeatureDictionary dict;
  dict.m1 = config.feature_strength * orthonormal_columns(config.input_dim, config.num_classes, rng);
  dict.m2 = config.feature_strength * orthonormal_columns(config.input_dim, config.num_classes, rng);
  return dict;
}

MultiModalDataset generate_dataset(const SyntheticConfig& config) {
  config.validate();
  MultiModalDataset ds;
  ds.config = config;
  ds.features = make_feature_dictionary(config);
  Rng train_rng(derive_seed(config.seed, "train"));
  Rng test_rng(derive_seed(config.seed, "test"));
  ds.train = draw_split(config, ds.features, config.train_size, train_rng);
  ds.test = draw_split(config, ds.features, config.test_size, test_rng);
  return ds;
}

DatasetSummary summarize(const Split& split, int num_classes) {
  DatasetSummary s;
  s.class_counts.assign(static_cast<std::size_t>(num_classes), 0);
  for (std::size_t i = 0; i < split.labels.size(); ++i) {
    ++s.view_counts[static_cast<std::size_t>(split.views[i])];
    ++s.class_counts.at(static_cast<std::size_t>(split.labels[i]));
  }
  s.total = split.size();
  return s;
}

DatasetSummaryPair dataset_summary(const MultiModalDataset& ds) {
  if (ds.train.empty() || ds.test.empty()) throw ConfigError("dataset splits must be non-empty");
  return {summarize(ds.train, ds.num_classes()), summarize(ds.test, ds.num_classes())};
}

// ---------------------------------------------------------------------------
// Dataset files

namespace {

constexpr char kBinaryMagic[8] = {'U', 'M', 'T', 'D', 'A', 'T', 'A', '\0'};
constexpr std::uint32_t kDatasetVersion = 1;

bool is_text_path(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  return ext == ".tsv" || ext == ".txt";
}

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

double parse_double(const std::string& token) {
  double v = 0;
  auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
  if (ec != std::errc() || ptr != token.data() + token.size()) {
    throw std::runtime_error("malformed number '" + token + "' in dataset file");
  }
  return v;
}

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("truncated dataset file");
  return v;
}

void write_header_text(std::ostream& os, const SyntheticConfig& c) {
  os << "umt-dataset\t" << kDatasetVersion << '\n';
  os << "k=" << c.num_classes << "\td=" << c.input_dim << "\tn_train=" << c.train_size << "\tn_test=" << c.test_size
     << "\tmu=" << format_double(c.single_view_fraction) << "\trho=" << format_double(c.strong_modality_bias)
     << "\tseed=" << c.seed << "\tfeature_strength=" << format_double(c.feature_strength)
     << "\tweak_signal_scale=" << format_double(c.weak_signal_scale) << "\tnoise_std=" << format_double(c.noise_std)
     << "\tdistractor_count=" << c.distractor_count << '\n';
}

void write_rows_text(std::ostream& os, const Split& s, int split_code) {
  for (Index i = 0; i < s.size(); ++i) {
    os << split_code << '\t' << s.labels[static_cast<std::size_t>(i)] << '\t'
       << static_cast<int>(s.views[static_cast<std::size_t>(i)]);
    for (Index r = 0; r < s.x_m1.rows(); ++r) os << '\t' << format_double(s.x_m1(r, i));
    for (Index r = 0; r < s.x_m2.rows(); ++r) os << '\t' << format_double(s.x_m2(r, i));
    os << '\n';
  }
}

SyntheticConfig parse_header_fields(const std::string& line) {
  SyntheticConfig c;
  std::istringstream in(line);
  std::string field;
  while (in >> field) {
    const auto eq = field.find('=');
    if (eq == std::string::npos) throw std::runtime_error("malformed dataset header field '" + field + "'");
    const std::string key = field.substr(0, eq);
    const std::string value = field.substr(eq + 1);
    if (key == "k") c.num_classes = std::stoi(value);
    else if (key == "d") c.input_dim = std::stoi(value);
    else if (key == "n_train") c.train_size = std::stoi(value);
    else if (key == "n_test") c.test_size = std::stoi(value);
    else if (key == "mu") c.single_view_fraction = parse_double(value);
    else if (key == "rho") c.strong_modality_bias = parse_double(value);
    else if (key == "seed") c.seed = std::stoull(value);
    else if (key == "feature_strength") c.feature_strength = parse_double(value);
    else if (key == "weak_signal_scale") c.weak_signal_scale = parse_double(value);
    else if (key == "noise_std") c.noise_std = parse_double(value);
    else if (key == "distractor_count") c.distractor_count = std::stoi(value);
    else throw std::runtime_error("unknown dataset header field '" + key + "'");
  }
  return c;
}

void allocate(Split& s, int d, int n) {
  s.x_m1.resize(d, n);
  s.x_m2.resize(d, n);
  s.labels.resize(static_cast<std::size_t>(n));
  s.views.resize(static_cast<std::size_t>(n));
}

void check_row(const SyntheticConfig& c, int label, int view) {
  if (label < 0 || label >= c.num_classes) throw std::runtime_error("dataset label out of range");
  if (view < 0 || view > 2) throw std::runtime_error("dataset view code must be 0, 1 or 2");
}

MultiModalDataset load_text(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("umt-dataset", 0) != 0) throw std::runtime_error("not a umt dataset file");
  if (!std::getline(in, line)) throw std::runtime_error("dataset header missing");
  MultiModalDataset ds;
  ds.config = parse_header_fields(line);
  const auto& c = ds.config;
  allocate(ds.train, c.input_dim, c.train_size);
  allocate(ds.test, c.input_dim, c.test_size);
  Index filled[2] = {0, 0};
  std::string tok;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    int split = 0, label = 0, view = 0;
    row >> split >> label >> view;
    if (!row || split < 0 || split > 1) throw std::runtime_error("malformed dataset row");
    check_row(c, label, view);
    Split& s = split == 0 ? ds.train : ds.test;
    const Index i = filled[split]++;
    if (i >= s.size()) throw std::runtime_error("more dataset rows than the header declares");
    s.labels[static_cast<std::size_t>(i)] = label;
    s.views[static_cast<std::size_t>(i)] = static_cast<ViewType>(view);
    for (Index r = 0; r < c.input_dim; ++r) {
      if (!(row >> tok)) throw std::runtime_error("dataset row too short");
      s.x_m1(r, i) = parse_double(tok);
    }
    for (Index r = 0; r < c.input_dim; ++r) {
      if (!(row >> tok)) throw std::runtime_error("dataset row too short");
      s.x_m2(r, i) = parse_double(tok);
    }
  }
  if (filled[0] != ds.train.size() || filled[1] != ds.test.size())
    throw std::runtime_error("dataset file has fewer rows than the header declares");
  ds.features = make_feature_dictionary(c);
  return ds;
}

void write_binary(std::ostream& os, const MultiModalDataset& ds) {
  const auto& c = ds.config;
  os.write(kBinaryMagic, sizeof(kBinaryMagic));
  write_pod(os, kDatasetVersion);
  write_pod<std::int32_t>(os, c.num_classes);
  write_pod<std::int32_t>(os, c.input_dim);
  write_pod<std::int32_t>(os, c.train_size);
  write_pod<std::int32_t>(os, c.test_size);
  write_pod(os, c.single_view_fraction);
  write_pod(os, c.strong_modality_bias);
  write_pod(os, c.seed);
  write_pod(os, c.feature_strength);
  write_pod(os, c.weak_signal_scale);
  write_pod(os, c.noise_std);
  write_pod<std::int32_t>(os, c.distractor_count);
  for (const Split* s : {&ds.train, &ds.test}) {
    for (Index i = 0; i < s->size(); ++i) {
      write_pod<std::int32_t>(os, s->labels[static_cast<std::size_t>(i)]);
      write_pod<std::int32_t>(os, static_cast<std::int32_t>(s->views[static_cast<std::size_t>(i)]));
      os.write(reinterpret_cast<const char*>(s->x_m1.col(i).data()), sizeof(double) * c.input_dim);
      os.write(reinterpret_cast<const char*>(s->x_m2.col(i).data()), sizeof(double) * c.input_dim);
    }
  }
}

MultiModalDataset load_binary(std::istream& in) {
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kBinaryMagic, sizeof(magic)) != 0) throw std::runtime_error("not a umt dataset file");
  const auto version = read_pod<std::uint32_t>(in);
  if (version != kDatasetVersion) throw std::runtime_error("unsupported dataset version " + std::to_string(version));
  MultiModalDataset ds;
  auto& c = ds.config;
  c.num_classes = read_pod<std::int32_t>(in);
  c.input_dim = read_pod<std::int32_t>(in);
  c.train_size = read_pod<std::int32_t>(in);
  c.test_size = read_pod<std::int32_t>(in);
  c.single_view_fraction = read_pod<double>(in);
  c.strong_modality_bias = read_pod<double>(in);
  c.seed = read_pod<std::uint64_t>(in);
  c.feature_strength = read_pod<double>(in);
  c.weak_signal_scale = read_pod<double>(in);
  c.noise_std = read_pod<double>(in);
  c.distractor_count = read_pod<std::int32_t>(in);
  c.validate();
  allocate(ds.train, c.input_dim, c.train_size);
  allocate(ds.test, c.input_dim, c.test_size);
  for (Split* s : {&ds.train, &ds.test}) {
    for (Index i = 0; i < s->size(); ++i) {
      const int label = read_pod<std::int32_t>(in);
      const int view = read_pod<std::int32_t>(in);
      check_row(c, label, view);
      s->labels[static_cast<std::size_t>(i)] = label;
      s->views[static_cast<std::size_t>(i)] = static_cast<ViewType>(view);
      in.read(reinterpret_cast<char*>(s->x_m1.col(i).data()), sizeof(double) * c.input_dim);
      in.read(reinterpret_cast<char*>(s->x_m2.col(i).data()), sizeof(double) * c.input_dim);
      if (!in) throw std::runtime_error("truncated dataset file");
    }
  }
  ds.features = make_feature_dictionary(c);
  return ds;
}

}  // namespace

void save_dataset(const MultiModalDataset& ds, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (is_text_path(path)) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    write_header_text(os, ds.config);
    write_rows_text(os, ds.train, 0);
    write_rows_text(os, ds.test, 1);
  } else {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    write_binary(os, ds);
  }
}

MultiModalDataset load_dataset(const std::filesystem::path& path) {
  if (is_text_path(path)) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    return load_text(in);
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return load_binary(in);
}

}  // namespace umt
