#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "mcdut/core/tensor.hpp"
#include "mcdut/nets/registry.hpp"
#include "mcdut/train/optim.hpp"

namespace mcdut::train {

// Parameter blobs are little-endian f64 tensors keyed by registry name, in
// registry order. Shapes are part of the format; loading never reshapes.

inline constexpr char kBlobMagic[8] = {'M', 'C', 'D', 'T', 'B', 'L', 'B', '1'};

namespace detail {

template <typename P>
void write_raw(std::ofstream& os, const P& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(P));
}

template <typename P>
P read_raw(std::ifstream& is) {
  P v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(P));
  require(!is.fail(), ErrorKind::Io, "truncated checkpoint blob");
  return v;
}

inline void write_string(std::ofstream& os, const std::string& s) {
  write_raw<uint32_t>(os, static_cast<uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::ifstream& is) {
  const uint32_t n = read_raw<uint32_t>(is);
  std::string s(n, '\0');
  is.read(s.data(), n);
  require(!is.fail(), ErrorKind::Io, "truncated checkpoint blob");
  return s;
}

template <typename T>
void write_tensor(std::ofstream& os, const std::string& name, const Tensor<T>& t) {
  write_string(os, name);
  write_raw<uint32_t>(os, static_cast<uint32_t>(t.ndim()));
  for (int64_t d : t.shape()) write_raw<int64_t>(os, d);
  std::vector<double> buf(static_cast<size_t>(t.numel()));
  for (int64_t i = 0; i < t.numel(); ++i) buf[static_cast<size_t>(i)] = static_cast<double>(t[i]);
  os.write(reinterpret_cast<const char*>(buf.data()),
           static_cast<std::streamsize>(buf.size() * sizeof(double)));
}

template <typename T>
std::pair<std::string, Tensor<T>> read_tensor(std::ifstream& is) {
  const std::string name = read_string(is);
  const uint32_t nd = read_raw<uint32_t>(is);
  Shape shape(nd);
  for (uint32_t i = 0; i < nd; ++i) shape[i] = read_raw<int64_t>(is);
  Tensor<T> t(shape);
  std::vector<double> buf(static_cast<size_t>(t.numel()));
  is.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(buf.size() * sizeof(double)));
  require(!is.fail(), ErrorKind::Io, "truncated checkpoint blob reading " + name);
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(buf[static_cast<size_t>(i)]);
  return {name, std::move(t)};
}

inline std::ofstream open_blob_writer(const std::string& path, uint64_t count) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  require(os.good(), ErrorKind::Io, "cannot open for writing: " + path);
  os.write(kBlobMagic, sizeof(kBlobMagic));
  write_raw<uint64_t>(os, count);
  return os;
}

inline std::ifstream open_blob_reader(const std::string& path, uint64_t& count) {
  std::ifstream is(path, std::ios::binary);
  require(is.good(), ErrorKind::Io, "cannot open checkpoint blob: " + path);
  char magic[sizeof(kBlobMagic)];
  is.read(magic, sizeof(magic));
  require(!is.fail() && std::memcmp(magic, kBlobMagic, sizeof(magic)) == 0,
          ErrorKind::IncompatibleCheckpoint, "bad blob magic in " + path);
  count = read_raw<uint64_t>(is);
  return is;
}

}  // namespace detail

template <typename T>
void write_param_blob(const std::string& path, const nets::ParamRegistry<T>& reg) {
  auto os = detail::open_blob_writer(path, reg.size());
  for (const auto& [name, var] : reg) detail::write_tensor(os, name, var.value());
  require(os.good(), ErrorKind::Io, "failed writing " + path);
}

// Loads values into an existing registry. Name, order or shape mismatches are
// checkpoint incompatibilities, never silent reshapes.
template <typename T>
void read_param_blob(const std::string& path, nets::ParamRegistry<T>& reg) {
  uint64_t count = 0;
  auto is = detail::open_blob_reader(path, count);
  require(count == reg.size(), ErrorKind::IncompatibleCheckpoint,
          path + " holds " + std::to_string(count) + " tensors, architecture expects " +
              std::to_string(reg.size()));
  for (const auto& [name, var] : reg) {
    auto [got_name, tensor] = detail::read_tensor<T>(is);
    require(got_name == name, ErrorKind::IncompatibleCheckpoint,
            path + ": expected parameter " + name + ", found " + got_name);
    require(tensor.shape() == var.value().shape(), ErrorKind::IncompatibleCheckpoint,
            path + ": shape mismatch for " + name + " (" + shape_str(tensor.shape()) + " vs " +
                shape_str(var.value().shape()) + ")");
    const_cast<Variable<T>&>(var).mutable_value() = std::move(tensor);
  }
}

template <typename T>
void write_adam_blob(const std::string& path, const Adam<T>& opt, const nets::ParamRegistry<T>& reg) {
  require(opt.num_params() == reg.size(), ErrorKind::InternalConsistency,
          "optimizer/registry size mismatch");
  auto os = detail::open_blob_writer(path, 2 * reg.size());
  detail::write_raw<uint64_t>(os, opt.steps_taken());
  size_t i = 0;
  for (const auto& [name, var] : reg) {
    detail::write_tensor(os, name + ".m", opt.moment1(i));
    detail::write_tensor(os, name + ".v", opt.moment2(i));
    ++i;
  }
  require(os.good(), ErrorKind::Io, "failed writing " + path);
}

template <typename T>
void read_adam_blob(const std::string& path, Adam<T>& opt, const nets::ParamRegistry<T>& reg) {
  uint64_t count = 0;
  auto is = detail::open_blob_reader(path, count);
  require(count == 2 * reg.size(), ErrorKind::IncompatibleCheckpoint,
          path + ": optimizer state count mismatch");
  opt.set_steps_taken(detail::read_raw<uint64_t>(is));
  size_t i = 0;
  for (const auto& [name, var] : reg) {
    auto [mn, m] = detail::read_tensor<T>(is);
    auto [vn, v] = detail::read_tensor<T>(is);
    require(mn == name + ".m" && vn == name + ".v", ErrorKind::IncompatibleCheckpoint,
            path + ": unexpected optimizer entries " + mn + ", " + vn);
    require(m.shape() == var.value().shape() && v.shape() == var.value().shape(),
            ErrorKind::IncompatibleCheckpoint, path + ": optimizer shape mismatch for " + name);
    opt.moment1(i) = std::move(m);
    opt.moment2(i) = std::move(v);
    ++i;
  }
}

// Checkpoints are directories written to a temp sibling and swapped in via
// rename, so an interrupted save never corrupts the previous checkpoint.
class CheckpointWriter {
 public:
  explicit CheckpointWriter(const std::string& final_dir) : final_dir_(final_dir) {
    namespace fs = std::filesystem;
    tmp_dir_ = final_dir + ".tmp";
    std::error_code ec;
    fs::remove_all(tmp_dir_, ec);
    fs::create_directories(tmp_dir_);
    require(fs::is_directory(tmp_dir_), ErrorKind::Io, "cannot create checkpoint dir: " + tmp_dir_);
  }

  std::string path(const std::string& file) const {
    return (std::filesystem::path(tmp_dir_) / file).string();
  }

  void commit() {
    namespace fs = std::filesystem;
    const std::string old_dir = final_dir_ + ".old";
    std::error_code ec;
    fs::remove_all(old_dir, ec);
    if (fs::exists(final_dir_)) fs::rename(final_dir_, old_dir);
    fs::rename(tmp_dir_, final_dir_);
    fs::remove_all(old_dir, ec);
  }

 private:
  std::string final_dir_, tmp_dir_;
};

}  // namespace mcdut::train
