#pragma once

// Self-describing checkpoint container: a JSON config record followed by
// named float32 tensors. Byte layout is documented in
// docs/checkpoint_format.md so other tooling can read it.

#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "v2w/autodiff.hpp"
#include "v2w/common.hpp"

namespace v2w {

inline constexpr char kCheckpointMagic[8] = {'V', '2', 'W', 'C', 'K', 'P', 'T', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  nlohmann::json config;
  std::vector<std::pair<std::string, Mat>> tensors;  // insertion order preserved

  const Mat& tensor(const std::string& name) const {
    for (const auto& [n, m] : tensors)
      if (n == name) return m;
    throw Error("checkpoint: missing tensor " + name);
  }
  bool has_tensor(const std::string& name) const {
    for (const auto& [n, m] : tensors)
      if (n == name) return true;
    return false;
  }
};

namespace detail {

template <typename T>
void write_raw(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw Error("checkpoint: truncated file");
  return v;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("checkpoint: cannot write " + path);
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::write_raw<std::uint32_t>(out, kCheckpointVersion);
  std::string config = ckpt.config.dump();
  detail::write_raw<std::uint32_t>(out, static_cast<std::uint32_t>(config.size()));
  out.write(config.data(), static_cast<std::streamsize>(config.size()));
  detail::write_raw<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, m] : ckpt.tensors) {
    detail::write_raw<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_raw<std::uint8_t>(out, 2);
    detail::write_raw<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
    detail::write_raw<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j)
        detail::write_raw<float>(out, static_cast<float>(m(i, j)));
  }
  if (!out) throw Error("checkpoint: write failed for " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("checkpoint: cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::string(magic, 8) != std::string(kCheckpointMagic, 8))
    throw Error("checkpoint: bad magic in " + path);
  auto version = detail::read_raw<std::uint32_t>(in);
  if (version != kCheckpointVersion)
    throw Error("checkpoint: unsupported version " + std::to_string(version));
  auto config_len = detail::read_raw<std::uint32_t>(in);
  std::string config(config_len, '\0');
  in.read(config.data(), config_len);
  if (!in) throw Error("checkpoint: truncated config");
  Checkpoint ckpt;
  try {
    ckpt.config = nlohmann::json::parse(config);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(std::string("checkpoint: bad config json: ") + e.what());
  }
  auto count = detail::read_raw<std::uint32_t>(in);
  for (std::uint32_t t = 0; t < count; ++t) {
    auto name_len = detail::read_raw<std::uint16_t>(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    auto ndims = detail::read_raw<std::uint8_t>(in);
    if (ndims != 2) throw Error("checkpoint: tensor " + name + " has unsupported rank");
    auto rows = detail::read_raw<std::uint64_t>(in);
    auto cols = detail::read_raw<std::uint64_t>(in);
    Mat m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j)
        m(i, j) = static_cast<double>(detail::read_raw<float>(in));
    ckpt.tensors.emplace_back(std::move(name), std::move(m));
  }
  return ckpt;
}

}  // namespace v2w
