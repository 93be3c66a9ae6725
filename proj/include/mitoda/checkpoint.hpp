#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include <nlohmann/json.hpp>

#include "mitoda/error.hpp"
#include "mitoda/nets.hpp"
#include "mitoda/random.hpp"

namespace mitoda {

namespace fs = std::filesystem;

inline constexpr std::array<char, 8> kCheckpointMagic{'M', 'I', 'T', 'O', 'C', 'K', 'P', '1'};

inline std::string checkpoint_name(const std::string& phase, std::size_t epoch) {
  return "ckpt_" + phase + "_" + std::to_string(epoch) + ".bin";
}

/// Metadata stored next to the raw parameters.
struct CheckpointInfo {
  std::string phase;
  std::size_t epoch = 0;
  std::string rng_state;
};

template <class T>
struct Checkpoint {
  Network<T> net;
  CheckpointInfo info;
};

namespace detail {

template <class V>
void put(std::ostream& os, const V& v) {
  static_assert(std::is_trivially_copyable_v<V>);
  os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <class V>
V get(std::istream& is) {
  V v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!is) throw IoError("truncated checkpoint");
  return v;
}

inline void put_string(std::ostream& os, const std::string& s) {
  put<std::uint64_t>(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& is) {
  const auto n = get<std::uint64_t>(is);
  if (n > (std::uint64_t{1} << 32)) throw IoError("corrupt checkpoint string length");
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (!is) throw IoError("truncated checkpoint");
  return s;
}

}  // namespace detail

inline std::string rng_state(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

inline void restore_rng(Rng& rng, const std::string& state) {
  std::istringstream is(state);
  is >> rng;
  if (!is) throw IoError("invalid rng state in checkpoint");
}

/// Layout: magic, JSON header (spec, phase, epoch, rng state, trainable
/// groups, scalar size), then every parameter as name, group and raw values.
template <class T>
void save_checkpoint(const fs::path& path, const Network<T>& net, const CheckpointInfo& info) {
  nlohmann::json header{{"spec", to_json(net.spec())},
                        {"phase", info.phase},
                        {"epoch", info.epoch},
                        {"rng_state", info.rng_state},
                        {"scalar_bytes", sizeof(T)}};
  nlohmann::json frozen = nlohmann::json::array();
  for (auto g : kAllGroups)
    if (!net.trainable(g)) frozen.push_back(to_string(g));
  header["frozen"] = frozen;

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write checkpoint " + path.string());
    os.write(kCheckpointMagic.data(), kCheckpointMagic.size());
    detail::put_string(os, header.dump());
    detail::put<std::uint64_t>(os, net.params().size());
    for (const auto& p : net.params()) {
      detail::put_string(os, p.name);
      detail::put<std::uint8_t>(os, static_cast<std::uint8_t>(p.group));
      detail::put<std::uint64_t>(os, p.value.size());
      os.write(reinterpret_cast<const char*>(p.value.data()),
               static_cast<std::streamsize>(p.value.size() * sizeof(T)));
    }
    if (!os) throw IoError("failed writing checkpoint " + path.string());
  }
  fs::rename(tmp, path);
}

template <class T>
Checkpoint<T> load_checkpoint(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  std::array<char, 8> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != kCheckpointMagic) throw IoError(path.string() + " is not a checkpoint");
  const auto header = nlohmann::json::parse(detail::get_string(is));
  if (header.at("scalar_bytes").get<std::size_t>() != sizeof(T))
    throw IoError("checkpoint scalar type does not match");

  Checkpoint<T> ck;
  ck.net = Network<T>::build(network_spec_from_json(header.at("spec")), 0);
  ck.info.phase = header.at("phase").get<std::string>();
  ck.info.epoch = header.at("epoch").get<std::size_t>();
  ck.info.rng_state = header.at("rng_state").get<std::string>();
  ck.net.set_trainable(header.at("frozen").get<std::vector<std::string>>(), false);

  auto& params = ck.net.params();
  if (detail::get<std::uint64_t>(is) != params.size()) throw IoError("checkpoint parameter count mismatch");
  for (auto& p : params) {
    if (detail::get_string(is) != p.name) throw IoError("checkpoint parameter order mismatch at " + p.name);
    if (detail::get<std::uint8_t>(is) != static_cast<std::uint8_t>(p.group))
      throw IoError("checkpoint group mismatch at " + p.name);
    if (detail::get<std::uint64_t>(is) != p.value.size()) throw IoError("checkpoint size mismatch at " + p.name);
    is.read(reinterpret_cast<char*>(p.value.data()), static_cast<std::streamsize>(p.value.size() * sizeof(T)));
    if (!is) throw IoError("truncated checkpoint");
  }
  return ck;
}

/// `checkpoints.json` listing every checkpoint written to a run directory.
class CheckpointManifest {
 public:
  explicit CheckpointManifest(fs::path dir) : dir_(std::move(dir)) {}

  template <class T>
  fs::path write(const Network<T>& net, const CheckpointInfo& info) {
    const fs::path file = dir_ / checkpoint_name(info.phase, info.epoch);
    save_checkpoint(file, net, info);
    entries_.push_back({{"file", file.filename().string()}, {"phase", info.phase}, {"epoch", info.epoch}});
    flush();
    return file;
  }

  const nlohmann::json& entries() const noexcept { return entries_; }

 private:
  void flush() const {
    const fs::path tmp = dir_ / "checkpoints.json.tmp";
    {
      std::ofstream os(tmp, std::ios::trunc);
      if (!os) throw IoError("cannot write checkpoint manifest in " + dir_.string());
      os << nlohmann::json{{"checkpoints", entries_}}.dump(2) << "\n";
    }
    fs::rename(tmp, dir_ / "checkpoints.json");
  }

  fs::path dir_;
  nlohmann::json entries_ = nlohmann::json::array();
};

}  // namespace mitoda
