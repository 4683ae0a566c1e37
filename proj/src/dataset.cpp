#include "defog/dataset.hpp"

#include <array>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include "defog/binary_io.hpp"
#include "defog/errors.hpp"

namespace defog {

namespace {

constexpr char kMagic[5] = {'F', 'O', 'G', 'D', '1'};
constexpr int kVersion = 1;

void copy_frame(const Tensor& src, Tensor& dst, std::size_t slot) {
  const auto n = src.size();
  std::copy(src.storage().begin(), src.storage().end(), dst.storage().begin() + slot * n);
}

}  // namespace

const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::validation: return "validation";
    case Split::test: return "test";
  }
  return "?";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "validation" || s == "val") return Split::validation;
  if (s == "test") return Split::test;
  throw DataError("unknown split '" + s + "' (expected train, validation or test)");
}

std::vector<std::size_t> Dataset::frame_indices(Split split) const {
  std::vector<std::size_t> out;
  for (const auto& e : episodes) {
    if (e.split != split) continue;
    for (std::size_t i = 0; i < e.frame_count; ++i) out.push_back(e.first_frame + i);
  }
  return out;
}

Tensor Dataset::stack_inputs(const std::vector<std::size_t>& indices) const {
  const std::size_t cx = schema->input_channels();
  Tensor out({indices.size(), cx, grid, grid});
  const std::size_t plane = grid * grid;
  const std::size_t cp = schema->partial_channels();
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const auto& f = frames.at(indices[k]);
    float* dst = out.ptr() + k * cx * plane;
    const auto& p = f.partial.tensor().storage();
    const auto& a = f.accumulated.tensor().storage();
    std::copy(p.begin(), p.end(), dst);
    std::copy(a.begin(), a.end(), dst + cp * plane);
  }
  return out;
}

Tensor Dataset::stack_truth(const std::vector<std::size_t>& indices) const {
  Tensor out({indices.size(), schema->truth_channels(), grid, grid});
  for (std::size_t k = 0; k < indices.size(); ++k) {
    copy_frame(frames.at(indices[k]).truth.tensor(), out, k);
  }
  return out;
}

std::vector<Split> assign_splits(std::size_t episodes) {
  const auto n_train = static_cast<std::size_t>(std::llround(0.8 * static_cast<double>(episodes)));
  const auto n_val = static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(episodes)));
  std::vector<Split> out(episodes, Split::test);
  for (std::size_t i = 0; i < episodes; ++i) {
    if (i < n_train) {
      out[i] = Split::train;
    } else if (i < n_train + n_val) {
      out[i] = Split::validation;
    }
  }
  return out;
}

std::vector<FrameTriplet> episode_triplets(const Episode& episode, const SimConfig& cfg) {
  std::vector<FrameTriplet> out;
  const auto sight = cfg.sight_table();
  std::optional<GridState> prev;
  for (const auto& frame : episode.frames) {
    if (frame.tick % cfg.frame_stride != 0) continue;
    GridState truth = downsample(frame.units, cfg.schema, cfg.map_extent, cfg.grid_size);
    const VisibilityMask mask =
        cfg.full_vision
            ? VisibilityMask(cfg.grid_size, cfg.grid_size, true)
            : visibility_from_units(frame.units, cfg.map_extent, cfg.grid_size, sight);
    GridState partial = apply_fog(truth, mask);
    GridState acc = accumulate(prev ? &*prev : nullptr, truth, mask);
    prev = acc;
    out.push_back({std::move(partial), std::move(acc), std::move(truth)});
  }
  return out;
}

namespace {

Dataset assemble(const SimConfig& cfg, std::vector<std::vector<FrameTriplet>> per_episode) {
  Dataset ds;
  ds.schema = cfg.schema;
  ds.grid = cfg.grid_size;
  ds.sim_config = cfg.to_json();
  const auto splits = assign_splits(per_episode.size());
  for (std::size_t e = 0; e < per_episode.size(); ++e) {
    EpisodeEntry entry;
    entry.episode = e;
    entry.seed = episode_seed(cfg, e);
    entry.split = splits[e];
    entry.first_frame = ds.frames.size();
    entry.frame_count = per_episode[e].size();
    for (auto& t : per_episode[e]) ds.frames.push_back(std::move(t));
    per_episode[e].clear();
    per_episode[e].shrink_to_fit();
    ds.episodes.push_back(entry);
  }
  return ds;
}

}  // namespace

Dataset make_dataset(const std::vector<Episode>& episodes, const SimConfig& cfg) {
  cfg.validate();
  std::vector<std::vector<FrameTriplet>> per_episode;
  per_episode.reserve(episodes.size());
  for (const auto& ep : episodes) per_episode.push_back(episode_triplets(ep, cfg));
  Dataset ds = assemble(cfg, std::move(per_episode));
  for (std::size_t e = 0; e < episodes.size(); ++e) ds.episodes[e].seed = episodes[e].seed;
  return ds;
}

Dataset generate_dataset(const SimConfig& cfg, unsigned threads) {
  cfg.validate();
  std::vector<std::vector<FrameTriplet>> per_episode(cfg.episodes);
  auto run_one = [&](std::size_t e) {
    SimConfig c = cfg;
    c.seed = episode_seed(cfg, e);
    per_episode[e] = episode_triplets(simulate(c), c);
  };
  threads = std::max(1u, threads);
  if (threads == 1 || cfg.episodes < 2) {
    for (std::size_t e = 0; e < cfg.episodes; ++e) run_one(e);
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mu;
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) {
      pool.emplace_back([&] {
        for (std::size_t e = next++; e < cfg.episodes; e = next++) {
          try {
            run_one(e);
          } catch (...) {
            std::lock_guard lock(error_mu);
            if (!error) error = std::current_exception();
          }
        }
      });
    }
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
  }
  return assemble(cfg, std::move(per_episode));
}

void write_dataset(const Dataset& ds, const std::string& path) {
  nlohmann::json header;
  header["format"] = "FOGD";
  header["version"] = kVersion;
  header["schema"] = ds.schema->to_json();
  header["grid"] = ds.grid;
  header["frame_count"] = ds.frames.size();
  header["episodes"] = nlohmann::json::array();
  for (const auto& e : ds.episodes) {
    header["episodes"].push_back({{"episode", e.episode},
                                  {"seed", e.seed},
                                  {"split", split_name(e.split)},
                                  {"first_frame", e.first_frame},
                                  {"frame_count", e.frame_count}});
  }
  header["sim_config"] = ds.sim_config;
  const std::string text = header.dump();

  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot write dataset " + path);
    io::Writer w(os);
    w.bytes(kMagic, sizeof kMagic);
    w.u64(text.size());
    w.bytes(text.data(), text.size());
    for (const auto& f : ds.frames) {
      w.floats(f.partial.tensor().data());
      w.floats(f.accumulated.tensor().data());
      w.floats(f.truth.tensor().data());
    }
    const auto h = io::to_little(w.hash());
    os.write(reinterpret_cast<const char*>(&h), sizeof h);
    if (!os) throw DataError("failed writing dataset " + path);
  }
  std::filesystem::rename(tmp, path);
}

Dataset read_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open dataset " + path);
  io::Reader r(is, path);
  char magic[sizeof kMagic];
  r.bytes(magic, sizeof magic);
  if (!std::equal(magic, magic + sizeof magic, kMagic)) {
    throw DataError(path + ": not a FOGD1 dataset (bad magic)");
  }
  const auto header_len = r.u64();
  if (header_len > (1ULL << 30)) throw DataError(path + ": implausible header length");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(r.string(header_len));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path + ": malformed header: " + e.what());
  }

  Dataset ds;
  std::size_t frame_count = 0;
  try {
    if (header.at("version").get<int>() != kVersion) {
      throw DataError(path + ": unsupported dataset version " + header.at("version").dump());
    }
    ds.schema = std::make_shared<const ChannelSchema>(ChannelSchema::from_json(header.at("schema")));
    ds.grid = header.at("grid").get<std::size_t>();
    frame_count = header.at("frame_count").get<std::size_t>();
    ds.sim_config = header.value("sim_config", nlohmann::json::object());
    std::size_t covered = 0;
    for (const auto& e : header.at("episodes")) {
      EpisodeEntry entry;
      entry.episode = e.at("episode").get<std::size_t>();
      entry.seed = e.at("seed").get<std::uint64_t>();
      entry.split = parse_split(e.at("split").get<std::string>());
      entry.first_frame = e.at("first_frame").get<std::size_t>();
      entry.frame_count = e.at("frame_count").get<std::size_t>();
      if (entry.first_frame != covered) throw DataError(path + ": inconsistent episode manifest");
      covered += entry.frame_count;
      ds.episodes.push_back(entry);
    }
    if (covered != frame_count) throw DataError(path + ": manifest does not cover frame_count");
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": malformed header: " + e.what());
  }

  const auto& sc = *ds.schema;
  const std::size_t g = ds.grid;
  // Raw tensors first; states are only built once the checksum holds.
  std::vector<std::array<Tensor, 3>> raw;
  raw.reserve(frame_count);
  for (std::size_t i = 0; i < frame_count; ++i) {
    std::array<Tensor, 3> t{Tensor({sc.partial_channels(), g, g}),
                            Tensor({sc.accumulated_channels(), g, g}),
                            Tensor({sc.truth_channels(), g, g})};
    for (auto& x : t) r.floats(x.data());
    raw.push_back(std::move(t));
  }
  const auto expected = r.hash();
  std::uint64_t stored = 0;
  is.read(reinterpret_cast<char*>(&stored), sizeof stored);
  if (is.gcount() != sizeof stored) throw DataError(path + ": truncated file (missing checksum)");
  if (io::to_little(stored) != expected) throw DataError(path + ": checksum mismatch");
  if (is.peek() != std::char_traits<char>::eof()) throw DataError(path + ": trailing bytes");
  ds.frames.reserve(frame_count);
  for (auto& [p, a, y] : raw) {
    ds.frames.push_back({GridState(ds.schema, StateKind::partial, std::move(p)),
                         GridState(ds.schema, StateKind::accumulated, std::move(a)),
                         GridState(ds.schema, StateKind::ground_truth, std::move(y))});
  }
  return ds;
}

DatasetStats dataset_stats(const Dataset& ds, const std::vector<std::size_t>& indices) {
  DatasetStats st;
  st.frames = indices.size();
  if (indices.empty()) return st;
  Confusion partial, acc;
  constexpr std::size_t kChunk = 256;
  for (std::size_t off = 0; off < indices.size(); off += kChunk) {
    std::vector<std::size_t> chunk(indices.begin() + static_cast<std::ptrdiff_t>(off),
                                   indices.begin() + static_cast<std::ptrdiff_t>(
                                                         std::min(indices.size(), off + kChunk)));
    const Tensor x = ds.stack_inputs(chunk);
    const Tensor y = ds.stack_truth(chunk);
    partial += existence_confusion(partial_prior(x, *ds.schema), y);
    acc += existence_confusion(observation_prior(x, *ds.schema), y);
  }
  const double n = static_cast<double>(indices.size());
  auto avg = [n](const Confusion& c) {
    return ConfusionAverages{static_cast<double>(c.tp) / n, static_cast<double>(c.fp) / n,
                             static_cast<double>(c.fn) / n, static_cast<double>(c.tn) / n};
  };
  st.partial = avg(partial);
  st.accumulated = avg(acc);
  return st;
}

std::string format_stats(const DatasetStats& st) {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "Frames: %zu (per-frame averages; rows predicted, columns truth)\n",
                st.frames);
  os << line;
  auto block = [&](const char* title, const ConfusionAverages& c) {
    os << "\n" << title << "\n";
    std::snprintf(line, sizeof line, "%-12s %12s %12s %12s\n", "", "Exist", "Not exist", "Total");
    os << line;
    std::snprintf(line, sizeof line, "%-12s %12.2f %12.2f %12.2f\n", "Exist", c.tp, c.fp,
                  c.tp + c.fp);
    os << line;
    std::snprintf(line, sizeof line, "%-12s %12.2f %12.2f %12.2f\n", "Not exist", c.fn, c.tn,
                  c.fn + c.tn);
    os << line;
    std::snprintf(line, sizeof line, "%-12s %12.2f %12.2f %12.2f\n", "Total", c.tp + c.fn,
                  c.fp + c.tn, c.total());
    os << line;
  };
  block("x-bar (partial observation)", st.partial);
  block("x-tilde (accumulated observation)", st.accumulated);
  return os.str();
}

}  // namespace defog
