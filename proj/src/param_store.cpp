#include "defog/param_store.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "defog/binary_io.hpp"

namespace defog {

namespace {
constexpr char kCheckpointMagic[8] = {'D', 'F', 'G', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint64_t kMaxHeaderBytes = 1ULL << 30;
}  // namespace

template <typename T>
void BasicParamStore<T>::add_param(const std::string& name, TensorT value) {
  if (params_.count(name) || buffers_.count(name)) {
    throw ShapeError("duplicate parameter name: " + name);
  }
  moments_[name] = Moments{TensorT::zeros_like(value), TensorT::zeros_like(value)};
  params_.emplace(name, std::move(value));
}

template <typename T>
void BasicParamStore<T>::add_buffer(const std::string& name, TensorT value) {
  if (params_.count(name) || buffers_.count(name)) {
    throw ShapeError("duplicate buffer name: " + name);
  }
  buffers_.emplace(name, std::move(value));
}

template <typename T>
typename BasicParamStore<T>::TensorT& BasicParamStore<T>::param(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ShapeError("unknown parameter: " + name);
  return it->second;
}

template <typename T>
const typename BasicParamStore<T>::TensorT& BasicParamStore<T>::param(
    const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ShapeError("unknown parameter: " + name);
  return it->second;
}

template <typename T>
typename BasicParamStore<T>::TensorT& BasicParamStore<T>::buffer(const std::string& name) {
  auto it = buffers_.find(name);
  if (it == buffers_.end()) throw ShapeError("unknown buffer: " + name);
  return it->second;
}

template <typename T>
const typename BasicParamStore<T>::TensorT& BasicParamStore<T>::buffer(
    const std::string& name) const {
  auto it = buffers_.find(name);
  if (it == buffers_.end()) throw ShapeError("unknown buffer: " + name);
  return it->second;
}

template <typename T>
typename BasicParamStore<T>::Moments& BasicParamStore<T>::moments(const std::string& name) {
  auto it = moments_.find(name);
  if (it == moments_.end()) throw ShapeError("no optimizer state for: " + name);
  return it->second;
}

template <typename T>
const typename BasicParamStore<T>::Moments& BasicParamStore<T>::moments(
    const std::string& name) const {
  auto it = moments_.find(name);
  if (it == moments_.end()) throw ShapeError("no optimizer state for: " + name);
  return it->second;
}

template <typename T>
void BasicParamStore<T>::set_step(std::int64_t step) {
  if (step < 0) throw ShapeError("optimizer step counter must be non-negative");
  step_ = step;
}

template <typename T>
std::size_t BasicParamStore<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : params_) n += t.size();
  return n;
}

template <typename T>
template <typename U>
BasicParamStore<U> BasicParamStore<T>::cast() const {
  BasicParamStore<U> out;
  for (const auto& [name, t] : params_) out.params_.emplace(name, t.template cast<U>());
  for (const auto& [name, t] : buffers_) out.buffers_.emplace(name, t.template cast<U>());
  for (const auto& [name, m] : moments_) {
    out.moments_.emplace(name, typename BasicParamStore<U>::Moments{m.first.template cast<U>(),
                                                                    m.second.template cast<U>()});
  }
  out.step_ = step_;
  return out;
}

template <typename T>
void adam_step(BasicParamStore<T>& store, const GradMap<T>& grads, const AdamConfig& cfg) {
  store.increment_step();
  const double t = static_cast<double>(store.step());
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  const T lr = static_cast<T>(cfg.lr), eps = static_cast<T>(cfg.eps);
  const T inv_c1 = static_cast<T>(1.0 / c1), inv_c2 = static_cast<T>(1.0 / c2);
  for (auto& [name, p] : store.params()) {
    auto g = grads.find(name);
    if (g == grads.end()) continue;
    if (g->second.shape() != p.shape()) {
      throw ShapeError("gradient for " + name + " has shape " + shape_str(g->second.shape()) +
                       ", parameter has " + shape_str(p.shape()));
    }
    auto& m = store.moments(name);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const T gi = g->second[i];
      m.first[i] = b1 * m.first[i] + (T(1) - b1) * gi;
      m.second[i] = b2 * m.second[i] + (T(1) - b2) * gi * gi;
      const T mhat = m.first[i] * inv_c1;
      const T vhat = m.second[i] * inv_c2;
      p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

template class BasicParamStore<float>;
template class BasicParamStore<double>;
template BasicParamStore<double> BasicParamStore<float>::cast<double>() const;
template BasicParamStore<float> BasicParamStore<double>::cast<float>() const;
template BasicParamStore<float> BasicParamStore<float>::cast<float>() const;
template BasicParamStore<double> BasicParamStore<double>::cast<double>() const;
template void adam_step(BasicParamStore<float>&, const GradMap<float>&, const AdamConfig&);
template void adam_step(BasicParamStore<double>&, const GradMap<double>&, const AdamConfig&);

namespace {

enum class Slot { param, buffer, first_moment, second_moment };

const char* slot_name(Slot s) {
  switch (s) {
    case Slot::param: return "param";
    case Slot::buffer: return "buffer";
    case Slot::first_moment: return "adam_m";
    case Slot::second_moment: return "adam_v";
  }
  return "?";
}

Slot parse_slot(const std::string& s, const std::string& path) {
  if (s == "param") return Slot::param;
  if (s == "buffer") return Slot::buffer;
  if (s == "adam_m") return Slot::first_moment;
  if (s == "adam_v") return Slot::second_moment;
  throw DataError(path + ": unknown tensor slot '" + s + "'");
}

struct Entry {
  std::string store;
  std::string name;
  Slot slot;
  const Tensor* tensor;
};

}  // namespace

void save_checkpoint(const std::string& path, const std::vector<NamedStore>& stores,
                     const nlohmann::json& meta) {
  nlohmann::json header;
  header["format"] = "DFGCKPT1";
  header["version"] = 1;
  header["meta"] = meta;
  header["stores"] = nlohmann::json::array();
  std::vector<Entry> entries;
  for (const auto& ns : stores) {
    nlohmann::json js;
    js["name"] = ns.name;
    js["step"] = ns.store->step();
    js["tensors"] = nlohmann::json::array();
    auto push = [&](const std::string& name, Slot slot, const Tensor& t) {
      js["tensors"].push_back({{"name", name}, {"slot", slot_name(slot)}, {"shape", t.shape()}});
      entries.push_back({ns.name, name, slot, &t});
    };
    for (const auto& [name, t] : ns.store->params()) {
      push(name, Slot::param, t);
      const auto& m = ns.store->moments(name);
      push(name, Slot::first_moment, m.first);
      push(name, Slot::second_moment, m.second);
    }
    for (const auto& [name, t] : ns.store->buffers()) push(name, Slot::buffer, t);
    header["stores"].push_back(std::move(js));
  }

  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot open " + tmp + " for writing");
    io::Writer w(os);
    w.bytes(kCheckpointMagic, sizeof kCheckpointMagic);
    const std::string text = header.dump();
    w.u64(text.size());
    w.bytes(text.data(), text.size());
    for (const auto& e : entries) w.floats(e.tensor->data());
    if (!os) throw DataError("write failed: " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw DataError("cannot move " + tmp + " to " + path);
  }
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path);
  io::Reader r(is, path);
  char magic[8];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) {
    throw DataError(path + ": not a DFGCKPT1 checkpoint (bad magic)");
  }
  const std::uint64_t len = r.u64();
  if (len > kMaxHeaderBytes) throw DataError(path + ": implausible header length");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(r.string(len));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": malformed checkpoint header: " + e.what());
  }
  if (header.value("version", 0) != 1) {
    throw DataError(path + ": unsupported checkpoint version " + header.value("version", nlohmann::json()).dump());
  }

  Checkpoint ck;
  ck.meta = header.value("meta", nlohmann::json::object());
  try {
    for (const auto& js : header.at("stores")) {
      ParamStore store;
      std::map<std::string, ParamStore::Moments> moments;
      for (const auto& jt : js.at("tensors")) {
        Tensor t(jt.at("shape").get<Shape>());
        r.floats(t.data());
        const std::string name = jt.at("name");
        switch (parse_slot(jt.at("slot"), path)) {
          case Slot::param: store.add_param(name, std::move(t)); break;
          case Slot::buffer: store.add_buffer(name, std::move(t)); break;
          case Slot::first_moment: moments[name].first = std::move(t); break;
          case Slot::second_moment: moments[name].second = std::move(t); break;
        }
      }
      for (auto& [name, m] : moments) {
        const auto& p = store.param(name);
        if (m.first.shape() != p.shape() || m.second.shape() != p.shape()) {
          throw DataError(path + ": optimizer moments of " + name + " do not match its shape");
        }
        store.moments(name) = std::move(m);
      }
      store.set_step(js.at("step").get<std::int64_t>());
      ck.stores.emplace(js.at("name").get<std::string>(), std::move(store));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": malformed checkpoint header: " + e.what());
  } catch (const ShapeError& e) {
    throw DataError(path + ": " + e.what());
  }
  char extra;
  if (is.read(&extra, 1)) throw DataError(path + ": trailing bytes after checkpoint payload");
  return ck;
}

void require_same_layout(const ParamStore& expected, const ParamStore& loaded,
                         const std::string& what) {
  auto compare = [&](const auto& a, const auto& b, const char* kind) {
    if (a.size() != b.size()) {
      throw ShapeError(what + ": " + kind + " count " + std::to_string(b.size()) + " != expected " +
                       std::to_string(a.size()));
    }
    for (const auto& [name, t] : a) {
      auto it = b.find(name);
      if (it == b.end()) throw ShapeError(what + ": missing " + kind + " " + name);
      if (it->second.shape() != t.shape()) {
        throw ShapeError(what + ": " + kind + " " + name + " has shape " +
                         shape_str(it->second.shape()) + ", expected " + shape_str(t.shape()));
      }
    }
  };
  compare(expected.params(), loaded.params(), "parameter");
  compare(expected.buffers(), loaded.buffers(), "buffer");
}

}  // namespace defog
