#include "sslalm/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <set>

#include "sslalm/errors.hpp"

namespace sslalm::ckpt {

namespace {

constexpr const char* kMoment1 = "optimizer.m/";
constexpr const char* kMoment2 = "optimizer.v/";

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : os_(path, std::ios::binary) {
    if (!os_) throw DataError("cannot write checkpoint " + path.string());
  }
  template <typename T>
  void put(T v) {
    os_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void bytes(const void* p, std::size_t n) { os_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  void string(const std::string& s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void finish(const std::filesystem::path& path) {
    os_.flush();
    if (!os_) throw DataError("write failed for checkpoint " + path.string());
  }

 private:
  std::ofstream os_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : is_(path, std::ios::binary), path_(path) {
    if (!is_) throw DataError("checkpoint " + path.string() + ": cannot open");
  }
  template <typename T>
  T get(const std::string& what) {
    T v{};
    bytes(&v, sizeof(T), what);
    return v;
  }
  void bytes(void* p, std::size_t n, const std::string& what) {
    if (!is_.read(static_cast<char*>(p), static_cast<std::streamsize>(n))) {
      throw DataError("checkpoint " + path_.string() + ": truncated while reading " + what);
    }
  }
  std::string string(const std::string& what) {
    const auto n = get<std::uint32_t>(what);
    std::string s(n, '\0');
    bytes(s.data(), n, what);
    return s;
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::ifstream is_;
  std::filesystem::path path_;
};

}  // namespace

void write_file(const std::filesystem::path& path, const File& file) {
  Writer w(path);
  w.bytes("SSCK", 4);
  w.put<std::uint32_t>(kVersion);
  w.string(file.config.dump());
  w.put<std::uint32_t>(static_cast<std::uint32_t>(file.tensors.size()));
  for (const auto& [name, t] : file.tensors) {
    w.string(name);
    w.put<std::uint8_t>(kDtypeFloat64);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
    auto data = t.data();
    w.bytes(data.data(), data.size() * sizeof(double));
  }
  w.finish(path);
}

File read_file(const std::filesystem::path& path) {
  Reader r(path);
  const std::string where = "checkpoint " + path.string();
  char magic[4];
  r.bytes(magic, 4, "magic");
  if (std::memcmp(magic, "SSCK", 4) != 0) throw DataError(where + ": bad magic, not a checkpoint");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kVersion) {
    throw DataError(where + ": unsupported version " + std::to_string(version));
  }
  File file;
  const std::string cfg = r.string("config");
  try {
    file.config = nlohmann::json::parse(cfg);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(where + ": config blob is not valid JSON: " + e.what());
  }
  const auto count = r.get<std::uint32_t>("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.string("tensor name");
    const auto dtype = r.get<std::uint8_t>("dtype of '" + name + "'");
    if (dtype != kDtypeFloat64) {
      throw DataError(where + ": tensor '" + name + "' has unknown dtype " + std::to_string(dtype));
    }
    const auto rank = r.get<std::uint32_t>("rank of '" + name + "'");
    Shape shape(rank);
    for (auto& d : shape) d = r.get<std::uint32_t>("dims of '" + name + "'");
    std::vector<double> data(shape_numel(shape));
    r.bytes(data.data(), data.size() * sizeof(double), "data of '" + name + "'");
    file.tensors.emplace_back(std::move(name), Tensor::from(std::move(shape), std::move(data)));
  }
  return file;
}

void save(const std::filesystem::path& path, const RunConfig& cfg, const LalmModel& model,
          const train::AdamW* optimizer) {
  File file;
  file.config = {{"run", cfg.to_json()}, {"optimizer_steps", optimizer ? optimizer->steps() : 0}};
  for (const auto& [name, t] : model.params().entries()) file.tensors.emplace_back(name, t);
  if (optimizer) {
    for (const auto& [name, mom] : optimizer->state()) {
      const Shape shape = model.params().get(name).shape();
      file.tensors.emplace_back(kMoment1 + name, Tensor::from(shape, mom.m));
      file.tensors.emplace_back(kMoment2 + name, Tensor::from(shape, mom.v));
    }
  }
  write_file(path, file);
}

void Loaded::restore(train::AdamW& opt) const {
  opt.state() = moments;
  opt.set_steps(optimizer_steps);
}

Loaded load(const std::filesystem::path& path) {
  File file = read_file(path);
  const std::string where = "checkpoint " + path.string();
  if (!file.config.contains("run")) throw DataError(where + ": config blob has no run config");
  Loaded out;
  try {
    out.config = RunConfig::from_json(file.config["run"]);
  } catch (const ConfigError& e) {
    throw DataError(where + ": " + e.what());
  }
  out.optimizer_steps = file.config.value("optimizer_steps", std::size_t{0});

  std::map<std::string, Tensor> by_name;
  for (auto& [name, t] : file.tensors) {
    if (!by_name.emplace(name, t).second) throw DataError(where + ": duplicate tensor '" + name + "'");
  }

  ParamStore store;
  std::set<std::string> expected;
  for (const ParamSpec& spec : model_param_specs(out.config.model)) {
    expected.insert(spec.name);
    auto it = by_name.find(spec.name);
    if (it == by_name.end()) throw DataError(where + ": missing tensor '" + spec.name + "'");
    if (it->second.shape() != spec.shape) {
      throw DataError(where + ": tensor '" + spec.name + "' has shape " +
                      shape_str(it->second.shape()) + ", config expects " + shape_str(spec.shape));
    }
    it->second.set_requires_grad(true);
    store.add(spec.name, it->second);
  }
  for (const auto& [name, t] : by_name) {
    std::string param;
    bool second = false;
    if (name.starts_with(kMoment1)) {
      param = name.substr(std::strlen(kMoment1));
    } else if (name.starts_with(kMoment2)) {
      param = name.substr(std::strlen(kMoment2));
      second = true;
    } else {
      if (!expected.count(name)) throw DataError(where + ": unexpected tensor '" + name + "'");
      continue;
    }
    if (!expected.count(param) || t.shape() != store.get(param).shape()) {
      throw DataError(where + ": optimizer tensor '" + name + "' does not match a parameter");
    }
    auto d = t.data();
    auto& mom = out.moments[param];
    (second ? mom.v : mom.m).assign(d.begin(), d.end());
    out.has_optimizer = true;
  }
  for (const auto& [name, mom] : out.moments) {
    if (mom.m.empty() || mom.v.empty()) {
      throw DataError(where + ": optimizer state for '" + name + "' is incomplete");
    }
  }
  out.model = std::make_unique<LalmModel>(out.config.model, std::move(store));
  return out;
}

}  // namespace sslalm::ckpt
