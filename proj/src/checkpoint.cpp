#include "landcover/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "landcover/errors.hpp"
#include "landcover/io.hpp"

namespace landcover {

namespace {

constexpr char kMagic[8] = {'L', 'C', 'P', 'A', 'R', 'A', 'M', '1'};

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::filesystem::path& path) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw IoError("'" + path.string() + "' is truncated");
  return value;
}

std::string join(const std::vector<std::string>& parts, char sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i > 0) out.push_back(sep);
    out += parts[i];
  }
  return out;
}

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> parts;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, sep)) parts.push_back(item);
  return parts;
}

}  // namespace

void write_params(const std::filesystem::path& path, const ParameterSet& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(kMagic, sizeof(kMagic));
  put<std::uint64_t>(out, params.arrays().size());
  for (const auto& [name, a] : params.arrays()) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(a.shape.size()));
    for (int d : a.shape) put<std::int32_t>(out, d);
    put<std::uint64_t>(out, a.values.size());
    out.write(reinterpret_cast<const char*>(a.values.data()),
              static_cast<std::streamsize>(a.values.size() * sizeof(double)));
  }
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

ParameterSet read_params(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  char magic[sizeof(kMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw IoError("'" + path.string() + "' is not a parameter file");
  }
  ParameterSet::Map arrays;
  const auto count = get<std::uint64_t>(in, path);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name(get<std::uint32_t>(in, path), '\0');
    in.read(name.data(), static_cast<std::streamsize>(name.size()));
    ParamArray a;
    a.shape.resize(get<std::uint32_t>(in, path));
    std::size_t expected = 1;
    for (auto& d : a.shape) {
      d = get<std::int32_t>(in, path);
      expected *= static_cast<std::size_t>(d);
    }
    a.values.resize(get<std::uint64_t>(in, path));
    if (a.values.size() != expected) {
      throw IoError("'" + path.string() + "': array '" + name + "' size mismatch");
    }
    in.read(reinterpret_cast<char*>(a.values.data()),
            static_cast<std::streamsize>(a.values.size() * sizeof(double)));
    if (!in) throw IoError("'" + path.string() + "' is truncated");
    arrays.emplace(std::move(name), std::move(a));
  }
  return ParameterSet(std::move(arrays));
}

void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt) {
  std::filesystem::create_directories(dir);
  write_params(dir / "params.bin", ckpt.params);
  std::ostringstream m;
  m << "model.in_channels=" << ckpt.model.in_channels << '\n'
    << "model.num_classes=" << ckpt.model.num_classes << '\n'
    << "model.width=" << ckpt.model.width << '\n'
    << "model.depth=" << ckpt.model.depth << '\n'
    << "model.norm_groups=" << ckpt.model.norm_groups << '\n'
    << "model.seed=" << ckpt.model.seed << '\n'
    << "taxonomy.names=" << join(ckpt.taxonomy->names(), ',') << '\n'
    << "taxonomy.ignore_value=" << ckpt.taxonomy->ignore_value() << '\n'
    << "iteration=" << ckpt.iteration << '\n'
    << "config_hash=" << ckpt.config_hash << '\n';
  for (const auto& [k, v] : ckpt.extra) m << k << '=' << v << '\n';
  io::write_text(dir / "manifest.txt", m.str());
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  const auto manifest = dir / "manifest.txt";
  if (!std::filesystem::exists(manifest) || !std::filesystem::exists(dir / "params.bin")) {
    throw IoError("'" + dir.string() + "' is not a checkpoint directory");
  }
  std::map<std::string, std::string> kv;
  std::istringstream lines(io::read_text(manifest));
  std::string line;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw IoError("malformed manifest line '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto take = [&](const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw IoError("manifest '" + manifest.string() + "' lacks " + key);
    std::string v = it->second;
    kv.erase(it);
    return v;
  };

  Checkpoint ckpt;
  ckpt.model.in_channels = std::stoi(take("model.in_channels"));
  ckpt.model.num_classes = std::stoi(take("model.num_classes"));
  ckpt.model.width = std::stoi(take("model.width"));
  ckpt.model.depth = std::stoi(take("model.depth"));
  ckpt.model.norm_groups = std::stoi(take("model.norm_groups"));
  ckpt.model.seed = std::stoull(take("model.seed"));
  const auto names = split(take("taxonomy.names"), ',');
  ckpt.taxonomy = make_taxonomy(names, std::stoi(take("taxonomy.ignore_value")));
  ckpt.iteration = std::stoll(take("iteration"));
  ckpt.config_hash = take("config_hash");
  ckpt.extra = std::move(kv);
  ckpt.params = read_params(dir / "params.bin");
  if (!ckpt.params.same_layout(init_params(ckpt.model))) {
    throw IoError("'" + dir.string() + "': parameters do not match the model config");
  }
  return ckpt;
}

}  // namespace landcover
