#include "rssm/io.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "rssm/config.hpp"

namespace rssm {

namespace fs = std::filesystem;
using nlohmann::json;

std::uint32_t crc32_of(const std::vector<unsigned char>& bytes) {
  uLong c = crc32(0L, Z_NULL, 0);
  std::size_t off = 0;
  while (off < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - off, 1u << 30));
    c = crc32(c, bytes.data() + off, chunk);
    off += chunk;
  }
  return static_cast<std::uint32_t>(c);
}

namespace {

void put_u64(std::vector<unsigned char>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

void put_f64(std::vector<unsigned char>& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

void put_f32(std::vector<unsigned char>& out, float v) {
  const auto u = std::bit_cast<std::uint32_t>(v);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(u >> (8 * i)));
}

float get_f32(const unsigned char* p) {
  std::uint32_t u = 0;
  for (int i = 0; i < 4; ++i) u |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return std::bit_cast<float>(u);
}

void write_text(const fs::path& path, const std::string& s) {
  write_bytes(path, std::vector<unsigned char>(s.begin(), s.end()));
}

std::string read_text(const fs::path& path) {
  const auto b = read_bytes(path);
  return std::string(b.begin(), b.end());
}

json read_json(const fs::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw FormatError("'" + path.string() + "': " + e.what());
  }
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

Shape shape_of(const json& j) {
  Shape s;
  for (const auto& e : j) s.push_back(e.get<std::size_t>());
  return s;
}

const char* kSplits[] = {"train", "valid", "test"};

std::string edge_file_name(std::size_t i) {
  std::ostringstream os;
  os << std::setw(6) << std::setfill('0') << i << ".txt";
  return os.str();
}

std::string encode_edges(const AttributedGraph& g) {
  if (g.edge_attr_dim() != 0) throw FormatError("dataset: edge attributes are not supported by the edge-list format");
  std::ostringstream os;
  os << g.n_vertices() << "\n";
  for (const Edge& e : g.edges()) os << e.tail << " " << e.head << "\n";
  return os.str();
}

AttributedGraph decode_edges(const std::string& text, const std::string& where) {
  std::istringstream is(text);
  int n = -1;
  if (!(is >> n) || n < 0) throw FormatError(where + ": missing vertex count");
  std::vector<Edge> edges;
  int a, b;
  while (is >> a >> b) edges.push_back({a, b});
  if (!is.eof()) throw FormatError(where + ": malformed edge line");
  try {
    return AttributedGraph(n, std::move(edges), true);
  } catch (const std::exception& e) {
    throw FormatError(where + ": " + e.what());
  }
}

// Concatenates per-episode T x N x d arrays (or N x d attributes) along a new leading axis.
Array stack(const std::vector<Array>& parts, Shape inner) {
  Shape s{parts.size()};
  s.insert(s.end(), inner.begin(), inner.end());
  Array out(s);
  std::size_t off = 0;
  for (const Array& p : parts) {
    if (p.shape() != inner) throw FormatError("dataset: episodes within a split must share one shape");
    std::copy(p.data(), p.data() + p.size(), out.data() + off);
    off += p.size();
  }
  return out;
}

Array unstack(const Array& a, std::size_t i) {
  Shape inner(a.shape().begin() + 1, a.shape().end());
  Array out(inner);
  std::copy(a.data() + i * out.size(), a.data() + (i + 1) * out.size(), out.data());
  return out;
}

}  // namespace

std::vector<unsigned char> encode_f32(const Array& a) {
  std::vector<unsigned char> out;
  out.reserve(8 * (a.rank() + 1) + 4 * a.size());
  put_u64(out, a.rank());
  for (std::size_t e : a.shape()) put_u64(out, e);
  for (double v : a.vec()) put_f32(out, static_cast<float>(v));
  return out;
}

Array decode_f32(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < 8) throw FormatError("array: truncated header");
  const std::uint64_t rank = get_u64(bytes.data());
  if (rank > 16 || bytes.size() < 8 * (rank + 1)) throw FormatError("array: truncated header");
  Shape s(rank);
  std::size_t n = 1;
  for (std::size_t i = 0; i < rank; ++i) n *= s[i] = get_u64(bytes.data() + 8 * (i + 1));
  const std::size_t off = 8 * (rank + 1);
  if (bytes.size() != off + 4 * n)
    throw FormatError("array: expected " + std::to_string(off + 4 * n) + " bytes, found " + std::to_string(bytes.size()));
  Array a(s);
  for (std::size_t i = 0; i < n; ++i) a[i] = get_f32(bytes.data() + off + 4 * i);
  return a;
}

void write_bytes(const fs::path& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

std::vector<unsigned char> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path.string() + "'");
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

// ---------------------------------------------------------------------------

void write_dataset(const fs::path& dir, const ToyDataset& ds) {
  fs::create_directories(dir);
  const Shape xin{ds.config.steps, static_cast<std::size_t>(ds.config.n_vertices), 1};
  json manifest{{"schema_version", kSchemaVersion},
                {"kind", "rssm-dataset"},
                {"seed", ds.seed},
                {"toy_config", to_json(ds.config)}};
  std::size_t dx = 1, du = 0, dv = ds.config.covariate_dim;
  json splits = json::object();
  for (const char* name : kSplits) {
    const ToySplit& split = ds.split(name);
    std::vector<Array> xs, us, vs;
    const fs::path edir = dir / "edges" / name;
    fs::create_directories(edir);
    std::vector<unsigned char> all_edges;
    for (std::size_t i = 0; i < split.episodes.size(); ++i) {
      const Episode& ep = split.episodes[i];
      xs.push_back(ep.x);
      us.push_back(ep.u);
      vs.push_back(ep.graph->vertex_attr_dim() ? ep.graph->vertex_attrs() : Array({ep.n_vertices(), 0}));
      const std::string text = encode_edges(*ep.graph);
      all_edges.insert(all_edges.end(), text.begin(), text.end());
      write_text(edir / edge_file_name(i), text);
    }
    if (!xs.empty()) {
      dx = xs[0].shape()[2];
      du = us[0].shape()[2];
      dv = vs[0].cols();
    }
    const std::size_t N = xs.empty() ? xin[1] : xs[0].shape()[1], T = xs.empty() ? xin[0] : xs[0].shape()[0];
    json files = json::object();
    auto emit = [&](const char* key, const Array& a) {
      const std::string file = std::string(name) + "_" + key + ".bin";
      const auto bytes = encode_f32(a);
      write_bytes(dir / file, bytes);
      files[key] = {{"path", file}, {"shape", a.shape()}, {"crc32", crc32_of(bytes)}};
    };
    emit("x", stack(xs, {T, N, dx}));
    emit("u", stack(us, {T, N, du}));
    emit("vertex_attrs", stack(vs, {N, dv}));
    splits[name] = {{"count", split.episodes.size()},
                    {"files", files},
                    {"edges", {{"dir", "edges/" + std::string(name)}, {"crc32", crc32_of(all_edges)}}}};
  }
  manifest["dims"] = {{"steps", ds.config.steps},
                      {"n_vertices", ds.config.n_vertices},
                      {"x_dim", dx},
                      {"u_dim", du},
                      {"vertex_attr_dim", dv}};
  manifest["splits"] = splits;
  write_text(dir / "manifest.json", dump(manifest));
}

ToyDataset read_dataset(const fs::path& dir) {
  const fs::path mpath = dir / "manifest.json";
  if (!fs::exists(mpath)) throw FormatError("dataset: no manifest.json in '" + dir.string() + "'");
  const json m = read_json(mpath);
  try {
    if (m.at("schema_version").get<int>() != kSchemaVersion)
      throw FormatError("dataset: unsupported schema_version " + m.at("schema_version").dump());
    if (m.at("kind") != "rssm-dataset") throw FormatError("dataset: manifest kind is not rssm-dataset");
    ToyDataset ds;
    ds.seed = m.at("seed").get<std::uint64_t>();
    ds.config = toy_from_json(m.at("toy_config"), {}, "toy_config");
    for (const char* name : kSplits) {
      const json& sj = m.at("splits").at(name);
      const std::size_t count = sj.at("count").get<std::size_t>();
      auto load = [&](const char* key) {
        const json& fj = sj.at("files").at(key);
        const auto bytes = read_bytes(dir / fj.at("path").get<std::string>());
        if (crc32_of(bytes) != fj.at("crc32").get<std::uint32_t>())
          throw FormatError("dataset: checksum mismatch for " + fj.at("path").get<std::string>());
        Array a = decode_f32(bytes);
        if (a.shape() != shape_of(fj.at("shape")) || a.shape().at(0) != count)
          throw FormatError("dataset: header shape of " + fj.at("path").get<std::string>() +
                            " disagrees with the manifest");
        return a;
      };
      const Array X = load("x"), U = load("u"), V = load("vertex_attrs");
      if (X.rank() != 4 || U.rank() != 4 || V.rank() != 3 || U.shape()[1] != X.shape()[1] ||
          U.shape()[2] != X.shape()[2] || V.shape()[1] != X.shape()[2])
        throw FormatError(std::string("dataset: inconsistent array shapes in split ") + name);
      const fs::path edir = dir / sj.at("edges").at("dir").get<std::string>();
      std::vector<unsigned char> all_edges;
      ToySplit& split = name == std::string("train") ? ds.train : name == std::string("valid") ? ds.valid : ds.test;
      for (std::size_t i = 0; i < count; ++i) {
        const fs::path epath = edir / edge_file_name(i);
        const std::string text = read_text(epath);
        all_edges.insert(all_edges.end(), text.begin(), text.end());
        auto g = std::make_shared<AttributedGraph>(decode_edges(text, epath.string()));
        if (static_cast<std::size_t>(g->n_vertices()) != X.shape()[2])
          throw FormatError(epath.string() + ": vertex count disagrees with the arrays");
        if (V.shape()[2] > 0) g->set_vertex_attrs(unstack(V, i));
        split.episodes.push_back({std::move(g), unstack(X, i), unstack(U, i)});
      }
      if (crc32_of(all_edges) != sj.at("edges").at("crc32").get<std::uint32_t>())
        throw FormatError(std::string("dataset: edge list checksum mismatch in split ") + name);
    }
    return ds;
  } catch (const json::exception& e) {
    throw FormatError("dataset: malformed manifest: " + std::string(e.what()));
  }
}

// ---------------------------------------------------------------------------

void write_checkpoint(const fs::path& dir, const Checkpoint& ck) {
  if (ck.names.size() != ck.tensors.size()) throw std::invalid_argument("checkpoint: names and tensors differ in length");
  // Written next to the target and swapped in, so an interrupted write keeps the old checkpoint.
  const fs::path tmp = dir.string() + ".partial";
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  std::vector<unsigned char> blob;
  json tensors = json::array();
  for (std::size_t i = 0; i < ck.names.size(); ++i) {
    tensors.push_back({{"name", ck.names[i]}, {"shape", ck.tensors[i].shape()}});
    for (double v : ck.tensors[i].vec()) put_f64(blob, v);
  }
  write_bytes(tmp / "params.bin", blob);
  const json m{{"schema_version", kSchemaVersion},
               {"kind", "rssm-checkpoint"},
               {"step", ck.step},
               {"model_seed", ck.model_seed},
               {"rng_state", ck.rng_state},
               {"model_config", to_json(ck.model)},
               {"train_config", to_json(ck.train)},
               {"tensors", tensors},
               {"blob", {{"path", "params.bin"}, {"values", blob.size() / 8}, {"crc32", crc32_of(blob)}}}};
  write_text(tmp / "manifest.json", dump(m));
  fs::remove_all(dir);
  fs::rename(tmp, dir);
}

Checkpoint read_checkpoint(const fs::path& dir) {
  const fs::path mpath = dir / "manifest.json";
  if (!fs::exists(mpath)) throw FormatError("checkpoint: no manifest.json in '" + dir.string() + "'");
  const json m = read_json(mpath);
  try {
    if (m.at("schema_version").get<int>() != kSchemaVersion)
      throw FormatError("checkpoint: unsupported schema_version " + m.at("schema_version").dump());
    if (m.at("kind") != "rssm-checkpoint") throw FormatError("checkpoint: manifest kind is not rssm-checkpoint");
    Checkpoint ck;
    ck.step = m.at("step").get<std::size_t>();
    ck.model_seed = m.at("model_seed").get<std::uint64_t>();
    ck.rng_state = m.at("rng_state").get<std::string>();
    ck.model = model_from_json(m.at("model_config"), {}, "model_config");
    ck.train = train_from_json(m.at("train_config"), {}, "train_config");
    const auto blob = read_bytes(dir / m.at("blob").at("path").get<std::string>());
    if (crc32_of(blob) != m.at("blob").at("crc32").get<std::uint32_t>())
      throw FormatError("checkpoint: parameter blob checksum mismatch");
    std::size_t off = 0;
    for (const json& t : m.at("tensors")) {
      Array a(shape_of(t.at("shape")));
      if (off + 8 * a.size() > blob.size()) throw FormatError("checkpoint: blob shorter than the manifest shapes");
      for (std::size_t i = 0; i < a.size(); ++i, off += 8) a[i] = std::bit_cast<double>(get_u64(blob.data() + off));
      ck.names.push_back(t.at("name").get<std::string>());
      ck.tensors.push_back(std::move(a));
    }
    if (off != blob.size()) throw FormatError("checkpoint: blob longer than the manifest shapes");
    return ck;
  } catch (const json::exception& e) {
    throw FormatError("checkpoint: malformed manifest: " + std::string(e.what()));
  }
}

Checkpoint make_checkpoint(const RssmModel& model, std::uint64_t model_seed, const TrainConfig& train,
                           const Trainer* trainer) {
  Checkpoint ck;
  ck.model = model.config;
  ck.train = train;
  ck.model_seed = model_seed;
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    ck.names.push_back(model.params.name(i));
    ck.tensors.push_back(model.params.value(i));
  }
  if (trainer) {
    ck.step = trainer->steps_done();
    ck.rng_state = rng_state(trainer->rng());
    const AdamState& a = trainer->adam();
    for (std::size_t i = 0; i < model.params.size(); ++i) {
      ck.names.push_back("opt.m." + model.params.name(i));
      ck.tensors.push_back(a.m[i]);
    }
    for (std::size_t i = 0; i < model.params.size(); ++i) {
      ck.names.push_back("opt.v." + model.params.name(i));
      ck.tensors.push_back(a.v[i]);
    }
  }
  return ck;
}

namespace {
const Array& tensor_named(const Checkpoint& ck, const std::string& name, const Shape& shape) {
  for (std::size_t i = 0; i < ck.names.size(); ++i)
    if (ck.names[i] == name) {
      if (ck.tensors[i].shape() != shape)
        throw FormatError("checkpoint: tensor '" + name + "' has shape " + shape_str(ck.tensors[i].shape()) +
                          ", model expects " + shape_str(shape));
      return ck.tensors[i];
    }
  throw FormatError("checkpoint: missing tensor '" + name + "'");
}
}  // namespace

std::unique_ptr<RssmModel> model_from_checkpoint(const Checkpoint& ck) {
  auto model = std::make_unique<RssmModel>(ck.model, ck.model_seed);
  for (std::size_t i = 0; i < model->params.size(); ++i)
    model->params.value(i) = tensor_named(ck, model->params.name(i), model->params.value(i).shape());
  for (const std::string& n : ck.names)
    if (n.rfind("opt.", 0) != 0 && !model->params.find(n))
      throw FormatError("checkpoint: tensor '" + n + "' does not belong to the model");
  return model;
}

void restore_trainer(const Checkpoint& ck, Trainer& trainer) {
  if (ck.rng_state.empty()) throw FormatError("checkpoint: no training state to resume from");
  AdamState& a = trainer.adam();
  const auto& names = ck.names;
  std::size_t n_params = 0;
  for (const std::string& n : names) n_params += n.rfind("opt.", 0) != 0;
  if (a.m.size() != n_params) throw FormatError("checkpoint: optimizer state does not match the model");
  for (std::size_t i = 0; i < n_params; ++i) {
    a.m[i] = tensor_named(ck, "opt.m." + names[i], a.m[i].shape());
    a.v[i] = tensor_named(ck, "opt.v." + names[i], a.v[i].shape());
  }
  a.step = ck.step;
  set_rng_state(trainer.rng(), ck.rng_state);
}

}  // namespace rssm
