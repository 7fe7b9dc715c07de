#include "dmgnn/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

namespace dmgnn {

namespace {

constexpr char kMagic[4] = {'D', 'M', 'G', 'N'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }
void write_u64(std::ostream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); }
void write_f64(std::ostream& out, double v) { out.write(reinterpret_cast<const char*>(&v), 8); }

void write_string(std::ostream& out, const std::string& s) {
  write_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void write_doubles(std::ostream& out, const std::vector<double>& v) {
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
}

std::uint32_t read_u32(std::istream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 4);
  return v;
}
std::uint64_t read_u64(std::istream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 8);
  return v;
}
double read_f64(std::istream& in) {
  double v = 0;
  in.read(reinterpret_cast<char*>(&v), 8);
  return v;
}

std::string read_string(std::istream& in) {
  const std::uint64_t n = read_u64(in);
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  return s;
}

std::vector<double> read_doubles(std::istream& in, std::uint64_t n) {
  std::vector<double> v(n);
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
  return v;
}

void write_named_values(std::ostream& out, const std::string& name, const Shape& shape,
                        const std::vector<double>& values) {
  write_string(out, name);
  write_u32(out, static_cast<std::uint32_t>(shape.size()));
  for (auto d : shape) write_u64(out, static_cast<std::uint64_t>(d));
  write_doubles(out, values);
}

}  // namespace

void save_checkpoint(const std::string& path, Model& model, const AdamState* opt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("checkpoint: cannot write " + path);
  out.write(kMagic, 4);
  write_u32(out, kVersion);
  write_string(out, model.config().to_json_string(-1));

  auto named = model.named_params();
  write_u64(out, named.size());
  for (auto& [name, t] : named) write_named_values(out, name, t.shape(), t.values());

  std::vector<std::pair<std::string, std::vector<double>*>> buffers;
  model.visit_buffers([&](const std::string& name, std::vector<double>& buf) {
    buffers.emplace_back(name, &buf);
  });
  write_u64(out, buffers.size());
  for (auto& [name, buf] : buffers) {
    write_named_values(out, name, {static_cast<std::int64_t>(buf->size())}, *buf);
  }

  out.put(opt ? 1 : 0);
  if (opt) {
    if (!opt->m.empty() && opt->m.size() != named.size()) {
      throw ContractError("checkpoint: optimizer tracks " + std::to_string(opt->m.size()) +
                          " parameters, model has " + std::to_string(named.size()));
    }
    write_u64(out, static_cast<std::uint64_t>(opt->step));
    write_f64(out, opt->lr);
    write_f64(out, opt->beta1);
    write_f64(out, opt->beta2);
    write_f64(out, opt->eps);
    for (std::size_t i = 0; i < named.size(); ++i) {
      const std::size_t n = static_cast<std::size_t>(named[i].second.numel());
      if (opt->m.empty()) {
        write_doubles(out, std::vector<double>(n, 0.0));
        write_doubles(out, std::vector<double>(n, 0.0));
      } else {
        write_doubles(out, opt->m[i]);
        write_doubles(out, opt->v[i]);
      }
    }
  }
  if (!out) throw DataError("checkpoint: write failed for " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw DataError("checkpoint: " + path + " is not a DMGN checkpoint");
  }
  const std::uint32_t version = read_u32(in);
  if (version != kVersion) {
    throw DataError("checkpoint: unsupported version " + std::to_string(version));
  }
  Checkpoint ck;
  ck.config_json = read_string(in);

  const std::uint64_t n_params = read_u64(in);
  for (std::uint64_t i = 0; i < n_params; ++i) {
    const std::string name = read_string(in);
    const std::uint32_t rank = read_u32(in);
    Shape shape;
    for (std::uint32_t r = 0; r < rank; ++r) shape.push_back(static_cast<std::int64_t>(read_u64(in)));
    auto values = read_doubles(in, static_cast<std::uint64_t>(numel_of(shape)));
    if (!in) throw DataError("checkpoint: truncated parameter section in " + path);
    ck.params.emplace_back(name, Tensor::from_values(shape, std::move(values)));
  }
  const std::uint64_t n_buffers = read_u64(in);
  for (std::uint64_t i = 0; i < n_buffers; ++i) {
    const std::string name = read_string(in);
    const std::uint32_t rank = read_u32(in);
    std::uint64_t count = 1;
    for (std::uint32_t r = 0; r < rank; ++r) count *= read_u64(in);
    ck.buffers.emplace_back(name, read_doubles(in, count));
    if (!in) throw DataError("checkpoint: truncated buffer section in " + path);
  }
  const int flag = in.get();
  if (flag == 1) {
    ck.has_optimizer = true;
    ck.optimizer.step = static_cast<std::int64_t>(read_u64(in));
    ck.optimizer.lr = read_f64(in);
    ck.optimizer.beta1 = read_f64(in);
    ck.optimizer.beta2 = read_f64(in);
    ck.optimizer.eps = read_f64(in);
    for (auto& [name, t] : ck.params) {
      (void)name;
      ck.optimizer.m.push_back(read_doubles(in, static_cast<std::uint64_t>(t.numel())));
      ck.optimizer.v.push_back(read_doubles(in, static_cast<std::uint64_t>(t.numel())));
    }
    if (!in) throw DataError("checkpoint: truncated optimizer section in " + path);
  }
  return ck;
}

void load_into(Model& model, const Checkpoint& ck) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : ck.params) by_name[name] = &t;
  auto named = model.named_params();
  for (auto& [name, t] : named) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw DataError("checkpoint: missing parameter '" + name + "'");
    if (it->second->shape() != t.shape()) {
      throw DataError("checkpoint: parameter '" + name + "' has shape " +
                      shape_str(it->second->shape()) + ", model expects " + shape_str(t.shape()));
    }
    t.values() = it->second->values();
    by_name.erase(it);
  }
  if (!by_name.empty()) {
    throw DataError("checkpoint: unused parameter '" + by_name.begin()->first + "'");
  }
  std::map<std::string, const std::vector<double>*> buf_by_name;
  for (const auto& [name, b] : ck.buffers) buf_by_name[name] = &b;
  model.visit_buffers([&](const std::string& name, std::vector<double>& buf) {
    auto it = buf_by_name.find(name);
    if (it == buf_by_name.end()) throw DataError("checkpoint: missing buffer '" + name + "'");
    if (it->second->size() != buf.size()) {
      throw DataError("checkpoint: buffer '" + name + "' size mismatch");
    }
    buf = *it->second;
    buf_by_name.erase(it);
  });
  if (!buf_by_name.empty()) {
    throw DataError("checkpoint: unused buffer '" + buf_by_name.begin()->first + "'");
  }
}

Model load_model(const std::string& path, AdamState* opt) {
  Checkpoint ck = read_checkpoint(path);
  Model model(ModelConfig::from_json_string(ck.config_json));
  load_into(model, ck);
  if (opt) {
    if (!ck.has_optimizer) throw DataError("checkpoint: " + path + " has no optimizer state");
    *opt = ck.optimizer;
  }
  return model;
}

}  // namespace dmgnn
