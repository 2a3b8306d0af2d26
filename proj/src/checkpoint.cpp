#include "l2f/checkpoint.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace l2f {

namespace {

constexpr const char* kMagic = "l2f-checkpoint v1";

std::string hexfloat(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%a", v);
  return buf;
}

void write_tensor(std::ostream& os, const std::string& name, const Tensor& t) {
  os << "tensor " << name << " " << t.rank();
  for (Index d : t.shape()) os << " " << d;
  os << "\n";
  for (Index i = 0; i < t.size(); ++i) {
    if (i) os << " ";
    os << hexfloat(t[i]);
  }
  os << "\n";
}

struct Reader {
  std::ifstream in;
  std::string path;
  int line_no = 0;

  explicit Reader(const std::string& p) : in(p), path(p) {
    if (!in) throw std::runtime_error("checkpoint: cannot open " + p);
  }

  [[noreturn]] void fail(const std::string& msg) const {
    throw std::runtime_error("checkpoint " + path + ":" + std::to_string(line_no) + ": " + msg);
  }

  std::string next_line() {
    std::string line;
    if (!std::getline(in, line)) fail("unexpected end of file");
    ++line_no;
    return line;
  }
};

Tensor read_tensor_payload(Reader& r, const Shape& shape) {
  Tensor t = shape.empty() ? Tensor::scalar(0.0) : Tensor::zeros(shape);
  std::string line = r.next_line();
  const char* p = line.c_str();
  for (Index i = 0; i < t.size(); ++i) {
    char* end = nullptr;
    const double v = std::strtod(p, &end);
    if (end == p) r.fail("short tensor payload");
    t[i] = v;
    p = end;
  }
  return t;
}

}  // namespace

void save_checkpoint(const std::string& path, const MetaState& state) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("checkpoint: cannot write " + path);
  os << kMagic << "\n";
  os << "method " << to_string(state.method) << "\n";
  os << "head " << (state.head == Head::Regression ? "regression" : "classification") << "\n";
  os << "scope " << to_string(state.scope) << "\n";
  os << "transform " << to_string(state.transform) << "\n";
  os << "net_sizes";
  for (Index s : state.net_sizes) os << " " << s;
  os << "\n";
  for (size_t j = 0; j < state.theta.layers.size(); ++j) {
    write_tensor(os, "layer." + std::to_string(j) + ".weight",
                 state.theta.layers[j].weight.tensor());
    write_tensor(os, "layer." + std::to_string(j) + ".bias", state.theta.layers[j].bias.tensor());
  }
  if (state.attenuator) {
    for (size_t j = 0; j < state.attenuator->params.layers.size(); ++j) {
      write_tensor(os, "attenuator." + std::to_string(j) + ".weight",
                   state.attenuator->params.layers[j].weight.tensor());
      write_tensor(os, "attenuator." + std::to_string(j) + ".bias",
                   state.attenuator->params.layers[j].bias.tensor());
    }
  }
  if (state.learned_gamma.defined()) {
    write_tensor(os, "learned_gamma", state.learned_gamma.tensor());
  }
  os << "end\n";
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

MetaState load_checkpoint(const std::string& path) {
  Reader r(path);
  if (r.next_line() != kMagic) r.fail("bad magic; not a checkpoint file");

  MetaState state;
  std::map<std::string, Tensor> tensors;
  std::vector<std::string> tensor_order;
  for (;;) {
    std::string line = r.next_line();
    if (line == "end") break;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "method") {
      std::string v;
      ls >> v;
      state.method = method_from_string(v);
    } else if (key == "head") {
      std::string v;
      ls >> v;
      if (v == "regression") state.head = Head::Regression;
      else if (v == "classification") state.head = Head::Classification;
      else r.fail("unknown head '" + v + "'");
    } else if (key == "scope") {
      std::string v;
      ls >> v;
      state.scope = scope_from_string(v);
    } else if (key == "transform") {
      std::string v;
      ls >> v;
      state.transform = transform_from_string(v);
    } else if (key == "net_sizes") {
      Index s;
      while (ls >> s) state.net_sizes.push_back(s);
      if (state.net_sizes.size() < 2) r.fail("net_sizes needs at least 2 entries");
    } else if (key == "tensor") {
      std::string name;
      Index rank = 0;
      ls >> name >> rank;
      if (rank < 0 || rank > 2) r.fail("bad tensor rank");
      Shape shape(static_cast<size_t>(rank));
      for (Index i = 0; i < rank; ++i) {
        if (!(ls >> shape[static_cast<size_t>(i)])) r.fail("short tensor shape");
      }
      tensors.emplace(name, read_tensor_payload(r, shape));
      tensor_order.push_back(name);
    } else {
      r.fail("unknown key '" + key + "'");
    }
  }

  auto take = [&](const std::string& name) {
    auto it = tensors.find(name);
    if (it == tensors.end()) r.fail("missing tensor '" + name + "'");
    Tensor t = std::move(it->second);
    tensors.erase(it);
    return t;
  };

  const size_t l = state.net_sizes.size() - 1;
  for (size_t j = 0; j < l; ++j) {
    Tensor w = take("layer." + std::to_string(j) + ".weight");
    Tensor b = take("layer." + std::to_string(j) + ".bias");
    state.theta.layers.push_back({Value::param(std::move(w)), Value::param(std::move(b))});
  }
  state.theta.validate();

  if (state.method == Method::L2f) {
    Attenuator att;
    att.transform = state.transform;
    att.scope = state.scope;
    att.net_sizes = state.net_sizes;
    for (size_t j = 0; tensors.count("attenuator." + std::to_string(j) + ".weight"); ++j) {
      Tensor w = take("attenuator." + std::to_string(j) + ".weight");
      Tensor b = take("attenuator." + std::to_string(j) + ".bias");
      att.params.layers.push_back({Value::param(std::move(w)), Value::param(std::move(b))});
    }
    if (att.params.layers.empty()) r.fail("method l2f but no attenuator tensors");
    att.params.validate();
    state.attenuator = std::move(att);
  } else if (state.method == Method::LearnedScope) {
    state.learned_gamma = Value::param(take("learned_gamma"));
  }
  if (!tensors.empty()) r.fail("unused tensor '" + tensors.begin()->first + "'");
  return state;
}

}  // namespace l2f
