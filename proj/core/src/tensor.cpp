#include "affect/tensor.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <unordered_set>

namespace affect {

static_assert(std::endian::native == std::endian::little,
              "tensor file I/O assumes a little-endian host");

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (std::int64_t d : shape) {
    if (d <= 0) throw dimension_error("dimension sizes must be positive, got " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace autograd {

namespace {
thread_local bool t_grad_enabled = true;
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = prev_; }

}  // namespace autograd

template <typename T>
bool Tensor<T>::all_finite() const {
  for (T v : *data_)
    if (!std::isfinite(static_cast<double>(v))) return false;
  return true;
}

template <typename T>
void backward(const Tensor<T>& loss) {
  if (loss.numel() != 1) throw contract_error("backward requires a scalar loss, got " + shape_str(loss.shape()));
  if (!std::isfinite(static_cast<double>(loss.item()))) throw numeric_error("backward on a non-finite loss");

  auto root = loss.node();
  // A loss with no recorded graph has no gradients to produce.
  Tensor<T> seed = loss;
  if (!root) {
    if (seed.requires_grad()) {
      seed.zero_grad();
      seed.grad()[0] = T(1);
    }
    return;
  }

  // Iterative DFS post-order gives a topological order of the reachable
  // graph; reversing it lets each node run after all of its consumers.
  using NodePtr = std::shared_ptr<autograd::Node<T>>;
  std::vector<NodePtr> order;
  std::unordered_set<autograd::Node<T>*> seen;
  struct Frame {
    NodePtr node;
    size_t next_input = 0;
  };
  std::vector<Frame> stack;
  stack.push_back({root});
  seen.insert(root.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    bool descended = false;
    while (f.next_input < f.node->inputs.size()) {
      auto parent = f.node->inputs[f.next_input++].node();
      if (parent && !seen.count(parent.get())) {
        seen.insert(parent.get());
        stack.push_back({parent});
        descended = true;
        break;
      }
    }
    if (!descended && f.next_input >= f.node->inputs.size()) {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  // Fresh gradients for every tensor touched by the reachable graph.
  for (auto& n : order) {
    n->output.zero_grad();
    for (auto& in : n->inputs)
      if (in.requires_grad()) in.zero_grad();
  }

  seed.zero_grad();
  seed.grad()[0] = T(1);

  for (auto it = order.rbegin(); it != order.rend(); ++it) (*it)->backward_fn();
}

namespace {

constexpr char kMagic[4] = {'T', 'N', 'S', 'R'};

template <typename T>
constexpr std::uint8_t dtype_code() {
  if constexpr (std::is_same_v<T, float>) return 0;
  else return 1;
}

void write_u32_le(std::ofstream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff), static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32_le(std::ifstream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

template <typename T>
void save_tensor(const std::filesystem::path& path, const Tensor<T>& t) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out.write(kMagic, 4);
  std::uint8_t code = dtype_code<T>();
  std::uint8_t rank = static_cast<std::uint8_t>(t.rank());
  out.write(reinterpret_cast<const char*>(&code), 1);
  out.write(reinterpret_cast<const char*>(&rank), 1);
  for (std::int64_t d : t.shape()) write_u32_le(out, static_cast<std::uint32_t>(d));
  out.write(reinterpret_cast<const char*>(t.ptr()), static_cast<std::streamsize>(t.numel() * sizeof(T)));
  if (!out) throw std::runtime_error("short write: " + path.string());
}

template <typename T>
Tensor<T> load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open tensor file: " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("bad tensor file magic: " + path.string());
  std::uint8_t code = 0, rank = 0;
  in.read(reinterpret_cast<char*>(&code), 1);
  in.read(reinterpret_cast<char*>(&rank), 1);
  Shape shape(rank);
  for (auto& d : shape) d = static_cast<std::int64_t>(read_u32_le(in));
  const std::int64_t n = shape_numel(shape);

  auto read_values = [&](auto tag) {
    using S = decltype(tag);
    std::vector<S> raw(static_cast<size_t>(n));
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n * sizeof(S)));
    if (!in) throw std::runtime_error("short read: " + path.string());
    return raw;
  };

  if (code == dtype_code<T>()) {
    return Tensor<T>(shape, read_values(T{}));
  }
  // Widening f32 -> f64 is allowed; narrowing is not.
  if constexpr (std::is_same_v<T, double>) {
    if (code == 0) {
      auto raw = read_values(float{});
      std::vector<double> vals(raw.begin(), raw.end());
      return Tensor<double>(shape, std::move(vals));
    }
  }
  throw std::runtime_error("tensor dtype mismatch in " + path.string());
}

void save_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("short write: " + path.string());
}

std::vector<std::uint8_t> load_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw std::runtime_error("cannot open file: " + path.string());
  const auto size = in.tellg();
  in.seekg(0);
  std::vector<std::uint8_t> bytes(static_cast<size_t>(size));
  in.read(reinterpret_cast<char*>(bytes.data()), size);
  if (!in) throw std::runtime_error("short read: " + path.string());
  return bytes;
}

template class Tensor<float>;
template class Tensor<double>;
template void backward<float>(const Tensor<float>&);
template void backward<double>(const Tensor<double>&);
template void save_tensor<float>(const std::filesystem::path&, const Tensor<float>&);
template void save_tensor<double>(const std::filesystem::path&, const Tensor<double>&);
template Tensor<float> load_tensor<float>(const std::filesystem::path&);
template Tensor<double> load_tensor<double>(const std::filesystem::path&);

}  // namespace affect
