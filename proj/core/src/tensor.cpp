#include "distillab/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace distillab {

int64_t shape_numel(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

void tensor_error(const std::string& op, const std::string& detail) {
  throw std::invalid_argument("tensor op '" + op + "': " + detail);
}

Tensor::Tensor(std::vector<int> shape, bool tracked) {
  impl_ = std::make_shared<Impl>();
  impl_->shape = std::move(shape);
  impl_->value.assign(static_cast<size_t>(shape_numel(impl_->shape)), 0.0);
  impl_->tracked = tracked;
  if (tracked) impl_->grad.assign(impl_->value.size(), 0.0);
}

Tensor::Tensor(std::vector<int> shape, std::vector<double> values, bool tracked) {
  if (shape_numel(shape) != static_cast<int64_t>(values.size()))
    tensor_error("tensor", "value count " + std::to_string(values.size()) +
                               " does not match shape " + shape_str(shape));
  impl_ = std::make_shared<Impl>();
  impl_->shape = std::move(shape);
  impl_->value = std::move(values);
  impl_->tracked = tracked;
  if (tracked) impl_->grad.assign(impl_->value.size(), 0.0);
}

Tensor Tensor::scalar(double v, bool tracked) { return Tensor({1}, {v}, tracked); }

void Tensor::zero_grad() {
  if (impl_ && impl_->tracked) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

double Tensor::item() const {
  if (!impl_ || impl_->value.size() != 1)
    tensor_error("item", "tensor is not a single element");
  return impl_->value[0];
}

Tensor Tensor::clone() const {
  Tensor t;
  t.impl_ = std::make_shared<Impl>();
  t.impl_->shape = impl_->shape;
  t.impl_->value = impl_->value;
  t.impl_->tracked = impl_->tracked;
  if (impl_->tracked) t.impl_->grad.assign(impl_->value.size(), 0.0);
  return t;
}

namespace {

// Right-aligned broadcast mapping between an output shape and an input
// shape. Yields, for every output linear index, the input linear index.
struct BroadcastMap {
  std::vector<int> out_shape;
  std::vector<int64_t> strides;  // per output axis; 0 where input broadcasts
  bool identity = false;

  int64_t map(int64_t out_index, const std::vector<int>& /*unused*/) const {
    return out_index;
  }
};

std::vector<int> broadcast_shape(const std::string& op, const std::vector<int>& a,
                                 const std::vector<int>& b) {
  size_t rank = std::max(a.size(), b.size());
  std::vector<int> out(rank);
  for (size_t i = 0; i < rank; ++i) {
    int da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    int db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1)
      tensor_error(op, "shapes " + shape_str(a) + " and " + shape_str(b) +
                           " are not broadcastable");
    out[i] = std::max(da, db);
  }
  return out;
}

BroadcastMap make_map(const std::vector<int>& out_shape, const std::vector<int>& in_shape) {
  BroadcastMap m;
  m.out_shape = out_shape;
  size_t rank = out_shape.size();
  m.strides.assign(rank, 0);
  std::vector<int64_t> in_strides(in_shape.size());
  int64_t s = 1;
  for (int i = static_cast<int>(in_shape.size()) - 1; i >= 0; --i) {
    in_strides[static_cast<size_t>(i)] = s;
    s *= in_shape[static_cast<size_t>(i)];
  }
  bool identity = in_shape.size() == rank;
  for (size_t i = 0; i < rank; ++i) {
    size_t off = rank - in_shape.size();
    if (i >= off && in_shape[i - off] != 1) {
      m.strides[i] = in_strides[i - off];
    }
    if (identity && out_shape[i] != in_shape[i]) identity = false;
  }
  m.identity = identity;
  return m;
}

// Walks all output indices, calling fn(out_index, in_index).
template <typename Fn>
void for_broadcast(const BroadcastMap& m, Fn&& fn) {
  int64_t n = shape_numel(m.out_shape);
  if (m.identity) {
    for (int64_t i = 0; i < n; ++i) fn(i, i);
    return;
  }
  size_t rank = m.out_shape.size();
  std::vector<int> counter(rank, 0);
  int64_t in_index = 0;
  for (int64_t i = 0; i < n; ++i) {
    fn(i, in_index);
    for (int ax = static_cast<int>(rank) - 1; ax >= 0; --ax) {
      size_t u = static_cast<size_t>(ax);
      ++counter[u];
      in_index += m.strides[u];
      if (counter[u] < m.out_shape[u]) break;
      in_index -= m.strides[u] * m.out_shape[u];
      counter[u] = 0;
    }
  }
}

// c[M,N] += a[M,K] * b[K,N]
void mm_acc(const double* a, const double* b, double* c, int M, int K, int N) {
  for (int i = 0; i < M; ++i) {
    const double* arow = a + static_cast<size_t>(i) * K;
    double* crow = c + static_cast<size_t>(i) * N;
    for (int k = 0; k < K; ++k) {
      const double aik = arow[k];
      const double* brow = b + static_cast<size_t>(k) * N;
      for (int j = 0; j < N; ++j) crow[j] += aik * brow[j];
    }
  }
}

// da[M,K] += dc[M,N] * b^T
void mm_grad_a(const double* dc, const double* b, double* da, int M, int K, int N) {
  for (int i = 0; i < M; ++i) {
    const double* dcrow = dc + static_cast<size_t>(i) * N;
    double* darow = da + static_cast<size_t>(i) * K;
    for (int k = 0; k < K; ++k) {
      const double* brow = b + static_cast<size_t>(k) * N;
      double s = 0.0;
      for (int j = 0; j < N; ++j) s += dcrow[j] * brow[j];
      darow[k] += s;
    }
  }
}

// db[K,N] += a^T * dc
void mm_grad_b(const double* a, const double* dc, double* db, int M, int K, int N) {
  for (int i = 0; i < M; ++i) {
    const double* arow = a + static_cast<size_t>(i) * K;
    const double* dcrow = dc + static_cast<size_t>(i) * N;
    for (int k = 0; k < K; ++k) {
      const double aik = arow[k];
      if (aik == 0.0) continue;
      double* dbrow = db + static_cast<size_t>(k) * N;
      for (int j = 0; j < N; ++j) dbrow[j] += aik * dcrow[j];
    }
  }
}

}  // namespace

Tensor Tape::make_output(std::vector<int> shape, bool tracked) {
  return Tensor(std::move(shape), recording_ && tracked);
}

void Tape::record(std::function<void()> back) {
  if (recording_) steps_.push_back(std::move(back));
}

Tensor Tape::constant(std::vector<int> shape, std::vector<double> values) {
  return Tensor(std::move(shape), std::move(values), false);
}

namespace {
enum class BinOp { kAdd, kSub, kMul };
}

static Tensor binary_op(const char* name, BinOp op, const Tensor& a, const Tensor& b,
                        bool recording, std::vector<std::function<void()>>* steps) {
  auto out_shape = broadcast_shape(name, a.shape(), b.shape());
  bool tracked = recording && (a.tracked() || b.tracked());
  Tensor out(out_shape, tracked);
  BroadcastMap ma = make_map(out_shape, a.shape());
  BroadcastMap mb = make_map(out_shape, b.shape());
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  if (ma.identity && mb.identity) {
    int64_t n = out.size();
    switch (op) {
      case BinOp::kAdd: for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i]; break;
      case BinOp::kSub: for (int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i]; break;
      case BinOp::kMul: for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i]; break;
    }
  } else {
    std::vector<int64_t> ib(static_cast<size_t>(out.size()));
    for_broadcast(mb, [&](int64_t oi, int64_t bi) { ib[static_cast<size_t>(oi)] = bi; });
    switch (op) {
      case BinOp::kAdd:
        for_broadcast(ma, [&](int64_t oi, int64_t ai) { po[oi] = pa[ai] + pb[ib[static_cast<size_t>(oi)]]; });
        break;
      case BinOp::kSub:
        for_broadcast(ma, [&](int64_t oi, int64_t ai) { po[oi] = pa[ai] - pb[ib[static_cast<size_t>(oi)]]; });
        break;
      case BinOp::kMul:
        for_broadcast(ma, [&](int64_t oi, int64_t ai) { po[oi] = pa[ai] * pb[ib[static_cast<size_t>(oi)]]; });
        break;
    }
  }
  if (tracked) {
    steps->push_back([op, a, b, out, ma, mb]() {
      const double* g = out.impl_->grad.data();
      const double* pa2 = a.data();
      const double* pb2 = b.data();
      if (a.tracked()) {
        double* ga = a.impl_->grad.data();
        switch (op) {
          case BinOp::kAdd:
          case BinOp::kSub:
            for_broadcast(ma, [&](int64_t oi, int64_t ai) { ga[ai] += g[oi]; });
            break;
          case BinOp::kMul: {
            std::vector<int64_t> ib(static_cast<size_t>(out.size()));
            for_broadcast(mb, [&](int64_t oi, int64_t bi) { ib[static_cast<size_t>(oi)] = bi; });
            for_broadcast(ma, [&](int64_t oi, int64_t ai) {
              ga[ai] += g[oi] * pb2[ib[static_cast<size_t>(oi)]];
            });
            break;
          }
        }
      }
      if (b.tracked()) {
        double* gb = b.impl_->grad.data();
        switch (op) {
          case BinOp::kAdd:
            for_broadcast(mb, [&](int64_t oi, int64_t bi) { gb[bi] += g[oi]; });
            break;
          case BinOp::kSub:
            for_broadcast(mb, [&](int64_t oi, int64_t bi) { gb[bi] -= g[oi]; });
            break;
          case BinOp::kMul: {
            std::vector<int64_t> ia(static_cast<size_t>(out.size()));
            for_broadcast(ma, [&](int64_t oi, int64_t ai) { ia[static_cast<size_t>(oi)] = ai; });
            for_broadcast(mb, [&](int64_t oi, int64_t bi) {
              gb[bi] += g[oi] * pa2[ia[static_cast<size_t>(oi)]];
            });
            break;
          }
        }
      }
    });
  }
  return out;
}

Tensor Tape::add(const Tensor& a, const Tensor& b) {
  return binary_op("add", BinOp::kAdd, a, b, recording_, &steps_);
}
Tensor Tape::sub(const Tensor& a, const Tensor& b) {
  return binary_op("sub", BinOp::kSub, a, b, recording_, &steps_);
}
Tensor Tape::mul(const Tensor& a, const Tensor& b) {
  return binary_op("mul", BinOp::kMul, a, b, recording_, &steps_);
}

Tensor Tape::scale(const Tensor& a, double c) {
  Tensor out = make_output(a.shape(), a.tracked());
  const double* pa = a.data();
  double* po = out.data();
  for (int64_t i = 0; i < a.size(); ++i) po[i] = pa[i] * c;
  if (out.tracked()) {
    record([a, out, c]() {
      double* ga = a.impl_->grad.data();
      const double* g = out.impl_->grad.data();
      for (int64_t i = 0; i < out.size(); ++i) ga[i] += g[i] * c;
    });
  }
  return out;
}

Tensor Tape::add_scalar(const Tensor& a, double c) {
  Tensor out = make_output(a.shape(), a.tracked());
  const double* pa = a.data();
  double* po = out.data();
  for (int64_t i = 0; i < a.size(); ++i) po[i] = pa[i] + c;
  if (out.tracked()) {
    record([a, out]() {
      double* ga = a.impl_->grad.data();
      const double* g = out.impl_->grad.data();
      for (int64_t i = 0; i < out.size(); ++i) ga[i] += g[i];
    });
  }
  return out;
}

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2)
    tensor_error("matmul", "ranks must be >= 2, got " + shape_str(a.shape()) + " x " +
                               shape_str(b.shape()));
  int M = a.dim(a.rank() - 2);
  int K = a.dim(a.rank() - 1);
  int Kb = b.dim(b.rank() - 2);
  int N = b.dim(b.rank() - 1);
  if (K != Kb)
    tensor_error("matmul", "inner dims disagree: " + shape_str(a.shape()) + " x " +
                               shape_str(b.shape()));
  int64_t batch = 1;
  for (int i = 0; i + 2 < a.rank(); ++i) batch *= a.dim(i);
  bool b_batched = b.rank() > 2;
  if (b_batched) {
    if (b.rank() != a.rank())
      tensor_error("matmul", "batched operands must share rank: " + shape_str(a.shape()) +
                                 " x " + shape_str(b.shape()));
    for (int i = 0; i + 2 < a.rank(); ++i)
      if (a.dim(i) != b.dim(i))
        tensor_error("matmul", "batch dims disagree: " + shape_str(a.shape()) + " x " +
                                   shape_str(b.shape()));
  }
  std::vector<int> out_shape(a.shape().begin(), a.shape().end() - 1);
  out_shape.push_back(N);
  bool tracked = recording_ && (a.tracked() || b.tracked());
  Tensor out(out_shape, tracked);

  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (int64_t s = 0; s < batch; ++s) {
    const double* bs = b_batched ? pb + s * static_cast<int64_t>(K) * N : pb;
    mm_acc(pa + s * static_cast<int64_t>(M) * K, bs, po + s * static_cast<int64_t>(M) * N,
           M, K, N);
  }
  if (tracked) {
    record([a, b, out, M, K, N, batch, b_batched]() {
      const double* g = out.impl_->grad.data();
      const double* pa2 = a.data();
      const double* pb2 = b.data();
      for (int64_t s = 0; s < batch; ++s) {
        const double* gs = g + s * static_cast<int64_t>(M) * N;
        const double* bs = b_batched ? pb2 + s * static_cast<int64_t>(K) * N : pb2;
        const double* as = pa2 + s * static_cast<int64_t>(M) * K;
        if (a.tracked())
          mm_grad_a(gs, bs, a.impl_->grad.data() + s * static_cast<int64_t>(M) * K, M, K, N);
        if (b.tracked()) {
          double* db = b.impl_->grad.data();
          if (b_batched) db += s * static_cast<int64_t>(K) * N;
          mm_grad_b(as, gs, db, M, K, N);
        }
      }
    });
  }
  return out;
}

Tensor Tape::matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() != 2)
    tensor_error("matmul_nt", "expected [...,M,K] x [N,K], got " + shape_str(a.shape()) +
                                  " x " + shape_str(b.shape()));
  int M = a.dim(a.rank() - 2);
  int K = a.dim(a.rank() - 1);
  int N = b.dim(0);
  if (b.dim(1) != K)
    tensor_error("matmul_nt", "inner dims disagree: " + shape_str(a.shape()) + " x " +
                                  shape_str(b.shape()));
  int64_t batch = 1;
  for (int i = 0; i + 2 < a.rank(); ++i) batch *= a.dim(i);
  std::vector<int> out_shape(a.shape().begin(), a.shape().end() - 1);
  out_shape.push_back(N);
  bool tracked = recording_ && (a.tracked() || b.tracked());
  Tensor out(out_shape, tracked);
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  int64_t rows = batch * M;
  for (int64_t i = 0; i < rows; ++i) {
    const double* arow = pa + i * K;
    double* crow = po + i * N;
    for (int j = 0; j < N; ++j) {
      const double* brow = pb + static_cast<int64_t>(j) * K;
      double s = 0.0;
      for (int k = 0; k < K; ++k) s += arow[k] * brow[k];
      crow[j] = s;
    }
  }
  if (tracked) {
    record([a, b, out, K, N, rows]() {
      const double* g = out.impl_->grad.data();
      const double* pa2 = a.data();
      const double* pb2 = b.data();
      if (a.tracked()) {
        // dA = dC @ B
        double* ga = a.impl_->grad.data();
        for (int64_t i = 0; i < rows; ++i) {
          const double* grow = g + i * N;
          double* garow = ga + i * K;
          for (int j = 0; j < N; ++j) {
            const double gij = grow[j];
            if (gij == 0.0) continue;
            const double* brow = pb2 + static_cast<int64_t>(j) * K;
            for (int k = 0; k < K; ++k) garow[k] += gij * brow[k];
          }
        }
      }
      if (b.tracked()) {
        // dB = dC^T @ A
        double* gb = b.impl_->grad.data();
        for (int64_t i = 0; i < rows; ++i) {
          const double* grow = g + i * N;
          const double* arow = pa2 + i * K;
          for (int j = 0; j < N; ++j) {
            const double gij = grow[j];
            if (gij == 0.0) continue;
            double* gbrow = gb + static_cast<int64_t>(j) * K;
            for (int k = 0; k < K; ++k) gbrow[k] += gij * arow[k];
          }
        }
      }
    });
  }
  return out;
}

Tensor Tape::transpose(const Tensor& a, int axis0, int axis1) {
  int r = a.rank();
  if (axis0 < 0 || axis1 < 0 || axis0 >= r || axis1 >= r)
    tensor_error("transpose", "axes out of range for " + shape_str(a.shape()));
  std::vector<int> out_shape = a.shape();
  std::swap(out_shape[static_cast<size_t>(axis0)], out_shape[static_cast<size_t>(axis1)]);
  Tensor out = make_output(out_shape, a.tracked());

  std::vector<int64_t> in_strides(static_cast<size_t>(r));
  int64_t s = 1;
  for (int i = r - 1; i >= 0; --i) {
    in_strides[static_cast<size_t>(i)] = s;
    s *= a.dim(i);
  }
  std::vector<int64_t> strides(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) strides[static_cast<size_t>(i)] = in_strides[static_cast<size_t>(i)];
  std::swap(strides[static_cast<size_t>(axis0)], strides[static_cast<size_t>(axis1)]);

  auto src = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(a.size()));
  std::vector<int> counter(static_cast<size_t>(r), 0);
  int64_t in_index = 0;
  int64_t n = a.size();
  const double* pa = a.data();
  double* po = out.data();
  for (int64_t i = 0; i < n; ++i) {
    (*src)[static_cast<size_t>(i)] = in_index;
    po[i] = pa[in_index];
    for (int ax = r - 1; ax >= 0; --ax) {
      size_t u = static_cast<size_t>(ax);
      ++counter[u];
      in_index += strides[u];
      if (counter[u] < out_shape[u]) break;
      in_index -= strides[u] * out_shape[u];
      counter[u] = 0;
    }
  }
  if (out.tracked()) {
    record([a, out, src]() {
      double* ga = a.impl_->grad.data();
      const double* g = out.impl_->grad.data();
      for (int64_t i = 0; i < out.size(); ++i) ga[(*src)[static_cast<size_t>(i)]] += g[i];
    });
  }
  return out;
}

Tensor Tape::reshape(const Tensor& a, std::vector<int> shape) {
  if (shape_numel(shape) != a.size())
    tensor_error("reshape", shape_str(a.shape()) + " -> " + shape_str(shape) +
                                " changes element count");
  Tensor out = make_output(shape, a.tracked());
  std::copy(a.data(), a.data() + a.size(), out.data());
  if (out.tracked()) {
    record([a, out]() {
      double* ga = a.impl_->grad.data();
      const double* g = out.impl_->grad.data();
      for (int64_t i = 0; i < out.size(); ++i) ga[i] += g[i];
    });
  }
  return out;
}

Tensor Tape::concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) tensor_error("concat", "no inputs");
  int r = parts[0].rank();
  std::vector<int> out_shape = parts[0].shape();
  int total = 0;
  for (const auto& p : parts) {
    if (p.rank() != r) tensor_error("concat", "rank mismatch");
    for (int i = 0; i < r; ++i)
      if (i != axis && p.dim(i) != out_shape[static_cast<size_t>(i)])
        tensor_error("concat", "shape mismatch off the concat axis");
    total += p.dim(axis);
  }
  out_shape[static_cast<size_t>(axis)] = total;
  bool tracked = false;
  for (const auto& p : parts) tracked = tracked || p.tracked();
  Tensor out = make_output(out_shape, tracked);

  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= out_shape[static_cast<size_t>(i)];
  for (int i = axis + 1; i < r; ++i) inner *= out_shape[static_cast<size_t>(i)];
  double* po = out.data();
  int64_t offset = 0;
  for (const auto& p : parts) {
    int64_t pin = p.dim(axis) * inner;
    const double* pp = p.data();
    for (int64_t o = 0; o < outer; ++o)
      std::copy(pp + o * pin, pp + (o + 1) * pin, po + o * total * inner + offset);
    offset += pin;
  }
  if (out.tracked()) {
    auto ps = parts;
    record([ps, out, outer, inner, total]() {
      const double* g = out.impl_->grad.data();
      int64_t offset = 0;
      for (const auto& p : ps) {
        int64_t block = p.size() / outer;
        if (p.tracked()) {
          double* gp = p.impl_->grad.data();
          for (int64_t o = 0; o < outer; ++o) {
            const double* gsrc = g + o * total * inner + offset;
            double* gdst = gp + o * block;
            for (int64_t i = 0; i < block; ++i) gdst[i] += gsrc[i];
          }
        }
        offset += block;
      }
    });
  }
  return out;
}

Tensor Tape::select(const Tensor& a, int axis, int index) {
  int r = a.rank();
  if (axis < 0 || axis >= r || index < 0 || index >= a.dim(axis))
    tensor_error("select", "axis/index out of range for " + shape_str(a.shape()));
  std::vector<int> out_shape;
  for (int i = 0; i < r; ++i)
    if (i != axis) out_shape.push_back(a.dim(i));
  if (out_shape.empty()) out_shape.push_back(1);
  Tensor out = make_output(out_shape, a.tracked());
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= a.dim(i);
  for (int i = axis + 1; i < r; ++i) inner *= a.dim(i);
  int d = a.dim(axis);
  const double* pa = a.data();
  double* po = out.data();
  for (int64_t o = 0; o < outer; ++o)
    std::copy(pa + (o * d + index) * inner, pa + (o * d + index + 1) * inner, po + o * inner);
  if (out.tracked()) {
    record([a, out, outer, inner, d, index]() {
      double* ga = a.impl_->grad.data();
      const double* g = out.impl_->grad.data();
      for (int64_t o = 0; o < outer; ++o) {
        double* dst = ga + (o * d + index) * inner;
        const double* src = g + o * inner;
        for (int64_t i = 0; i < inner; ++i) dst[i] += src[i];
      }
    });
  }
  return out;
}

Tensor Tape::relu(const Tensor& a) {
  Tensor out = make_output(a.shape(), a.tracked());
  const double* pa = a.data();
  double* po = out.data();
  for (int64_t i = 0; i < a.size(); ++i) po[i] = pa[i] > 0.0 ? pa[i] : 0.0;
  if (out.tracked()) {
    // relu'(0) := 0
    record([a, out]() {
      double* ga = a.impl_->grad.data();
      const double* g = out.impl_->grad.data();
      const double* pa2 = a.data();
      for (int64_t i = 0; i < out.size(); ++i)
        if (pa2[i] > 0.0) ga[i] += g[i];
    });
  }
  return out;
}

Tensor Tape::softmax(const Tensor& a, double temperature) {
  double tau = std::max(temperature, 1e-30);
  Tensor out = make_output(a.shape(), a.tracked());
  int C = a.dim(a.rank() - 1);
  int64_t rows = a.size() / C;
  const double* pa = a.data();
  double* po = out.data();
  for (int64_t rw = 0; rw < rows; ++rw) {
    const double* z = pa + rw * C;
    double* y = po + rw * C;
    double m = z[0];
    for (int c = 1; c < C; ++c) m = std::max(m, z[c]);
    double sum = 0.0;
    for (int c = 0; c < C; ++c) {
      y[c] = std::exp((z[c] - m) / tau);
      sum += y[c];
    }
    for (int c = 0; c < C; ++c) y[c] /= sum;
  }
  if (out.tracked()) {
    record([a, out, C, rows, tau]() {
      double* ga = a.impl_->grad.data();
      const double* g = out.impl_->grad.data();
      const double* y = out.data();
      for (int64_t rw = 0; rw < rows; ++rw) {
        const double* yr = y + rw * C;
        const double* gr = g + rw * C;
        double* gar = ga + rw * C;
        double dot = 0.0;
        for (int c = 0; c < C; ++c) dot += gr[c] * yr[c];
        for (int c = 0; c < C; ++c) gar[c] += yr[c] * (gr[c] - dot) / tau;
      }
    });
  }
  return out;
}

Tensor Tape::log_softmax(const Tensor& a) {
  Tensor out = make_output(a.shape(), a.tracked());
  int C = a.dim(a.rank() - 1);
  int64_t rows = a.size() / C;
  const double* pa = a.data();
  double* po = out.data();
  for (int64_t rw = 0; rw < rows; ++rw) {
    const double* z = pa + rw * C;
    double* y = po + rw * C;
    double m = z[0];
    for (int c = 1; c < C; ++c) m = std::max(m, z[c]);
    double sum = 0.0;
    for (int c = 0; c < C; ++c) sum += std::exp(z[c] - m);
    double lse = m + std::log(sum);
    for (int c = 0; c < C; ++c) y[c] = z[c] - lse;
  }
  if (out.tracked()) {
    record([a, out, C, rows]() {
      double* ga = a.impl_->grad.data();
      const double* g = out.impl_->grad.data();
      const double* y = out.data();
      for (int64_t rw = 0; rw < rows; ++rw) {
        const double* yr = y + rw * C;
        const double* gr = g + rw * C;
        double* gar = ga + rw * C;
        double total = 0.0;
        for (int c = 0; c < C; ++c) total += gr[c];
        for (int c = 0; c < C; ++c) gar[c] += gr[c] - std::exp(yr[c]) * total;
      }
    });
  }
  return out;
}

Tensor Tape::embedding(const Tensor& table, const std::vector<int>& ids,
                       std::vector<int> id_shape) {
  if (table.rank() != 2) tensor_error("embedding", "table must be rank 2");
  if (shape_numel(id_shape) != static_cast<int64_t>(ids.size()))
    tensor_error("embedding", "id count does not match id_shape");
  int V = table.dim(0), E = table.dim(1);
  for (int id : ids)
    if (id < 0 || id >= V)
      tensor_error("embedding", "id " + std::to_string(id) + " out of range [0," +
                                    std::to_string(V) + ")");
  std::vector<int> out_shape = std::move(id_shape);
  out_shape.push_back(E);
  Tensor out = make_output(out_shape, table.tracked());
  const double* pt = table.data();
  double* po = out.data();
  for (size_t i = 0; i < ids.size(); ++i)
    std::copy(pt + static_cast<int64_t>(ids[i]) * E, pt + static_cast<int64_t>(ids[i] + 1) * E,
              po + static_cast<int64_t>(i) * E);
  if (out.tracked()) {
    record([table, out, ids, E]() {
      double* gt = table.impl_->grad.data();
      const double* g = out.impl_->grad.data();
      for (size_t i = 0; i < ids.size(); ++i) {
        double* dst = gt + static_cast<int64_t>(ids[i]) * E;
        const double* src = g + static_cast<int64_t>(i) * E;
        for (int e = 0; e < E; ++e) dst[e] += src[e];
      }
    });
  }
  return out;
}

Tensor Tape::gather_last(const Tensor& a, const std::vector<int>& ids) {
  int C = a.dim(a.rank() - 1);
  int64_t rows = a.size() / C;
  if (static_cast<int64_t>(ids.size()) != rows)
    tensor_error("gather_last", "expected one index per row");
  std::vector<int> out_shape(a.shape().begin(), a.shape().end() - 1);
  if (out_shape.empty()) out_shape.push_back(1);
  Tensor out = make_output(out_shape, a.tracked());
  const double* pa = a.data();
  double* po = out.data();
  for (int64_t rw = 0; rw < rows; ++rw) {
    int id = ids[static_cast<size_t>(rw)];
    if (id < 0 || id >= C) tensor_error("gather_last", "index out of range");
    po[rw] = pa[rw * C + id];
  }
  if (out.tracked()) {
    record([a, out, ids, C, rows]() {
      double* ga = a.impl_->grad.data();
      const double* g = out.impl_->grad.data();
      for (int64_t rw = 0; rw < rows; ++rw)
        ga[rw * C + ids[static_cast<size_t>(rw)]] += g[rw];
    });
  }
  return out;
}

Tensor Tape::sum(const Tensor& a) {
  Tensor out = make_output({1}, a.tracked());
  const double* pa = a.data();
  double s = 0.0;
  for (int64_t i = 0; i < a.size(); ++i) s += pa[i];
  out.data()[0] = s;
  if (out.tracked()) {
    record([a, out]() {
      double* ga = a.impl_->grad.data();
      const double g = out.impl_->grad[0];
      for (int64_t i = 0; i < a.size(); ++i) ga[i] += g;
    });
  }
  return out;
}

Tensor Tape::mean(const Tensor& a) {
  int64_t n = a.size();
  Tensor out = make_output({1}, a.tracked());
  const double* pa = a.data();
  double s = 0.0;
  for (int64_t i = 0; i < n; ++i) s += pa[i];
  out.data()[0] = s / static_cast<double>(n);
  if (out.tracked()) {
    record([a, out, n]() {
      double* ga = a.impl_->grad.data();
      const double g = out.impl_->grad[0] / static_cast<double>(n);
      for (int64_t i = 0; i < n; ++i) ga[i] += g;
    });
  }
  return out;
}

Tensor Tape::masked_fill(const Tensor& a, const Tensor& mask, double fill) {
  auto out_shape = broadcast_shape("masked_fill", a.shape(), mask.shape());
  if (out_shape != a.shape())
    tensor_error("masked_fill", "mask must broadcast to the input shape");
  Tensor out = make_output(a.shape(), a.tracked());
  BroadcastMap mm = make_map(out_shape, mask.shape());
  const double* pa = a.data();
  const double* pm = mask.data();
  double* po = out.data();
  for_broadcast(mm, [&](int64_t oi, int64_t mi) {
    po[oi] = pm[mi] != 0.0 ? fill : pa[oi];
  });
  if (out.tracked()) {
    record([a, out, mask, mm]() {
      double* ga = a.impl_->grad.data();
      const double* g = out.impl_->grad.data();
      const double* pm2 = mask.data();
      for_broadcast(mm, [&](int64_t oi, int64_t mi) {
        if (pm2[mi] == 0.0) ga[oi] += g[oi];
      });
    });
  }
  return out;
}

Tensor Tape::layer_norm(const Tensor& a, const Tensor& gamma, const Tensor& beta,
                        double eps) {
  int C = a.dim(a.rank() - 1);
  if (gamma.size() != C || beta.size() != C)
    tensor_error("layer_norm", "gamma/beta must match the last axis");
  int64_t rows = a.size() / C;
  bool tracked = recording_ && (a.tracked() || gamma.tracked() || beta.tracked());
  Tensor out(a.shape(), tracked);
  auto xhat = std::make_shared<std::vector<double>>(static_cast<size_t>(a.size()));
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<size_t>(rows));
  const double* pa = a.data();
  const double* pg = gamma.data();
  const double* pb = beta.data();
  double* po = out.data();
  for (int64_t rw = 0; rw < rows; ++rw) {
    const double* x = pa + rw * C;
    double mu = 0.0;
    for (int c = 0; c < C; ++c) mu += x[c];
    mu /= C;
    double var = 0.0;
    for (int c = 0; c < C; ++c) var += (x[c] - mu) * (x[c] - mu);
    var /= C;
    double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[static_cast<size_t>(rw)] = is;
    double* xh = xhat->data() + rw * C;
    double* y = po + rw * C;
    for (int c = 0; c < C; ++c) {
      xh[c] = (x[c] - mu) * is;
      y[c] = pg[c] * xh[c] + pb[c];
    }
  }
  if (tracked) {
    record([a, gamma, beta, out, xhat, inv_std, C, rows]() {
      const double* g = out.impl_->grad.data();
      const double* pg2 = gamma.data();
      for (int64_t rw = 0; rw < rows; ++rw) {
        const double* gr = g + rw * C;
        const double* xh = xhat->data() + rw * C;
        if (gamma.tracked()) {
          double* gg = gamma.impl_->grad.data();
          for (int c = 0; c < C; ++c) gg[c] += gr[c] * xh[c];
        }
        if (beta.tracked()) {
          double* gb = beta.impl_->grad.data();
          for (int c = 0; c < C; ++c) gb[c] += gr[c];
        }
        if (a.tracked()) {
          double* ga = a.impl_->grad.data() + rw * C;
          double is = (*inv_std)[static_cast<size_t>(rw)];
          double sum_dxh = 0.0, sum_dxh_xh = 0.0;
          for (int c = 0; c < C; ++c) {
            double dxh = gr[c] * pg2[c];
            sum_dxh += dxh;
            sum_dxh_xh += dxh * xh[c];
          }
          for (int c = 0; c < C; ++c) {
            double dxh = gr[c] * pg2[c];
            ga[c] += is * (dxh - sum_dxh / C - xh[c] * sum_dxh_xh / C);
          }
        }
      }
    });
  }
  return out;
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1)
    tensor_error("backward", "loss must be a single-element tensor");
  if (!loss.tracked())
    tensor_error("backward", "loss is not tracked (no tape nodes feed it)");
  loss.impl_->grad[0] += 1.0;
  for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
  steps_.clear();
}

void Tape::reset() { steps_.clear(); }

}  // namespace distillab
