#include "tgnn/tensor.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

#include "tgnn/error.hpp"

namespace tgnn::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatMap = Eigen::Map<const RowMat>;
using MatMap = Eigen::Map<RowMat>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;
using VecMap = Eigen::Map<Eigen::VectorXd>;

[[noreturn]] void fail(const std::string& message) { throw Error("autodiff", message); }

// Lane decomposition for an axis: element (o, j, i) of a lane lives at
// (o * len + j) * inner + i.
struct Lanes {
  std::size_t outer = 1;
  std::size_t inner = 1;
  std::size_t len = 0;
};

Lanes lanes_for_axis(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) fail("axis out of range");
  Lanes lanes;
  lanes.len = shape[axis];
  for (std::size_t i = 0; i < axis; ++i) lanes.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) lanes.inner *= shape[i];
  return lanes;
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

Tensor Tensor::leaf(Shape shape, std::vector<double> value, bool requires_grad) {
  if (shape_numel(shape) != value.size()) fail("leaf value does not match shape");
  auto data = std::make_shared<TensorData>();
  data->shape = std::move(shape);
  data->value = std::move(value);
  data->requires_grad = requires_grad;
  return Tensor(std::move(data));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  std::vector<double> value(shape_numel(shape), 0.0);
  return leaf(std::move(shape), std::move(value), requires_grad);
}

Tensor Tensor::full(Shape shape, double fill, bool requires_grad) {
  std::vector<double> value(shape_numel(shape), fill);
  return leaf(std::move(shape), std::move(value), requires_grad);
}

Tensor Tensor::scalar(double v) { return leaf({1}, {v}, false); }

std::size_t Tensor::rows() const {
  if (rank() != 2) fail("rows() requires a 2-d tensor");
  return shape()[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) fail("cols() requires a 2-d tensor");
  return shape()[1];
}

void Tensor::zero_grad() { data_->grad.clear(); }

double Tensor::item() const {
  if (numel() != 1) fail("item() requires a single-element tensor");
  return data_->value[0];
}

NeighborLists NeighborLists::from_rows(const std::vector<std::vector<std::size_t>>& rows) {
  NeighborLists lists;
  lists.offsets.reserve(rows.size() + 1);
  lists.offsets.push_back(0);
  for (const auto& row : rows) {
    lists.items.insert(lists.items.end(), row.begin(), row.end());
    lists.offsets.push_back(lists.items.size());
  }
  return lists;
}

Tensor Tape::make_output(Shape shape, std::vector<double> value, bool requires_grad) {
  auto data = std::make_shared<TensorData>();
  data->shape = std::move(shape);
  data->value = std::move(value);
  data->requires_grad = requires_grad && recording_;
  return Tensor(std::move(data));
}

void Tape::push(std::shared_ptr<TensorData> output, std::function<void()> pull) {
  records_.push_back(Record{std::move(output), std::move(pull)});
}

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
  if (!a.defined() || !b.defined()) fail("matmul on undefined tensor");
  const bool a_mat = a.rank() == 2;
  const bool b_mat = b.rank() == 2;
  std::size_t m, k, n;
  if (a_mat && b_mat) {
    m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k) fail("matmul shape mismatch");
  } else if (a_mat && b.rank() == 1) {
    m = a.rows(), k = a.cols(), n = 1;
    if (b.numel() != k) fail("matmul shape mismatch");
  } else if (a.rank() == 1 && b_mat) {
    m = 1, k = a.numel(), n = b.cols();
    if (b.rows() != k) fail("matmul shape mismatch");
  } else {
    fail("matmul requires at least one 2-d operand");
  }

  Shape out_shape;
  if (a_mat && b_mat) out_shape = {m, n};
  else if (a_mat) out_shape = {m};
  else out_shape = {n};

  std::vector<double> out(m * n);
  {
    ConstMatMap am(a.value().data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k));
    ConstMatMap bm(b.value().data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n));
    MatMap cm(out.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
    cm.noalias() = am * bm;
  }

  const bool rg = recording_ && (a.requires_grad() || b.requires_grad());
  Tensor c = make_output(std::move(out_shape), std::move(out), rg);
  if (rg) {
    auto ad = a.data(), bd = b.data(), cd = c.data();
    push(cd, [ad, bd, cd, m, k, n] {
      ConstMatMap gm(cd->grad.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
      if (ad->requires_grad) {
        ad->ensure_grad();
        ConstMatMap bm(bd->value.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n));
        MatMap dam(ad->grad.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k));
        dam.noalias() += gm * bm.transpose();
      }
      if (bd->requires_grad) {
        bd->ensure_grad();
        ConstMatMap am(ad->value.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k));
        MatMap dbm(bd->grad.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n));
        dbm.noalias() += am.transpose() * gm;
      }
    });
  }
  return c;
}

Tensor Tape::add(const Tensor& a, const Tensor& b) {
  const bool broadcast = a.rank() == 2 && b.rank() == 1 && b.numel() == a.cols();
  if (!broadcast && a.shape() != b.shape()) fail("add shape mismatch");

  std::vector<double> out(a.value().begin(), a.value().end());
  if (broadcast) {
    const std::size_t n = a.cols();
    for (std::size_t r = 0; r < a.rows(); ++r) {
      for (std::size_t c = 0; c < n; ++c) out[r * n + c] += b.value()[c];
    }
  } else {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  }

  const bool rg = recording_ && (a.requires_grad() || b.requires_grad());
  Tensor c = make_output(a.shape(), std::move(out), rg);
  if (rg) {
    auto ad = a.data(), bd = b.data(), cd = c.data();
    push(cd, [ad, bd, cd, broadcast] {
      if (ad->requires_grad) {
        ad->ensure_grad();
        for (std::size_t i = 0; i < cd->grad.size(); ++i) ad->grad[i] += cd->grad[i];
      }
      if (bd->requires_grad) {
        bd->ensure_grad();
        if (broadcast) {
          const std::size_t n = bd->value.size();
          const std::size_t rows = cd->value.size() / n;
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < n; ++c) bd->grad[c] += cd->grad[r * n + c];
          }
        } else {
          for (std::size_t i = 0; i < cd->grad.size(); ++i) bd->grad[i] += cd->grad[i];
        }
      }
    });
  }
  return c;
}

Tensor Tape::mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) fail("mul shape mismatch");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  const bool rg = recording_ && (a.requires_grad() || b.requires_grad());
  Tensor c = make_output(a.shape(), std::move(out), rg);
  if (rg) {
    auto ad = a.data(), bd = b.data(), cd = c.data();
    push(cd, [ad, bd, cd] {
      if (ad->requires_grad) {
        ad->ensure_grad();
        for (std::size_t i = 0; i < cd->grad.size(); ++i) ad->grad[i] += cd->grad[i] * bd->value[i];
      }
      if (bd->requires_grad) {
        bd->ensure_grad();
        for (std::size_t i = 0; i < cd->grad.size(); ++i) bd->grad[i] += cd->grad[i] * ad->value[i];
      }
    });
  }
  return c;
}

Tensor Tape::scale(const Tensor& a, double factor) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * factor;
  const bool rg = recording_ && a.requires_grad();
  Tensor c = make_output(a.shape(), std::move(out), rg);
  if (rg) {
    auto ad = a.data(), cd = c.data();
    push(cd, [ad, cd, factor] {
      ad->ensure_grad();
      for (std::size_t i = 0; i < cd->grad.size(); ++i) ad->grad[i] += cd->grad[i] * factor;
    });
  }
  return c;
}

Tensor Tape::relu(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] > 0.0 ? a.value()[i] : 0.0;
  const bool rg = recording_ && a.requires_grad();
  Tensor c = make_output(a.shape(), std::move(out), rg);
  if (rg) {
    auto ad = a.data(), cd = c.data();
    push(cd, [ad, cd] {
      ad->ensure_grad();
      for (std::size_t i = 0; i < cd->grad.size(); ++i) {
        if (ad->value[i] > 0.0) ad->grad[i] += cd->grad[i];
      }
    });
  }
  return c;
}

Tensor Tape::softmax(const Tensor& a, std::size_t axis) {
  const Lanes lanes = lanes_for_axis(a.shape(), axis);
  if (lanes.len == 0) fail("softmax over empty axis");

  std::vector<double> out(a.numel());
  for (std::size_t o = 0; o < lanes.outer; ++o) {
    for (std::size_t i = 0; i < lanes.inner; ++i) {
      const std::size_t base = o * lanes.len * lanes.inner + i;
      double mx = a.value()[base];
      for (std::size_t j = 1; j < lanes.len; ++j) {
        mx = std::max(mx, a.value()[base + j * lanes.inner]);
      }
      double sum = 0.0;
      for (std::size_t j = 0; j < lanes.len; ++j) {
        const double e = std::exp(a.value()[base + j * lanes.inner] - mx);
        out[base + j * lanes.inner] = e;
        sum += e;
      }
      for (std::size_t j = 0; j < lanes.len; ++j) out[base + j * lanes.inner] /= sum;
    }
  }

  const bool rg = recording_ && a.requires_grad();
  Tensor c = make_output(a.shape(), std::move(out), rg);
  if (rg) {
    auto ad = a.data(), cd = c.data();
    push(cd, [ad, cd, lanes] {
      ad->ensure_grad();
      for (std::size_t o = 0; o < lanes.outer; ++o) {
        for (std::size_t i = 0; i < lanes.inner; ++i) {
          const std::size_t base = o * lanes.len * lanes.inner + i;
          double dot = 0.0;
          for (std::size_t j = 0; j < lanes.len; ++j) {
            const std::size_t idx = base + j * lanes.inner;
            dot += cd->grad[idx] * cd->value[idx];
          }
          for (std::size_t j = 0; j < lanes.len; ++j) {
            const std::size_t idx = base + j * lanes.inner;
            ad->grad[idx] += cd->value[idx] * (cd->grad[idx] - dot);
          }
        }
      }
    });
  }
  return c;
}

Tensor Tape::layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias,
                        std::size_t axis, double epsilon) {
  const Lanes lanes = lanes_for_axis(a.shape(), axis);
  if (lanes.len == 0) fail("layer_norm over empty axis");
  if (gain.numel() != lanes.len || bias.numel() != lanes.len) {
    fail("layer_norm affine size must equal the normalized extent");
  }

  std::vector<double> out(a.numel());
  auto normalized = std::make_shared<std::vector<double>>(a.numel());
  auto inv_std = std::make_shared<std::vector<double>>(lanes.outer * lanes.inner);
  for (std::size_t o = 0; o < lanes.outer; ++o) {
    for (std::size_t i = 0; i < lanes.inner; ++i) {
      const std::size_t base = o * lanes.len * lanes.inner + i;
      double mu = 0.0;
      for (std::size_t j = 0; j < lanes.len; ++j) mu += a.value()[base + j * lanes.inner];
      mu /= static_cast<double>(lanes.len);
      double var = 0.0;
      for (std::size_t j = 0; j < lanes.len; ++j) {
        const double d = a.value()[base + j * lanes.inner] - mu;
        var += d * d;
      }
      var /= static_cast<double>(lanes.len);
      const double inv = 1.0 / std::sqrt(var + epsilon);
      (*inv_std)[o * lanes.inner + i] = inv;
      for (std::size_t j = 0; j < lanes.len; ++j) {
        const std::size_t idx = base + j * lanes.inner;
        const double xh = (a.value()[idx] - mu) * inv;
        (*normalized)[idx] = xh;
        out[idx] = gain.value()[j] * xh + bias.value()[j];
      }
    }
  }

  const bool rg = recording_ &&
                  (a.requires_grad() || gain.requires_grad() || bias.requires_grad());
  Tensor c = make_output(a.shape(), std::move(out), rg);
  if (rg) {
    auto ad = a.data(), gd = gain.data(), bd = bias.data(), cd = c.data();
    push(cd, [ad, gd, bd, cd, lanes, normalized, inv_std] {
      const double len = static_cast<double>(lanes.len);
      for (std::size_t o = 0; o < lanes.outer; ++o) {
        for (std::size_t i = 0; i < lanes.inner; ++i) {
          const std::size_t base = o * lanes.len * lanes.inner + i;
          const double inv = (*inv_std)[o * lanes.inner + i];
          double sum_dxh = 0.0, sum_dxh_xh = 0.0;
          for (std::size_t j = 0; j < lanes.len; ++j) {
            const std::size_t idx = base + j * lanes.inner;
            const double dxh = cd->grad[idx] * gd->value[j];
            sum_dxh += dxh;
            sum_dxh_xh += dxh * (*normalized)[idx];
          }
          if (ad->requires_grad) {
            ad->ensure_grad();
            for (std::size_t j = 0; j < lanes.len; ++j) {
              const std::size_t idx = base + j * lanes.inner;
              const double dxh = cd->grad[idx] * gd->value[j];
              ad->grad[idx] +=
                  inv / len * (len * dxh - sum_dxh - (*normalized)[idx] * sum_dxh_xh);
            }
          }
          if (gd->requires_grad) {
            gd->ensure_grad();
            for (std::size_t j = 0; j < lanes.len; ++j) {
              const std::size_t idx = base + j * lanes.inner;
              gd->grad[j] += cd->grad[idx] * (*normalized)[idx];
            }
          }
          if (bd->requires_grad) {
            bd->ensure_grad();
            for (std::size_t j = 0; j < lanes.len; ++j) {
              bd->grad[j] += cd->grad[base + j * lanes.inner];
            }
          }
        }
      }
    });
  }
  return c;
}

Tensor Tape::dropout(const Tensor& a, double rate, Rng& rng, bool train) {
  if (rate < 0.0 || rate >= 1.0) fail("dropout rate must be in [0, 1)");
  if (!train || rate == 0.0) return a;  // identity, nothing recorded

  const double keep = 1.0 - rate;
  auto mask = std::make_shared<std::vector<double>>(a.numel());
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double m = rng.uniform() < keep ? 1.0 / keep : 0.0;
    (*mask)[i] = m;
    out[i] = a.value()[i] * m;
  }

  const bool rg = recording_ && a.requires_grad();
  Tensor c = make_output(a.shape(), std::move(out), rg);
  if (rg) {
    auto ad = a.data(), cd = c.data();
    push(cd, [ad, cd, mask] {
      ad->ensure_grad();
      for (std::size_t i = 0; i < cd->grad.size(); ++i) ad->grad[i] += cd->grad[i] * (*mask)[i];
    });
  }
  return c;
}

Tensor Tape::concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) fail("concat of zero tensors");
  if (axis != 0) fail("concat supports axis 0");
  const Shape& first = parts[0].shape();
  std::size_t total_rows = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != first.size()) fail("concat rank mismatch");
    for (std::size_t d = 1; d < first.size(); ++d) {
      if (p.shape()[d] != first[d]) fail("concat trailing shape mismatch");
    }
    total_rows += p.shape()[0];
  }

  Shape out_shape = first;
  out_shape[0] = total_rows;
  std::vector<double> out;
  out.reserve(shape_numel(out_shape));
  bool any_grad = false;
  for (const Tensor& p : parts) {
    out.insert(out.end(), p.value().begin(), p.value().end());
    any_grad = any_grad || p.requires_grad();
  }

  const bool rg = recording_ && any_grad;
  Tensor c = make_output(std::move(out_shape), std::move(out), rg);
  if (rg) {
    std::vector<std::shared_ptr<TensorData>> inputs;
    inputs.reserve(parts.size());
    for (const Tensor& p : parts) inputs.push_back(p.data());
    auto cd = c.data();
    push(cd, [inputs, cd] {
      std::size_t offset = 0;
      for (const auto& in : inputs) {
        if (in->requires_grad) {
          in->ensure_grad();
          for (std::size_t i = 0; i < in->value.size(); ++i) {
            in->grad[i] += cd->grad[offset + i];
          }
        }
        offset += in->value.size();
      }
    });
  }
  return c;
}

Tensor Tape::stack(std::span<const Tensor> parts) {
  if (parts.empty()) fail("stack of zero tensors");
  bool any_grad = false;
  std::vector<double> out(parts.size());
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (parts[i].numel() != 1) fail("stack requires scalar tensors");
    out[i] = parts[i].value()[0];
    any_grad = any_grad || parts[i].requires_grad();
  }

  const bool rg = recording_ && any_grad;
  Tensor c = make_output({parts.size()}, std::move(out), rg);
  if (rg) {
    std::vector<std::shared_ptr<TensorData>> inputs;
    inputs.reserve(parts.size());
    for (const Tensor& p : parts) inputs.push_back(p.data());
    auto cd = c.data();
    push(cd, [inputs, cd] {
      for (std::size_t i = 0; i < inputs.size(); ++i) {
        if (inputs[i]->requires_grad) {
          inputs[i]->ensure_grad();
          inputs[i]->grad[0] += cd->grad[i];
        }
      }
    });
  }
  return c;
}

Tensor Tape::index_select(const Tensor& a, std::span<const std::size_t> indices) {
  if (a.rank() != 1 && a.rank() != 2) fail("index_select requires a 1-d or 2-d tensor");
  const std::size_t rows = a.shape()[0];
  const std::size_t width = a.rank() == 2 ? a.shape()[1] : 1;
  for (std::size_t idx : indices) {
    if (idx >= rows) fail("index_select index out of range");
  }

  Shape out_shape = a.rank() == 2 ? Shape{indices.size(), width} : Shape{indices.size()};
  std::vector<double> out(indices.size() * width);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const double* src = a.value().data() + indices[i] * width;
    std::copy(src, src + width, out.data() + i * width);
  }

  const bool rg = recording_ && a.requires_grad();
  Tensor c = make_output(std::move(out_shape), std::move(out), rg);
  if (rg) {
    auto ad = a.data(), cd = c.data();
    std::vector<std::size_t> idx(indices.begin(), indices.end());
    push(cd, [ad, cd, idx = std::move(idx), width] {
      ad->ensure_grad();
      for (std::size_t i = 0; i < idx.size(); ++i) {
        for (std::size_t j = 0; j < width; ++j) {
          ad->grad[idx[i] * width + j] += cd->grad[i * width + j];
        }
      }
    });
  }
  return c;
}

Tensor Tape::select_row(const Tensor& a, std::size_t row) {
  if (a.rank() != 2) fail("select_row requires a 2-d tensor");
  if (row >= a.rows()) fail("select_row index out of range");
  const std::size_t width = a.cols();
  std::vector<double> out(a.value().begin() + row * width,
                          a.value().begin() + (row + 1) * width);

  const bool rg = recording_ && a.requires_grad();
  Tensor c = make_output({width}, std::move(out), rg);
  if (rg) {
    auto ad = a.data(), cd = c.data();
    push(cd, [ad, cd, row, width] {
      ad->ensure_grad();
      for (std::size_t j = 0; j < width; ++j) ad->grad[row * width + j] += cd->grad[j];
    });
  }
  return c;
}

Tensor Tape::mean(const Tensor& a) {
  if (a.numel() == 0) fail("mean of empty tensor");
  double sum = 0.0;
  for (double v : a.value()) sum += v;
  const double inv = 1.0 / static_cast<double>(a.numel());

  const bool rg = recording_ && a.requires_grad();
  Tensor c = make_output({1}, {sum * inv}, rg);
  if (rg) {
    auto ad = a.data(), cd = c.data();
    push(cd, [ad, cd, inv] {
      ad->ensure_grad();
      for (std::size_t i = 0; i < ad->grad.size(); ++i) ad->grad[i] += cd->grad[0] * inv;
    });
  }
  return c;
}

Tensor Tape::log(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (a.value()[i] <= 0.0) fail("log of non-positive value");
    out[i] = std::log(a.value()[i]);
  }

  const bool rg = recording_ && a.requires_grad();
  Tensor c = make_output(a.shape(), std::move(out), rg);
  if (rg) {
    auto ad = a.data(), cd = c.data();
    push(cd, [ad, cd] {
      ad->ensure_grad();
      for (std::size_t i = 0; i < cd->grad.size(); ++i) ad->grad[i] += cd->grad[i] / ad->value[i];
    });
  }
  return c;
}

Tensor Tape::attention(const Tensor& q, const Tensor& k, const Tensor& v,
                       std::size_t heads, AttentionPattern pattern,
                       const NeighborLists* neighbors) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2) fail("attention requires 2-d tensors");
  const std::size_t n = q.rows();
  const std::size_t m = k.rows();
  const std::size_t d = q.cols();
  if (k.cols() != d || v.cols() != d || v.rows() != m) fail("attention shape mismatch");
  if (heads == 0 || d % heads != 0) fail("attention width must divide into heads");
  if (pattern == AttentionPattern::kCausal && n != m) {
    fail("causal attention requires matching query/key counts");
  }
  if (pattern == AttentionPattern::kNeighbors) {
    if (neighbors == nullptr || neighbors->row_count() != n) {
      fail("neighbor attention requires one key list per query row");
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (neighbors->row(i).empty()) fail("neighbor attention with empty key list");
      for (std::size_t j : neighbors->row(i)) {
        if (j >= m) fail("neighbor index out of range");
      }
    }
  }

  const std::size_t dh = d / heads;
  const double coef = 1.0 / std::sqrt(static_cast<double>(dh));

  // Key indices for query row i.
  std::vector<std::size_t> full_range(m);
  for (std::size_t j = 0; j < m; ++j) full_range[j] = j;
  auto keys_for = [&](std::size_t i) -> std::span<const std::size_t> {
    switch (pattern) {
      case AttentionPattern::kFull:
        return {full_range.data(), m};
      case AttentionPattern::kCausal:
        return {full_range.data(), i + 1};
      case AttentionPattern::kNeighbors:
        return neighbors->row(i);
    }
    return {};
  };

  // Attention weights, laid out per query row, then per head.
  auto weights = std::make_shared<std::vector<double>>();
  auto offsets = std::make_shared<std::vector<std::size_t>>(n + 1, 0);
  {
    std::size_t total = 0;
    for (std::size_t i = 0; i < n; ++i) {
      total += keys_for(i).size() * heads;
      (*offsets)[i + 1] = total;
    }
    weights->resize(total);
  }

  std::vector<double> out(n * d, 0.0);
  std::vector<double> scores;
  for (std::size_t i = 0; i < n; ++i) {
    const auto keys = keys_for(i);
    scores.resize(keys.size());
    for (std::size_t h = 0; h < heads; ++h) {
      const double* qrow = q.value().data() + i * d + h * dh;
      ConstVecMap qmap(qrow, static_cast<Eigen::Index>(dh));
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t s = 0; s < keys.size(); ++s) {
        ConstVecMap kmap(k.value().data() + keys[s] * d + h * dh,
                         static_cast<Eigen::Index>(dh));
        scores[s] = coef * qmap.dot(kmap);
        mx = std::max(mx, scores[s]);
      }
      double sum = 0.0;
      for (double& s : scores) {
        s = std::exp(s - mx);
        sum += s;
      }
      double* alpha = weights->data() + (*offsets)[i] + h * keys.size();
      double* orow = out.data() + i * d + h * dh;
      for (std::size_t s = 0; s < keys.size(); ++s) {
        const double a = scores[s] / sum;
        alpha[s] = a;
        ConstVecMap vmap(v.value().data() + keys[s] * d + h * dh,
                         static_cast<Eigen::Index>(dh));
        VecMap omap(orow, static_cast<Eigen::Index>(dh));
        omap += a * vmap;
      }
    }
  }

  const bool rg =
      recording_ && (q.requires_grad() || k.requires_grad() || v.requires_grad());
  Tensor c = make_output({n, d}, std::move(out), rg);
  if (rg) {
    auto qd = q.data(), kd = k.data(), vd = v.data(), cd = c.data();
    NeighborLists lists_copy;
    if (pattern == AttentionPattern::kNeighbors) lists_copy = *neighbors;
    push(cd, [qd, kd, vd, cd, heads, dh, d, m, n, coef, pattern, weights, offsets,
              lists_copy = std::move(lists_copy)] {
      if (qd->requires_grad) qd->ensure_grad();
      if (kd->requires_grad) kd->ensure_grad();
      if (vd->requires_grad) vd->ensure_grad();
      std::vector<std::size_t> full_range(m);
      for (std::size_t j = 0; j < m; ++j) full_range[j] = j;
      auto keys_for = [&](std::size_t i) -> std::span<const std::size_t> {
        switch (pattern) {
          case AttentionPattern::kFull:
            return {full_range.data(), m};
          case AttentionPattern::kCausal:
            return {full_range.data(), i + 1};
          case AttentionPattern::kNeighbors:
            return lists_copy.row(i);
        }
        return {};
      };
      std::vector<double> dscore;
      for (std::size_t i = 0; i < n; ++i) {
        const auto keys = keys_for(i);
        dscore.resize(keys.size());
        for (std::size_t h = 0; h < heads; ++h) {
          const double* gout = cd->grad.data() + i * d + h * dh;
          ConstVecMap gmap(gout, static_cast<Eigen::Index>(dh));
          const double* alpha = weights->data() + (*offsets)[i] + h * keys.size();
          double weighted = 0.0;
          for (std::size_t s = 0; s < keys.size(); ++s) {
            ConstVecMap vmap(vd->value.data() + keys[s] * d + h * dh,
                             static_cast<Eigen::Index>(dh));
            dscore[s] = gmap.dot(vmap);
            weighted += alpha[s] * dscore[s];
            if (vd->requires_grad) {
              VecMap dvmap(vd->grad.data() + keys[s] * d + h * dh,
                           static_cast<Eigen::Index>(dh));
              dvmap += alpha[s] * gmap;
            }
          }
          ConstVecMap qmap(qd->value.data() + i * d + h * dh,
                           static_cast<Eigen::Index>(dh));
          for (std::size_t s = 0; s < keys.size(); ++s) {
            const double dz = coef * alpha[s] * (dscore[s] - weighted);
            if (qd->requires_grad) {
              ConstVecMap kmap(kd->value.data() + keys[s] * d + h * dh,
                               static_cast<Eigen::Index>(dh));
              VecMap dqmap(qd->grad.data() + i * d + h * dh,
                           static_cast<Eigen::Index>(dh));
              dqmap += dz * kmap;
            }
            if (kd->requires_grad) {
              VecMap dkmap(kd->grad.data() + keys[s] * d + h * dh,
                           static_cast<Eigen::Index>(dh));
              dkmap += dz * qmap;
            }
          }
        }
      }
    });
  }
  return c;
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    fail("backward requires a scalar loss");
  }
  std::size_t start = 0;
  for (std::size_t i = records_.size(); i > 0; --i) {
    if (records_[i - 1].output == loss.data()) {
      start = i;
      break;
    }
  }
  if (start == 0) fail("loss is not a node on this tape (detached graph)");
  loss.data()->ensure_grad();
  loss.data()->grad[0] = 1.0;
  for (std::size_t i = start; i > 0; --i) {
    if (records_[i - 1].output->grad.empty()) continue;
    records_[i - 1].pull();
  }
}

}  // namespace tgnn::ad
