#ifndef FLOWLAB_TENSOR_HPP
#define FLOWLAB_TENSOR_HPP

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <string>
#include <unordered_set>
#include <vector>

#include "flowlab/common.hpp"

namespace flowlab {

// Minimal dense-tensor numerics with reverse-mode autodiff. Values compute at
// f64; the dtype tag controls checkpoint storage width. No broadcasting
// beyond trailing-axis scale/shift.

enum class Dtype : uint8_t { f32 = 0, f64 = 1 };

using Shape = std::vector<int>;

inline size_t numel(const Shape& s) {
    size_t n = 1;
    for (int d : s) n *= static_cast<size_t>(d);
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "(";
    for (size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
    return out + ")";
}

struct TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

struct TensorNode {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    Dtype dtype = Dtype::f64;
    std::vector<NodePtr> parents;
    std::function<void(TensorNode&)> backward_fn;  // scatter grad into parents
    int mark = 0;                                  // topo-sort scratch

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(NodePtr n) : node_(std::move(n)) {}

    static Tensor zeros(const Shape& shape, bool requires_grad = false) {
        return filled(shape, 0.0, requires_grad);
    }

    static Tensor filled(const Shape& shape, double v, bool requires_grad = false) {
        auto n = std::make_shared<TensorNode>();
        n->shape = shape;
        n->value.assign(numel(shape), v);
        n->requires_grad = requires_grad;
        return Tensor(n);
    }

    static Tensor from_values(const Shape& shape, std::vector<double> values, bool requires_grad = false) {
        require(values.size() == numel(shape), "Tensor: element count does not match shape " + shape_str(shape));
        auto n = std::make_shared<TensorNode>();
        n->shape = shape;
        n->value = std::move(values);
        n->requires_grad = requires_grad;
        return Tensor(n);
    }

    static Tensor scalar(double v, bool requires_grad = false) { return from_values({1}, {v}, requires_grad); }

    static Tensor randn(const Shape& shape, Rng& rng, double stddev = 1.0, bool requires_grad = false) {
        auto t = zeros(shape, requires_grad);
        for (double& v : t.values()) v = rng.normal() * stddev;
        return t;
    }

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    size_t size() const { return node_->value.size(); }
    std::vector<double>& values() { return node_->value; }
    const std::vector<double>& values() const { return node_->value; }
    std::vector<double>& grad() { return node_->grad; }
    const std::vector<double>& grad() const { return node_->grad; }
    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool rg) { node_->requires_grad = rg; }
    Dtype dtype() const { return node_->dtype; }
    void set_dtype(Dtype d) { node_->dtype = d; }
    NodePtr node() const { return node_; }

    double item() const {
        require(size() == 1, "item(): tensor is not scalar, shape " + shape_str(shape()));
        return node_->value[0];
    }

    int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
    int ndim() const { return static_cast<int>(node_->shape.size()); }

private:
    NodePtr node_;
};

namespace ad {

inline Tensor make_op(Shape shape, std::vector<NodePtr> parents, std::function<void(TensorNode&)> bwd) {
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->value.assign(numel(n->shape), 0.0);
    bool rg = false;
    for (auto& p : parents) rg = rg || p->requires_grad;
    n->requires_grad = rg;
    n->parents = std::move(parents);
    if (rg) n->backward_fn = std::move(bwd);
    return Tensor(n);
}

inline void check_shape_eq(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape())
        throw ContractViolation(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
}

}  // namespace ad

inline Tensor add(const Tensor& a, const Tensor& b) {
    ad::check_shape_eq(a, b, "add");
    Tensor out = ad::make_op(a.shape(), {a.node(), b.node()}, [](TensorNode& n) {
        for (int k = 0; k < 2; ++k) {
            auto& p = *n.parents[static_cast<size_t>(k)];
            if (!p.requires_grad) continue;
            p.ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i];
        }
    });
    for (size_t i = 0; i < out.size(); ++i) out.values()[i] = a.values()[i] + b.values()[i];
    return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    ad::check_shape_eq(a, b, "sub");
    Tensor out = ad::make_op(a.shape(), {a.node(), b.node()}, [](TensorNode& n) {
        auto& pa = *n.parents[0];
        auto& pb = *n.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) pa.grad[i] += n.grad[i];
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) pb.grad[i] -= n.grad[i];
        }
    });
    for (size_t i = 0; i < out.size(); ++i) out.values()[i] = a.values()[i] - b.values()[i];
    return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    ad::check_shape_eq(a, b, "mul");
    Tensor out = ad::make_op(a.shape(), {a.node(), b.node()}, [](TensorNode& n) {
        auto& pa = *n.parents[0];
        auto& pb = *n.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) pa.grad[i] += n.grad[i] * pb.value[i];
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) pb.grad[i] += n.grad[i] * pa.value[i];
        }
    });
    for (size_t i = 0; i < out.size(); ++i) out.values()[i] = a.values()[i] * b.values()[i];
    return out;
}

inline Tensor scale(const Tensor& a, double c) {
    Tensor out = ad::make_op(a.shape(), {a.node()}, [c](TensorNode& n) {
        auto& p = *n.parents[0];
        p.ensure_grad();
        for (size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += c * n.grad[i];
    });
    for (size_t i = 0; i < out.size(); ++i) out.values()[i] = c * a.values()[i];
    return out;
}

// x: (n, m), bias: (m); add per row.
inline Tensor add_bias(const Tensor& x, const Tensor& bias) {
    require(x.ndim() == 2 && bias.ndim() == 1 && x.dim(1) == bias.dim(0),
            "add_bias: shapes " + shape_str(x.shape()) + " and " + shape_str(bias.shape()));
    int rows = x.dim(0), cols = x.dim(1);
    Tensor out = ad::make_op(x.shape(), {x.node(), bias.node()}, [rows, cols](TensorNode& n) {
        auto& px = *n.parents[0];
        auto& pb = *n.parents[1];
        if (px.requires_grad) {
            px.ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) px.grad[i] += n.grad[i];
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (int r = 0; r < rows; ++r)
                for (int c = 0; c < cols; ++c) pb.grad[static_cast<size_t>(c)] += n.grad[static_cast<size_t>(r * cols + c)];
        }
    });
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c)
            out.values()[static_cast<size_t>(r * cols + c)] =
                x.values()[static_cast<size_t>(r * cols + c)] + bias.values()[static_cast<size_t>(c)];
    return out;
}

// x: (n, m), s: (m); scale columns. Trailing-axis broadcast only.
inline Tensor mul_rowvec(const Tensor& x, const Tensor& s) {
    require(x.ndim() == 2 && s.ndim() == 1 && x.dim(1) == s.dim(0),
            "mul_rowvec: shapes " + shape_str(x.shape()) + " and " + shape_str(s.shape()));
    int rows = x.dim(0), cols = x.dim(1);
    Tensor out = ad::make_op(x.shape(), {x.node(), s.node()}, [rows, cols](TensorNode& n) {
        auto& px = *n.parents[0];
        auto& ps = *n.parents[1];
        if (px.requires_grad) {
            px.ensure_grad();
            for (int r = 0; r < rows; ++r)
                for (int c = 0; c < cols; ++c)
                    px.grad[static_cast<size_t>(r * cols + c)] +=
                        n.grad[static_cast<size_t>(r * cols + c)] * ps.value[static_cast<size_t>(c)];
        }
        if (ps.requires_grad) {
            ps.ensure_grad();
            for (int r = 0; r < rows; ++r)
                for (int c = 0; c < cols; ++c)
                    ps.grad[static_cast<size_t>(c)] +=
                        n.grad[static_cast<size_t>(r * cols + c)] * px.value[static_cast<size_t>(r * cols + c)];
        }
    });
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c)
            out.values()[static_cast<size_t>(r * cols + c)] =
                x.values()[static_cast<size_t>(r * cols + c)] * s.values()[static_cast<size_t>(c)];
    return out;
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    require(a.ndim() == 2 && b.ndim() == 2 && a.dim(1) == b.dim(0),
            "matmul: incompatible shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    int n = a.dim(0), k = a.dim(1), m = b.dim(1);
    Tensor out = ad::make_op({n, m}, {a.node(), b.node()}, [n, k, m](TensorNode& nd) {
        auto& pa = *nd.parents[0];
        auto& pb = *nd.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();  // dA = dC * B^T
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < m; ++j) {
                    double g = nd.grad[static_cast<size_t>(i * m + j)];
                    if (g == 0.0) continue;
                    for (int l = 0; l < k; ++l)
                        pa.grad[static_cast<size_t>(i * k + l)] += g * pb.value[static_cast<size_t>(l * m + j)];
                }
        }
        if (pb.requires_grad) {
            pb.ensure_grad();  // dB = A^T * dC
            for (int i = 0; i < n; ++i)
                for (int l = 0; l < k; ++l) {
                    double av = pa.value[static_cast<size_t>(i * k + l)];
                    if (av == 0.0) continue;
                    for (int j = 0; j < m; ++j)
                        pb.grad[static_cast<size_t>(l * m + j)] += av * nd.grad[static_cast<size_t>(i * m + j)];
                }
        }
    });
    for (int i = 0; i < n; ++i)
        for (int l = 0; l < k; ++l) {
            double av = a.values()[static_cast<size_t>(i * k + l)];
            if (av == 0.0) continue;
            for (int j = 0; j < m; ++j)
                out.values()[static_cast<size_t>(i * m + j)] += av * b.values()[static_cast<size_t>(l * m + j)];
        }
    return out;
}

inline Tensor transpose(const Tensor& a) {
    require(a.ndim() == 2, "transpose: expected rank-2 tensor, got " + shape_str(a.shape()));
    int n = a.dim(0), m = a.dim(1);
    Tensor out = ad::make_op({m, n}, {a.node()}, [n, m](TensorNode& nd) {
        auto& p = *nd.parents[0];
        p.ensure_grad();
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < m; ++j)
                p.grad[static_cast<size_t>(i * m + j)] += nd.grad[static_cast<size_t>(j * n + i)];
    });
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j)
            out.values()[static_cast<size_t>(j * n + i)] = a.values()[static_cast<size_t>(i * m + j)];
    return out;
}

inline Tensor reshape(const Tensor& a, const Shape& shape) {
    require(numel(shape) == a.size(),
            "reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    Tensor out = ad::make_op(shape, {a.node()}, [](TensorNode& nd) {
        auto& p = *nd.parents[0];
        p.ensure_grad();
        for (size_t i = 0; i < nd.grad.size(); ++i) p.grad[i] += nd.grad[i];
    });
    out.values() = a.values();
    return out;
}

// Concatenate rank-2 tensors along axis 0 (token/sequence axis).
inline Tensor concat_rows(const std::vector<Tensor>& parts) {
    require(!parts.empty(), "concat_rows: empty input");
    int cols = parts[0].dim(1);
    int rows = 0;
    std::vector<NodePtr> parents;
    for (auto& p : parts) {
        require(p.ndim() == 2 && p.dim(1) == cols, "concat_rows: column mismatch");
        rows += p.dim(0);
        parents.push_back(p.node());
    }
    std::vector<int> row_counts;
    for (auto& p : parts) row_counts.push_back(p.dim(0));
    Tensor out = ad::make_op({rows, cols}, parents, [row_counts, cols](TensorNode& nd) {
        size_t off = 0;
        for (size_t k = 0; k < nd.parents.size(); ++k) {
            auto& p = *nd.parents[k];
            size_t cnt = static_cast<size_t>(row_counts[k]) * static_cast<size_t>(cols);
            if (p.requires_grad) {
                p.ensure_grad();
                for (size_t i = 0; i < cnt; ++i) p.grad[i] += nd.grad[off + i];
            }
            off += cnt;
        }
    });
    size_t off = 0;
    for (auto& p : parts) {
        std::copy(p.values().begin(), p.values().end(), out.values().begin() + static_cast<long>(off));
        off += p.size();
    }
    return out;
}

// Split rank-2 tensor along axis 0 into pieces of the given row counts.
inline std::vector<Tensor> split_rows(const Tensor& x, const std::vector<int>& row_counts) {
    require(x.ndim() == 2, "split_rows: expected rank-2 tensor");
    int total = 0;
    for (int r : row_counts) total += r;
    require(total == x.dim(0), "split_rows: row counts sum to " + std::to_string(total) + ", tensor has " +
                                   std::to_string(x.dim(0)));
    int cols = x.dim(1);
    std::vector<Tensor> out;
    int start = 0;
    for (int r : row_counts) {
        int s = start;
        Tensor piece = ad::make_op({r, cols}, {x.node()}, [s, cols](TensorNode& nd) {
            auto& p = *nd.parents[0];
            p.ensure_grad();
            size_t off = static_cast<size_t>(s) * static_cast<size_t>(cols);
            for (size_t i = 0; i < nd.grad.size(); ++i) p.grad[off + i] += nd.grad[i];
        });
        size_t off = static_cast<size_t>(s) * static_cast<size_t>(cols);
        std::copy(x.values().begin() + static_cast<long>(off),
                  x.values().begin() + static_cast<long>(off + piece.size()), piece.values().begin());
        out.push_back(piece);
        start += r;
    }
    return out;
}

// Embedding lookup: rows of `table` selected by index, gradient scattered back.
inline Tensor gather_rows(const Tensor& table, const std::vector<int>& indices) {
    require(table.ndim() == 2, "gather_rows: table must be rank-2");
    int rows = table.dim(0), cols = table.dim(1);
    for (int i : indices)
        require(i >= 0 && i < rows, "gather_rows: index " + std::to_string(i) + " out of range [0," +
                                        std::to_string(rows) + ")");
    std::vector<int> idx = indices;
    Tensor out = ad::make_op({static_cast<int>(indices.size()), cols}, {table.node()}, [idx, cols](TensorNode& nd) {
        auto& p = *nd.parents[0];
        p.ensure_grad();
        for (size_t r = 0; r < idx.size(); ++r)
            for (int c = 0; c < cols; ++c)
                p.grad[static_cast<size_t>(idx[r] * cols + c)] += nd.grad[r * static_cast<size_t>(cols) + static_cast<size_t>(c)];
    });
    for (size_t r = 0; r < indices.size(); ++r)
        for (int c = 0; c < cols; ++c)
            out.values()[r * static_cast<size_t>(cols) + static_cast<size_t>(c)] =
                table.values()[static_cast<size_t>(indices[r] * cols + c)];
    return out;
}

// Concatenate rank-2 tensors along axis 1 (feature axis); all inputs share row count.
inline Tensor concat_cols(const std::vector<Tensor>& parts) {
    require(!parts.empty(), "concat_cols: empty input");
    int rows = parts[0].dim(0);
    int cols = 0;
    std::vector<NodePtr> parents;
    std::vector<int> widths;
    for (auto& p : parts) {
        require(p.ndim() == 2 && p.dim(0) == rows, "concat_cols: row mismatch");
        cols += p.dim(1);
        widths.push_back(p.dim(1));
        parents.push_back(p.node());
    }
    Tensor out = ad::make_op({rows, cols}, parents, [rows, cols, widths](TensorNode& nd) {
        int off = 0;
        for (size_t k = 0; k < nd.parents.size(); ++k) {
            auto& p = *nd.parents[k];
            int w = widths[k];
            if (p.requires_grad) {
                p.ensure_grad();
                for (int r = 0; r < rows; ++r)
                    for (int c = 0; c < w; ++c)
                        p.grad[static_cast<size_t>(r * w + c)] += nd.grad[static_cast<size_t>(r * cols + off + c)];
            }
            off += w;
        }
    });
    int off = 0;
    for (auto& p : parts) {
        int w = p.dim(1);
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < w; ++c)
                out.values()[static_cast<size_t>(r * cols + off + c)] = p.values()[static_cast<size_t>(r * w + c)];
        off += w;
    }
    return out;
}

inline Tensor softmax_lastdim(const Tensor& x) {
    require(x.ndim() == 2, "softmax_lastdim: expected rank-2 tensor");
    int rows = x.dim(0), cols = x.dim(1);
    Tensor out = ad::make_op(x.shape(), {x.node()}, [rows, cols](TensorNode& nd) {
        auto& p = *nd.parents[0];
        p.ensure_grad();
        for (int r = 0; r < rows; ++r) {
            size_t off = static_cast<size_t>(r) * static_cast<size_t>(cols);
            double dot = 0.0;
            for (int c = 0; c < cols; ++c) dot += nd.grad[off + static_cast<size_t>(c)] * nd.value[off + static_cast<size_t>(c)];
            for (int c = 0; c < cols; ++c)
                p.grad[off + static_cast<size_t>(c)] +=
                    nd.value[off + static_cast<size_t>(c)] * (nd.grad[off + static_cast<size_t>(c)] - dot);
        }
    });
    for (int r = 0; r < rows; ++r) {
        size_t off = static_cast<size_t>(r) * static_cast<size_t>(cols);
        double mx = -1e300;
        for (int c = 0; c < cols; ++c) mx = std::max(mx, x.values()[off + static_cast<size_t>(c)]);
        double sum = 0.0;
        for (int c = 0; c < cols; ++c) {
            double e = std::exp(x.values()[off + static_cast<size_t>(c)] - mx);
            out.values()[off + static_cast<size_t>(c)] = e;
            sum += e;
        }
        for (int c = 0; c < cols; ++c) out.values()[off + static_cast<size_t>(c)] /= sum;
    }
    return out;
}

inline Tensor silu(const Tensor& x) {
    Tensor out = ad::make_op(x.shape(), {x.node()}, [](TensorNode& nd) {
        auto& p = *nd.parents[0];
        p.ensure_grad();
        for (size_t i = 0; i < nd.grad.size(); ++i) {
            double v = p.value[i];
            double s = 1.0 / (1.0 + std::exp(-v));
            p.grad[i] += nd.grad[i] * s * (1.0 + v * (1.0 - s));
        }
    });
    for (size_t i = 0; i < out.size(); ++i) {
        double v = x.values()[i];
        out.values()[i] = v / (1.0 + std::exp(-v));
    }
    return out;
}

// Per-row layernorm over the last axis, no affine parameters (modulation
// supplies scale/shift outside).
inline Tensor layer_norm_no_affine(const Tensor& x, double eps = 1e-6) {
    require(x.ndim() == 2, "layer_norm: expected rank-2 tensor");
    int rows = x.dim(0), cols = x.dim(1);
    Tensor out = ad::make_op(x.shape(), {x.node()}, [rows, cols, eps](TensorNode& nd) {
        auto& p = *nd.parents[0];
        p.ensure_grad();
        for (int r = 0; r < rows; ++r) {
            size_t off = static_cast<size_t>(r) * static_cast<size_t>(cols);
            double mean = 0.0;
            for (int c = 0; c < cols; ++c) mean += p.value[off + static_cast<size_t>(c)];
            mean /= cols;
            double var = 0.0;
            for (int c = 0; c < cols; ++c) {
                double d = p.value[off + static_cast<size_t>(c)] - mean;
                var += d * d;
            }
            var /= cols;
            double inv = 1.0 / std::sqrt(var + eps);
            double gsum = 0.0, gysum = 0.0;
            for (int c = 0; c < cols; ++c) {
                gsum += nd.grad[off + static_cast<size_t>(c)];
                gysum += nd.grad[off + static_cast<size_t>(c)] * nd.value[off + static_cast<size_t>(c)];
            }
            for (int c = 0; c < cols; ++c) {
                double y = nd.value[off + static_cast<size_t>(c)];
                p.grad[off + static_cast<size_t>(c)] +=
                    inv * (nd.grad[off + static_cast<size_t>(c)] - gsum / cols - y * gysum / cols);
            }
        }
    });
    for (int r = 0; r < rows; ++r) {
        size_t off = static_cast<size_t>(r) * static_cast<size_t>(cols);
        double mean = 0.0;
        for (int c = 0; c < cols; ++c) mean += x.values()[off + static_cast<size_t>(c)];
        mean /= cols;
        double var = 0.0;
        for (int c = 0; c < cols; ++c) {
            double d = x.values()[off + static_cast<size_t>(c)] - mean;
            var += d * d;
        }
        var /= cols;
        double inv = 1.0 / std::sqrt(var + eps);
        for (int c = 0; c < cols; ++c)
            out.values()[off + static_cast<size_t>(c)] = (x.values()[off + static_cast<size_t>(c)] - mean) * inv;
    }
    return out;
}

// Per-row RMS normalization with learnable per-channel scale.
inline Tensor rms_norm_with_scale(const Tensor& x, const Tensor& gain, double eps = 0.0) {
    require(x.ndim() == 2 && gain.ndim() == 1 && x.dim(1) == gain.dim(0),
            "rms_norm: shapes " + shape_str(x.shape()) + " and " + shape_str(gain.shape()));
    int rows = x.dim(0), cols = x.dim(1);
    Tensor out = ad::make_op(x.shape(), {x.node(), gain.node()}, [rows, cols, eps](TensorNode& nd) {
        auto& px = *nd.parents[0];
        auto& pg = *nd.parents[1];
        for (int r = 0; r < rows; ++r) {
            size_t off = static_cast<size_t>(r) * static_cast<size_t>(cols);
            double ms = 0.0;
            for (int c = 0; c < cols; ++c) ms += px.value[off + static_cast<size_t>(c)] * px.value[off + static_cast<size_t>(c)];
            ms = ms / cols + eps;
            double inv = 1.0 / std::sqrt(ms);
            if (pg.requires_grad) {
                pg.ensure_grad();
                for (int c = 0; c < cols; ++c)
                    pg.grad[static_cast<size_t>(c)] +=
                        nd.grad[off + static_cast<size_t>(c)] * px.value[off + static_cast<size_t>(c)] * inv;
            }
            if (px.requires_grad) {
                px.ensure_grad();
                double dot = 0.0;
                for (int c = 0; c < cols; ++c)
                    dot += nd.grad[off + static_cast<size_t>(c)] * pg.value[static_cast<size_t>(c)] *
                           px.value[off + static_cast<size_t>(c)];
                for (int c = 0; c < cols; ++c)
                    px.grad[off + static_cast<size_t>(c)] +=
                        inv * nd.grad[off + static_cast<size_t>(c)] * pg.value[static_cast<size_t>(c)] -
                        px.value[off + static_cast<size_t>(c)] * dot * inv * inv * inv / cols;
            }
        }
    });
    for (int r = 0; r < rows; ++r) {
        size_t off = static_cast<size_t>(r) * static_cast<size_t>(cols);
        double ms = 0.0;
        for (int c = 0; c < cols; ++c) ms += x.values()[off + static_cast<size_t>(c)] * x.values()[off + static_cast<size_t>(c)];
        ms = ms / cols + eps;
        double inv = 1.0 / std::sqrt(ms);
        for (int c = 0; c < cols; ++c)
            out.values()[off + static_cast<size_t>(c)] =
                x.values()[off + static_cast<size_t>(c)] * inv * gain.values()[static_cast<size_t>(c)];
    }
    return out;
}

// Sinusoidal embedding of scalar positions; first half sin, second half cos,
// frequency base 10000. Constant w.r.t. autodiff.
inline Tensor sinusoidal_embed(const std::vector<double>& positions, int dim, double base = 10000.0) {
    require(dim >= 2 && dim % 2 == 0, "sinusoidal_embed: dim must be even and >= 2");
    int n = static_cast<int>(positions.size());
    Tensor out = Tensor::zeros({n, dim});
    int half = dim / 2;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < half; ++j) {
            double freq = std::pow(base, -static_cast<double>(j) / half);
            out.values()[static_cast<size_t>(i * dim + j)] = std::sin(positions[static_cast<size_t>(i)] * freq);
            out.values()[static_cast<size_t>(i * dim + half + j)] = std::cos(positions[static_cast<size_t>(i)] * freq);
        }
    return out;
}

inline Tensor sinusoidal_embed(double position, int dim, double base = 10000.0) {
    return sinusoidal_embed(std::vector<double>{position}, dim, base);
}

inline Tensor sum(const Tensor& x) {
    Tensor out = ad::make_op({1}, {x.node()}, [](TensorNode& nd) {
        auto& p = *nd.parents[0];
        p.ensure_grad();
        for (size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += nd.grad[0];
    });
    out.values()[0] = std::accumulate(x.values().begin(), x.values().end(), 0.0);
    return out;
}

inline Tensor mean(const Tensor& x) {
    double n = static_cast<double>(x.size());
    Tensor out = ad::make_op({1}, {x.node()}, [n](TensorNode& nd) {
        auto& p = *nd.parents[0];
        p.ensure_grad();
        for (size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += nd.grad[0] / n;
    });
    out.values()[0] = std::accumulate(x.values().begin(), x.values().end(), 0.0) / n;
    return out;
}

inline Tensor mse(const Tensor& a, const Tensor& b) {
    ad::check_shape_eq(a, b, "mse");
    double n = static_cast<double>(a.size());
    Tensor out = ad::make_op({1}, {a.node(), b.node()}, [n](TensorNode& nd) {
        auto& pa = *nd.parents[0];
        auto& pb = *nd.parents[1];
        if (pa.requires_grad) pa.ensure_grad();
        if (pb.requires_grad) pb.ensure_grad();
        for (size_t i = 0; i < pa.value.size(); ++i) {
            double d = 2.0 * (pa.value[i] - pb.value[i]) * nd.grad[0] / n;
            if (pa.requires_grad) pa.grad[i] += d;
            if (pb.requires_grad) pb.grad[i] -= d;
        }
    });
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        double d = a.values()[i] - b.values()[i];
        acc += d * d;
    }
    out.values()[0] = acc / n;
    return out;
}

// Reverse-mode sweep from a scalar loss. Fills gradients of every
// requires_grad leaf reachable from the loss; visits each node once.
inline void backward(const Tensor& loss) {
    require(loss.size() == 1, "backward: loss must be scalar, shape " + shape_str(loss.shape()));
    // topological order by iterative DFS
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> seen;
    std::vector<std::pair<TensorNode*, size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            TensorNode* p = node->parents[idx].get();
            ++idx;
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    for (TensorNode* n : order) n->ensure_grad();
    loss.node()->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backward_fn) (*it)->backward_fn(**it);
}

inline void zero_grad(Tensor& t) { t.grad().assign(t.size(), 0.0); }

// Parameter registry with stable, deterministic iteration order.
class ParamStore {
public:
    Tensor& add(const std::string& name, Tensor t) {
        require(!params_.count(name), "ParamStore: duplicate parameter '" + name + "'");
        t.set_requires_grad(true);
        auto [it, ok] = params_.emplace(name, std::move(t));
        (void)ok;
        return it->second;
    }

    Tensor& at(const std::string& name) {
        auto it = params_.find(name);
        require(it != params_.end(), "ParamStore: unknown parameter '" + name + "'");
        return it->second;
    }
    const Tensor& at(const std::string& name) const { return const_cast<ParamStore*>(this)->at(name); }
    bool has(const std::string& name) const { return params_.count(name) > 0; }

    std::map<std::string, Tensor>& all() { return params_; }
    const std::map<std::string, Tensor>& all() const { return params_; }

    size_t total_size() const {
        size_t n = 0;
        for (auto& [k, v] : params_) n += v.size();
        return n;
    }

    void zero_grads() {
        for (auto& [k, v] : params_) v.grad().assign(v.size(), 0.0);
    }

    ParamStore clone() const {
        ParamStore out;
        for (auto& [k, v] : params_) {
            Tensor t = Tensor::from_values(v.shape(), v.values());
            t.set_dtype(v.dtype());
            out.add(k, t);
        }
        return out;
    }

private:
    std::map<std::string, Tensor> params_;
};

// Central-difference gradient verification. `make_loss` must rebuild the
// graph from the current parameter values on every call. For stores with more
// than 64 scalars a random 64-coordinate subset is checked.
inline double finite_diff_check(const std::function<Tensor()>& make_loss, ParamStore& params, double h, Rng& rng) {
    require(h > 0.0, "finite_diff_check: h must be positive");
    params.zero_grads();
    Tensor loss = make_loss();
    if (!std::isfinite(loss.item())) throw NumericalFault("finite_diff_check: loss is not finite");
    backward(loss);

    // flatten coordinates as (name, index)
    std::vector<std::pair<std::string, size_t>> coords;
    for (auto& [name, t] : params.all())
        for (size_t i = 0; i < t.size(); ++i) coords.emplace_back(name, i);

    std::vector<size_t> pick;
    if (coords.size() > 64) {
        std::unordered_set<size_t> chosen;
        while (chosen.size() < 64) chosen.insert(rng.index(coords.size()));
        pick.assign(chosen.begin(), chosen.end());
        std::sort(pick.begin(), pick.end());
    } else {
        pick.resize(coords.size());
        std::iota(pick.begin(), pick.end(), 0);
    }

    double max_rel = 0.0;
    for (size_t ci : pick) {
        auto& [name, idx] = coords[ci];
        Tensor& t = params.at(name);
        double orig = t.values()[idx];
        t.values()[idx] = orig + h;
        double fp = make_loss().item();
        t.values()[idx] = orig - h;
        double fm = make_loss().item();
        t.values()[idx] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm)) throw NumericalFault("finite_diff_check: non-finite evaluation");
        double fd = (fp - fm) / (2.0 * h);
        double an = t.grad()[idx];
        double rel = std::fabs(fd - an) / std::max({std::fabs(fd), std::fabs(an), 1e-8});
        max_rel = std::max(max_rel, rel);
    }
    return max_rel;
}

// ---- checkpoint container ---------------------------------------------------
// Self-describing binary container of named arrays, little-endian:
//   magic "FLCK", u32 version (1), u32 array count, then per array:
//   u32 name length, name bytes, u8 dtype (0=f32, 1=f64), u32 ndim,
//   u32 dims..., raw values (f32 or f64, little-endian).

namespace detail {
template <typename T>
void write_pod(std::ofstream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
T read_pod(std::ifstream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw IoError("checkpoint: truncated file");
    return v;
}
}  // namespace detail

inline void save_checkpoint(const std::string& path, const ParamStore& params) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("checkpoint: cannot open for writing: " + path);
    os.write("FLCK", 4);
    detail::write_pod<uint32_t>(os, 1);
    detail::write_pod<uint32_t>(os, static_cast<uint32_t>(params.all().size()));
    for (auto& [name, t] : params.all()) {
        detail::write_pod<uint32_t>(os, static_cast<uint32_t>(name.size()));
        os.write(name.data(), static_cast<long>(name.size()));
        detail::write_pod<uint8_t>(os, static_cast<uint8_t>(t.dtype()));
        detail::write_pod<uint32_t>(os, static_cast<uint32_t>(t.shape().size()));
        for (int d : t.shape()) detail::write_pod<uint32_t>(os, static_cast<uint32_t>(d));
        if (t.dtype() == Dtype::f64) {
            os.write(reinterpret_cast<const char*>(t.values().data()),
                     static_cast<long>(t.size() * sizeof(double)));
        } else {
            std::vector<float> f(t.values().begin(), t.values().end());
            os.write(reinterpret_cast<const char*>(f.data()), static_cast<long>(f.size() * sizeof(float)));
        }
    }
    if (!os) throw IoError("checkpoint: write failed: " + path);
}

inline ParamStore load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("checkpoint: cannot open: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::strncmp(magic, "FLCK", 4) != 0) throw IoError("checkpoint: bad magic in " + path);
    uint32_t version = detail::read_pod<uint32_t>(is);
    if (version != 1) throw IoError("checkpoint: unsupported format version " + std::to_string(version));
    uint32_t count = detail::read_pod<uint32_t>(is);
    ParamStore params;
    for (uint32_t k = 0; k < count; ++k) {
        uint32_t nl = detail::read_pod<uint32_t>(is);
        std::string name(nl, '\0');
        is.read(name.data(), nl);
        uint8_t dt = detail::read_pod<uint8_t>(is);
        uint32_t nd = detail::read_pod<uint32_t>(is);
        Shape shape(nd);
        for (uint32_t i = 0; i < nd; ++i) shape[i] = static_cast<int>(detail::read_pod<uint32_t>(is));
        size_t n = numel(shape);
        std::vector<double> vals(n);
        if (dt == static_cast<uint8_t>(Dtype::f64)) {
            is.read(reinterpret_cast<char*>(vals.data()), static_cast<long>(n * sizeof(double)));
        } else {
            std::vector<float> f(n);
            is.read(reinterpret_cast<char*>(f.data()), static_cast<long>(n * sizeof(float)));
            std::copy(f.begin(), f.end(), vals.begin());
        }
        if (!is) throw IoError("checkpoint: truncated array data in " + path);
        Tensor t = Tensor::from_values(shape, std::move(vals));
        t.set_dtype(static_cast<Dtype>(dt));
        params.add(name, t);
    }
    return params;
}

}  // namespace flowlab

#endif
