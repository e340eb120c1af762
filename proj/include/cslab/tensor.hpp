#pragma once

// Minimal dense tensor with tape-based reverse-mode differentiation.
// Doubles everywhere, row-major, no broadcasting beyond scalars and the
// explicit row-vector bias add. Single-threaded per tape.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "cslab/errors.hpp"

namespace cslab {

struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad; // empty until first accumulation

    Tensor() = default;
    Tensor(std::vector<int> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        if (numel(shape) != static_cast<std::int64_t>(data.size()))
            throw dimension_error("shape/data length mismatch");
    }

    static std::int64_t numel(const std::vector<int>& s) {
        std::int64_t n = 1;
        for (int d : s) n *= d;
        return n;
    }

    static Tensor zeros(std::vector<int> s) {
        auto n = numel(s);
        return Tensor(std::move(s), std::vector<double>(static_cast<std::size_t>(n), 0.0));
    }

    static Tensor full(std::vector<int> s, double v) {
        auto n = numel(s);
        return Tensor(std::move(s), std::vector<double>(static_cast<std::size_t>(n), v));
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    static Tensor row_major(int rows, int cols, std::vector<double> d) {
        return Tensor({rows, cols}, std::move(d));
    }

    std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    int rows() const { return shape.at(0); }
    int cols() const { return shape.at(1); }

    double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols() + c]; }
    double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols() + c]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
    void zero_grad() { grad.assign(data.size(), 0.0); }

    std::string shape_str() const {
        std::ostringstream os;
        os << "[";
        for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
        os << "]";
        return os.str();
    }
};

inline double sign0(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// Recorded computation. Node indices are topologically ordered by
// construction; backward walks the list in reverse once.
class Tape {
  public:
    using ValueId = int;

    // Constant leaf: no gradient flows out of the tape for it.
    ValueId constant(Tensor t) {
        t.requires_grad = false;
        return push(std::move(t), {}, nullptr, nullptr);
    }

    // Differentiable leaf bound to an external tensor; backward() adds
    // into ext.grad (accumulating across calls until ext.zero_grad()).
    ValueId param(Tensor& ext) {
        Tensor copy = ext;
        copy.requires_grad = true;
        return push(std::move(copy), {}, nullptr, &ext);
    }

    const Tensor& value(ValueId id) const { return nodes_[static_cast<std::size_t>(id)].value; }
    const std::vector<double>& grad_of(ValueId id) const {
        return nodes_[static_cast<std::size_t>(id)].grad;
    }
    std::size_t num_nodes() const { return nodes_.size(); }

    ValueId matmul(ValueId a, ValueId b) {
        const Tensor& A = value(a);
        const Tensor& B = value(b);
        if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.rows())
            throw dimension_error("matmul " + A.shape_str() + " x " + B.shape_str());
        int m = A.rows(), k = A.cols(), n = B.cols();
        Tensor C = Tensor::zeros({m, n});
        for (int i = 0; i < m; ++i)
            for (int p = 0; p < k; ++p) {
                double av = A.at(i, p);
                for (int j = 0; j < n; ++j) C.at(i, j) += av * B.at(p, j);
            }
        return push(std::move(C), {a, b}, [m, k, n](Tape& t, Node& node) {
            const Tensor& A = t.value(node.parents[0]);
            const Tensor& B = t.value(node.parents[1]);
            auto& dA = t.grad_buf(node.parents[0]);
            auto& dB = t.grad_buf(node.parents[1]);
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) {
                    double g = node.grad[static_cast<std::size_t>(i) * n + j];
                    if (g == 0.0) continue;
                    for (int p = 0; p < k; ++p) {
                        dA[static_cast<std::size_t>(i) * k + p] += g * B.at(p, j);
                        dB[static_cast<std::size_t>(p) * n + j] += g * A.at(i, p);
                    }
                }
        });
    }

    ValueId transpose(ValueId a) {
        const Tensor& A = value(a);
        if (A.rank() != 2) throw dimension_error("transpose expects rank 2");
        int m = A.rows(), n = A.cols();
        Tensor T = Tensor::zeros({n, m});
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) T.at(j, i) = A.at(i, j);
        return push(std::move(T), {a}, [m, n](Tape& t, Node& node) {
            auto& dA = t.grad_buf(node.parents[0]);
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j)
                    dA[static_cast<std::size_t>(i) * n + j] += node.grad[static_cast<std::size_t>(j) * m + i];
        });
    }

    ValueId add(ValueId a, ValueId b) { return binary(a, b, "add", [](double x, double y) { return x + y; }, 1.0, 1.0); }
    ValueId sub(ValueId a, ValueId b) { return binary(a, b, "sub", [](double x, double y) { return x - y; }, 1.0, -1.0); }

    ValueId mul(ValueId a, ValueId b) {
        const Tensor& A = value(a);
        const Tensor& B = value(b);
        if (!A.same_shape(B)) throw dimension_error("mul shapes " + A.shape_str() + " vs " + B.shape_str());
        Tensor C = A;
        for (std::size_t i = 0; i < C.data.size(); ++i) C.data[i] *= B.data[i];
        return push(std::move(C), {a, b}, [](Tape& t, Node& node) {
            const Tensor& A = t.value(node.parents[0]);
            const Tensor& B = t.value(node.parents[1]);
            auto& dA = t.grad_buf(node.parents[0]);
            auto& dB = t.grad_buf(node.parents[1]);
            for (std::size_t i = 0; i < node.grad.size(); ++i) {
                dA[i] += node.grad[i] * B.data[i];
                dB[i] += node.grad[i] * A.data[i];
            }
        });
    }

    ValueId scale(ValueId a, double c) {
        Tensor C = value(a);
        for (double& v : C.data) v *= c;
        return push(std::move(C), {a}, [c](Tape& t, Node& node) {
            auto& dA = t.grad_buf(node.parents[0]);
            for (std::size_t i = 0; i < node.grad.size(); ++i) dA[i] += c * node.grad[i];
        });
    }

    ValueId add_scalar(ValueId a, double c) {
        Tensor C = value(a);
        for (double& v : C.data) v += c;
        return push(std::move(C), {a}, [](Tape& t, Node& node) {
            auto& dA = t.grad_buf(node.parents[0]);
            for (std::size_t i = 0; i < node.grad.size(); ++i) dA[i] += node.grad[i];
        });
    }

    ValueId neg(ValueId a) { return scale(a, -1.0); }

    ValueId exp(ValueId a) {
        Tensor C = value(a);
        for (double& v : C.data) v = std::exp(v);
        return push(std::move(C), {a}, [](Tape& t, Node& node) {
            auto& dA = t.grad_buf(node.parents[0]);
            for (std::size_t i = 0; i < node.grad.size(); ++i)
                dA[i] += node.grad[i] * node.value.data[i];
        });
    }

    ValueId log(ValueId a) {
        Tensor C = value(a);
        for (double& v : C.data) {
            if (v <= 0.0) throw domain_error("log of non-positive value");
            v = std::log(v);
        }
        return push(std::move(C), {a}, [](Tape& t, Node& node) {
            const Tensor& A = t.value(node.parents[0]);
            auto& dA = t.grad_buf(node.parents[0]);
            for (std::size_t i = 0; i < node.grad.size(); ++i)
                dA[i] += node.grad[i] / A.data[i];
        });
    }

    // Subgradient at exactly 0 is 0.
    ValueId relu(ValueId a) {
        Tensor C = value(a);
        for (double& v : C.data) v = v > 0.0 ? v : 0.0;
        return push(std::move(C), {a}, [](Tape& t, Node& node) {
            const Tensor& A = t.value(node.parents[0]);
            auto& dA = t.grad_buf(node.parents[0]);
            for (std::size_t i = 0; i < node.grad.size(); ++i)
                if (A.data[i] > 0.0) dA[i] += node.grad[i];
        });
    }

    ValueId sum(ValueId a) {
        const Tensor& A = value(a);
        double s = std::accumulate(A.data.begin(), A.data.end(), 0.0);
        return push(Tensor::scalar(s), {a}, [](Tape& t, Node& node) {
            auto& dA = t.grad_buf(node.parents[0]);
            for (double& g : dA) g += node.grad[0];
        });
    }

    ValueId mean(ValueId a) {
        const Tensor& A = value(a);
        auto n = static_cast<double>(A.size());
        return scale(sum(a), 1.0 / n);
    }

    // axis 0: reduce rows -> [cols]; axis 1: reduce cols -> [rows].
    ValueId sum_axis(ValueId a, int axis) {
        const Tensor& A = value(a);
        if (A.rank() != 2) throw dimension_error("sum_axis expects rank 2");
        if (axis != 0 && axis != 1) throw dimension_error("axis out of range");
        int m = A.rows(), n = A.cols();
        Tensor C = axis == 0 ? Tensor::zeros({n}) : Tensor::zeros({m});
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) C.data[static_cast<std::size_t>(axis == 0 ? j : i)] += A.at(i, j);
        return push(std::move(C), {a}, [m, n, axis](Tape& t, Node& node) {
            auto& dA = t.grad_buf(node.parents[0]);
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j)
                    dA[static_cast<std::size_t>(i) * n + j] += node.grad[static_cast<std::size_t>(axis == 0 ? j : i)];
        });
    }

    ValueId mean_axis(ValueId a, int axis) {
        const Tensor& A = value(a);
        if (A.rank() != 2) throw dimension_error("mean_axis expects rank 2");
        double denom = axis == 0 ? A.rows() : A.cols();
        return scale(sum_axis(a, axis), 1.0 / denom);
    }

    // matrix [n x d] + row vector [d], broadcast over rows (bias add).
    ValueId add_rowvec(ValueId a, ValueId v) {
        const Tensor& A = value(a);
        const Tensor& V = value(v);
        if (A.rank() != 2 || V.rank() != 1 || V.shape[0] != A.cols())
            throw dimension_error("add_rowvec " + A.shape_str() + " + " + V.shape_str());
        int m = A.rows(), n = A.cols();
        Tensor C = A;
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) C.at(i, j) += V.data[static_cast<std::size_t>(j)];
        return push(std::move(C), {a, v}, [m, n](Tape& t, Node& node) {
            auto& dA = t.grad_buf(node.parents[0]);
            auto& dV = t.grad_buf(node.parents[1]);
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) {
                    double g = node.grad[static_cast<std::size_t>(i) * n + j];
                    dA[static_cast<std::size_t>(i) * n + j] += g;
                    dV[static_cast<std::size_t>(j)] += g;
                }
        });
    }

    ValueId vstack(ValueId a, ValueId b) {
        const Tensor& A = value(a);
        const Tensor& B = value(b);
        if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.cols())
            throw dimension_error("vstack " + A.shape_str() + " / " + B.shape_str());
        Tensor C = Tensor::zeros({A.rows() + B.rows(), A.cols()});
        std::copy(A.data.begin(), A.data.end(), C.data.begin());
        std::copy(B.data.begin(), B.data.end(), C.data.begin() + A.size());
        auto na = A.data.size();
        return push(std::move(C), {a, b}, [na](Tape& t, Node& node) {
            auto& dA = t.grad_buf(node.parents[0]);
            auto& dB = t.grad_buf(node.parents[1]);
            for (std::size_t i = 0; i < na; ++i) dA[i] += node.grad[i];
            for (std::size_t i = 0; i < dB.size(); ++i) dB[i] += node.grad[na + i];
        });
    }

    // Row-wise x / ||x||_2 with the quotient-rule backward.
    ValueId l2_normalize(ValueId a) {
        const Tensor& A = value(a);
        if (A.rank() != 2) throw dimension_error("l2_normalize expects rank 2");
        int m = A.rows(), n = A.cols();
        Tensor C = A;
        std::vector<double> norms(static_cast<std::size_t>(m));
        for (int i = 0; i < m; ++i) {
            double s = 0.0;
            for (int j = 0; j < n; ++j) s += A.at(i, j) * A.at(i, j);
            double nr = std::sqrt(s);
            if (nr <= 1e-12) throw domain_error("l2_normalize: near-zero row " + std::to_string(i));
            norms[static_cast<std::size_t>(i)] = nr;
            for (int j = 0; j < n; ++j) C.at(i, j) /= nr;
        }
        return push(std::move(C), {a}, [m, n, norms](Tape& t, Node& node) {
            auto& dA = t.grad_buf(node.parents[0]);
            for (int i = 0; i < m; ++i) {
                double dot = 0.0;
                for (int j = 0; j < n; ++j) {
                    std::size_t k = static_cast<std::size_t>(i) * n + j;
                    dot += node.value.data[k] * node.grad[k];
                }
                double inv = 1.0 / norms[static_cast<std::size_t>(i)];
                for (int j = 0; j < n; ++j) {
                    std::size_t k = static_cast<std::size_t>(i) * n + j;
                    dA[k] += (node.grad[k] - node.value.data[k] * dot) * inv;
                }
            }
        });
    }

    // conv2d: x [n,c,h,w], weight [oc,c,kh,kw], bias [oc]; stride 1,
    // zero padding (kh-1)/2 so spatial size is preserved for odd kernels.
    ValueId conv2d(ValueId x, ValueId w, ValueId b) {
        const Tensor& X = value(x);
        const Tensor& W = value(w);
        const Tensor& B = value(b);
        if (X.rank() != 4 || W.rank() != 4) throw dimension_error("conv2d expects rank-4 input/weight");
        int n = X.shape[0], c = X.shape[1], h = X.shape[2], wd = X.shape[3];
        int oc = W.shape[0], kh = W.shape[2], kw = W.shape[3];
        if (W.shape[1] != c) throw dimension_error("conv2d channel mismatch");
        if (B.rank() != 1 || B.shape[0] != oc) throw dimension_error("conv2d bias shape");
        int ph = (kh - 1) / 2, pw = (kw - 1) / 2;
        Tensor Y = Tensor::zeros({n, oc, h, wd});
        auto xat = [&](int ni, int ci, int yi, int xi) -> double {
            if (yi < 0 || yi >= h || xi < 0 || xi >= wd) return 0.0;
            return X.data[((static_cast<std::size_t>(ni) * c + ci) * h + yi) * wd + xi];
        };
        for (int ni = 0; ni < n; ++ni)
            for (int oi = 0; oi < oc; ++oi)
                for (int yi = 0; yi < h; ++yi)
                    for (int xi = 0; xi < wd; ++xi) {
                        double s = B.data[static_cast<std::size_t>(oi)];
                        for (int ci = 0; ci < c; ++ci)
                            for (int ky = 0; ky < kh; ++ky)
                                for (int kx = 0; kx < kw; ++kx)
                                    s += W.data[((static_cast<std::size_t>(oi) * c + ci) * kh + ky) * kw + kx] *
                                         xat(ni, ci, yi + ky - ph, xi + kx - pw);
                        Y.data[((static_cast<std::size_t>(ni) * oc + oi) * h + yi) * wd + xi] = s;
                    }
        return push(std::move(Y), {x, w, b}, [n, c, h, wd, oc, kh, kw, ph, pw](Tape& t, Node& node) {
            const Tensor& X = t.value(node.parents[0]);
            const Tensor& W = t.value(node.parents[1]);
            auto& dX = t.grad_buf(node.parents[0]);
            auto& dW = t.grad_buf(node.parents[1]);
            auto& dB = t.grad_buf(node.parents[2]);
            for (int ni = 0; ni < n; ++ni)
                for (int oi = 0; oi < oc; ++oi)
                    for (int yi = 0; yi < h; ++yi)
                        for (int xi = 0; xi < wd; ++xi) {
                            double g = node.grad[((static_cast<std::size_t>(ni) * oc + oi) * h + yi) * wd + xi];
                            if (g == 0.0) continue;
                            dB[static_cast<std::size_t>(oi)] += g;
                            for (int ci = 0; ci < c; ++ci)
                                for (int ky = 0; ky < kh; ++ky)
                                    for (int kx = 0; kx < kw; ++kx) {
                                        int sy = yi + ky - ph, sx = xi + kx - pw;
                                        if (sy < 0 || sy >= h || sx < 0 || sx >= wd) continue;
                                        std::size_t wi = ((static_cast<std::size_t>(oi) * c + ci) * kh + ky) * kw + kx;
                                        std::size_t pi = ((static_cast<std::size_t>(ni) * c + ci) * h + sy) * wd + sx;
                                        dW[wi] += g * X.data[pi];
                                        dX[pi] += g * W.data[wi];
                                    }
                        }
        });
    }

    // 2x2 average pooling, stride 2; odd trailing rows/cols are dropped.
    ValueId avgpool2(ValueId x) {
        const Tensor& X = value(x);
        if (X.rank() != 4) throw dimension_error("avgpool2 expects rank 4");
        int n = X.shape[0], c = X.shape[1], h = X.shape[2], w = X.shape[3];
        int oh = h / 2, ow = w / 2;
        Tensor Y = Tensor::zeros({n, c, oh, ow});
        for (int ni = 0; ni < n; ++ni)
            for (int ci = 0; ci < c; ++ci)
                for (int yi = 0; yi < oh; ++yi)
                    for (int xi = 0; xi < ow; ++xi) {
                        double s = 0.0;
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dx = 0; dx < 2; ++dx)
                                s += X.data[((static_cast<std::size_t>(ni) * c + ci) * h + 2 * yi + dy) * w + 2 * xi + dx];
                        Y.data[((static_cast<std::size_t>(ni) * c + ci) * oh + yi) * ow + xi] = s * 0.25;
                    }
        return push(std::move(Y), {x}, [n, c, h, w, oh, ow](Tape& t, Node& node) {
            auto& dX = t.grad_buf(node.parents[0]);
            for (int ni = 0; ni < n; ++ni)
                for (int ci = 0; ci < c; ++ci)
                    for (int yi = 0; yi < oh; ++yi)
                        for (int xi = 0; xi < ow; ++xi) {
                            double g = 0.25 * node.grad[((static_cast<std::size_t>(ni) * c + ci) * oh + yi) * ow + xi];
                            for (int dy = 0; dy < 2; ++dy)
                                for (int dx = 0; dx < 2; ++dx)
                                    dX[((static_cast<std::size_t>(ni) * c + ci) * h + 2 * yi + dy) * w + 2 * xi + dx] += g;
                        }
        });
    }

    ValueId reshape(ValueId a, std::vector<int> shape) {
        const Tensor& A = value(a);
        if (Tensor::numel(shape) != A.size()) throw dimension_error("reshape element count mismatch");
        Tensor C(std::move(shape), A.data);
        return push(std::move(C), {a}, [](Tape& t, Node& node) {
            auto& dA = t.grad_buf(node.parents[0]);
            for (std::size_t i = 0; i < node.grad.size(); ++i) dA[i] += node.grad[i];
        });
    }

    // Seeds d(loss)/d(loss)=1 and walks the tape once in reverse.
    // External parameter tensors accumulate into their .grad buffers.
    void backward(ValueId loss) {
        const Tensor& L = value(loss);
        if (L.size() != 1) throw contract_error("backward requires a scalar loss, got " + L.shape_str());
        if (nodes_.empty()) throw contract_error("backward on empty tape");
        for (auto& n : nodes_) n.grad.assign(n.value.data.size(), 0.0);
        nodes_[static_cast<std::size_t>(loss)].grad[0] = 1.0;
        for (int i = loss; i >= 0; --i) {
            Node& n = nodes_[static_cast<std::size_t>(i)];
            if (n.back) n.back(*this, n);
            if (n.external) {
                n.external->ensure_grad();
                for (std::size_t k = 0; k < n.grad.size(); ++k) n.external->grad[k] += n.grad[k];
            }
        }
    }

  private:
    struct Node {
        Tensor value;
        std::vector<double> grad;
        std::vector<ValueId> parents;
        std::function<void(Tape&, Node&)> back;
        Tensor* external = nullptr;
    };

    std::vector<double>& grad_buf(ValueId id) { return nodes_[static_cast<std::size_t>(id)].grad; }

    ValueId push(Tensor value, std::vector<ValueId> parents,
                 std::function<void(Tape&, Node&)> back, Tensor* external = nullptr) {
        Node n;
        n.value = std::move(value);
        n.parents = std::move(parents);
        n.back = std::move(back);
        n.external = external;
        nodes_.push_back(std::move(n));
        return static_cast<ValueId>(nodes_.size()) - 1;
    }

    template <typename F>
    ValueId binary(ValueId a, ValueId b, const char* name, F f, double da, double db) {
        const Tensor& A = value(a);
        const Tensor& B = value(b);
        if (!A.same_shape(B))
            throw dimension_error(std::string(name) + " shapes " + A.shape_str() + " vs " + B.shape_str());
        Tensor C = A;
        for (std::size_t i = 0; i < C.data.size(); ++i) C.data[i] = f(A.data[i], B.data[i]);
        return push(std::move(C), {a, b}, [da, db](Tape& t, Node& node) {
            auto& dA = t.grad_buf(node.parents[0]);
            auto& dB = t.grad_buf(node.parents[1]);
            for (std::size_t i = 0; i < node.grad.size(); ++i) {
                dA[i] += da * node.grad[i];
                dB[i] += db * node.grad[i];
            }
        });
    }

    std::vector<Node> nodes_;
};

using ValueId = Tape::ValueId;

} // namespace cslab
