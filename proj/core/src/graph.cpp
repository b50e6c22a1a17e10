#include "glyphcrm/graph.hpp"

#include <algorithm>
#include <cmath>

#include "glyphcrm/parallel.hpp"

namespace glyphcrm {

template <typename T>
const TensorT<T>& VarT<T>::value() const {
    return graph_->node_value(id_);
}

template <typename T>
const TensorT<T>& VarT<T>::grad() const {
    return graph_->node_grad(id_);
}

template <typename T>
VarT<T> GraphT<T>::emit(TensorT<T> value, bool requires_grad, std::function<void()> back) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.back = requires_grad ? std::move(back) : nullptr;
    nodes_.push_back(std::move(n));
    return VarT<T>(this, static_cast<int>(nodes_.size()) - 1);
}

template <typename T>
TensorT<T>& GraphT<T>::grad_buf(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.empty()) n.grad = TensorT<T>(n.value.shape());
    return n.grad;
}

template <typename T>
const TensorT<T>& GraphT<T>::node_grad(int id) {
    return grad_buf(id);
}

template <typename T>
void GraphT<T>::check_same_graph(VarT<T> v) const {
    if (v.graph_ != this) throw Error("variable does not belong to this graph");
}

template <typename T>
VarT<T> GraphT<T>::leaf(TensorT<T> value, std::string name) {
    Node n;
    n.requires_grad = value.requires_grad;
    n.value = std::move(value);
    n.name = std::move(name);
    nodes_.push_back(std::move(n));
    return VarT<T>(this, static_cast<int>(nodes_.size()) - 1);
}

// ---------------------------------------------------------------------------
// elementwise and structural ops
// ---------------------------------------------------------------------------

template <typename T>
VarT<T> GraphT<T>::add(VarT<T> a, VarT<T> b) {
    check_same_graph(a);
    check_same_graph(b);
    const auto& av = a.value();
    const auto& bv = b.value();
    if (!same_shape(av.shape(), bv.shape())) {
        throw ShapeError("add: shapes differ: " + shape_str(av.shape()) + " vs " +
                         shape_str(bv.shape()));
    }
    TensorT<T> out(av.shape());
    const T* pa = av.data();
    const T* pb = bv.data();
    T* po = out.data();
    for (std::size_t i = 0; i < out.size(); ++i) po[i] = pa[i] + pb[i];

    const bool req = needs_grad(a) || needs_grad(b);
    const int aid = a.id(), bid = b.id();
    VarT<T> r = emit(std::move(out), req, nullptr);
    const int rid = r.id();
    if (req) {
        nodes_.back().back = [this, aid, bid, rid] {
            const TensorT<T>& g = nodes_[static_cast<std::size_t>(rid)].grad;
            for (int in : {aid, bid}) {
                if (!nodes_[static_cast<std::size_t>(in)].requires_grad) continue;
                TensorT<T>& gi = grad_buf(in);
                for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
            }
        };
    }
    return r;
}

template <typename T>
VarT<T> GraphT<T>::mul(VarT<T> a, VarT<T> b) {
    check_same_graph(a);
    check_same_graph(b);
    const auto& av = a.value();
    const auto& bv = b.value();
    if (!same_shape(av.shape(), bv.shape())) {
        throw ShapeError("mul: shapes differ: " + shape_str(av.shape()) + " vs " +
                         shape_str(bv.shape()));
    }
    TensorT<T> out(av.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];

    const bool req = needs_grad(a) || needs_grad(b);
    const int aid = a.id(), bid = b.id();
    VarT<T> r = emit(std::move(out), req, nullptr);
    const int rid = r.id();
    if (req) {
        nodes_.back().back = [this, aid, bid, rid] {
            const TensorT<T>& g = nodes_[static_cast<std::size_t>(rid)].grad;
            const TensorT<T>& av2 = nodes_[static_cast<std::size_t>(aid)].value;
            const TensorT<T>& bv2 = nodes_[static_cast<std::size_t>(bid)].value;
            if (nodes_[static_cast<std::size_t>(aid)].requires_grad) {
                TensorT<T>& ga = grad_buf(aid);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv2[i];
            }
            if (nodes_[static_cast<std::size_t>(bid)].requires_grad) {
                TensorT<T>& gb = grad_buf(bid);
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av2[i];
            }
        };
    }
    return r;
}

template <typename T>
VarT<T> GraphT<T>::scale(VarT<T> a, double c) {
    check_same_graph(a);
    const auto& av = a.value();
    TensorT<T> out(av.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(av[i] * c);

    const bool req = needs_grad(a);
    const int aid = a.id();
    VarT<T> r = emit(std::move(out), req, nullptr);
    const int rid = r.id();
    if (req) {
        nodes_.back().back = [this, aid, rid, c] {
            const TensorT<T>& g = nodes_[static_cast<std::size_t>(rid)].grad;
            TensorT<T>& ga = grad_buf(aid);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += static_cast<T>(g[i] * c);
        };
    }
    return r;
}

template <typename T>
VarT<T> GraphT<T>::reshape(VarT<T> a, Shape shape) {
    check_same_graph(a);
    TensorT<T> out = a.value().reshaped(std::move(shape)).clone();
    const bool req = needs_grad(a);
    const int aid = a.id();
    VarT<T> r = emit(std::move(out), req, nullptr);
    const int rid = r.id();
    if (req) {
        nodes_.back().back = [this, aid, rid] {
            const TensorT<T>& g = nodes_[static_cast<std::size_t>(rid)].grad;
            TensorT<T>& ga = grad_buf(aid);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        };
    }
    return r;
}

template <typename T>
VarT<T> GraphT<T>::transpose(VarT<T> a) {
    check_same_graph(a);
    const auto& av = a.value();
    if (av.rank() != 2) throw ShapeError("transpose: expected rank 2, got " + shape_str(av.shape()));
    const std::int64_t m = av.dim(0), n = av.dim(1);
    TensorT<T> out({n, m});
    const T* pa = av.data();
    T* po = out.data();
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j) po[j * m + i] = pa[i * n + j];

    const bool req = needs_grad(a);
    const int aid = a.id();
    VarT<T> r = emit(std::move(out), req, nullptr);
    const int rid = r.id();
    if (req) {
        nodes_.back().back = [this, aid, rid, m, n] {
            const TensorT<T>& g = nodes_[static_cast<std::size_t>(rid)].grad;
            TensorT<T>& ga = grad_buf(aid);
            const T* pg = g.data();
            T* pga = ga.data();
            for (std::int64_t j = 0; j < n; ++j)
                for (std::int64_t i = 0; i < m; ++i) pga[i * n + j] += pg[j * m + i];
        };
    }
    return r;
}

template <typename T>
VarT<T> GraphT<T>::slice_rows(VarT<T> a, std::int64_t row0, std::int64_t count) {
    check_same_graph(a);
    const auto& av = a.value();
    if (av.rank() < 1) throw ShapeError("slice_rows: scalar input");
    const std::int64_t rows = av.dim(0);
    if (row0 < 0 || count <= 0 || row0 + count > rows) {
        throw ShapeError("slice_rows: range [" + std::to_string(row0) + "," +
                         std::to_string(row0 + count) + ") outside " + shape_str(av.shape()));
    }
    const std::size_t rowsz = av.size() / static_cast<std::size_t>(rows);
    Shape oshape = av.shape();
    oshape[0] = count;
    TensorT<T> out(oshape);
    std::copy_n(av.data() + static_cast<std::size_t>(row0) * rowsz,
                static_cast<std::size_t>(count) * rowsz, out.data());

    const bool req = needs_grad(a);
    const int aid = a.id();
    VarT<T> r = emit(std::move(out), req, nullptr);
    const int rid = r.id();
    if (req) {
        nodes_.back().back = [this, aid, rid, row0, count, rowsz] {
            const TensorT<T>& g = nodes_[static_cast<std::size_t>(rid)].grad;
            TensorT<T>& ga = grad_buf(aid);
            T* dst = ga.data() + static_cast<std::size_t>(row0) * rowsz;
            const T* src = g.data();
            for (std::size_t i = 0; i < static_cast<std::size_t>(count) * rowsz; ++i)
                dst[i] += src[i];
        };
    }
    return r;
}

template <typename T>
VarT<T> GraphT<T>::slice_cols(VarT<T> a, std::int64_t col0, std::int64_t count) {
    check_same_graph(a);
    const auto& av = a.value();
    if (av.rank() < 1) throw ShapeError("slice_cols: scalar input");
    const std::int64_t inner = av.dim(av.rank() - 1);
    if (col0 < 0 || count <= 0 || col0 + count > inner) {
        throw ShapeError("slice_cols: range [" + std::to_string(col0) + "," +
                         std::to_string(col0 + count) + ") outside " + shape_str(av.shape()));
    }
    const std::size_t outer = av.size() / static_cast<std::size_t>(inner);
    Shape oshape = av.shape();
    oshape.back() = count;
    TensorT<T> out(oshape);
    for (std::size_t o = 0; o < outer; ++o) {
        std::copy_n(av.data() + o * static_cast<std::size_t>(inner) + static_cast<std::size_t>(col0),
                    static_cast<std::size_t>(count),
                    out.data() + o * static_cast<std::size_t>(count));
    }

    const bool req = needs_grad(a);
    const int aid = a.id();
    VarT<T> r = emit(std::move(out), req, nullptr);
    const int rid = r.id();
    if (req) {
        nodes_.back().back = [this, aid, rid, col0, count, inner, outer] {
            const TensorT<T>& g = nodes_[static_cast<std::size_t>(rid)].grad;
            TensorT<T>& ga = grad_buf(aid);
            for (std::size_t o = 0; o < outer; ++o) {
                T* dst = ga.data() + o * static_cast<std::size_t>(inner) +
                         static_cast<std::size_t>(col0);
                const T* src = g.data() + o * static_cast<std::size_t>(count);
                for (std::int64_t j = 0; j < count; ++j) dst[j] += src[j];
            }
        };
    }
    return r;
}

template <typename T>
VarT<T> GraphT<T>::concat_rows(std::span<const VarT<T>> parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no inputs");
    for (auto p : parts) check_same_graph(p);
    Shape tail = parts[0].value().shape();
    std::int64_t total = 0;
    for (auto p : parts) {
        const auto& s = p.value().shape();
        if (s.size() != tail.size() || !std::equal(s.begin() + 1, s.end(), tail.begin() + 1)) {
            throw ShapeError("concat_rows: incompatible shapes " + shape_str(tail) + " vs " +
                             shape_str(s));
        }
        total += s[0];
    }
    Shape oshape = tail;
    oshape[0] = total;
    TensorT<T> out(oshape);
    std::size_t off = 0;
    std::vector<int> ids;
    std::vector<std::size_t> offsets;
    std::vector<std::size_t> sizes;
    bool req = false;
    for (auto p : parts) {
        const auto& v = p.value();
        std::copy_n(v.data(), v.size(), out.data() + off);
        ids.push_back(p.id());
        offsets.push_back(off);
        sizes.push_back(v.size());
        off += v.size();
        req = req || needs_grad(p);
    }
    VarT<T> r = emit(std::move(out), req, nullptr);
    const int rid = r.id();
    if (req) {
        nodes_.back().back = [this, ids, offsets, sizes, rid] {
            const TensorT<T>& g = nodes_[static_cast<std::size_t>(rid)].grad;
            for (std::size_t k = 0; k < ids.size(); ++k) {
                if (!nodes_[static_cast<std::size_t>(ids[k])].requires_grad) continue;
                TensorT<T>& gi = grad_buf(ids[k]);
                const T* src = g.data() + offsets[k];
                for (std::size_t i = 0; i < sizes[k]; ++i) gi[i] += src[i];
            }
        };
    }
    return r;
}

template <typename T>
VarT<T> GraphT<T>::concat_cols(std::span<const VarT<T>> parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    for (auto p : parts) check_same_graph(p);
    const Shape head = parts[0].value().shape();
    std::int64_t total = 0;
    for (auto p : parts) {
        const auto& s = p.value().shape();
        if (s.size() != head.size() ||
            !std::equal(s.begin(), s.end() - 1, head.begin())) {
            throw ShapeError("concat_cols: incompatible shapes " + shape_str(head) + " vs " +
                             shape_str(s));
        }
        total += s.back();
    }
    Shape oshape = head;
    oshape.back() = total;
    TensorT<T> out(oshape);
    const std::size_t outer = out.size() / static_cast<std::size_t>(total);

    std::vector<int> ids;
    std::vector<std::int64_t> widths;
    std::vector<std::int64_t> starts;
    bool req = false;
    std::int64_t c0 = 0;
    for (auto p : parts) {
        const std::int64_t w = p.value().shape().back();
        ids.push_back(p.id());
        widths.push_back(w);
        starts.push_back(c0);
        for (std::size_t o = 0; o < outer; ++o) {
            std::copy_n(p.value().data() + o * static_cast<std::size_t>(w),
                        static_cast<std::size_t>(w),
                        out.data() + o * static_cast<std::size_t>(total) +
                            static_cast<std::size_t>(c0));
        }
        c0 += w;
        req = req || needs_grad(p);
    }
    VarT<T> r = emit(std::move(out), req, nullptr);
    const int rid = r.id();
    if (req) {
        nodes_.back().back = [this, ids, widths, starts, rid, outer, total] {
            const TensorT<T>& g = nodes_[static_cast<std::size_t>(rid)].grad;
            for (std::size_t k = 0; k < ids.size(); ++k) {
                if (!nodes_[static_cast<std::size_t>(ids[k])].requires_grad) continue;
                TensorT<T>& gi = grad_buf(ids[k]);
                const std::int64_t w = widths[k];
                for (std::size_t o = 0; o < outer; ++o) {
                    const T* src = g.data() + o * static_cast<std::size_t>(total) +
                                   static_cast<std::size_t>(starts[k]);
                    T* dst = gi.data() + o * static_cast<std::size_t>(w);
                    for (std::int64_t j = 0; j < w; ++j) dst[j] += src[j];
                }
            }
        };
    }
    return r;
}

template <typename T>
VarT<T> GraphT<T>::gather_rows(VarT<T> table, std::vector<std::int64_t> rows) {
    check_same_graph(table);
    const auto& tv = table.value();
    if (tv.rank() != 2) throw ShapeError("gather_rows: table must be rank 2, got " + shape_str(tv.shape()));
    const std::int64_t r = tv.dim(0), d = tv.dim(1);
    for (std::int64_t idx : rows) {
        if (idx < 0 || idx >= r) {
            throw ShapeError("gather_rows: index " + std::to_string(idx) + " outside table " +
                             shape_str(tv.shape()));
        }
    }
    const auto n = static_cast<std::int64_t>(rows.size());
    TensorT<T> out({n, d});
    for (std::int64_t i = 0; i < n; ++i) {
        std::copy_n(tv.data() + static_cast<std::size_t>(rows[static_cast<std::size_t>(i)] * d),
                    static_cast<std::size_t>(d), out.data() + static_cast<std::size_t>(i * d));
    }
    const bool req = needs_grad(table);
    const int tid = table.id();
    VarT<T> res = emit(std::move(out), req, nullptr);
    const int rid = res.id();
    if (req) {
        nodes_.back().back = [this, tid, rid, rows = std::move(rows), d] {
            const TensorT<T>& g = nodes_[static_cast<std::size_t>(rid)].grad;
            TensorT<T>& gt = grad_buf(tid);
            for (std::size_t i = 0; i < rows.size(); ++i) {
                T* dst = gt.data() + static_cast<std::size_t>(rows[i] * d);
                const T* src = g.data() + i * static_cast<std::size_t>(d);
                for (std::int64_t j = 0; j < d; ++j) dst[j] += src[j];
            }
        };
    }
    return res;
}

template <typename T>
VarT<T> GraphT<T>::sum(VarT<T> a) {
    check_same_graph(a);
    const auto& av = a.value();
    double acc = 0.0;
    for (std::size_t i = 0; i < av.size(); ++i) acc += static_cast<double>(av[i]);
    TensorT<T> out({1});
    out[0] = static_cast<T>(acc);

    const bool req = needs_grad(a);
    const int aid = a.id();
    VarT<T> r = emit(std::move(out), req, nullptr);
    const int rid = r.id();
    if (req) {
        nodes_.back().back = [this, aid, rid] {
            const T g = nodes_[static_cast<std::size_t>(rid)].grad[0];
            TensorT<T>& ga = grad_buf(aid);
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
        };
    }
    return r;
}

// ---------------------------------------------------------------------------
// dense linear algebra
// ---------------------------------------------------------------------------

namespace {

// Strict-FP mode forbids the compiler from vectorizing a plain reduction
// loop, so dot products carry four explicit f64 lanes. The lane layout is
// fixed, which keeps results bitwise reproducible within a build.
typedef double f64x4 __attribute__((vector_size(32)));

template <typename A, typename B>
double dot_acc64(const A* a, const B* b, std::int64_t n) {
    f64x4 acc0 = {0.0, 0.0, 0.0, 0.0};
    f64x4 acc1 = {0.0, 0.0, 0.0, 0.0};
    std::int64_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const f64x4 va0 = {static_cast<double>(a[i]), static_cast<double>(a[i + 1]),
                           static_cast<double>(a[i + 2]), static_cast<double>(a[i + 3])};
        const f64x4 vb0 = {static_cast<double>(b[i]), static_cast<double>(b[i + 1]),
                           static_cast<double>(b[i + 2]), static_cast<double>(b[i + 3])};
        const f64x4 va1 = {static_cast<double>(a[i + 4]), static_cast<double>(a[i + 5]),
                           static_cast<double>(a[i + 6]), static_cast<double>(a[i + 7])};
        const f64x4 vb1 = {static_cast<double>(b[i + 4]), static_cast<double>(b[i + 5]),
                           static_cast<double>(b[i + 6]), static_cast<double>(b[i + 7])};
        acc0 += va0 * vb0;
        acc1 += va1 * vb1;
    }
    f64x4 acc = acc0 + acc1;
    double s = (acc[0] + acc[2]) + (acc[1] + acc[3]);
    for (; i < n; ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    return s;
}

// C (MxN) = A (MxK) x B (KxN), 64-bit accumulation, parallel over rows.
template <typename T>
void matmul_kernel(const T* a, const T* b, T* c, std::int64_t m, std::int64_t k, std::int64_t n) {
    parallel_for(m, [&](std::int64_t r0, std::int64_t r1) {
        std::vector<double> acc(static_cast<std::size_t>(n));
        for (std::int64_t i = r0; i < r1; ++i) {
            std::fill(acc.begin(), acc.end(), 0.0);
            const T* arow = a + i * k;
            for (std::int64_t p = 0; p < k; ++p) {
                const double av = static_cast<double>(arow[p]);
                const T* brow = b + p * n;
                for (std::int64_t j = 0; j < n; ++j) {
                    acc[static_cast<std::size_t>(j)] += av * static_cast<double>(brow[j]);
                }
            }
            T* crow = c + i * n;
            for (std::int64_t j = 0; j < n; ++j)
                crow[j] = static_cast<T>(acc[static_cast<std::size_t>(j)]);
        }
    });
}

// C += A (MxK) x B^T where B is (NxK): C[i,j] += dot(A[i,:], B[j,:]).
template <typename T>
void matmul_nt_acc_kernel(const T* a, const T* b, T* c, std::int64_t m, std::int64_t k,
                          std::int64_t n) {
    parallel_for(m, [&](std::int64_t r0, std::int64_t r1) {
        for (std::int64_t i = r0; i < r1; ++i) {
            const T* arow = a + i * k;
            T* crow = c + i * n;
            for (std::int64_t j = 0; j < n; ++j) {
                crow[j] += static_cast<T>(dot_acc64(arow, b + j * k, k));
            }
        }
    });
}

// C += A^T (KxM stored MxK) x B (MxN): C[p,j] += sum_i A[i,p] B[i,j]; parallel over p.
template <typename T>
void matmul_tn_acc_kernel(const T* a, const T* b, T* c, std::int64_t m, std::int64_t k,
                          std::int64_t n) {
    parallel_for(k, [&](std::int64_t p0, std::int64_t p1) {
        std::vector<double> acc(static_cast<std::size_t>(n));
        for (std::int64_t p = p0; p < p1; ++p) {
            std::fill(acc.begin(), acc.end(), 0.0);
            for (std::int64_t i = 0; i < m; ++i) {
                const double av = static_cast<double>(a[i * k + p]);
                const T* brow = b + i * n;
                for (std::int64_t j = 0; j < n; ++j)
                    acc[static_cast<std::size_t>(j)] += av * static_cast<double>(brow[j]);
            }
            T* crow = c + p * n;
            for (std::int64_t j = 0; j < n; ++j)
                crow[j] += static_cast<T>(acc[static_cast<std::size_t>(j)]);
        }
    });
}

}  // namespace

template <typename T>
VarT<T> GraphT<T>::matmul(VarT<T> a, VarT<T> b) {
    check_same_graph(a);
    check_same_graph(b);
    const auto& av = a.value();
    const auto& bv = b.value();
    if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
        throw ShapeError("matmul: incompatible shapes " + shape_str(av.shape()) + " and " +
                         shape_str(bv.shape()));
    }
    const std::int64_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
    TensorT<T> out({m, n});
    matmul_kernel(av.data(), bv.data(), out.data(), m, k, n);

    const bool req = needs_grad(a) || needs_grad(b);
    const int aid = a.id(), bid = b.id();
    VarT<T> r = emit(std::move(out), req, nullptr);
    const int rid = r.id();
    if (req) {
        nodes_.back().back = [this, aid, bid, rid, m, k, n] {
            const TensorT<T>& g = nodes_[static_cast<std::size_t>(rid)].grad;
            const TensorT<T>& av2 = nodes_[static_cast<std::size_t>(aid)].value;
            const TensorT<T>& bv2 = nodes_[static_cast<std::size_t>(bid)].value;
            if (nodes_[static_cast<std::size_t>(aid)].requires_grad) {
                // dA = dC x B^T : (MxN) x (NxK with B stored KxN) -> use nt with B rows = K? no:
                // dA[i,p] = sum_j g[i,j] B[p,j]; B stored row-major KxN so B[p,:] is a row.
                matmul_nt_acc_kernel(g.data(), bv2.data(), grad_buf(aid).data(), m, n, k);
            }
            if (nodes_[static_cast<std::size_t>(bid)].requires_grad) {
                // dB[p,j] = sum_i A[i,p] g[i,j]
                matmul_tn_acc_kernel(av2.data(), g.data(), grad_buf(bid).data(), m, k, n);
            }
        };
    }
    return r;
}

template <typename T>
VarT<T> GraphT<T>::linear(VarT<T> x, VarT<T> weight, VarT<T> bias) {
    check_same_graph(x);
    check_same_graph(weight);
    check_same_graph(bias);
    const auto& xv = x.value();
    const auto& wv = weight.value();
    const auto& bv = bias.value();
    if (xv.rank() < 1 || wv.rank() != 2 || bv.rank() != 1 || xv.shape().back() != wv.dim(0) ||
        wv.dim(1) != bv.dim(0)) {
        throw ShapeError("linear: incompatible shapes x=" + shape_str(xv.shape()) +
                         " w=" + shape_str(wv.shape()) + " b=" + shape_str(bv.shape()));
    }
    const std::int64_t din = wv.dim(0), dout = wv.dim(1);
    const auto rows = static_cast<std::int64_t>(xv.size() / static_cast<std::size_t>(din));
    Shape oshape = xv.shape();
    oshape.back() = dout;
    TensorT<T> out(oshape);

    const T* px = xv.data();
    const T* pw = wv.data();
    const T* pb = bv.data();
    T* po = out.data();
    parallel_for(rows, [&](std::int64_t r0, std::int64_t r1) {
        std::vector<double> acc(static_cast<std::size_t>(dout));
        for (std::int64_t i = r0; i < r1; ++i) {
            for (std::int64_t j = 0; j < dout; ++j)
                acc[static_cast<std::size_t>(j)] = static_cast<double>(pb[j]);
            const T* xrow = px + i * din;
            for (std::int64_t p = 0; p < din; ++p) {
                const double xvp = static_cast<double>(xrow[p]);
                const T* wrow = pw + p * dout;
                for (std::int64_t j = 0; j < dout; ++j)
                    acc[static_cast<std::size_t>(j)] += xvp * static_cast<double>(wrow[j]);
            }
            T* orow = po + i * dout;
            for (std::int64_t j = 0; j < dout; ++j)
                orow[j] = static_cast<T>(acc[static_cast<std::size_t>(j)]);
        }
    });

    const bool req = needs_grad(x) || needs_grad(weight) || needs_grad(bias);
    const int xid = x.id(), wid = weight.id(), bid = bias.id();
    VarT<T> r = emit(std::move(out), req, nullptr);
    const int rid = r.id();
    if (req) {
        nodes_.back().back = [this, xid, wid, bid, rid, rows, din, dout] {
            const TensorT<T>& g = nodes_[static_cast<std::size_t>(rid)].grad;
            const TensorT<T>& xv2 = nodes_[static_cast<std::size_t>(xid)].value;
            const TensorT<T>& wv2 = nodes_[static_cast<std::size_t>(wid)].value;
            if (nodes_[static_cast<std::size_t>(xid)].requires_grad) {
                // dx[i,p] = sum_j g[i,j] w[p,j]
                matmul_nt_acc_kernel(g.data(), wv2.data(), grad_buf(xid).data(), rows, dout, din);
            }
            if (nodes_[static_cast<std::size_t>(wid)].requires_grad) {
                // dw[p,j] = sum_i x[i,p] g[i,j]
                matmul_tn_acc_kernel(xv2.data(), g.data(), grad_buf(wid).data(), rows, din, dout);
            }
            if (nodes_[static_cast<std::size_t>(bid)].requires_grad) {
                TensorT<T>& gb = grad_buf(bid);
                std::vector<double> acc(static_cast<std::size_t>(dout), 0.0);
                const T* pg = g.data();
                for (std::int64_t i = 0; i < rows; ++i) {
                    const T* grow = pg + i * dout;
                    for (std::int64_t j = 0; j < dout; ++j)
                        acc[static_cast<std::size_t>(j)] += static_cast<double>(grow[j]);
                }
                for (std::int64_t j = 0; j < dout; ++j) gb[static_cast<std::size_t>(j)] += static_cast<T>(acc[static_cast<std::size_t>(j)]);
            }
        };
    }
    return r;
}

// ---------------------------------------------------------------------------
// convolution and pooling
// ---------------------------------------------------------------------------

template <typename T>
VarT<T> GraphT<T>::conv2d(VarT<T> x, VarT<T> kernel, VarT<T> bias, int stride, int padding) {
    check_same_graph(x);
    check_same_graph(kernel);
    check_same_graph(bias);
    const auto& xv = x.value();
    const auto& kv = kernel.value();
    const auto& bv = bias.value();
    if (xv.rank() != 4 || kv.rank() != 4 || bv.rank() != 1) {
        throw ShapeError("conv2d: expected x rank 4, kernel rank 4, bias rank 1; got x=" +
                         shape_str(xv.shape()) + " k=" + shape_str(kv.shape()) +
                         " b=" + shape_str(bv.shape()));
    }
    if (kv.dim(2) != kv.dim(3) || xv.dim(1) != kv.dim(1) || bv.dim(0) != kv.dim(0)) {
        throw ShapeError("conv2d: incompatible shapes x=" + shape_str(xv.shape()) +
                         " k=" + shape_str(kv.shape()) + " b=" + shape_str(bv.shape()));
    }
    const std::int64_t batch = xv.dim(0), cin = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    const std::int64_t cout = kv.dim(0), ksz = kv.dim(2);
    const std::int64_t s = stride, p = padding;
    if (s < 1 || p < 0 || h + 2 * p < ksz || w + 2 * p < ksz) {
        throw ShapeError("conv2d: kernel " + shape_str(kv.shape()) + " does not fit input " +
                         shape_str(xv.shape()) + " with stride " + std::to_string(stride) +
                         " padding " + std::to_string(padding));
    }
    const std::int64_t oh = (h + 2 * p - ksz) / s + 1;
    const std::int64_t ow = (w + 2 * p - ksz) / s + 1;
    TensorT<T> out({batch, cout, oh, ow});

    const T* px = xv.data();
    const T* pk = kv.data();
    const T* pb = bv.data();
    T* po = out.data();

    // convert the input once so the inner loops run pure f64 FMAs
    std::vector<double> x64(xv.size());
    for (std::size_t i = 0; i < x64.size(); ++i) x64[i] = static_cast<double>(px[i]);
    const double* px64 = x64.data();

    // out-channel pairs share each input-row pass, doubling the work per
    // byte streamed; the accumulator tiles stay cache-resident
    const std::int64_t co_blocks = (cout + 1) / 2;
    parallel_for(batch * co_blocks, [&](std::int64_t j0, std::int64_t j1) {
        std::vector<double> acc0(static_cast<std::size_t>(oh * ow));
        std::vector<double> acc1(static_cast<std::size_t>(oh * ow));
        for (std::int64_t j = j0; j < j1; ++j) {
            const std::int64_t n = j / co_blocks;
            const std::int64_t co = (j % co_blocks) * 2;
            const bool dual = co + 1 < cout;
            std::fill(acc0.begin(), acc0.end(), static_cast<double>(pb[co]));
            if (dual) std::fill(acc1.begin(), acc1.end(), static_cast<double>(pb[co + 1]));
            for (std::int64_t ci = 0; ci < cin; ++ci) {
                const double* xmap = px64 + (n * cin + ci) * h * w;
                const T* kmap0 = pk + (co * cin + ci) * ksz * ksz;
                const T* kmap1 = dual ? pk + ((co + 1) * cin + ci) * ksz * ksz : kmap0;
                for (std::int64_t ih = 0; ih < h; ++ih) {
                    const double* xrow = xmap + ih * w;
                    for (std::int64_t kr = 0; kr < ksz; ++kr) {
                        const std::int64_t rnum = ih + p - kr;
                        if (rnum < 0 || rnum % s != 0) continue;
                        const std::int64_t r = rnum / s;
                        if (r >= oh) continue;
                        double* __restrict__ pa0 = acc0.data() + r * ow;
                        double* __restrict__ pa1 = acc1.data() + r * ow;
                        const T* krow0 = kmap0 + kr * ksz;
                        const T* krow1 = kmap1 + kr * ksz;
                        for (std::int64_t kc = 0; kc < ksz; ++kc) {
                            const double k0 = static_cast<double>(krow0[kc]);
                            const double k1 = dual ? static_cast<double>(krow1[kc]) : 0.0;
                            const std::int64_t base = kc - p;
                            std::int64_t c0 = base < 0 ? (-base + s - 1) / s : 0;
                            std::int64_t c1 = (w - 1 - base) / s + 1;
                            if (c1 > ow) c1 = ow;
                            if (s == 1) {
                                const double* __restrict__ xr = xrow + base;
                                if (dual) {
                                    for (std::int64_t c = c0; c < c1; ++c) {
                                        const double xv2 = xr[c];
                                        pa0[c] += k0 * xv2;
                                        pa1[c] += k1 * xv2;
                                    }
                                } else {
                                    for (std::int64_t c = c0; c < c1; ++c) {
                                        pa0[c] += k0 * xr[c];
                                    }
                                }
                            } else {
                                for (std::int64_t c = c0; c < c1; ++c) {
                                    const double xv2 = xrow[c * s + base];
                                    pa0[c] += k0 * xv2;
                                    if (dual) pa1[c] += k1 * xv2;
                                }
                            }
                        }
                    }
                }
            }
            T* omap0 = po + (n * cout + co) * oh * ow;
            for (std::int64_t i = 0; i < oh * ow; ++i)
                omap0[i] = static_cast<T>(acc0[static_cast<std::size_t>(i)]);
            if (dual) {
                T* omap1 = po + (n * cout + co + 1) * oh * ow;
                for (std::int64_t i = 0; i < oh * ow; ++i)
                    omap1[i] = static_cast<T>(acc1[static_cast<std::size_t>(i)]);
            }
        }
    });

    const bool req = needs_grad(x) || needs_grad(kernel) || needs_grad(bias);
    const int xid = x.id(), kid = kernel.id(), bid = bias.id();
    VarT<T> res = emit(std::move(out), req, nullptr);
    const int rid = res.id();
    if (!req) return res;

    nodes_.back().back = [this, xid, kid, bid, rid, batch, cin, cout, h, w, ksz, s, p, oh, ow] {
        const TensorT<T>& g = nodes_[static_cast<std::size_t>(rid)].grad;
        const TensorT<T>& xv2 = nodes_[static_cast<std::size_t>(xid)].value;
        const TensorT<T>& kv2 = nodes_[static_cast<std::size_t>(kid)].value;
        const T* pg = g.data();
        const T* pk2 = kv2.data();
        std::vector<double> g64(g.size());
        for (std::size_t i = 0; i < g64.size(); ++i) g64[i] = static_cast<double>(pg[i]);
        const double* pg64 = g64.data();
        std::vector<double> x64b(xv2.size());
        for (std::size_t i = 0; i < x64b.size(); ++i) x64b[i] = static_cast<double>(xv2.data()[i]);
        const double* px2 = x64b.data();

        if (nodes_[static_cast<std::size_t>(bid)].requires_grad) {
            TensorT<T>& gb = grad_buf(bid);
            for (std::int64_t co = 0; co < cout; ++co) {
                double acc = 0.0;
                for (std::int64_t n = 0; n < batch; ++n) {
                    const double* gmap = pg64 + ((n * cout + co) * oh) * ow;
                    for (std::int64_t i = 0; i < oh * ow; ++i) acc += gmap[i];
                }
                gb[static_cast<std::size_t>(co)] += static_cast<T>(acc);
            }
        }

        if (nodes_[static_cast<std::size_t>(kid)].requires_grad) {
            TensorT<T>& gk = grad_buf(kid);
            T* pgk = gk.data();
            parallel_for(cout * cin, [&](std::int64_t j0, std::int64_t j1) {
                std::vector<double> acc(static_cast<std::size_t>(ksz));
                for (std::int64_t j = j0; j < j1; ++j) {
                    const std::int64_t co = j / cin;
                    const std::int64_t ci = j % cin;
                    for (std::int64_t kr = 0; kr < ksz; ++kr) {
                        std::fill(acc.begin(), acc.end(), 0.0);
                        double* __restrict__ pa = acc.data();
                        for (std::int64_t n = 0; n < batch; ++n) {
                            for (std::int64_t r = 0; r < oh; ++r) {
                                const std::int64_t ih = r * s - p + kr;
                                if (ih < 0 || ih >= h) continue;
                                const double* __restrict__ grow =
                                    pg64 + ((n * cout + co) * oh + r) * ow;
                                const double* __restrict__ xrow =
                                    px2 + ((n * cin + ci) * h + ih) * w;
                                if (s == 1) {
                                    // c outer, kc inner: acc[kc] += g[c] * x[c + kc - p];
                                    // interior columns need no bounds checks and their
                                    // accumulators live in registers
                                    const std::int64_t lo = std::min<std::int64_t>(p, ow);
                                    const std::int64_t hi = std::max<std::int64_t>(lo, std::min<std::int64_t>(ow, w - ksz + p + 1));
                                    for (std::int64_t c = 0; c < lo; ++c) {
                                        const double gval = grow[c];
                                        const double* xr = xrow + c - p;
                                        for (std::int64_t kc = p - c; kc < ksz; ++kc) pa[kc] += gval * xr[kc];
                                    }
                                    if (ksz == 9) {
                                        f64x4 a0{}, a1{};
                                        double a2 = 0.0;
                                        for (std::int64_t c = lo; c < hi; ++c) {
                                            const double gval = grow[c];
                                            const double* __restrict__ xr = xrow + c - p;
                                            const f64x4 x0 = {xr[0], xr[1], xr[2], xr[3]};
                                            const f64x4 x1 = {xr[4], xr[5], xr[6], xr[7]};
                                            a0 += gval * x0;
                                            a1 += gval * x1;
                                            a2 += gval * xr[8];
                                        }
                                        for (int t = 0; t < 4; ++t) {
                                            pa[t] += a0[t];
                                            pa[4 + t] += a1[t];
                                        }
                                        pa[8] += a2;
                                    } else if (ksz == 3) {
                                        double a0 = 0.0, a1 = 0.0, a2 = 0.0;
                                        for (std::int64_t c = lo; c < hi; ++c) {
                                            const double gval = grow[c];
                                            const double* __restrict__ xr = xrow + c - p;
                                            a0 += gval * xr[0];
                                            a1 += gval * xr[1];
                                            a2 += gval * xr[2];
                                        }
                                        pa[0] += a0;
                                        pa[1] += a1;
                                        pa[2] += a2;
                                    } else {
                                        for (std::int64_t c = lo; c < hi; ++c) {
                                            const double gval = grow[c];
                                            const double* __restrict__ xr = xrow + c - p;
                                            for (std::int64_t kc = 0; kc < ksz; ++kc) pa[kc] += gval * xr[kc];
                                        }
                                    }
                                    for (std::int64_t c = hi; c < ow; ++c) {
                                        const double gval = grow[c];
                                        const double* xr = xrow + c - p;
                                        const std::int64_t k1 = w - c + p;
                                        for (std::int64_t kc = 0; kc < k1; ++kc) pa[kc] += gval * xr[kc];
                                    }
                                } else {
                                    for (std::int64_t kc = 0; kc < ksz; ++kc) {
                                        const std::int64_t base = kc - p;
                                        std::int64_t c0 = base < 0 ? (-base + s - 1) / s : 0;
                                        std::int64_t c1 = (w - 1 - base) / s + 1;
                                        if (c1 > ow) c1 = ow;
                                        double a = 0.0;
                                        for (std::int64_t c = c0; c < c1; ++c) {
                                            a += grow[c] * xrow[c * s + base];
                                        }
                                        pa[kc] += a;
                                    }
                                }
                            }
                        }
                        for (std::int64_t kc = 0; kc < ksz; ++kc) {
                            pgk[((co * cin + ci) * ksz + kr) * ksz + kc] +=
                                static_cast<T>(acc[static_cast<std::size_t>(kc)]);
                        }
                    }
                }
            });
        }

        if (nodes_[static_cast<std::size_t>(xid)].requires_grad) {
            TensorT<T>& gx = grad_buf(xid);
            T* pgx = gx.data();
            const std::int64_t ci_blocks = (cin + 1) / 2;
            parallel_for(batch * ci_blocks, [&](std::int64_t j0, std::int64_t j1) {
                std::vector<double> acc0(static_cast<std::size_t>(h * w));
                std::vector<double> acc1(static_cast<std::size_t>(h * w));
                for (std::int64_t j = j0; j < j1; ++j) {
                    const std::int64_t n = j / ci_blocks;
                    const std::int64_t ci = (j % ci_blocks) * 2;
                    const bool dual = ci + 1 < cin;
                    std::fill(acc0.begin(), acc0.end(), 0.0);
                    if (dual) std::fill(acc1.begin(), acc1.end(), 0.0);
                    for (std::int64_t co = 0; co < cout; ++co) {
                        const double* gmap = pg64 + (n * cout + co) * oh * ow;
                        const T* kmap0 = pk2 + (co * cin + ci) * ksz * ksz;
                        const T* kmap1 = dual ? pk2 + (co * cin + ci + 1) * ksz * ksz : kmap0;
                        for (std::int64_t r = 0; r < oh; ++r) {
                            const double* grow = gmap + r * ow;
                            for (std::int64_t kr = 0; kr < ksz; ++kr) {
                                const std::int64_t ih = r * s - p + kr;
                                if (ih < 0 || ih >= h) continue;
                                double* __restrict__ pa0 = acc0.data() + ih * w;
                                double* __restrict__ pa1 = acc1.data() + ih * w;
                                const T* krow0 = kmap0 + kr * ksz;
                                const T* krow1 = kmap1 + kr * ksz;
                                for (std::int64_t kc = 0; kc < ksz; ++kc) {
                                    const double k0 = static_cast<double>(krow0[kc]);
                                    const double k1 = dual ? static_cast<double>(krow1[kc]) : 0.0;
                                    const std::int64_t base = kc - p;
                                    std::int64_t c0 = base < 0 ? (-base + s - 1) / s : 0;
                                    std::int64_t c1 = (w - 1 - base) / s + 1;
                                    if (c1 > ow) c1 = ow;
                                    if (s == 1) {
                                        double* __restrict__ q0 = pa0 + base;
                                        double* __restrict__ q1 = pa1 + base;
                                        const double* __restrict__ gr = grow;
                                        if (dual) {
                                            for (std::int64_t c = c0; c < c1; ++c) {
                                                const double gv = gr[c];
                                                q0[c] += k0 * gv;
                                                q1[c] += k1 * gv;
                                            }
                                        } else {
                                            for (std::int64_t c = c0; c < c1; ++c) {
                                                q0[c] += k0 * gr[c];
                                            }
                                        }
                                    } else {
                                        for (std::int64_t c = c0; c < c1; ++c) {
                                            const double gv = grow[c];
                                            pa0[c * s + base] += k0 * gv;
                                            if (dual) pa1[c * s + base] += k1 * gv;
                                        }
                                    }
                                }
                            }
                        }
                    }
                    T* xg0 = pgx + (n * cin + ci) * h * w;
                    for (std::int64_t i = 0; i < h * w; ++i)
                        xg0[i] += static_cast<T>(acc0[static_cast<std::size_t>(i)]);
                    if (dual) {
                        T* xg1 = pgx + (n * cin + ci + 1) * h * w;
                        for (std::int64_t i = 0; i < h * w; ++i)
                            xg1[i] += static_cast<T>(acc1[static_cast<std::size_t>(i)]);
                    }
                }
            });
        }
    };
    return res;
}

template <typename T>
VarT<T> GraphT<T>::maxpool2(VarT<T> x) {
    check_same_graph(x);
    const auto& xv = x.value();
    if (xv.rank() != 4) throw ShapeError("maxpool2: expected rank 4, got " + shape_str(xv.shape()));
    const std::int64_t batch = xv.dim(0), ch = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    if (h % 2 != 0 || w % 2 != 0) {
        throw ShapeError("maxpool2: spatial extents must be even, got " + shape_str(xv.shape()));
    }
    const std::int64_t oh = h / 2, ow = w / 2;
    TensorT<T> out({batch, ch, oh, ow});
    auto argmax = std::make_shared<std::vector<std::int64_t>>(out.size());

    const T* px = xv.data();
    T* po = out.data();
    for (std::int64_t m = 0; m < batch * ch; ++m) {
        const T* map = px + m * h * w;
        for (std::int64_t r = 0; r < oh; ++r) {
            for (std::int64_t c = 0; c < ow; ++c) {
                // row-major scan of the window; strict > keeps the first max
                std::int64_t best = (2 * r) * w + 2 * c;
                T bv = map[best];
                const std::int64_t cands[3] = {(2 * r) * w + 2 * c + 1, (2 * r + 1) * w + 2 * c,
                                               (2 * r + 1) * w + 2 * c + 1};
                for (std::int64_t cand : cands) {
                    if (map[cand] > bv) {
                        bv = map[cand];
                        best = cand;
                    }
                }
                const std::size_t oidx = static_cast<std::size_t>((m * oh + r) * ow + c);
                po[oidx] = bv;
                (*argmax)[oidx] = m * h * w + best;
            }
        }
    }

    const bool req = needs_grad(x);
    const int xid = x.id();
    VarT<T> res = emit(std::move(out), req, nullptr);
    const int rid = res.id();
    if (req) {
        nodes_.back().back = [this, xid, rid, argmax] {
            const TensorT<T>& g = nodes_[static_cast<std::size_t>(rid)].grad;
            TensorT<T>& gx = grad_buf(xid);
            for (std::size_t i = 0; i < g.size(); ++i) {
                gx[static_cast<std::size_t>((*argmax)[i])] += g[i];
            }
        };
    }
    return res;
}

template <typename T>
VarT<T> GraphT<T>::relu(VarT<T> x) {
    check_same_graph(x);
    const auto& xv = x.value();
    TensorT<T> out(xv.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > T(0) ? xv[i] : T(0);

    const bool req = needs_grad(x);
    const int xid = x.id();
    VarT<T> r = emit(std::move(out), req, nullptr);
    const int rid = r.id();
    if (req) {
        nodes_.back().back = [this, xid, rid] {
            const TensorT<T>& g = nodes_[static_cast<std::size_t>(rid)].grad;
            const TensorT<T>& xv2 = nodes_[static_cast<std::size_t>(xid)].value;
            TensorT<T>& gx = grad_buf(xid);
            // subgradient at 0 is 0
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (xv2[i] > T(0)) gx[i] += g[i];
            }
        };
    }
    return r;
}

template <typename T>
VarT<T> GraphT<T>::layer_norm(VarT<T> x, VarT<T> gain, VarT<T> shift, double eps) {
    check_same_graph(x);
    check_same_graph(gain);
    check_same_graph(shift);
    const auto& xv = x.value();
    const auto& gv = gain.value();
    const auto& sv = shift.value();
    if (xv.rank() < 1 || gv.rank() != 1 || sv.rank() != 1 || gv.dim(0) != xv.shape().back() ||
        sv.dim(0) != xv.shape().back()) {
        throw ShapeError("layer_norm: incompatible shapes x=" + shape_str(xv.shape()) +
                         " gain=" + shape_str(gv.shape()) + " shift=" + shape_str(sv.shape()));
    }
    const std::int64_t d = xv.shape().back();
    const auto rows = static_cast<std::int64_t>(xv.size() / static_cast<std::size_t>(d));

    TensorT<T> out(xv.shape());
    auto xhat = std::make_shared<TensorT<T>>(xv.shape());
    auto inv = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows));

    const T* px = xv.data();
    const T* pg = gv.data();
    const T* ps = sv.data();
    T* po = out.data();
    T* ph = xhat->data();
    for (std::int64_t i = 0; i < rows; ++i) {
        const T* xrow = px + i * d;
        double mean = 0.0;
        for (std::int64_t j = 0; j < d; ++j) mean += static_cast<double>(xrow[j]);
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::int64_t j = 0; j < d; ++j) {
            const double dv = static_cast<double>(xrow[j]) - mean;
            var += dv * dv;
        }
        var /= static_cast<double>(d);
        const double rstd = 1.0 / std::sqrt(var + eps);
        (*inv)[static_cast<std::size_t>(i)] = rstd;
        for (std::int64_t j = 0; j < d; ++j) {
            const double xh = (static_cast<double>(xrow[j]) - mean) * rstd;
            ph[i * d + j] = static_cast<T>(xh);
            po[i * d + j] = static_cast<T>(xh * static_cast<double>(pg[j]) + static_cast<double>(ps[j]));
        }
    }

    const bool req = needs_grad(x) || needs_grad(gain) || needs_grad(shift);
    const int xid = x.id(), gid = gain.id(), sid = shift.id();
    VarT<T> r = emit(std::move(out), req, nullptr);
    const int rid = r.id();
    if (req) {
        nodes_.back().back = [this, xid, gid, sid, rid, rows, d, xhat, inv] {
            const TensorT<T>& g = nodes_[static_cast<std::size_t>(rid)].grad;
            const TensorT<T>& gv2 = nodes_[static_cast<std::size_t>(gid)].value;
            const T* pgr = g.data();
            const T* pgain = gv2.data();
            const T* ph2 = xhat->data();

            if (nodes_[static_cast<std::size_t>(xid)].requires_grad) {
                TensorT<T>& gx = grad_buf(xid);
                T* pgx = gx.data();
                for (std::int64_t i = 0; i < rows; ++i) {
                    const T* grow = pgr + i * d;
                    const T* hrow = ph2 + i * d;
                    double s1 = 0.0, s2 = 0.0;
                    for (std::int64_t j = 0; j < d; ++j) {
                        const double gg = static_cast<double>(grow[j]) * static_cast<double>(pgain[j]);
                        s1 += gg;
                        s2 += gg * static_cast<double>(hrow[j]);
                    }
                    s1 /= static_cast<double>(d);
                    s2 /= static_cast<double>(d);
                    const double rstd = (*inv)[static_cast<std::size_t>(i)];
                    for (std::int64_t j = 0; j < d; ++j) {
                        const double gg = static_cast<double>(grow[j]) * static_cast<double>(pgain[j]);
                        pgx[i * d + j] += static_cast<T>(rstd * (gg - s1 - static_cast<double>(hrow[j]) * s2));
                    }
                }
            }
            if (nodes_[static_cast<std::size_t>(gid)].requires_grad) {
                TensorT<T>& gg = grad_buf(gid);
                std::vector<double> acc(static_cast<std::size_t>(d), 0.0);
                for (std::int64_t i = 0; i < rows; ++i) {
                    for (std::int64_t j = 0; j < d; ++j) {
                        acc[static_cast<std::size_t>(j)] += static_cast<double>(pgr[i * d + j]) *
                                                            static_cast<double>(ph2[i * d + j]);
                    }
                }
                for (std::int64_t j = 0; j < d; ++j)
                    gg[static_cast<std::size_t>(j)] += static_cast<T>(acc[static_cast<std::size_t>(j)]);
            }
            if (nodes_[static_cast<std::size_t>(sid)].requires_grad) {
                TensorT<T>& gs = grad_buf(sid);
                std::vector<double> acc(static_cast<std::size_t>(d), 0.0);
                for (std::int64_t i = 0; i < rows; ++i)
                    for (std::int64_t j = 0; j < d; ++j)
                        acc[static_cast<std::size_t>(j)] += static_cast<double>(pgr[i * d + j]);
                for (std::int64_t j = 0; j < d; ++j)
                    gs[static_cast<std::size_t>(j)] += static_cast<T>(acc[static_cast<std::size_t>(j)]);
            }
        };
    }
    return r;
}

template <typename T>
VarT<T> GraphT<T>::softmax(VarT<T> x) {
    check_same_graph(x);
    const auto& xv = x.value();
    if (xv.rank() < 1) throw ShapeError("softmax: scalar input");
    const std::int64_t d = xv.shape().back();
    const auto rows = static_cast<std::int64_t>(xv.size() / static_cast<std::size_t>(d));
    TensorT<T> out(xv.shape());

    const T* px = xv.data();
    T* po = out.data();
    for (std::int64_t i = 0; i < rows; ++i) {
        const T* xrow = px + i * d;
        double mx = static_cast<double>(xrow[0]);
        for (std::int64_t j = 1; j < d; ++j) mx = std::max(mx, static_cast<double>(xrow[j]));
        double denom = 0.0;
        for (std::int64_t j = 0; j < d; ++j) denom += std::exp(static_cast<double>(xrow[j]) - mx);
        for (std::int64_t j = 0; j < d; ++j)
            po[i * d + j] = static_cast<T>(std::exp(static_cast<double>(xrow[j]) - mx) / denom);
    }

    const bool req = needs_grad(x);
    const int xid = x.id();
    VarT<T> r = emit(std::move(out), req, nullptr);
    const int rid = r.id();
    if (req) {
        nodes_.back().back = [this, xid, rid, rows, d] {
            const TensorT<T>& g = nodes_[static_cast<std::size_t>(rid)].grad;
            const TensorT<T>& y = nodes_[static_cast<std::size_t>(rid)].value;
            TensorT<T>& gx = grad_buf(xid);
            const T* pgr = g.data();
            const T* py = y.data();
            T* pgx = gx.data();
            for (std::int64_t i = 0; i < rows; ++i) {
                double s = 0.0;
                for (std::int64_t j = 0; j < d; ++j)
                    s += static_cast<double>(py[i * d + j]) * static_cast<double>(pgr[i * d + j]);
                for (std::int64_t j = 0; j < d; ++j) {
                    pgx[i * d + j] += static_cast<T>(static_cast<double>(py[i * d + j]) *
                                                     (static_cast<double>(pgr[i * d + j]) - s));
                }
            }
        };
    }
    return r;
}

template <typename T>
VarT<T> GraphT<T>::cross_entropy(VarT<T> logits, std::vector<std::int64_t> targets,
                                 std::int64_t ignore_id) {
    check_same_graph(logits);
    const auto& lv = logits.value();
    if (lv.rank() != 2) throw ShapeError("cross_entropy: logits must be rank 2, got " + shape_str(lv.shape()));
    const std::int64_t n = lv.dim(0), v = lv.dim(1);
    if (static_cast<std::int64_t>(targets.size()) != n) {
        throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         shape_str(lv.shape()) + " logits");
    }
    for (std::int64_t t : targets) {
        if (t != ignore_id && (t < 0 || t >= v)) {
            throw ShapeError("cross_entropy: target " + std::to_string(t) + " outside [0," +
                             std::to_string(v) + ")");
        }
    }

    auto probs = std::make_shared<TensorT<T>>(lv.shape());
    const T* pl = lv.data();
    T* pp = probs->data();
    double loss = 0.0;
    std::int64_t count = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        const T* row = pl + i * v;
        double mx = static_cast<double>(row[0]);
        for (std::int64_t j = 1; j < v; ++j) mx = std::max(mx, static_cast<double>(row[j]));
        double denom = 0.0;
        for (std::int64_t j = 0; j < v; ++j) denom += std::exp(static_cast<double>(row[j]) - mx);
        for (std::int64_t j = 0; j < v; ++j)
            pp[i * v + j] = static_cast<T>(std::exp(static_cast<double>(row[j]) - mx) / denom);
        const std::int64_t t = targets[static_cast<std::size_t>(i)];
        if (t != ignore_id) {
            loss -= (static_cast<double>(row[t]) - mx - std::log(denom));
            ++count;
        }
    }
    TensorT<T> out({1});
    out[0] = count > 0 ? static_cast<T>(loss / static_cast<double>(count)) : T(0);

    const bool req = needs_grad(logits);
    const int lid = logits.id();
    VarT<T> r = emit(std::move(out), req, nullptr);
    const int rid = r.id();
    if (req) {
        nodes_.back().back = [this, lid, rid, probs, targets = std::move(targets), ignore_id, n, v,
                              count] {
            if (count == 0) return;
            const T gscalar = nodes_[static_cast<std::size_t>(rid)].grad[0];
            TensorT<T>& gl = grad_buf(lid);
            T* pgl = gl.data();
            const T* pp2 = probs->data();
            const double invc = 1.0 / static_cast<double>(count);
            for (std::int64_t i = 0; i < n; ++i) {
                const std::int64_t t = targets[static_cast<std::size_t>(i)];
                if (t == ignore_id) continue;
                for (std::int64_t j = 0; j < v; ++j) {
                    double dv = static_cast<double>(pp2[i * v + j]);
                    if (j == t) dv -= 1.0;
                    pgl[i * v + j] += static_cast<T>(static_cast<double>(gscalar) * dv * invc);
                }
            }
        };
    }
    return r;
}

template <typename T>
void GraphT<T>::backward(VarT<T> root) {
    check_same_graph(root);
    if (backward_done_) throw Error("backward() may run once per graph");
    const Node& rn = nodes_[static_cast<std::size_t>(root.id())];
    if (rn.value.size() != 1) {
        throw ShapeError("backward: root must be scalar, got " + shape_str(rn.value.shape()));
    }
    backward_done_ = true;
    if (!rn.requires_grad) return;
    grad_buf(root.id())[0] = T(1);
    for (int id = root.id(); id >= 0; --id) {
        Node& node = nodes_[static_cast<std::size_t>(id)];
        if (!node.requires_grad || !node.back) continue;
        if (node.grad.empty()) continue;  // no path from the root
        node.back();
    }
}

template class GraphT<float>;
template class GraphT<double>;
template class VarT<float>;
template class VarT<double>;

}  // namespace glyphcrm
