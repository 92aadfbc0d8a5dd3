#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "lcfm/tensor.hpp"

namespace lcfm::ad {

/// Named trainable tensor plus its gradient accumulator.
struct Param {
    std::string name;
    Tensor value;
    Tensor grad;

    Param() = default;
    Param(std::string n, Tensor v) : name(std::move(n)), value(v), grad(Tensor::zeros(v.shape)) {}

    void zero_grad() { grad.fill(0.0); }
};

/// Reverse-mode tape. Ops append nodes in evaluation order; backward() walks
/// the tape in reverse, so creation order doubles as the topological order.
/// Gradients of param leaves are accumulated into the bound Param::grad.
class Tape {
public:
    using Id = std::int32_t;

    Id input(Tensor v) { return make(std::move(v), nullptr); }

    /// Leaf bound to an external Param; repeated calls reuse one node so a
    /// parameter used in several places accumulates a single gradient.
    Id param(Param& p) {
        auto it = param_nodes_.find(&p);
        if (it != param_nodes_.end()) return it->second;
        const Id id = make(p.value, nullptr);
        param_nodes_.emplace(&p, id);
        return id;
    }

    const Tensor& val(Id id) const { return nodes_[id].value; }
    const Tensor& grad(Id id) const { return nodes_[id].grad; }

    // ---- arithmetic ----

    Id add(Id a, Id b) {
        check_same_shape(val(a), val(b), "add");
        Tensor out = val(a);
        out.mat() += val(b).mat();
        return make(std::move(out), [a, b](Tape& t, const Node& n) {
            t.nodes_[a].grad.mat() += n.grad.mat();
            t.nodes_[b].grad.mat() += n.grad.mat();
        });
    }

    Id sub(Id a, Id b) {
        check_same_shape(val(a), val(b), "sub");
        Tensor out = val(a);
        out.mat() -= val(b).mat();
        return make(std::move(out), [a, b](Tape& t, const Node& n) {
            t.nodes_[a].grad.mat() += n.grad.mat();
            t.nodes_[b].grad.mat() -= n.grad.mat();
        });
    }

    Id scale(Id a, double s) {
        Tensor out = val(a);
        for (double& v : out.data) v *= s;
        return make(std::move(out), [a, s](Tape& t, const Node& n) {
            t.nodes_[a].grad.mat() += s * n.grad.mat();
        });
    }

    /// x [n,d] + broadcast row vector b [d].
    Id add_rowvec(Id x, Id b) {
        const Tensor& xv = val(x);
        const Tensor& bv = val(b);
        if (xv.cols() != bv.numel())
            raise(ErrorCode::ShapeMismatch, "add_rowvec: " + xv.shape_str() + " + " + bv.shape_str());
        Tensor out = xv;
        for (std::size_t r = 0; r < out.rows(); ++r)
            for (std::size_t c = 0; c < out.cols(); ++c) out.at(r, c) += bv[c];
        return make(std::move(out), [x, b](Tape& t, const Node& n) {
            t.nodes_[x].grad.mat() += n.grad.mat();
            Tensor& bg = t.nodes_[b].grad;
            for (std::size_t r = 0; r < n.grad.rows(); ++r)
                for (std::size_t c = 0; c < n.grad.cols(); ++c) bg[c] += n.grad.at(r, c);
        });
    }

    // ---- linear algebra ----

    Id matmul(Id a, Id b) {
        Tensor out = lcfm::matmul(val(a), val(b));
        return make(std::move(out), [a, b](Tape& t, const Node& n) {
            // dA += dC B^T ; dB += A^T dC
            t.nodes_[a].grad.mat().noalias() += n.grad.mat() * t.val(b).mat().transpose();
            t.nodes_[b].grad.mat().noalias() += t.val(a).mat().transpose() * n.grad.mat();
        });
    }

    /// c = a @ b^T for b stored [m,k]; the attention score kernel.
    Id matmul_nt(Id a, Id b) {
        Tensor out = lcfm::matmul_nt(val(a), val(b));
        return make(std::move(out), [a, b](Tape& t, const Node& n) {
            t.nodes_[a].grad.mat().noalias() += n.grad.mat() * t.val(b).mat();
            t.nodes_[b].grad.mat().noalias() += n.grad.mat().transpose() * t.val(a).mat();
        });
    }

    /// y = x W + b, the spec's linear contract in one call.
    Id linear(Id x, Id w, Id b) { return add_rowvec(matmul(x, w), b); }

    // ---- nonlinearities ----

    Id relu(Id x) {
        Tensor out = val(x);
        for (double& v : out.data) v = v > 0.0 ? v : 0.0;
        return make(std::move(out), [x](Tape& t, const Node& n) {
            Tensor& xg = t.nodes_[x].grad;
            const Tensor& xv = t.val(x);
            for (std::size_t i = 0; i < xv.numel(); ++i)
                if (xv[i] > 0.0) xg[i] += n.grad[i];
        });
    }

    Id sigmoid(Id x) {
        Tensor out = val(x);
        for (double& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
        return make(std::move(out), [x](Tape& t, const Node& n) {
            Tensor& xg = t.nodes_[x].grad;
            for (std::size_t i = 0; i < n.value.numel(); ++i) {
                const double s = n.value[i];
                xg[i] += n.grad[i] * s * (1.0 - s);
            }
        });
    }

    /// Row-wise softmax with max subtraction.
    Id softmax_rows(Id x) {
        Tensor out = val(x);
        const std::size_t rows = out.rows(), cols = out.cols();
        for (std::size_t r = 0; r < rows; ++r) {
            double mx = out.at(r, 0);
            for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, out.at(r, c));
            double sum = 0.0;
            for (std::size_t c = 0; c < cols; ++c) {
                const double e = std::exp(out.at(r, c) - mx);
                out.at(r, c) = e;
                sum += e;
            }
            for (std::size_t c = 0; c < cols; ++c) out.at(r, c) /= sum;
        }
        return make(std::move(out), [x](Tape& t, const Node& n) {
            // dx = p * (dy - sum(dy * p)) per row
            Tensor& xg = t.nodes_[x].grad;
            const std::size_t rows = n.value.rows(), cols = n.value.cols();
            for (std::size_t r = 0; r < rows; ++r) {
                double inner = 0.0;
                for (std::size_t c = 0; c < cols; ++c) inner += n.grad.at(r, c) * n.value.at(r, c);
                for (std::size_t c = 0; c < cols; ++c)
                    xg.at(r, c) += n.value.at(r, c) * (n.grad.at(r, c) - inner);
            }
        });
    }

    /// Per-last-axis normalisation to zero mean / unit variance, then affine.
    Id layer_norm(Id x, Id gamma, Id beta, double eps = 1e-5) {
        const Tensor& xv = val(x);
        const std::size_t d = xv.cols();
        if (val(gamma).numel() != d || val(beta).numel() != d)
            raise(ErrorCode::ShapeMismatch, "layer_norm: affine params must have length " + std::to_string(d));
        Tensor out = xv;
        for (std::size_t r = 0; r < xv.rows(); ++r) {
            double mean = 0.0;
            for (std::size_t c = 0; c < d; ++c) mean += xv.at(r, c);
            mean /= static_cast<double>(d);
            double var = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                const double dv = xv.at(r, c) - mean;
                var += dv * dv;
            }
            var /= static_cast<double>(d);
            const double inv = 1.0 / std::sqrt(var + eps);
            for (std::size_t c = 0; c < d; ++c)
                out.at(r, c) = (xv.at(r, c) - mean) * inv * val(gamma)[c] + val(beta)[c];
        }
        return make(std::move(out), [x, gamma, beta, eps](Tape& t, const Node& n) {
            const Tensor& xv = t.val(x);
            const Tensor& g = t.val(gamma);
            Tensor& xg = t.nodes_[x].grad;
            Tensor& gg = t.nodes_[gamma].grad;
            Tensor& bg = t.nodes_[beta].grad;
            const std::size_t d = xv.cols();
            for (std::size_t r = 0; r < xv.rows(); ++r) {
                double mean = 0.0;
                for (std::size_t c = 0; c < d; ++c) mean += xv.at(r, c);
                mean /= static_cast<double>(d);
                double var = 0.0;
                for (std::size_t c = 0; c < d; ++c) {
                    const double dv = xv.at(r, c) - mean;
                    var += dv * dv;
                }
                var /= static_cast<double>(d);
                const double inv = 1.0 / std::sqrt(var + eps);
                // dgamma/dbeta plus the two projection terms of dxhat
                double sum_gdy = 0.0, sum_gdy_xhat = 0.0;
                for (std::size_t c = 0; c < d; ++c) {
                    const double xhat = (xv.at(r, c) - mean) * inv;
                    const double dy = n.grad.at(r, c);
                    gg[c] += dy * xhat;
                    bg[c] += dy;
                    sum_gdy += g[c] * dy;
                    sum_gdy_xhat += g[c] * dy * xhat;
                }
                const double invd = 1.0 / static_cast<double>(d);
                for (std::size_t c = 0; c < d; ++c) {
                    const double xhat = (xv.at(r, c) - mean) * inv;
                    xg.at(r, c) += inv * (g[c] * n.grad.at(r, c) - invd * sum_gdy - xhat * invd * sum_gdy_xhat);
                }
            }
        });
    }

    // ---- shape ops ----

    Id slice_cols(Id x, std::size_t c0, std::size_t c1) {
        const Tensor& xv = val(x);
        if (c1 > xv.cols() || c0 >= c1)
            raise(ErrorCode::ShapeMismatch, "slice_cols out of range");
        Tensor out({xv.rows(), c1 - c0});
        for (std::size_t r = 0; r < xv.rows(); ++r)
            for (std::size_t c = c0; c < c1; ++c) out.at(r, c - c0) = xv.at(r, c);
        return make(std::move(out), [x, c0, c1](Tape& t, const Node& n) {
            Tensor& xg = t.nodes_[x].grad;
            for (std::size_t r = 0; r < n.grad.rows(); ++r)
                for (std::size_t c = c0; c < c1; ++c) xg.at(r, c) += n.grad.at(r, c - c0);
        });
    }

    Id concat_cols(const std::vector<Id>& parts) {
        std::size_t rows = val(parts.at(0)).rows(), cols = 0;
        for (Id p : parts) {
            if (val(p).rows() != rows) raise(ErrorCode::ShapeMismatch, "concat_cols: row mismatch");
            cols += val(p).cols();
        }
        Tensor out({rows, cols});
        std::size_t off = 0;
        for (Id p : parts) {
            const Tensor& pv = val(p);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < pv.cols(); ++c) out.at(r, off + c) = pv.at(r, c);
            off += pv.cols();
        }
        std::vector<Id> ps = parts;
        return make(std::move(out), [ps](Tape& t, const Node& n) {
            std::size_t off = 0;
            for (Id p : ps) {
                Tensor& pg = t.nodes_[p].grad;
                for (std::size_t r = 0; r < pg.rows(); ++r)
                    for (std::size_t c = 0; c < pg.cols(); ++c) pg.at(r, c) += n.grad.at(r, off + c);
                off += pg.cols();
            }
        });
    }

    /// Column means: [n,d] -> [d].
    Id mean_rows(Id x) {
        const Tensor& xv = val(x);
        const std::size_t n = xv.rows(), d = xv.cols();
        Tensor out({d});
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < d; ++c) out[c] += xv.at(r, c);
        for (double& v : out.data) v /= static_cast<double>(n);
        return make(std::move(out), [x, n, d](Tape& t, const Node& node) {
            Tensor& xg = t.nodes_[x].grad;
            const double inv = 1.0 / static_cast<double>(n);
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t c = 0; c < d; ++c) xg.at(r, c) += node.grad[c] * inv;
        });
    }

    /// Pass-through inside [lo,hi], zero gradient outside.
    Id clamp(Id x, double lo, double hi) {
        Tensor out = val(x);
        for (double& v : out.data) v = std::min(hi, std::max(lo, v));
        return make(std::move(out), [x, lo, hi](Tape& t, const Node& n) {
            Tensor& xg = t.nodes_[x].grad;
            const Tensor& xv = t.val(x);
            for (std::size_t i = 0; i < xv.numel(); ++i)
                if (xv[i] >= lo && xv[i] <= hi) xg[i] += n.grad[i];
        });
    }

    // ---- VAE / loss ops ----

    /// z = mu + eps * exp(0.5 * logvar); eps is a constant draw.
    Id reparameterize(Id mu, Id logvar, Tensor eps) {
        check_same_shape(val(mu), val(logvar), "reparameterize");
        check_same_shape(val(mu), eps, "reparameterize eps");
        Tensor out = val(mu);
        for (std::size_t i = 0; i < out.numel(); ++i)
            out[i] += eps[i] * std::exp(0.5 * val(logvar)[i]);
        return make(std::move(out), [mu, logvar, eps](Tape& t, const Node& n) {
            Tensor& mg = t.nodes_[mu].grad;
            Tensor& lg = t.nodes_[logvar].grad;
            const Tensor& lv = t.val(logvar);
            for (std::size_t i = 0; i < n.grad.numel(); ++i) {
                mg[i] += n.grad[i];
                lg[i] += n.grad[i] * eps[i] * 0.5 * std::exp(0.5 * lv[i]);
            }
        });
    }

    /// Mean squared error over every element.
    Id mse(Id pred, Tensor target) {
        check_same_shape(val(pred), target, "mse");
        const std::size_t n = target.numel();
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = val(pred)[i] - target[i];
            acc += d * d;
        }
        Tensor out({1});
        out[0] = acc / static_cast<double>(n);
        return make(std::move(out), [pred, target, n](Tape& t, const Node& node) {
            Tensor& pg = t.nodes_[pred].grad;
            const Tensor& pv = t.val(pred);
            const double w = node.grad[0] * 2.0 / static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) pg[i] += w * (pv[i] - target[i]);
        });
    }

    /// MSE restricted to an index subset (flat indices).
    Id mse_indices(Id pred, Tensor target, std::vector<std::size_t> indices) {
        check_same_shape(val(pred), target, "mse_indices");
        if (indices.empty()) raise(ErrorCode::EmptyMask, "mse over empty index set");
        double acc = 0.0;
        for (std::size_t i : indices) {
            const double d = val(pred)[i] - target[i];
            acc += d * d;
        }
        Tensor out({1});
        out[0] = acc / static_cast<double>(indices.size());
        return make(std::move(out), [pred, target, indices](Tape& t, const Node& node) {
            Tensor& pg = t.nodes_[pred].grad;
            const Tensor& pv = t.val(pred);
            const double w = node.grad[0] * 2.0 / static_cast<double>(indices.size());
            for (std::size_t i : indices) pg[i] += w * (pv[i] - target[i]);
        });
    }

    /// KL(q(z|x) || N(0,I)) = -1/2 sum_j (1 + logvar_j - mu_j^2 - exp(logvar_j)).
    Id kl_std_normal(Id mu, Id logvar) {
        check_same_shape(val(mu), val(logvar), "kl_std_normal");
        double acc = 0.0;
        for (std::size_t i = 0; i < val(mu).numel(); ++i) {
            const double m = val(mu)[i], lv = val(logvar)[i];
            acc += 1.0 + lv - m * m - std::exp(lv);
        }
        Tensor out({1});
        out[0] = -0.5 * acc;
        return make(std::move(out), [mu, logvar](Tape& t, const Node& n) {
            Tensor& mg = t.nodes_[mu].grad;
            Tensor& lg = t.nodes_[logvar].grad;
            const Tensor& mv = t.val(mu);
            const Tensor& lv = t.val(logvar);
            for (std::size_t i = 0; i < mv.numel(); ++i) {
                mg[i] += n.grad[0] * mv[i];
                lg[i] += n.grad[0] * (-0.5) * (1.0 - std::exp(lv[i]));
            }
        });
    }

    /// Binary cross-entropy over probabilities, clamped to [1e-12, 1-1e-12].
    Id bce(Id probs, Tensor targets) {
        check_same_shape(val(probs), targets, "bce");
        constexpr double kLo = 1e-12, kHi = 1.0 - 1e-12;
        const std::size_t m = targets.numel();
        double acc = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            const double p = std::min(kHi, std::max(kLo, val(probs)[i]));
            acc += targets[i] * std::log(p) + (1.0 - targets[i]) * std::log(1.0 - p);
        }
        Tensor out({1});
        out[0] = -acc / static_cast<double>(m);
        return make(std::move(out), [probs, targets, m](Tape& t, const Node& node) {
            Tensor& pg = t.nodes_[probs].grad;
            const Tensor& pv = t.val(probs);
            for (std::size_t i = 0; i < m; ++i) {
                if (pv[i] <= 1e-12 || pv[i] >= 1.0 - 1e-12) continue;  // clamped: flat
                const double y = targets[i];
                pg[i] += node.grad[0] / static_cast<double>(m) * ((1.0 - y) / (1.0 - pv[i]) - y / pv[i]);
            }
        });
    }

    /// Mean over rows of -log(probs[row, label]); probs rows are simplex vectors.
    Id nll_categorical(Id probs, std::vector<std::size_t> labels) {
        const Tensor& pv = val(probs);
        if (labels.size() != pv.rows())
            raise(ErrorCode::ShapeMismatch, "nll_categorical: one label per row required");
        constexpr double kLo = 1e-12;
        double acc = 0.0;
        for (std::size_t r = 0; r < pv.rows(); ++r)
            acc += -std::log(std::max(kLo, pv.at(r, labels[r])));
        Tensor out({1});
        out[0] = acc / static_cast<double>(pv.rows());
        return make(std::move(out), [probs, labels](Tape& t, const Node& node) {
            Tensor& pg = t.nodes_[probs].grad;
            const Tensor& pv = t.val(probs);
            const double inv_m = 1.0 / static_cast<double>(pv.rows());
            for (std::size_t r = 0; r < pv.rows(); ++r) {
                const double p = pv.at(r, labels[r]);
                if (p <= 1e-12) continue;
                pg.at(r, labels[r]) += node.grad[0] * inv_m * (-1.0 / p);
            }
        });
    }

    /// scalar = sum(x * w) elementwise; projects any tensor to a scalar.
    Id reduce_weighted(Id x, Tensor w) {
        check_same_shape(val(x), w, "reduce_weighted");
        Tensor out({1});
        for (std::size_t i = 0; i < w.numel(); ++i) out[0] += val(x)[i] * w[i];
        return make(std::move(out), [x, w](Tape& t, const Node& n) {
            Tensor& xg = t.nodes_[x].grad;
            for (std::size_t i = 0; i < w.numel(); ++i) xg[i] += n.grad[0] * w[i];
        });
    }

    /// Weighted sum of scalar nodes; combines loss terms.
    Id weighted_sum(const std::vector<Id>& terms, const std::vector<double>& weights) {
        if (terms.size() != weights.size())
            raise(ErrorCode::ShapeMismatch, "weighted_sum: terms/weights length mismatch");
        Tensor out({1});
        for (std::size_t i = 0; i < terms.size(); ++i) out[0] += weights[i] * val(terms[i])[0];
        std::vector<Id> ts = terms;
        std::vector<double> ws = weights;
        return make(std::move(out), [ts, ws](Tape& t, const Node& n) {
            for (std::size_t i = 0; i < ts.size(); ++i) t.nodes_[ts[i]].grad[0] += ws[i] * n.grad[0];
        });
    }

    // ---- differentiation ----

    /// Seeds d(root)/d(root) = 1 and sweeps the tape in reverse. Param leaves
    /// deposit their accumulated gradient into the bound Param::grad, so one
    /// tape per sample with shared Params implements batch accumulation.
    /// With accumulate_params = false the gradients stay on the tape; workers
    /// running tapes in parallel use this and merge via merge_param_grads in
    /// a deterministic order.
    void backward(Id root, bool accumulate_params = true) {
        if (val(root).numel() != 1)
            raise(ErrorCode::ShapeMismatch, "backward: root must be scalar");
        nodes_[root].grad[0] = 1.0;
        for (Id id = static_cast<Id>(nodes_.size()) - 1; id >= 0; --id) {
            Node& n = nodes_[id];
            if (n.back) n.back(*this, n);
        }
        if (accumulate_params) merge_param_grads();
    }

    void merge_param_grads() {
        for (auto& [p, id] : param_nodes_)
            p->grad.mat() += nodes_[id].grad.mat();
    }

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        std::function<void(Tape&, const Node&)> back;  // null for leaves
    };

    Id make(Tensor value, std::function<void(Tape&, const Node&)> back) {
        Node n;
        n.grad = Tensor::zeros(value.shape);
        n.value = std::move(value);
        n.back = std::move(back);
        nodes_.push_back(std::move(n));
        return static_cast<Id>(nodes_.size()) - 1;
    }

    std::vector<Node> nodes_;
    std::unordered_map<Param*, Id> param_nodes_;
};

/// softmax(Q K^T / sqrt(d)) V on tape; the single-head attention contract.
inline Tape::Id attention(Tape& t, Tape::Id q, Tape::Id k, Tape::Id v) {
    const std::size_t d = t.val(q).cols();
    if (t.val(k).cols() != d)
        raise(ErrorCode::ShapeMismatch, "attention: query/key dim mismatch");
    if (t.val(k).rows() != t.val(v).rows())
        raise(ErrorCode::ShapeMismatch, "attention: key/value row mismatch");
    Tape::Id scores = t.scale(t.matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(d)));
    return t.matmul(t.softmax_rows(scores), v);
}

/// Plain-value attention for callers outside a tape (oracles, quick checks).
inline Tensor attention_value(const Tensor& q, const Tensor& k, const Tensor& v) {
    Tape t;
    return t.val(attention(t, t.input(q), t.input(k), t.input(v)));
}

}  // namespace lcfm::ad
