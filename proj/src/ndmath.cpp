#include "dcsgd/ndmath.hpp"

#include <cmath>

namespace dcsgd {

namespace {

std::size_t shape_size(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

double stable_sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double stable_softplus(double x) {
    return std::max(x, 0.0) + std::log1p(std::exp(-std::fabs(x)));
}

}  // namespace

ParamEntry& ParameterStore::add(const std::string& name,
                                std::vector<std::size_t> shape) {
    if (entries_.count(name) > 0) {
        throw std::invalid_argument("parameter already exists: " + name);
    }
    if (shape.empty() || shape.size() > 2) {
        throw ShapeError("parameter " + name + " must be a vector or matrix");
    }
    for (std::size_t d : shape) {
        if (d == 0) throw ShapeError("parameter " + name + " has a zero dimension");
    }
    ParamEntry entry;
    const std::size_t n = shape_size(shape);
    entry.shape = std::move(shape);
    entry.value.assign(n, 0.0);
    entry.grad.assign(n, 0.0);
    return entries_.emplace(name, std::move(entry)).first->second;
}

ParamEntry& ParameterStore::at(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::invalid_argument("no such parameter: " + name);
    return it->second;
}

const ParamEntry& ParameterStore::at(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::invalid_argument("no such parameter: " + name);
    return it->second;
}

void ParameterStore::zero_grad() {
    for (auto& [name, entry] : entries_) {
        std::fill(entry.grad.begin(), entry.grad.end(), 0.0);
    }
}

Var Tape::emplace(std::vector<double> value) {
    Node node;
    node.value = std::move(value);
    node.grad.assign(node.value.size(), 0.0);
    nodes_.push_back(std::move(node));
    return Var{nodes_.size() - 1};
}

Var Tape::constant(std::vector<double> value) { return emplace(std::move(value)); }

Var Tape::scalar(double value) { return emplace({value}); }

Var Tape::param(ParameterStore& store, const std::string& name) {
    ParamEntry& entry = store.at(name);
    auto it = param_nodes_.find(&entry);
    if (it != param_nodes_.end()) return Var{it->second};
    Var v = emplace(entry.value);
    nodes_[v.id].bound = &entry;
    nodes_[v.id].pull = [id = v.id](Tape& t) {
        Node& node = t.nodes_[id];
        for (std::size_t i = 0; i < node.grad.size(); ++i) {
            node.bound->grad[i] += node.grad[i];
        }
    };
    param_nodes_.emplace(&entry, v.id);
    return v;
}

double Tape::scalar_value(Var v) const {
    const auto& val = value(v);
    if (val.size() != 1) throw ShapeError("expected a scalar node");
    return val[0];
}

void Tape::check_same_size(Var a, Var b, const char* op) const {
    if (nodes_[a.id].value.size() != nodes_[b.id].value.size()) {
        throw ShapeError(std::string(op) + ": size mismatch (" +
                         std::to_string(nodes_[a.id].value.size()) + " vs " +
                         std::to_string(nodes_[b.id].value.size()) + ")");
    }
}

Var Tape::add(Var a, Var b) {
    check_same_size(a, b, "add");
    std::vector<double> out = nodes_[a.id].value;
    const auto& bv = nodes_[b.id].value;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    Var v = emplace(std::move(out));
    nodes_[v.id].pull = [id = v.id, a, b](Tape& t) {
        const auto& g = t.nodes_[id].grad;
        auto& ga = t.nodes_[a.id].grad;
        auto& gb = t.nodes_[b.id].grad;
        for (std::size_t i = 0; i < g.size(); ++i) {
            ga[i] += g[i];
            gb[i] += g[i];
        }
    };
    return v;
}

Var Tape::sub(Var a, Var b) {
    check_same_size(a, b, "sub");
    std::vector<double> out = nodes_[a.id].value;
    const auto& bv = nodes_[b.id].value;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
    Var v = emplace(std::move(out));
    nodes_[v.id].pull = [id = v.id, a, b](Tape& t) {
        const auto& g = t.nodes_[id].grad;
        auto& ga = t.nodes_[a.id].grad;
        auto& gb = t.nodes_[b.id].grad;
        for (std::size_t i = 0; i < g.size(); ++i) {
            ga[i] += g[i];
            gb[i] -= g[i];
        }
    };
    return v;
}

Var Tape::mul(Var a, Var b) {
    check_same_size(a, b, "mul");
    const auto& av = nodes_[a.id].value;
    const auto& bv = nodes_[b.id].value;
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    Var v = emplace(std::move(out));
    nodes_[v.id].pull = [id = v.id, a, b](Tape& t) {
        const auto& g = t.nodes_[id].grad;
        const auto& av = t.nodes_[a.id].value;
        const auto& bv = t.nodes_[b.id].value;
        auto& ga = t.nodes_[a.id].grad;
        auto& gb = t.nodes_[b.id].grad;
        for (std::size_t i = 0; i < g.size(); ++i) {
            ga[i] += g[i] * bv[i];
            gb[i] += g[i] * av[i];
        }
    };
    return v;
}

Var Tape::scale(Var a, double k) {
    std::vector<double> out = nodes_[a.id].value;
    for (double& x : out) x *= k;
    Var v = emplace(std::move(out));
    nodes_[v.id].pull = [id = v.id, a, k](Tape& t) {
        const auto& g = t.nodes_[id].grad;
        auto& ga = t.nodes_[a.id].grad;
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += k * g[i];
    };
    return v;
}

Var Tape::add_scalar(Var a, double k) {
    std::vector<double> out = nodes_[a.id].value;
    for (double& x : out) x += k;
    Var v = emplace(std::move(out));
    nodes_[v.id].pull = [id = v.id, a](Tape& t) {
        const auto& g = t.nodes_[id].grad;
        auto& ga = t.nodes_[a.id].grad;
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    };
    return v;
}

Var Tape::matvec(Var w, Var x) {
    const Node& wn = nodes_[w.id];
    const Node& xn = nodes_[x.id];
    const ParamEntry* entry = wn.bound;
    std::size_t rows = 0;
    std::size_t cols = xn.value.size();
    if (entry != nullptr && entry->shape.size() == 2) {
        rows = entry->shape[0];
        if (entry->shape[1] != cols) {
            throw ShapeError("matvec: matrix has " + std::to_string(entry->shape[1]) +
                             " columns, vector has " + std::to_string(cols));
        }
    } else {
        if (cols == 0 || wn.value.size() % cols != 0) {
            throw ShapeError("matvec: matrix size " + std::to_string(wn.value.size()) +
                             " not divisible by vector size " + std::to_string(cols));
        }
        rows = wn.value.size() / cols;
    }
    std::vector<double> out(rows, 0.0);
    for (std::size_t i = 0; i < rows; ++i) {
        double acc = 0.0;
        const double* wrow = wn.value.data() + i * cols;
        for (std::size_t j = 0; j < cols; ++j) acc += wrow[j] * xn.value[j];
        out[i] = acc;
    }
    Var v = emplace(std::move(out));
    nodes_[v.id].pull = [id = v.id, w, x, rows, cols](Tape& t) {
        const auto& g = t.nodes_[id].grad;
        const auto& wv = t.nodes_[w.id].value;
        const auto& xv = t.nodes_[x.id].value;
        auto& gw = t.nodes_[w.id].grad;
        auto& gx = t.nodes_[x.id].grad;
        for (std::size_t i = 0; i < rows; ++i) {
            const double gi = g[i];
            if (gi == 0.0) continue;
            double* gwrow = gw.data() + i * cols;
            const double* wrow = wv.data() + i * cols;
            for (std::size_t j = 0; j < cols; ++j) {
                gwrow[j] += gi * xv[j];
                gx[j] += gi * wrow[j];
            }
        }
    };
    return v;
}

Var Tape::relu(Var a) {
    std::vector<double> out = nodes_[a.id].value;
    for (double& x : out) x = std::max(x, 0.0);
    Var v = emplace(std::move(out));
    nodes_[v.id].pull = [id = v.id, a](Tape& t) {
        const auto& g = t.nodes_[id].grad;
        const auto& av = t.nodes_[a.id].value;
        auto& ga = t.nodes_[a.id].grad;
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (av[i] > 0.0) ga[i] += g[i];
        }
    };
    return v;
}

Var Tape::tanh_(Var a) {
    std::vector<double> out = nodes_[a.id].value;
    for (double& x : out) x = std::tanh(x);
    Var v = emplace(std::move(out));
    nodes_[v.id].pull = [id = v.id, a](Tape& t) {
        const auto& g = t.nodes_[id].grad;
        const auto& yv = t.nodes_[id].value;
        auto& ga = t.nodes_[a.id].grad;
        for (std::size_t i = 0; i < g.size(); ++i) {
            ga[i] += g[i] * (1.0 - yv[i] * yv[i]);
        }
    };
    return v;
}

Var Tape::sigmoid(Var a) {
    std::vector<double> out = nodes_[a.id].value;
    for (double& x : out) x = stable_sigmoid(x);
    Var v = emplace(std::move(out));
    nodes_[v.id].pull = [id = v.id, a](Tape& t) {
        const auto& g = t.nodes_[id].grad;
        const auto& yv = t.nodes_[id].value;
        auto& ga = t.nodes_[a.id].grad;
        for (std::size_t i = 0; i < g.size(); ++i) {
            ga[i] += g[i] * yv[i] * (1.0 - yv[i]);
        }
    };
    return v;
}

Var Tape::softplus(Var a) {
    std::vector<double> out = nodes_[a.id].value;
    for (double& x : out) x = stable_softplus(x);
    Var v = emplace(std::move(out));
    nodes_[v.id].pull = [id = v.id, a](Tape& t) {
        const auto& g = t.nodes_[id].grad;
        const auto& av = t.nodes_[a.id].value;
        auto& ga = t.nodes_[a.id].grad;
        for (std::size_t i = 0; i < g.size(); ++i) {
            ga[i] += g[i] * stable_sigmoid(av[i]);
        }
    };
    return v;
}

Var Tape::sum(Var a) {
    double acc = 0.0;
    for (double x : nodes_[a.id].value) acc += x;
    Var v = emplace({acc});
    nodes_[v.id].pull = [id = v.id, a](Tape& t) {
        const double g = t.nodes_[id].grad[0];
        auto& ga = t.nodes_[a.id].grad;
        for (double& x : ga) x += g;
    };
    return v;
}

Var Tape::gaussian_log_pdf(Var x, Var mean, Var std) {
    check_same_size(x, mean, "gaussian_log_pdf");
    check_same_size(x, std, "gaussian_log_pdf");
    const auto& xv = nodes_[x.id].value;
    const auto& mv = nodes_[mean.id].value;
    const auto& sv = nodes_[std.id].value;
    double acc = 0.0;
    for (std::size_t i = 0; i < xv.size(); ++i) {
        if (!(sv[i] > 0.0)) {
            throw std::domain_error("gaussian_log_pdf: non-positive std");
        }
        acc += normal_log_pdf(xv[i], mv[i], sv[i]);
    }
    Var v = emplace({acc});
    nodes_[v.id].pull = [id = v.id, x, mean, std](Tape& t) {
        const double g = t.nodes_[id].grad[0];
        const auto& xv = t.nodes_[x.id].value;
        const auto& mv = t.nodes_[mean.id].value;
        const auto& sv = t.nodes_[std.id].value;
        auto& gx = t.nodes_[x.id].grad;
        auto& gm = t.nodes_[mean.id].grad;
        auto& gs = t.nodes_[std.id].grad;
        for (std::size_t i = 0; i < xv.size(); ++i) {
            const double z = (xv[i] - mv[i]) / sv[i];
            gx[i] += g * (-z / sv[i]);
            gm[i] += g * (z / sv[i]);
            gs[i] += g * ((z * z - 1.0) / sv[i]);
        }
    };
    return v;
}

void Tape::backward(Var root) {
    if (nodes_[root.id].value.size() != 1) {
        throw ShapeError("backward: root must be scalar");
    }
    nodes_[root.id].grad[0] = 1.0;
    for (std::size_t i = root.id + 1; i-- > 0;) {
        if (nodes_[i].pull) nodes_[i].pull(*this);
    }
}

Var apply_activation(Tape& tape, Var v, Activation activation) {
    switch (activation) {
        case Activation::Identity: return v;
        case Activation::ReLU: return tape.relu(v);
        case Activation::Softplus: return tape.softplus(v);
        case Activation::Sigmoid: return tape.sigmoid(v);
        case Activation::Tanh: return tape.tanh_(v);
    }
    throw std::invalid_argument("unknown activation");
}

void validate_mlp_spec(const MLPSpec& spec) {
    if (spec.widths.size() < 2) {
        throw ShapeError("mlp " + spec.prefix + ": needs at least one layer");
    }
    if (spec.activations.size() + 1 != spec.widths.size()) {
        throw ShapeError("mlp " + spec.prefix + ": activation count " +
                         std::to_string(spec.activations.size()) +
                         " does not match layer count " +
                         std::to_string(spec.widths.size() - 1));
    }
    for (std::size_t w : spec.widths) {
        if (w == 0) throw ShapeError("mlp " + spec.prefix + ": zero width");
    }
}

void glorot_init(ParamEntry& entry, Rng& rng) {
    if (entry.shape.size() != 2) return;  // biases stay zero
    const double fan_in = static_cast<double>(entry.shape[1]);
    const double fan_out = static_cast<double>(entry.shape[0]);
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    for (double& w : entry.value) w = (2.0 * rng.uniform01() - 1.0) * bound;
}

void init_mlp_params(ParameterStore& store, const MLPSpec& spec, Rng& rng) {
    validate_mlp_spec(spec);
    for (std::size_t layer = 0; layer + 1 < spec.widths.size(); ++layer) {
        auto& w = store.add(spec.prefix + ".w" + std::to_string(layer),
                            {spec.widths[layer + 1], spec.widths[layer]});
        glorot_init(w, rng);
        store.add(spec.prefix + ".b" + std::to_string(layer), {spec.widths[layer + 1]});
    }
}

Var mlp_forward(Tape& tape, const MLPSpec& spec, ParameterStore& store, Var input) {
    validate_mlp_spec(spec);
    if (tape.value(input).size() != spec.widths[0]) {
        throw ShapeError("mlp " + spec.prefix + ": input width " +
                         std::to_string(tape.value(input).size()) + ", expected " +
                         std::to_string(spec.widths[0]));
    }
    Var h = input;
    for (std::size_t layer = 0; layer + 1 < spec.widths.size(); ++layer) {
        Var w = tape.param(store, spec.prefix + ".w" + std::to_string(layer));
        Var b = tape.param(store, spec.prefix + ".b" + std::to_string(layer));
        h = tape.add(tape.matvec(w, h), b);
        h = apply_activation(tape, h, spec.activations[layer]);
    }
    return h;
}

void init_rnn_params(ParameterStore& store, const RnnSpec& spec, Rng& rng) {
    auto& wx = store.add(spec.prefix + ".wx", {spec.hidden_width, spec.input_width});
    glorot_init(wx, rng);
    auto& wh = store.add(spec.prefix + ".wh", {spec.hidden_width, spec.hidden_width});
    glorot_init(wh, rng);
    store.add(spec.prefix + ".b", {spec.hidden_width});
}

std::vector<Var> rnn_forward(Tape& tape, const RnnSpec& spec, ParameterStore& store,
                             const std::vector<Var>& inputs, RnnDirection direction) {
    std::vector<Var> hidden;
    if (inputs.empty()) return hidden;
    hidden.reserve(inputs.size());
    Var wx = tape.param(store, spec.prefix + ".wx");
    Var wh = tape.param(store, spec.prefix + ".wh");
    Var b = tape.param(store, spec.prefix + ".b");
    Var h = tape.constant(std::vector<double>(spec.hidden_width, 0.0));
    for (std::size_t step = 0; step < inputs.size(); ++step) {
        const Var x = direction == RnnDirection::Forward
                          ? inputs[step]
                          : inputs[inputs.size() - 1 - step];
        if (tape.value(x).size() != spec.input_width) {
            throw ShapeError("rnn " + spec.prefix + ": input width " +
                             std::to_string(tape.value(x).size()) + ", expected " +
                             std::to_string(spec.input_width));
        }
        Var pre = tape.add(tape.add(tape.matvec(wh, h), tape.matvec(wx, x)), b);
        h = tape.relu(pre);
        hidden.push_back(h);
    }
    return hidden;
}

Var gaussian_reparameterized_sample(Tape& tape, Var mean, Var std,
                                    const std::vector<double>& noise) {
    const auto& sv = tape.value(std);
    if (sv.size() != noise.size() || tape.value(mean).size() != noise.size()) {
        throw ShapeError("reparameterized sample: size mismatch");
    }
    for (double s : sv) {
        if (!(s > 0.0)) {
            throw std::domain_error("reparameterized sample: std must be positive");
        }
    }
    Var eps = tape.constant(noise);
    return tape.add(mean, tape.mul(std, eps));
}

void adam_step(ParameterStore& store, const AdamConfig& config) {
    double norm_sq = 0.0;
    for (const auto& [name, entry] : store.entries()) {
        for (double g : entry.grad) {
            if (!std::isfinite(g)) {
                throw TrainError("non-finite gradient in parameter " + name);
            }
            norm_sq += g * g;
        }
    }
    const double norm = std::sqrt(norm_sq);
    const double rescale =
        (config.clip_norm > 0.0 && norm > config.clip_norm) ? config.clip_norm / norm
                                                            : 1.0;
    store.adam_step_count += 1;
    const double t = static_cast<double>(store.adam_step_count);
    const double bias1 = 1.0 - std::pow(config.beta1, t);
    const double bias2 = 1.0 - std::pow(config.beta2, t);
    for (auto& [name, entry] : store.entries()) {
        if (entry.adam_m.size() != entry.size()) {
            entry.adam_m.assign(entry.size(), 0.0);
            entry.adam_v.assign(entry.size(), 0.0);
        }
        for (std::size_t i = 0; i < entry.size(); ++i) {
            const double g = entry.grad[i] * rescale;
            entry.adam_m[i] = config.beta1 * entry.adam_m[i] + (1.0 - config.beta1) * g;
            entry.adam_v[i] =
                config.beta2 * entry.adam_v[i] + (1.0 - config.beta2) * g * g;
            const double m_hat = entry.adam_m[i] / bias1;
            const double v_hat = entry.adam_v[i] / bias2;
            entry.value[i] -= config.lr * m_hat / (std::sqrt(v_hat) + config.eps);
        }
    }
}

}  // namespace dcsgd
