#pragma once

// Minimal dense math for the neural components: named parameter arrays with
// gradient slots, a tape-based reverse-mode differentiation engine over
// vectors and matrices, MLPs with named nonlinearities, a plain ReLU
// recurrent cell, Adam with global-norm gradient clipping, and the
// reparameterized Gaussian sampling primitive.
//
// Storage is double precision throughout. A Tape and the stores it touches
// are confined to one thread during a forward/backward pass; stores may be
// shared read-only between passes.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "dcsgd/mathutil.hpp"

namespace dcsgd {

struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TrainError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ParamEntry {
    std::vector<std::size_t> shape;  // {n} or {rows, cols}, row-major
    std::vector<double> value;
    std::vector<double> grad;
    // Adam moment buffers; sized on first optimizer step and kept in the
    // store between steps.
    std::vector<double> adam_m;
    std::vector<double> adam_v;

    std::size_t size() const { return value.size(); }
};

class ParameterStore {
public:
    ParamEntry& add(const std::string& name, std::vector<std::size_t> shape);
    ParamEntry& at(const std::string& name);
    const ParamEntry& at(const std::string& name) const;
    bool has(const std::string& name) const { return entries_.count(name) > 0; }

    void zero_grad();

    std::map<std::string, ParamEntry>& entries() { return entries_; }
    const std::map<std::string, ParamEntry>& entries() const { return entries_; }

    // Adam step counter, shared across entries.
    std::size_t adam_step_count = 0;

private:
    std::map<std::string, ParamEntry> entries_;
};

// Handle into a Tape's node list.
struct Var {
    std::size_t id = static_cast<std::size_t>(-1);
};

class Tape {
public:
    Var constant(std::vector<double> value);
    Var scalar(double value);
    // Leaf whose gradient is accumulated into the store entry on backward().
    Var param(ParameterStore& store, const std::string& name);

    const std::vector<double>& value(Var v) const { return nodes_[v.id].value; }
    double scalar_value(Var v) const;
    const std::vector<double>& grad(Var v) const { return nodes_[v.id].grad; }

    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);  // elementwise
    Var scale(Var a, double k);
    Var matvec(Var w, Var x);  // w: {m, n} row-major, x: {n} -> {m}
    Var relu(Var a);
    Var tanh_(Var a);
    Var sigmoid(Var a);
    Var softplus(Var a);
    Var add_scalar(Var a, double k);
    Var sum(Var a);  // -> scalar

    // Scalar sum over dimensions of log N(x_i | mean_i, std_i^2);
    // differentiable in x, mean, and std.
    Var gaussian_log_pdf(Var x, Var mean, Var std);

    // Reverse sweep from a scalar root; each node is visited exactly once.
    // Gradients of bound parameters accumulate into their store entries.
    void backward(Var root);

    std::size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        std::vector<double> value;
        std::vector<double> grad;
        std::function<void(Tape&)> pull;  // propagates grad to inputs
        ParamEntry* bound = nullptr;
    };

    Var emplace(std::vector<double> value);
    void check_same_size(Var a, Var b, const char* op) const;

    std::vector<Node> nodes_;
    std::map<const ParamEntry*, std::size_t> param_nodes_;
};

enum class Activation { Identity, ReLU, Softplus, Sigmoid, Tanh };

Var apply_activation(Tape& tape, Var v, Activation activation);

// widths: input width followed by each layer's output width (layers + 1
// entries); activations: one per layer. Parameters live under
// prefix + ".w<k>" / ".b<k>".
struct MLPSpec {
    std::vector<std::size_t> widths;
    std::vector<Activation> activations;
    std::string prefix;
};

void validate_mlp_spec(const MLPSpec& spec);
void init_mlp_params(ParameterStore& store, const MLPSpec& spec, Rng& rng);
Var mlp_forward(Tape& tape, const MLPSpec& spec, ParameterStore& store, Var input);

// h_t = ReLU(W_h h_{t-1} + W_x x_t + b), h_0 = 0. Parameters under
// prefix + ".wx" / ".wh" / ".b".
struct RnnSpec {
    std::size_t input_width = 0;
    std::size_t hidden_width = 0;
    std::string prefix;
};

void init_rnn_params(ParameterStore& store, const RnnSpec& spec, Rng& rng);

// Hidden states after each consumed input, in consumption order. For
// direction backward, inputs are consumed last-to-first. Empty input yields
// an empty sequence.
enum class RnnDirection { Forward, Backward };
std::vector<Var> rnn_forward(Tape& tape, const RnnSpec& spec, ParameterStore& store,
                             const std::vector<Var>& inputs, RnnDirection direction);

// mean + std (.) noise; requires std > 0 elementwise.
Var gaussian_reparameterized_sample(Tape& tape, Var mean, Var std,
                                    const std::vector<double>& noise);

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip_norm = 10.0;
};

// Global-norm clipping across every entry, then a standard Adam update.
// Throws TrainError naming the parameter if a gradient is non-finite.
void adam_step(ParameterStore& store, const AdamConfig& config);

// Glorot-uniform matrix init; zero biases.
void glorot_init(ParamEntry& entry, Rng& rng);

}  // namespace dcsgd
