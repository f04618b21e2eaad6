#pragma once

#include <cstdint>
#include <vector>

#include "ufnet/matrix.hpp"
#include "ufnet/rng.hpp"
#include "ufnet/tape.hpp"

namespace ufnet {

struct ShallowNetConfig {
    std::size_t in_dim = 0;
    std::size_t hidden_layers = 0; // 0 or 1
    std::size_t hidden_dim = 64;
    double dropout_p = 0.0;
    void validate() const;
};

// One or two linear layers ending in a single sigmoid neuron. Dropout sits on
// the input of every linear layer so stochastic inference works even in the
// zero-hidden-layer configuration.
class ShallowNet {
public:
    ShallowNet() = default;
    ShallowNet(const ShallowNetConfig& cfg, Rng& init_rng);

    // Builds the forward graph; params must be tape leaves aligned with
    // params(). Dropout draws come from rng in layer order when active.
    Var graph(Tape& t, Var x, const std::vector<Var>& params, bool dropout_active,
              Rng& rng) const;

    // Plain forward pass returning probabilities [n,1]; no tape, same dropout
    // draw order as graph().
    Matrix predict(const Matrix& x, bool dropout_active, Rng* rng) const;

    std::vector<Matrix>& params() { return params_; }
    const std::vector<Matrix>& params() const { return params_; }
    const ShallowNetConfig& config() const { return cfg_; }
    std::size_t out_neurons() const { return 1; }

    void restore(const ShallowNetConfig& cfg, std::vector<Matrix> params);

private:
    ShallowNetConfig cfg_;
    std::vector<Matrix> params_; // W0, b0 [, W1, b1]
};

// Uniform +-sqrt(6/(fan_in+fan_out)), drawn row-major.
Matrix glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng);

// Inverted dropout applied in place, drawing one uniform per element in
// row-major order — the same convention the tape op uses.
void dropout_in_place(Matrix& x, double p, Rng& rng);

// FNV-1a over shapes and raw parameter bytes; freeze assertions + manifests.
std::uint64_t param_hash(const std::vector<Matrix>& params);
std::uint64_t param_hash(const std::vector<const Matrix*>& params);
std::uint64_t fnv1a(const void* data, std::size_t bytes, std::uint64_t h = 14695981039346656037ull);

// Mean binary cross-entropy on plain matrices; same clamping and label
// smoothing as the tape op.
double bce_value(const Matrix& probs, const std::vector<int>& labels, double smoothing = 0.0);

} // namespace ufnet
