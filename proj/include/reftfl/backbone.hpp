#pragma once

#include <cstdint>
#include <vector>

#include "reftfl/intervention.hpp"
#include "reftfl/linalg.hpp"
#include "reftfl/rng.hpp"

namespace reftfl {

struct BackboneConfig {
    int num_layers = 4;
    int hidden_dim = 16;
    int seq_len = 12;
    int vocab = 12;
    int classes = 2;
    std::uint64_t seed = 0;
};

/**
 * Frozen toy trunk: a token embedding followed by per-position residual
 * blocks h ← h + tanh(A_l h + c_l). All weights are generated from the seed
 * and never change.
 *
 * Position 0 is a pooling slot: its input embedding is the mean of all token
 * embeddings, and the pooled representation z read by the classifier head is
 * position 0 of the final layer. Remaining positions carry their own token
 * embedding. Positions never mix inside layers.
 */
struct FrozenBackbone {
    BackboneConfig config;
    Matrix embedding;                  // vocab × d
    std::vector<Matrix> layer_weights; // num_layers of d×d
    std::vector<Vector> layer_biases;  // num_layers of d
};

FrozenBackbone make_backbone(const BackboneConfig& config);

// Trainable two-layer classifier: softmax(W_out · tanh(W_proj z + b_proj) + b_out).
// The hidden width equals the backbone hidden dimension.
struct ClassifierHead {
    Matrix w_proj;  // d × d
    Vector b_proj;  // d
    Matrix w_out;   // classes × d
    Vector b_out;   // classes
};

ClassifierHead make_head(int hidden_dim, int classes, Rng& rng);

// Everything the backward pass needs, captured during forward.
struct ForwardTrace {
    std::vector<Vector> embedded;           // per position, layer input h₀
    std::vector<std::vector<Vector>> pre;   // [layer][position], block output before intervention
    std::vector<std::vector<Vector>> post;  // [layer][position], after intervention
    Vector pooled;                          // z = post[last][0]
    Vector head_hidden;                     // tanh(W_proj z + b_proj)
    Vector logits;
    Vector probs;
};

/**
 * Runs tokens through the frozen trunk, replacing the hidden state at every
 * scheduled (layer, position) slot with the intervention output before the
 * next layer reads it.
 */
ForwardTrace forward(const FrozenBackbone& backbone, const ClassifierHead& head,
                     const ParamBundle& bundle, const std::vector<int>& tokens);

// Cross-entropy of the recorded logits in log-sum-exp form.
double loss(const ForwardTrace& trace, int label);

struct HeadGrads {
    Matrix w_proj;
    Vector b_proj;
    Matrix w_out;
    Vector b_out;
};

struct Gradients {
    HeadGrads head;
    std::vector<LoReftGrads> slots;  // aligned with bundle.slots
};

/**
 * Exact reverse-mode gradients of loss(forward(...), label) with respect to
 * the head and every intervention slot. Frozen trunk weights receive none.
 * The trace must come from a forward over the same backbone/head/bundle.
 */
Gradients backward(const ForwardTrace& trace, int label, const FrozenBackbone& backbone,
                   const ClassifierHead& head, const ParamBundle& bundle);

}  // namespace reftfl
