#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "scicot/common.hpp"
#include "scicot/loss.hpp"

namespace scicot {

// Deterministic RNG helpers; draws avoid std distributions so identical
// seeds give identical weights on any platform.
class DeterministicRng {
  public:
    explicit DeterministicRng(std::uint64_t seed) : engine_(seed) {}
    double uniform();                 // [0, 1)
    double gaussian();                // Box-Muller
    std::size_t below(std::size_t n); // [0, n)
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[below(i)]);
        }
    }

  private:
    std::mt19937_64 engine_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

struct Tensor {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> v;
    std::vector<double> g;

    Tensor() = default;
    Tensor(std::size_t r, std::size_t c) : rows(r), cols(c), v(r * c, 0.0), g(r * c, 0.0) {}
    double& at(std::size_t r, std::size_t c) { return v[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return v[r * cols + c]; }
    double* row(std::size_t r) { return v.data() + r * cols; }
    const double* row(std::size_t r) const { return v.data() + r * cols; }
    double* grow(std::size_t r) { return g.data() + r * cols; }
    void zero_grad() { std::fill(g.begin(), g.end(), 0.0); }
    std::size_t size() const { return v.size(); }
};

// Reverse-mode tape over Tensor nodes. Parameter tensors live outside the
// graph; scratch nodes are owned by it. With recording disabled the same ops
// run forward-only for generation.
class Graph {
  public:
    explicit Graph(bool record = true) : record_(record) {}

    Tensor* scratch(std::size_t rows, std::size_t cols);

    Tensor* embed(Tensor* table, const std::vector<int>& ids);
    Tensor* add(Tensor* a, Tensor* b);
    Tensor* add_row(Tensor* a, Tensor* row);           // broadcast 1 x d bias
    Tensor* matmul(Tensor* a, Tensor* b);              // (m x k)(k x n)
    Tensor* matmul_nt(Tensor* a, Tensor* b);           // (m x k)(n x k)^T
    Tensor* scale(Tensor* a, double c);
    Tensor* gelu(Tensor* a);
    Tensor* layernorm(Tensor* x, Tensor* gain, Tensor* bias);
    Tensor* softmax_rows(Tensor* x, bool causal);
    Tensor* slice_cols(Tensor* x, std::size_t first, std::size_t width);
    Tensor* concat_cols(const std::vector<Tensor*>& parts);

    // Terminal node: mean cross entropy of row-softmaxed logits against
    // targets. The forward value routes through token_cross_entropy; the
    // backward pass seeds (P - onehot) / N * loss_scale into logits.
    CrossEntropyValue cross_entropy_logits(Tensor* logits, const std::vector<int>& targets,
                                           double loss_scale, double prob_floor);

    void backward();

  private:
    void push(std::function<void()> fn);
    bool record_;
    std::vector<std::unique_ptr<Tensor>> owned_;
    std::vector<std::function<void()>> tape_;
};

struct ModelDims {
    int d_model = 48;
    int n_heads = 4;
    int n_layers = 2;  // encoder layers; the decoder uses the same count
    int d_ff = 96;

    json to_json() const;
    static ModelDims from_json(const json& j);
};

// Tiny pre-norm transformer encoder-decoder with tied input/output
// embeddings, sized to overfit a handful of pairs on a CPU in seconds.
// Encoder positions see a width-2 local stem: each input row sums the
// token embedding, a separate previous-token embedding, and the position
// embedding, so an adjacent token pair is addressable in one attention hop.
class Seq2SeqModel {
  public:
    Seq2SeqModel(const ModelDims& dims, int vocab_size, int max_input_tokens,
                 int max_target_tokens, std::uint64_t init_seed);

    // Teacher-forced loss for one (input, target) pair; accumulates
    // parameter gradients scaled by loss_scale when record is true.
    CrossEntropyValue example_loss(const std::vector<int>& input_ids,
                                   const std::vector<int>& target_ids, double loss_scale,
                                   bool record);

    std::vector<int> generate_greedy(const std::vector<int>& input_ids) const;
    std::vector<int> generate_beam(const std::vector<int>& input_ids, int beam_width) const;

    void zero_grads();
    void adam_step(double lr, double beta1, double beta2, double eps, double clip_norm,
                   double weight_decay);

    const std::vector<std::pair<std::string, Tensor*>>& parameters() const { return params_; }
    void save_weights(const std::filesystem::path& path) const;
    void load_weights(const std::filesystem::path& path);

    const ModelDims& dims() const { return dims_; }
    int vocab_size() const { return vocab_size_; }
    int max_input_tokens() const { return max_input_; }
    int max_target_tokens() const { return max_target_; }
    double prob_floor = 1e-12;
    std::size_t floored_positions = 0;  // across all example_loss calls

  private:
    struct AttentionBlock {
        Tensor wq, wk, wv, wo;
    };
    struct LayerNormParams {
        Tensor gain, bias;
    };
    struct FeedForward {
        Tensor w1, b1, w2, b2;
    };
    struct EncoderLayer {
        LayerNormParams ln1, ln2;
        AttentionBlock attn;
        FeedForward ffn;
    };
    struct DecoderLayer {
        LayerNormParams ln1, ln_cross, ln2;
        AttentionBlock self_attn, cross_attn;
        FeedForward ffn;
    };

    Tensor* attention(Graph& g, Tensor* queries_in, Tensor* keys_in, Tensor* values_in,
                      const AttentionBlock& block, bool causal) const;
    Tensor* encode(Graph& g, const std::vector<int>& input_ids) const;
    Tensor* decode(Graph& g, const std::vector<int>& decoder_ids, Tensor* enc_out) const;
    Tensor* logits_for(Graph& g, const std::vector<int>& input_ids,
                       const std::vector<int>& decoder_ids) const;

    void register_params();

    ModelDims dims_;
    int vocab_size_;
    int max_input_;
    int max_target_;

    Tensor embedding_;       // vocab x d, tied with the output head
    Tensor prev_embedding_;  // vocab x d, previous-token channel of the encoder stem
    Tensor pos_enc_;
    Tensor pos_dec_;
    std::vector<EncoderLayer> enc_layers_;
    std::vector<DecoderLayer> dec_layers_;
    LayerNormParams ln_enc_out_, ln_dec_out_;

    std::vector<std::pair<std::string, Tensor*>> params_;
    std::vector<std::vector<double>> adam_m_, adam_v_;
    long adam_step_count_ = 0;
};

}  // namespace scicot
