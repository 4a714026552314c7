#include "scicot/seq2seq.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace scicot {

double DeterministicRng::uniform() {
    // 53-bit mantissa draw; engine output is identical across platforms.
    return static_cast<double>(engine_() >> 11) * (1.0 / 9007199254740992.0);
}

double DeterministicRng::gaussian() {
    if (have_spare_) {
        have_spare_ = false;
        return spare_;
    }
    double u1 = 0.0;
    do {
        u1 = uniform();
    } while (u1 <= 1e-300);
    double u2 = uniform();
    double radius = std::sqrt(-2.0 * std::log(u1));
    double angle = 2.0 * 3.14159265358979323846 * u2;
    spare_ = radius * std::sin(angle);
    have_spare_ = true;
    return radius * std::cos(angle);
}

std::size_t DeterministicRng::below(std::size_t n) {
    return static_cast<std::size_t>(engine_() % static_cast<std::uint64_t>(n));
}

Tensor* Graph::scratch(std::size_t rows, std::size_t cols) {
    owned_.push_back(std::make_unique<Tensor>(rows, cols));
    return owned_.back().get();
}

void Graph::push(std::function<void()> fn) {
    if (record_) {
        tape_.push_back(std::move(fn));
    }
}

void Graph::backward() {
    for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) {
        (*it)();
    }
}

Tensor* Graph::embed(Tensor* table, const std::vector<int>& ids) {
    Tensor* out = scratch(ids.size(), table->cols);
    for (std::size_t r = 0; r < ids.size(); ++r) {
        std::memcpy(out->row(r), table->row(static_cast<std::size_t>(ids[r])),
                    table->cols * sizeof(double));
    }
    push([table, out, ids]() {
        for (std::size_t r = 0; r < ids.size(); ++r) {
            double* trow = table->grow(static_cast<std::size_t>(ids[r]));
            const double* orow = out->grow(r);
            for (std::size_t c = 0; c < table->cols; ++c) {
                trow[c] += orow[c];
            }
        }
    });
    return out;
}

Tensor* Graph::add(Tensor* a, Tensor* b) {
    Tensor* out = scratch(a->rows, a->cols);
    for (std::size_t i = 0; i < a->size(); ++i) {
        out->v[i] = a->v[i] + b->v[i];
    }
    push([a, b, out]() {
        for (std::size_t i = 0; i < a->size(); ++i) {
            a->g[i] += out->g[i];
            b->g[i] += out->g[i];
        }
    });
    return out;
}

Tensor* Graph::add_row(Tensor* a, Tensor* row) {
    Tensor* out = scratch(a->rows, a->cols);
    for (std::size_t r = 0; r < a->rows; ++r) {
        const double* arow = a->row(r);
        double* orow = out->row(r);
        for (std::size_t c = 0; c < a->cols; ++c) {
            orow[c] = arow[c] + row->v[c];
        }
    }
    push([a, row, out]() {
        for (std::size_t r = 0; r < a->rows; ++r) {
            const double* orow = out->grow(r);
            double* arow = a->grow(r);
            for (std::size_t c = 0; c < a->cols; ++c) {
                arow[c] += orow[c];
                row->g[c] += orow[c];
            }
        }
    });
    return out;
}

Tensor* Graph::matmul(Tensor* a, Tensor* b) {
    Tensor* out = scratch(a->rows, b->cols);
    for (std::size_t i = 0; i < a->rows; ++i) {
        double* orow = out->row(i);
        const double* arow = a->row(i);
        for (std::size_t k = 0; k < a->cols; ++k) {
            double av = arow[k];
            const double* brow = b->row(k);
            for (std::size_t j = 0; j < b->cols; ++j) {
                orow[j] += av * brow[j];
            }
        }
    }
    push([a, b, out]() {
        for (std::size_t i = 0; i < a->rows; ++i) {
            const double* orow = out->grow(i);
            double* darow = a->grow(i);
            const double* arow = a->row(i);
            for (std::size_t k = 0; k < a->cols; ++k) {
                const double* brow = b->row(k);
                double* dbrow = b->grow(k);
                double acc = 0.0;
                double av = arow[k];
                for (std::size_t j = 0; j < b->cols; ++j) {
                    acc += orow[j] * brow[j];
                    dbrow[j] += av * orow[j];
                }
                darow[k] += acc;
            }
        }
    });
    return out;
}

Tensor* Graph::matmul_nt(Tensor* a, Tensor* b) {
    Tensor* out = scratch(a->rows, b->rows);
    for (std::size_t i = 0; i < a->rows; ++i) {
        const double* arow = a->row(i);
        double* orow = out->row(i);
        for (std::size_t j = 0; j < b->rows; ++j) {
            const double* brow = b->row(j);
            double acc = 0.0;
            for (std::size_t k = 0; k < a->cols; ++k) {
                acc += arow[k] * brow[k];
            }
            orow[j] = acc;
        }
    }
    push([a, b, out]() {
        for (std::size_t i = 0; i < a->rows; ++i) {
            const double* orow = out->grow(i);
            const double* arow = a->row(i);
            double* darow = a->grow(i);
            for (std::size_t j = 0; j < b->rows; ++j) {
                double ov = orow[j];
                if (ov == 0.0) {
                    continue;
                }
                const double* brow = b->row(j);
                double* dbrow = b->grow(j);
                for (std::size_t k = 0; k < a->cols; ++k) {
                    darow[k] += ov * brow[k];
                    dbrow[k] += ov * arow[k];
                }
            }
        }
    });
    return out;
}

Tensor* Graph::scale(Tensor* a, double c) {
    Tensor* out = scratch(a->rows, a->cols);
    for (std::size_t i = 0; i < a->size(); ++i) {
        out->v[i] = a->v[i] * c;
    }
    push([a, out, c]() {
        for (std::size_t i = 0; i < a->size(); ++i) {
            a->g[i] += out->g[i] * c;
        }
    });
    return out;
}

Tensor* Graph::gelu(Tensor* a) {
    Tensor* out = scratch(a->rows, a->cols);
    constexpr double kSqrt2OverPi = 0.7978845608028654;
    for (std::size_t i = 0; i < a->size(); ++i) {
        double x = a->v[i];
        double t = std::tanh(kSqrt2OverPi * (x + 0.044715 * x * x * x));
        out->v[i] = 0.5 * x * (1.0 + t);
    }
    push([a, out]() {
        for (std::size_t i = 0; i < a->size(); ++i) {
            double x = a->v[i];
            double inner = kSqrt2OverPi * (x + 0.044715 * x * x * x);
            double t = std::tanh(inner);
            double sech2 = 1.0 - t * t;
            double dinner = kSqrt2OverPi * (1.0 + 3.0 * 0.044715 * x * x);
            double dy = 0.5 * (1.0 + t) + 0.5 * x * sech2 * dinner;
            a->g[i] += out->g[i] * dy;
        }
    });
    return out;
}

Tensor* Graph::layernorm(Tensor* x, Tensor* gain, Tensor* bias) {
    constexpr double kEps = 1e-5;
    Tensor* out = scratch(x->rows, x->cols);
    // Per-row mean and inverse stddev are cached for the backward pass.
    auto stats = std::make_shared<std::vector<double>>(x->rows * 2);
    std::size_t d = x->cols;
    for (std::size_t r = 0; r < x->rows; ++r) {
        const double* xrow = x->row(r);
        double mean = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            mean += xrow[c];
        }
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            double dx = xrow[c] - mean;
            var += dx * dx;
        }
        var /= static_cast<double>(d);
        double inv_std = 1.0 / std::sqrt(var + kEps);
        (*stats)[r * 2] = mean;
        (*stats)[r * 2 + 1] = inv_std;
        double* orow = out->row(r);
        for (std::size_t c = 0; c < d; ++c) {
            orow[c] = gain->v[c] * (xrow[c] - mean) * inv_std + bias->v[c];
        }
    }
    push([x, gain, bias, out, stats, d]() {
        for (std::size_t r = 0; r < x->rows; ++r) {
            double mean = (*stats)[r * 2];
            double inv_std = (*stats)[r * 2 + 1];
            const double* xrow = x->row(r);
            const double* orow = out->grow(r);
            double sum_dg = 0.0;
            double sum_dg_xhat = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                double xhat = (xrow[c] - mean) * inv_std;
                double dg = orow[c] * gain->v[c];
                sum_dg += dg;
                sum_dg_xhat += dg * xhat;
                gain->g[c] += orow[c] * xhat;
                bias->g[c] += orow[c];
            }
            double* dxrow = x->grow(r);
            double inv_d = 1.0 / static_cast<double>(d);
            for (std::size_t c = 0; c < d; ++c) {
                double xhat = (xrow[c] - mean) * inv_std;
                double dg = orow[c] * gain->v[c];
                dxrow[c] += inv_std * (dg - inv_d * sum_dg - xhat * inv_d * sum_dg_xhat);
            }
        }
    });
    return out;
}

Tensor* Graph::softmax_rows(Tensor* x, bool causal) {
    Tensor* out = scratch(x->rows, x->cols);
    for (std::size_t r = 0; r < x->rows; ++r) {
        std::size_t limit = causal ? std::min(r + 1, x->cols) : x->cols;
        const double* xrow = x->row(r);
        double* orow = out->row(r);
        double mx = xrow[0];
        for (std::size_t c = 1; c < limit; ++c) {
            mx = std::max(mx, xrow[c]);
        }
        double sum = 0.0;
        for (std::size_t c = 0; c < limit; ++c) {
            orow[c] = std::exp(xrow[c] - mx);
            sum += orow[c];
        }
        for (std::size_t c = 0; c < limit; ++c) {
            orow[c] /= sum;
        }
        // Masked positions carry exactly zero probability and zero gradient.
    }
    push([x, out, causal]() {
        for (std::size_t r = 0; r < x->rows; ++r) {
            std::size_t limit = causal ? std::min(r + 1, x->cols) : x->cols;
            const double* prow = out->row(r);
            const double* orow = out->grow(r);
            double dot = 0.0;
            for (std::size_t c = 0; c < limit; ++c) {
                dot += orow[c] * prow[c];
            }
            double* dxrow = x->grow(r);
            for (std::size_t c = 0; c < limit; ++c) {
                dxrow[c] += prow[c] * (orow[c] - dot);
            }
        }
    });
    return out;
}

Tensor* Graph::slice_cols(Tensor* x, std::size_t first, std::size_t width) {
    Tensor* out = scratch(x->rows, width);
    for (std::size_t r = 0; r < x->rows; ++r) {
        std::memcpy(out->row(r), x->row(r) + first, width * sizeof(double));
    }
    push([x, out, first, width]() {
        for (std::size_t r = 0; r < x->rows; ++r) {
            double* dxrow = x->grow(r) + first;
            const double* orow = out->grow(r);
            for (std::size_t c = 0; c < width; ++c) {
                dxrow[c] += orow[c];
            }
        }
    });
    return out;
}

Tensor* Graph::concat_cols(const std::vector<Tensor*>& parts) {
    std::size_t total = 0;
    for (const Tensor* p : parts) {
        total += p->cols;
    }
    Tensor* out = scratch(parts.front()->rows, total);
    std::size_t offset = 0;
    for (Tensor* p : parts) {
        for (std::size_t r = 0; r < p->rows; ++r) {
            std::memcpy(out->row(r) + offset, p->row(r), p->cols * sizeof(double));
        }
        offset += p->cols;
    }
    push([parts, out]() {
        std::size_t off = 0;
        for (Tensor* p : parts) {
            for (std::size_t r = 0; r < p->rows; ++r) {
                const double* orow = out->grow(r) + off;
                double* prow = p->grow(r);
                for (std::size_t c = 0; c < p->cols; ++c) {
                    prow[c] += orow[c];
                }
            }
            off += p->cols;
        }
    });
    return out;
}

CrossEntropyValue Graph::cross_entropy_logits(Tensor* logits, const std::vector<int>& targets,
                                              double loss_scale, double prob_floor) {
    // Row softmax with max subtraction, then the shared scoring routine so
    // every loss in the system flows through one implementation.
    auto probs = std::make_shared<std::vector<std::vector<double>>>(logits->rows);
    for (std::size_t r = 0; r < logits->rows; ++r) {
        const double* lrow = logits->row(r);
        double mx = lrow[0];
        for (std::size_t c = 1; c < logits->cols; ++c) {
            mx = std::max(mx, lrow[c]);
        }
        std::vector<double>& p = (*probs)[r];
        p.resize(logits->cols);
        double sum = 0.0;
        for (std::size_t c = 0; c < logits->cols; ++c) {
            p[c] = std::exp(lrow[c] - mx);
            sum += p[c];
        }
        for (std::size_t c = 0; c < logits->cols; ++c) {
            p[c] /= sum;
        }
    }
    CrossEntropyOptions opts;
    opts.prob_floor = prob_floor;
    CrossEntropyValue value = token_cross_entropy(*probs, targets, opts);
    double inv_n = 1.0 / static_cast<double>(value.positions);
    push([logits, targets, probs, loss_scale, inv_n]() {
        for (std::size_t r = 0; r < logits->rows; ++r) {
            const std::vector<double>& p = (*probs)[r];
            double* drow = logits->grow(r);
            int tgt = targets[r];
            for (std::size_t c = 0; c < logits->cols; ++c) {
                double grad = p[c];
                if (static_cast<int>(c) == tgt) {
                    grad -= 1.0;
                }
                drow[c] += loss_scale * inv_n * grad;
            }
        }
    });
    return value;
}

json ModelDims::to_json() const {
    return json{{"d_model", d_model}, {"n_heads", n_heads}, {"n_layers", n_layers}, {"d_ff", d_ff}};
}

ModelDims ModelDims::from_json(const json& j) {
    ModelDims d;
    d.d_model = j.at("d_model").get<int>();
    d.n_heads = j.at("n_heads").get<int>();
    d.n_layers = j.at("n_layers").get<int>();
    d.d_ff = j.at("d_ff").get<int>();
    if (d.d_model <= 0 || d.n_heads <= 0 || d.n_layers <= 0 || d.d_ff <= 0) {
        throw ConfigError("model dims must be positive");
    }
    if (d.d_model % d.n_heads != 0) {
        throw ConfigError("d_model " + std::to_string(d.d_model) + " not divisible by n_heads " +
                          std::to_string(d.n_heads));
    }
    return d;
}

namespace {

void init_gaussian(Tensor& t, DeterministicRng& rng, double stddev) {
    for (double& x : t.v) {
        x = rng.gaussian() * stddev;
    }
}

void init_ones(Tensor& t) {
    std::fill(t.v.begin(), t.v.end(), 1.0);
}

}  // namespace

Seq2SeqModel::Seq2SeqModel(const ModelDims& dims, int vocab_size, int max_input_tokens,
                           int max_target_tokens, std::uint64_t init_seed)
    : dims_(dims),
      vocab_size_(vocab_size),
      max_input_(max_input_tokens),
      max_target_(max_target_tokens) {
    if (dims_.d_model % dims_.n_heads != 0) {
        throw ConfigError("d_model not divisible by n_heads");
    }
    std::size_t d = static_cast<std::size_t>(dims_.d_model);
    std::size_t ff = static_cast<std::size_t>(dims_.d_ff);
    embedding_ = Tensor(static_cast<std::size_t>(vocab_size_), d);
    prev_embedding_ = Tensor(static_cast<std::size_t>(vocab_size_), d);
    // Decoder rows cover BOS plus every target position.
    pos_enc_ = Tensor(static_cast<std::size_t>(max_input_), d);
    pos_dec_ = Tensor(static_cast<std::size_t>(max_target_) + 1, d);
    enc_layers_.resize(static_cast<std::size_t>(dims_.n_layers));
    dec_layers_.resize(static_cast<std::size_t>(dims_.n_layers));

    auto make_attn = [&](AttentionBlock& a) {
        a.wq = Tensor(d, d);
        a.wk = Tensor(d, d);
        a.wv = Tensor(d, d);
        a.wo = Tensor(d, d);
    };
    auto make_ln = [&](LayerNormParams& ln) {
        ln.gain = Tensor(1, d);
        ln.bias = Tensor(1, d);
    };
    auto make_ffn = [&](FeedForward& f) {
        f.w1 = Tensor(d, ff);
        f.b1 = Tensor(1, ff);
        f.w2 = Tensor(ff, d);
        f.b2 = Tensor(1, d);
    };
    for (auto& layer : enc_layers_) {
        make_ln(layer.ln1);
        make_ln(layer.ln2);
        make_attn(layer.attn);
        make_ffn(layer.ffn);
    }
    for (auto& layer : dec_layers_) {
        make_ln(layer.ln1);
        make_ln(layer.ln_cross);
        make_ln(layer.ln2);
        make_attn(layer.self_attn);
        make_attn(layer.cross_attn);
        make_ffn(layer.ffn);
    }
    make_ln(ln_enc_out_);
    make_ln(ln_dec_out_);

    register_params();

    DeterministicRng rng(init_seed);
    for (auto& [name, tensor] : params_) {
        if (name.find(".gain") != std::string::npos) {
            init_ones(*tensor);
        } else if (name.find(".bias") != std::string::npos || name.find(".b1") != std::string::npos ||
                   name.find(".b2") != std::string::npos) {
            // zeros already
        } else if (name.rfind("pos_", 0) == 0) {
            init_gaussian(*tensor, rng, 0.02);
        } else {
            init_gaussian(*tensor, rng, 0.08);
        }
    }
    adam_m_.resize(params_.size());
    adam_v_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
        adam_m_[i].assign(params_[i].second->size(), 0.0);
        adam_v_[i].assign(params_[i].second->size(), 0.0);
    }
}

void Seq2SeqModel::register_params() {
    params_.clear();
    auto reg = [&](const std::string& name, Tensor& t) { params_.emplace_back(name, &t); };
    reg("embedding", embedding_);
    reg("prev_embedding", prev_embedding_);
    reg("pos_enc", pos_enc_);
    reg("pos_dec", pos_dec_);
    auto reg_ln = [&](const std::string& base, LayerNormParams& ln) {
        reg(base + ".gain", ln.gain);
        reg(base + ".bias", ln.bias);
    };
    auto reg_attn = [&](const std::string& base, AttentionBlock& a) {
        reg(base + ".wq", a.wq);
        reg(base + ".wk", a.wk);
        reg(base + ".wv", a.wv);
        reg(base + ".wo", a.wo);
    };
    auto reg_ffn = [&](const std::string& base, FeedForward& f) {
        reg(base + ".w1", f.w1);
        reg(base + ".b1", f.b1);
        reg(base + ".w2", f.w2);
        reg(base + ".b2", f.b2);
    };
    for (std::size_t i = 0; i < enc_layers_.size(); ++i) {
        std::string base = "enc." + std::to_string(i);
        reg_ln(base + ".ln1", enc_layers_[i].ln1);
        reg_attn(base + ".attn", enc_layers_[i].attn);
        reg_ln(base + ".ln2", enc_layers_[i].ln2);
        reg_ffn(base + ".ffn", enc_layers_[i].ffn);
    }
    for (std::size_t i = 0; i < dec_layers_.size(); ++i) {
        std::string base = "dec." + std::to_string(i);
        reg_ln(base + ".ln1", dec_layers_[i].ln1);
        reg_attn(base + ".self", dec_layers_[i].self_attn);
        reg_ln(base + ".ln_cross", dec_layers_[i].ln_cross);
        reg_attn(base + ".cross", dec_layers_[i].cross_attn);
        reg_ln(base + ".ln2", dec_layers_[i].ln2);
        reg_ffn(base + ".ffn", dec_layers_[i].ffn);
    }
    reg_ln("ln_enc_out", ln_enc_out_);
    reg_ln("ln_dec_out", ln_dec_out_);
}

Tensor* Seq2SeqModel::attention(Graph& g, Tensor* queries_in, Tensor* keys_in, Tensor* values_in,
                                const AttentionBlock& block, bool causal) const {
    std::size_t n_heads = static_cast<std::size_t>(dims_.n_heads);
    std::size_t head_dim = static_cast<std::size_t>(dims_.d_model) / n_heads;
    Tensor* q = g.matmul(queries_in, const_cast<Tensor*>(&block.wq));
    Tensor* k = g.matmul(keys_in, const_cast<Tensor*>(&block.wk));
    Tensor* v = g.matmul(values_in, const_cast<Tensor*>(&block.wv));
    double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
    std::vector<Tensor*> heads;
    heads.reserve(n_heads);
    for (std::size_t h = 0; h < n_heads; ++h) {
        Tensor* qh = g.slice_cols(q, h * head_dim, head_dim);
        Tensor* kh = g.slice_cols(k, h * head_dim, head_dim);
        Tensor* vh = g.slice_cols(v, h * head_dim, head_dim);
        Tensor* scores = g.scale(g.matmul_nt(qh, kh), inv_sqrt);
        Tensor* weights = g.softmax_rows(scores, causal);
        heads.push_back(g.matmul(weights, vh));
    }
    Tensor* merged = g.concat_cols(heads);
    return g.matmul(merged, const_cast<Tensor*>(&block.wo));
}

Tensor* Seq2SeqModel::encode(Graph& g, const std::vector<int>& input_ids) const {
    std::vector<int> positions(input_ids.size());
    for (std::size_t i = 0; i < positions.size(); ++i) {
        positions[i] = static_cast<int>(i);
    }
    // The first position has no predecessor; it reads the padding row.
    std::vector<int> prev_ids(input_ids.size(), 0);
    for (std::size_t i = 1; i < prev_ids.size(); ++i) {
        prev_ids[i] = input_ids[i - 1];
    }
    Tensor* x = g.add(g.add(g.embed(const_cast<Tensor*>(&embedding_), input_ids),
                            g.embed(const_cast<Tensor*>(&prev_embedding_), prev_ids)),
                      g.embed(const_cast<Tensor*>(&pos_enc_), positions));
    for (const auto& layer : enc_layers_) {
        Tensor* h = g.layernorm(x, const_cast<Tensor*>(&layer.ln1.gain),
                                const_cast<Tensor*>(&layer.ln1.bias));
        x = g.add(x, attention(g, h, h, h, layer.attn, /*causal=*/false));
        Tensor* h2 = g.layernorm(x, const_cast<Tensor*>(&layer.ln2.gain),
                                 const_cast<Tensor*>(&layer.ln2.bias));
        Tensor* f = g.add_row(g.matmul(h2, const_cast<Tensor*>(&layer.ffn.w1)),
                              const_cast<Tensor*>(&layer.ffn.b1));
        f = g.add_row(g.matmul(g.gelu(f), const_cast<Tensor*>(&layer.ffn.w2)),
                      const_cast<Tensor*>(&layer.ffn.b2));
        x = g.add(x, f);
    }
    return g.layernorm(x, const_cast<Tensor*>(&ln_enc_out_.gain),
                       const_cast<Tensor*>(&ln_enc_out_.bias));
}

Tensor* Seq2SeqModel::decode(Graph& g, const std::vector<int>& decoder_ids, Tensor* enc_out) const {
    std::vector<int> positions(decoder_ids.size());
    for (std::size_t i = 0; i < positions.size(); ++i) {
        positions[i] = static_cast<int>(i);
    }
    Tensor* y = g.add(g.embed(const_cast<Tensor*>(&embedding_), decoder_ids),
                      g.embed(const_cast<Tensor*>(&pos_dec_), positions));
    for (const auto& layer : dec_layers_) {
        Tensor* h = g.layernorm(y, const_cast<Tensor*>(&layer.ln1.gain),
                                const_cast<Tensor*>(&layer.ln1.bias));
        y = g.add(y, attention(g, h, h, h, layer.self_attn, /*causal=*/true));
        Tensor* hc = g.layernorm(y, const_cast<Tensor*>(&layer.ln_cross.gain),
                                 const_cast<Tensor*>(&layer.ln_cross.bias));
        y = g.add(y, attention(g, hc, enc_out, enc_out, layer.cross_attn, /*causal=*/false));
        Tensor* h2 = g.layernorm(y, const_cast<Tensor*>(&layer.ln2.gain),
                                 const_cast<Tensor*>(&layer.ln2.bias));
        Tensor* f = g.add_row(g.matmul(h2, const_cast<Tensor*>(&layer.ffn.w1)),
                              const_cast<Tensor*>(&layer.ffn.b1));
        f = g.add_row(g.matmul(g.gelu(f), const_cast<Tensor*>(&layer.ffn.w2)),
                      const_cast<Tensor*>(&layer.ffn.b2));
        y = g.add(y, f);
    }
    return g.layernorm(y, const_cast<Tensor*>(&ln_dec_out_.gain),
                       const_cast<Tensor*>(&ln_dec_out_.bias));
}

Tensor* Seq2SeqModel::logits_for(Graph& g, const std::vector<int>& input_ids,
                                 const std::vector<int>& decoder_ids) const {
    Tensor* enc_out = encode(g, input_ids);
    Tensor* dec_out = decode(g, decoder_ids, enc_out);
    return g.matmul_nt(dec_out, const_cast<Tensor*>(&embedding_));
}

CrossEntropyValue Seq2SeqModel::example_loss(const std::vector<int>& input_ids,
                                             const std::vector<int>& target_ids, double loss_scale,
                                             bool record) {
    if (input_ids.empty() || target_ids.empty()) {
        throw DataError("example_loss requires non-empty input and target token sequences");
    }
    if (static_cast<int>(input_ids.size()) > max_input_) {
        throw DataError("input length " + std::to_string(input_ids.size()) +
                        " exceeds max_input_tokens " + std::to_string(max_input_));
    }
    if (static_cast<int>(target_ids.size()) + 1 > static_cast<int>(pos_dec_.rows)) {
        throw DataError("target length " + std::to_string(target_ids.size()) +
                        " exceeds max_target_tokens " + std::to_string(max_target_));
    }
    // Teacher forcing: decoder consumes BOS + target, labels are target + EOS.
    std::vector<int> dec_ids;
    dec_ids.reserve(target_ids.size() + 1);
    dec_ids.push_back(1);
    dec_ids.insert(dec_ids.end(), target_ids.begin(), target_ids.end());
    std::vector<int> labels(target_ids.begin(), target_ids.end());
    labels.push_back(2);

    Graph g(record);
    Tensor* logits = logits_for(g, input_ids, dec_ids);
    CrossEntropyValue value = g.cross_entropy_logits(logits, labels, loss_scale, prob_floor);
    floored_positions += value.floored;
    if (record) {
        g.backward();
    }
    return value;
}

std::vector<int> Seq2SeqModel::generate_greedy(const std::vector<int>& input_ids) const {
    std::vector<int> out;
    std::vector<int> dec_ids{1};
    for (int step = 0; step < max_target_; ++step) {
        Graph g(/*record=*/false);
        Tensor* logits = logits_for(g, input_ids, dec_ids);
        const double* last = logits->row(logits->rows - 1);
        // PAD and BOS are never emitted; ties resolve to the lowest id.
        int best = 2;
        double best_v = last[2];
        for (int c = 3; c < vocab_size_; ++c) {
            if (last[c] > best_v) {
                best_v = last[c];
                best = c;
            }
        }
        if (best == 2) {
            break;
        }
        out.push_back(best);
        dec_ids.push_back(best);
    }
    return out;
}

std::vector<int> Seq2SeqModel::generate_beam(const std::vector<int>& input_ids,
                                             int beam_width) const {
    if (beam_width <= 1) {
        return generate_greedy(input_ids);
    }
    struct Hyp {
        std::vector<int> ids;  // emitted tokens, no BOS/EOS
        double logp = 0.0;
        bool done = false;
    };
    std::vector<Hyp> beam{Hyp{}};
    for (int step = 0; step < max_target_; ++step) {
        bool all_done = true;
        struct Cand {
            std::size_t hyp;
            int token;  // -1 carries a finished hypothesis forward
            double logp;
        };
        std::vector<Cand> cands;
        for (std::size_t hi = 0; hi < beam.size(); ++hi) {
            const Hyp& hyp = beam[hi];
            if (hyp.done) {
                cands.push_back({hi, -1, hyp.logp});
                continue;
            }
            all_done = false;
            std::vector<int> dec_ids{1};
            dec_ids.insert(dec_ids.end(), hyp.ids.begin(), hyp.ids.end());
            Graph g(/*record=*/false);
            Tensor* logits = logits_for(g, input_ids, dec_ids);
            const double* last = logits->row(logits->rows - 1);
            double mx = last[2];
            for (int c = 3; c < vocab_size_; ++c) {
                mx = std::max(mx, last[c]);
            }
            double lse = 0.0;
            for (int c = 2; c < vocab_size_; ++c) {
                lse += std::exp(last[c] - mx);
            }
            lse = mx + std::log(lse);
            for (int c = 2; c < vocab_size_; ++c) {
                cands.push_back({hi, c, hyp.logp + last[c] - lse});
            }
        }
        if (all_done) {
            break;
        }
        std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
            if (a.logp != b.logp) {
                return a.logp > b.logp;
            }
            if (a.hyp != b.hyp) {
                return a.hyp < b.hyp;
            }
            return a.token < b.token;
        });
        std::vector<Hyp> next;
        for (const Cand& cand : cands) {
            if (static_cast<int>(next.size()) >= beam_width) {
                break;
            }
            const Hyp& src = beam[cand.hyp];
            if (cand.token == -1) {
                next.push_back(src);
            } else if (cand.token == 2) {
                Hyp h = src;
                h.done = true;
                h.logp = cand.logp;
                next.push_back(h);
            } else {
                Hyp h = src;
                h.ids.push_back(cand.token);
                h.logp = cand.logp;
                next.push_back(h);
            }
        }
        beam = std::move(next);
    }
    const Hyp* best = &beam.front();
    for (const Hyp& h : beam) {
        // Finished hypotheses win over unfinished at equal score.
        if (h.logp > best->logp || (h.logp == best->logp && h.done && !best->done)) {
            best = &h;
        }
    }
    return best->ids;
}

void Seq2SeqModel::zero_grads() {
    for (auto& [name, tensor] : params_) {
        tensor->zero_grad();
    }
}

void Seq2SeqModel::adam_step(double lr, double beta1, double beta2, double eps, double clip_norm,
                             double weight_decay) {
    if (clip_norm > 0.0) {
        double sq = 0.0;
        for (auto& [name, tensor] : params_) {
            for (double gv : tensor->g) {
                sq += gv * gv;
            }
        }
        double norm = std::sqrt(sq);
        if (norm > clip_norm) {
            double factor = clip_norm / norm;
            for (auto& [name, tensor] : params_) {
                for (double& gv : tensor->g) {
                    gv *= factor;
                }
            }
        }
    }
    ++adam_step_count_;
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(adam_step_count_));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(adam_step_count_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        const std::string& name = params_[i].first;
        bool decays = weight_decay > 0.0 && name.find(".gain") == std::string::npos &&
                      name.find(".bias") == std::string::npos &&
                      name.find(".b1") == std::string::npos &&
                      name.find(".b2") == std::string::npos;
        Tensor* t = params_[i].second;
        std::vector<double>& m = adam_m_[i];
        std::vector<double>& v = adam_v_[i];
        for (std::size_t k = 0; k < t->size(); ++k) {
            double gv = t->g[k];
            m[k] = beta1 * m[k] + (1.0 - beta1) * gv;
            v[k] = beta2 * v[k] + (1.0 - beta2) * gv * gv;
            double mhat = m[k] / bc1;
            double vhat = v[k] / bc2;
            t->v[k] -= lr * mhat / (std::sqrt(vhat) + eps);
            if (decays) {
                t->v[k] -= lr * weight_decay * t->v[k];
            }
        }
    }
}

namespace {
constexpr char kWeightsMagic[8] = {'S', 'C', 'W', 'T', '0', '0', '0', '1'};
}

void Seq2SeqModel::save_weights(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw DataError("cannot open weights file for writing: " + path.string());
    }
    out.write(kWeightsMagic, sizeof(kWeightsMagic));
    std::uint32_t count = static_cast<std::uint32_t>(params_.size());
    out.write(reinterpret_cast<const char*>(&count), sizeof(count));
    for (const auto& [name, tensor] : params_) {
        std::uint32_t name_len = static_cast<std::uint32_t>(name.size());
        std::uint64_t rows = tensor->rows;
        std::uint64_t cols = tensor->cols;
        out.write(reinterpret_cast<const char*>(&name_len), sizeof(name_len));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        out.write(reinterpret_cast<const char*>(&rows), sizeof(rows));
        out.write(reinterpret_cast<const char*>(&cols), sizeof(cols));
        out.write(reinterpret_cast<const char*>(tensor->v.data()),
                  static_cast<std::streamsize>(tensor->v.size() * sizeof(double)));
    }
    if (!out) {
        throw DataError("failed writing weights file: " + path.string());
    }
}

void Seq2SeqModel::load_weights(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open weights file: " + path.string());
    }
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kWeightsMagic, sizeof(magic)) != 0) {
        throw DataError("weights file has unknown format: " + path.string());
    }
    std::uint32_t count = 0;
    in.read(reinterpret_cast<char*>(&count), sizeof(count));
    if (!in || count != params_.size()) {
        throw DataError("weights file parameter count mismatch in " + path.string());
    }
    for (auto& [name, tensor] : params_) {
        std::uint32_t name_len = 0;
        in.read(reinterpret_cast<char*>(&name_len), sizeof(name_len));
        std::string stored(name_len, '\0');
        in.read(stored.data(), name_len);
        std::uint64_t rows = 0;
        std::uint64_t cols = 0;
        in.read(reinterpret_cast<char*>(&rows), sizeof(rows));
        in.read(reinterpret_cast<char*>(&cols), sizeof(cols));
        if (!in || stored != name || rows != tensor->rows || cols != tensor->cols) {
            throw DataError("weights file does not match model shape at parameter '" + name +
                            "' in " + path.string());
        }
        in.read(reinterpret_cast<char*>(tensor->v.data()),
                static_cast<std::streamsize>(tensor->v.size() * sizeof(double)));
        if (!in) {
            throw DataError("weights file truncated at parameter '" + name + "' in " +
                            path.string());
        }
    }
}

}  // namespace scicot
