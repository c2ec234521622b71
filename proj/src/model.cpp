/*
 * Copyright (c) 2026, The mgbert Authors.  All rights reserved.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "mgbert/model.hpp"

#include "mgbert/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <mutex>
#include <numbers>

namespace mgbert
{

std::string to_string(Target t)
{
    switch (t)
    {
    case Target::kQuery: return "wq";
    case Target::kKey: return "wk";
    case Target::kValue: return "wv";
    case Target::kOutput: return "wo";
    case Target::kUp: return "w_up";
    case Target::kDown: return "w_down";
    }
    return "?";
}

Target target_from_string(std::string const& name)
{
    for (auto const t : kAllTargets)
    {
        if (to_string(t) == name)
        {
            return t;
        }
    }
    throw ConfigError("unknown adapter target '" + name + "'");
}

template <typename T>
Linear<T>& LayerParams<T>::proj(Target t)
{
    switch (t)
    {
    case Target::kQuery: return wq;
    case Target::kKey: return wk;
    case Target::kValue: return wv;
    case Target::kOutput: return wo;
    case Target::kUp: return w_up;
    case Target::kDown: return w_down;
    }
    throw ArgumentError("bad target");
}

template <typename T>
Linear<T> const& LayerParams<T>::proj(Target t) const
{
    return const_cast<LayerParams<T>*>(this)->proj(t);
}

namespace
{

template <typename P, typename M>
void collect_named(P& p, std::vector<std::pair<std::string, M*>>& out)
{
    auto add = [&](std::string name, auto& m)
    {
        if (m.size() > 0)
        {
            out.emplace_back(std::move(name), &m);
        }
    };
    auto add_linear = [&](std::string const& name, auto& l)
    {
        add(name + ".weight", l.weight);
        add(name + ".bias", l.bias);
    };
    auto add_norm = [&](std::string const& name, auto& n)
    {
        add(name + ".scale", n.scale);
        add(name + ".offset", n.offset);
    };
    add("embed.tokens", p.token_embedding);
    for (std::size_t i = 0; i < p.layers.size(); ++i)
    {
        auto& layer = p.layers[i];
        auto const prefix = "layers." + std::to_string(i) + ".";
        add_norm(prefix + "attn_norm", layer.attn_norm);
        add_linear(prefix + "wq", layer.wq);
        add_linear(prefix + "wk", layer.wk);
        add_linear(prefix + "wv", layer.wv);
        add_linear(prefix + "wo", layer.wo);
        add_norm(prefix + "mlp_norm", layer.mlp_norm);
        add_linear(prefix + "w_up", layer.w_up);
        add_linear(prefix + "w_down", layer.w_down);
    }
    add_norm("final_norm", p.final_norm);
    add_linear("mlm_head", p.mlm_head);
    add_linear("span_head", p.span_head);
}

} // namespace

template <typename T>
std::vector<std::pair<std::string, Matrix<T>*>> ModelParams<T>::named()
{
    std::vector<std::pair<std::string, Matrix<T>*>> out;
    collect_named(*this, out);
    return out;
}

template <typename T>
std::vector<std::pair<std::string, Matrix<T> const*>> ModelParams<T>::named() const
{
    std::vector<std::pair<std::string, Matrix<T> const*>> out;
    collect_named(*this, out);
    return out;
}

template <typename T>
ModelParams<T> zeros_like(ModelParams<T> const& p)
{
    ModelParams<T> z = p;
    for (auto& [name, m] : z.named())
    {
        m->zero();
    }
    return z;
}

template <typename To, typename From>
ModelParams<To> cast_params(ModelParams<From> const& p)
{
    ModelParams<To> out;
    auto linear = [](Linear<From> const& l) { return Linear<To>{cast_matrix<To>(l.weight), cast_matrix<To>(l.bias)}; };
    auto norm = [](NormParams<From> const& n)
    { return NormParams<To>{cast_matrix<To>(n.scale), cast_matrix<To>(n.offset)}; };
    out.token_embedding = cast_matrix<To>(p.token_embedding);
    for (auto const& l : p.layers)
    {
        LayerParams<To> lp;
        lp.attn_norm = norm(l.attn_norm);
        lp.wq = linear(l.wq);
        lp.wk = linear(l.wk);
        lp.wv = linear(l.wv);
        lp.wo = linear(l.wo);
        lp.mlp_norm = norm(l.mlp_norm);
        lp.w_up = linear(l.w_up);
        lp.w_down = linear(l.w_down);
        out.layers.push_back(std::move(lp));
    }
    out.final_norm = norm(p.final_norm);
    out.mlm_head = linear(p.mlm_head);
    out.span_head = linear(p.span_head);
    return out;
}

namespace
{

Linear<double> make_linear(std::int64_t out, std::int64_t in, bool bias)
{
    return {Matrix<double>(out, in), bias ? Matrix<double>(1, out) : Matrix<double>{}};
}

NormParams<double> make_norm(ArchConfig const& cfg)
{
    NormParams<double> n{Matrix<double>(1, cfg.hidden, 1.0), {}};
    if (cfg.norm == NormKind::kLayerNorm)
    {
        n.offset = Matrix<double>(1, cfg.hidden, 0.0);
    }
    return n;
}

ModelParams<double> make_shapes(ArchConfig const& cfg)
{
    ModelParams<double> p;
    auto const h = cfg.hidden;
    p.token_embedding = Matrix<double>(cfg.vocab_size, h);
    for (std::int64_t i = 0; i < cfg.n_layers; ++i)
    {
        LayerParams<double> l;
        l.attn_norm = make_norm(cfg);
        l.wq = make_linear(h, h, cfg.linear_bias);
        l.wk = make_linear(h, h, cfg.linear_bias);
        l.wv = make_linear(h, h, cfg.linear_bias);
        l.wo = make_linear(h, h, cfg.linear_bias);
        l.mlp_norm = make_norm(cfg);
        l.w_up = make_linear(2 * cfg.intermediate, h, cfg.linear_bias);
        l.w_down = make_linear(h, cfg.intermediate, cfg.linear_bias);
        p.layers.push_back(std::move(l));
    }
    p.final_norm = make_norm(cfg);
    if (!cfg.tie_mlm_head)
    {
        p.mlm_head = make_linear(cfg.vocab_size, h, true);
    }
    p.span_head = make_linear(2, h, true);
    return p;
}

} // namespace

ModelParams<float> init_params(ArchConfig const& cfg, std::uint64_t seed)
{
    require_valid(cfg);
    auto p = make_shapes(cfg);
    Rng rng(seed);
    double const base_std = 0.02;
    double const out_std = base_std / std::sqrt(2.0 * static_cast<double>(cfg.n_layers));
    auto fill = [&](Matrix<double>& m, double std)
    {
        for (auto& x : m.data)
        {
            x = rng.normal() * std;
        }
    };
    fill(p.token_embedding, base_std);
    for (auto& l : p.layers)
    {
        fill(l.wq.weight, base_std);
        fill(l.wk.weight, base_std);
        fill(l.wv.weight, base_std);
        fill(l.wo.weight, out_std);
        fill(l.w_up.weight, base_std);
        fill(l.w_down.weight, out_std);
    }
    if (p.mlm_head.weight.size() > 0)
    {
        fill(p.mlm_head.weight, base_std);
    }
    fill(p.span_head.weight, base_std);
    return cast_params<float>(p);
}

template <typename T>
void check_shapes(ModelParams<T> const& p, ArchConfig const& cfg)
{
    auto const expected = make_shapes(cfg);
    auto const want = expected.named();
    auto const have = p.named();
    if (want.size() != have.size())
    {
        throw ArgumentError("parameter tensor count does not match config");
    }
    for (std::size_t i = 0; i < want.size(); ++i)
    {
        if (want[i].first != have[i].first || want[i].second->rows != have[i].second->rows
            || want[i].second->cols != have[i].second->cols)
        {
            throw ArgumentError("tensor '" + have[i].first + "' has the wrong shape for this config");
        }
    }
}

TokenLayout layout_of(PackedBatch const& batch)
{
    require_valid(batch);
    TokenLayout l;
    l.tokens = batch.tokens;
    l.segments = segments_of(batch);
    l.valid_rows.resize(batch.tokens.size());
    for (std::size_t i = 0; i < l.valid_rows.size(); ++i)
    {
        l.valid_rows[i] = static_cast<std::int64_t>(i);
    }
    return l;
}

TokenLayout layout_of(PaddedBatch const& batch)
{
    TokenLayout l;
    l.tokens = batch.tokens;
    l.segments = segments_of(batch);
    for (auto const& s : l.segments)
    {
        for (std::int64_t i = 0; i < s.valid; ++i)
        {
            l.valid_rows.push_back(s.begin + i);
        }
    }
    return l;
}

std::shared_ptr<RopeTable const> rope_table(double theta, std::int64_t head_dim, std::int64_t min_positions)
{
    static std::mutex mutex;
    static std::map<std::pair<double, std::int64_t>, std::shared_ptr<RopeTable const>> cache;
    std::lock_guard lock(mutex);
    auto& slot = cache[{theta, head_dim}];
    if (!slot || slot->max_positions() < min_positions)
    {
        // Entries depend only on (theta, head_dim, position), so growing is transparent.
        auto const size = std::max<std::int64_t>(min_positions, slot ? 2 * slot->max_positions() : 128);
        slot = std::make_shared<RopeTable const>(theta, head_dim, size);
    }
    return slot;
}

namespace
{

template <typename T>
Matrix<T> linear_forward(
    Matrix<T> const& x, Linear<T> const& l, LowRankPair<T> const* lora, std::map<Target, Matrix<T>>* lora_cache, Target t)
{
    Matrix<T> y(x.rows, l.weight.rows);
    gemm_nt_acc(x, l.weight, y);
    if (l.bias.size() > 0)
    {
        for (std::int64_t r = 0; r < y.rows; ++r)
        {
            axpy(T(1), l.bias.data.data(), y.row(r), y.cols);
        }
    }
    if (lora != nullptr)
    {
        auto h = gemm_nt(x, lora->a);
        auto delta = gemm_nt(h, lora->b);
        for (std::size_t i = 0; i < y.data.size(); ++i)
        {
            y.data[i] += lora->scale * delta.data[i];
        }
        if (lora_cache != nullptr)
        {
            (*lora_cache)[t] = std::move(h);
        }
    }
    return y;
}

template <typename T>
void linear_backward(Matrix<T> const& x, Linear<T> const& l, LowRankPair<T> const* lora, Matrix<T> const* lora_hidden,
    Matrix<T> const& dy, Matrix<T>& dx, Linear<T>* grad, LowRankPair<T>* lora_grad)
{
    gemm_nn_acc(dy, l.weight, dx);
    if (grad != nullptr)
    {
        gemm_tn_acc(dy, x, grad->weight);
        if (grad->bias.size() > 0)
        {
            for (std::int64_t r = 0; r < dy.rows; ++r)
            {
                axpy(T(1), dy.row(r), grad->bias.data.data(), dy.cols);
            }
        }
    }
    if (lora != nullptr)
    {
        auto dh = gemm_nn(dy, lora->b);
        for (auto& v : dh.data)
        {
            v *= lora->scale;
        }
        gemm_nn_acc(dh, lora->a, dx);
        if (lora_grad != nullptr)
        {
            Matrix<T> db(lora->b.rows, lora->b.cols);
            gemm_tn_acc(dy, *lora_hidden, db);
            for (std::size_t i = 0; i < db.data.size(); ++i)
            {
                lora_grad->b.data[i] += lora->scale * db.data[i];
            }
            gemm_tn_acc(dh, x, lora_grad->a);
        }
    }
}

template <typename T>
Matrix<T> norm_forward(Matrix<T> const& x, NormParams<T> const& p, ArchConfig const& cfg, NormCache<T>* cache)
{
    Matrix<T> y(x.rows, x.cols);
    auto const n = x.cols;
    T const eps = static_cast<T>(cfg.norm_eps);
    bool const layer_norm = cfg.norm == NormKind::kLayerNorm;
    if (cache != nullptr)
    {
        cache->input = x;
        cache->mean.assign(static_cast<std::size_t>(x.rows), T(0));
        cache->rstd.assign(static_cast<std::size_t>(x.rows), T(0));
    }
    for (std::int64_t r = 0; r < x.rows; ++r)
    {
        T const* xr = x.row(r);
        T mean = 0;
        if (layer_norm)
        {
            for (std::int64_t i = 0; i < n; ++i)
            {
                mean += xr[i];
            }
            mean /= static_cast<T>(n);
        }
        T var = 0;
        for (std::int64_t i = 0; i < n; ++i)
        {
            T const c = xr[i] - mean;
            var += c * c;
        }
        var /= static_cast<T>(n);
        T const rstd = T(1) / std::sqrt(var + eps);
        T* yr = y.row(r);
        for (std::int64_t i = 0; i < n; ++i)
        {
            yr[i] = (xr[i] - mean) * rstd * p.scale.data[static_cast<std::size_t>(i)];
            if (layer_norm)
            {
                yr[i] += p.offset.data[static_cast<std::size_t>(i)];
            }
        }
        if (cache != nullptr)
        {
            cache->mean[static_cast<std::size_t>(r)] = mean;
            cache->rstd[static_cast<std::size_t>(r)] = rstd;
        }
    }
    return y;
}

template <typename T>
Matrix<T> norm_backward(
    NormCache<T> const& cache, NormParams<T> const& p, ArchConfig const& cfg, Matrix<T> const& dy, NormParams<T>* grad)
{
    auto const& x = cache.input;
    Matrix<T> dx(x.rows, x.cols);
    auto const n = x.cols;
    bool const layer_norm = cfg.norm == NormKind::kLayerNorm;
    std::vector<T> xhat(static_cast<std::size_t>(n));
    std::vector<T> dyhat(static_cast<std::size_t>(n));
    for (std::int64_t r = 0; r < x.rows; ++r)
    {
        T const mean = cache.mean[static_cast<std::size_t>(r)];
        T const rstd = cache.rstd[static_cast<std::size_t>(r)];
        T const* xr = x.row(r);
        T const* dyr = dy.row(r);
        T sum_dyhat = 0;
        T sum_dyhat_xhat = 0;
        for (std::int64_t i = 0; i < n; ++i)
        {
            auto const idx = static_cast<std::size_t>(i);
            xhat[idx] = (xr[i] - mean) * rstd;
            dyhat[idx] = dyr[i] * p.scale.data[idx];
            sum_dyhat += dyhat[idx];
            sum_dyhat_xhat += dyhat[idx] * xhat[idx];
            if (grad != nullptr)
            {
                grad->scale.data[idx] += dyr[i] * xhat[idx];
                if (layer_norm)
                {
                    grad->offset.data[idx] += dyr[i];
                }
            }
        }
        T const mean_dyhat = layer_norm ? sum_dyhat / static_cast<T>(n) : T(0);
        T const mean_dyhat_xhat = sum_dyhat_xhat / static_cast<T>(n);
        T* dxr = dx.row(r);
        for (std::int64_t i = 0; i < n; ++i)
        {
            auto const idx = static_cast<std::size_t>(i);
            dxr[i] = rstd * (dyhat[idx] - mean_dyhat - xhat[idx] * mean_dyhat_xhat);
        }
    }
    return dx;
}

template <typename T>
T activate(T x, Activation a)
{
    if (a == Activation::kGelu)
    {
        return T(0.5) * x * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
    }
    return x / (T(1) + std::exp(-x));
}

template <typename T>
T activate_grad(T x, Activation a)
{
    if (a == Activation::kGelu)
    {
        T const cdf = T(0.5) * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
        T const pdf = std::exp(T(-0.5) * x * x) * (std::numbers::inv_sqrtpi_v<T> / std::numbers::sqrt2_v<T>);
        return cdf + x * pdf;
    }
    T const s = T(1) / (T(1) + std::exp(-x));
    return s * (T(1) + x * (T(1) - s));
}

MaskSpec mask_for_layer(ArchConfig const& cfg, std::int64_t layer)
{
    if (cfg.attention_mode == AttentionMode::kCausal)
    {
        return {MaskKind::kCausal, 0};
    }
    if (cfg.is_global_layer(layer))
    {
        return {MaskKind::kGlobal, 0};
    }
    return {MaskKind::kSlidingWindow, cfg.local_window};
}

std::vector<std::int64_t> positions_of(TokenLayout const& layout)
{
    std::vector<std::int64_t> pos(layout.tokens.size(), 0);
    for (auto const& s : layout.segments)
    {
        for (std::int64_t i = 0; i < s.length; ++i)
        {
            pos[static_cast<std::size_t>(s.begin + i)] = i;
        }
    }
    return pos;
}

template <typename T>
LowRankPair<T> const* adapter_for(ForwardOptions<T> const& options, std::int64_t layer, Target t)
{
    return options.adapters == nullptr ? nullptr : options.adapters->find(layer, t);
}

template <typename T>
struct LayerContext
{
    ArchConfig const& cfg;
    std::int64_t layer;
    TokenLayout const& layout;
    std::vector<std::int64_t> const& positions;
    ForwardOptions<T> const& options;
};

template <typename T>
Matrix<T> attention_block_forward(
    Matrix<T> const& in, LayerParams<T> const& lp, LayerContext<T> const& ctx, LayerCache<T>& cache)
{
    auto const& cfg = ctx.cfg;
    auto* lora_cache = &cache.lora_hidden;
    auto q = linear_forward(in, lp.wq, adapter_for(ctx.options, ctx.layer, Target::kQuery), lora_cache, Target::kQuery);
    auto k = linear_forward(in, lp.wk, adapter_for(ctx.options, ctx.layer, Target::kKey), lora_cache, Target::kKey);
    auto v = linear_forward(in, lp.wv, adapter_for(ctx.options, ctx.layer, Target::kValue), lora_cache, Target::kValue);

    std::int64_t longest = 1;
    for (auto const& s : ctx.layout.segments)
    {
        longest = std::max(longest, s.length);
    }
    auto const table = rope_table(cfg.rope_theta_for_layer(ctx.layer), cfg.head_dim, longest);
    for (std::int64_t r = 0; r < q.rows; ++r)
    {
        auto const pos = ctx.positions[static_cast<std::size_t>(r)];
        for (std::int64_t h = 0; h < cfg.n_heads; ++h)
        {
            rope_rotate(q.row(r) + h * cfg.head_dim, pos, *table);
            rope_rotate(k.row(r) + h * cfg.head_dim, pos, *table);
        }
    }

    auto const spec = mask_for_layer(cfg, ctx.layer);
    Matrix<T> context(in.rows, cfg.hidden);
    cache.softmax.assign(static_cast<std::size_t>(cfg.n_heads), {});
    for (std::int64_t h = 0; h < cfg.n_heads; ++h)
    {
        auto& stats = cache.softmax[static_cast<std::size_t>(h)];
        stats.row_max.assign(static_cast<std::size_t>(in.rows), T(0));
        stats.row_sum.assign(static_cast<std::size_t>(in.rows), T(0));
        auto const off = h * cfg.head_dim;
        attention_head_forward<T>({q.data.data() + off, q.cols}, {k.data.data() + off, k.cols},
            {v.data.data() + off, v.cols}, {context.data.data() + off, context.cols}, cfg.head_dim,
            ctx.layout.segments, spec, &stats);
    }

    auto out = linear_forward(
        context, lp.wo, adapter_for(ctx.options, ctx.layer, Target::kOutput), lora_cache, Target::kOutput);

    cache.dropout_mask.clear();
    auto const rate = ctx.options.dropout_rate;
    if (ctx.options.mode == Mode::kTrain && rate > 0.0)
    {
        if (ctx.options.rng == nullptr)
        {
            throw ArgumentError("training-mode dropout needs an rng");
        }
        T const keep_scale = static_cast<T>(1.0 / (1.0 - rate));
        cache.dropout_mask.resize(out.data.size());
        for (std::size_t i = 0; i < out.data.size(); ++i)
        {
            cache.dropout_mask[i] = ctx.options.rng->uniform() >= rate ? keep_scale : T(0);
            out.data[i] *= cache.dropout_mask[i];
        }
    }

    cache.attn_in = in;
    cache.q = std::move(q);
    cache.k = std::move(k);
    cache.v = std::move(v);
    cache.context = std::move(context);
    return out;
}

template <typename T>
Matrix<T> attention_block_backward(Matrix<T> const& d_out_in, LayerParams<T> const& lp, LayerContext<T> const& ctx,
    LayerCache<T> const& cache, LayerParams<T>* grad, AdapterGrads<T>* agrad)
{
    auto const& cfg = ctx.cfg;
    auto lora_hidden = [&](Target t) -> Matrix<T> const*
    {
        auto const it = cache.lora_hidden.find(t);
        return it == cache.lora_hidden.end() ? nullptr : &it->second;
    };
    auto lora_grad = [&](Target t) -> LowRankPair<T>*
    {
        if (agrad == nullptr)
        {
            return nullptr;
        }
        auto const it = agrad->pairs.find({ctx.layer, t});
        return it == agrad->pairs.end() ? nullptr : &it->second;
    };

    Matrix<T> d_out = d_out_in;
    if (!cache.dropout_mask.empty())
    {
        for (std::size_t i = 0; i < d_out.data.size(); ++i)
        {
            d_out.data[i] *= cache.dropout_mask[i];
        }
    }

    Matrix<T> d_context(d_out.rows, cfg.hidden);
    linear_backward(cache.context, lp.wo, adapter_for(ctx.options, ctx.layer, Target::kOutput),
        lora_hidden(Target::kOutput), d_out, d_context, grad ? &grad->wo : nullptr, lora_grad(Target::kOutput));

    auto const spec = mask_for_layer(cfg, ctx.layer);
    Matrix<T> dq(d_out.rows, cfg.hidden);
    Matrix<T> dk(d_out.rows, cfg.hidden);
    Matrix<T> dv(d_out.rows, cfg.hidden);
    for (std::int64_t h = 0; h < cfg.n_heads; ++h)
    {
        auto const off = h * cfg.head_dim;
        attention_head_backward<T>({cache.q.data.data() + off, cfg.hidden}, {cache.k.data.data() + off, cfg.hidden},
            {cache.v.data.data() + off, cfg.hidden}, {cache.context.data.data() + off, cfg.hidden},
            {d_context.data.data() + off, cfg.hidden}, {dq.data.data() + off, cfg.hidden},
            {dk.data.data() + off, cfg.hidden}, {dv.data.data() + off, cfg.hidden}, cfg.head_dim,
            ctx.layout.segments, spec, cache.softmax[static_cast<std::size_t>(h)]);
    }

    std::int64_t longest = 1;
    for (auto const& s : ctx.layout.segments)
    {
        longest = std::max(longest, s.length);
    }
    auto const table = rope_table(cfg.rope_theta_for_layer(ctx.layer), cfg.head_dim, longest);
    for (std::int64_t r = 0; r < dq.rows; ++r)
    {
        auto const pos = ctx.positions[static_cast<std::size_t>(r)];
        for (std::int64_t h = 0; h < cfg.n_heads; ++h)
        {
            rope_rotate(dq.row(r) + h * cfg.head_dim, pos, *table, true);
            rope_rotate(dk.row(r) + h * cfg.head_dim, pos, *table, true);
        }
    }

    Matrix<T> d_in(d_out.rows, cfg.hidden);
    linear_backward(cache.attn_in, lp.wq, adapter_for(ctx.options, ctx.layer, Target::kQuery),
        lora_hidden(Target::kQuery), dq, d_in, grad ? &grad->wq : nullptr, lora_grad(Target::kQuery));
    linear_backward(cache.attn_in, lp.wk, adapter_for(ctx.options, ctx.layer, Target::kKey), lora_hidden(Target::kKey),
        dk, d_in, grad ? &grad->wk : nullptr, lora_grad(Target::kKey));
    linear_backward(cache.attn_in, lp.wv, adapter_for(ctx.options, ctx.layer, Target::kValue),
        lora_hidden(Target::kValue), dv, d_in, grad ? &grad->wv : nullptr, lora_grad(Target::kValue));
    return d_in;
}

template <typename T>
Matrix<T> ffn_forward(Matrix<T> const& in, LayerParams<T> const& lp, LayerContext<T> const& ctx, LayerCache<T>& cache)
{
    auto const inter = ctx.cfg.intermediate;
    auto up = linear_forward(in, lp.w_up, adapter_for(ctx.options, ctx.layer, Target::kUp), &cache.lora_hidden,
        Target::kUp);
    Matrix<T> act(in.rows, inter);
    for (std::int64_t r = 0; r < in.rows; ++r)
    {
        T const* ur = up.row(r);
        T* ar = act.row(r);
        for (std::int64_t i = 0; i < inter; ++i)
        {
            ar[i] = activate(ur[i], ctx.cfg.activation) * ur[inter + i];
        }
    }
    auto out = linear_forward(act, lp.w_down, adapter_for(ctx.options, ctx.layer, Target::kDown), &cache.lora_hidden,
        Target::kDown);
    cache.ffn_in = in;
    cache.up = std::move(up);
    cache.act = std::move(act);
    return out;
}

template <typename T>
Matrix<T> ffn_backward(Matrix<T> const& d_out, LayerParams<T> const& lp, LayerContext<T> const& ctx,
    LayerCache<T> const& cache, LayerParams<T>* grad, AdapterGrads<T>* agrad)
{
    auto const inter = ctx.cfg.intermediate;
    auto lora_hidden = [&](Target t) -> Matrix<T> const*
    {
        auto const it = cache.lora_hidden.find(t);
        return it == cache.lora_hidden.end() ? nullptr : &it->second;
    };
    auto lora_grad = [&](Target t) -> LowRankPair<T>*
    {
        if (agrad == nullptr)
        {
            return nullptr;
        }
        auto const it = agrad->pairs.find({ctx.layer, t});
        return it == agrad->pairs.end() ? nullptr : &it->second;
    };
    Matrix<T> d_act(d_out.rows, inter);
    linear_backward(cache.act, lp.w_down, adapter_for(ctx.options, ctx.layer, Target::kDown),
        lora_hidden(Target::kDown), d_out, d_act, grad ? &grad->w_down : nullptr, lora_grad(Target::kDown));
    Matrix<T> d_up(d_out.rows, 2 * inter);
    for (std::int64_t r = 0; r < d_out.rows; ++r)
    {
        T const* ur = cache.up.row(r);
        T const* dar = d_act.row(r);
        T* dur = d_up.row(r);
        for (std::int64_t i = 0; i < inter; ++i)
        {
            T const gate = ur[i];
            T const value = ur[inter + i];
            dur[i] = dar[i] * value * activate_grad(gate, ctx.cfg.activation);
            dur[inter + i] = dar[i] * activate(gate, ctx.cfg.activation);
        }
    }
    Matrix<T> d_in(d_out.rows, ctx.cfg.hidden);
    linear_backward(cache.ffn_in, lp.w_up, adapter_for(ctx.options, ctx.layer, Target::kUp), lora_hidden(Target::kUp),
        d_up, d_in, grad ? &grad->w_up : nullptr, lora_grad(Target::kUp));
    return d_in;
}

} // namespace

template <typename T>
ForwardOutput<T> forward(ModelParams<T> const& params, ArchConfig const& cfg, TokenLayout const& layout,
    ForwardOptions<T> const& options, ForwardCache<T>* cache)
{
    for (auto const& s : layout.segments)
    {
        if (s.valid > cfg.max_seq_len)
        {
            throw LengthError("sequence of " + std::to_string(s.valid) + " tokens exceeds max_seq_len "
                + std::to_string(cfg.max_seq_len));
        }
    }
    auto const rows = static_cast<std::int64_t>(layout.tokens.size());
    Matrix<T> x(rows, cfg.hidden);
    for (std::int64_t r = 0; r < rows; ++r)
    {
        auto const id = layout.tokens[static_cast<std::size_t>(r)];
        if (id < 0 || id >= cfg.vocab_size)
        {
            throw ArgumentError("token id " + std::to_string(id) + " outside vocabulary");
        }
        std::copy_n(params.token_embedding.row(id), cfg.hidden, x.row(r));
    }

    auto const positions = positions_of(layout);
    ForwardCache<T> local;
    ForwardCache<T>& c = cache != nullptr ? *cache : local;
    c.layout = layout;
    c.layers.assign(static_cast<std::size_t>(cfg.n_layers), {});

    for (std::int64_t li = 0; li < cfg.n_layers; ++li)
    {
        auto const& lp = params.layers[static_cast<std::size_t>(li)];
        auto& lc = c.layers[static_cast<std::size_t>(li)];
        LayerContext<T> ctx{cfg, li, layout, positions, options};
        if (cfg.block_style == BlockStyle::kPreNorm)
        {
            auto h1 = norm_forward(x, lp.attn_norm, cfg, &lc.norm1);
            add_inplace(x, attention_block_forward(h1, lp, ctx, lc));
            auto h2 = norm_forward(x, lp.mlp_norm, cfg, &lc.norm2);
            add_inplace(x, ffn_forward(h2, lp, ctx, lc));
        }
        else
        {
            auto a = attention_block_forward(x, lp, ctx, lc);
            add_inplace(a, x);
            x = norm_forward(a, lp.attn_norm, cfg, &lc.norm1);
            auto f = ffn_forward(x, lp, ctx, lc);
            add_inplace(f, x);
            x = norm_forward(f, lp.mlp_norm, cfg, &lc.norm2);
        }
    }
    ForwardOutput<T> out;
    out.hidden_states = norm_forward(x, params.final_norm, cfg, &c.final_norm);
    return out;
}

template <typename T>
ForwardOutput<T> forward(ModelParams<T> const& params, ArchConfig const& cfg, PackedBatch const& batch,
    ForwardOptions<T> const& options, ForwardCache<T>* cache)
{
    return forward(params, cfg, layout_of(batch), options, cache);
}

template <typename T>
ForwardOutput<T> forward(ModelParams<T> const& params, ArchConfig const& cfg, PaddedBatch const& batch,
    ForwardOptions<T> const& options, ForwardCache<T>* cache)
{
    return forward(params, cfg, layout_of(batch), options, cache);
}

template <typename T>
void backward(ModelParams<T> const& params, ArchConfig const& cfg, ForwardCache<T> const& cache,
    ForwardOptions<T> const& options, Matrix<T> const& d_hidden, ModelParams<T>* grads, AdapterGrads<T>* adapter_grads)
{
    auto const positions = positions_of(cache.layout);
    Matrix<T> dx = norm_backward(cache.final_norm, params.final_norm, cfg, d_hidden, grads ? &grads->final_norm : nullptr);

    for (std::int64_t li = cfg.n_layers - 1; li >= 0; --li)
    {
        auto const& lp = params.layers[static_cast<std::size_t>(li)];
        auto const& lc = cache.layers[static_cast<std::size_t>(li)];
        auto* lg = grads ? &grads->layers[static_cast<std::size_t>(li)] : nullptr;
        LayerContext<T> ctx{cfg, li, cache.layout, positions, options};
        if (cfg.block_style == BlockStyle::kPreNorm)
        {
            auto d_h2 = ffn_backward(dx, lp, ctx, lc, lg, adapter_grads);
            add_inplace(dx, norm_backward(lc.norm2, lp.mlp_norm, cfg, d_h2, lg ? &lg->mlp_norm : nullptr));
            auto d_h1 = attention_block_backward(dx, lp, ctx, lc, lg, adapter_grads);
            add_inplace(dx, norm_backward(lc.norm1, lp.attn_norm, cfg, d_h1, lg ? &lg->attn_norm : nullptr));
        }
        else
        {
            auto d_s2 = norm_backward(lc.norm2, lp.mlp_norm, cfg, dx, lg ? &lg->mlp_norm : nullptr);
            auto d_mid = ffn_backward(d_s2, lp, ctx, lc, lg, adapter_grads);
            add_inplace(d_mid, d_s2);
            auto d_s1 = norm_backward(lc.norm1, lp.attn_norm, cfg, d_mid, lg ? &lg->attn_norm : nullptr);
            dx = attention_block_backward(d_s1, lp, ctx, lc, lg, adapter_grads);
            add_inplace(dx, d_s1);
        }
    }

    if (grads != nullptr)
    {
        for (std::int64_t r = 0; r < dx.rows; ++r)
        {
            auto const id = cache.layout.tokens[static_cast<std::size_t>(r)];
            axpy(T(1), dx.row(r), grads->token_embedding.row(id), cfg.hidden);
        }
    }
}

template <typename T>
Matrix<T> mlm_logits(Matrix<T> const& hidden, ModelParams<T> const& params, std::span<std::int64_t const> rows)
{
    bool const tied = params.mlm_head.weight.size() == 0;
    auto const& w = tied ? params.token_embedding : params.mlm_head.weight;
    auto const n = rows.empty() ? hidden.rows : static_cast<std::int64_t>(rows.size());
    Matrix<T> logits(n, w.rows);
    for (std::int64_t i = 0; i < n; ++i)
    {
        auto const r = rows.empty() ? i : rows[static_cast<std::size_t>(i)];
        T const* h = hidden.row(r);
        T* out = logits.row(i);
        for (std::int64_t v = 0; v < w.rows; ++v)
        {
            out[v] = dot(h, w.row(v), hidden.cols);
            if (!tied)
            {
                out[v] += params.mlm_head.bias.data[static_cast<std::size_t>(v)];
            }
        }
    }
    return logits;
}

template <typename T>
void mlm_logits_backward(Matrix<T> const& hidden, ModelParams<T> const& params, std::span<std::int64_t const> rows,
    Matrix<T> const& d_logits, Matrix<T>& d_hidden, ModelParams<T>* grads)
{
    bool const tied = params.mlm_head.weight.size() == 0;
    auto const& w = tied ? params.token_embedding : params.mlm_head.weight;
    Matrix<T>* gw = nullptr;
    if (grads != nullptr)
    {
        gw = tied ? &grads->token_embedding : &grads->mlm_head.weight;
    }
    for (std::int64_t i = 0; i < d_logits.rows; ++i)
    {
        auto const r = rows.empty() ? i : rows[static_cast<std::size_t>(i)];
        T const* dl = d_logits.row(i);
        T const* h = hidden.row(r);
        T* dh = d_hidden.row(r);
        for (std::int64_t v = 0; v < w.rows; ++v)
        {
            if (dl[v] == T(0))
            {
                continue;
            }
            axpy(dl[v], w.row(v), dh, hidden.cols);
            if (gw != nullptr)
            {
                axpy(dl[v], h, gw->row(v), hidden.cols);
            }
        }
        if (grads != nullptr && !tied)
        {
            axpy(T(1), dl, grads->mlm_head.bias.data.data(), w.rows);
        }
    }
}

template <typename T>
SpanScores<T> span_logits(Matrix<T> const& hidden, ModelParams<T> const& params, std::int64_t first_row, std::int64_t last_row)
{
    if (last_row < 0)
    {
        last_row = hidden.rows;
    }
    SpanScores<T> s;
    auto const& w = params.span_head.weight;
    auto const& b = params.span_head.bias;
    for (std::int64_t r = first_row; r < last_row; ++r)
    {
        s.start.push_back(dot(hidden.row(r), w.row(0), hidden.cols) + b.data[0]);
        s.end.push_back(dot(hidden.row(r), w.row(1), hidden.cols) + b.data[1]);
    }
    return s;
}

template <typename T>
void span_logits_backward(Matrix<T> const& hidden, ModelParams<T> const& params, std::int64_t first_row,
    SpanScores<T> const& d_scores, Matrix<T>& d_hidden, ModelParams<T>* grads)
{
    auto const& w = params.span_head.weight;
    for (std::size_t i = 0; i < d_scores.start.size(); ++i)
    {
        auto const r = first_row + static_cast<std::int64_t>(i);
        T const ds = d_scores.start[i];
        T const de = d_scores.end[i];
        axpy(ds, w.row(0), d_hidden.row(r), hidden.cols);
        axpy(de, w.row(1), d_hidden.row(r), hidden.cols);
        if (grads != nullptr)
        {
            axpy(ds, hidden.row(r), grads->span_head.weight.row(0), hidden.cols);
            axpy(de, hidden.row(r), grads->span_head.weight.row(1), hidden.cols);
            grads->span_head.bias.data[0] += ds;
            grads->span_head.bias.data[1] += de;
        }
    }
}

std::pair<std::int64_t, std::int64_t> best_span(
    std::span<float const> start, std::span<float const> end, std::int64_t max_answer_len)
{
    if (start.empty() || start.size() != end.size() || max_answer_len < 1)
    {
        throw ArgumentError("best_span needs matching non-empty score vectors and max_answer_len >= 1");
    }
    auto const n = static_cast<std::int64_t>(start.size());
    std::pair<std::int64_t, std::int64_t> best{0, 0};
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::int64_t s = 0; s < n; ++s)
    {
        auto const last = std::min(n, s + max_answer_len);
        for (std::int64_t e = s; e < last; ++e)
        {
            double const score
                = static_cast<double>(start[static_cast<std::size_t>(s)]) + static_cast<double>(end[static_cast<std::size_t>(e)]);
            if (score > best_score)
            {
                best_score = score;
                best = {s, e};
            }
        }
    }
    return best;
}

template <typename T>
std::vector<T> pool_mean(Matrix<T> const& hidden, std::span<std::int64_t const> valid_rows)
{
    if (valid_rows.empty())
    {
        throw ArgumentError("mean pooling needs at least one valid position");
    }
    std::vector<T> out(static_cast<std::size_t>(hidden.cols), T(0));
    for (auto const r : valid_rows)
    {
        axpy(T(1), hidden.row(r), out.data(), hidden.cols);
    }
    T const inv = T(1) / static_cast<T>(valid_rows.size());
    for (auto& v : out)
    {
        v *= inv;
    }
    return out;
}

template <typename T>
std::uint64_t digest(Matrix<T> const& m)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&](unsigned char byte)
    {
        h ^= byte;
        h *= 0x100000001b3ULL;
    };
    for (auto const dim : {m.rows, m.cols})
    {
        for (int i = 0; i < 8; ++i)
        {
            mix(static_cast<unsigned char>((static_cast<std::uint64_t>(dim) >> (8 * i)) & 0xFF));
        }
    }
    auto const* bytes = reinterpret_cast<unsigned char const*>(m.data.data());
    for (std::size_t i = 0; i < m.data.size() * sizeof(T); ++i)
    {
        mix(bytes[i]);
    }
    return h;
}

template <typename T>
std::map<std::string, std::uint64_t> digests(ModelParams<T> const& p)
{
    std::map<std::string, std::uint64_t> out;
    for (auto const& [name, m] : p.named())
    {
        out[name] = digest(*m);
    }
    return out;
}

#define MGBERT_INSTANTIATE_MODEL(T)                                                                                   \
    template struct LayerParams<T>;                                                                                  \
    template struct ModelParams<T>;                                                                                  \
    template ModelParams<T> zeros_like<T>(ModelParams<T> const&);                                                    \
    template void check_shapes<T>(ModelParams<T> const&, ArchConfig const&);                                        \
    template ForwardOutput<T> forward<T>(                                                                            \
        ModelParams<T> const&, ArchConfig const&, TokenLayout const&, ForwardOptions<T> const&, ForwardCache<T>*);   \
    template ForwardOutput<T> forward<T>(                                                                            \
        ModelParams<T> const&, ArchConfig const&, PackedBatch const&, ForwardOptions<T> const&, ForwardCache<T>*);   \
    template ForwardOutput<T> forward<T>(                                                                            \
        ModelParams<T> const&, ArchConfig const&, PaddedBatch const&, ForwardOptions<T> const&, ForwardCache<T>*);   \
    template void backward<T>(ModelParams<T> const&, ArchConfig const&, ForwardCache<T> const&,                      \
        ForwardOptions<T> const&, Matrix<T> const&, ModelParams<T>*, AdapterGrads<T>*);                              \
    template Matrix<T> mlm_logits<T>(Matrix<T> const&, ModelParams<T> const&, std::span<std::int64_t const>);        \
    template void mlm_logits_backward<T>(Matrix<T> const&, ModelParams<T> const&, std::span<std::int64_t const>,     \
        Matrix<T> const&, Matrix<T>&, ModelParams<T>*);                                                              \
    template SpanScores<T> span_logits<T>(Matrix<T> const&, ModelParams<T> const&, std::int64_t, std::int64_t);      \
    template void span_logits_backward<T>(                                                                           \
        Matrix<T> const&, ModelParams<T> const&, std::int64_t, SpanScores<T> const&, Matrix<T>&, ModelParams<T>*);   \
    template std::vector<T> pool_mean<T>(Matrix<T> const&, std::span<std::int64_t const>);                           \
    template std::uint64_t digest<T>(Matrix<T> const&);                                                              \
    template std::map<std::string, std::uint64_t> digests<T>(ModelParams<T> const&);

MGBERT_INSTANTIATE_MODEL(float)
MGBERT_INSTANTIATE_MODEL(double)

#undef MGBERT_INSTANTIATE_MODEL

template ModelParams<double> cast_params<double, float>(ModelParams<float> const&);
template ModelParams<float> cast_params<float, double>(ModelParams<double> const&);
template ModelParams<float> cast_params<float, float>(ModelParams<float> const&);

} // namespace mgbert
