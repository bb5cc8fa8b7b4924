#include "fffvdi/flowlab.hpp"

#include <cmath>
#include <vector>

namespace fffvdi::flowlab {
namespace {

// Adds a leading batch dimension if missing; returns whether it was added.
bool batched(torch::Tensor& t, int64_t expected_dim) {
    if (t.dim() == expected_dim - 1) {
        t = t.unsqueeze(0);
        return true;
    }
    return false;
}

}  // namespace

Sampled bilinear_sample(const torch::Tensor& field, const torch::Tensor& sx, const torch::Tensor& sy,
                        BorderPolicy policy) {
    require(field.dim() == 4, ErrorKind::Data, "bilinear_sample: field must be [N,D,H,W], got " + shape_str(field));
    require(sx.sizes() == sy.sizes() && sx.size(0) == field.size(0), ErrorKind::Data,
            "bilinear_sample: position shape mismatch");
    const int64_t N = field.size(0);
    const int64_t D = field.size(1);
    const int64_t H = field.size(2);
    const int64_t W = field.size(3);
    auto out_shape = sx.sizes().vec();
    auto px = sx.reshape({N, -1});
    auto py = sy.reshape({N, -1});
    const int64_t Q = px.size(1);

    if (policy == BorderPolicy::Clamp) {
        px = px.clamp(0, W - 1);
        py = py.clamp(0, H - 1);
    }
    auto x0 = px.floor();
    auto y0 = py.floor();
    auto wx = px - x0;
    auto wy = py - y0;
    auto x0i = x0.to(torch::kLong);
    auto y0i = y0.to(torch::kLong);

    auto flat = field.reshape({N, D, H * W});
    torch::Tensor values;
    auto bad = torch::zeros({N, Q}, torch::TensorOptions().dtype(torch::kBool).device(field.device()));
    for (int dy = 0; dy < 2; ++dy) {
        for (int dx = 0; dx < 2; ++dx) {
            auto w = (dx ? wx : 1 - wx) * (dy ? wy : 1 - wy);
            auto cx = x0i + dx;
            auto cy = y0i + dy;
            auto inside = (cx >= 0) & (cx < W) & (cy >= 0) & (cy < H);
            if (policy == BorderPolicy::ZeroInvalid) {
                bad = bad | ((w > 0) & ~inside);
            }
            auto idx = cy.clamp(0, H - 1) * W + cx.clamp(0, W - 1);
            auto gathered = flat.gather(2, idx.unsqueeze(1).expand({N, D, Q}));
            auto term = gathered * (w * inside.to(w.scalar_type())).unsqueeze(1);
            values = values.defined() ? values + term : term;
        }
    }
    auto value_shape = out_shape;
    value_shape.insert(value_shape.begin() + 1, D);
    return {values.reshape(value_shape), bad.reshape(out_shape)};
}

WarpResult warp(const torch::Tensor& field_in, const torch::Tensor& flow_in, const torch::Tensor& source_valid_in) {
    auto field = field_in;
    auto flow = flow_in;
    bool unbatched = batched(field, 4);
    batched(flow, 4);
    require(flow.size(1) == 2, ErrorKind::Data, "warp: flow must have 2 channels, got " + shape_str(flow_in));
    require(field.size(0) == flow.size(0) && field.size(2) == flow.size(2) && field.size(3) == flow.size(3),
            ErrorKind::Data, "warp: resolution mismatch field " + shape_str(field_in) + " flow " + shape_str(flow_in));
    const int64_t N = field.size(0);
    const int64_t H = field.size(2);
    const int64_t W = field.size(3);

    torch::Tensor source_valid;
    if (source_valid_in.defined()) {
        source_valid = source_valid_in;
        batched(source_valid, 4);
        require(source_valid.size(0) == N && source_valid.size(1) == 1 && source_valid.size(2) == H &&
                    source_valid.size(3) == W,
                ErrorKind::Data, "warp: validity shape mismatch " + shape_str(source_valid_in));
        source_valid = source_valid.to(field.scalar_type());
    } else {
        source_valid = torch::ones({N, 1, H, W}, field.options());
    }

    auto opts = flow.options();
    auto gx = torch::arange(W, opts).view({1, 1, W}) + flow.select(1, 0);
    auto gy = torch::arange(H, opts).view({1, H, 1}) + flow.select(1, 1);
    auto stacked = torch::cat({field, source_valid}, 1);
    auto s = bilinear_sample(stacked, gx.to(field.scalar_type()), gy.to(field.scalar_type()),
                             BorderPolicy::ZeroInvalid);
    const int64_t D = field.size(1);
    auto good = (~s.bad).unsqueeze(1).to(field.scalar_type());
    auto validity = s.values.narrow(1, D, 1) * good;
    auto values = s.values.narrow(1, 0, D) * (validity > 0).to(field.scalar_type());
    if (unbatched) {
        return {values.squeeze(0), validity.squeeze(0)};
    }
    return {values, validity};
}

torch::Tensor compose_pair(const torch::Tensor& prefix, const torch::Tensor& next) {
    require(prefix.sizes() == next.sizes(), ErrorKind::Data,
            "compose_flows: resolution mismatch " + shape_str(prefix) + " vs " + shape_str(next));
    auto a = prefix;
    auto b = next;
    bool unbatched = batched(a, 4);
    batched(b, 4);
    const int64_t H = a.size(2);
    const int64_t W = a.size(3);
    auto opts = a.options();
    auto gx = torch::arange(W, opts).view({1, 1, W}) + a.select(1, 0);
    auto gy = torch::arange(H, opts).view({1, H, 1}) + a.select(1, 1);
    auto sampled = bilinear_sample(b, gx, gy, BorderPolicy::Clamp).values;
    auto out = a + sampled;
    return unbatched ? out.squeeze(0) : out;
}

torch::Tensor compose_flows(std::span<const torch::Tensor> chain) {
    require(!chain.empty(), ErrorKind::Data, "compose_flows: empty chain");
    auto acc = chain[0];
    for (size_t k = 1; k < chain.size(); ++k) {
        acc = compose_pair(acc, chain[k]);
    }
    return acc;
}

torch::Tensor chain_to_first(const torch::Tensor& adjacent) {
    require(adjacent.dim() == 4 && adjacent.size(1) == 2, ErrorKind::Data,
            "chain_to_first: expected [S-1,2,H,W], got " + shape_str(adjacent));
    std::vector<torch::Tensor> rows;
    auto acc = adjacent[0];
    rows.push_back(acc);
    for (int64_t k = 1; k < adjacent.size(0); ++k) {
        acc = compose_pair(acc, adjacent[k]);
        rows.push_back(acc);
    }
    return torch::stack(rows);
}

CompletionResult complete_flow(const torch::Tensor& flow, const torch::Tensor& mask, const CompletionOptions& options) {
    require(flow.dim() == 3 && flow.size(0) == 2, ErrorKind::Data,
            "complete_flow: flow must be [2,H,W], got " + shape_str(flow));
    auto m2 = mask.dim() == 3 ? mask.squeeze(0) : mask;
    require(m2.dim() == 2 && m2.size(0) == flow.size(1) && m2.size(1) == flow.size(2), ErrorKind::Data,
            "complete_flow: mask " + shape_str(mask) + " does not match flow " + shape_str(flow));
    const int64_t H = flow.size(1);
    const int64_t W = flow.size(2);

    CompletionResult result;
    auto masked = (m2 > 0.5).cpu().contiguous();
    int64_t n_masked = masked.sum().item<int64_t>();
    if (n_masked == 0) {
        result.flow = flow.clone();
        return result;
    }
    if (n_masked == H * W) {
        result.flow = torch::zeros_like(flow);
        result.status = CompletionStatus::AllMasked;
        return result;
    }

    auto work = flow.detach().to(torch::kFloat64).cpu().contiguous();
    auto fa = work.accessor<double, 3>();
    auto ma = masked.accessor<bool, 2>();
    std::vector<std::pair<int64_t, int64_t>> cells;
    for (int64_t y = 0; y < H; ++y) {
        for (int64_t x = 0; x < W; ++x) {
            if (ma[y][x]) {
                cells.emplace_back(y, x);
            }
        }
    }
    for (int c = 0; c < 2; ++c) {
        double known = 0.0;
        int64_t count = 0;
        for (int64_t y = 0; y < H; ++y) {
            for (int64_t x = 0; x < W; ++x) {
                if (!ma[y][x]) {
                    known += fa[c][y][x];
                    ++count;
                }
            }
        }
        for (auto [y, x] : cells) {
            fa[c][y][x] = known / static_cast<double>(count);
        }
    }

    auto neighbour_mean = [&](int c, int64_t y, int64_t x) {
        double sum = 0.0;
        int n = 0;
        if (y > 0) { sum += fa[c][y - 1][x]; ++n; }
        if (y + 1 < H) { sum += fa[c][y + 1][x]; ++n; }
        if (x > 0) { sum += fa[c][y][x - 1]; ++n; }
        if (x + 1 < W) { sum += fa[c][y][x + 1]; ++n; }
        return sum / n;
    };

    result.status = CompletionStatus::NotConverged;
    for (int it = 1; it <= options.max_iterations; ++it) {
        for (auto [y, x] : cells) {
            for (int c = 0; c < 2; ++c) {
                fa[c][y][x] += options.relaxation * (neighbour_mean(c, y, x) - fa[c][y][x]);
            }
        }
        double residual = 0.0;
        for (auto [y, x] : cells) {
            for (int c = 0; c < 2; ++c) {
                residual = std::max(residual, std::abs(neighbour_mean(c, y, x) - fa[c][y][x]));
            }
        }
        result.iterations = it;
        result.residual = residual;
        if (residual < options.tolerance) {
            result.status = CompletionStatus::Ok;
            break;
        }
    }
    // unmasked vectors are copied back bit-exactly from the input
    auto filled = work.to(flow.scalar_type()).to(flow.device());
    auto keep = masked.to(flow.device()).unsqueeze(0);
    result.flow = torch::where(keep, filled, flow);
    return result;
}

torch::Tensor downsample_flow(const torch::Tensor& flow, int factor) {
    require(factor >= 1, ErrorKind::Config, "downsample_flow: factor must be >= 1");
    require(flow.dim() >= 3 && flow.size(-3) == 2, ErrorKind::Data,
            "downsample_flow: expected [...,2,H,W], got " + shape_str(flow));
    require(flow.size(-1) % factor == 0 && flow.size(-2) % factor == 0, ErrorKind::Data,
            "downsample_flow: " + shape_str(flow) + " not divisible by " + std::to_string(factor));
    auto lead = flow.sizes().vec();
    auto x = flow.reshape({-1, 2, flow.size(-2), flow.size(-1)});
    auto y = torch::avg_pool2d(x, factor, factor) / static_cast<double>(factor);
    lead[lead.size() - 2] = y.size(2);
    lead[lead.size() - 1] = y.size(3);
    return y.reshape(lead);
}

torch::Tensor downsample_mask(const torch::Tensor& mask, int factor) {
    require(factor >= 1, ErrorKind::Config, "downsample_mask: factor must be >= 1");
    require(mask.dim() >= 3 && mask.size(-3) == 1, ErrorKind::Data,
            "downsample_mask: expected [...,1,H,W], got " + shape_str(mask));
    require(mask.size(-1) % factor == 0 && mask.size(-2) % factor == 0, ErrorKind::Data,
            "downsample_mask: " + shape_str(mask) + " not divisible by " + std::to_string(factor));
    auto lead = mask.sizes().vec();
    auto x = mask.reshape({-1, 1, mask.size(-2), mask.size(-1)});
    auto y = torch::max_pool2d(x, factor, factor);
    lead[lead.size() - 2] = y.size(2);
    lead[lead.size() - 1] = y.size(3);
    return y.reshape(lead);
}

}  // namespace fffvdi::flowlab
