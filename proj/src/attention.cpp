#include "osteo/attention.hpp"

namespace osteo {

namespace {

template <typename T>
Tensor<T> shared_mlp(const Tensor<T>& pooled, const ChannelAttentionParams<T>& p, std::size_t n, std::size_t c) {
    auto flat = reshape(pooled, Shape{n, c});
    return dense(relu(dense(flat, p.fc1)), p.fc2);
}

}  // namespace

std::size_t cbam_parameter_count(std::size_t channels, std::size_t reduction) {
    const std::size_t hidden = channels / reduction;
    return 2 * channels * hidden + 2 * kSpatialAttentionKernel * kSpatialAttentionKernel;
}

template <typename T>
Tensor<T> channel_attention(const Tensor<T>& features, const ChannelAttentionParams<T>& params,
                            ChannelMapForm form) {
    const bool batched = features.rank() == 4;
    if (!batched && features.rank() != 3) {
        throw DimensionError("channel_attention: expected a feature map, got " + shape_string(features.shape()));
    }
    const std::size_t n = batched ? features.dim(0) : 1;
    const std::size_t c = features.dim(batched ? 1 : 0);
    if (params.fc1.rank() != 2 || params.fc1.dim(1) != c || params.fc2.rank() != 2 || params.fc2.dim(0) != c ||
        params.fc2.dim(1) != params.fc1.dim(0)) {
        throw DimensionError("channel_attention: MLP " + shape_string(params.fc1.shape()) + "/" +
                             shape_string(params.fc2.shape()) + " does not fit " + std::to_string(c) + " channels");
    }
    auto avg = shared_mlp(pool_spatial(features, PoolMode::avg, true), params, n, c);
    auto mx = shared_mlp(pool_spatial(features, PoolMode::max, true), params, n, c);
    Tensor<T> map = form == ChannelMapForm::standard ? sigmoid(add(avg, mx)) : add(sigmoid(avg), mx);
    return reshape(map, batched ? Shape{n, c, 1, 1} : Shape{c, 1, 1});
}

template <typename T>
Tensor<T> spatial_attention(const Tensor<T>& features, const SpatialAttentionParams<T>& params) {
    const auto& k = params.kernel;
    if (k.rank() != 4 || k.dim(0) != 1 || k.dim(1) != 2 || k.dim(2) != kSpatialAttentionKernel ||
        k.dim(3) != kSpatialAttentionKernel) {
        throw DimensionError("spatial_attention: kernel must be 1×2×7×7, got " + shape_string(k.shape()));
    }
    auto pooled = concat_channels<T>({pool_channelwise(features, PoolMode::avg), pool_channelwise(features, PoolMode::max)});
    return sigmoid(conv2d(pooled, k, 1, kSpatialAttentionKernel / 2));
}

template <typename T>
CbamOutput<T> cbam_forward(const Tensor<T>& features, const ChannelAttentionParams<T>& channel,
                           const SpatialAttentionParams<T>& spatial, const CbamOptions& options) {
    CbamOutput<T> out;
    const auto& s = features.shape();
    if (s.size() != 3 && s.size() != 4) {
        throw DimensionError("cbam_forward: expected a feature map, got " + shape_string(s));
    }
    if (options.identity) {
        Shape cshape = s, sshape = s;
        cshape[s.size() - 2] = cshape[s.size() - 1] = 1;
        sshape[s.size() - 3] = 1;
        out.channel_map = Tensor<T>::ones(cshape);
        auto refined = mul(features, out.channel_map);
        out.spatial_map = Tensor<T>::ones(sshape);
        out.refined = mul(refined, out.spatial_map);
        return out;
    }
    out.channel_map = channel_attention(features, channel, options.form);
    auto refined = mul(features, out.channel_map);
    out.spatial_map = spatial_attention(refined, spatial);
    out.refined = mul(refined, out.spatial_map);
    return out;
}

#define OSTEO_INSTANTIATE_CBAM(T)                                                                                 \
    template Tensor<T> channel_attention<T>(const Tensor<T>&, const ChannelAttentionParams<T>&, ChannelMapForm); \
    template Tensor<T> spatial_attention<T>(const Tensor<T>&, const SpatialAttentionParams<T>&);                 \
    template CbamOutput<T> cbam_forward<T>(const Tensor<T>&, const ChannelAttentionParams<T>&,                   \
                                           const SpatialAttentionParams<T>&, const CbamOptions&);

OSTEO_INSTANTIATE_CBAM(float)
OSTEO_INSTANTIATE_CBAM(double)

#undef OSTEO_INSTANTIATE_CBAM

}  // namespace osteo
