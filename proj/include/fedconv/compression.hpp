// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "fedconv/resample.hpp"

namespace fedconv {

using CompressionLayerConfig = ResampleLayerConfig;
using CompressionPlan = ResamplePlan;
using ConvParams = ResampleParams;

/// round(sr * c), at least 1.
std::size_t scaled_channels(std::size_t channels, double sr);

/// Sub-model spec for `sr`: every channel count scaled except the first
/// layer's input and the last layer's output. Dense input features follow
/// from the preceding sub-model layer.
ModelSpec derive_sub_spec(const ModelSpec& global, double sr);

/// Per layer and axis, the kernel that maps d_in to d_out under the policy:
/// k = d_in + 2p - (d_out - 1) * s. Throws ConfigError when sr is outside
/// (0, 1] or a kernel would be smaller than 1.
CompressionPlan derive_plan(const ModelSpec& global, double sr, KernelPolicy policy = {});

/// Padding p with (d_in + 2p - k) / s + 1 == d_out exactly. Throws
/// ConfigError when no non-negative integer p exists.
std::size_t solve_padding(std::size_t d_in, std::size_t d_out, std::size_t kernel, std::size_t stride);

ConvParams init_conv_params(const CompressionPlan& plan, KernelInit init, std::uint64_t seed);

ParameterSet compress_model(const ParameterSet& global, const CompressionPlan& plan, const ConvParams& cp,
                            const PipelineOptions& options = {});

/// Trains cp on server data with the global model frozen.
ConvParams finetune_compression(const ParameterSet& global, const CompressionPlan& plan, ConvParams cp,
                                const Dataset& server_data, const PipelineOptions& options,
                                const FinetuneOptions& ft);

}  // namespace fedconv
