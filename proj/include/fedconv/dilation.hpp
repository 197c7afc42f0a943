// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "fedconv/compression.hpp"

namespace fedconv {

using TCPlan = ResamplePlan;
using TCParams = ResampleParams;

/// Mirror of a compression plan: same kernels, stride and padding, with the
/// slice shapes swapped and transposed convolution as the operator.
TCPlan derive_tc_plan(const CompressionPlan& plan);

TCParams init_tc_params(const TCPlan& plan, KernelInit init, std::uint64_t seed);

ParameterSet dilate_model(const ParameterSet& client, const TCPlan& plan, const TCParams& tp,
                          const PipelineOptions& options = {});

/// Trains tp on server data with the client model frozen.
TCParams finetune_dilation(const ParameterSet& client, const TCPlan& plan, TCParams tp, const Dataset& server_data,
                           const PipelineOptions& options, const FinetuneOptions& ft);

}  // namespace fedconv
