// SPDX-License-Identifier: Apache-2.0
#include "fedconv/dilation.hpp"

#include <utility>

#include "fedconv/errors.hpp"

namespace fedconv {

TCPlan derive_tc_plan(const CompressionPlan& plan) {
  if (plan.direction != Direction::compress) throw UsageError("derive_tc_plan needs a compression plan");
  TCPlan tc = plan;
  tc.direction = Direction::dilate;
  std::swap(tc.src_spec, tc.dst_spec);
  for (auto& c : tc.layers) std::swap(c.src_slice, c.dst_slice);
  tc.validate();
  return tc;
}

TCParams init_tc_params(const TCPlan& plan, KernelInit init, std::uint64_t seed) {
  if (plan.direction != Direction::dilate) throw UsageError("init_tc_params needs a dilation plan");
  return init_resample_params(plan, init, seed);
}

ParameterSet dilate_model(const ParameterSet& client, const TCPlan& plan, const TCParams& tp,
                          const PipelineOptions& options) {
  if (plan.direction != Direction::dilate) throw UsageError("dilate_model needs a dilation plan");
  return apply_resample(plan, tp, client, options);
}

TCParams finetune_dilation(const ParameterSet& client, const TCPlan& plan, TCParams tp, const Dataset& server_data,
                           const PipelineOptions& options, const FinetuneOptions& ft) {
  if (plan.direction != Direction::dilate) throw UsageError("finetune_dilation needs a dilation plan");
  return finetune_resample(plan, client, std::move(tp), server_data, options, ft);
}

}  // namespace fedconv
