#pragma once

namespace sanet {

/// Worker count for batch/channel-parallel kernels. No-op without OpenMP.
void set_num_threads(int threads);
int num_threads();

}  // namespace sanet
