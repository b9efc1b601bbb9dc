#pragma once

namespace errlab {

/// Selects the OpenMP kernel or its serial reference. Both produce identical
/// results; the serial path exists for testing and benchmarking.
enum class Exec { serial, parallel };

/// Threads the parallel kernels will use.
int parallel_threads();

}  // namespace errlab
