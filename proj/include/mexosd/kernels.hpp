// Copyright 2026 The mexosd Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Inner-loop arithmetic shared by every layer. Each kernel has a scalar
// reference implementation plus SIMD variants; the active table is chosen
// once at startup from the CPU's capabilities (override with MEXOSD_ISA).

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

namespace mexosd::kernels {

enum class Isa { scalar, avx2, neon };

std::string_view isa_name(Isa isa) noexcept;

struct KernelTable {
  Isa isa;
  /// sum_i a[i] * b[i]
  double (*dot)(const double* a, const double* b, std::size_t n);
  /// y[i] += alpha * x[i]
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  /// x[i] *= alpha
  void (*scale)(double alpha, double* x, std::size_t n);
  /// y[i] += a[i] * b[i]
  void (*mul_add)(const double* a, const double* b, double* y, std::size_t n);
};

/// True when the variant was compiled in and the running CPU supports it.
bool available(Isa isa) noexcept;

/// Variants that can be used on this machine, scalar first.
std::vector<Isa> available_isas();

/// Table for a specific variant; throws if it is not available.
const KernelTable& table(Isa isa);

/// Table used by the library. Selected on first use: MEXOSD_ISA if set and
/// available, otherwise the widest supported variant.
const KernelTable& active() noexcept;

/// Replace the active table (tests and benchmarking). Not thread-safe with
/// respect to concurrent kernel use.
void set_active(Isa isa);

inline double dot(std::span<const double> a, std::span<const double> b) {
  return active().dot(a.data(), b.data(), a.size());
}

inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  active().axpy(alpha, x.data(), y.data(), x.size());
}

inline void scale(double alpha, std::span<double> x) { active().scale(alpha, x.data(), x.size()); }

inline void mul_add(std::span<const double> a, std::span<const double> b, std::span<double> y) {
  active().mul_add(a.data(), b.data(), y.data(), a.size());
}

namespace detail {
extern const KernelTable kScalarTable;
#if defined(MEXOSD_HAVE_AVX2)
extern const KernelTable kAvx2Table;
#endif
#if defined(MEXOSD_HAVE_NEON)
extern const KernelTable kNeonTable;
#endif
}  // namespace detail

}  // namespace mexosd::kernels
