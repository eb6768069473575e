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

#include <atomic>
#include <cstdlib>
#include <string>

#include "mexosd/error.hpp"
#include "mexosd/kernels.hpp"

namespace mexosd::kernels {
namespace {

bool cpu_supports(Isa isa) noexcept {
  switch (isa) {
    case Isa::scalar:
      return true;
    case Isa::avx2:
#if defined(MEXOSD_HAVE_AVX2)
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
    case Isa::neon:
#if defined(MEXOSD_HAVE_NEON)
      return true;
#else
      return false;
#endif
  }
  return false;
}

const KernelTable* select_default() noexcept {
  if (const char* env = std::getenv("MEXOSD_ISA")) {
    const std::string want(env);
    for (Isa isa : {Isa::scalar, Isa::avx2, Isa::neon}) {
      if (want == isa_name(isa) && cpu_supports(isa)) return &table(isa);
    }
  }
  if (cpu_supports(Isa::avx2)) return &table(Isa::avx2);
  if (cpu_supports(Isa::neon)) return &table(Isa::neon);
  return &detail::kScalarTable;
}

std::atomic<const KernelTable*>& active_slot() noexcept {
  static std::atomic<const KernelTable*> slot{select_default()};
  return slot;
}

}  // namespace

std::string_view isa_name(Isa isa) noexcept {
  switch (isa) {
    case Isa::scalar:
      return "scalar";
    case Isa::avx2:
      return "avx2";
    case Isa::neon:
      return "neon";
  }
  return "unknown";
}

bool available(Isa isa) noexcept { return cpu_supports(isa); }

std::vector<Isa> available_isas() {
  std::vector<Isa> out;
  for (Isa isa : {Isa::scalar, Isa::avx2, Isa::neon}) {
    if (available(isa)) out.push_back(isa);
  }
  return out;
}

const KernelTable& table(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return detail::kScalarTable;
    case Isa::avx2:
#if defined(MEXOSD_HAVE_AVX2)
      if (cpu_supports(isa)) return detail::kAvx2Table;
#endif
      break;
    case Isa::neon:
#if defined(MEXOSD_HAVE_NEON)
      return detail::kNeonTable;
#endif
      break;
  }
  throw Error("kernel variant '" + std::string(isa_name(isa)) + "' is not available on this machine");
}

const KernelTable& active() noexcept { return *active_slot().load(std::memory_order_relaxed); }

void set_active(Isa isa) { active_slot().store(&table(isa), std::memory_order_relaxed); }

}  // namespace mexosd::kernels
