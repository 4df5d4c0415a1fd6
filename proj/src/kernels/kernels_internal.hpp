#pragma once

#include "invae/kernels.hpp"

namespace invae::kernels::detail {

extern const KernelTable kScalarTable;
#if defined(INVAE_HAVE_AVX2_TU)
extern const KernelTable kAvx2Table;
#endif

}  // namespace invae::kernels::detail
