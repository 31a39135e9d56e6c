#pragma once

#include <complex>
#include <vector>

namespace nr::detail {

// In-place complex DFT of arbitrary length. The inverse is unnormalized.
void dft_inplace(std::vector<std::complex<double>>& data, bool inverse);

} // namespace nr::detail
