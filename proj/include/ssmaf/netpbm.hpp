#ifndef SSMAF_NETPBM_HPP_
#define SSMAF_NETPBM_HPP_

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>

#include "ssmaf/tensor.hpp"

namespace ssmaf {

class NetpbmError : public std::runtime_error {
public:
	using std::runtime_error::runtime_error;
};

/**
 * Binary NetPBM with maxval 255. P5 decodes to [H,W], P6 to [3,H,W]; samples are scaled to [0,1].
 */
Tensor decode_netpbm(std::string_view bytes, const std::string& source = "<memory>");
Tensor read_netpbm(const std::filesystem::path& path);

/// [H,W] or [1,H,W] -> P5, [3,H,W] -> P6. Values are clamped to [0,1] and stored as round(v*255).
std::string encode_netpbm(const Tensor& image);
void write_netpbm(const std::filesystem::path& path, const Tensor& image);

}  // namespace ssmaf

#endif  // SSMAF_NETPBM_HPP_
