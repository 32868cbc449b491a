#pragma once

#include <string>

#include "rangecap/green.hpp"

namespace rangecap {

inline constexpr std::uint32_t kGreenFormatVersion = 1;

/// Writes the table in the little-endian GRNT layout:
/// "GRNT", u32 version, u8 kind, u16 d, f64 alpha, u32 R,
/// u32 metadata length + metadata block, f64 values in rank order,
/// f64 far-field constant, f64 far-field exponent, optional f64 standard errors.
void save_green_table(const GreenTable& table, const std::string& path);
GreenTable load_green_table(const std::string& path);

}  // namespace rangecap
