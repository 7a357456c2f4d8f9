#pragma once

#include <cstdint>
#include <optional>
#include <string_view>

namespace deepsketch {

/// The only comparison operators in the supported query class.
enum class CmpOp : std::uint8_t { Eq = 0, Lt = 1, Gt = 2 };

inline constexpr CmpOp kAllOps[] = {CmpOp::Eq, CmpOp::Lt, CmpOp::Gt};

constexpr std::string_view to_string(CmpOp op) {
  switch (op) {
    case CmpOp::Eq: return "=";
    case CmpOp::Lt: return "<";
    case CmpOp::Gt: return ">";
  }
  return "=";
}

constexpr std::optional<CmpOp> parse_cmp_op(std::string_view s) {
  if (s == "=") return CmpOp::Eq;
  if (s == "<") return CmpOp::Lt;
  if (s == ">") return CmpOp::Gt;
  return std::nullopt;
}

constexpr bool compare(double value, CmpOp op, double literal) {
  switch (op) {
    case CmpOp::Eq: return value == literal;
    case CmpOp::Lt: return value < literal;
    case CmpOp::Gt: return value > literal;
  }
  return false;
}

}  // namespace deepsketch
