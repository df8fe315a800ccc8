#pragma once

#include <array>
#include <compare>
#include <string_view>

namespace filterlab {

// Named activation sites inside one transformer block, in forward order.
// resid_pre/attn_z(head-flattened)/mlp_out/resid_post carry width d_model;
// mlp_pre/mlp_post carry width d_mlp.
enum class HookPoint { resid_pre, attn_z, mlp_pre, mlp_post, mlp_out, resid_post };

inline constexpr std::array<HookPoint, 6> kAllHookPoints = {
    HookPoint::resid_pre, HookPoint::attn_z,  HookPoint::mlp_pre,
    HookPoint::mlp_post,  HookPoint::mlp_out, HookPoint::resid_post};

const char* to_string(HookPoint hook);
HookPoint hook_point_from_string(std::string_view s);

// (block index, hook point): where a filter or ablation is applied.
struct Location {
  int layer = 0;
  HookPoint hook = HookPoint::resid_pre;

  auto operator<=>(const Location&) const = default;
};

std::string location_label(const Location& loc);

}  // namespace filterlab
