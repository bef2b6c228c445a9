#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

namespace encod {

inline constexpr std::string_view kToolVersion = "0.3.0";

/// Ground-truth content type of a fragment. `enc` is the only encrypted tag.
enum class FormatLabel : std::uint8_t { enc, zip, gzip, rar, png, jpeg, mp3, pdf };

inline constexpr std::array<FormatLabel, 8> kAllLabels = {
    FormatLabel::enc, FormatLabel::zip, FormatLabel::gzip, FormatLabel::rar,
    FormatLabel::png, FormatLabel::jpeg, FormatLabel::mp3, FormatLabel::pdf};

inline constexpr std::array<std::size_t, 5> kFragmentSizes = {512, 1024, 2048, 4096, 8192};

std::string_view to_string(FormatLabel label) noexcept;

/// Throws std::invalid_argument on an unknown tag.
FormatLabel parse_label(std::string_view tag);

constexpr bool is_encrypted(FormatLabel label) noexcept { return label == FormatLabel::enc; }

/// zip, gzip and rar share the general-purpose "cmp" macro class.
constexpr bool is_general_purpose_compressed(FormatLabel label) noexcept {
  return label == FormatLabel::zip || label == FormatLabel::gzip || label == FormatLabel::rar;
}

constexpr bool is_fragment_size(std::size_t size) noexcept {
  for (auto s : kFragmentSizes)
    if (s == size) return true;
  return false;
}

/// Throws std::invalid_argument unless size is one of kFragmentSizes.
void require_fragment_size(std::size_t size);

}  // namespace encod
