#include "encod/format.hpp"

#include <stdexcept>

namespace encod {

std::string_view to_string(FormatLabel label) noexcept {
  switch (label) {
    case FormatLabel::enc: return "enc";
    case FormatLabel::zip: return "zip";
    case FormatLabel::gzip: return "gzip";
    case FormatLabel::rar: return "rar";
    case FormatLabel::png: return "png";
    case FormatLabel::jpeg: return "jpeg";
    case FormatLabel::mp3: return "mp3";
    case FormatLabel::pdf: return "pdf";
  }
  return "?";
}

FormatLabel parse_label(std::string_view tag) {
  for (auto label : kAllLabels)
    if (to_string(label) == tag) return label;
  throw std::invalid_argument("unknown format label '" + std::string(tag) + "'");
}

void require_fragment_size(std::size_t size) {
  if (!is_fragment_size(size))
    throw std::invalid_argument("fragment size " + std::to_string(size) +
                                " is not one of 512, 1024, 2048, 4096, 8192");
}

}  // namespace encod
