#pragma once

#include <array>
#include <stdexcept>
#include <string>

namespace tscdreamer::agent {

/// Network widths for one model size.
struct SizePreset {
  std::string name;
  int deter = 0;     // recurrent state width
  int hidden = 0;    // MLP hidden width
  int groups = 0;    // categorical latent groups
  int classes = 0;   // classes per group
  int depth = 0;     // hidden layers per MLP

  int latent() const { return groups * classes; }
  int feature() const { return deter + latent(); }
};

inline const std::array<SizePreset, 5>& size_presets() {
  static const std::array<SizePreset, 5> table{{
      {"XXS", 64, 64, 8, 8, 1},
      {"XS", 128, 128, 16, 16, 2},
      {"S", 256, 256, 32, 32, 2},
      {"M", 512, 512, 32, 32, 3},
      {"L", 1024, 1024, 32, 32, 4},
  }};
  return table;
}

inline SizePreset size_preset(const std::string& name) {
  for (const auto& p : size_presets())
    if (p.name == name) return p;
  throw std::invalid_argument("unknown model size '" + name + "' (expected XXS, XS, S, M or L)");
}

}  // namespace tscdreamer::agent
