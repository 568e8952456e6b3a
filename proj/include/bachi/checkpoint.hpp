// Versioned binary checkpoint container.
//
// Layout (little-endian):
//   magic "BCHK", u32 version
//   u64 config text length, config bytes (flat key=value document)
//   u64 step counter
//   u64 parameter count, then per parameter:
//     u32 name length, name bytes, u64 rows, u64 cols, rows*cols f64 values
//   u8 has_optimizer; if set, first and second moments in the same
//   name/shape framing, plus the optimizer hyperparameters
#pragma once

#include <optional>
#include <string>

#include "bachi/optim.hpp"

namespace bachi {

struct Checkpoint {
    std::string config_text;
    long step = 0;
    ParamStore params;
    std::optional<OptimizerState> optimizer;
};

void save_checkpoint(const std::string& path, const std::string& config_text,
                     long step, const ParamStore& params,
                     const OptimizerState* optimizer = nullptr);

Checkpoint load_checkpoint(const std::string& path);

}  // namespace bachi
