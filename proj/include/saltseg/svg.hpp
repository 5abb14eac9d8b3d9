#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "saltseg/trainer.hpp"

namespace saltseg {

// Hand-emitted polyline plot of the lr / train_loss / val_iou curves.
// The CSV history is the authoritative output; this is a convenience view.
void write_curves_svg(const std::filesystem::path& path, const std::vector<EpochRecord>& history,
                      const std::string& title);

}  // namespace saltseg
