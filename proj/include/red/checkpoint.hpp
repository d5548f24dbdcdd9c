#pragma once

#include <filesystem>
#include <string>
#include <variant>

#include "red/model.hpp"

namespace red {

// Structural family of a checkpoint. The plain encoder-decoder shares the
// full parameter layout, so "red" covers both training modes.
enum class Arch { red, fc, efc };

const char* arch_name(Arch arch);
Arch arch_from_name(const std::string& name);

struct Checkpoint {
    Arch arch = Arch::red;
    Hyper hyper;
    std::variant<RedParams, FcParams, EfcParams> params;

    const RedParams& red() const;
    const FcParams& fc() const;
    const EfcParams& efc() const;
};

/// Flat text container: hyperparameters, then every tensor with name, shape,
/// and row-major values at 17 significant digits. Write -> read -> write is
/// byte-identical.
std::string checkpoint_to_string(const Checkpoint& ckpt);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

} // namespace red
