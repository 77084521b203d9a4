#pragma once

#include <string>
#include <string_view>

namespace man {

// Discriminator loss: negative log-likelihood or least squares against the
// one-hot domain vector.
enum class LossVariant { kNll, kL2 };

std::string to_string(LossVariant v);
// Accepts "nll" or "l2"; throws ConfigError otherwise.
LossVariant parse_loss_variant(std::string_view text);

}  // namespace man
