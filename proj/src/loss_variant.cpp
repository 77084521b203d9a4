#include "man/loss_variant.hpp"

#include "man/errors.hpp"

namespace man {

std::string to_string(LossVariant v) { return v == LossVariant::kNll ? "nll" : "l2"; }

LossVariant parse_loss_variant(std::string_view text) {
  if (text == "nll" || text == "NLL") return LossVariant::kNll;
  if (text == "l2" || text == "L2") return LossVariant::kL2;
  throw ConfigError("unknown loss variant '" + std::string(text) + "' (expected nll or l2)");
}

}  // namespace man
