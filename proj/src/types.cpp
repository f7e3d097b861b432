#include "apricot/types.hpp"

namespace apricot {

namespace {
constexpr std::array<std::string_view, kNumTherapies> kTherapyNames{"MV", "VP", "CRRT"};
constexpr std::array<std::string_view, kNumStates> kStateNames{"stable", "unstable", "discharge", "deceased"};
constexpr std::array<std::string_view, kNumHeads> kHeadNames{
    "discharge", "stable", "unstable", "deceased", "unstable_to_stable", "stable_to_unstable", "mv", "vp", "crrt"};
}  // namespace

std::string_view therapy_name(Therapy therapy) { return kTherapyNames[static_cast<std::size_t>(therapy)]; }

std::optional<Therapy> parse_therapy(std::string_view name) {
  for (std::size_t i = 0; i < kNumTherapies; ++i)
    if (kTherapyNames[i] == name) return static_cast<Therapy>(i);
  return std::nullopt;
}

std::string_view disposition_name(Disposition d) {
  return d == Disposition::kDeceased ? "deceased" : "discharged_alive";
}

std::optional<Disposition> parse_disposition(std::string_view name) {
  if (name == "deceased") return Disposition::kDeceased;
  if (name == "discharged_alive") return Disposition::kDischargedAlive;
  return std::nullopt;
}

std::string_view state_name(AcuityState s) { return kStateNames[static_cast<std::size_t>(s)]; }

std::optional<AcuityState> parse_state(std::string_view name) {
  for (std::size_t i = 0; i < kNumStates; ++i)
    if (kStateNames[i] == name) return static_cast<AcuityState>(i);
  return std::nullopt;
}

std::string_view head_name(std::size_t head) { return kHeadNames.at(head); }

std::optional<std::size_t> parse_head(std::string_view name) {
  for (std::size_t i = 0; i < kNumHeads; ++i)
    if (kHeadNames[i] == name) return i;
  return std::nullopt;
}

}  // namespace apricot
