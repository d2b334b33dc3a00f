#pragma once

#include <optional>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

namespace harness {

enum class TicketKind { arbiter_escalation, contract_approval, memory_promotion, proposal_approval, run_halt };

std::string_view to_string(TicketKind k);
std::optional<TicketKind> parse_ticket_kind(std::string_view s);

// The operator's answer to a ticket. `decision` is kind-specific: a failure
// class for arbiter escalations, approve/reject for approvals,
// continue/abandon for halted runs.
struct Resolution {
  std::string decision;
  std::string principal;
  std::string timestamp;
  std::string note;
};

struct HumanTicket {
  std::string ticket_id;
  std::string run_id;
  TicketKind kind = TicketKind::run_halt;
  nlohmann::json payload = nlohmann::json::object();
  bool resolved = false;
  std::optional<Resolution> resolution;
};

nlohmann::json to_json(const HumanTicket& t);

// Decisions accepted for each ticket kind. Anything else is shape-mismatch.
bool decision_fits(TicketKind kind, std::string_view decision);

}  // namespace harness
