#include "harness/ticket.hpp"

namespace harness {

namespace {

constexpr std::pair<TicketKind, std::string_view> kKinds[] = {
    {TicketKind::arbiter_escalation, "arbiter_escalation"},
    {TicketKind::contract_approval, "contract_approval"},
    {TicketKind::memory_promotion, "memory_promotion"},
    {TicketKind::proposal_approval, "proposal_approval"},
    {TicketKind::run_halt, "run_halt"}};

}  // namespace

std::string_view to_string(TicketKind k) {
  for (const auto& [v, n] : kKinds) {
    if (v == k) return n;
  }
  return "?";
}

std::optional<TicketKind> parse_ticket_kind(std::string_view s) {
  for (const auto& [v, n] : kKinds) {
    if (n == s) return v;
  }
  return std::nullopt;
}

nlohmann::json to_json(const HumanTicket& t) {
  nlohmann::json j{{"ticket_id", t.ticket_id},
                   {"run_id", t.run_id},
                   {"kind", to_string(t.kind)},
                   {"payload", t.payload},
                   {"status", t.resolved ? "resolved" : "pending"}};
  if (t.resolution) {
    j["resolution"] = {{"decision", t.resolution->decision},
                       {"principal", t.resolution->principal},
                       {"timestamp", t.resolution->timestamp},
                       {"note", t.resolution->note}};
  }
  return j;
}

bool decision_fits(TicketKind kind, std::string_view decision) {
  switch (kind) {
    case TicketKind::arbiter_escalation:
      return decision == "bug" || decision == "spec_gap" || decision == "noise" || decision == "contract_ambiguity";
    case TicketKind::contract_approval:
    case TicketKind::memory_promotion:
    case TicketKind::proposal_approval:
      return decision == "approve" || decision == "reject";
    case TicketKind::run_halt:
      return decision == "continue" || decision == "abandon";
  }
  return false;
}

}  // namespace harness
