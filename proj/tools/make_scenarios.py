#!/usr/bin/env python3
"""Regenerates the bundled scripted scenarios under data/scenarios/.

Each scenario scripts every agent response a run needs, keyed
"<role>:<attempt>:<step>" with "*" wildcards. Artifacts are small Python
modules (impl.py); test suites evaluate expressions against them through a
shared runner and write one JSON record per test to $HARNESS_RESULTS.

    python3 tools/make_scenarios.py            # rewrite data/scenarios
    python3 tools/make_scenarios.py --check    # fail if the files are stale
"""

import argparse
import json
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
OUT = ROOT / "data" / "scenarios"

RUNNER = r'''import importlib.util
import json
import os
import sys

art = os.environ["HARNESS_ARTIFACT_DIR"]
attempt = int(os.environ.get("HARNESS_CI_ATTEMPT", "1"))
rerun = int(os.environ.get("HARNESS_RERUN_INDEX", "0"))
only = os.environ.get("HARNESS_TEST_FILTER")
here = os.path.dirname(os.path.abspath(__file__))
with open(os.path.join(here, "tests.json")) as fh:
    cases = json.load(fh)

impl = None
load_error = ""
try:
    spec = importlib.util.spec_from_file_location("impl", os.path.join(art, "impl.py"))
    impl = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(impl)
except Exception as exc:  # the artifact may be missing or broken
    load_error = f"{type(exc).__name__}: {exc}"

with open(os.environ["HARNESS_RESULTS"], "a") as out:
    for case in cases:
        if only and case["id"] != only:
            continue
        status, message = "pass", case["assertion"]
        if case.get("flaky_on_attempt") == attempt and rerun == 0:
            status, message = "error", case.get("fixture_error", "fixture unavailable in CI container")
        elif impl is None:
            status, message = "fail", case["assertion"] + "\n" + load_error
        else:
            try:
                if not eval(case["expr"], {"impl": impl}):
                    status = "fail"
            except Exception as exc:
                status, message = "fail", case["assertion"] + f"\n{type(exc).__name__}: {exc}"
        out.write(json.dumps({"id": case["id"], "status": status, "assertion": message}) + "\n")
'''


def resp(kind, body, transcript=""):
    r = {"kind": kind, "body": body}
    if transcript:
        r["transcript"] = transcript
    return r


def suite(suite_id, cases, timeout=20):
    """cases: list of (test_id, expr, assertion, clause_ids[, extra])"""
    tests, links = [], {}
    for c in cases:
        tid, expr, assertion, clauses = c[:4]
        t = {"id": tid, "expr": expr, "assertion": assertion}
        if len(c) > 4:
            t.update(c[4])
        tests.append(t)
        links[tid] = clauses
    return {
        "suite_id": suite_id,
        "files": {"run_tests.py": RUNNER, "tests.json": json.dumps(tests, indent=1) + "\n"},
        "command": {"program": "python3", "args": ["run_tests.py"], "working_dir": "."},
        "clause_links": links,
        "timeout": timeout,
    }


def artifact(code, touched):
    return {"files": {"impl.py": code}, "touched_clauses": touched}


def no_findings(role):
    return resp("review_findings", {"findings": []}, f"{role}: read the change against the contract, nothing blocking")


def blocker(text, clause=None):
    f = {"severity": "blocker", "text": text}
    if clause:
        f["clause_id"] = clause
    return resp("review_findings", {"findings": [f]}, "reviewer notes: " + text)


def classification(cls, confidence, rationale):
    return resp("classification", {"class": cls, "confidence": confidence, "rationale": rationale},
                "arbiter weighed the evidence: " + rationale)


def build(scenario_id, issue, interface, contract, impls, suites, *, refinements=None, labels=None,
          overrides=None, arbiter=None, operator=None, reports=None):
    """impls / suites: {attempt: body}. refinements: one body per pass-2 round, in order."""
    r = {}
    r["contract_compiler:1:2"] = resp("contract_draft", {"contract": contract},
                                      "compiler: drafted clauses from the issue and the selected templates")
    # Pass 1 is the compiler's first job, so the n-th refinement is attempt n + 1.
    r["contract_compiler:*:3"] = resp("contract_refinement", {"remove": [], "rewrite": [], "ambiguities": []},
                                      "compiler: every clause traces to the issue")
    for n, body in enumerate(refinements or [], 2):
        r[f"contract_compiler:{n}:3"] = resp("contract_refinement", body,
                                                   "compiler: checked every clause against the issue text")
    for attempt, body in impls.items():
        r[f"implementer:{attempt}:7"] = resp("code_artifact", body, f"implementer attempt {attempt} reasoning")
    for attempt, body in suites.items():
        r[f"test_author:{attempt}:8"] = resp("test_suite", body, f"test author attempt {attempt}: derived from contract")
    for role in ["product_reviewer", "architecture_reviewer", "security_reviewer", "backend_reviewer",
                 "frontend_reviewer", "qa_tester", "shipping_reviewer"]:
        r[f"{role}:*:*"] = no_findings(role)
    r["arbiter:*:*"] = arbiter or classification("bug", 0.9, "failing test exercises a clause the change implements")
    r["retro:*:*"] = resp("retro_proposals", {"proposals": [], "observations": ["no recurring pattern in this run"]})
    for key, value in (overrides or {}).items():
        r[key] = value
    s = {
        "scenario_id": scenario_id,
        "issue": issue,
        "interface": interface,
        "ground_truth_labels": labels or {},
        "responses": r,
    }
    if operator:
        s["operator_decisions"] = operator
    if reports:
        s["post_merge_reports"] = reports
    return s


def issue(iid, title, body, labels, requester="ops@northgate.example"):
    return {"id": iid, "title": title, "body": body, "labels": labels, "requester": requester}


def contract(module, surfaces, invariants, *, errors=None, auth=None, business=None, oos=None, qa=None, risks=None,
             criteria=None):
    c = {
        "module_name": module,
        "version": "1.0.0",
        "surfaces": surfaces,
        "invariants": invariants,
        "error_taxonomy": errors or [],
        "auth_rules": auth or [],
        "business_rules": business or [],
        "out_of_scope": oos or [],
        "qa_targets": qa or [],
        "regression_risks": risks or [],
        "acceptance_criteria": criteria or [],
    }
    return c


def inv(cid, text, origin="issue"):
    return {"id": cid, "text": text, "origin": origin}


def surface(sid, kind, method, path, returns=(), side_effects=(), errors=()):
    return {"id": sid, "kind": kind, "method_or_trigger": method, "path_or_name": path, "returns": list(returns),
            "side_effects": [{"id": f"{sid}-SE{i + 1}", "text": t} for i, t in enumerate(side_effects)],
            "errors": list(errors)}


def ac(cid, text, links):
    return {"id": cid, "text": text, "linked_invariants": links}


# ---------------------------------------------------------------------------
# Payments: two implementation cycles, then two post-merge business-logic
# reports that trace back to clauses the contract never had.

PAYMENTS_V1 = '''"""NGPayments handlers (first attempt)."""

PROCESSING, PAID, UNPAID = "processing", "paid", "unpaid"


def create_intent(invoice, caller):
    if caller != invoice["owner"]:
        return {"error": 403}
    if invoice["payment_status"] == PAID:
        return {"error": 409}
    if invoice["payment_status"] == PROCESSING:
        return {"error": 409}
    amount = int(round(invoice["quote_data"]["total"] * 100))
    invoice["payment_status"] = PROCESSING
    invoice["payment_intent_id"] = "pi_" + invoice["id"]
    return {
        "client_secret": "cs_" + invoice["id"],
        "payment_intent_id": invoice["payment_intent_id"],
        "payment_type": invoice.get("payment_type", "final"),
        "amount_cents": amount,
        "transfer_data": {"destination": invoice["provider_account"]},
        "application_fee_amount": 0,
    }


def confirm(invoice, caller, intent_status, db):
    if caller != invoice["owner"]:
        return {"error": 403}
    # Records the payment first and asks Stripe afterwards.
    db.append(("paid", invoice["id"]))
    invoice["payment_intent_id"] = None
    if intent_status != "succeeded":
        invoice["payment_status"] = UNPAID
        return {"error": 502}
    invoice["payment_status"] = PAID
    return {"payment_status": PAID}


def status(invoice, caller):
    if caller != invoice["owner"]:
        return {"error": 403}
    return {k: invoice.get(k) for k in ("payment_status", "payment_type", "amount_cents", "currency", "paid_at")}
'''

PAYMENTS_V2 = PAYMENTS_V1.replace('"""NGPayments handlers (first attempt)."""', '"""NGPayments handlers."""').replace(
    '''    # Records the payment first and asks Stripe afterwards.
    db.append(("paid", invoice["id"]))
    invoice["payment_intent_id"] = None
    if intent_status != "succeeded":
        invoice["payment_status"] = UNPAID
        return {"error": 502}
    invoice["payment_status"] = PAID
    return {"payment_status": PAID}''',
    '''    if invoice["payment_status"] == PAID:
        return {"payment_status": PAID}
    if intent_status != "succeeded":
        invoice["payment_status"] = UNPAID
        invoice["payment_intent_id"] = None
        return {"error": 502}
    db.append(("paid", invoice["id"]))
    invoice["payment_status"] = PAID
    invoice["paid_at"] = "2026-01-01T00:00:00Z"
    invoice["payment_intent_id"] = None
    return {"payment_status": PAID}''')

PAY_INVOICE = ('dict(id="inv1", owner="u1", payment_status="unpaid", quote_data={"total": 120.5}, '
               'provider_account="acct_9", payment_type="final")')


def payments():
    iss = issue(
        "NG-PAY-1",
        "In-app payments for homeowner invoices",
        "Homeowners pay invoices in the mobile app with Stripe PaymentIntents and Stripe Connect. The backend "
        "creates a payment intent for an invoice, confirms payment completion with Stripe before any database "
        "write, and exposes the payment status of an invoice. The payable amount comes from the quote total. "
        "Client-reported payment status must never be trusted.",
        ["backend", "payments"],
    )
    surfaces = [
        surface("SURF-1", "api_endpoint", "POST", "/ng/payments/intent/:invoiceId",
                ["client_secret", "payment_intent_id", "payment_type", "amount_cents"],
                ["store payment_intent_id on invoice", "set invoice.payment_status = processing"],
                ["403", "404", "409", "422", "502"]),
        surface("SURF-2", "api_endpoint", "POST", "/ng/payments/confirm/:invoiceId", [],
                ["set invoice payment status", "set service request status", "set paid_at", "clear payment_intent_id",
                 "on failure reset invoice.payment_status to unpaid and clear payment_intent_id"],
                ["403", "404", "502"]),
        surface("SURF-3", "api_endpoint", "GET", "/ng/payments/status/:invoiceId",
                ["payment_status", "payment_type", "amount_cents", "currency", "paid_at"], [], ["403", "404"]),
    ]
    invariants = [
        inv("INV-1", "PaymentIntent uses transfer_data.destination"),
        inv("INV-2", "no platform fee"),
        inv("INV-3", "server verifies Stripe success before DB write"),
        inv("INV-4", "paid is terminal"),
        inv("INV-5", "processing blocks duplicate intents"),
        inv("INV-6", "amount derived from quote_data.total"),
        inv("INV-7", "refunds are issued automatically when a service request is cancelled", "pass1_inferred"),
    ]
    c = contract(
        "NGPayments", surfaces, invariants,
        errors=[{"id": f"ERR-{i + 1}", "code": code, "meaning": meaning} for i, (code, meaning) in enumerate([
            ("403", "caller does not own the invoice"), ("404", "invoice not found"),
            ("409", "invoice already paid or a payment is processing"), ("422", "invoice has no payable quote"),
            ("502", "Stripe did not confirm the payment")])],
        auth=[{"id": "AUTH-1", "text": "Supabase Bearer token; JWT identity authoritative"}],
        business=[{"id": "BR-1", "text": "the payable amount is quote_data.total and is never recomputed from other fields"}],
        oos=[{"id": "OOS-1", "text": "refunds and disputes"}],
        qa=[{"id": "QA-1", "text": "duplicate confirm calls leave a paid invoice unchanged"}],
        risks=[{"id": "RISK-1", "text": "client-reported success accepted without Stripe verification"}],
        criteria=[ac("AC-1", "a paid invoice cannot be paid again", ["INV-4", "INV-5"]),
                  ac("AC-2", "confirmation never writes before Stripe reports success", ["INV-3"])],
    )
    interface = (
        "impl.create_intent(invoice: dict, caller: str) -> dict  # client_secret, payment_intent_id, payment_type, "
        "amount_cents, transfer_data, application_fee_amount, or {error: code}\n"
        "impl.confirm(invoice: dict, caller: str, intent_status: str, db: list) -> dict  # appends ('paid', id) to db on success\n"
        "impl.status(invoice: dict, caller: str) -> dict"
    )
    tests = suite("ngpayments-adversarial", [
        ("destination_charge", f"impl.create_intent({PAY_INVOICE}, 'u1')['transfer_data']['destination'] == 'acct_9'",
         "PaymentIntent must route funds with transfer_data.destination", ["INV-1"]),
        ("no_platform_fee", f"impl.create_intent({PAY_INVOICE}, 'u1')['application_fee_amount'] == 0",
         "no platform fee may be taken", ["INV-2"]),
        ("amount_from_quote", f"impl.create_intent({PAY_INVOICE}, 'u1')['amount_cents'] == 12050",
         "amount_cents must equal quote_data.total in cents", ["INV-6", "BR-1"]),
        ("duplicate_intent_blocked",
         f"(lambda inv: (impl.create_intent(inv, 'u1'), impl.create_intent(inv, 'u1'))[1])({PAY_INVOICE}) == {{'error': 409}}",
         "a processing invoice must reject a second intent with 409", ["INV-5"]),
        ("confirm_verifies_before_write",
         f"(lambda inv, db: (impl.create_intent(inv, 'u1'), impl.confirm(inv, 'u1', 'requires_payment_method', db), db)[2])({PAY_INVOICE}, []) == []",
         "confirm wrote to the database before Stripe reported success", ["INV-3"]),
        ("failed_confirm_resets_status",
         f"(lambda inv: (impl.create_intent(inv, 'u1'), impl.confirm(inv, 'u1', 'canceled', []), inv['payment_status'])[2])({PAY_INVOICE}) == 'unpaid'",
         "a failed confirmation must reset the invoice to unpaid", ["SURF-2-SE5"]),
        ("paid_is_terminal",
         f"(lambda inv: (impl.create_intent(inv, 'u1'), impl.confirm(inv, 'u1', 'succeeded', []), impl.create_intent(inv, 'u1'))[2])({PAY_INVOICE}) == {{'error': 409}}",
         "a paid invoice must stay paid", ["INV-4"]),
        ("foreign_caller_rejected", f"impl.status({PAY_INVOICE}, 'intruder') == {{'error': 403}}",
         "JWT identity must own the invoice", ["AUTH-1"]),
    ])
    return build(
        "payments-replay", iss, interface, c,
        impls={1: artifact(PAYMENTS_V1, ["SURF-1", "SURF-2", "SURF-3", "INV-1", "INV-2", "INV-3", "INV-5", "INV-6"]),
               2: artifact(PAYMENTS_V2, ["SURF-1", "SURF-2", "SURF-3", "INV-1", "INV-2", "INV-3", "INV-4", "INV-5",
                                         "INV-6"])},
        suites={1: tests},
        refinements=[{"remove": [{"id": "INV-7", "reason": "the issue never mentions refunds; refunds are out of scope"}],
                      "rewrite": [], "ambiguities": []}],
        overrides={"security_reviewer:*:*": resp("review_findings", {"findings": [
            {"severity": "minor", "clause_id": "AUTH-1", "text": "log the JWT subject on rejected confirmations"}]},
            "security reviewer traced the trust boundary around client-reported status")},
        reports=[
            {"text": "final invoice calculation omitted offline deposits", "section": "amount_calculation",
             "clause_ids": [], "reporter": "finance@northgate.example"},
            {"text": "discount calculation not encoded in original contract", "section": "amount_calculation",
             "clause_ids": [], "reporter": "finance@northgate.example"},
        ],
    )


# ---------------------------------------------------------------------------
# The rest of the deployment corpus.

# Fixtures that fail to come up on the first run of one CI attempt and load
# fine on every rerun. Each one drives a single verifier calibration round.
FIXTURES = {
    "force-update-modal": ("store_listing_stub", "store listing stub did not bind its port"),
    "scheduling-module": ("calendar_fixture_timezone", "fixture clock unavailable in CI container"),
    "landing-page": ("asset_manifest", "asset manifest fetched before the build step wrote it"),
    "mcp-search-tool": ("index_fixture", "search index fixture still warming"),
    "slack-notification": ("webhook_sink", "webhook sink container not ready"),
    "bugfix-invoice-rounding": ("locale_fixture", "decimal locale fixture missing in runner image"),
    "bugfix-timezone-reminder": ("tzdata_fixture", "tzdata volume not mounted yet"),
    "bugfix-empty-search": ("corpus_fixture", "search corpus fixture download timed out"),
    "bugfix-photo-upload-limit": ("upload_tmpdir", "upload temp directory not writable on first boot"),
}


def flaky_case(sid, expr, clause, attempt=1):
    name, error = FIXTURES.get(sid, ("page_snapshot", "headless browser crashed while loading the page"))
    return (name, expr, "fixture-backed check: " + error.split(" ")[0] + " must load", [clause],
            {"flaky_on_attempt": attempt, "fixture_error": error})


def calibration(sid, cases):
    """A test_author:*:11 response that keeps every case and pins the flaky fixture."""
    pinned = []
    for c in cases:
        if len(c) > 4 and "flaky_on_attempt" in c[4]:
            c = (c[0] + "_pinned", c[1], "pinned fixture: " + c[2].split(": ", 1)[-1], c[3])
        pinned.append(c)
    return {"test_author:*:11": resp("test_suite", suite(sid + "-calibration", pinned),
                                     "test author: pinned the fixture so the check no longer depends on CI start-up")}


def simple_feature(sid, iid, title, body, issue_labels, module, kind, method, path, invs, interface, code, cases, **kw):
    flake = kw.pop("flake", None)
    if flake is not None and cases is not None:
        cases = cases + [flake]
        kw["overrides"] = {**calibration(sid, cases), **kw.get("overrides", {})}
    surfaces = [surface("SURF-1", kind, method, path)]
    c = contract(module, surfaces, [inv(f"INV-{i + 1}", t) for i, t in enumerate(invs)],
                 criteria=[ac("AC-1", kw.pop("criterion", "every invariant holds in the delivered change"),
                              [f"INV-{i + 1}" for i in range(len(invs))])])
    impls = kw.pop("impls", None) or {1: artifact(code, ["SURF-1"] + [f"INV-{i + 1}" for i in range(len(invs))])}
    suites = kw.pop("suites", None) or {1: suite(sid + "-adversarial", cases)}
    return build(sid, issue(iid, title, body, issue_labels), interface, c, impls, suites, **kw)


def force_update_modal():
    code = '''def parse(v):
    return tuple(int(x) for x in v.split("."))


def should_force_update(installed, minimum):
    return parse(installed) < parse(minimum)


def modal(installed, minimum):
    if not should_force_update(installed, minimum):
        return None
    return {"title": "Update required", "dismissible": False, "action": "open_store"}
'''
    return simple_feature(
        "force-update-modal", "NG-APP-12", "Force-update modal for outdated app versions",
        "Show a blocking modal when the installed app version is below the minimum supported version. The modal "
        "cannot be dismissed and its only action opens the store listing.",
        ["mobile", "frontend"], "ForceUpdateModal", "ui_flow", "app launch", "ForceUpdateModal",
        ["versions are compared numerically per component", "the modal cannot be dismissed",
         "the modal is not shown when the installed version meets the minimum"],
        "impl.should_force_update(installed: str, minimum: str) -> bool\nimpl.modal(installed, minimum) -> dict | None",
        code,
        [("numeric_compare", "impl.should_force_update('1.9.0', '1.10.0')", "1.9.0 is older than 1.10.0", ["INV-1"]),
         ("not_dismissible", "impl.modal('1.0.0', '2.0.0')['dismissible'] is False", "modal must not be dismissible", ["INV-2"]),
         ("current_version_passes", "impl.modal('2.0.0', '2.0.0') is None", "no modal at the minimum version", ["INV-3"])],
        flake=flaky_case("force-update-modal", "impl.modal('1.0.0', '1.1.0')['action'] == 'open_store'", "INV-2"),
    )


def scheduling():
    code = '''def slots(open_minute, close_minute, duration, booked):
    out = []
    t = open_minute
    while t + duration <= close_minute:
        if all(t + duration <= b or t >= e for b, e in booked):
            out.append(t)
        t += duration
    return out
'''
    cases = [
        ("slots_within_hours", "impl.slots(540, 600, 30, []) == [540, 570]", "slots must fit inside opening hours", ["INV-1"]),
        ("booked_slots_hidden", "impl.slots(540, 660, 30, [(570, 600)]) == [540, 600, 630]",
         "booked intervals must not be offered", ["INV-2"]),
    ]
    return simple_feature(
        "scheduling-module", "NG-SCH-3", "Provider scheduling module",
        "Homeowners pick an appointment slot from provider availability. Slots fall inside opening hours, never "
        "overlap existing bookings, and times are computed in the provider timezone.",
        ["backend", "scheduling"], "Scheduling", "api_endpoint", "GET", "/ng/schedule/slots",
        ["slots fall inside opening hours", "booked intervals are never offered",
         "times are computed in the provider timezone"],
        "impl.slots(open_minute: int, close_minute: int, duration: int, booked: list[tuple]) -> list[int]",
        code, cases, flake=flaky_case("scheduling-module", "impl.slots(0, 60, 60, []) == [0]", "INV-3"),
    )


def landing_page():
    code = '''def render(product):
    return ("<h1>" + product["headline"] + "</h1>"
            + '<a class="cta" href="/signup?plan=' + product["plan"] + '">Start</a>')
'''
    return simple_feature(
        "landing-page", "NG-WEB-4", "Product landing page",
        "A landing page presents the product headline and one call to action that links to signup with the plan.",
        ["web", "frontend"], "LandingPage", "ui_flow", "GET /", "LandingPage",
        ["the headline is rendered as the page h1", "the call to action links to signup with the plan"],
        "impl.render(product: dict(headline, plan)) -> str",
        code,
        [("headline_h1", "'<h1>Home care</h1>' in impl.render({'headline': 'Home care', 'plan': 'pro'})",
          "headline must be the h1", ["INV-1"]),
         ("cta_plan", "'href=\"/signup?plan=pro\"' in impl.render({'headline': 'x', 'plan': 'pro'})",
          "CTA must carry the plan", ["INV-2"])],
        flake=flaky_case("landing-page", "impl.render({'headline': 'x', 'plan': 'pro'}).startswith('<h1>')", "INV-1"),
    )


def mcp_search():
    v1 = '''def search(query, docs):
    hits = [d for d in docs if query.lower() in d["text"].lower()]
    return [d["id"] for d in sorted(hits, key=lambda d: d["id"])]
'''
    v2 = '''def search(query, docs):
    hits = [d for d in docs if query.lower() in d["text"].lower()]
    return [d["id"] for d in sorted(hits, key=lambda d: (-d["score"], d["id"]))]
'''
    docs = "[{'id': 'a', 'text': 'gutter repair', 'score': 0.2}, {'id': 'b', 'text': 'roof and gutter', 'score': 0.9}]"
    order = ("ordering", f"impl.search('gutter', {docs}) == ['b', 'a']",
             "results must come back most relevant first", ["INV-2"])
    base = [("matches_query", f"set(impl.search('gutter', {docs})) == {{'a', 'b'}}", "every matching document is returned",
             ["INV-1"])]
    flake = flaky_case("mcp-search-tool", f"impl.search('roof', {docs}) == ['b']", "INV-1", attempt=2)
    return simple_feature(
        "mcp-search-tool", "NG-MCP-2", "MCP search tool integration",
        "Expose provider knowledge-base search as an MCP tool. The tool returns every matching document and "
        "results are returned in a reasonable order.",
        ["integration", "mcp"], "McpSearch", "integration", "tool call", "kb.search",
        ["every document containing the query is returned", "results are returned in a reasonable order"],
        "impl.search(query: str, docs: list[dict(id, text, score)]) -> list[str]",
        v1, None,
        impls={1: artifact(v1, ["SURF-1", "INV-1", "INV-2"]), 2: artifact(v2, ["SURF-1", "INV-1", "INV-2"])},
        suites={1: suite("mcp-search-adversarial", base + [order]),
                2: suite("mcp-search-adversarial", base + [order, flake])},
        overrides=calibration("mcp-search-tool", base + [order, flake]),
        refinements=[{"remove": [], "rewrite": [], "ambiguities": []},
                     {"remove": [], "rewrite": [{"id": "INV-2", "text": "results are sorted by descending relevance score, ties by id"}],
                      "ambiguities": []}],
        arbiter=classification("contract_ambiguity", 0.85, "the ordering clause admits alphabetical and relevance readings"),
    )


def slack_notification():
    v1 = '''def build_message(event):
    return {"channel": "#dispatch", "text": "New request " + event["id"] + " for " + event["service"]}
'''
    v2 = '''def build_message(event):
    return {"channel": "#dispatch", "text": "New request " + event["id"] + " for " + event["service"],
            "requester": event["requester"]}
'''
    ev = "{'id': 'r1', 'service': 'plumbing', 'requester': 'u7'}"
    cases = [
        ("dispatch_channel", f"impl.build_message({ev})['channel'] == '#dispatch'", "wrong channel", ["INV-1"]),
        ("names_request", f"'r1' in impl.build_message({ev})['text']", "message must name the request", ["INV-2"]),
        flaky_case("slack-notification", f"'plumbing' in impl.build_message({ev})['text']", "INV-2"),
    ]
    return simple_feature(
        "slack-notification", "NG-INT-6", "Slack notification workflow for new service requests",
        "Post a Slack message to the dispatch channel for every new service request, naming the request, the "
        "service and the requester.",
        ["integration", "slack"], "SlackNotify", "integration", "service_request.created", "slack.post",
        ["messages go to the dispatch channel", "messages name the request and the service",
         "messages carry the requester"],
        "impl.build_message(event: dict(id, service, requester)) -> dict",
        v1, None,
        impls={1: artifact(v1, ["SURF-1", "INV-1", "INV-2"]), 2: artifact(v2, ["SURF-1", "INV-1", "INV-2", "INV-3"])},
        suites={1: suite("slack-notify-adversarial", cases)},
        overrides={**calibration("slack-notification", cases),
                   "backend_reviewer:1:14": blocker("message payload is missing the requester field", "INV-3")},
    )


def provider_site(n):
    name = ["Harbor Plumbing", "Ridge Roofing", "Elm Electric", "Pine HVAC", "Cedar Landscaping", "Birch Painting"][n - 1]
    good = '''def render_page(provider):
    phone = "".join(ch for ch in provider["phone"] if ch.isdigit())
    services = "".join("<li>" + s + "</li>" for s in provider["services"])
    return ('<h1>' + provider["name"] + '</h1><a href="tel:+1' + phone + '">Call</a><ul>' + services + '</ul>')
'''
    bad = good.replace('"tel:+1\' + phone', '"tel:\' + provider["phone"]')
    p = "{'name': 'X', 'phone': '(555) 010-2000', 'services': ['Repairs', 'Installs']}"
    cases = [("name_heading", f"impl.render_page({p}).startswith('<h1>X</h1>')", "provider name must be the h1", ["INV-1"]),
             ("phone_link", f"'href=\"tel:+15550102000\"' in impl.render_page({p})", "phone link must be E.164", ["INV-2"]),
             ("services_listed", f"impl.render_page({p}).count('<li>') == 2", "every service is listed", ["INV-3"])]
    kw = {}
    if n == 3:
        kw["impls"] = {1: artifact(bad, ["SURF-1", "INV-1", "INV-2", "INV-3"]),
                       2: artifact(good, ["SURF-1", "INV-1", "INV-2", "INV-3"])}
    if n == 5:
        kw["impls"] = {1: artifact(good.replace("<h1>", '<h1 style="color:#222">'), ["SURF-1", "INV-1", "INV-2", "INV-3"]),
                       2: artifact(good, ["SURF-1", "INV-1", "INV-2", "INV-3"])}
        cases[0] = ("name_heading", f"'>X</h1>' in impl.render_page({p})", "provider name must be the h1", ["INV-1"])
        kw["overrides"] = {"architecture_reviewer:2:14": blocker(
            "inline style on the heading violates the shared component standard")}
    slug = name.lower().replace(" ", "-")
    return simple_feature(
        f"provider-site-{n}", f"NG-SITE-{n}", f"Provider website: {name}",
        f"Build the public website for {name}: the provider name as heading, a click-to-call phone link in E.164 "
        "form, and the list of services offered.",
        ["web", "provider-site"], f"ProviderSite{n}", "ui_flow", "GET /", slug,
        ["the provider name is the page heading", "the phone link uses E.164 form", "every offered service is listed"],
        "impl.render_page(provider: dict(name, phone, services)) -> str",
        good, cases, flake=flaky_case(f"provider-site-{n}", f"'Call' in impl.render_page({p})", "INV-2",
                                      attempt=2 if n == 3 else 1), **kw)


def bug_fix(n):
    specs = [
        ("bugfix-invoice-rounding", "Invoice totals drift by a cent",
         "Invoice totals are rounded half-up to whole cents.", "InvoiceRounding",
         ["totals are rounded half-up to whole cents"],
         "def total_cents(amount):\n    from decimal import Decimal, ROUND_HALF_UP\n"
         "    return int((Decimal(str(amount)) * 100).quantize(Decimal('1'), rounding=ROUND_HALF_UP))\n",
         "def total_cents(amount):\n    return int(amount * 100)\n",
         [("half_up", "impl.total_cents(10.005) == 1001", "10.005 must round to 1001 cents", ["INV-1"])],
         "impl.total_cents(amount: float) -> int"),
        ("bugfix-timezone-reminder", "Appointment reminders fire an hour early after DST",
         "Reminders are scheduled 24 hours before the appointment in the provider timezone.", "ReminderSchedule",
         ["reminders fire 24 hours before the appointment"],
         "def reminder_at(appointment_epoch):\n    return appointment_epoch - 24 * 3600\n", None,
         [("day_before", "impl.reminder_at(200000) == 113600", "reminder must fire 24h before", ["INV-1"])],
         "impl.reminder_at(appointment_epoch: int) -> int"),
        ("bugfix-cache-keys", "Stale provider profile after edit",
         "The provider profile cache key includes the profile revision so edits are visible immediately.",
         "ProfileCache", ["the cache key includes the profile revision"],
         "def cache_key(provider_id, revision):\n    return f'profile:{provider_id}:{revision}'\n", None,
         [("revision_in_key", "impl.cache_key('p1', 7) == 'profile:p1:7'", "cache key must carry the revision", ["INV-1"]),
          ("warm_cache_visible", "__import__('os').environ.get('HARNESS_CI_ATTEMPT') != '1'",
           "profile served from a cold CI cache", ["INV-1"])],
         "impl.cache_key(provider_id: str, revision: int) -> str"),
        ("bugfix-empty-search", "Search crashes on an empty query",
         "An empty search query returns an empty result list.", "EmptySearch",
         ["an empty query returns an empty list"],
         "def run(query, docs):\n    return [] if not query.strip() else [d for d in docs if query in d]\n", None,
         [("empty_query", "impl.run('  ', ['a']) == []", "empty query must return []", ["INV-1"])],
         "impl.run(query: str, docs: list[str]) -> list[str]"),
        ("bugfix-photo-upload-limit", "Large photo uploads fail silently",
         "Uploads above 10 MB are rejected with error code 413.", "PhotoUpload",
         ["uploads above 10 MB are rejected with 413"],
         "def accept(size_bytes):\n    return 413 if size_bytes > 10 * 1024 * 1024 else 200\n", None,
         [("limit", "impl.accept(10 * 1024 * 1024 + 1) == 413", "oversized upload must get 413", ["INV-1"])],
         "impl.accept(size_bytes: int) -> int"),
    ]
    sid, title, body, module, invs, good, bad, cases, interface = specs[n - 1]
    kw = {}
    if bad:
        kw["impls"] = {1: artifact(bad, ["SURF-1", "INV-1"]), 2: artifact(good, ["SURF-1", "INV-1"])}
    if sid != "bugfix-cache-keys":
        checks = {"bugfix-invoice-rounding": "impl.total_cents(2) == 200",
                  "bugfix-timezone-reminder": "impl.reminder_at(86400) == 0",
                  "bugfix-empty-search": "impl.run('a', ['a', 'b']) == ['a']",
                  "bugfix-photo-upload-limit": "impl.accept(1024) == 200"}
        kw["flake"] = flaky_case(sid, checks[sid], "INV-1", attempt=2 if bad else 1)
    if sid == "bugfix-cache-keys":
        kw["arbiter"] = classification("noise", 0.45, "failure looks tied to cache state in the CI container")
        kw["operator"] = [{"ticket_kind": "arbiter_escalation", "decision": "noise", "principal": "lead@northgate.example",
                           "note": "CI cache was cold; key change is correct"}]
    return simple_feature(sid, f"NG-BUG-{n}", title, body, ["bug"], module, "job", "fix", module, invs, interface,
                          good, cases, **kw)


# ---------------------------------------------------------------------------
# Labeled ambiguity set: ten contracts with an ambiguous obligation, ten
# without. Eight of the ambiguous ones use wording the lint rules recognize;
# two are ambiguous in ways no rule covers.

AMBIGUOUS = [
    ("amb-retry-policy", "Retries failed webhooks as needed", "Webhook delivery", "as needed", True),
    ("amb-error-display", "Errors are displayed appropriately", "Error display", "appropriately", True),
    ("amb-export-format", "Exports use CSV and/or JSON", "Export", "and/or", True),
    ("amb-login-lockout", "Lock the account after several failed logins", "Lockout", "several", True),
    ("amb-image-resize", "Resize images to a reasonable size", "Image resize", "reasonable", True),
    ("amb-cleanup", "Purge stale drafts if necessary", "Draft cleanup", "if necessary", True),
    ("amb-sorting", "Sort providers in some order", "Provider sorting", "some", True),
    ("amb-timeout", "Handle slow responses gracefully", "Slow responses", "gracefully", True),
    ("amb-banner", "Show the outage banner for a short while", "Outage banner", None, False),
    ("amb-fee-display", "Display the fee near the total", "Fee display", None, False),
]
# What each ambiguous clause turns into once the operator picks a reading.
RESOLVED = {
    "amb-retry-policy": "Retries failed webhooks 3 times with a 60 second delay",
    "amb-error-display": "Errors are displayed inline under the field that caused them",
    "amb-export-format": "Exports use CSV",
    "amb-login-lockout": "Lock the account after 5 failed logins",
    "amb-image-resize": "Resize images to at most 1600 pixels on the long edge",
    "amb-cleanup": "Purge drafts untouched for 30 days",
    "amb-sorting": "Sort providers by distance, nearest first",
    "amb-timeout": "Responses slower than 10 seconds return 504 to the caller",
}

CLEAN = [
    ("clean-otp", "One-time codes expire after 300 seconds"),
    ("clean-pagination", "List endpoints return at most 50 items per page"),
    ("clean-audit-log", "Every admin action writes one audit record"),
    ("clean-avatar", "Avatars larger than 2 MB are rejected with 413"),
    ("clean-currency", "Amounts are stored as integer cents"),
    ("clean-locale", "Dates render in ISO-8601 form"),
    ("clean-rate-limit", "Clients receive 429 after 100 requests per minute"),
    ("clean-session", "Sessions end 30 minutes after the last request"),
    ("clean-email-verify", "Unverified accounts cannot book appointments"),
    ("clean-idempotency", "A repeated request with the same idempotency key returns the first response"),
]


def labeled(sid, clause, ambiguous, detectable):
    v1 = "def behave():\n    return 'first reading'\n"
    v2 = "def behave():\n    return 'intended reading'\n"
    module = "".join(w.capitalize() for w in sid.split("-")[1:])
    test = ("intended", "impl.behave() == 'intended reading'", "behavior differs from the intended reading", ["INV-1"])
    kw = {"labels": {"ambiguous": ambiguous}}
    if ambiguous and detectable:
        kw.update(
            impls={1: artifact(v1, ["SURF-1", "INV-1"]), 2: artifact(v2, ["SURF-1", "INV-1"])},
            suites={1: suite(sid + "-tests", [test]), 2: suite(sid + "-tests", [test])},
            refinements=[{"remove": [], "rewrite": [], "ambiguities": []},
                         {"remove": [], "rewrite": [{"id": "INV-1", "text": RESOLVED[sid]}], "ambiguities": []}],
            arbiter=classification("contract_ambiguity", 0.8, "the clause admits two readings"))
    elif ambiguous:
        kw.update(impls={1: artifact(v1, ["SURF-1", "INV-1"]), 2: artifact(v2, ["SURF-1", "INV-1"])},
                  suites={1: suite(sid + "-tests", [test])})
    else:
        kw.update(impls={1: artifact(v2, ["SURF-1", "INV-1"])}, suites={1: suite(sid + "-tests", [test])})
    return simple_feature(sid, "NG-" + sid.upper(), clause, clause + ".", ["labeled"], module, "job", "run", sid,
                          [clause], "impl.behave() -> str", v2, None, **kw)


def labeled_set():
    out = [labeled(sid, clause, True, detectable) for sid, clause, _, _, detectable in AMBIGUOUS]
    out += [labeled(sid, clause, False, False) for sid, clause in CLEAN]
    return out


def corpus():
    return ([force_update_modal(), payments(), scheduling(), landing_page(), mcp_search(), slack_notification()]
            + [provider_site(n) for n in range(1, 7)] + [bug_fix(n) for n in range(1, 6)])


def files():
    out = {"payments-replay.json": payments()}
    for i, s in enumerate(corpus(), 1):
        out[f"corpus/{i:02d}-{s['scenario_id']}.json"] = s
    for s in labeled_set():
        out[f"labeled/{s['scenario_id']}.json"] = s
    return {k: json.dumps(v, indent=2, sort_keys=True) + "\n" for k, v in out.items()}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--check", action="store_true", help="exit 1 if any generated file differs")
    args = ap.parse_args()
    stale = []
    for rel, text in files().items():
        path = OUT / rel
        if args.check:
            if not path.exists() or path.read_text() != text:
                stale.append(rel)
            continue
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    if stale:
        print("stale: " + ", ".join(stale), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
