"""Executable clinical-trial governance scenarios.

Three community templates model a trial-matching pipeline: a data-access
layer (consent-gated record reads), a matching workflow layer (AI agents
recommend, physicians decide), and a negotiation layer (external data
exchange under compliance and PHI embargoes). Agents are deterministic
scripts; their "reasoning" appears only as opaque audited actions, so the
governance layer is the entire subject under test.

Each built-in scenario carries expected verdicts and expected property
violations. inject_violation produces minimally mutated variants that
must trip exactly one property template and leave the others clean.
"""

from __future__ import annotations

import shlex
from dataclasses import dataclass, replace
from typing import Iterable

from .deontic import OUTCOME_RECOMMENDED
from .errors import CannotInject, GovernanceError, ScriptError
from .runtime import (
    APPEND_ONLY,
    AuditRecord,
    KIND_SPEECH_ACT,
    KIND_TOKEN_TRANSITION,
    KIND_VERDICT,
    MODE_ADVISORY,
    MODE_AUTONOMOUS,
    MODES,
    Principal,
    READ_WRITE,
    SpeechAct,
    instantiate_community,
)
from .spec_lang import parse_spec
from .spec_lang.ast import CommunityTemplate, Modality, RoleKind, SpeechActKind
from .verifier import (
    EventSchema,
    PROP_ACCOUNTABILITY,
    PROP_AUTHORITY,
    PROP_PROHIBITION,
    PROP_SAFETY,
    PropertySpec,
    Violation,
    _select_token,
    run_checks,
)

# ----------------------------------------------------------------------
# community templates

LAYER1_SOURCE = """\
community DataAccessCommunity {
  role FHIRDataProvider: system;
  role DataExtractionAgent: llm_agent;
  role ConsentManager: llm_agent;
  role Patient: human [1..*];
  role DataGovernanceOfficer: human;

  object ConsentRegistry;
  object AuditLog;
  object PatientDataCache;

  policy burden(verify_consent, ConsentManager);
  policy permit(read_demographics, DataExtractionAgent)
    requires discharged burden(verify_consent, ConsentManager);
  policy embargo(access_without_consent, ALL);

  contract ConsentGovernance {
    allow DataGovernanceOfficer: declare_burden, declare_permit, declare_embargo, grant, revoke;
    allow ConsentManager: discharge;
    escalate when policy_violation to DataGovernanceOfficer;
  }
}
"""

LAYER2_SOURCE = """\
community MatchingWorkflowCommunity {
  role ConditionExtractor: agentic_ai;
  role PatientEmbedder: agentic_ai;
  role EligibilityStructurer: agentic_ai;
  role CriteriaMatcher: agentic_ai;
  role Physician: human [1..2];
  role WorkflowOrchestrator: agentic_ai;

  group MatchingAgent = {ConditionExtractor, PatientEmbedder, EligibilityStructurer, CriteriaMatcher};

  object TrialCandidateSet;
  object PatientProfile;
  object WorkflowState;

  policy permit(evaluate_eligibility, MatchingAgent);
  policy embargo(final_decision, ALL_AI_AGENTS);
  policy burden(make_enrollment_decision, Physician);
  policy burden(provide_explanation, MatchingAgent);

  contract MatchingWorkflowContract {
    allow WorkflowOrchestrator: propose, accept, reject, counter_propose, transfer;
    allow ConditionExtractor: discharge;
    allow PatientEmbedder: discharge;
    allow EligibilityStructurer: discharge;
    allow CriteriaMatcher: discharge;
    escalate when policy_violation to Physician;
  }
  contract PhysicianReviewContract {
    allow Physician: discharge, transfer, accept, reject, revoke;
  }
}
"""

LAYER3_SOURCE = """\
community NegotiationCommunity {
  role NegotiationCoordinator: agentic_ai;
  role CapabilityDiscoverer: agentic_ai;
  role SemanticBridge: agentic_ai;
  role ConflictResolver: agentic_ai;
  role ComplianceValidator: agentic_ai;
  role TrialSiteCoordinator: human;
  role DataGovernanceOfficer: human;
  role ExternalSystem: system [1..*];

  group ComplianceAgent = {ComplianceValidator};
  group DataOfficer = {DataGovernanceOfficer};

  object NegotiationHistory;
  object CapabilityRegistry;
  object SemanticMappings;

  policy burden(validate_compliance, ComplianceAgent);
  policy burden(approve_novel_request, DataOfficer);
  policy permit(negotiate_protocol, NegotiationCoordinator);
  policy embargo(share_PHI_externally, ALL)
    unless permit(share_specific_data, DataOfficer);
  policy permit(communicate_externally, NegotiationCoordinator)
    requires discharged burden(validate_compliance, ComplianceAgent);

  contract NegotiationProtocol {
    allow NegotiationCoordinator: propose, accept, reject, counter_propose;
    allow ExternalSystem: propose, accept, reject, counter_propose;
  }
  contract ExternalSystemNegotiation {
    allow TrialSiteCoordinator: propose, accept, reject, counter_propose;
    allow DataGovernanceOfficer: declare_burden, declare_permit, declare_embargo, grant, revoke, discharge;
  }
  contract EscalationContract {
    allow NegotiationCoordinator: escalate;
    allow ComplianceValidator: escalate, discharge;
    escalate when low_confidence to TrialSiteCoordinator;
    escalate when policy_violation to DataGovernanceOfficer;
  }
}
"""


def build_clinical_layers() -> tuple[CommunityTemplate, CommunityTemplate, CommunityTemplate]:
    """The three trial-matching community templates, parsed fresh."""
    return (
        parse_spec(LAYER1_SOURCE),
        parse_spec(LAYER2_SOURCE),
        parse_spec(LAYER3_SOURCE),
    )


# ----------------------------------------------------------------------
# scenario data model


@dataclass(frozen=True)
class CastMember:
    agent: str
    role: str
    kind: RoleKind
    principal: str


@dataclass(frozen=True)
class Stage:
    """One community instance plus the script that drives it."""

    community: str
    source: str
    owner: str
    mode: str
    cast: tuple[CastMember, ...]
    script: tuple[EventSchema, ...]
    properties: tuple[PropertySpec, ...]
    disciplines: tuple[tuple[str, str], ...] = ()
    # (event label, outcome) pairs that must hold after the run
    expected_verdicts: tuple[tuple[str, str], ...] = ()
    # (property template, event label) pairs the checks must report, exactly
    expected_violations: tuple[tuple[str, str], ...] = ()


@dataclass(frozen=True)
class Scenario:
    name: str
    synopsis: str
    stages: tuple[Stage, ...]

    @property
    def templates(self) -> tuple[CommunityTemplate, ...]:
        return tuple(parse_spec(stage.source) for stage in self.stages)


@dataclass(frozen=True)
class StageReport:
    community: str
    outcomes: tuple[tuple[str, str], ...]
    verdict_mismatches: tuple[str, ...]
    violations: tuple[tuple[str, int, str], ...]  # (property, at_seq, event label)
    violation_mismatches: tuple[str, ...]
    export: str
    records: tuple[AuditRecord, ...]

    @property
    def ok(self) -> bool:
        return not self.verdict_mismatches and not self.violation_mismatches


@dataclass(frozen=True)
class ScenarioReport:
    name: str
    stages: tuple[StageReport, ...]

    @property
    def ok(self) -> bool:
        return all(stage.ok for stage in self.stages)

    def summary(self) -> str:
        lines = [f"scenario {self.name} [{'PASS' if self.ok else 'FAIL'}]"]
        for stage in self.stages:
            lines.append(
                f"  {stage.community}: {len(stage.outcomes)} events, "
                f"{len(stage.records)} records, {len(stage.violations)} violations"
            )
            for prop, at_seq, label in stage.violations:
                lines.append(f"    violation {prop} at seq {at_seq} ({label})")
            for mismatch in stage.verdict_mismatches + stage.violation_mismatches:
                lines.append(f"    MISMATCH {mismatch}")
        return "\n".join(lines)


# script event constructors; kept terse because scripts are long


def _reg(label: str, principal: str) -> EventSchema:
    return EventSchema(label, "register_principal", {"principal": principal})


def _bind(
    label: str, role: str, agent: str, kind: str, principal: str, force: bool = False
) -> EventSchema:
    params = {"role": role, "agent": agent, "kind": kind, "principal": principal}
    if force:
        params["force"] = True
    return EventSchema(label, "bind", params)


def _unbind(label: str, role: str, agent: str) -> EventSchema:
    return EventSchema(label, "unbind", {"role": role, "agent": agent})


def _act(
    label: str, actor: str, action: str, subject: str | None = None, effects: tuple = ()
) -> EventSchema:
    params: dict = {"actor": actor, "action": action}
    if subject is not None:
        params["subject"] = subject
    if effects:
        params["effects"] = list(effects)
    return EventSchema(label, "action", params)


def _say(label: str, sender: str, kind: str, select: dict | None = None, **payload) -> EventSchema:
    params: dict = {"kind": kind, "sender": sender, "payload": payload}
    if select is not None:
        params["select_token"] = select
    return EventSchema(label, "speech_act", params)


def _sel(modality: str, action: str, state: str = "HELD", **extra) -> dict:
    selector = {"modality": modality, "action": action, "state": state}
    selector.update(extra)
    return selector


def _put(obj: str, key: str, value) -> dict:
    return {"object": obj, "op": "put", "key": key, "value": value}


# ----------------------------------------------------------------------
# built-in scenarios


def _happy_path() -> Scenario:
    stage_access = Stage(
        community="DataAccessCommunity",
        source=LAYER1_SOURCE,
        owner="MedCenter",
        mode=MODE_AUTONOMOUS,
        disciplines=(("PatientDataCache", READ_WRITE),),
        cast=(
            CastMember("fhir_gateway", "FHIRDataProvider", RoleKind.SYSTEM, "MedCenter"),
            CastMember("extract_bot", "DataExtractionAgent", RoleKind.LLM_AGENT, "VendorX"),
            CastMember("consent_mgr", "ConsentManager", RoleKind.LLM_AGENT, "VendorX"),
            CastMember("patient_007", "Patient", RoleKind.HUMAN, "PatientCouncil"),
            CastMember("officer_dga", "DataGovernanceOfficer", RoleKind.HUMAN, "MedCenter"),
        ),
        script=(
            _reg("reg_vendor", "VendorX"),
            _reg("reg_patients", "PatientCouncil"),
            _bind("bind_gateway", "FHIRDataProvider", "fhir_gateway", "system", "MedCenter"),
            _bind("bind_extract_bot", "DataExtractionAgent", "extract_bot", "llm_agent", "VendorX"),
            _bind("bind_consent_mgr", "ConsentManager", "consent_mgr", "llm_agent", "VendorX"),
            _bind("bind_patient", "Patient", "patient_007", "human", "PatientCouncil"),
            _bind("bind_officer", "DataGovernanceOfficer", "officer_dga", "human", "MedCenter"),
            _say(
                "declare_consent",
                "officer_dga",
                "declare_burden",
                action="verify_consent",
                holder="ConsentManager",
                subject="patient_007",
            ),
            _say(
                "discharge_consent",
                "consent_mgr",
                "discharge",
                select=_sel("burden", "verify_consent", subject="patient_007"),
            ),
            _act(
                "read_demographics",
                "extract_bot",
                "read_demographics",
                subject="patient_007",
                effects=(_put("PatientDataCache", "patient_007", "demographics_record"),),
            ),
            _act("access_probe", "extract_bot", "access_without_consent", subject="patient_007"),
            _unbind("unbind_patient", "Patient", "patient_007"),
        ),
        properties=(
            PropertySpec.safety("read_demographics", "verify_consent"),
            PropertySpec.prohibition("access_without_consent", "ALL"),
            PropertySpec.accountability(),
        ),
        expected_verdicts=(
            ("discharge_consent", "accepted"),
            ("read_demographics", "admissible"),
            ("access_probe", "blocked"),
        ),
    )

    stage_matching = Stage(
        community="MatchingWorkflowCommunity",
        source=LAYER2_SOURCE,
        owner="TrialSponsor",
        mode=MODE_AUTONOMOUS,
        disciplines=(
            ("TrialCandidateSet", READ_WRITE),
            ("PatientProfile", READ_WRITE),
            ("WorkflowState", READ_WRITE),
        ),
        cast=(
            CastMember("cond_extractor", "ConditionExtractor", RoleKind.AGENTIC_AI, "VendorX"),
            CastMember("embedder", "PatientEmbedder", RoleKind.AGENTIC_AI, "VendorX"),
            CastMember("structurer", "EligibilityStructurer", RoleKind.AGENTIC_AI, "VendorX"),
            CastMember("matcher", "CriteriaMatcher", RoleKind.AGENTIC_AI, "VendorX"),
            CastMember("physician_1", "Physician", RoleKind.HUMAN, "TrialSponsor"),
            CastMember("physician_2", "Physician", RoleKind.HUMAN, "TrialSponsor"),
            CastMember("orchestrator", "WorkflowOrchestrator", RoleKind.AGENTIC_AI, "TrialSponsor"),
        ),
        script=(
            _reg("reg_vendor", "VendorX"),
            _bind("bind_cond_extractor", "ConditionExtractor", "cond_extractor", "agentic_ai", "VendorX"),
            _bind("bind_embedder", "PatientEmbedder", "embedder", "agentic_ai", "VendorX"),
            _bind("bind_structurer", "EligibilityStructurer", "structurer", "agentic_ai", "VendorX"),
            _bind("bind_matcher", "CriteriaMatcher", "matcher", "agentic_ai", "VendorX"),
            _bind("bind_physician_1", "Physician", "physician_1", "human", "TrialSponsor"),
            _bind("bind_physician_2", "Physician", "physician_2", "human", "TrialSponsor"),
            _bind("bind_orchestrator", "WorkflowOrchestrator", "orchestrator", "agentic_ai", "TrialSponsor"),
            _act(
                "embed_profile",
                "embedder",
                "evaluate_eligibility",
                subject="patient_007",
                effects=(_put("PatientProfile", "patient_007", "embedding_v1"),),
            ),
            _act(
                "eval_match",
                "matcher",
                "evaluate_eligibility",
                subject="patient_007",
                effects=(_put("TrialCandidateSet", "patient_007", "trial_shortlist"),),
            ),
            _say("explain", "matcher", "discharge", select=_sel("burden", "provide_explanation")),
            _say(
                "transfer_decision",
                "physician_1",
                "transfer",
                select=_sel("burden", "make_enrollment_decision"),
                to="physician_2",
            ),
            _say("decide", "physician_2", "discharge", select=_sel("burden", "make_enrollment_decision")),
        ),
        properties=(
            PropertySpec.authority("make_enrollment_decision", "Physician"),
            PropertySpec.prohibition("final_decision", "ALL_AI_AGENTS"),
            PropertySpec.accountability(),
        ),
        expected_verdicts=(
            ("embed_profile", "admissible"),
            ("eval_match", "admissible"),
            ("explain", "accepted"),
            ("transfer_decision", "accepted"),
            ("decide", "accepted"),
        ),
    )

    return Scenario(
        name="happy_path",
        synopsis="consent obtained, demographics read, eligibility matched, physician decides",
        stages=(stage_access, stage_matching),
    )


def _rogue_ai() -> Scenario:
    stage = Stage(
        community="MatchingWorkflowCommunity",
        source=LAYER2_SOURCE,
        owner="TrialSponsor",
        mode=MODE_AUTONOMOUS,
        disciplines=(("TrialCandidateSet", READ_WRITE),),
        cast=(
            CastMember("matcher", "CriteriaMatcher", RoleKind.AGENTIC_AI, "VendorX"),
            CastMember("physician_1", "Physician", RoleKind.HUMAN, "TrialSponsor"),
        ),
        script=(
            _reg("reg_vendor", "VendorX"),
            _bind("bind_matcher", "CriteriaMatcher", "matcher", "agentic_ai", "VendorX"),
            _bind("bind_physician", "Physician", "physician_1", "human", "TrialSponsor"),
            _act("rogue_attempt", "matcher", "final_decision", subject="patient_007"),
            _act("eval_match", "matcher", "evaluate_eligibility", subject="patient_007"),
            _say("decide", "physician_1", "discharge", select=_sel("burden", "make_enrollment_decision")),
        ),
        properties=(
            PropertySpec.authority("make_enrollment_decision", "Physician"),
            PropertySpec.prohibition("final_decision", "ALL_AI_AGENTS"),
            PropertySpec.accountability(),
        ),
        expected_verdicts=(
            ("rogue_attempt", "blocked"),
            ("eval_match", "admissible"),
            ("decide", "accepted"),
        ),
    )
    return Scenario(
        name="rogue_ai",
        synopsis="an AI agent attempts the enrollment decision; the embargo blocks it",
        stages=(stage,),
    )


def _negotiation() -> Scenario:
    stage = Stage(
        community="NegotiationCommunity",
        source=LAYER3_SOURCE,
        owner="TrialNetwork",
        mode=MODE_AUTONOMOUS,
        disciplines=(("CapabilityRegistry", READ_WRITE),),
        cast=(
            CastMember("neg_coord", "NegotiationCoordinator", RoleKind.AGENTIC_AI, "VendorY"),
            CastMember("capability_bot", "CapabilityDiscoverer", RoleKind.AGENTIC_AI, "VendorY"),
            CastMember("semantic_bridge", "SemanticBridge", RoleKind.AGENTIC_AI, "VendorY"),
            CastMember("conflict_resolver", "ConflictResolver", RoleKind.AGENTIC_AI, "VendorY"),
            CastMember("compliance_bot", "ComplianceValidator", RoleKind.AGENTIC_AI, "VendorY"),
            CastMember("site_coord", "TrialSiteCoordinator", RoleKind.HUMAN, "SiteAlpha"),
            CastMember("dgo", "DataGovernanceOfficer", RoleKind.HUMAN, "TrialNetwork"),
            CastMember("ehr_system", "ExternalSystem", RoleKind.SYSTEM, "SiteAlpha"),
        ),
        script=(
            _reg("reg_vendor", "VendorY"),
            _reg("reg_site", "SiteAlpha"),
            _bind("bind_neg_coord", "NegotiationCoordinator", "neg_coord", "agentic_ai", "VendorY"),
            _bind("bind_capability_bot", "CapabilityDiscoverer", "capability_bot", "agentic_ai", "VendorY"),
            _bind("bind_semantic_bridge", "SemanticBridge", "semantic_bridge", "agentic_ai", "VendorY"),
            _bind("bind_conflict_resolver", "ConflictResolver", "conflict_resolver", "agentic_ai", "VendorY"),
            _bind("bind_compliance_bot", "ComplianceValidator", "compliance_bot", "agentic_ai", "VendorY"),
            _bind("bind_site_coord", "TrialSiteCoordinator", "site_coord", "human", "SiteAlpha"),
            _bind("bind_dgo", "DataGovernanceOfficer", "dgo", "human", "TrialNetwork"),
            _bind("bind_ehr", "ExternalSystem", "ehr_system", "system", "SiteAlpha"),
            _say("propose_exchange", "neg_coord", "propose", body="request eligibility criteria"),
            _say("counter_terms", "ehr_system", "counter_propose", body="de-identified records only"),
            _say("accept_terms", "neg_coord", "accept"),
            _say("propose_bulk", "neg_coord", "propose", body="bulk PHI export"),
            _say("reject_bulk", "ehr_system", "reject"),
            _say("validate_first", "compliance_bot", "discharge", select=_sel("burden", "validate_compliance")),
            _say("approve_novel", "dgo", "discharge", select=_sel("burden", "approve_novel_request")),
            _act("negotiate", "neg_coord", "negotiate_protocol", subject="site_alpha"),
            _act("communicate", "neg_coord", "communicate_externally", subject="site_alpha"),
            _act("share_probe", "neg_coord", "share_PHI_externally", subject="phi_batch_1"),
            _say("declare_exception", "dgo", "declare_permit", action="share_specific_data", holder="DataOfficer"),
            _say(
                "grant_share",
                "dgo",
                "grant",
                action="share_PHI_externally",
                to="neg_coord",
                subject="phi_batch_1",
            ),
            _act("share_allowed", "neg_coord", "share_PHI_externally", subject="phi_batch_1"),
            _say("revoke_share", "dgo", "revoke", select=_sel("permit", "share_specific_data")),
            _act("share_blocked_again", "neg_coord", "share_PHI_externally", subject="phi_batch_1"),
            _say("escalate_low", "compliance_bot", "escalate", condition="low_confidence"),
            _say("embargo_bulk", "dgo", "declare_embargo", action="bulk_export", holder="ALL_AI_AGENTS"),
        ),
        properties=(
            PropertySpec.safety("communicate_externally", "validate_compliance"),
            PropertySpec.accountability(),
        ),
        expected_verdicts=(
            ("accept_terms", "accepted"),
            ("reject_bulk", "accepted"),
            ("negotiate", "admissible"),
            ("communicate", "admissible"),
            ("share_probe", "blocked"),
            ("share_allowed", "admissible"),
            ("share_blocked_again", "blocked"),
            ("escalate_low", "accepted"),
            ("embargo_bulk", "accepted"),
        ),
    )
    return Scenario(
        name="negotiation",
        synopsis="external data exchange negotiated under compliance burdens and a PHI embargo",
        stages=(stage,),
    )


def _advisory_gate() -> Scenario:
    stage = Stage(
        community="MatchingWorkflowCommunity",
        source=LAYER2_SOURCE,
        owner="TrialSponsor",
        mode=MODE_ADVISORY,
        disciplines=(("TrialCandidateSet", READ_WRITE),),
        cast=(
            CastMember("matcher", "CriteriaMatcher", RoleKind.AGENTIC_AI, "VendorX"),
            CastMember("physician_1", "Physician", RoleKind.HUMAN, "TrialSponsor"),
        ),
        script=(
            _reg("reg_vendor", "VendorX"),
            _bind("bind_matcher", "CriteriaMatcher", "matcher", "agentic_ai", "VendorX"),
            _bind("bind_physician", "Physician", "physician_1", "human", "TrialSponsor"),
            _act(
                "eval_alpha",
                "matcher",
                "evaluate_eligibility",
                subject="patient_007",
                effects=(_put("TrialCandidateSet", "patient_007", "shortlist_alpha"),),
            ),
            _say("approve_alpha", "physician_1", "accept", request_seq="$last_request"),
            _act(
                "eval_beta",
                "matcher",
                "evaluate_eligibility",
                subject="patient_008",
                effects=(_put("TrialCandidateSet", "patient_008", "shortlist_beta"),),
            ),
            _say("veto_beta", "physician_1", "reject", request_seq="$last_request"),
        ),
        properties=(
            PropertySpec.authority("make_enrollment_decision", "Physician"),
            PropertySpec.accountability(),
        ),
        expected_verdicts=(
            ("eval_alpha", "recommended"),
            ("approve_alpha", "accepted"),
            ("eval_beta", "recommended"),
            ("veto_beta", "accepted"),
        ),
    )
    return Scenario(
        name="advisory_gate",
        synopsis="advisory mode: AI output is a recommendation until a human approves it",
        stages=(stage,),
    )


def built_in_scenarios() -> tuple[Scenario, ...]:
    return (_happy_path(), _rogue_ai(), _negotiation(), _advisory_gate())


def get_scenario(name: str) -> Scenario:
    for scenario in built_in_scenarios():
        if scenario.name == name:
            return scenario
    raise ScriptError(f"no built-in scenario named {name!r}")


# ----------------------------------------------------------------------
# execution


def _preflight(stage: Stage, template: CommunityTemplate) -> None:
    agents = {member.agent for member in stage.cast}
    registered = {stage.owner}
    seen_labels: set[str] = set()
    saw_action = False
    for ev in stage.script:
        if ev.name in seen_labels:
            raise ScriptError(f"duplicate event label {ev.name!r}")
        seen_labels.add(ev.name)
        p = ev.params
        if ev.op == "register_principal":
            registered.add(p["principal"])
        elif ev.op == "bind":
            if template.role(p["role"]) is None:
                raise ScriptError(f"{ev.name}: role {p['role']!r} is not declared")
            if p["agent"] not in agents:
                raise ScriptError(f"{ev.name}: agent {p['agent']!r} is not in the cast")
            if not p.get("force") and p["principal"] not in registered:
                raise ScriptError(
                    f"{ev.name}: principal {p['principal']!r} is not registered at this point"
                )
        elif ev.op == "unbind":
            if template.role(p["role"]) is None:
                raise ScriptError(f"{ev.name}: role {p['role']!r} is not declared")
            if p["agent"] not in agents:
                raise ScriptError(f"{ev.name}: agent {p['agent']!r} is not in the cast")
        elif ev.op == "action":
            if p["actor"] not in agents:
                raise ScriptError(f"{ev.name}: actor {p['actor']!r} is not in the cast")
            saw_action = True
        elif ev.op == "speech_act":
            if p["sender"] not in agents:
                raise ScriptError(f"{ev.name}: sender {p['sender']!r} is not in the cast")
            try:
                SpeechActKind(p["kind"])
            except ValueError:
                raise ScriptError(f"{ev.name}: unknown speech act kind {p['kind']!r}") from None
            if p.get("payload", {}).get("request_seq") == "$last_request" and not saw_action:
                raise ScriptError(f"{ev.name}: $last_request used before any action event")
        else:
            raise ScriptError(f"{ev.name}: unknown event op {ev.op!r}")


def _execute_stage(stage: Stage) -> StageReport:
    template = parse_spec(stage.source)
    _preflight(stage, template)
    instance = instantiate_community(
        template,
        mode=stage.mode,
        owner=Principal(stage.owner, stage.owner),
        object_disciplines=dict(stage.disciplines),
    )
    outcomes: list[tuple[str, str]] = []
    ranges: list[tuple[str, int, int]] = []
    last_request: int | None = None

    for ev in stage.script:
        lo = instance.head_seq
        outcome = "ok"
        p = ev.params
        try:
            if ev.op == "register_principal":
                instance.register_principal(p["principal"])
            elif ev.op == "bind":
                binder = instance.force_bind if p.get("force") else instance.bind_agent
                binder(p["role"], p["agent"], p["kind"], p["principal"])
            elif ev.op == "unbind":
                instance.unbind_agent(p["role"], p["agent"])
            elif ev.op == "action":
                result = instance.submit_action(
                    p["actor"], p["action"], p.get("subject"), p.get("effects", ())
                )
                outcome = result.verdict.outcome
                if outcome == OUTCOME_RECOMMENDED:
                    last_request = result.request_seq
            elif ev.op == "speech_act":
                payload = dict(p.get("payload", {}))
                if payload.get("request_seq") == "$last_request":
                    payload["request_seq"] = last_request
                selector = p.get("select_token")
                if selector is not None:
                    token_id = _select_token(instance, selector)
                    payload["token"] = token_id if token_id is not None else -1
                result = instance.apply_speech_act(
                    SpeechAct(SpeechActKind(p["kind"]), p["sender"], payload)
                )
                outcome = "accepted" if result.accepted else f"rejected:{result.reason}"
        except GovernanceError as exc:
            outcome = f"raised:{exc.code}"
        outcomes.append((ev.name, outcome))
        ranges.append((ev.name, lo + 1, instance.head_seq))

    records = instance.records()
    found = run_checks(records, stage.properties, template)

    def label_of(at_seq: int) -> str:
        for label, lo, hi in ranges:
            if lo <= at_seq <= hi:
                return label
        return "<setup>"

    violations = tuple((v.property, v.at_seq, label_of(v.at_seq)) for v in found)

    verdict_mismatches = []
    outcome_map = dict(outcomes)
    for label, want in stage.expected_verdicts:
        got = outcome_map.get(label)
        if got != want:
            verdict_mismatches.append(f"{label}: expected {want}, got {got}")

    violation_mismatches = []
    want_pairs = sorted(stage.expected_violations)
    got_pairs = sorted((prop, label) for prop, _seq, label in violations)
    if want_pairs != got_pairs:
        violation_mismatches.append(f"expected {want_pairs}, got {got_pairs}")

    return StageReport(
        community=template.name,
        outcomes=tuple(outcomes),
        verdict_mismatches=tuple(verdict_mismatches),
        violations=violations,
        violation_mismatches=tuple(violation_mismatches),
        export=instance.export_log(),
        records=records,
    )


def run_scenario(scenario: Scenario) -> ScenarioReport:
    """Parse, validate, and execute every stage; compare against expectations."""
    parsed = [(stage, parse_spec(stage.source)) for stage in scenario.stages]
    for stage, template in parsed:
        _preflight(stage, template)
    return ScenarioReport(
        name=scenario.name,
        stages=tuple(_execute_stage(stage) for stage in scenario.stages),
    )


# ----------------------------------------------------------------------
# violation injection (mutation testing of the verifier)

_ALIASES = {
    PROP_SAFETY: "safety",
    PROP_AUTHORITY: "authority",
    PROP_PROHIBITION: "prohibition",
    PROP_ACCOUNTABILITY: "accountability",
}

_GUARD_CLAUSE = "\n    requires discharged burden(verify_consent, ConsentManager)"


def _drop_events(script: tuple[EventSchema, ...], labels: set[str]) -> tuple[EventSchema, ...]:
    return tuple(ev for ev in script if ev.name not in labels)


def _replace_event(
    script: tuple[EventSchema, ...], label: str, new: EventSchema
) -> tuple[EventSchema, ...]:
    out = tuple(new if ev.name == label else ev for ev in script)
    if new not in out:
        raise CannotInject(f"no event labeled {label!r} to replace")
    return out


def _insert_after(
    script: tuple[EventSchema, ...], label: str, new: EventSchema
) -> tuple[EventSchema, ...]:
    out: list[EventSchema] = []
    hit = False
    for ev in script:
        out.append(ev)
        if ev.name == label:
            out.append(new)
            hit = True
    if not hit:
        raise CannotInject(f"no event labeled {label!r} to insert after")
    return tuple(out)


def _keep_verdicts(
    expected: tuple[tuple[str, str], ...], script: tuple[EventSchema, ...]
) -> tuple[tuple[str, str], ...]:
    labels = {ev.name for ev in script}
    return tuple((label, want) for label, want in expected if label in labels)


def _mutate_happy_safety(s: Scenario) -> Scenario:
    # drop the consent guard from the template and the consent events from
    # the script: the read becomes admissible with no discharged burden
    if _GUARD_CLAUSE not in LAYER1_SOURCE:
        raise CannotInject("layer 1 permit is not guarded")
    stage = s.stages[0]
    script = _drop_events(stage.script, {"declare_consent", "discharge_consent"})
    mutated = replace(
        stage,
        source=LAYER1_SOURCE.replace(_GUARD_CLAUSE, "", 1),
        script=script,
        expected_verdicts=_keep_verdicts(stage.expected_verdicts, script),
        expected_violations=((PROP_SAFETY, "read_demographics"),),
    )
    return replace(s, name=f"{s.name}__safety", stages=(mutated,) + s.stages[1:])


def _mutate_happy_prohibition(s: Scenario) -> Scenario:
    stage = s.stages[0]
    revoke = _say(
        "revoke_consent_embargo",
        "officer_dga",
        "revoke",
        select=_sel("embargo", "access_without_consent"),
    )
    mutated = replace(
        stage,
        script=_insert_after(stage.script, "bind_officer", revoke),
        expected_violations=((PROP_PROHIBITION, "revoke_consent_embargo"),),
    )
    return replace(s, name=f"{s.name}__prohibition", stages=(mutated,) + s.stages[1:])


def _mutate_happy_accountability(s: Scenario) -> Scenario:
    stage = s.stages[0]
    rogue_bind = _bind(
        "bind_extract_bot", "DataExtractionAgent", "extract_bot", "llm_agent", "GhostCorp", force=True
    )
    cast = tuple(
        replace(member, principal="GhostCorp") if member.agent == "extract_bot" else member
        for member in stage.cast
    )
    mutated = replace(
        stage,
        cast=cast,
        script=_replace_event(stage.script, "bind_extract_bot", rogue_bind),
        expected_violations=((PROP_ACCOUNTABILITY, "bind_extract_bot"),),
    )
    return replace(s, name=f"{s.name}__accountability", stages=(mutated,) + s.stages[1:])


def _mutate_decision_authority(s: Scenario, stage_index: int) -> Scenario:
    stage = s.stages[stage_index]
    transfer = _say(
        "transfer_decision",
        "physician_1",
        "transfer",
        select=_sel("burden", "make_enrollment_decision"),
        to="matcher",
    )
    script = stage.script
    if any(ev.name == "transfer_decision" for ev in script):
        script = _replace_event(script, "transfer_decision", transfer)
    else:
        script = _insert_after(script, "eval_match", transfer)
    script = _replace_event(
        script,
        "decide",
        _say("decide", "matcher", "discharge", select=_sel("burden", "make_enrollment_decision")),
    )
    mutated = replace(
        stage,
        script=script,
        expected_verdicts=_keep_verdicts(stage.expected_verdicts, script)
        + (("transfer_decision", "accepted"),),
        expected_violations=((PROP_AUTHORITY, "decide"),),
    )
    stages = s.stages[:stage_index] + (mutated,) + s.stages[stage_index + 1 :]
    return replace(s, name=f"{s.name}__authority", stages=stages)


def _mutate_happy_authority(s: Scenario) -> Scenario:
    if len(s.stages) < 2:
        raise CannotInject("no decision stage")
    # the matching stage has no matcher slot free for the transfer target
    # unless it is in the cast; happy path binds it, so retarget works
    out = _mutate_decision_authority(s, 1)
    # deduplicate: _mutate_decision_authority already appends transfer_decision
    stage = out.stages[1]
    seen: set[tuple[str, str]] = set()
    verdicts = []
    for pair in stage.expected_verdicts:
        if pair not in seen:
            seen.add(pair)
            verdicts.append(pair)
    return replace(out, stages=(out.stages[0], replace(stage, expected_verdicts=tuple(verdicts))))


def _mutate_rogue_prohibition(s: Scenario) -> Scenario:
    stage = s.stages[0]
    revoke = _say(
        "revoke_final_embargo",
        "physician_1",
        "revoke",
        select=_sel("embargo", "final_decision"),
    )
    mutated = replace(
        stage,
        script=_insert_after(stage.script, "bind_physician", revoke),
        expected_violations=((PROP_PROHIBITION, "revoke_final_embargo"),),
    )
    return replace(s, name=f"{s.name}__prohibition", stages=(mutated,))


def _mutate_rogue_authority(s: Scenario) -> Scenario:
    return _mutate_decision_authority(s, 0)


def _mutate_rogue_accountability(s: Scenario) -> Scenario:
    stage = s.stages[0]
    rogue_bind = _bind(
        "bind_matcher", "CriteriaMatcher", "matcher", "agentic_ai", "ShadowLab", force=True
    )
    cast = tuple(
        replace(member, principal="ShadowLab") if member.agent == "matcher" else member
        for member in stage.cast
    )
    mutated = replace(
        stage,
        cast=cast,
        script=_replace_event(stage.script, "bind_matcher", rogue_bind),
        expected_violations=((PROP_ACCOUNTABILITY, "bind_matcher"),),
    )
    return replace(s, name=f"{s.name}__accountability", stages=(mutated,))


_MUTATIONS = {
    ("happy_path", PROP_SAFETY): _mutate_happy_safety,
    ("happy_path", PROP_PROHIBITION): _mutate_happy_prohibition,
    ("happy_path", PROP_ACCOUNTABILITY): _mutate_happy_accountability,
    ("happy_path", PROP_AUTHORITY): _mutate_happy_authority,
    ("rogue_ai", PROP_PROHIBITION): _mutate_rogue_prohibition,
    ("rogue_ai", PROP_AUTHORITY): _mutate_rogue_authority,
    ("rogue_ai", PROP_ACCOUNTABILITY): _mutate_rogue_accountability,
}


def inject_violation(scenario: Scenario, kind: str) -> Scenario:
    """A minimally mutated copy whose run violates exactly the given template."""
    if kind in _ALIASES.values():
        kind = next(k for k, v in _ALIASES.items() if v == kind)
    if kind not in _ALIASES:
        raise CannotInject(f"unknown property template {kind!r}")
    builder = _MUTATIONS.get((scenario.name, kind))
    if builder is None:
        raise CannotInject(
            f"scenario {scenario.name!r} has no construct for a {_ALIASES[kind]} violation"
        )
    return builder(scenario)


# ----------------------------------------------------------------------
# coverage over the built-in set


@dataclass(frozen=True)
class CoverageReport:
    speech_act_kinds_used: tuple[str, ...]
    speech_act_kinds_missing: tuple[str, ...]
    policies_covered: tuple[str, ...]
    policies_missing: tuple[str, ...]

    @property
    def complete(self) -> bool:
        return not self.speech_act_kinds_missing and not self.policies_missing

    def text(self) -> str:
        lines = [
            f"speech act kinds used: {len(self.speech_act_kinds_used)}"
            f" (missing: {', '.join(self.speech_act_kinds_missing) or 'none'})",
            f"policies covered: {len(self.policies_covered)}"
            f" (missing: {', '.join(self.policies_missing) or 'none'})",
        ]
        return "\n".join(lines)


def coverage_report(scenarios: Iterable[Scenario] | None = None) -> CoverageReport:
    kinds_used: set[str] = set()
    actions_judged: set[str] = set()
    burdens_resolved: set[str] = set()
    token_actions: dict[str, dict[int, str]] = {}

    for scenario in scenarios or built_in_scenarios():
        report = run_scenario(scenario)
        for stage in report.stages:
            created = token_actions.setdefault(f"{scenario.name}/{stage.community}", {})
            for record in stage.records:
                if record.kind == KIND_SPEECH_ACT and not record.detail.get("rejected"):
                    kinds_used.add(record.detail["kind"])
                elif record.kind == KIND_VERDICT:
                    actions_judged.add(record.detail["action"])
                elif record.kind == KIND_TOKEN_TRANSITION:
                    detail = record.detail
                    if detail["from"] == "CREATED":
                        created[detail["token"]] = detail["action"]
                    elif detail["to"] in ("DISCHARGED", "REVOKED", "VIOLATED"):
                        action = created.get(detail["token"])
                        if action is not None:
                            burdens_resolved.add(action)

    all_kinds = {kind.value for kind in SpeechActKind}
    covered_policies: list[str] = []
    missing_policies: list[str] = []
    for template in build_clinical_layers():
        for policy in template.policies:
            label = f"{policy.modality.value}({policy.action}, {policy.target})"
            hit = policy.action in actions_judged or (
                policy.modality is not Modality.PERMIT and policy.action in burdens_resolved
            )
            (covered_policies if hit else missing_policies).append(label)

    return CoverageReport(
        speech_act_kinds_used=tuple(sorted(kinds_used)),
        speech_act_kinds_missing=tuple(sorted(all_kinds - kinds_used)),
        policies_covered=tuple(covered_policies),
        policies_missing=tuple(missing_policies),
    )


# ----------------------------------------------------------------------
# script files: one event per line


_INT_KEYS = {"token", "request_seq", "evidence", "deadline"}


def _coerce(key: str, value: str):
    if key in _INT_KEYS and value.lstrip("-").isdigit():
        return int(value)
    return value


def parse_script(text: str) -> tuple[EventSchema, ...]:
    """Parse the line-oriented script format.

    Forms (shell-style tokens, # comments):
      register_principal <principal>
      bind <role> <agent> <kind> <principal>
      force_bind <role> <agent> <kind> <principal>
      unbind <role> <agent>
      action <actor> <action> [subject=S] [effect=<object>:<op>:<key>:<value>]...
      speech_act <sender> <kind> [key=value]... [select=<modality>:<action>:<state>[:<subject>]]
    Any line may start with "<label>:" to name the event.
    """
    events: list[EventSchema] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        try:
            tokens = shlex.split(raw, comments=True)
        except ValueError as exc:
            raise ScriptError(f"line {lineno}: {exc}") from None
        if not tokens:
            continue
        label = f"e{len(events)}"
        if tokens[0].endswith(":") and len(tokens[0]) > 1:
            label = tokens[0][:-1]
            tokens = tokens[1:]
        if not tokens:
            raise ScriptError(f"line {lineno}: label without an event")
        op, args = tokens[0], tokens[1:]

        if op == "register_principal" and len(args) == 1:
            events.append(_reg(label, args[0]))
        elif op in ("bind", "force_bind") and len(args) == 4:
            events.append(_bind(label, args[0], args[1], args[2], args[3], force=op == "force_bind"))
        elif op == "unbind" and len(args) == 2:
            events.append(_unbind(label, args[0], args[1]))
        elif op == "action" and len(args) >= 2:
            subject = None
            effects = []
            for extra in args[2:]:
                key, sep, value = extra.partition("=")
                if not sep:
                    raise ScriptError(f"line {lineno}: expected key=value, got {extra!r}")
                if key == "subject":
                    subject = value
                elif key == "effect":
                    parts = value.split(":", 3)
                    if len(parts) != 4:
                        raise ScriptError(
                            f"line {lineno}: effect needs object:op:key:value, got {value!r}"
                        )
                    effects.append(
                        {"object": parts[0], "op": parts[1], "key": parts[2], "value": parts[3]}
                    )
                else:
                    raise ScriptError(f"line {lineno}: unknown action argument {key!r}")
            events.append(_act(label, args[0], args[1], subject, tuple(effects)))
        elif op == "speech_act" and len(args) >= 2:
            payload: dict = {}
            selector: dict | None = None
            for extra in args[2:]:
                key, sep, value = extra.partition("=")
                if not sep:
                    raise ScriptError(f"line {lineno}: expected key=value, got {extra!r}")
                if key == "select":
                    parts = value.split(":")
                    if len(parts) not in (3, 4):
                        raise ScriptError(
                            f"line {lineno}: select needs modality:action:state[:subject]"
                        )
                    selector = _sel(parts[0], parts[1], parts[2])
                    if len(parts) == 4:
                        selector["subject"] = parts[3]
                else:
                    payload[key] = _coerce(key, value)
            events.append(
                EventSchema(
                    label,
                    "speech_act",
                    {"kind": args[1], "sender": args[0], "payload": payload}
                    | ({"select_token": selector} if selector else {}),
                )
            )
        else:
            raise ScriptError(f"line {lineno}: cannot parse event {raw.strip()!r}")
    return tuple(events)


def stage_from_script(
    source: str,
    script: tuple[EventSchema, ...],
    owner: str = "community_owner",
    mode: str = MODE_AUTONOMOUS,
    disciplines: dict | None = None,
) -> Stage:
    """An ad-hoc stage for CLI script runs; checks the parameter-free property."""
    if mode not in MODES:
        raise ScriptError(f"unknown mode {mode!r}")
    template = parse_spec(source)
    cast: list[CastMember] = []
    seen: set[str] = set()
    for ev in script:
        p = ev.params
        if ev.op == "bind" and p["agent"] not in seen:
            seen.add(p["agent"])
            cast.append(CastMember(p["agent"], p["role"], RoleKind(p["kind"]), p["principal"]))
        elif ev.op == "action" and p["actor"] not in seen:
            seen.add(p["actor"])
            cast.append(CastMember(p["actor"], "", RoleKind.HUMAN, ""))
        elif ev.op == "speech_act" and p["sender"] not in seen:
            seen.add(p["sender"])
            cast.append(CastMember(p["sender"], "", RoleKind.HUMAN, ""))
    return Stage(
        community=template.name,
        source=source,
        owner=owner,
        mode=mode,
        cast=tuple(cast),
        script=script,
        properties=(PropertySpec.accountability(),),
        disciplines=tuple((disciplines or {}).items()),
    )


def run_stage(stage: Stage) -> StageReport:
    return _execute_stage(stage)


# ----------------------------------------------------------------------
# reduced data-access community for exhaustive enumeration


REDUCED_LAYER1_SOURCE = """\
community DataAccessGate {
  role DataGovernanceOfficer: human [0..1];
  role ConsentManager: llm_agent [0..1];
  role DataExtractionAgent: llm_agent [0..1];

  policy burden(verify_consent, ConsentManager);
  policy permit(read_demographics, DataExtractionAgent);
  policy embargo(access_without_consent, ALL_AI_AGENTS);

  contract GateGovernance {
    allow DataGovernanceOfficer: declare_burden, grant, revoke;
    allow ConsentManager: discharge;
  }
}
"""


@dataclass(frozen=True)
class GateFixture:
    """Enumeration fixture: template, prologue, alphabet, properties.

    The permit is deliberately unguarded so safety violations are reachable,
    and the embargo can be revoked and re-opened via grant so both halves of
    the prohibition template are exercised within depth 5.
    """

    source: str
    owner: str
    prologue: tuple[EventSchema, ...]
    alphabet: tuple[EventSchema, ...]
    properties: tuple[PropertySpec, ...]

    @property
    def template(self) -> CommunityTemplate:
        return parse_spec(self.source)


def reduced_layer1_fixture() -> GateFixture:
    return GateFixture(
        source=REDUCED_LAYER1_SOURCE,
        owner="MedCenter",
        prologue=(
            _reg("reg_vendor", "VendorX"),
            _bind("bind_officer", "DataGovernanceOfficer", "officer_1", "human", "MedCenter"),
        ),
        alphabet=(
            _bind("bind_consent_mgr", "ConsentManager", "consent_mgr", "llm_agent", "VendorX"),
            _bind("bind_extract_bot", "DataExtractionAgent", "extract_bot", "llm_agent", "VendorX"),
            _say(
                "declare_consent",
                "officer_1",
                "declare_burden",
                action="verify_consent",
                holder="ConsentManager",
                subject="p1",
            ),
            _say("discharge_consent", "consent_mgr", "discharge", select=_sel("burden", "verify_consent")),
            _act("read_demo", "extract_bot", "read_demographics", subject="p1"),
            _act("read_uncons", "extract_bot", "access_without_consent", subject="p1"),
            _say(
                "grant_uncons",
                "officer_1",
                "grant",
                action="access_without_consent",
                to="extract_bot",
                subject="p1",
            ),
            _say("revoke_embargo", "officer_1", "revoke", select=_sel("embargo", "access_without_consent")),
        ),
        properties=(
            PropertySpec.safety("read_demographics", "verify_consent"),
            PropertySpec.authority("read_demographics", "ConsentManager"),
            PropertySpec.prohibition("access_without_consent", "ALL_AI_AGENTS"),
            PropertySpec.accountability(),
        ),
    )
