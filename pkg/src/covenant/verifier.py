"""Governance property verification.

Four parameterized property templates are evaluated two ways:

* online — a TraceMonitor fed each audit record as it is appended,
* offline — the same incremental checkers run over an exported trace or a
  snapshot (so online and offline agree by construction).

Independently of both, oracle_enumerate exhaustively applies small event
alphabets through the straight-line reference engine and records which
property fails at which trace position. Tests compare monitor output
against the oracle over every enumerated trace.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import GovernanceError, ScopeTooLarge, UnknownIdentifier
from .reference import (
    PROP_ACCOUNTABILITY,
    PROP_AUTHORITY,
    PROP_PROHIBITION,
    PROP_SAFETY,
    ReferenceEngine,
)
from .runtime import (
    AuditRecord,
    CommunityInstance,
    KIND_BINDING,
    KIND_GENESIS,
    KIND_PROPERTY_VIOLATION,
    KIND_TOKEN_TRANSITION,
    KIND_VERDICT,
    MODE_AUTONOMOUS,
    Snapshot,
    SpeechAct,
)
from .spec_lang.ast import (
    AI_ROLE_KINDS,
    BUILTIN_GROUPS,
    CommunityTemplate,
    Modality,
    RoleKind,
    SpeechActKind,
)

PROPERTY_TEMPLATES = (PROP_SAFETY, PROP_AUTHORITY, PROP_PROHIBITION, PROP_ACCOUNTABILITY)

OUTCOME_ADMISSIBLE = "admissible"


@dataclass(frozen=True)
class PropertySpec:
    """One property template plus its parameters."""

    template: str
    params: tuple[tuple[str, str], ...] = ()

    def param(self, key: str) -> str:
        for k, v in self.params:
            if k == key:
                return v
        raise KeyError(key)

    @staticmethod
    def safety(guarded_action: str, guard_burden: str) -> PropertySpec:
        return PropertySpec(
            PROP_SAFETY,
            (("guard_burden", guard_burden), ("guarded_action", guarded_action)),
        )

    @staticmethod
    def authority(decision_action: str, authorized_role: str) -> PropertySpec:
        return PropertySpec(
            PROP_AUTHORITY,
            (("authorized_role", authorized_role), ("decision_action", decision_action)),
        )

    @staticmethod
    def prohibition(action: str, group: str) -> PropertySpec:
        return PropertySpec(PROP_PROHIBITION, (("action", action), ("group", group)))

    @staticmethod
    def accountability() -> PropertySpec:
        return PropertySpec(PROP_ACCOUNTABILITY)


@dataclass(frozen=True)
class Violation:
    property: str
    at_seq: int
    witness: tuple[int, ...]

    def to_line(self) -> str:
        return json.dumps(
            {"property": self.property, "at_seq": self.at_seq, "witness": list(self.witness)},
            separators=(",", ":"),
        )


def _sort_key(v: Violation) -> tuple[int, str]:
    return (v.at_seq, v.property)


# ----------------------------------------------------------------------
# incremental trace state shared by all checkers


@dataclass
class _TokenView:
    modality: str
    action: str
    holder_kind: str
    holder_name: str
    subject: str | None
    state: str
    chain_head: str


class _TraceState:
    def __init__(self) -> None:
        self.registered: set[str] = set()
        self.bindings: list[tuple[str, str, str, str]] = []  # (role, agent, kind, principal)
        self.tokens: dict[int, _TokenView] = {}
        self.discharges: list[dict] = []  # {seq, event, token, action, subject, by}

    def update(self, record: AuditRecord) -> None:
        detail = record.detail
        if record.kind == KIND_GENESIS:
            self.registered.add(detail["owner"]["id"])
        elif record.kind == KIND_BINDING:
            event_type = detail.get("event_type")
            if event_type == "register_principal":
                self.registered.add(detail["principal"])
            elif event_type == "bind":
                self.bindings.append(
                    (detail["role"], detail["agent"], detail["agent_kind"], detail["principal"])
                )
            elif event_type == "unbind":
                for i, b in enumerate(self.bindings):
                    if b[0] == detail["role"] and b[1] == detail["agent"]:
                        del self.bindings[i]
                        break
        elif record.kind == KIND_TOKEN_TRANSITION:
            token_id = detail["token"]
            if detail["from"] == "CREATED":
                self.tokens[token_id] = _TokenView(
                    modality=detail["modality"],
                    action=detail["action"],
                    holder_kind=detail["holder"]["kind"],
                    holder_name=detail["holder"]["name"],
                    subject=detail.get("subject"),
                    state=detail["to"],
                    chain_head=detail["chain_head"],
                )
            else:
                view = self.tokens.get(token_id)
                if view is not None:
                    view.state = detail["to"]
                    if detail["to"] == "DISCHARGED":
                        self.discharges.append(
                            {
                                "seq": record.seq,
                                "event": detail["event"],
                                "token": token_id,
                                "action": view.action,
                                "subject": view.subject,
                                "by": detail.get("by"),
                            }
                        )

    # queries ----------------------------------------------------------

    def agent_bound(self, agent: str) -> bool:
        return any(b[1] == agent for b in self.bindings)

    def agent_kind(self, agent: str) -> str | None:
        for b in self.bindings:
            if b[1] == agent:
                return b[2]
        return None

    def agent_has_role(self, agent: str, role: str) -> bool:
        return any(b[0] == role and b[1] == agent for b in self.bindings)

    def agent_in_group(
        self, agent: str, group: str, template: CommunityTemplate | None
    ) -> bool:
        if group == "ALL":
            return self.agent_bound(agent)
        if group == "ALL_AI_AGENTS":
            kind = self.agent_kind(agent)
            return kind is not None and RoleKind(kind) in AI_ROLE_KINDS
        if template is None:
            return False
        decl = template.group(group)
        if decl is None:
            return False
        return any(b[1] == agent and b[0] in decl.members for b in self.bindings)

    def member_bound(self, group: str, template: CommunityTemplate | None) -> bool:
        if group == "ALL":
            return bool(self.bindings)
        if group == "ALL_AI_AGENTS":
            return any(RoleKind(b[2]) in AI_ROLE_KINDS for b in self.bindings)
        if template is None:
            return False
        decl = template.group(group)
        if decl is None:
            return False
        return any(b[0] in decl.members for b in self.bindings)

    def guard_discharged(self, guard_action: str, subject: str | None, before_seq: int) -> bool:
        for d in self.discharges:
            if d["seq"] >= before_seq or d["action"] != guard_action:
                continue
            if d["subject"] is None or subject is None or d["subject"] == subject:
                return True
        return False


def _is_admissible_verdict(record: AuditRecord) -> bool:
    return record.kind == KIND_VERDICT and record.detail.get("outcome") == OUTCOME_ADMISSIBLE


# ----------------------------------------------------------------------
# per-template checkers


class _SafetyChecker:
    def __init__(self, spec: PropertySpec):
        self.spec = spec
        self.guarded_action = spec.param("guarded_action")
        self.guard_burden = spec.param("guard_burden")

    def feed(self, record: AuditRecord, state: _TraceState) -> list[Violation]:
        if not _is_admissible_verdict(record):
            return []
        detail = record.detail
        if detail.get("action") != self.guarded_action:
            return []
        subject = detail.get("subject")
        if state.guard_discharged(self.guard_burden, subject, record.seq):
            return []
        return [Violation(PROP_SAFETY, record.seq, (record.seq,))]


class _AuthorityChecker:
    def __init__(self, spec: PropertySpec):
        self.spec = spec
        self.decision_action = spec.param("decision_action")
        self.authorized_role = spec.param("authorized_role")

    def feed(self, record: AuditRecord, state: _TraceState) -> list[Violation]:
        detail = record.detail
        if record.kind == KIND_TOKEN_TRANSITION and detail.get("to") == "DISCHARGED":
            view = state.tokens.get(detail["token"])
            if view is not None and view.action == self.decision_action:
                by = detail.get("by")
                if by is None or not state.agent_has_role(by, self.authorized_role):
                    return [Violation(PROP_AUTHORITY, record.seq, (record.seq,))]
            return []
        if _is_admissible_verdict(record) and detail.get("action") == self.decision_action:
            event = detail["event"]
            for d in state.discharges:
                if (
                    d["event"] == event
                    and d["action"] == self.decision_action
                    and d["by"] is not None
                    and state.agent_has_role(d["by"], self.authorized_role)
                ):
                    return []
            return [Violation(PROP_AUTHORITY, record.seq, (record.seq,))]
        return []


class _ProhibitionChecker:
    def __init__(self, spec: PropertySpec, template: CommunityTemplate | None):
        self.spec = spec
        self.action = spec.param("action")
        self.group = spec.param("group")
        self.template = template
        self.in_gap = False

    def _embargo_held(self, state: _TraceState) -> bool:
        for view in state.tokens.values():
            if (
                view.modality == Modality.EMBARGO.value
                and view.action == self.action
                and view.state == "HELD"
                and view.holder_kind == "group"
                and view.holder_name in (self.group, "ALL")
            ):
                return True
        return False

    def feed(self, record: AuditRecord, state: _TraceState) -> list[Violation]:
        found: list[Violation] = []
        if _is_admissible_verdict(record) and record.detail.get("action") == self.action:
            actor = record.detail.get("actor")
            if actor is not None and state.agent_in_group(actor, self.group, self.template):
                found.append(Violation(PROP_PROHIBITION, record.seq, (record.seq,)))
        # gap scan: the embargo must be HELD whenever a group member is bound
        exposed = state.member_bound(self.group, self.template) and not self._embargo_held(state)
        if exposed and not self.in_gap:
            self.in_gap = True
            found.append(Violation(PROP_PROHIBITION, record.seq, (record.seq,)))
        elif not exposed:
            self.in_gap = False
        return found


class _AccountabilityChecker:
    def __init__(self, spec: PropertySpec):
        self.spec = spec

    def feed(self, record: AuditRecord, state: _TraceState) -> list[Violation]:
        detail = record.detail
        if record.kind == KIND_BINDING and detail.get("event_type") == "bind":
            if detail["principal"] not in state.registered:
                return [Violation(PROP_ACCOUNTABILITY, record.seq, (record.seq,))]
        elif record.kind == KIND_TOKEN_TRANSITION and detail.get("from") == "CREATED":
            if detail["chain_head"] not in state.registered:
                return [Violation(PROP_ACCOUNTABILITY, record.seq, (record.seq,))]
        return []


def _build_checker(spec: PropertySpec, template: CommunityTemplate | None):
    if spec.template == PROP_SAFETY:
        return _SafetyChecker(spec)
    if spec.template == PROP_AUTHORITY:
        if template is not None and template.role(spec.param("authorized_role")) is None:
            raise UnknownIdentifier(
                f"role {spec.param('authorized_role')!r} is not declared"
            )
        return _AuthorityChecker(spec)
    if spec.template == PROP_PROHIBITION:
        group = spec.param("group")
        if group not in BUILTIN_GROUPS:
            if template is None:
                raise UnknownIdentifier(
                    f"group {group!r} needs the community template to resolve members"
                )
            if template.group(group) is None:
                raise UnknownIdentifier(f"group {group!r} is not declared")
        return _ProhibitionChecker(spec, template)
    if spec.template == PROP_ACCOUNTABILITY:
        return _AccountabilityChecker(spec)
    raise UnknownIdentifier(f"unknown property template {spec.template!r}")


class TraceMonitor:
    """Online monitor: feed audit records, collect violations incrementally."""

    def __init__(
        self, specs: Iterable[PropertySpec], template: CommunityTemplate | None = None
    ):
        self._state = _TraceState()
        self._checkers = [_build_checker(spec, template) for spec in specs]
        self.violations: list[Violation] = []

    def feed(self, record: AuditRecord) -> list[Violation]:
        if record.kind == KIND_PROPERTY_VIOLATION:
            return []
        self._state.update(record)
        found: list[Violation] = []
        for checker in self._checkers:
            found.extend(checker.feed(record, self._state))
        found.sort(key=_sort_key)
        self.violations.extend(found)
        return found

    def attach(self, instance: CommunityInstance) -> None:
        """Start monitoring a live instance, catching up on its history."""
        for record in instance.records():
            self.feed(record)
        instance.add_listener(lambda record: self.feed(record))

    def clone(self) -> TraceMonitor:
        return copy.deepcopy(self)


# ----------------------------------------------------------------------
# offline checks


Trace = Sequence[AuditRecord]


def as_records(s: Snapshot | Trace) -> tuple[AuditRecord, ...]:
    if isinstance(s, Snapshot):
        return s.records
    return tuple(s)


def run_checks(
    s: Snapshot | Trace,
    specs: Iterable[PropertySpec],
    template: CommunityTemplate | None = None,
) -> list[Violation]:
    monitor = TraceMonitor(specs, template)
    for record in as_records(s):
        monitor.feed(record)
    return sorted(monitor.violations, key=_sort_key)


def check_safety(
    s: Snapshot | Trace, guarded_action: str, guard_burden: str
) -> list[Violation]:
    return run_checks(s, [PropertySpec.safety(guarded_action, guard_burden)])


def check_authority(
    s: Snapshot | Trace,
    decision_action: str,
    authorized_role: str,
    template: CommunityTemplate | None = None,
) -> list[Violation]:
    return run_checks(s, [PropertySpec.authority(decision_action, authorized_role)], template)


def check_prohibition(
    s: Snapshot | Trace,
    action: str,
    group: str,
    template: CommunityTemplate | None = None,
) -> list[Violation]:
    return run_checks(s, [PropertySpec.prohibition(action, group)], template)


def check_accountability(s: Snapshot | Trace) -> list[Violation]:
    return run_checks(s, [PropertySpec.accountability()])


# ----------------------------------------------------------------------
# event schemas and the enumeration oracle


@dataclass
class EventSchema:
    """A declarative event both engines interpret independently.

    ops: bind, unbind, register_principal, action, speech_act. Token
    references are symbolic selectors resolved against live state, so the
    same schema stays meaningful at any point of any trace.
    """

    name: str
    op: str
    params: dict = field(default_factory=dict)


def _select_token(instance: CommunityInstance, selector: dict) -> int | None:
    modality = Modality(selector["modality"])
    best: int | None = None
    for token in instance.tokens:
        if token.modality is not modality:
            continue
        if selector.get("action") is not None and token.action != selector["action"]:
            continue
        if selector.get("state") is not None and token.state.value != selector["state"]:
            continue
        if "subject" in selector and token.subject != selector["subject"]:
            continue
        if best is None or token.id < best:
            best = token.id
    return best


def apply_schema(instance: CommunityInstance, schema: EventSchema) -> None:
    """Apply one schema to the real runtime; invalid events are no-ops."""
    p = schema.params
    try:
        if schema.op == "bind":
            instance.bind_agent(p["role"], p["agent"], p["kind"], p["principal"])
        elif schema.op == "unbind":
            instance.unbind_agent(p["role"], p["agent"])
        elif schema.op == "register_principal":
            instance.register_principal(
                p["principal"], p.get("name"), p.get("kind", "organization")
            )
        elif schema.op == "action":
            instance.submit_action(
                p["actor"], p["action"], p.get("subject"), p.get("effects", ())
            )
        elif schema.op == "speech_act":
            payload = dict(p.get("payload", {}))
            selector = p.get("select_token")
            if selector is not None:
                token_id = _select_token(instance, selector)
                payload["token"] = token_id if token_id is not None else -1
            instance.apply_speech_act(SpeechAct(SpeechActKind(p["kind"]), p["sender"], payload))
        else:
            raise ValueError(f"unknown schema op {schema.op!r}")
    except GovernanceError:
        pass  # rejected events leave no state change; speech acts self-log


def oracle_enumerate(
    t: CommunityTemplate,
    alphabet: Sequence[EventSchema],
    depth: int,
    properties: Sequence[PropertySpec],
    prologue: Sequence[EventSchema] = (),
    owner: str = "community_owner",
) -> list[tuple[tuple[int, ...], tuple[tuple[str, int], ...]]]:
    """Exhaustively run every event sequence of length <= depth.

    Returns one entry per enumerated trace: the schema indices applied and
    the sorted (property, position) pairs the reference engine flagged.
    Prologue violations carry position -1.
    """
    if len(alphabet) > 8 or depth > 6:
        raise ScopeTooLarge(
            f"|alphabet|={len(alphabet)}, depth={depth}: bound is 8 schemas, depth 6"
        )
    base = ReferenceEngine(t, MODE_AUTONOMOUS, owner, properties)
    for schema in prologue:
        base.apply_schema(schema, -1)

    results: list[tuple[tuple[int, ...], tuple[tuple[str, int], ...]]] = []

    def walk(engine: ReferenceEngine, trace: list[int]) -> None:
        results.append((tuple(trace), tuple(sorted(engine.violations))))
        if len(trace) == depth:
            return
        for index, schema in enumerate(alphabet):
            child = engine.clone()
            child.apply_schema(schema, len(trace))
            trace.append(index)
            walk(child, trace)
            trace.pop()

    walk(base, [])
    return results
