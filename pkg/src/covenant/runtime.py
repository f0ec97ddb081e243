"""Community runtime.

A CommunityInstance folds externally submitted events (principal
registrations, role bindings, speech acts, action requests, mode changes)
into token-store mutations and an append-only, hash-chained audit log.
Every derived consequence (verdicts, token transitions, escalations) is
logged in the same chain, so replaying the initiating records of an export
regenerates the full log byte for byte.

Logical time is the audit sequence number; nothing here reads a clock.
"""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable

from . import deontic
from .deontic import (
    HolderKind,
    HolderRef,
    IntentRegistry,
    OUTCOME_ADMISSIBLE,
    OUTCOME_BLOCKED,
    OUTCOME_RECOMMENDED,
    Token,
    TokenState,
    TokenStore,
    Verdict,
)
from .errors import (
    CardinalityExceeded,
    DisciplineViolation,
    GovernanceError,
    IntegrityError,
    InvalidTemplate,
    KindMismatch,
    ProtocolViolation,
    UnknownAgent,
    UnknownPrincipal,
    UnknownRole,
)
from .spec_lang.ast import (
    AI_ROLE_KINDS,
    BUILTIN_GROUPS,
    CommunityTemplate,
    Modality,
    NEGOTIATION_KINDS,
    RoleKind,
    SpeechActKind,
)
from .spec_lang.validate import SEVERITY_ERROR, validate_template

GENESIS_PREV_HASH = "0" * 64
EXPORT_FORMAT = "covenant-audit/1"
DIGEST_NAME = "sha256"

MODE_ADVISORY = "advisory"
MODE_SUPERVISED = "supervised"
MODE_AUTONOMOUS = "autonomous"
MODES = (MODE_ADVISORY, MODE_SUPERVISED, MODE_AUTONOMOUS)

KIND_GENESIS = "genesis"
KIND_BINDING = "binding"
KIND_SPEECH_ACT = "speech_act"
KIND_ACTION_REQUEST = "action_request"
KIND_VERDICT = "verdict"
KIND_TOKEN_TRANSITION = "token_transition"
KIND_PROPERTY_VIOLATION = "property_violation"
KIND_ESCALATION = "escalation"
KIND_MODE_CHANGE = "mode_change"

# Records a replay re-executes; the rest are regenerated as consequences.
INITIATING_KINDS = frozenset(
    {KIND_BINDING, KIND_SPEECH_ACT, KIND_ACTION_REQUEST, KIND_MODE_CHANGE}
)

APPEND_ONLY = "append_only"
READ_WRITE = "read_write"

ESCALATION_CONDITION_BLOCKED = "policy_violation"
REVIEW_ACTION = "review"


def canonical_json(value) -> str:
    return json.dumps(value, sort_keys=True, separators=(",", ":"))


def _canon(value):
    """Recursively rebuild dicts with sorted keys for stable export bytes."""
    if isinstance(value, dict):
        return {k: _canon(value[k]) for k in sorted(value)}
    if isinstance(value, (list, tuple)):
        return [_canon(v) for v in value]
    return value


def record_digest(prev_hash: str, seq: int, kind: str, actor: str | None, detail: dict) -> str:
    payload = canonical_json({"seq": seq, "kind": kind, "actor": actor, "detail": detail})
    return hashlib.sha256((prev_hash + payload).encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class AuditRecord:
    seq: int
    kind: str
    actor: str | None
    detail: dict
    prev_hash: str
    hash: str

    def to_line(self) -> str:
        ordered = {
            "seq": self.seq,
            "kind": self.kind,
            "actor": self.actor,
            "detail": _canon(self.detail),
            "prev_hash": self.prev_hash,
            "hash": self.hash,
        }
        return json.dumps(ordered, separators=(",", ":"))


@dataclass(frozen=True)
class Principal:
    id: str
    name: str
    kind: str = "organization"  # or "natural_person"


@dataclass(frozen=True)
class RoleBinding:
    role: str
    agent: str
    agent_kind: RoleKind
    principal: str
    bound_at: int


@dataclass(frozen=True)
class SpeechAct:
    kind: SpeechActKind
    sender: str
    payload: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ObjectWrite:
    object: str
    op: str  # "append" | "put" | "read"
    key: str
    value: object = None

    def to_detail(self) -> dict:
        detail = {"object": self.object, "op": self.op, "key": self.key}
        if self.op != "read":
            detail["value"] = self.value
        return detail


class EnterpriseObject:
    """A community-owned key-value store with a declared write discipline."""

    def __init__(self, name: str, discipline: str = APPEND_ONLY):
        if discipline not in (APPEND_ONLY, READ_WRITE):
            raise DisciplineViolation(f"unknown discipline {discipline!r}")
        self.name = name
        self.discipline = discipline
        self._journal: list[dict] = []

    def check(self, write: ObjectWrite) -> None:
        if write.op == "read":
            return
        if write.op == "append":
            return
        if write.op == "put":
            if self.discipline == APPEND_ONLY:
                raise DisciplineViolation(f"object {self.name!r} is append-only")
            return
        raise DisciplineViolation(f"unknown object op {write.op!r}")

    def apply(self, write: ObjectWrite) -> None:
        self.check(write)
        if write.op == "read":
            return
        self._journal.append({"op": write.op, "key": write.key, "value": write.value})

    def state(self) -> dict:
        data: dict = {}
        for entry in self._journal:
            data[entry["key"]] = entry["value"]
        return data

    def entries(self) -> tuple[dict, ...]:
        return tuple(self._journal)

    def digest(self) -> str:
        return hashlib.sha256(canonical_json(self._journal).encode("utf-8")).hexdigest()

    def clone(self) -> EnterpriseObject:
        twin = EnterpriseObject(self.name, self.discipline)
        twin._journal = [dict(entry) for entry in self._journal]
        return twin


@dataclass(frozen=True)
class Snapshot:
    community: str
    mode: str
    head_seq: int
    head_hash: str
    records: tuple[AuditRecord, ...]
    bindings: tuple[RoleBinding, ...]
    token_states: tuple[tuple[int, str], ...]
    object_digests: tuple[tuple[str, str], ...]


@dataclass(frozen=True)
class ActionResult:
    verdict: Verdict
    request_seq: int
    verdict_seq: int


@dataclass(frozen=True)
class ApplyResult:
    accepted: bool
    reason: str | None = None
    seq: int | None = None
    token_id: int | None = None


@dataclass(frozen=True)
class _Pending:
    actor: str
    action: str
    subject: str | None
    effects: tuple[ObjectWrite, ...]


class CommunityInstance:
    """One running community; all mutation is serialized under a lock."""

    def __init__(
        self,
        template: CommunityTemplate,
        mode: str,
        owner: Principal,
        object_disciplines: dict[str, str] | None = None,
    ):
        findings = validate_template(template)
        errors = [f for f in findings if f.severity == SEVERITY_ERROR]
        if errors:
            raise InvalidTemplate("; ".join(str(f) for f in errors))
        if mode not in MODES:
            raise InvalidTemplate(f"unknown deployment mode {mode!r}")

        self.template = template
        self.mode = mode
        self.owner = owner
        self.tokens = TokenStore()
        self.intents = IntentRegistry()
        self._bindings: list[RoleBinding] = []
        self._principals: dict[str, Principal] = {owner.id: owner}
        self._records: list[AuditRecord] = []
        self._next_seq = 0
        self._event_counter = 0
        self._listeners: list[Callable[[AuditRecord], None]] = []
        self._pending: dict[int, _Pending] = {}
        self._negotiation_state = "idle"
        self._negotiation_proposer: str | None = None
        self._lock = threading.Lock()

        disciplines = dict(object_disciplines or {})
        self.objects: dict[str, EnterpriseObject] = {}
        for decl in template.objects:
            self.objects[decl.name] = EnterpriseObject(
                decl.name, disciplines.get(decl.name, APPEND_ONLY)
            )

        with self._lock:
            event = self._begin_event(sweep=False)
            self._append(
                KIND_GENESIS,
                None,
                {
                    "event": event,
                    "community": template.name,
                    "mode": mode,
                    "owner": {"id": owner.id, "name": owner.name, "kind": owner.kind},
                    "disciplines": {o.name: o.discipline for o in self.objects.values()},
                },
            )
            for policy in template.policies:
                holder = self._holder_for_name(policy.target)
                token = deontic.create_token(
                    self.tokens,
                    self,
                    policy.modality,
                    policy.action,
                    holder,
                    None,
                    owner.id,
                    self._next_seq,
                    requires_action=policy.requires.action if policy.requires else None,
                    unless_action=policy.unless.action if policy.unless else None,
                    unless_target=policy.unless.target if policy.unless else None,
                )
                self._log_token_created(event, token, origin="policy")

    # ------------------------------------------------------------------
    # BindingResolver protocol (deontic ops call back into these)

    def is_principal(self, name: str) -> bool:
        return name in self._principals

    def is_agent(self, name: str) -> bool:
        return any(b.agent == name for b in self._bindings)

    def is_role(self, name: str) -> bool:
        return self.template.role(name) is not None

    def is_group(self, name: str) -> bool:
        return name in BUILTIN_GROUPS or self.template.group(name) is not None

    def principal_of(self, agent: str) -> str | None:
        for b in self._bindings:
            if b.agent == agent:
                return b.principal
        return None

    def covers(self, holder: HolderRef, agent: str) -> bool:
        if holder.kind is HolderKind.AGENT:
            return holder.name == agent
        if holder.kind is HolderKind.ROLE:
            return any(b.agent == agent and b.role == holder.name for b in self._bindings)
        if holder.name == "ALL":
            return self.is_agent(agent)
        if holder.name == "ALL_AI_AGENTS":
            kind = self.agent_kind(agent)
            return kind is not None and kind in AI_ROLE_KINDS
        group = self.template.group(holder.name)
        if group is None:
            return False
        return any(
            b.agent == agent and b.role in group.members for b in self._bindings
        )

    # ------------------------------------------------------------------
    # queries

    def agent_kind(self, agent: str) -> RoleKind | None:
        for b in self._bindings:
            if b.agent == agent:
                return b.agent_kind
        return None

    def roles_of(self, agent: str) -> tuple[str, ...]:
        return tuple(b.role for b in self._bindings if b.agent == agent)

    def bindings(self) -> tuple[RoleBinding, ...]:
        return tuple(self._bindings)

    def records(self) -> tuple[AuditRecord, ...]:
        return tuple(self._records)

    @property
    def head_seq(self) -> int:
        return self._next_seq - 1

    @property
    def event_count(self) -> int:
        return self._event_counter

    def find_tokens(
        self,
        modality: Modality | None = None,
        action: str | None = None,
        state: TokenState | None = None,
    ) -> list[Token]:
        return [
            t
            for t in self.tokens
            if (modality is None or t.modality is modality)
            and (action is None or t.action == action)
            and (state is None or t.state is state)
        ]

    def add_listener(self, listener: Callable[[AuditRecord], None]) -> None:
        self._listeners.append(listener)

    # ------------------------------------------------------------------
    # audit plumbing

    def _append(self, kind: str, actor: str | None, detail: dict) -> AuditRecord:
        prev = self._records[-1].hash if self._records else GENESIS_PREV_HASH
        seq = self._next_seq
        digest = record_digest(prev, seq, kind, actor, detail)
        record = AuditRecord(seq, kind, actor, _canon(detail), prev, digest)
        self._records.append(record)
        self._next_seq += 1
        for listener in self._listeners:
            listener(record)
        return record

    def _begin_event(self, sweep: bool = True) -> int:
        event = self._event_counter
        self._event_counter += 1
        if sweep:
            for token in deontic.expire_due(self.tokens, self._next_seq):
                self._append(
                    KIND_TOKEN_TRANSITION,
                    None,
                    {
                        "event": event,
                        "token": token.id,
                        "from": TokenState.HELD.value,
                        "to": TokenState.VIOLATED.value,
                        "deadline": token.deadline,
                    },
                )
        return event

    def _holder_for_name(self, name: str) -> HolderRef:
        if self.is_role(name):
            return HolderRef(HolderKind.ROLE, name)
        if self.is_group(name):
            return HolderRef(HolderKind.GROUP, name)
        return HolderRef(HolderKind.AGENT, name)

    def _log_token_created(self, event: int, token: Token, origin: str) -> AuditRecord:
        detail: dict = {
            "event": event,
            "token": token.id,
            "from": TokenState.CREATED.value,
            "to": TokenState.HELD.value,
            "modality": token.modality.value,
            "action": token.action,
            "holder": token.holder.to_detail(),
            "issuer": token.issuer,
            "chain_head": token.chain.head,
            "origin": origin,
        }
        if token.subject is not None:
            detail["subject"] = token.subject
        if token.deadline is not None:
            detail["deadline"] = token.deadline
        if token.requires_action is not None:
            detail["requires"] = token.requires_action
        if token.unless_action is not None:
            detail["unless_action"] = token.unless_action
        if token.unless_target is not None:
            detail["unless_target"] = token.unless_target
        return self._append(KIND_TOKEN_TRANSITION, None, detail)

    # ------------------------------------------------------------------
    # principals and bindings

    def register_principal(
        self, principal_id: str, name: str | None = None, kind: str = "organization"
    ) -> Principal:
        with self._lock:
            if principal_id in self._principals:
                return self._principals[principal_id]
            principal = Principal(principal_id, name or principal_id, kind)
            self._principals[principal_id] = principal
            event = self._begin_event()
            self._append(
                KIND_BINDING,
                None,
                {
                    "event": event,
                    "event_type": "register_principal",
                    "principal": principal.id,
                    "name": principal.name,
                    "kind": principal.kind,
                },
            )
            return principal

    def bind_agent(
        self, role: str, agent: str, kind: RoleKind | str, principal: str
    ) -> RoleBinding:
        with self._lock:
            if principal not in self._principals:
                raise UnknownPrincipal(f"principal {principal!r} is not registered")
            return self._bind(role, agent, kind, principal)

    def force_bind(
        self, role: str, agent: str, kind: RoleKind | str, principal: str
    ) -> RoleBinding:
        """Bind without requiring a registered principal.

        Exists for fault injection: the accountability checker must be able
        to see a binding whose principal was never registered.
        """
        with self._lock:
            return self._bind(role, agent, kind, principal)

    def _bind(self, role: str, agent: str, kind: RoleKind | str, principal: str) -> RoleBinding:
        decl = self.template.role(role)
        if decl is None:
            raise UnknownRole(f"role {role!r} is not declared")
        kind = RoleKind(kind)
        if kind is not decl.kind:
            raise KindMismatch(f"role {role!r} requires kind {decl.kind.value}, got {kind.value}")
        existing_kind = self.agent_kind(agent)
        if existing_kind is not None and existing_kind is not kind:
            raise KindMismatch(f"agent {agent!r} is already bound with kind {existing_kind.value}")
        existing_principal = self.principal_of(agent)
        if existing_principal is not None and existing_principal != principal:
            raise UnknownPrincipal(
                f"agent {agent!r} already acts for principal {existing_principal!r}"
            )
        if any(b.agent == agent and b.role == role for b in self._bindings):
            raise CardinalityExceeded(f"agent {agent!r} already fills role {role!r}")
        count = sum(1 for b in self._bindings if b.role == role)
        if decl.max_card is not None and count + 1 > decl.max_card:
            raise CardinalityExceeded(
                f"role {role!r} already has {count} of at most {decl.max_card} fillers"
            )
        event = self._begin_event()
        binding = RoleBinding(role, agent, kind, principal, self._next_seq)
        self._bindings.append(binding)
        self._append(
            KIND_BINDING,
            agent,
            {
                "event": event,
                "event_type": "bind",
                "role": role,
                "agent": agent,
                "agent_kind": kind.value,
                "principal": principal,
            },
        )
        return binding

    def unbind_agent(self, role: str, agent: str) -> None:
        with self._lock:
            if self.template.role(role) is None:
                raise UnknownRole(f"role {role!r} is not declared")
            match = [b for b in self._bindings if b.role == role and b.agent == agent]
            if not match:
                raise UnknownAgent(f"agent {agent!r} does not fill role {role!r}")
            event = self._begin_event()
            self._bindings.remove(match[0])
            self._append(
                KIND_BINDING,
                agent,
                {"event": event, "event_type": "unbind", "role": role, "agent": agent},
            )

    # ------------------------------------------------------------------
    # deployment mode

    def set_mode(self, mode: str, by: str | None = None) -> None:
        if mode not in MODES:
            raise InvalidTemplate(f"unknown deployment mode {mode!r}")
        with self._lock:
            event = self._begin_event()
            previous = self.mode
            self.mode = mode
            self._append(
                KIND_MODE_CHANGE,
                by,
                {"event": event, "from": previous, "to": mode},
            )

    # ------------------------------------------------------------------
    # actions

    def submit_action(
        self,
        actor: str,
        action: str,
        subject: str | None = None,
        effects: Iterable[ObjectWrite | dict] = (),
    ) -> ActionResult:
        with self._lock:
            if not self.is_agent(actor):
                raise UnknownAgent(f"{actor!r} is not bound to any role")
            writes = tuple(self._coerce_write(e) for e in effects)
            for write in writes:
                obj = self.objects.get(write.object)
                if obj is None:
                    raise DisciplineViolation(f"unknown object {write.object!r}")
                obj.check(write)

            event = self._begin_event()
            request_detail: dict = {"event": event, "action": action}
            if subject is not None:
                request_detail["subject"] = subject
            if writes:
                request_detail["effects"] = [w.to_detail() for w in writes]
            request = self._append(KIND_ACTION_REQUEST, actor, request_detail)

            verdict = deontic.check_action_admissible(self.tokens, self, actor, action, subject)
            actor_is_ai = self.agent_kind(actor) in AI_ROLE_KINDS

            if verdict.admissible and self.mode == MODE_ADVISORY and actor_is_ai:
                verdict = Verdict(
                    OUTCOME_RECOMMENDED, permits=verdict.permits, reason=verdict.reason
                )
                self._pending[request.seq] = _Pending(actor, action, subject, writes)

            verdict_detail = dict(verdict.to_detail())
            verdict_detail["event"] = event
            verdict_detail["request"] = request.seq
            verdict_detail["actor"] = actor
            verdict_detail["action"] = action
            if subject is not None:
                verdict_detail["subject"] = subject
            verdict_record = self._append(KIND_VERDICT, None, verdict_detail)

            if verdict.admissible:
                for write in writes:
                    self.objects[write.object].apply(write)
            elif (
                verdict.outcome == OUTCOME_BLOCKED
                and self.mode == MODE_SUPERVISED
                and actor_is_ai
            ):
                self._escalate_blocked(event, actor, request.seq)

            return ActionResult(verdict, request.seq, verdict_record.seq)

    def _coerce_write(self, effect: ObjectWrite | dict) -> ObjectWrite:
        if isinstance(effect, ObjectWrite):
            return effect
        return ObjectWrite(
            object=effect["object"],
            op=effect.get("op", "append"),
            key=effect["key"],
            value=effect.get("value"),
        )

    def _find_escalation_rule(self, condition: str):
        for contract in self.template.contracts:
            for rule in contract.escalations:
                if rule.condition == condition:
                    return rule
        return None

    def _escalate_blocked(self, event: int, agent: str, request_seq: int) -> None:
        rule = self._find_escalation_rule(ESCALATION_CONDITION_BLOCKED)
        detail: dict = {
            "event": event,
            "condition": ESCALATION_CONDITION_BLOCKED,
            "agent": agent,
            "request": request_seq,
        }
        token = None
        if rule is not None:
            token = deontic.create_token(
                self.tokens,
                self,
                Modality.BURDEN,
                REVIEW_ACTION,
                HolderRef(HolderKind.ROLE, rule.to_role),
                None,
                self.owner.id,
                self._next_seq,
            )
            detail["to_role"] = rule.to_role
            detail["burden"] = token.id
        self._append(KIND_ESCALATION, agent, detail)
        if token is not None:
            self._log_token_created(event, token, origin="escalation")

    # ------------------------------------------------------------------
    # speech acts

    def apply_speech_act(self, act: SpeechAct) -> ApplyResult:
        with self._lock:
            event = self._begin_event()
            kind = SpeechActKind(act.kind)
            payload = dict(act.payload)

            reason = self._authorize(act.sender, kind)
            if reason is not None:
                return self._reject(event, act.sender, kind, payload, reason)

            try:
                return self._dispatch(event, act.sender, kind, payload)
            except GovernanceError as exc:
                return self._reject(event, act.sender, kind, payload, exc.code)
            except (KeyError, TypeError, ValueError):
                return self._reject(event, act.sender, kind, payload, "MalformedPayload")

    def _authorize(self, sender: str, kind: SpeechActKind) -> str | None:
        if not self.is_agent(sender):
            return UnknownAgent.__name__
        roles = self.roles_of(sender)
        for contract in self.template.contracts:
            for role in roles:
                if kind in contract.allowed_kinds(role):
                    return None
        return "UnauthorizedSpeechAct"

    def _reject(
        self, event: int, sender: str, kind: SpeechActKind, payload: dict, reason: str
    ) -> ApplyResult:
        record = self._append(
            KIND_SPEECH_ACT,
            sender,
            {
                "event": event,
                "kind": kind.value,
                "payload": payload,
                "rejected": True,
                "reason": reason,
            },
        )
        return ApplyResult(False, reason, record.seq)

    def _log_act(
        self, event: int, sender: str, kind: SpeechActKind, payload: dict
    ) -> AuditRecord:
        return self._append(
            KIND_SPEECH_ACT,
            sender,
            {"event": event, "kind": kind.value, "payload": payload},
        )

    def _dispatch(
        self, event: int, sender: str, kind: SpeechActKind, payload: dict
    ) -> ApplyResult:
        if kind in (
            SpeechActKind.DECLARE_BURDEN,
            SpeechActKind.DECLARE_PERMIT,
            SpeechActKind.DECLARE_EMBARGO,
        ):
            return self._act_declare(event, sender, kind, payload)
        if kind is SpeechActKind.GRANT:
            return self._act_grant(event, sender, payload)
        if kind is SpeechActKind.TRANSFER:
            return self._act_transfer(event, sender, payload)
        if kind is SpeechActKind.DISCHARGE:
            return self._act_discharge(event, sender, payload)
        if kind is SpeechActKind.REVOKE:
            return self._act_revoke(event, sender, payload)
        if kind in NEGOTIATION_KINDS:
            return self._act_negotiation(event, sender, kind, payload)
        if kind is SpeechActKind.ESCALATE:
            return self._act_escalate(event, sender, payload)
        raise RuntimeError(f"unhandled speech act kind {kind}")  # pragma: no cover

    def _act_declare(
        self, event: int, sender: str, kind: SpeechActKind, payload: dict
    ) -> ApplyResult:
        modality = {
            SpeechActKind.DECLARE_BURDEN: Modality.BURDEN,
            SpeechActKind.DECLARE_PERMIT: Modality.PERMIT,
            SpeechActKind.DECLARE_EMBARGO: Modality.EMBARGO,
        }[kind]
        holder = self._holder_for_name(payload["holder"])
        seq_of_act = self._next_seq
        token = deontic.create_token(
            self.tokens,
            self,
            modality,
            payload["action"],
            holder,
            payload.get("subject"),
            sender,
            seq_of_act,
            deadline=payload.get("deadline"),
            requires_action=payload.get("requires_action"),
            unless_action=payload.get("unless_action"),
            unless_target=payload.get("unless_target"),
        )
        record = self._log_act(event, sender, kind, payload)
        self._log_token_created(event, token, origin="speech_act")
        return ApplyResult(True, seq=record.seq, token_id=token.id)

    def _act_grant(self, event: int, sender: str, payload: dict) -> ApplyResult:
        # grant = permit issued to one concrete agent
        grantee = payload["to"]
        if not self.is_agent(grantee):
            raise UnknownAgent(f"grantee {grantee!r} is not bound to any role")
        token = deontic.create_token(
            self.tokens,
            self,
            Modality.PERMIT,
            payload["action"],
            HolderRef(HolderKind.AGENT, grantee),
            payload.get("subject"),
            sender,
            self._next_seq,
            requires_action=payload.get("requires_action"),
        )
        record = self._log_act(event, sender, SpeechActKind.GRANT, payload)
        self._log_token_created(event, token, origin="speech_act")
        return ApplyResult(True, seq=record.seq, token_id=token.id)

    def _act_transfer(self, event: int, sender: str, payload: dict) -> ApplyResult:
        token_id = int(payload["token"])
        to = payload["to"]
        token = deontic.delegate_burden(
            self.tokens, self, token_id, sender, to, self._next_seq
        )
        record = self._log_act(
            event, sender, SpeechActKind.TRANSFER, {"token": token_id, "to": to}
        )
        self._append(
            KIND_TOKEN_TRANSITION,
            None,
            {
                "event": event,
                "token": token.id,
                "from": TokenState.HELD.value,
                "to": TokenState.DELEGATED.value,
                "by": sender,
                "target": to,
            },
        )
        self._append(
            KIND_TOKEN_TRANSITION,
            None,
            {
                "event": event,
                "token": token.id,
                "from": TokenState.DELEGATED.value,
                "to": TokenState.HELD.value,
                "holder": token.holder.to_detail(),
                "link": {"from": sender, "to": to, "at": token.chain.links[-1].at},
            },
        )
        return ApplyResult(True, seq=record.seq, token_id=token.id)

    def _act_discharge(self, event: int, sender: str, payload: dict) -> ApplyResult:
        token_id = int(payload["token"])
        evidence = int(payload.get("evidence", self.head_seq))
        token = deontic.discharge_burden(
            self.tokens, self, token_id, sender, evidence, self._next_seq, self.head_seq
        )
        record = self._log_act(
            event,
            sender,
            SpeechActKind.DISCHARGE,
            {"token": token_id, "evidence": evidence},
        )
        self._append(
            KIND_TOKEN_TRANSITION,
            None,
            {
                "event": event,
                "token": token.id,
                "from": TokenState.HELD.value,
                "to": TokenState.DISCHARGED.value,
                "by": sender,
                "evidence": evidence,
            },
        )
        return ApplyResult(True, seq=record.seq, token_id=token.id)

    def _act_revoke(self, event: int, sender: str, payload: dict) -> ApplyResult:
        token_id = int(payload["token"])
        token = deontic.revoke_token(self.tokens, self, token_id, sender, self._next_seq)
        record = self._log_act(event, sender, SpeechActKind.REVOKE, {"token": token_id})
        self._append(
            KIND_TOKEN_TRANSITION,
            None,
            {
                "event": event,
                "token": token.id,
                "from": TokenState.HELD.value,
                "to": TokenState.REVOKED.value,
                "by": sender,
            },
        )
        return ApplyResult(True, seq=record.seq, token_id=token.id)

    def _act_negotiation(
        self, event: int, sender: str, kind: SpeechActKind, payload: dict
    ) -> ApplyResult:
        if kind is SpeechActKind.ACCEPT and "request_seq" in payload:
            return self._approve_recommendation(event, sender, payload)
        if kind is SpeechActKind.REJECT and "request_seq" in payload:
            return self._reject_recommendation(event, sender, payload)

        if kind is SpeechActKind.PROPOSE:
            if self._negotiation_state != "idle":
                raise ProtocolViolation("a proposal is already pending")
            self._negotiation_state = "pending"
            self._negotiation_proposer = sender
        else:
            if self._negotiation_state != "pending":
                raise ProtocolViolation(f"{kind.value} without a pending proposal")
            if sender == self._negotiation_proposer:
                raise ProtocolViolation("proposer cannot answer its own proposal")
            if kind is SpeechActKind.COUNTER_PROPOSE:
                self._negotiation_proposer = sender
            else:
                self._negotiation_state = "idle"
                self._negotiation_proposer = None

        record = self._log_act(event, sender, kind, payload)
        history = self.objects.get("NegotiationHistory")
        if history is not None:
            entry: dict = {"kind": kind.value, "by": sender}
            if "body" in payload:
                entry["body"] = payload["body"]
            history.apply(ObjectWrite("NegotiationHistory", "append", str(record.seq), entry))
        return ApplyResult(True, seq=record.seq)

    def _approve_recommendation(self, event: int, sender: str, payload: dict) -> ApplyResult:
        request_seq = int(payload["request_seq"])
        pending = self._pending.get(request_seq)
        if pending is None:
            raise ProtocolViolation(f"no pending recommendation for request {request_seq}")
        if self.agent_kind(sender) is not RoleKind.HUMAN:
            raise ProtocolViolation("only a human may approve a recommendation")
        del self._pending[request_seq]
        record = self._log_act(
            event, sender, SpeechActKind.ACCEPT, {"request_seq": request_seq}
        )
        try:
            verdict = deontic.check_action_admissible(
                self.tokens, self, pending.actor, pending.action, pending.subject
            )
        except UnknownAgent:
            verdict = Verdict(OUTCOME_BLOCKED, reason=UnknownAgent.__name__)
        verdict_detail = dict(verdict.to_detail())
        verdict_detail["event"] = event
        verdict_detail["request"] = request_seq
        verdict_detail["actor"] = pending.actor
        verdict_detail["action"] = pending.action
        if pending.subject is not None:
            verdict_detail["subject"] = pending.subject
        verdict_detail["approved_by"] = sender
        self._append(KIND_VERDICT, None, verdict_detail)
        if verdict.admissible:
            for write in pending.effects:
                self.objects[write.object].apply(write)
        return ApplyResult(True, seq=record.seq)

    def _reject_recommendation(self, event: int, sender: str, payload: dict) -> ApplyResult:
        request_seq = int(payload["request_seq"])
        pending = self._pending.get(request_seq)
        if pending is None:
            raise ProtocolViolation(f"no pending recommendation for request {request_seq}")
        if self.agent_kind(sender) is not RoleKind.HUMAN:
            raise ProtocolViolation("only a human may reject a recommendation")
        del self._pending[request_seq]
        record = self._log_act(
            event, sender, SpeechActKind.REJECT, {"request_seq": request_seq}
        )
        self._append(
            KIND_VERDICT,
            None,
            {
                "event": event,
                "request": request_seq,
                "actor": pending.actor,
                "action": pending.action,
                "outcome": OUTCOME_BLOCKED,
                "reason": "rejected",
                "approved_by": sender,
            },
        )
        return ApplyResult(True, seq=record.seq)

    def _act_escalate(self, event: int, sender: str, payload: dict) -> ApplyResult:
        condition = payload["condition"]
        rule = self._find_escalation_rule(condition)
        if rule is None:
            return self._reject(
                event, sender, SpeechActKind.ESCALATE, payload, "no-escalation-rule"
            )
        record = self._log_act(event, sender, SpeechActKind.ESCALATE, payload)
        token = deontic.create_token(
            self.tokens,
            self,
            Modality.BURDEN,
            REVIEW_ACTION,
            HolderRef(HolderKind.ROLE, rule.to_role),
            payload.get("subject"),
            sender,
            self._next_seq,
        )
        self._append(
            KIND_ESCALATION,
            sender,
            {
                "event": event,
                "condition": condition,
                "agent": sender,
                "to_role": rule.to_role,
                "burden": token.id,
            },
        )
        self._log_token_created(event, token, origin="escalation")
        return ApplyResult(True, seq=record.seq, token_id=token.id)

    # ------------------------------------------------------------------
    # annotations

    def append_property_violation(
        self, property_name: str, at_seq: int, witness: list[int]
    ) -> AuditRecord:
        with self._lock:
            event = self._begin_event(sweep=False)
            return self._append(
                KIND_PROPERTY_VIOLATION,
                None,
                {
                    "event": event,
                    "property": property_name,
                    "at_seq": at_seq,
                    "witness": list(witness),
                },
            )

    # ------------------------------------------------------------------
    # snapshot and export

    def snapshot(self) -> Snapshot:
        with self._lock:
            head = self._records[-1]
            return Snapshot(
                community=self.template.name,
                mode=self.mode,
                head_seq=head.seq,
                head_hash=head.hash,
                records=tuple(self._records),
                bindings=tuple(self._bindings),
                token_states=tuple(sorted(self.tokens.states().items())),
                object_digests=tuple(
                    sorted((name, obj.digest()) for name, obj in self.objects.items())
                ),
            )

    def export_log(self) -> str:
        with self._lock:
            header = json.dumps(
                {
                    "format": EXPORT_FORMAT,
                    "digest": DIGEST_NAME,
                    "community": self.template.name,
                },
                separators=(",", ":"),
            )
            lines = [header] + [r.to_line() for r in self._records]
            return "\n".join(lines) + "\n"

    def clone(self) -> CommunityInstance:
        """Independent copy for search over alternative futures.

        Listeners are not carried over; attach fresh ones to the clone.
        """
        with self._lock:
            twin = CommunityInstance.__new__(CommunityInstance)
            twin.template = self.template
            twin.mode = self.mode
            twin.owner = self.owner
            twin.tokens = self.tokens.clone()
            twin.intents = IntentRegistry()
            twin._bindings = list(self._bindings)
            twin._principals = dict(self._principals)
            twin._records = list(self._records)
            twin._next_seq = self._next_seq
            twin._event_counter = self._event_counter
            twin._listeners = []
            twin._pending = dict(self._pending)
            twin._negotiation_state = self._negotiation_state
            twin._negotiation_proposer = self._negotiation_proposer
            twin._lock = threading.Lock()
            twin.objects = {name: obj.clone() for name, obj in self.objects.items()}
            return twin


# ----------------------------------------------------------------------
# module-level operation wrappers


def instantiate_community(
    template: CommunityTemplate,
    mode: str = MODE_AUTONOMOUS,
    owner: Principal | None = None,
    object_disciplines: dict[str, str] | None = None,
) -> CommunityInstance:
    if owner is None:
        owner = Principal("community_owner", "community_owner", "organization")
    return CommunityInstance(template, mode, owner, object_disciplines)


def bind_agent(
    c: CommunityInstance, role: str, agent: str, kind: RoleKind | str, principal: str
) -> CommunityInstance:
    c.bind_agent(role, agent, kind, principal)
    return c


def submit_action(
    c: CommunityInstance,
    actor: str,
    action: str,
    subject: str | None = None,
    effects: Iterable[ObjectWrite | dict] = (),
) -> ActionResult:
    return c.submit_action(actor, action, subject, effects)


def apply_speech_act(c: CommunityInstance, act: SpeechAct) -> ApplyResult:
    return c.apply_speech_act(act)


def snapshot(c: CommunityInstance) -> Snapshot:
    return c.snapshot()


# ----------------------------------------------------------------------
# export / import / replay


def parse_export(text: str) -> tuple[dict, list[AuditRecord]]:
    """Parse an export; verify header shape only (chain check is separate)."""
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines:
        raise IntegrityError("empty export", 0)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise IntegrityError(f"unreadable header: {exc}", 0) from exc
    if header.get("format") != EXPORT_FORMAT:
        raise IntegrityError(f"unknown export format {header.get('format')!r}", 0)
    if header.get("digest") != DIGEST_NAME:
        raise IntegrityError(f"unsupported digest {header.get('digest')!r}", 0)
    records: list[AuditRecord] = []
    for index, line in enumerate(lines[1:]):
        try:
            raw = json.loads(line)
            records.append(
                AuditRecord(
                    seq=raw["seq"],
                    kind=raw["kind"],
                    actor=raw["actor"],
                    detail=raw["detail"],
                    prev_hash=raw["prev_hash"],
                    hash=raw["hash"],
                )
            )
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise IntegrityError(f"unreadable record on line {index + 2}: {exc}", index) from exc
    return header, records


def verify_chain(records: list[AuditRecord] | tuple[AuditRecord, ...]) -> None:
    """Recompute the hash chain; raise IntegrityError at the first bad seq."""
    prev = GENESIS_PREV_HASH
    for index, record in enumerate(records):
        if record.seq != index:
            raise IntegrityError(
                f"sequence gap: expected {index}, found {record.seq}", record.seq
            )
        if record.prev_hash != prev:
            raise IntegrityError(f"broken chain link at seq {record.seq}", record.seq)
        expected = record_digest(prev, record.seq, record.kind, record.actor, record.detail)
        if record.hash != expected:
            raise IntegrityError(f"digest mismatch at seq {record.seq}", record.seq)
        prev = record.hash


def import_log(text: str) -> tuple[dict, list[AuditRecord]]:
    header, records = parse_export(text)
    verify_chain(records)
    return header, records


def replay(
    template: CommunityTemplate, text_or_records: str | list[AuditRecord]
) -> CommunityInstance:
    """Rebuild an instance by re-executing the initiating records.

    Derived records (verdicts, transitions, escalations, property
    violations) are regenerated, not read back; the result must match the
    original log byte for byte over the regenerated kinds.
    """
    if isinstance(text_or_records, str):
        _, records = import_log(text_or_records)
    else:
        records = list(text_or_records)
        verify_chain(records)
    if not records or records[0].kind != KIND_GENESIS:
        raise IntegrityError("export does not start with a genesis record", 0)
    genesis = records[0].detail
    if genesis.get("community") != template.name:
        raise InvalidTemplate(
            f"log is for community {genesis.get('community')!r}, not {template.name!r}"
        )
    owner_info = genesis["owner"]
    owner = Principal(owner_info["id"], owner_info["name"], owner_info["kind"])
    instance = CommunityInstance(
        template, genesis["mode"], owner, dict(genesis.get("disciplines", {}))
    )
    for record in records:
        if record.kind not in INITIATING_KINDS:
            continue
        _replay_record(instance, record)
    return instance


def _replay_record(instance: CommunityInstance, record: AuditRecord) -> None:
    detail = record.detail
    if record.kind == KIND_BINDING:
        event_type = detail["event_type"]
        if event_type == "register_principal":
            instance.register_principal(detail["principal"], detail["name"], detail["kind"])
        elif event_type == "bind":
            # the original run already enforced principal registration
            instance.force_bind(
                detail["role"], detail["agent"], detail["agent_kind"], detail["principal"]
            )
        elif event_type == "unbind":
            instance.unbind_agent(detail["role"], detail["agent"])
        else:  # pragma: no cover
            raise IntegrityError(f"unknown binding event {event_type!r}", record.seq)
    elif record.kind == KIND_SPEECH_ACT:
        act = SpeechAct(
            SpeechActKind(detail["kind"]), record.actor or "", dict(detail["payload"])
        )
        instance.apply_speech_act(act)
    elif record.kind == KIND_ACTION_REQUEST:
        effects = [dict(e) for e in detail.get("effects", [])]
        instance.submit_action(
            record.actor or "", detail["action"], detail.get("subject"), effects
        )
    elif record.kind == KIND_MODE_CHANGE:
        instance.set_mode(detail["to"], record.actor)
