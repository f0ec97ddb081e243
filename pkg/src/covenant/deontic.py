"""Deontic token core.

Burdens are obligations, permits are authorizations, embargoes are
prohibitions. Tokens move through a fixed lifecycle; delegation extends an
acyclic chain whose head is always the issuing principal, so every token
answers "who is ultimately responsible" by construction.

All operations here are pure with respect to everything except the passed
TokenStore; sequencing, audit, and authorization of the *speech act* that
invoked them belong to the runtime layer.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import Iterator, Protocol

from .errors import (
    CycleDetected,
    DanglingEvidence,
    MalformedChain,
    NotABurden,
    NotHolder,
    NotIssuer,
    NotRevocable,
    TerminalState,
    UnknownAgent,
    UnknownIssuer,
    UnknownToken,
    UnresolvedHolder,
)
from .spec_lang.ast import Modality


class TokenState(str, Enum):
    CREATED = "CREATED"
    HELD = "HELD"
    DELEGATED = "DELEGATED"
    DISCHARGED = "DISCHARGED"
    REVOKED = "REVOKED"
    VIOLATED = "VIOLATED"


TERMINAL_STATES = frozenset(
    {TokenState.DISCHARGED, TokenState.REVOKED, TokenState.VIOLATED}
)

# Legal edges of the lifecycle graph, used by replay/audit checks.
LIFECYCLE_EDGES = frozenset(
    {
        (TokenState.CREATED, TokenState.HELD),
        (TokenState.HELD, TokenState.DELEGATED),
        (TokenState.DELEGATED, TokenState.HELD),
        (TokenState.HELD, TokenState.DISCHARGED),
        (TokenState.HELD, TokenState.REVOKED),
        (TokenState.HELD, TokenState.VIOLATED),
    }
)


class HolderKind(str, Enum):
    AGENT = "agent"
    ROLE = "role"
    GROUP = "group"


@dataclass(frozen=True)
class HolderRef:
    """Who a token binds: a concrete agent, or a role/group resolved late.

    Role and group holders are resolved against current bindings at each
    judgment, so a group embargo covers agents bound after it was issued.
    """

    kind: HolderKind
    name: str

    def to_detail(self) -> dict:
        return {"kind": self.kind.value, "name": self.name}


@dataclass(frozen=True)
class ChainLink:
    frm: str
    to: str
    at: int


@dataclass(frozen=True)
class DelegationChain:
    links: tuple[ChainLink, ...]

    @property
    def head(self) -> str:
        return self.links[0].frm

    def participants(self) -> tuple[str, ...]:
        return (self.links[0].frm,) + tuple(link.to for link in self.links)

    def nodes(self) -> frozenset[str]:
        names: set[str] = set()
        for link in self.links:
            names.add(link.frm)
            names.add(link.to)
        return frozenset(names)

    def extended(self, frm: str, to: str, at: int) -> DelegationChain:
        return DelegationChain(self.links + (ChainLink(frm, to, at),))

    def to_detail(self) -> list[dict]:
        return [{"from": l.frm, "to": l.to, "at": l.at} for l in self.links]


@dataclass
class Token:
    id: int
    modality: Modality
    action: str
    holder: HolderRef
    subject: str | None
    state: TokenState
    chain: DelegationChain
    issued_at: int
    issuer: str
    deadline: int | None = None
    # permit guard: burden action that must be DISCHARGED first
    requires_action: str | None = None
    # embargo exception: permit spec that, while HELD, suspends this token
    unless_action: str | None = None
    unless_target: str | None = None
    evidence: int | None = None

    @property
    def active(self) -> bool:
        return self.state is TokenState.HELD


class TokenStore:
    """All tokens of one community instance, keyed by monotonic integer id."""

    def __init__(self) -> None:
        self._tokens: dict[int, Token] = {}
        self._next_id = 1

    def add(self, token: Token) -> None:
        self._tokens[token.id] = token

    def next_id(self) -> int:
        allocated = self._next_id
        self._next_id += 1
        return allocated

    def get(self, token_id: int) -> Token:
        token = self._tokens.get(token_id)
        if token is None:
            raise UnknownToken(f"no token with id {token_id}")
        return token

    def __iter__(self) -> Iterator[Token]:
        return iter(sorted(self._tokens.values(), key=lambda t: t.id))

    def __len__(self) -> int:
        return len(self._tokens)

    def clone(self) -> TokenStore:
        twin = TokenStore()
        twin._next_id = self._next_id
        for token in self._tokens.values():
            twin._tokens[token.id] = replace(token)
        return twin

    def active_tokens(
        self, modality: Modality | None = None, action: str | None = None
    ) -> list[Token]:
        return [
            t
            for t in self
            if t.active
            and (modality is None or t.modality is modality)
            and (action is None or t.action == action)
        ]

    def states(self) -> dict[int, str]:
        return {t.id: t.state.value for t in self}


class BindingResolver(Protocol):
    """Runtime-supplied view of principals, agents, and role coverage."""

    def is_principal(self, name: str) -> bool: ...

    def is_agent(self, name: str) -> bool: ...

    def is_role(self, name: str) -> bool: ...

    def is_group(self, name: str) -> bool: ...

    def principal_of(self, agent: str) -> str | None: ...

    def covers(self, holder: HolderRef, agent: str) -> bool: ...


OUTCOME_ADMISSIBLE = "admissible"
OUTCOME_BLOCKED = "blocked"
OUTCOME_RECOMMENDED = "recommended"

REASON_NO_PERMIT = "no-permit"
REASON_EMBARGO = "embargo"


@dataclass(frozen=True)
class Verdict:
    outcome: str
    permits: tuple[int, ...] = ()
    blockers: tuple[int, ...] = ()
    reason: str | None = None

    @property
    def admissible(self) -> bool:
        return self.outcome == OUTCOME_ADMISSIBLE

    def to_detail(self) -> dict:
        detail: dict = {"outcome": self.outcome}
        if self.permits:
            detail["permits"] = list(self.permits)
        if self.blockers:
            detail["blockers"] = list(self.blockers)
        if self.reason is not None:
            detail["reason"] = self.reason
        return detail


def create_token(
    store: TokenStore,
    resolver: BindingResolver,
    modality: Modality,
    action: str,
    holder: HolderRef,
    subject: str | None,
    issuer: str,
    at: int,
    deadline: int | None = None,
    requires_action: str | None = None,
    unless_action: str | None = None,
    unless_target: str | None = None,
) -> Token:
    if resolver.is_principal(issuer):
        head = issuer
    elif resolver.is_agent(issuer):
        head = resolver.principal_of(issuer) or ""
        if not head:
            raise UnknownIssuer(f"agent {issuer!r} has no principal")
    else:
        raise UnknownIssuer(f"{issuer!r} is neither a registered principal nor a bound agent")

    resolves = {
        HolderKind.AGENT: resolver.is_agent,
        HolderKind.ROLE: resolver.is_role,
        HolderKind.GROUP: resolver.is_group,
    }[holder.kind]
    if not resolves(holder.name):
        raise UnresolvedHolder(f"holder {holder.name!r} ({holder.kind.value}) does not resolve")

    token = Token(
        id=store.next_id(),
        modality=modality,
        action=action,
        holder=holder,
        subject=subject,
        state=TokenState.HELD,
        chain=DelegationChain((ChainLink(head, holder.name, at),)),
        issued_at=at,
        issuer=issuer,
        deadline=deadline,
        requires_action=requires_action,
        unless_action=unless_action,
        unless_target=unless_target,
    )
    store.add(token)
    return token


def _require_holder(resolver: BindingResolver, token: Token, agent: str, verb: str) -> None:
    if token.holder.name != agent and not resolver.covers(token.holder, agent):
        raise NotHolder(f"{agent!r} does not hold token {token.id} and cannot {verb} it")


def delegate_burden(
    store: TokenStore, resolver: BindingResolver, token_id: int, frm: str, to: str, at: int
) -> Token:
    token = store.get(token_id)
    if token.modality is not Modality.BURDEN:
        raise NotABurden(f"token {token.id} is a {token.modality.value}; only burdens delegate")
    if token.state in TERMINAL_STATES:
        raise TerminalState(f"token {token.id} is {token.state.value}")
    _require_holder(resolver, token, frm, "delegate")
    if not resolver.is_agent(to):
        raise UnknownAgent(f"delegate target {to!r} is not a bound agent")
    if to in token.chain.nodes():
        raise CycleDetected(f"{to!r} already appears in the delegation chain of token {token.id}")
    token.chain = token.chain.extended(frm, to, at)
    token.holder = HolderRef(HolderKind.AGENT, to)
    token.state = TokenState.HELD  # passes through DELEGATED; audit logs both hops
    return token


def can_delegate(
    store: TokenStore, resolver: BindingResolver, token_id: int, frm: str, to: str
) -> bool:
    """Pure precondition probe for delegate_burden."""
    try:
        token = store.get(token_id)
    except UnknownToken:
        return False
    if token.modality is not Modality.BURDEN or token.state is not TokenState.HELD:
        return False
    if token.holder.name != frm and not resolver.covers(token.holder, frm):
        return False
    return resolver.is_agent(to) and to not in token.chain.nodes()


def discharge_burden(
    store: TokenStore,
    resolver: BindingResolver,
    token_id: int,
    by: str,
    evidence: int,
    at: int,
    log_head: int,
) -> Token:
    token = store.get(token_id)
    if token.modality is not Modality.BURDEN:
        raise NotABurden(f"token {token.id} is a {token.modality.value}; only burdens discharge")
    if token.state in TERMINAL_STATES:
        raise TerminalState(f"token {token.id} is {token.state.value}")
    _require_holder(resolver, token, by, "discharge")
    if evidence < 0 or evidence > log_head:
        raise DanglingEvidence(f"evidence seq {evidence} is not an existing audit record")
    token.state = TokenState.DISCHARGED
    token.evidence = evidence
    return token


def revoke_token(
    store: TokenStore, resolver: BindingResolver, token_id: int, by: str, at: int
) -> Token:
    token = store.get(token_id)
    if token.modality is Modality.BURDEN:
        raise NotRevocable(f"token {token.id} is a burden; burdens discharge or expire")
    if token.state in TERMINAL_STATES:
        raise TerminalState(f"token {token.id} is {token.state.value}")
    issuer = token.issuer
    authorized = (
        by == issuer
        or resolver.principal_of(issuer) == by
        or (resolver.is_principal(issuer) and resolver.principal_of(by) == issuer)
    )
    if not authorized:
        raise NotIssuer(f"{by!r} did not issue token {token.id} and does not act for its issuer")
    token.state = TokenState.REVOKED
    return token


def _subject_scope_matches(token_subject: str | None, subject: str | None) -> bool:
    # A scoped permit never covers another subject; unscoped covers all.
    return token_subject is None or token_subject == subject


def _guard_satisfied(store: TokenStore, guard_action: str, subject: str | None) -> bool:
    for t in store:
        if (
            t.modality is Modality.BURDEN
            and t.state is TokenState.DISCHARGED
            and t.action == guard_action
            and (t.subject is None or subject is None or t.subject == subject)
        ):
            return True
    return False


def _exception_open(
    store: TokenStore, resolver: BindingResolver, embargo: Token, subject: str | None
) -> bool:
    if embargo.unless_action is None:
        return False
    target = embargo.unless_target
    for p in store.active_tokens(Modality.PERMIT, embargo.unless_action):
        if not _subject_scope_matches(p.subject, subject):
            continue
        if target is None or p.holder.name == target:
            return True
        # an agent-held permit counts when the agent fills the named target
        if p.holder.kind is HolderKind.AGENT and resolver.covers(
            HolderRef(_target_kind(resolver, target), target), p.holder.name
        ):
            return True
    return False


def _target_kind(resolver: BindingResolver, name: str) -> HolderKind:
    if resolver.is_role(name):
        return HolderKind.ROLE
    if resolver.is_group(name):
        return HolderKind.GROUP
    return HolderKind.AGENT


def check_action_admissible(
    store: TokenStore,
    resolver: BindingResolver,
    actor: str,
    action: str,
    subject: str | None = None,
) -> Verdict:
    """Default-deny admissibility judgment.

    Admissible iff some active permit covers (actor, action, subject) with
    its guard burden discharged, and every applicable embargo has its
    unless-permit open. Embargoes dominate permits otherwise.
    """
    if not resolver.is_agent(actor):
        raise UnknownAgent(f"{actor!r} is not bound to any role")

    permits: list[int] = []
    for t in store.active_tokens(Modality.PERMIT, action):
        if not resolver.covers(t.holder, actor):
            continue
        if not _subject_scope_matches(t.subject, subject):
            continue
        if t.requires_action is not None and not _guard_satisfied(
            store, t.requires_action, subject
        ):
            continue
        permits.append(t.id)

    blockers: list[int] = []
    for t in store.active_tokens(Modality.EMBARGO, action):
        if not resolver.covers(t.holder, actor):
            continue
        if t.subject is not None and t.subject != subject:
            continue
        if not _exception_open(store, resolver, t, subject):
            blockers.append(t.id)

    if blockers:
        return Verdict(OUTCOME_BLOCKED, blockers=tuple(blockers), reason=REASON_EMBARGO)
    if not permits:
        return Verdict(OUTCOME_BLOCKED, reason=REASON_NO_PERMIT)
    return Verdict(OUTCOME_ADMISSIBLE, permits=tuple(permits))


def expire_due(store: TokenStore, at: int) -> list[Token]:
    """Transition every overdue HELD burden to VIOLATED; deadline is a seq."""
    expired: list[Token] = []
    for t in store:
        if (
            t.modality is Modality.BURDEN
            and t.state is TokenState.HELD
            and t.deadline is not None
            and t.deadline < at
        ):
            t.state = TokenState.VIOLATED
            expired.append(t)
    return expired


def trace_to_principal(resolver: BindingResolver, token: Token) -> str:
    """The principal ultimately responsible for a token, via its chain head."""
    head = token.chain.head
    if not resolver.is_principal(head):
        raise MalformedChain(f"chain head {head!r} of token {token.id} is not a principal")
    return head


READY = "ready"
NOT_READY = "not_ready"


@dataclass(frozen=True)
class IntentRecord:
    """An agent's goal/plan/commitment triple.

    Intent never transfers: the record is immutable and no registry
    operation rebinds its owner. Delegation moves burdens, not intents.
    """

    owner: str
    goal: str
    plan: str
    commitment_readiness: str = READY


class IntentRegistry:
    def __init__(self) -> None:
        self._records: list[IntentRecord] = []

    def record(
        self, owner: str, goal: str, plan: str, commitment_readiness: str = READY
    ) -> IntentRecord:
        if commitment_readiness not in (READY, NOT_READY):
            raise ValueError(f"commitment_readiness must be {READY!r} or {NOT_READY!r}")
        rec = IntentRecord(owner, goal, plan, commitment_readiness)
        self._records.append(rec)
        return rec

    def for_owner(self, owner: str) -> tuple[IntentRecord, ...]:
        return tuple(r for r in self._records if r.owner == owner)
