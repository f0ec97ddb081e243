"""Grammar, formatter, and validator tests for the community spec language."""

from __future__ import annotations

import random

import pytest

from covenant.errors import ParseError
from covenant.spec_lang import format_spec, parse_spec, validate_template
from covenant.spec_lang.ast import (
    BUILTIN_GROUPS,
    CommunityTemplate,
    ContractDecl,
    DeonticAtom,
    EscalationRule,
    GroupDecl,
    Modality,
    ObjectDecl,
    PolicyDecl,
    RoleDecl,
    RoleKind,
    SpeechActKind,
)
from covenant.spec_lang.validate import SEVERITY_ERROR, SEVERITY_WARNING

MINIMAL = """\
community Tiny {
  role Operator: human;
  policy permit(ping, Operator);
}
"""


def errors_of(template):
    return [f for f in validate_template(template) if f.severity == SEVERITY_ERROR]


def warnings_of(template):
    return [f for f in validate_template(template) if f.severity == SEVERITY_WARNING]


def test_parse_minimal_community():
    t = parse_spec(MINIMAL)
    assert t.name == "Tiny"
    assert t.roles == (RoleDecl("Operator", RoleKind.HUMAN),)
    assert t.policies[0].atom == DeonticAtom(Modality.PERMIT, "ping", "Operator")
    assert errors_of(t) == []


def test_parse_error_carries_position():
    with pytest.raises(ParseError) as info:
        parse_spec("community X {\n  role A human;\n}\n")
    assert info.value.line == 2
    assert info.value.column > 0
    assert info.value.expected


def test_missing_semicolon_is_an_error():
    with pytest.raises(ParseError):
        parse_spec("community X {\n  role A: human\n  role B: human;\n}\n")


def test_unterminated_community_is_an_error():
    with pytest.raises(ParseError):
        parse_spec("community X {\n  role A: human;\n")


def test_cardinality_forms():
    t = parse_spec(
        "community C {\n"
        "  role A: human;\n"
        "  role B: human [0..1];\n"
        "  role D: system [1..*];\n"
        "  role E: llm_agent [2..5];\n"
        "}\n"
    )
    by_name = {r.name: r for r in t.roles}
    assert (by_name["A"].min_card, by_name["A"].max_card) == (1, 1)
    assert (by_name["B"].min_card, by_name["B"].max_card) == (0, 1)
    assert (by_name["D"].min_card, by_name["D"].max_card) == (1, None)
    assert (by_name["E"].min_card, by_name["E"].max_card) == (2, 5)


def test_empty_cardinality_range_is_flagged():
    t = parse_spec("community C {\n  role A: human [3..1];\n}\n")
    assert any("cardinality" in f.message for f in errors_of(t))


def test_duplicate_names_flagged():
    t = parse_spec(
        "community C {\n  role A: human;\n  object A;\n}\n"
    )
    assert any("duplicate name" in f.message for f in errors_of(t))


def test_group_member_must_be_declared():
    t = parse_spec(
        "community C {\n  role A: human;\n  group G = {A, Missing};\n}\n"
    )
    assert any("undeclared role 'Missing'" in f.message for f in errors_of(t))


def test_unless_only_on_embargo():
    t = parse_spec(
        "community C {\n"
        "  role A: human;\n"
        "  policy permit(x, A) unless permit(y, A);\n"
        "}\n"
    )
    assert any("unless" in f.message for f in errors_of(t))


def test_unless_must_name_a_permit():
    t = parse_spec(
        "community C {\n"
        "  role A: human;\n"
        "  policy embargo(x, A) unless burden(y, A);\n"
        "}\n"
    )
    assert any("must name a permit" in f.message for f in errors_of(t))


def test_requires_must_name_a_burden():
    t = parse_spec(
        "community C {\n"
        "  role A: human;\n"
        "  policy permit(x, A) requires discharged permit(y, A);\n"
        "}\n"
    )
    assert any("must name a burden" in f.message for f in errors_of(t))


def test_unresolved_target_flagged():
    t = parse_spec("community C {\n  role A: human;\n  policy permit(x, Ghost);\n}\n")
    assert any("unresolved target 'Ghost'" in f.message for f in errors_of(t))


def test_builtin_groups_resolve_without_declaration():
    t = parse_spec(
        "community C {\n"
        "  role A: llm_agent;\n"
        "  policy embargo(x, ALL);\n"
        "  policy embargo(y, ALL_AI_AGENTS);\n"
        "}\n"
    )
    assert errors_of(t) == []


def test_escalation_to_nonhuman_warns():
    t = parse_spec(
        "community C {\n"
        "  role Bot: llm_agent;\n"
        "  contract K {\n"
        "    allow Bot: escalate;\n"
        "    escalate when low_confidence to Bot;\n"
        "  }\n"
        "}\n"
    )
    assert errors_of(t) == []
    assert any("not a human role" in f.message for f in warnings_of(t))


def test_escalation_to_undeclared_role_is_an_error():
    t = parse_spec(
        "community C {\n"
        "  role A: human;\n"
        "  contract K {\n"
        "    allow A: escalate;\n"
        "    escalate when x to Nobody;\n"
        "  }\n"
        "}\n"
    )
    assert any("undeclared role 'Nobody'" in f.message for f in errors_of(t))


def conflict_oracle(template):
    """Brute-force pairwise scan: unconditional permit/embargo overlaps."""
    count = 0
    for e in template.policies:
        if e.modality is not Modality.EMBARGO or e.unless is not None:
            continue
        for p in template.policies:
            if (
                p.modality is Modality.PERMIT
                and p.action == e.action
                and p.target == e.target
            ):
                count += 1
    return count


def test_permit_embargo_conflict_warning_matches_pairwise_oracle():
    t = parse_spec(
        "community C {\n"
        "  role A: human;\n"
        "  role B: llm_agent;\n"
        "  policy permit(x, A);\n"
        "  policy permit(x, B);\n"
        "  policy embargo(x, A);\n"
        "  policy embargo(x, B);\n"
        "  policy embargo(y, A);\n"
        "  policy permit(z, A);\n"
        "}\n"
    )
    conflicts = [f for f in warnings_of(t) if "conflict" in f.message]
    assert len(conflicts) == conflict_oracle(t) == 2


def test_unless_clause_suppresses_conflict_warning():
    t = parse_spec(
        "community C {\n"
        "  role A: human;\n"
        "  policy permit(x, A);\n"
        "  policy embargo(x, A) unless permit(open_x, A);\n"
        "}\n"
    )
    assert conflict_oracle(t) == 0
    assert not [f for f in warnings_of(t) if "conflict" in f.message]


def test_requires_and_unless_clauses_round_trip():
    source = (
        "community C {\n"
        "  role Officer: human;\n"
        "  role Bot: llm_agent;\n"
        "  policy permit(read, Bot) requires discharged burden(check, Officer);\n"
        "  policy embargo(leak, ALL) unless permit(open, Officer);\n"
        "}\n"
    )
    t = parse_spec(source)
    assert t.policies[0].requires == DeonticAtom(Modality.BURDEN, "check", "Officer")
    assert t.policies[1].unless == DeonticAtom(Modality.PERMIT, "open", "Officer")
    assert parse_spec(format_spec(t)) == t


def test_interleaved_declarations_regroup_canonically():
    interleaved = (
        "community C {\n"
        "  object O1;\n"
        "  role A: human;\n"
        "  policy permit(x, A);\n"
        "  role B: system;\n"
        "  object O2;\n"
        "}\n"
    )
    t = parse_spec(interleaved)
    assert [r.name for r in t.roles] == ["A", "B"]
    assert [o.name for o in t.objects] == ["O1", "O2"]
    assert parse_spec(format_spec(t)) == t


def test_comments_are_ignored():
    t = parse_spec(
        "community C {\n"
        "  # staffing\n"
        "  role A: human;  # on call\n"
        "  policy permit(x, A);\n"
        "}\n"
    )
    assert len(t.roles) == 1 and len(t.policies) == 1


# ----------------------------------------------------------------------
# seeded template fuzzer; also reused by the acceptance checks

_CONDITIONS = ("policy_violation", "low_confidence", "timeout", "cond_override")


def make_random_template(rng: random.Random, index: int) -> CommunityTemplate:
    """A structurally valid template; validator errors are a generator bug."""
    kinds = list(RoleKind)
    roles = tuple(
        RoleDecl(
            f"Role{chr(65 + i)}{index % 7}",
            rng.choice(kinds),
            *rng.choice(((1, 1), (0, 1), (1, None), (0, None), (2, 5), (1, 3))),
        )
        for i in range(rng.randint(1, 5))
    )
    role_names = [r.name for r in roles]

    groups = []
    for g in range(rng.randint(0, 2)):
        size = rng.randint(1, len(role_names))
        groups.append(GroupDecl(f"Group{g}_{index % 5}", tuple(rng.sample(role_names, size))))
    groups = tuple(groups)

    objects = tuple(ObjectDecl(f"Store{o}") for o in range(rng.randint(0, 3)))

    targets = role_names + [g.name for g in groups] + list(BUILTIN_GROUPS)
    actions = [f"act_{chr(97 + a)}" for a in range(6)]

    policies = []
    for _ in range(rng.randint(0, 6)):
        modality = rng.choice(list(Modality))
        atom = DeonticAtom(modality, rng.choice(actions), rng.choice(targets))
        requires = None
        unless = None
        if rng.random() < 0.3:
            requires = DeonticAtom(Modality.BURDEN, rng.choice(actions), rng.choice(targets))
        if modality is Modality.EMBARGO and rng.random() < 0.4:
            unless = DeonticAtom(Modality.PERMIT, rng.choice(actions), rng.choice(targets))
        policies.append(PolicyDecl(atom, requires, unless))
    policies = tuple(policies)

    contracts = []
    for c in range(rng.randint(0, 2)):
        allows = tuple(
            (
                rng.choice(role_names),
                tuple(rng.sample(list(SpeechActKind), rng.randint(1, 4))),
            )
            for _ in range(rng.randint(1, 3))
        )
        escalations = tuple(
            EscalationRule(rng.choice(_CONDITIONS), rng.choice(role_names))
            for _ in range(rng.randint(0, 2))
        )
        contracts.append(ContractDecl(f"Pact{c}_{index % 5}", allows, escalations))
    contracts = tuple(contracts)

    return CommunityTemplate(
        name=f"Fuzz{index}",
        roles=roles,
        groups=groups,
        objects=objects,
        policies=policies,
        contracts=contracts,
    )


def round_trip_holds(template: CommunityTemplate) -> bool:
    text = format_spec(template)
    reparsed = parse_spec(text)
    return reparsed == template and parse_spec(format_spec(reparsed)) == reparsed


def test_fuzzed_templates_round_trip_and_validate():
    rng = random.Random(0xC0DE)
    for index in range(1000):
        template = make_random_template(rng, index)
        assert errors_of(template) == [], f"generator produced an invalid template #{index}"
        assert round_trip_holds(template), f"round trip failed on fuzzed template #{index}"
