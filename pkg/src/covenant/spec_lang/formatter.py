"""Canonical pretty-printer. parse_spec(format_spec(t)) == t structurally."""

from __future__ import annotations

from .ast import CommunityTemplate, ContractDecl, DeonticAtom, PolicyDecl, RoleDecl

_INDENT = "  "


def _format_cardinality(r: RoleDecl) -> str:
    if r.min_card == 1 and r.max_card == 1:
        return ""
    hi = "*" if r.max_card is None else str(r.max_card)
    return f" [{r.min_card}..{hi}]"


def _format_atom(atom: DeonticAtom) -> str:
    return f"{atom.modality.value}({atom.action}, {atom.target})"


def _format_policy(p: PolicyDecl) -> str:
    text = f"policy {_format_atom(p.atom)}"
    if p.requires is not None:
        text += f" requires discharged {_format_atom(p.requires)}"
    if p.unless is not None:
        text += f" unless {_format_atom(p.unless)}"
    return text + ";"


def _format_contract(c: ContractDecl, out: list[str]) -> None:
    out.append(f"{_INDENT}contract {c.name} {{")
    for role, kinds in c.allows:
        acts = ", ".join(k.value for k in kinds)
        out.append(f"{_INDENT * 2}allow {role}: {acts};")
    for rule in c.escalations:
        out.append(f"{_INDENT * 2}escalate when {rule.condition} to {rule.to_role};")
    out.append(f"{_INDENT}}}")


def format_spec(t: CommunityTemplate) -> str:
    """Emit canonical text, declarations grouped by category in source order."""
    out: list[str] = [f"community {t.name} {{"]
    for r in t.roles:
        out.append(f"{_INDENT}role {r.name} : {r.kind.value}{_format_cardinality(r)};")
    for g in t.groups:
        out.append(f"{_INDENT}group {g.name} = {{{', '.join(g.members)}}};")
    for o in t.objects:
        out.append(f"{_INDENT}object {o.name};")
    for p in t.policies:
        out.append(f"{_INDENT}{_format_policy(p)}")
    for c in t.contracts:
        _format_contract(c, out)
    out.append("}")
    return "\n".join(out) + "\n"


def format_specs(templates: list[CommunityTemplate] | tuple[CommunityTemplate, ...]) -> str:
    return "\n".join(format_spec(t) for t in templates)
