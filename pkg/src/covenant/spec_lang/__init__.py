"""Community specification language: parse, validate, pretty-print."""

from .ast import (
    AI_ROLE_KINDS,
    BUILTIN_GROUPS,
    CommunityTemplate,
    ContractDecl,
    DeonticAtom,
    EscalationRule,
    GroupDecl,
    Modality,
    ObjectDecl,
    PolicyDecl,
    Pos,
    RoleDecl,
    RoleKind,
    SpeechActKind,
)
from .formatter import format_spec, format_specs
from .parser import parse_spec, parse_specs, tokenize
from .validate import (
    SEVERITY_ERROR,
    SEVERITY_WARNING,
    ValidationFinding,
    validate_template,
)

__all__ = [
    "AI_ROLE_KINDS",
    "BUILTIN_GROUPS",
    "CommunityTemplate",
    "ContractDecl",
    "DeonticAtom",
    "EscalationRule",
    "GroupDecl",
    "Modality",
    "ObjectDecl",
    "PolicyDecl",
    "Pos",
    "RoleDecl",
    "RoleKind",
    "SpeechActKind",
    "SEVERITY_ERROR",
    "SEVERITY_WARNING",
    "ValidationFinding",
    "format_spec",
    "format_specs",
    "parse_spec",
    "parse_specs",
    "tokenize",
    "validate_template",
]
