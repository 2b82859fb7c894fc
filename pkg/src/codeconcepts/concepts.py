"""Rule-based statement concept labelling.

Each statement is mapped to a multi-hot vector over a fixed, versioned concept
list. Two static label spaces exist (vulnerable and non-vulnerable
concepts); the abstract-value space used for branch prediction is defined here
too but is filled from execution traces, see :mod:`codeconcepts.values`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .codemodel import (
    CHAR,
    CONDITION_HEAD,
    DECLARATION,
    IDENTIFIER,
    JUMP,
    KEYWORD,
    LITERAL_KINDS,
    LOOP_HEAD,
    NUMBER,
    QUALIFIERS,
    STRING,
    SWITCH_CASE,
    TYPE_KEYWORDS,
    SourceFunction,
    Statement,
)
from .errors import InvalidIndex, PreconditionViolated

CONCEPT_SET_VERSION = 1

VD_VULNERABLE = "vd-vulnerable"
VD_NONVULNERABLE = "vd-nonvulnerable"
BP_ABSTRACT = "bp-abstract"

CANONICAL_NAMES: dict[str, tuple[str, ...]] = {
    VD_VULNERABLE: (
        "null-assignment",
        "null-check",
        "pointer-dereference",
        "memory-allocation",
        "buffer-access",
        "bounds-check",
        "memory-free",
    ),
    VD_NONVULNERABLE: (
        "api-call",
        "arithmetic-no-pointer",
        "constant-assignment",
        "if-statement",
        "jump-statement",
        "loop-head",
        "switch-case",
    ),
    BP_ABSTRACT: (
        "true",
        "false",
        "alphabetic",
        "non-alphabetic",
        "initialized",
        "null",
        "not-null",
        "zero",
        "positive-regular",
        "positive-large",
        "negative-regular",
        "negative-large",
    ),
}


@dataclass(frozen=True)
class ConceptSet:
    name: str
    concept_names: tuple[str, ...]
    version: int = CONCEPT_SET_VERSION

    def __post_init__(self):
        if self.name not in CANONICAL_NAMES:
            raise ValueError(f"unknown concept set {self.name!r}")
        canon = CANONICAL_NAMES[self.name]
        unknown = [c for c in self.concept_names if c not in canon]
        if unknown:
            raise ValueError(f"unknown concepts for {self.name}: {unknown}")

    @property
    def N(self) -> int:
        return len(self.concept_names)

    @property
    def indices(self) -> tuple[int, ...]:
        """Positions of this set's concepts within the canonical list."""
        canon = CANONICAL_NAMES[self.name]
        return tuple(canon.index(c) for c in self.concept_names)

    def project(self, full_bits) -> tuple[int, ...]:
        return tuple(int(full_bits[i]) for i in self.indices)

    def to_header(self) -> dict:
        return {"name": self.name, "concepts": list(self.concept_names), "version": self.version}


def concept_set(name: str) -> ConceptSet:
    return ConceptSet(name, CANONICAL_NAMES[name])


@dataclass(frozen=True)
class ConceptVector:
    bits: tuple[int, ...]
    statement_id: int | None = None

    def __post_init__(self):
        if any(b not in (0, 1) for b in self.bits):
            raise ValueError(f"concept bits must be 0/1, got {self.bits}")

    def active(self, cset: ConceptSet) -> set[str]:
        return {name for name, b in zip(cset.concept_names, self.bits) if b}

    def __len__(self):
        return len(self.bits)


@dataclass(frozen=True)
class ExtractorConfig:
    alloc_functions: frozenset[str] = field(
        default=frozenset({"malloc", "calloc", "realloc", "strdup", "strndup"})
    )
    free_functions: frozenset[str] = field(default=frozenset({"free"}))
    length_functions: frozenset[str] = field(default=frozenset({"strlen", "strnlen", "sizeof"}))
    null_tokens: frozenset[str] = field(default=frozenset({"NULL", "nullptr"}))

    def __post_init__(self):
        for name in ("alloc_functions", "free_functions", "length_functions", "null_tokens"):
            value = frozenset(getattr(self, name))
            if not value:
                raise ValueError(f"{name} must be nonempty")
            object.__setattr__(self, name, value)
        both = self.alloc_functions & self.free_functions
        if both:
            raise ValueError(f"alloc and free function sets overlap: {sorted(both)}")

    @property
    def reserved_names(self) -> frozenset[str]:
        return self.alloc_functions | self.free_functions | self.length_functions | self.null_tokens


DEFAULT_CONFIG = ExtractorConfig()

_RELATIONAL = frozenset({"<", "<=", ">", ">="})
_EQUALITY = frozenset({"==", "!="})
_OPERAND_BOUNDARY = frozenset({"&&", "||", "?", ":", ",", ";", "==", "!="}) | _RELATIONAL
_ARITH = frozenset({"+", "-", "*", "/", "%"})
_ARITH_COMPOUND = frozenset({"+=", "-=", "*=", "/=", "%=", "++", "--"})
_NON_CALL_KEYWORDS = frozenset({"if", "while", "for", "switch", "return", "sizeof"})


def _body(stmt: Statement):
    toks = list(stmt.tokens)
    if toks and toks[-1].text == ";":
        toks.pop()
    return toks


def _is_operand_end(tok) -> bool:
    if tok is None:
        return False
    if tok.kind in (IDENTIFIER, NUMBER, CHAR, STRING):
        return True
    if tok.kind == KEYWORD and tok.text in ("NULL", "nullptr", "true", "false"):
        return True
    return tok.text in (")", "]", "++", "--")


def _expression_mask(stmt: Statement, toks) -> list[bool]:
    """True for tokens in expression position.

    In a declaration only initializers (after a top-level ``=``) count;
    declarators, array sizes and parameter lists do not.
    """
    if stmt.kind != DECLARATION:
        return [True] * len(toks)
    mask = []
    depth = 0
    in_init = False
    for t in toks:
        if t.text in ("(", "[", "{"):
            mask.append(in_init)
            depth += 1
            continue
        if t.text in (")", "]", "}"):
            depth -= 1
            mask.append(in_init)
            continue
        if depth == 0 and t.text == "=":
            in_init = True
            mask.append(False)
            continue
        if depth == 0 and t.text == ",":
            in_init = False
        mask.append(in_init)
    return mask


def _declarator_stars(toks) -> set[int]:
    """Indices of ``*`` tokens that belong to a type or declarator."""
    stars = set()
    for i, t in enumerate(toks):
        if t.text != "*" or i == 0:
            continue
        prev = toks[i - 1]
        if prev.text in TYPE_KEYWORDS or prev.text in QUALIFIERS or (i - 1) in stars:
            stars.add(i)
    return stars


def _calls(toks, mask):
    for i in range(len(toks) - 1):
        t = toks[i]
        if mask[i] and toks[i + 1].text == "(":
            if t.kind == IDENTIFIER or (t.kind == KEYWORD and t.text == "sizeof"):
                yield i, t.text


def _subscripts(toks, mask):
    for i in range(1, len(toks)):
        if toks[i].text == "[" and mask[i] and _is_operand_end(toks[i - 1]) and toks[i - 1].kind not in (NUMBER, CHAR):
            yield i


def _unary_derefs(toks, mask):
    stars = _declarator_stars(toks)
    for i in range(len(toks) - 1):
        if toks[i].text != "*" or not mask[i] or i in stars:
            continue
        prev = toks[i - 1] if i > 0 else None
        if _is_operand_end(prev):
            continue  # binary multiplication
        if toks[i + 1].kind == IDENTIFIER:
            yield i


def _rhs_after(toks, i):
    """Tokens of the right-hand side of the assignment operator at ``i``."""
    depth = 0
    out = []
    for t in toks[i + 1:]:
        if t.text in ("(", "[", "{"):
            depth += 1
        elif t.text in (")", "]", "}"):
            if depth == 0:
                break
            depth -= 1
        elif depth == 0 and t.text in (",", ";"):
            break
        out.append(t)
    return out


def _strip_casts(rhs):
    """Remove enclosing parens and leading C casts like ``(void *)``."""
    rhs = list(rhs)
    while rhs and rhs[0].text == "(":
        depth = 0
        close = None
        for j, t in enumerate(rhs):
            if t.text == "(":
                depth += 1
            elif t.text == ")":
                depth -= 1
                if depth == 0:
                    close = j
                    break
        if close is None:
            return rhs
        inner = rhs[1:close]
        if close == len(rhs) - 1:
            rhs = inner
            continue
        if inner and all(t.kind in (IDENTIFIER, KEYWORD) or t.text == "*" for t in inner):
            rhs = rhs[close + 1:]
            continue
        return rhs
    return rhs


def _assignments(toks):
    for i, t in enumerate(toks):
        if t.text == "=":
            yield i, _strip_casts(_rhs_after(toks, i))


def _skip_parens_left(toks, k):
    while k >= 0 and toks[k].text == ")":
        k -= 1
    return toks[k] if k >= 0 else None


def _skip_parens_right(toks, k):
    while k < len(toks) and toks[k].text == "(":
        k += 1
    return toks[k] if k < len(toks) else None


def _operand_range(toks, k, direction):
    nest, unnest = (("(", "["), (")", "]")) if direction > 0 else ((")", "]"), ("(", "["))
    depth = 0
    j = k + direction
    span = []
    while 0 <= j < len(toks):
        t = toks[j].text
        if t in nest:
            depth += 1
        elif t in unnest:
            if depth == 0:
                break
            depth -= 1
        elif depth == 0 and t in _OPERAND_BOUNDARY:
            break
        span.append(j)
        j += direction
    return sorted(span)


def _has_length_or_subscript(toks, idxs, config) -> bool:
    idx_set = set(idxs)
    for j in idxs:
        t = toks[j]
        if t.text in config.length_functions:
            if t.text == "sizeof":
                return True
            if j + 1 in idx_set and toks[j + 1].text == "(":
                return True
        if t.text == "[" and j - 1 in idx_set and toks[j - 1].kind == IDENTIFIER:
            return True
    return False


def extract_vd(statement: Statement, config: ExtractorConfig = DEFAULT_CONFIG) -> ConceptVector:
    """Label one statement over the 7 vulnerable concepts (canonical order)."""
    bits = [0] * 7
    if not statement.labelable:
        return ConceptVector(tuple(bits), statement.id)
    toks = _body(statement)
    mask = _expression_mask(statement, toks)

    for _, rhs in _assignments(toks):
        if len(rhs) == 1 and rhs[0].text in config.null_tokens:
            bits[0] = 1

    is_cond = statement.kind == CONDITION_HEAD
    if is_cond:
        for k, t in enumerate(toks):
            if t.text in _EQUALITY:
                left = _skip_parens_left(toks, k - 1)
                right = _skip_parens_right(toks, k + 1)
                if (left is not None and left.text in config.null_tokens) or (
                    right is not None and right.text in config.null_tokens
                ):
                    bits[1] = 1

    subscripts = list(_subscripts(toks, mask))
    arrow = any(t.text == "->" and m for t, m in zip(toks, mask))
    if arrow or subscripts or any(True for _ in _unary_derefs(toks, mask)):
        bits[2] = 1

    for _, name in _calls(toks, mask):
        if name in config.alloc_functions:
            bits[3] = 1
        if name in config.free_functions:
            bits[6] = 1
    if statement.kind == DECLARATION:
        for i in range(1, len(toks) - 1):
            if (
                toks[i].text == "["
                and not mask[i]
                and toks[i - 1].kind == IDENTIFIER
                and toks[i + 1].text != "]"
            ):
                bits[3] = 1

    if subscripts:
        bits[4] = 1

    if is_cond:
        for k, t in enumerate(toks):
            if t.text in _RELATIONAL:
                left = _operand_range(toks, k, -1)
                right = _operand_range(toks, k, +1)
                if _has_length_or_subscript(toks, left, config) or _has_length_or_subscript(toks, right, config):
                    bits[5] = 1

    return ConceptVector(tuple(bits), statement.id)


def _is_literal_rhs(rhs) -> bool:
    if rhs and rhs[0].text in ("-", "+", "~"):
        rhs = _strip_casts(rhs[1:])
    if len(rhs) != 1:
        return False
    t = rhs[0]
    return t.kind in LITERAL_KINDS or t.text in ("true", "false")


def extract_nvc(statement: Statement, config: ExtractorConfig = DEFAULT_CONFIG) -> ConceptVector:
    """Label one statement over the 7 non-vulnerable concepts.

    Only defined for statements that carry no vulnerable concept.
    """
    if any(extract_vd(statement, config).bits):
        raise PreconditionViolated(
            f"statement {statement.id} ({statement.raw_text!r}) carries a vulnerable concept"
        )
    bits = [0] * 7
    if not statement.labelable:
        return ConceptVector(tuple(bits), statement.id)
    toks = _body(statement)
    mask = _expression_mask(statement, toks)
    reserved = config.alloc_functions | config.free_functions | config.length_functions

    for _, name in _calls(toks, mask):
        if name not in reserved and name not in _NON_CALL_KEYWORDS:
            bits[0] = 1

    has_ptr = any(t.text in ("->", "[") for t in toks)
    if not has_ptr:
        stars = _declarator_stars(toks)
        for i, t in enumerate(toks):
            if not mask[i]:
                continue
            if t.text in _ARITH_COMPOUND:
                bits[1] = 1
            elif t.text in _ARITH and i not in stars and i + 1 < len(toks):
                if _is_operand_end(toks[i - 1] if i > 0 else None):
                    bits[1] = 1

    for _, rhs in _assignments(toks):
        if _is_literal_rhs(rhs):
            bits[2] = 1

    first = toks[0].text if toks else ""
    if statement.kind == CONDITION_HEAD and first in ("if", "else"):
        bits[3] = 1
    if statement.kind == JUMP:
        bits[4] = 1
    if statement.kind == LOOP_HEAD:
        bits[5] = 1
    if statement.kind == SWITCH_CASE:
        bits[6] = 1
    return ConceptVector(tuple(bits), statement.id)


def extract(statement: Statement, cset: ConceptSet, config: ExtractorConfig = DEFAULT_CONFIG) -> ConceptVector:
    """Extract over ``cset`` (possibly a restricted set) by projecting the full vector."""
    if cset.name == VD_VULNERABLE:
        full = extract_vd(statement, config)
    elif cset.name == VD_NONVULNERABLE:
        vd = extract_vd(statement, config)
        if any(vd.bits):
            # statements with vulnerable concepts are excluded from this label space
            full = ConceptVector((0,) * 7, statement.id)
        else:
            full = extract_nvc(statement, config)
    else:
        raise ValueError(f"{cset.name} concepts come from execution traces, not static rules")
    return ConceptVector(cset.project(full.bits), statement.id)


def extract_function(
    function: SourceFunction, cset: ConceptSet, config: ExtractorConfig = DEFAULT_CONFIG
) -> list[ConceptVector]:
    return [extract(s, cset, config) for s in function.labelable]


def restrict_concepts(cset: ConceptSet, keep) -> ConceptSet:
    keep = list(keep)
    if not keep:
        raise InvalidIndex("keep must be nonempty")
    if len(set(keep)) != len(keep):
        raise InvalidIndex(f"duplicate indices in {keep}")
    for k in keep:
        if not isinstance(k, int) or isinstance(k, bool) or not 0 <= k < cset.N:
            raise InvalidIndex(f"index {k!r} outside 0..{cset.N - 1}")
    names = tuple(cset.concept_names[k] for k in sorted(keep))
    return ConceptSet(cset.name, names, cset.version)
