"""Lexing and statement segmentation for a C subset.

This is deliberately not a C parser. The tokenizer recognises the lexical
classes needed to label statements, and the segmenter splits a function body
at top-level semicolons, control-flow headers and braces.
"""

from __future__ import annotations

import functools
import hashlib
import re
from dataclasses import dataclass, field
from typing import Iterator

from .errors import EmptyInput, UnbalancedBraces, UnbalancedParens, UnterminatedLiteral

IDENTIFIER = "identifier"
KEYWORD = "keyword"
NUMBER = "number-literal"
CHAR = "char-literal"
STRING = "string-literal"
OPERATOR = "operator"
PUNCTUATION = "punctuation"

KEYWORDS = frozenset(
    """
    auto break case char const continue default do double else enum extern
    float for goto if inline int long register restrict return short signed
    sizeof static struct switch typedef union unsigned void volatile while
    _Bool _Complex _Imaginary NULL nullptr true false
    """.split()
)
TYPE_KEYWORDS = frozenset("char double float int long short signed unsigned void _Bool _Complex".split())
QUALIFIERS = frozenset("auto const extern inline register restrict static volatile typedef".split())
LITERAL_KINDS = frozenset({NUMBER, CHAR, STRING})

# longest first
OPERATORS = sorted(
    """
    ... >>= <<= -> ++ -- << >> <= >= == != && || += -= *= /= %= &= |= ^=
    + - * / % & | ^ ~ ! = < > ? .
    """.split(),
    key=len,
    reverse=True,
)
PUNCT_CHARS = "()[]{};,:"
_OPERATOR_RE = re.compile("|".join(re.escape(op) for op in OPERATORS))

_NUMBER_RE = re.compile(
    r"(?:0[xX][0-9a-fA-F]+|(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)[uUlLfF]*"
)
_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_BLANK_RE = re.compile(r"[ \t\r\f\v]+")
_LITERAL_PREFIXES = ("u8", "u", "U", "L")

# statement kinds
SIMPLE = "simple"
CONDITION_HEAD = "condition-head"
LOOP_HEAD = "loop-head"
SWITCH_CASE = "switch-case"
JUMP = "jump"
DECLARATION = "declaration"
BLOCK_OPEN = "block-open"
BLOCK_CLOSE = "block-close"
BLOCK_KINDS = frozenset({BLOCK_OPEN, BLOCK_CLOSE})


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    start: int
    end: int

    def __repr__(self):
        return f"Token({self.kind} {self.text!r} @{self.start})"


@dataclass(frozen=True)
class Statement:
    id: int
    tokens: tuple[Token, ...]
    kind: str
    raw_text: str

    @property
    def labelable(self) -> bool:
        return self.kind not in BLOCK_KINDS

    @property
    def span(self) -> tuple[int, int]:
        return self.tokens[0].start, self.tokens[-1].end


@dataclass(frozen=True)
class SourceFunction:
    function_id: str
    source_text: str
    statements: tuple[Statement, ...] = field(default=())

    @property
    def labelable(self) -> list[Statement]:
        return [s for s in self.statements if s.labelable]

    def statement(self, sid: int) -> Statement:
        return self.statements[sid]


def _scan_quoted(text: str, pos: int, quote: str) -> int:
    """Return the offset just past the closing quote starting at ``pos``."""
    i = pos + 1
    n = len(text)
    while i < n:
        c = text[i]
        if c == "\\":
            i += 2
            continue
        if c == quote:
            return i + 1
        if c == "\n":
            break
        i += 1
    what = "string" if quote == '"' else "character"
    raise UnterminatedLiteral(f"unterminated {what} literal at offset {pos}")


def _iter_tokens(text: str) -> Iterator[Token]:
    n = len(text)
    i = 0
    line_start = True  # only whitespace seen since the last newline
    while i < n:
        c = text[i]
        if c == "\n":
            line_start = True
            i += 1
            continue
        if c in " \t\r\f\v":
            i = _BLANK_RE.match(text, i).end()
            continue
        if c == "#" and line_start:
            # preprocessor line, honouring backslash continuations
            while i < n and text[i] != "\n":
                if text[i] == "\\" and i + 1 < n and text[i + 1] == "\n":
                    i += 2
                    continue
                i += 1
            continue
        line_start = False
        if text.startswith("//", i):
            j = text.find("\n", i)
            i = n if j < 0 else j
            continue
        if text.startswith("/*", i):
            j = text.find("*/", i + 2)
            if j < 0:
                raise UnterminatedLiteral(f"unterminated comment at offset {i}")
            i = j + 2
            continue
        if c == '"' or c == "'":
            end = _scan_quoted(text, i, c)
            yield Token(STRING if c == '"' else CHAR, text[i:end], i, end)
            i = end
            continue
        m = _IDENT_RE.match(text, i)
        if m:
            word = m.group()
            end = m.end()
            if word in _LITERAL_PREFIXES and end < n and text[end] in "\"'":
                q = text[end]
                lit_end = _scan_quoted(text, end, q)
                yield Token(STRING if q == '"' else CHAR, text[i:lit_end], i, lit_end)
                i = lit_end
                continue
            yield Token(KEYWORD if word in KEYWORDS else IDENTIFIER, word, i, end)
            i = end
            continue
        if c.isdigit() or (c == "." and i + 1 < n and text[i + 1].isdigit()):
            m = _NUMBER_RE.match(text, i)
            yield Token(NUMBER, m.group(), i, m.end())
            i = m.end()
            continue
        m = None if c in PUNCT_CHARS else _OPERATOR_RE.match(text, i)
        if m:
            yield Token(OPERATOR, m.group(), i, m.end())
            i = m.end()
        else:
            # braces, parens and anything unrecognised become single-char punctuation
            yield Token(PUNCTUATION, c, i, i + 1)
            i += 1


def tokenize(source_text: str) -> list[Token]:
    """Lex ``source_text``; comments and preprocessor lines are dropped."""
    if not source_text or not source_text.strip():
        raise EmptyInput("empty source text")
    tokens = list(_iter_tokens(source_text))
    if not tokens:
        raise EmptyInput("source text contains no tokens")
    return tokens


def _join(tokens) -> str:
    parts = []
    prev_end = None
    for t in tokens:
        if prev_end is not None and t.start > prev_end:
            parts.append(" ")
        parts.append(t.text)
        prev_end = t.end
    return "".join(parts)


def looks_like_declaration(tokens) -> bool:
    """Heuristic: does the token run start with a type specifier?"""
    i = 0
    while i < len(tokens) and tokens[i].text in QUALIFIERS:
        i += 1
    if i >= len(tokens):
        return i > 0
    first = tokens[i]
    if first.text in TYPE_KEYWORDS or first.text in ("struct", "union", "enum"):
        return True
    if first.kind != IDENTIFIER:
        return False
    # typedef-name candidate: T [*|const]* ident (=|;|,|[|(|)|end)
    j = i + 1
    while j < len(tokens) and tokens[j].text in ("*", "const", "volatile", "restrict"):
        j += 1
    if j >= len(tokens) or tokens[j].kind != IDENTIFIER:
        return False
    k = j + 1
    return k >= len(tokens) or tokens[k].text in ("=", ";", ",", "[", "(", ")")


def _match_paren(tokens, i: int) -> int:
    """Index just past the ``)`` matching the ``(`` at ``tokens[i]``."""
    depth = 0
    for j in range(i, len(tokens)):
        t = tokens[j].text
        if t == "(":
            depth += 1
        elif t == ")":
            depth -= 1
            if depth == 0:
                return j + 1
    raise UnbalancedParens(f"unclosed '(' at offset {tokens[i].start}")


class _Segmenter:
    def __init__(self, tokens):
        self.tokens = tokens
        self.out: list[tuple[list[Token], str]] = []
        self.braces: list[int] = []

    def emit(self, toks, kind):
        self.out.append((list(toks), kind))

    def run(self):
        toks = self.tokens
        n = len(toks)
        i = 0
        while i < n:
            t = toks[i]
            text = t.text
            if text == "{":
                self.braces.append(t.start)
                self.emit([t], BLOCK_OPEN)
                i += 1
            elif text == "}":
                if not self.braces:
                    raise UnbalancedBraces(f"unmatched '}}' at offset {t.start}")
                self.braces.pop()
                self.emit([t], BLOCK_CLOSE)
                i += 1
            elif text == ")" or text == "]":
                raise UnbalancedParens(f"unmatched '{text}' at offset {t.start}")
            elif text in ("if", "while", "for", "switch") and t.kind == KEYWORD:
                i = self.header(i, i)
            elif text == "else":
                if i + 1 < n and toks[i + 1].text == "if":
                    i = self.header(i, i + 1)
                else:
                    self.emit([t], CONDITION_HEAD)
                    i += 1
            elif text == "do":
                self.emit([t], LOOP_HEAD)
                i += 1
            elif text in ("case", "default"):
                i = self.case_label(i)
            elif text in ("break", "continue", "goto", "return"):
                i = self.simple(i, JUMP)
            elif t.kind == IDENTIFIER and i + 1 < n and toks[i + 1].text == ":":
                self.emit(toks[i:i + 2], SIMPLE)  # goto label
                i += 2
            else:
                i = self.simple(i, None)
        if self.braces:
            raise UnbalancedBraces(f"unclosed '{{' at offset {self.braces[-1]}")
        return self.out

    def header(self, start, kw_index):
        toks = self.tokens
        kw = toks[kw_index].text
        kind = LOOP_HEAD if kw in ("while", "for") else CONDITION_HEAD
        j = kw_index + 1
        if j >= len(toks) or toks[j].text != "(":
            # malformed header: fall back to a plain statement
            return self.simple(start, None)
        end = _match_paren(toks, j)
        if end < len(toks) and toks[end].text == ";":
            end += 1  # do-while tail or empty loop body
        self.emit(toks[start:end], kind)
        return end

    def case_label(self, i):
        toks = self.tokens
        ternary = 0
        for j in range(i + 1, len(toks)):
            t = toks[j].text
            if t == "?":
                ternary += 1
            elif t == ":":
                if ternary == 0:
                    self.emit(toks[i:j + 1], SWITCH_CASE)
                    return j + 1
                ternary -= 1
            elif t in (";", "{", "}"):
                break
        return self.simple(i, SWITCH_CASE)

    def simple(self, i, kind):
        toks = self.tokens
        n = len(toks)
        depth = 0
        init = 0
        j = i
        while j < n:
            t = toks[j]
            text = t.text
            if text in ("(", "["):
                depth += 1
            elif text in (")", "]"):
                depth -= 1
                if depth < 0:
                    raise UnbalancedParens(f"unmatched '{text}' at offset {t.start}")
            elif text == "{":
                prev = toks[j - 1].text if j > i else None
                if depth > 0 or init > 0 or prev in ("=", ","):
                    init += 1
                else:
                    break  # function body or block opener ends the statement
            elif text == "}":
                if init > 0:
                    init -= 1
                else:
                    break  # statement missing its ';' before a closing brace
            elif text == ";" and depth == 0 and init == 0:
                j += 1
                break
            j += 1
        if depth > 0:
            raise UnbalancedParens(f"unclosed '(' in statement at offset {toks[i].start}")
        if init > 0:
            raise UnbalancedBraces(f"unclosed initializer brace at offset {toks[i].start}")
        if j == i:
            # only reachable for a lone '{'/'}' which run() handles; guard anyway
            j = i + 1
        stmt = toks[i:j]
        if kind is None:
            kind = DECLARATION if looks_like_declaration(stmt) else SIMPLE
        self.emit(stmt, kind)
        return j


def function_id_for(source_text: str) -> str:
    return "fn-" + hashlib.sha1(source_text.encode("utf-8")).hexdigest()[:16]


@functools.lru_cache(maxsize=32768)
def segment(source_text: str, function_id: str | None = None) -> SourceFunction:
    """Split a function (or a bare body fragment) into ordered statements.

    Braces become block-open / block-close marker statements; they keep the
    brace characters for span accounting but are never labelled. Results are
    immutable and memoized.
    """
    tokens = tokenize(source_text)
    pieces = _Segmenter(tokens).run()
    statements = tuple(
        Statement(id=k, tokens=tuple(toks), kind=kind, raw_text=_join(toks))
        for k, (toks, kind) in enumerate(pieces)
    )
    return SourceFunction(
        function_id=function_id or function_id_for(source_text),
        source_text=source_text,
        statements=statements,
    )


def split_functions(source_text: str) -> list[tuple[str, str]]:
    """Find top-level function definitions in a translation unit.

    Returns ``(name, text)`` pairs. A file with no top-level definition is
    returned whole, so bare statement snippets still segment.
    """
    tokens = tokenize(source_text)
    found = []
    depth = 0
    head = 0  # index of the first token after the last top-level ';' or '}'
    i = 0
    while i < len(tokens):
        t = tokens[i].text
        if t == "{" and depth == 0:
            prev = tokens[i - 1].text if i > 0 else None
            # find matching close
            d = 0
            for j in range(i, len(tokens)):
                if tokens[j].text == "{":
                    d += 1
                elif tokens[j].text == "}":
                    d -= 1
                    if d == 0:
                        break
            else:
                raise UnbalancedBraces(f"unclosed '{{' at offset {tokens[i].start}")
            if prev == ")" and head < i:
                name = None
                for k in range(head, i - 1):
                    if tokens[k].kind == IDENTIFIER and tokens[k + 1].text == "(":
                        name = tokens[k].text
                        break
                start, end = tokens[head].start, tokens[j].end
                found.append((name or f"fn{len(found)}", source_text[start:end]))
            i = j + 1
            head = i
            continue
        if t == ";" and depth == 0:
            head = i + 1
        elif t == "(":
            depth += 1
        elif t == ")":
            depth -= 1
        i += 1
    if not found:
        return [("main", source_text)]
    return found
