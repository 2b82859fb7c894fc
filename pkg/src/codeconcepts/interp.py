"""A tiny interpreter for straight-line C fragments.

Only used to produce traces for synthetic branch-prediction fixtures: integer,
character and pointer scalars, fixed arrays, assignments and ``if``/``else``.
Loops, calls other than a few pure helpers, and memory are not modelled.
"""

from __future__ import annotations

from dataclasses import dataclass

from .codemodel import (
    BLOCK_CLOSE,
    BLOCK_OPEN,
    CHAR,
    CONDITION_HEAD,
    DECLARATION,
    IDENTIFIER,
    JUMP,
    NUMBER,
    SIMPLE,
    SourceFunction,
    TYPE_KEYWORDS,
)
from .errors import DataError
from .values import INT64_MAX, INT64_MIN, TraceEvent, TraceRecord


class InterpreterError(DataError):
    pass


@dataclass
class _Ptr:
    null: bool


_BINARY_PREC = {
    "||": 1, "&&": 2, "|": 3, "^": 4, "&": 5,
    "==": 6, "!=": 6, "<": 7, "<=": 7, ">": 7, ">=": 7,
    "<<": 8, ">>": 8, "+": 9, "-": 9, "*": 10, "/": 10, "%": 10,
}


def _wrap64(v: int) -> int:
    return (v - INT64_MIN) % 2**64 + INT64_MIN


def _c_div(a, b):
    if b == 0:
        raise InterpreterError("division by zero")
    q = abs(a) // abs(b)
    return q if (a >= 0) == (b >= 0) else -q


class _Expr:
    def __init__(self, toks, env, arrays):
        self.toks = [t for t in toks]
        self.i = 0
        self.env = env
        self.arrays = arrays

    def peek(self):
        return self.toks[self.i].text if self.i < len(self.toks) else None

    def take(self):
        t = self.toks[self.i]
        self.i += 1
        return t

    def parse(self, min_prec=1):
        left = self.unary()
        while True:
            op = self.peek()
            prec = _BINARY_PREC.get(op)
            if prec is None or prec < min_prec:
                return left
            self.take()
            right = self.parse(prec + 1)
            left = self.apply(op, left, right)

    def apply(self, op, a, b):
        if op in ("==", "!="):
            if isinstance(a, _Ptr) or isinstance(b, _Ptr):
                an = a.null if isinstance(a, _Ptr) else a == 0
                bn = b.null if isinstance(b, _Ptr) else b == 0
                eq = an == bn and an  # two non-null pointers compare unknown; treat as unequal
                return int(eq) if op == "==" else int(not eq)
            return int(a == b) if op == "==" else int(a != b)
        if isinstance(a, _Ptr) or isinstance(b, _Ptr):
            if op in ("&&", "||"):
                a = int(not a.null) if isinstance(a, _Ptr) else a
                b = int(not b.null) if isinstance(b, _Ptr) else b
            else:
                raise InterpreterError(f"pointer arithmetic ({op}) is not modelled")
        if op == "&&":
            return int(bool(a) and bool(b))
        if op == "||":
            return int(bool(a) or bool(b))
        if op == "+":
            return _wrap64(a + b)
        if op == "-":
            return _wrap64(a - b)
        if op == "*":
            return _wrap64(a * b)
        if op == "/":
            return _c_div(a, b)
        if op == "%":
            return a - _c_div(a, b) * b
        if op == "<":
            return int(a < b)
        if op == "<=":
            return int(a <= b)
        if op == ">":
            return int(a > b)
        if op == ">=":
            return int(a >= b)
        if op == "&":
            return a & b
        if op == "|":
            return a | b
        if op == "^":
            return a ^ b
        if op == "<<":
            return _wrap64(a << b)
        if op == ">>":
            return a >> b
        raise InterpreterError(f"operator {op} not supported")

    def unary(self):
        t = self.peek()
        if t == "-":
            self.take()
            return _wrap64(-self.unary())
        if t == "+":
            self.take()
            return self.unary()
        if t == "!":
            self.take()
            v = self.unary()
            return int(v.null) if isinstance(v, _Ptr) else int(v == 0)
        if t == "~":
            self.take()
            return ~self.unary()
        if t == "&":
            self.take()
            self.primary()
            return _Ptr(False)
        return self.primary()

    def primary(self):
        if self.i >= len(self.toks):
            raise InterpreterError("unexpected end of expression")
        t = self.take()
        if t.text == "(":
            v = self.parse()
            if self.peek() != ")":
                raise InterpreterError("expected ')'")
            self.take()
            return v
        if t.kind == NUMBER:
            text = t.text.rstrip("uUlL")
            return int(text, 0) if not (len(text) > 1 and text[0] == "0" and text.isdigit()) else int(text, 8)
        if t.kind == CHAR:
            return ord(_char_value(t.text))
        if t.text in ("NULL", "nullptr"):
            return _Ptr(True)
        if t.text in ("true", "false"):
            return int(t.text == "true")
        if t.kind == IDENTIFIER:
            if self.peek() == "[":
                self.take()
                idx = self.parse()
                self.take()  # ']'
                arr = self.arrays.get(t.text)
                if arr is None:
                    raise InterpreterError(f"unknown array {t.text}")
                if not 0 <= idx < len(arr):
                    raise InterpreterError(f"index {idx} out of range for {t.text}")
                return arr[idx]
            if self.peek() == "(":
                return self.call(t.text)
            if t.text not in self.env:
                raise InterpreterError(f"unbound variable {t.text}")
            return self.env[t.text]
        raise InterpreterError(f"unexpected token {t.text!r}")

    def call(self, name):
        self.take()  # '('
        args = []
        while self.peek() != ")":
            args.append(self.parse())
            if self.peek() == ",":
                self.take()
        self.take()
        if name == "abs" and len(args) == 1:
            return abs(args[0])
        if name in ("min", "max") and len(args) == 2:
            return min(args) if name == "min" else max(args)
        raise InterpreterError(f"call to {name} is not modelled")


_ESCAPES = {"n": "\n", "t": "\t", "0": "\0", "\\": "\\", "'": "'", '"': '"', "r": "\r"}


def _char_value(text: str) -> str:
    body = text[1:-1]
    if body.startswith("\\"):
        return _ESCAPES.get(body[1:], body[1:2])
    return body


def _kind_of(value, declared):
    if declared == "pointer" or isinstance(value, _Ptr):
        return "pointer"
    if declared == "char":
        return "character"
    return "integer"


def _event_value(kind, value):
    if kind == "pointer":
        return "null" if value.null else "nonnull"
    if kind == "character":
        return chr(value & 0xFF)
    if not INT64_MIN <= value <= INT64_MAX:
        raise InterpreterError("integer overflow")
    return value


class _Interp:
    def __init__(self, function: SourceFunction, bindings):
        self.fn = function
        self.stmts = function.statements
        self.env = {}
        self.types = {}
        self.arrays = {}
        self.events = []
        self.done = False
        for name, value in (bindings or {}).items():
            self.env[name] = value
            self.types[name] = "char" if isinstance(value, str) else "int"
            if isinstance(value, str):
                self.env[name] = ord(value)

    def eval(self, toks):
        e = _Expr(toks, self.env, self.arrays)
        v = e.parse()
        if e.i != len(e.toks):
            raise InterpreterError(f"trailing tokens in expression: {[t.text for t in e.toks[e.i:]]}")
        return v

    # structure
    def parse_block(self, i):
        """Return (list of nodes, index after the block) for a block starting at i (block-open)."""
        nodes = []
        i += 1
        while self.stmts[i].kind != BLOCK_CLOSE:
            node, i = self.parse_node(i)
            nodes.append(node)
        return nodes, i + 1

    def parse_node(self, i):
        s = self.stmts[i]
        if s.kind == BLOCK_OPEN:
            body, j = self.parse_block(i)
            return ("block", body), j
        if s.kind == CONDITION_HEAD and s.tokens[0].text in ("if", "else"):
            toks = list(s.tokens)
            if toks[0].text == "else":
                toks = toks[1:]
            cond = toks[2:-1]
            then, j = self.parse_node(i + 1)
            other = None
            if j < len(self.stmts) and self.stmts[j].kind == CONDITION_HEAD and self.stmts[j].tokens[0].text == "else":
                if len(self.stmts[j].tokens) > 1:
                    other, j = self.parse_node(j)
                else:
                    other, j = self.parse_node(j + 1)
            return ("if", s.id, cond, then, other), j
        if s.kind in (SIMPLE, DECLARATION, JUMP):
            return ("stmt", s), i + 1
        raise InterpreterError(f"statement kind {s.kind} ({s.raw_text!r}) is not straight-line")

    def run(self):
        i = 0
        nodes = []
        stmts = self.stmts
        # skip a function header: declaration followed directly by the body block
        if len(stmts) > 1 and stmts[0].kind == DECLARATION and stmts[1].kind == BLOCK_OPEN:
            i = 1
        while i < len(stmts):
            node, i = self.parse_node(i)
            nodes.append(node)
        self.exec_nodes(nodes)
        return self.events

    def exec_nodes(self, nodes):
        for node in nodes:
            if self.done:
                return
            self.exec_node(node)

    def exec_node(self, node):
        tag = node[0]
        if tag == "block":
            self.exec_nodes(node[1])
        elif tag == "if":
            _, sid, cond, then, other = node
            v = self.eval(cond)
            taken = (not v.null) if isinstance(v, _Ptr) else v != 0
            self.events.append(TraceEvent(sid, "boolean", bool(taken)))
            if taken:
                self.exec_node(then)
            elif other is not None:
                self.exec_node(other)
        else:
            self.exec_stmt(node[1])

    def exec_stmt(self, s):
        toks = [t for t in s.tokens if t.text != ";"]
        if s.kind == JUMP:
            if toks[0].text == "return":
                self.done = True
                return
            raise InterpreterError(f"jump {toks[0].text} is not straight-line")
        if s.kind == DECLARATION:
            self.exec_decl(s, toks)
            return
        self.exec_assign(s, toks)

    def exec_decl(self, s, toks):
        i = 0
        base = None
        while i < len(toks) and (toks[i].text in TYPE_KEYWORDS or toks[i].text in ("const", "static")):
            if toks[i].text in TYPE_KEYWORDS:
                base = "char" if toks[i].text == "char" else (base or "int")
            i += 1
        if base is None:
            raise InterpreterError(f"unsupported declaration {s.raw_text!r}")
        # split declarators at top-level commas
        parts, cur, depth = [], [], 0
        for t in toks[i:]:
            if t.text in ("(", "["):
                depth += 1
            elif t.text in (")", "]"):
                depth -= 1
            if t.text == "," and depth == 0:
                parts.append(cur)
                cur = []
            else:
                cur.append(t)
        parts.append(cur)
        for part in parts:
            ptr = False
            while part and part[0].text == "*":
                ptr = True
                part = part[1:]
            name = part[0].text
            rest = part[1:]
            if rest and rest[0].text == "[":
                size = self.eval(rest[1:rest.index(next(t for t in rest if t.text == "]"))])
                self.arrays[name] = [0] * size
                continue
            declared = "pointer" if ptr else base
            self.types[name] = declared
            if rest and rest[0].text == "=":
                value = self.eval(rest[1:])
                self.store(s.id, name, value)
            else:
                self.env[name] = _Ptr(True) if ptr else 0

    def store(self, sid, name, value):
        declared = self.types.get(name, "int")
        kind = _kind_of(value, declared)
        if kind == "character" and not isinstance(value, _Ptr):
            value = value & 0xFF
        self.env[name] = value
        self.events.append(TraceEvent(sid, kind, _event_value(kind, value)))

    def exec_assign(self, s, toks):
        if len(toks) == 2 and toks[1].text in ("++", "--"):
            name = toks[0].text
            self.store(s.id, name, _wrap64(self.env[name] + (1 if toks[1].text == "++" else -1)))
            return
        ops = [k for k, t in enumerate(toks) if t.text in ("=", "+=", "-=", "*=", "/=", "%=")]
        if not ops:
            raise InterpreterError(f"unsupported statement {s.raw_text!r}")
        k = ops[0]
        lhs, op, rhs = toks[:k], toks[k].text, toks[k + 1:]
        value = self.eval(rhs)
        if len(lhs) >= 4 and lhs[1].text == "[":
            idx = self.eval(lhs[2:-1])
            arr = self.arrays[lhs[0].text]
            if not 0 <= idx < len(arr):
                raise InterpreterError(f"index {idx} out of range for {lhs[0].text}")
            arr[idx] = value
            self.events.append(TraceEvent(s.id, "array-init", None))
            return
        name = lhs[0].text
        if len(lhs) != 1:
            raise InterpreterError(f"unsupported assignment target {s.raw_text!r}")
        if op != "=":
            value = _Expr([], self.env, self.arrays).apply(op[0], self.env[name], value)
        self.store(s.id, name, value)


def run_function(function: SourceFunction, bindings=None, input_id: str = "0") -> TraceRecord:
    """Execute ``function`` once and return its execution trace."""
    events = _Interp(function, bindings).run()
    return TraceRecord(function.function_id, input_id, tuple(events))
