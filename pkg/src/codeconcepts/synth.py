"""Template-based synthetic corpora.

Vulnerability functions come from four defect families (null-pointer
dereference, buffer overflow, memory leak, use-after-free). Every vulnerable
template plants exactly one defect pattern; every safe template contains the
same risky operations with the guard that neutralises them. End labels are a
deterministic function of the statement concept sequence, which
:func:`scan_defects` recomputes independently of the templates.
"""

from __future__ import annotations

import zlib

import numpy as np

from .codemodel import segment
from .concepts import VD_VULNERABLE, ConceptSet, concept_set, extract_function
from .dataset import DatasetRecord
from .errors import InvalidRate
from .interp import run_function
from .values import BP_CONCEPTS, build_branch_records, statement_value_labels

FAMILIES = ("null-deref", "buffer-overflow", "memory-leak", "use-after-free")

POINTER_NAMES = ("p", "ptr", "node", "data", "item", "entry", "obj", "rec", "elem", "cur", "head", "res")
INT_NAMES = ("n", "len", "size", "count", "idx", "total", "offset", "pos", "width", "limit", "num", "val")
BUFFER_NAMES = ("buf", "dst", "src", "str", "line", "name", "text", "path")
FIELDS = ("len", "size", "next", "count", "flags", "value", "refcnt", "state", "id")
API_NAMES = (
    "log_msg", "update_stats", "compute_hash", "process_item", "validate_input",
    "lock_mutex", "unlock_mutex", "notify", "emit_event", "parse_header", "reset_timer",
)
LOOKUP_NAMES = ("lookup", "find_entry", "get_node", "table_get")
FUNC_VERBS = ("handle", "process", "load", "parse", "build", "update", "read", "copy", "init", "scan")
FUNC_NOUNS = ("request", "packet", "record", "buffer", "config", "frame", "message", "entry", "table")
# names that only ever occur in one class: spurious cues for the robustness study
CLASS_NAMES = {
    1: ("tmp", "raw", "blob", "chunk", "scratch", "work", "aux", "spare", "cache", "frag", "slab", "pool"),
    0: ("safe_len", "checked", "guard", "clean", "valid", "sane", "bound", "trusted", "limit2", "verified", "fixed", "sound"),
}
CLASS_APIS = {
    1: ("fast_copy", "raw_write", "quick_parse", "legacy_read"),
    0: ("audit_log", "verify_sig", "secure_zero", "check_perm"),
}


class _Gen:
    """Draws names and filler statements for one function."""

    def __init__(self, rng, label):
        self.rng = rng
        self.label = label
        self.used = set()

    def pick(self, pool):
        return pool[int(self.rng.integers(len(pool)))]

    def name(self, pool):
        # a quarter of variables carry a class-specific name
        for _ in range(20):
            if self.rng.random() < 0.25:
                cand = self.pick(CLASS_NAMES[self.label])
            else:
                cand = self.pick(pool)
            if cand not in self.used:
                self.used.add(cand)
                return cand
        cand = f"{self.pick(pool)}{len(self.used)}"
        self.used.add(cand)
        return cand

    def api(self):
        if self.rng.random() < 0.25:
            return self.pick(CLASS_APIS[self.label])
        return self.pick(API_NAMES)

    def filler(self, ints):
        """One benign statement group (list of source lines)."""
        a = self.pick(ints)
        b = self.pick(ints)
        k = int(self.rng.integers(9))
        c = int(self.rng.integers(1, 64))
        if k == 0:
            return [f"{a} = {a} + {b};"]
        if k == 1:
            return [f"{a}++;"]
        if k == 2:
            return [f"{a} = {c};"]
        if k == 3:
            return [f'{self.api()}({a}, "{self.pick(FUNC_NOUNS)}");']
        if k == 4:
            return [f"{a} = {self.api()}({b}, {c});"]
        if k == 5:
            return [f"for ({a} = 0; {a} < {b}; {a}++) {{", f"    {self.api()}({a});", "}"]
        if k == 6:
            return [f"while ({a} > {c}) {{", f"    {a} = {a} / 2;", "}"]
        if k == 7:
            return [
                f"switch ({a}) {{",
                f"case {c}:",
                f"    {b} = {b} * 2;",
                "    break;",
                "default:",
                "    break;",
                "}",
            ]
        return [f"if ({a} != {c}) {{", f"    {self.api()}({a});", "}"]

    def fillers(self, ints, lo=1, hi=4):
        out = []
        for _ in range(int(self.rng.integers(lo, hi + 1))):
            out.extend(self.filler(ints))
        return out


def _alloc_line(g, p, n):
    style = int(g.rng.integers(3))
    if style == 0:
        return f"{p} = malloc({n} + 1);"
    if style == 1:
        return f"{p} = (char *)malloc({n});"
    return f"{p} = calloc({n}, 4);"


def _use_line(g, p, n):
    if g.rng.random() < 0.5:
        return f"{p}->{g.pick(FIELDS)} = {n};"
    return f"{n} = {p}->{g.pick(FIELDS)};"


def _template(g, family, vulnerable):
    """Return (params, body lines) for one function of ``family``."""
    n = g.name(INT_NAMES)
    m = g.name(INT_NAMES)
    ints = [n, m]
    params = [f"int {n}"]
    pre = [f"int {m} = 0;"]
    core = []
    if family in ("memory-leak", "use-after-free"):
        p = g.name(POINTER_NAMES)
        pre.insert(0, f"struct obj *{p};")
        core.append(_alloc_line(g, p, n))
        if g.rng.random() < 0.5:
            core += [f"if ({p} == NULL) {{", "    return -1;", "}"]
        core.append(_use_line(g, p, n))
        core += g.fillers(ints, 0, 2)
        if family == "memory-leak":
            if not vulnerable:
                core.append(f"free({p});")
                if g.rng.random() < 0.5:
                    core.append(f"{p} = NULL;")
        else:
            core.append(f"free({p});")
            if vulnerable:
                core += g.fillers(ints, 0, 1)
                core.append(_use_line(g, p, m))
            elif g.rng.random() < 0.5:
                core.append(f"{p} = NULL;")
    elif family == "null-deref":
        p = g.name(POINTER_NAMES)
        key = g.name(INT_NAMES)
        params.append(f"int {key}")
        pre.insert(0, f"struct obj *{p};")
        core.append(f"{p} = NULL;")
        core += [f"if ({key} > {int(g.rng.integers(1, 9))}) {{", f"    {p} = {g.pick(LOOKUP_NAMES)}({key});", "}"]
        core += g.fillers(ints, 0, 2)
        if vulnerable:
            core.append(_use_line(g, p, n))
        elif g.rng.random() < 0.5:
            core += [f"if ({p} == NULL) {{", "    return -1;", "}", _use_line(g, p, n)]
        else:
            core += [f"if ({p} != NULL) {{", "    " + _use_line(g, p, n), "}"]
    elif family == "buffer-overflow":
        buf = g.name(BUFFER_NAMES)
        params.insert(0, f"char *{buf}")
        core += g.fillers(ints, 0, 1)
        style = int(g.rng.integers(2))
        access = f"{buf}[{n}] = {m};" if style == 0 else f"{m} = {buf}[{n}];"
        if vulnerable:
            core.append(access)
        else:
            guard = f"strlen({buf})" if g.rng.random() < 0.5 else f"sizeof({buf})"
            op = "<" if g.rng.random() < 0.5 else ">="
            if op == "<":
                core += [f"if ({n} < {guard}) {{", "    " + access, "}"]
            else:
                core += [f"if ({n} >= {guard}) {{", "    return -1;", "}", access]
    else:
        raise ValueError(family)
    body = pre + g.fillers(ints, 0, 2) + core + g.fillers(ints, 0, 2) + ["return 0;"]
    return params, body


def _plain(g):
    n = g.name(INT_NAMES)
    m = g.name(INT_NAMES)
    k = g.name(INT_NAMES)
    ints = [n, m, k]
    body = [f"int {m} = 0;", f"int {k} = 1;"] + g.fillers(ints, 2, 6) + [f"return {m};"]
    return [f"int {n}"], body


def _render(name, params, body):
    lines = [f"int {name}({', '.join(params)})", "{"]
    depth = 1
    for line in body:
        stripped = line.strip()
        if stripped.startswith("}"):
            depth -= 1
        indent = "    " * depth
        if stripped.startswith(("case ", "default:")):
            indent = "    " * max(depth - 1, 0) + "  "
        lines.append(indent + stripped)
        if stripped.endswith("{"):
            depth += 1
    lines.append("}")
    return "\n".join(lines) + "\n"


def scan_defects(rows, cset: ConceptSet | None = None) -> set[str]:
    """Detect planted defect patterns in an ordered statement concept sequence.

    ``rows`` holds one vulnerable-concept bit vector per statement. Rules:
    memory leak = an allocation never followed by a free; use-after-free = a
    dereference after a free; null dereference = a null assignment followed by
    a dereference with no null check in between; buffer overflow = a buffer
    access with no earlier bounds check.
    """
    cset = cset or concept_set(VD_VULNERABLE)
    col = {name: k for k, name in enumerate(cset.concept_names)}
    rows = [tuple(r) for r in rows]

    def has(r, name):
        return name in col and r[col[name]] == 1

    found = set()
    for i, r in enumerate(rows):
        if has(r, "memory-allocation") and not any(has(x, "memory-free") for x in rows[i + 1:]):
            found.add("memory-leak")
        if has(r, "memory-free") and any(has(x, "pointer-dereference") for x in rows[i + 1:]):
            found.add("use-after-free")
        if has(r, "null-assignment"):
            for x in rows[i + 1:]:
                if has(x, "null-check"):
                    break
                if has(x, "pointer-dereference"):
                    found.add("null-deref")
                    break
        if has(r, "buffer-access") and not any(has(x, "bounds-check") for x in rows[: i + 1]):
            found.add("buffer-overflow")
    return found


def synthesize_corpus(n_functions: int, vuln_rate: float, seed: int, prefix: str = "synth") -> list[DatasetRecord]:
    """Generate ``n_functions`` labelled VD records with exactly round(n*rate) positives."""
    if n_functions < 1:
        raise ValueError("n_functions must be >= 1")
    if not 0 < vuln_rate < 1:
        raise InvalidRate(f"vuln_rate must lie in (0, 1), got {vuln_rate}")
    rng = np.random.default_rng([seed, zlib.crc32(prefix.encode())])
    n_pos = int(round(n_functions * vuln_rate))
    labels = np.array([1] * n_pos + [0] * (n_functions - n_pos))
    rng.shuffle(labels)
    cset = concept_set(VD_VULNERABLE)
    records = []
    for i, label in enumerate(labels.tolist()):
        g = _Gen(rng, label)
        if label == 1:
            family = FAMILIES[int(rng.integers(len(FAMILIES)))]
            params, body = _template(g, family, True)
        elif rng.random() < 0.5:
            family = FAMILIES[int(rng.integers(len(FAMILIES)))]
            params, body = _template(g, family, False)
        else:
            family = None
            params, body = _plain(g)
        fname = f"{g.pick(FUNC_VERBS)}_{g.pick(FUNC_NOUNS)}"
        text = _render(fname, params, body)
        fid = f"{prefix}-{seed}-{i:05d}"
        fn = segment(text, fid)
        concepts = tuple(extract_function(fn, cset))
        found = scan_defects([c.bits for c in concepts], cset)
        planted = {family} if label == 1 else set()
        if found != planted:
            raise AssertionError(f"template bug: planted {planted}, checker found {found}\n{text}")
        records.append(
            DatasetRecord(
                record_id=fid,
                task="vd",
                function_id=fid,
                source_text=text,
                concepts=concepts,
                end_label=label,
            )
        )
    return records


def _bp_program(rng):
    """A straight-line program over two integer inputs and one character input."""
    lines = []
    a, b = "a", "b"
    k1 = int(rng.integers(2, 40))
    k2 = int(rng.integers(-500, 500))
    lines.append(f"int x = {a} * {k1} + {b};")
    lines.append(f"int y = {b} - {k2};")
    thr = int(rng.choice([0, 10, 100, 1000, -100]))
    lines += [f"if (x > {thr}) {{", "    y = y * 2;", "} else {", "    x = 0 - x;", "}"]
    lines += ["int z = x + y;", "if (z < 0) {", f"    z = {int(rng.integers(1, 9))};", "}"]
    lines += ["char *q = NULL;", "if (c == 'M') {", "    q = &z;", "}"]
    lines += ["int arr[4];", "arr[0] = z;", "if (q != NULL) {", "    arr[1] = 1;", "}"]
    return lines


def synthesize_bp_corpus(n_programs: int, inputs_per_program: int, seed: int, prefix: str = "bp") -> list[DatasetRecord]:
    """Branch-prediction records: one per (branch, input), inputs bound as leading declarations."""
    rng = np.random.default_rng([seed, zlib.crc32(prefix.encode())])
    records = []
    for i in range(n_programs):
        prog = _bp_program(rng)
        fid = f"{prefix}-{seed}-{i:05d}"
        for j in range(inputs_per_program):
            av = int(rng.integers(-50, 50))
            bv = int(rng.choice([int(rng.integers(-2000, 2000)), int(rng.integers(-20, 20))]))
            cv = "M" if rng.random() < 0.5 else rng.choice(list("a=Z7"))
            bind = [f"int a = {av};", f"int b = {bv};", f"char c = '{cv}';"]
            text = _render(f"problem_{i}", ["void"], bind + prog)
            fn = segment(text, fid)
            trace = run_function(fn, input_id=str(j))
            values = tuple(statement_value_labels(trace, fn))
            for br in build_branch_records([trace], fn):
                records.append(
                    DatasetRecord(
                        record_id=f"{fid}/{j}/{br.branch_statement_id}",
                        task="bp",
                        function_id=fid,
                        source_text=text,
                        concepts=values,
                        end_label=br.taken,
                        branch_statement_id=br.branch_statement_id,
                    )
                )
    return records


__all__ = ["FAMILIES", "scan_defects", "synthesize_corpus", "synthesize_bp_corpus", "BP_CONCEPTS"]
