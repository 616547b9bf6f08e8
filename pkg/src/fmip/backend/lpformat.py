"""CPLEX LP text export/import for a documented subset.

Supported sections: ``Minimize``/``Maximize``, ``Subject To``, ``Bounds``,
``Generals``, ``Binaries``, ``End``.  Variables are named ``x<i>`` and rows
``c<j>``.  Numbers are written with ``repr`` so a write/read cycle is
bit-exact.  Metadata the LP format cannot hold (instance name, integer bound)
travels in ``\\ key: value`` comment lines.
"""

from __future__ import annotations

import math
import re

import numpy as np

from fmip.milp import InstanceError, MilpInstance


class LPFormatError(ValueError):
    pass


def var_name(i: int) -> str:
    return f"x{i}"


def _num(v: float) -> str:
    return repr(float(v))


def _term(coef: float, name: str, first: bool) -> str:
    sign = "-" if math.copysign(1.0, coef) < 0 else "+"
    mag = _num(abs(coef))
    if first and sign == "+":
        return f"{mag} {name}"
    return f"{sign} {mag} {name}"


def _linear(coefs, names) -> str:
    parts = [_term(a, nm, k == 0) for k, (a, nm) in enumerate(zip(coefs, names))]
    return " ".join(parts)


def write_lp(inst: MilpInstance) -> str:
    n, q = inst.num_vars, inst.num_int
    names = [var_name(i) for i in range(n)]
    out = [f"\\ name: {inst.name}", f"\\ int_bound: {inst.int_bound}", "Minimize"]
    out.append(" obj: " + (_linear(inst.obj, names) if n else "0"))
    out.append("Subject To")
    A = inst.A.tocsr()
    for j in range(inst.num_cons):
        lo, hi = A.indptr[j], A.indptr[j + 1]
        cols = A.indices[lo:hi]
        vals = A.data[lo:hi]
        order = np.argsort(cols)
        cols, vals = cols[order], vals[order]
        body = _linear(vals, [names[c] for c in cols]) if len(cols) else f"0 {names[0]}" if n else "0"
        out.append(f" c{j}: {body} <= {_num(inst.rhs[j])}")
    binaries = [i for i in range(q) if inst.lower[i] == 0 and inst.upper[i] == 1]
    generals = [i for i in range(q) if i not in set(binaries)]
    out.append("Bounds")
    for i in range(n):
        if i in set(binaries):
            continue
        lb, ub = inst.lower[i], inst.upper[i]
        if lb == -np.inf and ub == np.inf:
            out.append(f" {names[i]} free")
        else:
            lo_s = "-inf" if lb == -np.inf else _num(lb)
            hi_s = "+inf" if ub == np.inf else _num(ub)
            out.append(f" {lo_s} <= {names[i]} <= {hi_s}")
    if generals:
        out.append("Generals")
        out.append(" " + " ".join(names[i] for i in generals))
    if binaries:
        out.append("Binaries")
        out.append(" " + " ".join(names[i] for i in binaries))
    out.append("End")
    return "\n".join(out) + "\n"


_TERM = re.compile(r"([+-]?)\s*([0-9.eE+\-]*)\s*([A-Za-z_][A-Za-z0-9_.]*)")
_SECTIONS = {
    "minimize": "obj", "minimum": "obj", "min": "obj",
    "maximize": "maxobj", "maximum": "maxobj", "max": "maxobj",
    "subject to": "rows", "such that": "rows", "st": "rows", "s.t.": "rows",
    "bounds": "bounds", "bound": "bounds",
    "generals": "generals", "general": "generals", "gen": "generals",
    "integers": "generals",
    "binaries": "binaries", "binary": "binaries", "bin": "binaries",
    "end": "end",
}


def _parse_expr(text: str) -> dict[str, float]:
    text = text.strip()
    coefs: dict[str, float] = {}
    pos = 0
    while pos < len(text):
        m = _TERM.match(text, pos)
        if not m or m.end() == pos:
            raise LPFormatError(f"cannot parse expression near {text[pos:]!r}")
        sign, num, name = m.groups()
        coef = float(num) if num else 1.0
        if sign == "-":
            coef = -coef
        if name in coefs:
            raise LPFormatError(f"variable {name} repeated in expression")
        coefs[name] = coef
        pos = m.end()
        while pos < len(text) and text[pos].isspace():
            pos += 1
    return coefs


def _value(tok: str) -> float:
    t = tok.strip().lower()
    if t in ("inf", "+inf", "infinity", "+infinity"):
        return math.inf
    if t in ("-inf", "-infinity"):
        return -math.inf
    return float(tok)


def read_lp(text: str) -> MilpInstance:
    """Inverse of :func:`write_lp`.

    ``>=`` rows are negated and ``=`` rows become two ``<=`` rows.  Integer
    variables (Generals/Binaries) are moved to the front, otherwise the
    variable order is the order of first appearance.
    """
    meta: dict[str, str] = {}
    section = None
    obj_lines: list[str] = []
    row_lines: list[str] = []
    bound_lines: list[str] = []
    generals: list[str] = []
    binaries: list[str] = []
    sense = 1.0
    for raw in text.splitlines():
        line = raw.strip()
        if line.startswith("\\"):
            m = re.match(r"\\\s*(\w+)\s*:\s*(.*)$", line)
            if m:
                meta[m.group(1)] = m.group(2).strip()
            continue
        if not line:
            continue
        key = line.lower()
        if key in _SECTIONS:
            section = _SECTIONS[key]
            if section == "maxobj":
                sense, section = -1.0, "obj"
            if section == "end":
                break
            continue
        if section == "obj":
            obj_lines.append(line)
        elif section == "rows":
            row_lines.append(line)
        elif section == "bounds":
            bound_lines.append(line)
        elif section == "generals":
            generals.extend(line.split())
        elif section == "binaries":
            binaries.extend(line.split())
        else:
            raise LPFormatError(f"content outside any section: {line!r}")

    order: list[str] = []
    seen: set[str] = set()

    def note(name):
        if name not in seen:
            seen.add(name)
            order.append(name)

    obj_text = " ".join(obj_lines)
    if ":" in obj_text:
        obj_text = obj_text.split(":", 1)[1]
    obj = _parse_expr(obj_text) if obj_text.strip() not in ("", "0") else {}
    for nm in obj:
        note(nm)

    rows: list[tuple[dict[str, float], float]] = []
    merged: list[str] = []
    for line in row_lines:
        if merged and not re.search(r"(<=|>=|=<|=>|=)", merged[-1]):
            merged[-1] += " " + line
        else:
            merged.append(line)
    for line in merged:
        body = line.split(":", 1)[1] if re.match(r"^\s*[A-Za-z_][\w.]*\s*:", line) else line
        m = re.match(r"^(.*?)(<=|>=|=<|=>|=)(.*)$", body)
        if not m:
            raise LPFormatError(f"row without relation: {line!r}")
        lhs, rel, rhs = m.groups()
        expr = {} if lhs.strip() in ("", "0") else _parse_expr(lhs)
        for nm in expr:
            note(nm)
        b = _value(rhs)
        if rel in ("<=", "=<"):
            rows.append((expr, b))
        elif rel in (">=", "=>"):
            rows.append(({k: -v for k, v in expr.items()}, -b))
        else:
            rows.append((expr, b))
            rows.append(({k: -v for k, v in expr.items()}, -b))

    lower: dict[str, float] = {}
    upper: dict[str, float] = {}
    for line in bound_lines:
        toks = line.split()
        if len(toks) == 2 and toks[1].lower() == "free":
            note(toks[0])
            lower[toks[0]], upper[toks[0]] = -math.inf, math.inf
            continue
        m = re.match(r"^(\S+)\s*<=\s*(\S+)\s*<=\s*(\S+)$", line)
        if m:
            note(m.group(2))
            lower[m.group(2)] = _value(m.group(1))
            upper[m.group(2)] = _value(m.group(3))
            continue
        m = re.match(r"^(\S+)\s*(<=|>=|=)\s*(\S+)$", line)
        if not m:
            raise LPFormatError(f"cannot parse bound {line!r}")
        nm, rel, val = m.groups()
        note(nm)
        if rel == "<=":
            upper[nm] = _value(val)
        elif rel == ">=":
            lower[nm] = _value(val)
        else:
            lower[nm] = upper[nm] = _value(val)
    for nm in generals + binaries:
        note(nm)

    ints = set(generals) | set(binaries)
    names = [nm for nm in order if nm in ints] + [nm for nm in order if nm not in ints]
    index = {nm: i for i, nm in enumerate(names)}
    n = len(names)
    lb = np.zeros(n)
    ub = np.full(n, math.inf)
    for nm, i in index.items():
        if nm in binaries:
            lb[i], ub[i] = 0.0, 1.0
        if nm in lower:
            lb[i] = lower[nm]
        if nm in upper:
            ub[i] = upper[nm]
    q = len(ints)
    K = int(meta["int_bound"]) if "int_bound" in meta else int(max([1.0] + [ub[i] for i in range(q)]))
    r, c, v = [], [], []
    for j, (expr, _) in enumerate(rows):
        for nm, a in expr.items():
            if a != 0:
                r.append(j)
                c.append(index[nm])
                v.append(a)
    w = np.zeros(n)
    for nm, a in obj.items():
        w[index[nm]] = sense * a
    try:
        return MilpInstance(name=meta.get("name", "lp"), num_vars=n, num_cons=len(rows),
                            num_int=q, int_bound=K, obj=w, rows=r, cols=c, vals=v,
                            rhs=[b for _, b in rows], lower=lb, upper=ub)
    except InstanceError as exc:
        raise LPFormatError(str(exc)) from exc


def parse_solution(text: str, n: int) -> np.ndarray:
    """Read ``name value`` lines for variables ``x0..x{n-1}``.

    ``#`` starts a comment.  Unknown names and missing variables are errors.
    """
    values = np.full(n, np.nan)
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        toks = line.split()
        if len(toks) != 2:
            raise LPFormatError(f"malformed solution line {raw!r}")
        name, val = toks
        m = re.fullmatch(r"x(\d+)", name)
        if not m or int(m.group(1)) >= n:
            raise LPFormatError(f"unknown variable {name!r} in solution")
        values[int(m.group(1))] = float(val)
    if np.any(np.isnan(values)):
        missing = int(np.flatnonzero(np.isnan(values))[0])
        raise LPFormatError(f"solution lacks a value for {var_name(missing)}")
    return values


def write_solution(values) -> str:
    return "".join(f"{var_name(i)} {_num(v)}\n" for i, v in enumerate(values))
