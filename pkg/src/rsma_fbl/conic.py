"""Real conic programs and a certified interior-point solve.

A program is ``minimize c @ x  s.t.  A @ x + b in K`` where ``K`` is a product
of cones, each occupying a contiguous run of rows:

* ``zero``: s == 0
* ``nonneg``: s >= 0
* ``soc``: (u, w) with ||w|| <= u
* ``rsoc``: (u, v, w) with 2 u v >= ||w||^2, u, v >= 0
* ``exp``: (x, y, z) with y * exp(x / y) <= z, y > 0 (and its closure)

Solving is delegated to Clarabel; rotated cones are mapped to ordinary
second-order cones by an orthogonal row transform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import clarabel
import numpy as np
import scipy.sparse as sp

CONE_KINDS = ("zero", "nonneg", "soc", "rsoc", "exp")
SOLVER_TOL = 1e-8


@dataclass(frozen=True)
class Cone:
    kind: str
    dim: int

    def __post_init__(self):
        if self.kind not in CONE_KINDS:
            raise ValueError(f"unknown cone {self.kind!r}")
        if self.kind == "exp" and self.dim != 3:
            raise ValueError("exponential cone has dimension 3")
        if self.kind == "rsoc" and self.dim < 2:
            raise ValueError("rotated cone needs dimension >= 2")


@dataclass(frozen=True)
class ConicProgram:
    objective: np.ndarray
    A: sp.csc_matrix
    b: np.ndarray
    cones: tuple[Cone, ...]
    variables: dict[str, slice] = field(default_factory=dict)

    def __post_init__(self):
        m = sum(c.dim for c in self.cones)
        if self.A.shape != (m, self.objective.size) or self.b.size != m:
            raise ValueError(f"cone rows {m} vs A {self.A.shape}, b {self.b.size}")
        if not (np.all(np.isfinite(self.A.data)) and np.all(np.isfinite(self.b)) and np.all(np.isfinite(self.objective))):
            raise ValueError("program has non-finite entries")

    @property
    def n_vars(self) -> int:
        return self.objective.size

    def segments(self):
        start = 0
        for c in self.cones:
            yield c, slice(start, start + c.dim)
            start += c.dim


@dataclass(frozen=True)
class ConicSolution:
    status: str  # optimal | infeasible | unbounded | max-iters | numerical
    x: np.ndarray
    y: np.ndarray
    objective: float
    primal_residual: float
    dual_residual: float
    gap: float
    iterations: int = 0


class ProgramBuilder:
    """Collects variables and cone rows into a ConicProgram."""

    def __init__(self):
        self._n = 0
        self.variables: dict[str, slice] = {}
        self._rows: list[tuple[np.ndarray, np.ndarray, float]] = []
        self._cones: list[Cone] = []
        self._obj: dict[int, float] = {}

    def variable(self, name: str, size: int) -> np.ndarray:
        s = slice(self._n, self._n + size)
        self.variables[name] = s
        self._n += size
        return np.arange(s.start, s.stop)

    def minimize(self, idx: int, coef: float = 1.0) -> None:
        self._obj[idx] = self._obj.get(idx, 0.0) + coef

    def cone(self, kind: str, rows) -> None:
        """Append a cone over ``rows``; each row is ``(indices, coefs, const)``."""
        rows = list(rows)
        for idx, coef, const in rows:
            self._rows.append((np.atleast_1d(np.asarray(idx, dtype=int)), np.atleast_1d(np.asarray(coef, dtype=float)), float(const)))
        self._cones.append(Cone(kind, len(rows)))

    def build(self) -> ConicProgram:
        ri, ci, vals = [], [], []
        b = np.empty(len(self._rows))
        for r, (idx, coef, const) in enumerate(self._rows):
            ri.append(np.full(idx.size, r))
            ci.append(idx)
            vals.append(coef)
            b[r] = const
        A = sp.csc_matrix(
            (np.concatenate(vals) if vals else [], (np.concatenate(ri) if ri else [], np.concatenate(ci) if ci else [])),
            shape=(len(self._rows), self._n),
        )
        A.sum_duplicates()
        c = np.zeros(self._n)
        for i, v in self._obj.items():
            c[i] = v
        return ConicProgram(c, A, b, tuple(self._cones), dict(self.variables))


def row(*terms, const: float = 0.0):
    """Affine row from ``(index, coef)`` pairs (either may be arrays)."""
    idx = [np.atleast_1d(i) for i, _ in terms]
    coef = [np.broadcast_to(np.atleast_1d(np.asarray(c, dtype=float)), np.atleast_1d(i).shape) for i, c in terms]
    if not idx:
        return (np.zeros(0, int), np.zeros(0), const)
    return (np.concatenate(idx), np.concatenate(coef), const)


def _rsoc_transform(program: ConicProgram) -> sp.csc_matrix:
    """Symmetric orthogonal row map taking each rotated cone to a plain SOC."""
    m = program.b.size
    diag = np.ones(m)
    ri, ci, vals = [], [], []
    r = 1.0 / math.sqrt(2.0)
    for cone, s in program.segments():
        if cone.kind == "rsoc":
            u, v = s.start, s.start + 1
            diag[u], diag[v] = r, -r
            ri += [u, v]
            ci += [v, u]
            vals += [r, r]
    T = sp.diags(diag, format="coo")
    T = sp.coo_matrix(
        (np.concatenate([T.data, vals]), (np.concatenate([T.row, ri]), np.concatenate([T.col, ci]))), shape=(m, m)
    )
    return T.tocsc()


_STATUS = {
    "Solved": "optimal",
    "PrimalInfeasible": "infeasible",
    "DualInfeasible": "unbounded",
    "AlmostPrimalInfeasible": "infeasible",
    "AlmostDualInfeasible": "unbounded",
    "MaxIterations": "max-iters",
    "MaxTime": "max-iters",
}


def solve_conic(program: ConicProgram, tol: float = SOLVER_TOL) -> ConicSolution:
    """Solve with Clarabel; never raises on numerical trouble."""
    has_rsoc = any(c.kind == "rsoc" for c in program.cones)
    A, b = program.A, program.b
    if has_rsoc:
        T = _rsoc_transform(program)
        A, b = (T @ A).tocsc(), T @ b
    cones = []
    for c in program.cones:
        if c.kind == "zero":
            cones.append(clarabel.ZeroConeT(c.dim))
        elif c.kind == "nonneg":
            cones.append(clarabel.NonnegativeConeT(c.dim))
        elif c.kind in ("soc", "rsoc"):
            cones.append(clarabel.SecondOrderConeT(c.dim))
        else:
            cones.append(clarabel.ExponentialConeT())
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.max_threads = 1
    settings.tol_gap_abs = tol
    settings.tol_gap_rel = tol
    settings.tol_feas = tol
    settings.max_iter = 400
    n = program.n_vars
    try:
        # Clarabel form: A' x + s = b', s in K
        res = clarabel.DefaultSolver(sp.csc_matrix((n, n)), program.objective, (-A).tocsc(), b, cones, settings).solve()
    except Exception:  # noqa: BLE001 - any backend failure is reported as a status
        nan = np.full(n, np.nan)
        return ConicSolution("numerical", nan, np.full(b.size, np.nan), math.nan, math.inf, math.inf, math.inf)
    status = _STATUS.get(str(res.status), "numerical")
    x = np.asarray(res.x, dtype=float)
    y = np.asarray(res.z, dtype=float)
    if has_rsoc:
        y = T @ y
    obj = float(program.objective @ x)
    gap = abs(res.obj_val - res.obj_val_dual) / max(1.0, abs(res.obj_val))
    return ConicSolution(status, x, y, obj, float(res.r_prim), float(res.r_dual), float(gap), int(res.iterations))


@dataclass(frozen=True)
class ResidualReport:
    worst: float
    per_cone: tuple[tuple[int, str, float], ...]
    tol: float

    @property
    def passed(self) -> bool:
        return self.worst <= self.tol

    def violations(self):
        return [(i, k, v) for i, k, v in self.per_cone if v > self.tol]


def _cone_violation(kind: str, s: np.ndarray) -> float:
    if kind == "zero":
        return float(np.max(np.abs(s)))
    if kind == "nonneg":
        return float(max(0.0, -np.min(s)))
    if kind == "soc":
        return float(max(0.0, np.linalg.norm(s[1:]) - s[0]))
    if kind == "rsoc":
        u, v, w = s[0], s[1], s[2:]
        r = 1.0 / math.sqrt(2.0)
        return float(max(0.0, math.hypot((u - v) * r, np.linalg.norm(w)) - (u + v) * r))
    x, y, z = s
    if y > 0 and z > 0:
        # y exp(x/y) <= z  <=>  x - y log(z/y) <= 0
        return float(max(0.0, x - y * math.log(z / y)))
    # closure: y == 0, x <= 0, z >= 0
    return float(max(0.0, -y, x, -z) if y <= 0 else max(0.0, -z, y * math.exp(min(x / y, 700.0)) - z))


def check_solution(program: ConicProgram, x: np.ndarray, tol: float = 1e-6) -> ResidualReport:
    """Worst absolute cone violation of ``A x + b`` per segment."""
    x = np.asarray(x, dtype=float)
    if x.shape != (program.n_vars,):
        raise ValueError(f"x has shape {x.shape}, program has {program.n_vars} variables")
    s = program.A @ x + program.b
    per = tuple((i, c.kind, _cone_violation(c.kind, s[sl])) for i, (c, sl) in enumerate(program.segments()))
    worst = max((v for _, _, v in per), default=0.0)
    return ResidualReport(worst, per, tol)


def dump_program(program: ConicProgram, path: str | Path) -> None:
    """Sparse text dump: ``n m`` header, then ``var``, ``c``, ``cone``, ``b``, ``A`` lines."""
    A = program.A.tocoo()
    lines = [f"{program.n_vars} {program.b.size}"]
    for name, s in program.variables.items():
        lines.append(f"var {name} {s.start} {s.stop}")
    lines += [f"c {i} {float(v)!r}" for i, v in enumerate(program.objective) if v != 0.0]
    lines += [f"cone {c.kind} {c.dim}" for c in program.cones]
    lines += [f"b {i} {float(v)!r}" for i, v in enumerate(program.b) if v != 0.0]
    lines += [f"A {i} {j} {float(v)!r}" for i, j, v in zip(A.row, A.col, A.data)]
    Path(path).write_text("\n".join(lines) + "\n")


def load_program(path: str | Path) -> ConicProgram:
    lines = Path(path).read_text().splitlines()
    n, m = map(int, lines[0].split())
    c, b = np.zeros(n), np.zeros(m)
    cones, variables = [], {}
    ri, ci, vals = [], [], []
    for line in lines[1:]:
        tag, *rest = line.split()
        if tag == "var":
            variables[rest[0]] = slice(int(rest[1]), int(rest[2]))
        elif tag == "c":
            c[int(rest[0])] = float(rest[1])
        elif tag == "cone":
            cones.append(Cone(rest[0], int(rest[1])))
        elif tag == "b":
            b[int(rest[0])] = float(rest[1])
        elif tag == "A":
            ri.append(int(rest[0]))
            ci.append(int(rest[1]))
            vals.append(float(rest[2]))
    A = sp.csc_matrix((vals, (ri, ci)), shape=(m, n))
    return ConicProgram(c, A, b, tuple(cones), variables)
