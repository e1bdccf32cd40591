"""Experiment configuration: INI sections plus a small field-expression grammar.

Expressions are parsed with :mod:`ast` and checked against a whitelist:
numbers, coordinates ``x1, x2, x3``, ``+ - * /``, powers (``^`` or ``**``),
and the functions ``abs``, ``min``, ``max`` and ``step`` (``step(t) = 1`` for
``t > 0``, else 0).  Evaluation is vectorized over point arrays.
"""
from __future__ import annotations

import ast
import configparser
import hashlib
import re
from dataclasses import dataclass, field, fields
from math import comb
from pathlib import Path

import numpy as np

from .model import DIRICHLET, NEUMANN
from .solver import PRECONDITIONERS, SolverConfig

SECTIONS = ("mesh", "model", "solver", "diagnostics", "output")


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None,
                 source: str | None = None):
        self.line, self.column, self.source = line, column, source
        where = ""
        if line is not None:
            where = f"line {line}" + (f", column {column}" if column is not None else "")
            where = f"{source}: {where}: " if source else f"{where}: "
        elif source:
            where = f"{source}: "
        super().__init__(where + message)


# -- expressions ---------------------------------------------------------------------

_FUNCS = {
    "abs": (1, np.abs),
    "min": (None, lambda *a: np.minimum.reduce(np.broadcast_arrays(*a))),
    "max": (None, lambda *a: np.maximum.reduce(np.broadcast_arrays(*a))),
    "step": (1, lambda t: np.where(t > 0, 1.0, 0.0)),
}
_COORD = re.compile(r"^x([1-9])$")
_BINOPS = {ast.Add: np.add, ast.Sub: np.subtract, ast.Mult: np.multiply,
           ast.Div: np.divide, ast.Pow: np.power}


def _caret_to_pow(text: str) -> tuple[str, list[int]]:
    """Rewrite ``^`` as ``**`` (Python's ``^`` is xor with the wrong precedence).

    Returns the new text and, per new column, the original 1-based column.
    """
    out, cols = [], []
    for i, ch in enumerate(text, 1):
        if ch == "^":
            out.append("**")
            cols += [i, i]
        else:
            out.append(ch)
            cols.append(i)
    cols.append(len(text) + 1)
    return "".join(out), cols


class Expression:
    """A compiled scalar expression over coordinates."""

    def __init__(self, text: str, dim: int | None = None):
        self.text = text.strip()
        if not self.text:
            raise ConfigError("empty expression", column=1)
        src, self._cols = _caret_to_pow(self.text)
        try:
            tree = ast.parse(src, mode="eval")
        except SyntaxError as exc:
            raise ConfigError(f"syntax error in expression {self.text!r}",
                              column=self._col(exc.offset)) from None
        self.max_coord = 0
        self._check(tree.body)
        if dim is not None and self.max_coord > dim:
            raise ConfigError(f"coordinate x{self.max_coord} used on a {dim}-dimensional mesh")
        self.tree = tree.body

    def _col(self, offset):
        if offset is None:
            return None
        return self._cols[min(max(offset, 1), len(self._cols)) - 1]

    def _fail(self, node, what):
        raise ConfigError(f"{what} in expression {self.text!r}",
                          column=self._col(node.col_offset + 1))

    def _check(self, node):
        if isinstance(node, ast.Constant):
            if isinstance(node.value, bool) or not isinstance(node.value, (int, float)):
                self._fail(node, "only numeric literals are allowed")
        elif isinstance(node, ast.Name):
            m = _COORD.match(node.id)
            if not m:
                self._fail(node, f"unknown name {node.id!r}")
            self.max_coord = max(self.max_coord, int(m.group(1)))
        elif isinstance(node, ast.BinOp):
            if type(node.op) not in _BINOPS:
                self._fail(node, "unsupported operator")
            self._check(node.left)
            self._check(node.right)
        elif isinstance(node, ast.UnaryOp):
            if not isinstance(node.op, (ast.USub, ast.UAdd)):
                self._fail(node, "unsupported unary operator")
            self._check(node.operand)
        elif isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCS or node.keywords:
                self._fail(node, "unknown function")
            arity = _FUNCS[node.func.id][0]
            if (arity is not None and len(node.args) != arity) or not node.args:
                self._fail(node, f"wrong number of arguments to {node.func.id}")
            for a in node.args:
                self._check(a)
        else:
            self._fail(node, "unsupported syntax")

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        with np.errstate(all="ignore"):
            out = np.broadcast_to(self._eval(self.tree, x), (x.shape[0],)).astype(float)
        return out

    def _eval(self, node, x):
        if isinstance(node, ast.Constant):
            return float(node.value)
        if isinstance(node, ast.Name):
            return x[:, int(node.id[1:]) - 1]
        if isinstance(node, ast.BinOp):
            return _BINOPS[type(node.op)](self._eval(node.left, x), self._eval(node.right, x))
        if isinstance(node, ast.UnaryOp):
            v = self._eval(node.operand, x)
            return -v if isinstance(node.op, ast.USub) else v
        return _FUNCS[node.func.id][1](*(self._eval(a, x) for a in node.args))


@dataclass(frozen=True)
class FormSpec:
    """Components of an R^N-valued k-form: ``;`` separates N, ``,`` separates dx^I."""

    text: str
    components: tuple            # N tuples of C(n,k) Expressions

    @classmethod
    def parse(cls, text: str, n: int, k: int) -> "FormSpec":
        C = comb(n, k)
        comps = []
        for part in text.split(";"):
            exprs = [Expression(e, n) for e in part.split(",")]
            if len(exprs) != C:
                raise ConfigError(f"a {k}-form in {n}D needs {C} comma-separated components, "
                                  f"got {len(exprs)}")
            comps.append(tuple(exprs))
        return cls(text.strip(), tuple(comps))

    def __call__(self, x: np.ndarray) -> np.ndarray:
        """(m, C(n,k), N) values at points ``x``."""
        return np.stack([np.stack([e(x) for e in comp], axis=1) for comp in self.components],
                        axis=2)

    @property
    def vec_dim(self) -> int:
        return len(self.components)


# -- config ------------------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    mesh: str
    degree: int = 0
    vec_dim: int = 1
    p: str = "2"
    p_minus: float | None = None
    p_plus: float | None = None
    a: str = "1"
    mu: float = 0.0
    mu_plus: float | None = None
    F: str | None = None
    u0: str | None = None
    boundary: str = DIRICHLET
    solver: SolverConfig = field(default_factory=SolverConfig)
    radii: tuple = (0.25, 0.125, 0.0625, 0.03125)
    centers: str = "auto"
    spacing: float | None = None
    sigmas: tuple | None = None
    c_probe: float = 10.0
    meyers: bool = True
    morrey: bool = True
    campanato: bool = True
    uhlenbeck: str = "auto"
    algebra_seed: int | None = None
    algebra_samples: int = 100_000
    output: str = "out"
    base_dir: Path = field(default=Path("."), compare=False)

    # -- derived helpers --

    def resolve(self, ref: str) -> Path:
        p = Path(ref)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def mesh_is_file(self) -> bool:
        return self.mesh.startswith("file:")

    def file_refs(self) -> list[Path]:
        refs = []
        for v in (self.mesh, self.p, self.a, self.F, self.u0):
            if v is not None and v.startswith("file:"):
                refs.append(self.resolve(v[5:].strip()))
        return refs

    def center_points(self) -> np.ndarray | None:
        if self.centers == "auto":
            return None
        return np.array([[float(t) for t in c.split(",")] for c in self.centers.split(";")])

    def to_text(self) -> str:
        """Canonical INI text; reparses to an equal configuration."""
        def fmt(v):
            if isinstance(v, bool):
                return "true" if v else "false"
            if isinstance(v, float):
                return repr(v)
            if isinstance(v, (tuple, list)):
                return ", ".join(fmt(t) for t in v)
            return str(v)

        def put(lines, key, v):
            if v is not None:
                lines.append(f"{key} = {fmt(v)}")

        out = ["[mesh]", f"source = {self.mesh}", "", "[model]"]
        for key in ("degree", "vec_dim", "p", "p_minus", "p_plus", "a", "mu", "mu_plus",
                    "F", "u0", "boundary"):
            put(out, key, getattr(self, key))
        out += ["", "[solver]"]
        for f_ in fields(SolverConfig):
            put(out, f_.name, getattr(self.solver, f_.name))
        out += ["", "[diagnostics]"]
        for key in ("radii", "centers", "spacing", "sigmas", "c_probe", "meyers", "morrey",
                    "campanato", "uhlenbeck", "algebra_seed", "algebra_samples"):
            put(out, key, getattr(self, key))
        out += ["", "[output]", f"dir = {self.output}", ""]
        return "\n".join(out)

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()


def _line_of(lines: list[str], section: str, key: str) -> int | None:
    cur = None
    for i, ln in enumerate(lines, 1):
        s = ln.strip()
        if s.startswith("[") and s.endswith("]"):
            cur = s[1:-1].strip().lower()
        elif cur == section and re.match(rf"^{re.escape(key)}\s*[=:]", s, re.IGNORECASE):
            return i
    return None


def _value_col(lines, line, key):
    if line is None:
        return None
    m = re.match(rf"^(\s*{re.escape(key)}\s*[=:]\s*)", lines[line - 1], re.IGNORECASE)
    return len(m.group(1)) + 1 if m else None


def parse_config(text: str, source: str | None = None, base_dir: Path | str = ".",
                 dim: int | None = None) -> ExperimentConfig:
    """Parse and validate configuration text.

    ``dim`` (the mesh dimension) enables component-count checks of form
    fields; generator specs supply it automatically.
    """
    lines = text.splitlines()
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",),
                                   comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text, source=source or "<config>")
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError("missing section header", exc.lineno, 1, source) from None
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"duplicate key {exc.option!r} in [{exc.section}]",
                          exc.lineno, 1, source) from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"duplicate section [{exc.section}]", exc.lineno, 1, source) from None
    except configparser.ParsingError as exc:
        lineno = exc.errors[0][0] if exc.errors else None
        raise ConfigError("malformed line", lineno, 1, source) from None

    for sec in cp.sections():
        if sec not in SECTIONS:
            raise ConfigError(f"unknown section [{sec}]", _section_line(lines, sec), 1, source)

    used = set()

    def raw(section, key, default=None, required=False):
        if cp.has_option(section, key):
            used.add((section, key))
            return cp.get(section, key).strip()
        if required:
            raise ConfigError(f"missing required key {key!r} in [{section}]",
                              _section_line(lines, section), None, source)
        return default

    def err(section, key, msg, col=None):
        ln = _line_of(lines, section, key)
        c = _value_col(lines, ln, key)
        if c is not None and col is not None:
            c += col - 1
        return ConfigError(msg, ln, c, source)

    def conv(section, key, fn, default=None, what="value"):
        v = raw(section, key)
        if v is None or v == "":
            return default
        try:
            return fn(v)
        except (ValueError, TypeError):
            raise err(section, key, f"{key} must be a {what}, got {v!r}", 1) from None

    def to_bool(v):
        t = v.lower()
        if t in ("true", "yes", "on", "1"):
            return True
        if t in ("false", "no", "off", "0"):
            return False
        raise ValueError(v)

    def floats(v):
        return tuple(float(t) for t in v.split(",") if t.strip())

    # [mesh]
    source_mesh = raw("mesh", "source")
    file_mesh = raw("mesh", "file")
    if (source_mesh is None) == (file_mesh is None):
        raise ConfigError("[mesh] needs exactly one of 'source' or 'file'",
                          _section_line(lines, "mesh"), None, source)
    mesh = source_mesh if source_mesh is not None else "file:" + file_mesh
    if dim is None and not mesh.startswith("file:"):
        m = re.match(r"^(interval|square|cube|disk):", mesh)
        if not m:
            raise err("mesh", "source", f"unknown mesh generator spec {mesh!r}", 1)
        dim = {"interval": 1, "square": 2, "cube": 3, "disk": 2}[m.group(1)]

    cfg = ExperimentConfig(mesh=mesh, base_dir=Path(base_dir))
    cfg.degree = conv("model", "degree", int, 0, "integer")
    cfg.vec_dim = conv("model", "vec_dim", int, 1, "integer")
    if cfg.vec_dim < 1:
        raise err("model", "vec_dim", "vec_dim must be at least 1")
    if dim is not None and not 0 <= cfg.degree < dim:
        raise err("model", "degree", f"degree must lie in 0..{dim - 1}")
    cfg.p_minus = conv("model", "p_minus", float, None, "number")
    cfg.p_plus = conv("model", "p_plus", float, None, "number")
    cfg.mu = conv("model", "mu", float, 0.0, "number")
    cfg.mu_plus = conv("model", "mu_plus", float, None, "number")
    if cfg.mu < 0:
        raise err("model", "mu", "mu must be nonnegative")
    cfg.boundary = raw("model", "boundary", DIRICHLET).lower()
    if cfg.boundary not in (DIRICHLET, NEUMANN):
        raise err("model", "boundary", f"boundary must be {DIRICHLET!r} or {NEUMANN!r}", 1)

    def scalar_field(key, default):
        v = raw("model", key, default)
        if v.startswith("file:"):
            return v
        try:
            Expression(v, dim)
        except ConfigError as exc:
            raise err("model", key, str(exc), exc.column) from None
        return v

    cfg.p = scalar_field("p", "2")
    cfg.a = scalar_field("a", "1")
    if cfg.p_minus is not None and not cfg.p_minus > 1:
        raise err("model", "p_minus",
                  f"exponent lower bound must satisfy p- > 1 (got {cfg.p_minus!r})")
    if not cfg.p.startswith("file:") and cfg.p_minus is None:
        # constant exponent: check the bound directly
        try:
            c = float(cfg.p)
        except ValueError:
            c = None
        if c is not None and not c > 1:
            raise err("model", "p", f"exponent lower bound must satisfy p- > 1 (got {c!r})")
    if cfg.p_minus is not None and cfg.p_plus is not None and cfg.p_plus < cfg.p_minus:
        raise err("model", "p_plus", "p+ must be at least p-")

    for key, deg in (("F", cfg.degree + 1), ("u0", cfg.degree)):
        v = raw("model", key)
        if v is None or v == "":
            continue
        if not v.startswith("file:") and dim is not None:
            try:
                spec = FormSpec.parse(v, dim, deg)
            except ConfigError as exc:
                raise err("model", key, str(exc), exc.column) from None
            if spec.vec_dim != cfg.vec_dim:
                raise err("model", key, f"{key} has {spec.vec_dim} vector components, "
                          f"vec_dim is {cfg.vec_dim}")
        setattr(cfg, key, v)

    # [solver]
    s = {}
    for f_ in fields(SolverConfig):
        typ = type(f_.default)
        if typ is str:
            v = raw("solver", f_.name)
            if v is not None:
                s[f_.name] = v
        else:
            v = conv("solver", f_.name, typ, None, "integer" if typ is int else "number")
            if v is not None:
                s[f_.name] = v
    if s.get("preconditioner", "p2-laplace") not in PRECONDITIONERS:
        raise err("solver", "preconditioner",
                  f"preconditioner must be one of {', '.join(PRECONDITIONERS)}", 1)
    try:
        cfg.solver = SolverConfig(**s)
    except ValueError as exc:
        raise ConfigError(str(exc), _section_line(lines, "solver"), None, source) from None

    # [diagnostics]
    radii = conv("diagnostics", "radii", floats, None, "comma-separated list of numbers")
    if radii is not None:
        if any(r <= 0 for r in radii):
            raise err("diagnostics", "radii", "radii must be positive")
        cfg.radii = radii
    cfg.centers = raw("diagnostics", "centers", "auto")
    if cfg.centers != "auto":
        try:
            pts = cfg.center_points()
        except ValueError:
            raise err("diagnostics", "centers", "centers must be 'auto' or 'x,y; x,y; ...'", 1) \
                from None
        if dim is not None and pts.shape[1] != dim:
            raise err("diagnostics", "centers", f"centers need {dim} coordinates")
    cfg.spacing = conv("diagnostics", "spacing", float, None, "number")
    sig = conv("diagnostics", "sigmas", floats, None, "comma-separated list of numbers")
    if sig is not None:
        if any(not 0 < t < 1 for t in sig):
            raise err("diagnostics", "sigmas", "sigma grid must lie in (0, 1)")
        cfg.sigmas = sig
    cfg.c_probe = conv("diagnostics", "c_probe", float, 10.0, "number")
    for key in ("meyers", "morrey", "campanato"):
        setattr(cfg, key, conv("diagnostics", key, to_bool, True, "boolean"))
    cfg.uhlenbeck = raw("diagnostics", "uhlenbeck", "auto").lower()
    if cfg.uhlenbeck not in ("auto", "true", "false"):
        raise err("diagnostics", "uhlenbeck", "uhlenbeck must be auto, true or false", 1)
    cfg.algebra_seed = conv("diagnostics", "algebra_seed", int, None, "integer")
    cfg.algebra_samples = conv("diagnostics", "algebra_samples", int, 100_000, "integer")

    # [output]
    cfg.output = raw("output", "dir", "out")

    for sec in cp.sections():
        for key in cp.options(sec):
            if (sec, key) not in used:
                ln = _line_of(lines, sec, key)
                raise ConfigError(f"unknown key {key!r} in [{sec}]", ln, 1, source)
    return cfg


def _section_line(lines, section):
    for i, ln in enumerate(lines, 1):
        if ln.strip().lower() == f"[{section}]":
            return i
    return None


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    cfg = parse_config(path.read_text(), source=str(path), base_dir=path.parent)
    for ref in cfg.file_refs():
        if not ref.is_file():
            raise FileNotFoundError(f"{path}: referenced file not found: {ref}")
    return cfg
