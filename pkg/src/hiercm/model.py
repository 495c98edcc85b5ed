"""Declaration and validation of leveled causal generative models.

A model is a stack of variable levels: level 0 holds the discrete concept
indicators, levels 1..L hold continuous scalar latents, and level L+1 is
the multi-dimensional observation. Edges only connect consecutive levels.
Each level-1 latent is paired with the discrete indicator of the same
index and draws from a per-value root conditional (value 0 pins the
latent to a constant "absent" point; all nonzero values share one
support). Every deeper variable is produced by a mechanism from its
parents plus independent exogenous noise.

The classes here are declarative and immutable; ancestral sampling lives
in `sampling`, support analysis in `support`, and the various analyses in
their own modules. Construction is deliberately permissive — a structurally
broken model can be built and inspected — and `validate` reports every
violated invariant instead of raising.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

__all__ = [
    "VariableId",
    "Degenerate",
    "IntervalDist",
    "FiniteChoice",
    "RootConditional",
    "MechanismSpec",
    "HierModel",
    "ValidationReport",
    "ModelFormatError",
    "validate",
    "parents",
    "children",
    "load_model",
    "loads_model",
    "save_model",
    "dumps_model",
    "model_hash",
]

SCALAR_FAMILIES = ("linear-gaussian", "affine-tanh", "location-scale-gaussian")
ALL_FAMILIES = SCALAR_FAMILIES + ("piecewise-table", "concat-affine")
NOISE_FAMILIES = ("gaussian", "uniform")

_NAME_RE = re.compile(r"^(d\.(\d+)|z(\d+)\.(\d+)|x)$")


@dataclass(frozen=True, order=True)
class VariableId:
    """Position of one variable: (level, index), both 1-based in index.

    Level 0 is the discrete layer, level L+1 the observation (index 1).
    """

    level: int
    index: int

    def name(self) -> str:
        if self.level == 0:
            return f"d.{self.index}"
        return f"z{self.level}.{self.index}"


def var_name(vid: VariableId, num_levels: int) -> str:
    """Canonical string form; the observation prints as plain "x"."""
    if vid.level == num_levels + 1:
        return "x"
    return vid.name()


def parse_var_name(name: str, num_levels: int) -> VariableId:
    m = _NAME_RE.match(name)
    if not m:
        raise ModelFormatError(f"unrecognized variable name: {name!r}")
    if name == "x":
        return VariableId(num_levels + 1, 1)
    if name.startswith("d."):
        return VariableId(0, int(m.group(2)))
    return VariableId(int(m.group(3)), int(m.group(4)))


# ---------------------------------------------------------------------------
# Root conditionals: p(z_{1,i} | d_i = c), one entry per discrete value c.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Degenerate:
    """Point mass; mandatory at c = 0 (concept absent)."""

    value: float

    kind = "degenerate"

    def support(self) -> Tuple[float, float]:
        return (self.value, self.value)

    def finite_values(self) -> Tuple[float, ...]:
        return (self.value,)

    def draw(self, u: np.ndarray) -> np.ndarray:
        return np.full(u.shape, float(self.value))


@dataclass(frozen=True)
class IntervalDist:
    """Continuous density on (lo, hi); only the uniform family is defined."""

    lo: float
    hi: float
    density: str = "uniform"

    kind = "interval"

    def support(self) -> Tuple[float, float]:
        return (self.lo, self.hi)

    def finite_values(self) -> None:
        return None

    def draw(self, u: np.ndarray) -> np.ndarray:
        return self.lo + (self.hi - self.lo) * u


@dataclass(frozen=True)
class FiniteChoice:
    """Finite value set with probabilities; keeps enumeration exact while
    still being genuinely random, which the brute-force oracles rely on."""

    values: Tuple[float, ...]
    probs: Tuple[float, ...]

    kind = "choice"

    def support(self) -> Tuple[float, ...]:
        return tuple(sorted(self.values))

    def finite_values(self) -> Tuple[float, ...]:
        return self.values

    def draw(self, u: np.ndarray) -> np.ndarray:
        cum = np.cumsum(self.probs)
        idx = np.searchsorted(cum, u, side="left")
        idx = np.clip(idx, 0, len(self.values) - 1)
        return np.asarray(self.values, dtype=np.float64)[idx]


RootVariant = Union[Degenerate, IntervalDist, FiniteChoice]


@dataclass(frozen=True)
class RootConditional:
    """Per-value conditionals of one root latent; cardinality = len(by_value)."""

    by_value: Tuple[RootVariant, ...]

    @property
    def cardinality(self) -> int:
        return len(self.by_value)


# ---------------------------------------------------------------------------
# Mechanisms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MechanismSpec:
    """How one non-root variable is produced from its parents and noise.

    Families (k = parent count):
      linear-gaussian          params (bias, c_1..c_k):
                               v = bias + sum c_i pa_i + noise
      affine-tanh              params (gain, bias, c_1..c_k):
                               v = gain * tanh(bias + sum c_i pa_i) + noise
      location-scale-gaussian  params (b_mu, a_1..a_k, b_s, g_1..g_k):
                               mu = b_mu + sum a_i pa_i
                               sigma = scale * exp(0.5 (b_s + sum g_i pa_i))
                               v = mu + sigma * eps, eps ~ N(0,1)
      piecewise-table          table: parent value tuple -> value
                               (deterministic; powers exact enumeration)
      concat-affine            observation only; params (a_1,b_1,..,a_k,b_k):
                               dim j = a_j pa_j + b_j for j <= k, remaining
                               dims = scale * eps (one noise per extra dim)

    Additive noise is scale * eps with eps standard normal (gaussian) or
    uniform on (-1, 1). Scale 0 turns the mechanism deterministic, which
    the oracle fixtures use on purpose.
    """

    family: str
    params: Tuple[float, ...] = ()
    noise_family: Optional[str] = "gaussian"
    noise_scale: float = 1.0
    table: Optional[Mapping[Tuple[float, ...], float]] = None

    # -- arity -------------------------------------------------------------
    def expected_params(self, k: int) -> Optional[int]:
        return {
            "linear-gaussian": k + 1,
            "affine-tanh": k + 2,
            "location-scale-gaussian": 2 * k + 2,
            "piecewise-table": 0,
            "concat-affine": 2 * k,
        }.get(self.family)

    # -- numeric evaluation --------------------------------------------------
    def mean(self, pa: np.ndarray) -> np.ndarray:
        """Conditional mean given parent rows (n, k) for scalar families."""
        p = self.params
        if self.family == "linear-gaussian":
            return p[0] + pa @ np.asarray(p[1:])
        if self.family == "affine-tanh":
            return p[0] * np.tanh(p[1] + pa @ np.asarray(p[2:]))
        if self.family == "location-scale-gaussian":
            k = pa.shape[1]
            return p[0] + pa @ np.asarray(p[1:1 + k])
        raise ValueError(f"no scalar mean for family {self.family!r}")

    def sigma(self, pa: np.ndarray) -> np.ndarray:
        """Conditional noise scale given parent rows (n, k)."""
        if self.family in ("linear-gaussian", "affine-tanh"):
            return np.full(pa.shape[0], float(self.noise_scale))
        if self.family == "location-scale-gaussian":
            k = pa.shape[1]
            p = self.params
            log_var = p[1 + k] + pa @ np.asarray(p[2 + k:])
            return self.noise_scale * np.exp(0.5 * log_var)
        raise ValueError(f"no scalar sigma for family {self.family!r}")

    def value(self, pa: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Value from parent rows and one open-uniform draw per row."""
        from scipy.special import ndtri

        if self.family == "piecewise-table":
            return self.apply_table(pa)
        if self.noise_family == "gaussian":
            eps = ndtri(u)
        elif self.noise_family == "uniform":
            eps = 2.0 * u - 1.0
        else:
            raise ValueError(f"unknown noise family {self.noise_family!r}")
        if self.family == "location-scale-gaussian":
            if self.noise_family != "gaussian":
                raise ValueError("location-scale mechanisms need gaussian noise")
            return self.mean(pa) + self.sigma(pa) * eps
        return self.mean(pa) + self.noise_scale * eps

    def apply_table(self, pa: np.ndarray) -> np.ndarray:
        assert self.table is not None
        out = np.empty(pa.shape[0])
        for r in range(pa.shape[0]):
            out[r] = self.table[table_key(pa[r])]
        return out

    def lookup(self, key: Sequence[float]) -> float:
        """Single piecewise-table lookup by parent value tuple."""
        assert self.table is not None
        return float(self.table[table_key(key)])

    def conditional_gaussian(self, pa: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """(mu, sigma) of the smooth conditional density, when one exists."""
        if self.family not in SCALAR_FAMILIES:
            raise ValueError(f"family {self.family!r} has no smooth density")
        if self.noise_family != "gaussian":
            raise ValueError(
                f"noise family {self.noise_family!r} has no smooth density"
            )
        return self.mean(pa), self.sigma(pa)


def table_key(values: Sequence[float]) -> Tuple[float, ...]:
    """Canonical float tuple for piecewise-table keys (rounds out jitter)."""
    return tuple(round(float(v), 9) for v in values)


# ---------------------------------------------------------------------------
# The model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HierModel:
    """Immutable leveled causal model.

    widths holds every layer size root-to-observation: widths[0] = number
    of discrete indicators, widths[l] = latent count of level l for
    1 <= l <= L, widths[L+1] = observation dimension.
    """

    widths: Tuple[int, ...]
    edges: frozenset  # of (VariableId, VariableId)
    mechanisms: Mapping[VariableId, MechanismSpec]
    roots: Mapping[int, RootConditional]
    _parent_cache: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        object.__setattr__(self, "edges", frozenset(self.edges))
        object.__setattr__(self, "mechanisms", dict(self.mechanisms))
        object.__setattr__(self, "roots", dict(self.roots))

    @property
    def num_levels(self) -> int:
        """L: number of latent levels (widths also cover d and x)."""
        return len(self.widths) - 2

    @property
    def n_d(self) -> int:
        return self.widths[0]

    @property
    def d_x(self) -> int:
        return self.widths[-1]

    @property
    def x_id(self) -> VariableId:
        return VariableId(self.num_levels + 1, 1)

    def width(self, level: int) -> int:
        return self.widths[level]

    def level_vars(self, level: int) -> List[VariableId]:
        if level == self.num_levels + 1:
            return [self.x_id]
        return [VariableId(level, i) for i in range(1, self.widths[level] + 1)]

    def variables(self) -> List[VariableId]:
        out: List[VariableId] = []
        for level in range(len(self.widths)):
            out.extend(self.level_vars(level))
        return out

    def cardinality(self, i: int) -> int:
        return self.roots[i].cardinality if i in self.roots else 2

    def cardinalities(self) -> Tuple[int, ...]:
        return tuple(self.cardinality(i) for i in range(1, self.n_d + 1))

    def name_of(self, vid: VariableId) -> str:
        return var_name(vid, self.num_levels)


def parents(model: HierModel, v: VariableId) -> List[VariableId]:
    """Parents of v in a fixed total order (level, then index)."""
    cache = model._parent_cache
    if v in cache:
        return list(cache[v])
    if v not in set(model.variables()):
        raise KeyError(f"unknown variable {v}")
    ps = sorted(p for (p, c) in model.edges if c == v)
    cache[v] = tuple(ps)
    return ps


def children(model: HierModel, v: VariableId) -> List[VariableId]:
    return sorted(c for (p, c) in model.edges if p == v)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

@dataclass
class ValidationReport:
    violations: List[str]

    @property
    def ok(self) -> bool:
        return not self.violations

    def __str__(self) -> str:
        if self.ok:
            return "model ok"
        return "\n".join(f"violation: {v}" for v in self.violations)


def validate(model: HierModel) -> ValidationReport:
    """Check every structural invariant; violations are data, not errors."""
    bad: List[str] = []
    L = model.num_levels
    if L < 1:
        return ValidationReport([f"need at least one latent level, widths={model.widths}"])
    if any(w < 1 for w in model.widths):
        bad.append(f"non-positive layer width in {model.widths}")
        return ValidationReport(bad)

    known = set(model.variables())

    def nm(v: VariableId) -> str:
        return var_name(v, L)

    # Edge endpoints and stratification. Adjacent-level-only edges make the
    # graph acyclic by construction, so no separate cycle check is needed.
    for (p, c) in sorted(model.edges):
        if p not in known or c not in known:
            bad.append(f"edge endpoint outside declared widths: {nm(p)} -> {nm(c)}")
            continue
        if c.level != p.level + 1:
            bad.append(f"non-adjacent-level edge: {nm(p)} -> {nm(c)}")

    # Root pairing: indicator i feeds latent z_{1,i} and nothing else.
    if model.widths[0] != model.widths[1]:
        bad.append(
            f"root pairing needs equal widths at levels 0 and 1, "
            f"got {model.widths[0]} and {model.widths[1]}"
        )
    else:
        for i in range(1, model.widths[0] + 1):
            want = (VariableId(0, i), VariableId(1, i))
            if want not in model.edges:
                bad.append(f"missing root edge d.{i} -> z1.{i}")
        for (p, c) in sorted(model.edges):
            if p.level == 0 and c.level == 1 and p.index != c.index:
                bad.append(f"root pairing violated: {nm(p)} -> {nm(c)}")

    # Parent coverage and mechanism presence.
    for level in range(2, L + 2):
        for v in model.level_vars(level):
            ps = [p for (p, c) in model.edges if c == v and p in known]
            if not ps:
                bad.append(f"{nm(v)} has no parents")
            mech = model.mechanisms.get(v)
            if mech is None:
                bad.append(f"{nm(v)} has no mechanism")
            else:
                bad.extend(_check_mechanism(model, v, mech, len(ps)))
    for v in model.mechanisms:
        if v.level < 2 or v not in known:
            bad.append(f"mechanism attached to non-mechanism variable {nm(v)}")

    # Root conditionals.
    for i in range(1, model.widths[0] + 1):
        rc = model.roots.get(i)
        if rc is None:
            bad.append(f"z1.{i} has no root conditional")
            continue
        bad.extend(_check_root(i, rc))
    for i in model.roots:
        if not 1 <= i <= model.widths[0]:
            bad.append(f"root conditional for undeclared index {i}")

    return ValidationReport(bad)


def _check_mechanism(model: HierModel, v: VariableId, mech: MechanismSpec,
                     k: int) -> List[str]:
    bad: List[str] = []
    name = var_name(v, model.num_levels)
    if mech.family not in ALL_FAMILIES:
        return [f"{name}: unknown mechanism family {mech.family!r}"]
    is_x = v.level == model.num_levels + 1
    if mech.family == "concat-affine" and not is_x:
        bad.append(f"{name}: concat-affine is observation-only")
    if is_x and mech.family in ("linear-gaussian", "affine-tanh",
                                "location-scale-gaussian"):
        bad.append(f"{name}: scalar family {mech.family!r} cannot produce "
                   f"a {model.d_x}-dimensional observation")
    want = mech.expected_params(k)
    if mech.family == "piecewise-table":
        if mech.table is None:
            bad.append(f"{name}: piecewise-table without a table")
        else:
            for key in mech.table:
                if len(key) != k:
                    bad.append(f"{name}: table key arity {len(key)} != "
                               f"parent count {k}")
                    break
    elif want is not None and len(mech.params) != want:
        bad.append(f"{name}: {mech.family} expects {want} params for {k} "
                   f"parents, got {len(mech.params)}")
    if mech.family != "piecewise-table":
        if mech.noise_family not in NOISE_FAMILIES:
            bad.append(f"{name}: unknown noise family {mech.noise_family!r}")
        if mech.noise_scale < 0:
            bad.append(f"{name}: negative noise scale")
        if mech.family == "location-scale-gaussian" and mech.noise_family != "gaussian":
            bad.append(f"{name}: location-scale mechanisms need gaussian noise")
    if is_x and mech.family == "concat-affine" and model.d_x < k:
        bad.append(f"x: observation width {model.d_x} smaller than parent "
                   f"count {k}")
    return bad


def _check_root(i: int, rc: RootConditional) -> List[str]:
    bad: List[str] = []
    if rc.cardinality < 1:
        return [f"z1.{i}: empty root conditional"]
    if not isinstance(rc.by_value[0], Degenerate):
        bad.append(f"z1.{i}: absence not degenerate (value 0 must be a point)")
    supports = []
    for c, variant in enumerate(rc.by_value):
        if isinstance(variant, IntervalDist):
            if not variant.lo < variant.hi:
                bad.append(f"z1.{i} value {c}: empty interval")
            if variant.density != "uniform":
                bad.append(f"z1.{i} value {c}: unknown density "
                           f"{variant.density!r}")
        if isinstance(variant, FiniteChoice):
            if len(variant.values) != len(variant.probs) or not variant.values:
                bad.append(f"z1.{i} value {c}: values/probs length mismatch")
            elif not math.isclose(sum(variant.probs), 1.0, abs_tol=1e-9):
                bad.append(f"z1.{i} value {c}: probabilities sum to "
                           f"{sum(variant.probs)}")
        if c > 0:
            supports.append(variant.support())
    if len(set(supports)) > 1:
        bad.append(f"z1.{i}: nonzero values have different supports {supports}")
    return bad


# ---------------------------------------------------------------------------
# Serialization: one JSON document with exactly four top-level fields.
# ---------------------------------------------------------------------------

class ModelFormatError(ValueError):
    """Raised on any malformed model document (with field diagnostics)."""


def _require_fields(obj: Mapping, allowed: Sequence[str], where: str,
                    required: Sequence[str] = ()) -> None:
    unknown = sorted(set(obj) - set(allowed))
    if unknown:
        raise ModelFormatError(f"{where}: unknown field(s) {unknown}")
    missing = [field for field in required if field not in obj]
    if missing:
        raise ModelFormatError(f"{where}: missing {missing[0]}")


def loads_model(text: str) -> HierModel:
    """Parse a model document. Structural violations do not stop parsing
    (run `validate` afterwards); malformed documents raise ModelFormatError.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ModelFormatError(f"not valid JSON: {e}") from None
    if not isinstance(doc, dict):
        raise ModelFormatError("document root must be an object")
    _require_fields(doc, ["levels", "edges", "mechanisms", "roots"],
                    "document", required=["levels", "edges", "mechanisms",
                                          "roots"])
    levels = doc["levels"]
    if (not isinstance(levels, list) or len(levels) < 3
            or not all(isinstance(w, int) and w >= 1 for w in levels)):
        raise ModelFormatError(
            "levels must list positive layer widths, discrete layer through "
            "observation (at least 3 entries)")
    L = len(levels) - 2

    edges = []
    seen = set()
    for item in doc["edges"]:
        if not (isinstance(item, list) and len(item) == 2):
            raise ModelFormatError(f"edge entries are [parent, child]: {item!r}")
        p = parse_var_name(item[0], L)
        c = parse_var_name(item[1], L)
        if (p, c) in seen:
            raise ModelFormatError(f"duplicate edge: {item[0]} -> {item[1]}")
        seen.add((p, c))
        edges.append((p, c))

    mechanisms: Dict[VariableId, MechanismSpec] = {}
    for name, spec in doc["mechanisms"].items():
        vid = parse_var_name(name, L)
        mechanisms[vid] = _parse_mechanism(name, spec)

    roots: Dict[int, RootConditional] = {}
    for key, entries in doc["roots"].items():
        try:
            i = int(key)
        except ValueError:
            raise ModelFormatError(f"roots: key {key!r} is not an index") from None
        if not isinstance(entries, list) or not entries:
            raise ModelFormatError(f"roots.{key}: need a per-value list")
        roots[i] = RootConditional(tuple(
            _parse_root_variant(f"roots.{key}[{c}]", entry)
            for c, entry in enumerate(entries)))

    return HierModel(widths=tuple(levels), edges=frozenset(edges),
                     mechanisms=mechanisms, roots=roots)


def _parse_mechanism(name: str, spec) -> MechanismSpec:
    where = f"mechanisms.{name}"
    if not isinstance(spec, dict):
        raise ModelFormatError(f"{where}: must be an object")
    _require_fields(spec, ["family", "params", "noise"], where,
                    required=["family"])
    family = spec["family"]
    if family not in ALL_FAMILIES:
        raise ModelFormatError(f"{where}: unknown family {family!r}")
    noise = spec.get("noise")
    if noise is None:
        if family != "piecewise-table":
            raise ModelFormatError(f"{where}: noise required for {family}")
        noise_family, noise_scale = None, 0.0
    else:
        _require_fields(noise, ["family", "scale"], f"{where}.noise",
                        required=["family", "scale"])
        noise_family, noise_scale = noise["family"], float(noise["scale"])
    params = spec.get("params", [])
    if family == "piecewise-table":
        table = {}
        for row in params:
            if not (isinstance(row, list) and len(row) == 2
                    and isinstance(row[0], list)):
                raise ModelFormatError(
                    f"{where}: table rows are [[parent values...], value]")
            key = table_key(row[0])
            if key in table:
                raise ModelFormatError(f"{where}: duplicate table row {row[0]}")
            table[key] = float(row[1])
        return MechanismSpec(family=family, table=table,
                             noise_family=noise_family, noise_scale=noise_scale)
    if not all(isinstance(p, (int, float)) for p in params):
        raise ModelFormatError(f"{where}: params must be numbers")
    return MechanismSpec(family=family, params=tuple(float(p) for p in params),
                         noise_family=noise_family, noise_scale=noise_scale)


def _parse_root_variant(where: str, entry) -> RootVariant:
    if not isinstance(entry, dict) or "kind" not in entry:
        raise ModelFormatError(f"{where}: need an object with a kind")
    kind = entry["kind"]
    if kind == "degenerate":
        _require_fields(entry, ["kind", "value"], where, required=["value"])
        return Degenerate(float(entry["value"]))
    if kind == "interval":
        _require_fields(entry, ["kind", "lo", "hi", "density"], where,
                        required=["lo", "hi"])
        return IntervalDist(float(entry["lo"]), float(entry["hi"]),
                            entry.get("density", "uniform"))
    if kind == "choice":
        _require_fields(entry, ["kind", "values", "probs"], where,
                        required=["values", "probs"])
        return FiniteChoice(tuple(float(v) for v in entry["values"]),
                            tuple(float(p) for p in entry["probs"]))
    raise ModelFormatError(f"{where}: unknown kind {kind!r}")


def dumps_model(model: HierModel) -> str:
    """Canonical JSON text; loads(dumps(m)) == m and the text is stable."""
    L = model.num_levels
    edges = sorted(model.edges)
    mechanisms = {}
    for vid in sorted(model.mechanisms):
        mech = model.mechanisms[vid]
        entry: Dict[str, object] = {"family": mech.family}
        if mech.family == "piecewise-table":
            entry["params"] = [[list(k), v]
                               for k, v in sorted((mech.table or {}).items())]
            if mech.noise_family is not None:
                entry["noise"] = {"family": mech.noise_family,
                                  "scale": mech.noise_scale}
        else:
            entry["params"] = list(mech.params)
            entry["noise"] = {"family": mech.noise_family,
                              "scale": mech.noise_scale}
        mechanisms[var_name(vid, L)] = entry
    roots = {}
    for i in sorted(model.roots):
        entries = []
        for variant in model.roots[i].by_value:
            if isinstance(variant, Degenerate):
                entries.append({"kind": "degenerate", "value": variant.value})
            elif isinstance(variant, IntervalDist):
                entries.append({"kind": "interval", "lo": variant.lo,
                                "hi": variant.hi, "density": variant.density})
            else:
                entries.append({"kind": "choice", "values": list(variant.values),
                                "probs": list(variant.probs)})
        roots[str(i)] = entries
    doc = {
        "levels": list(model.widths),
        "edges": [[var_name(p, L), var_name(c, L)] for (p, c) in edges],
        "mechanisms": mechanisms,
        "roots": roots,
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def load_model(path) -> HierModel:
    with open(path, "r", encoding="utf-8") as fh:
        return loads_model(fh.read())


def save_model(model: HierModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_model(model))


def model_hash(model: HierModel) -> str:
    """Stable content hash of the canonical serialization."""
    return hashlib.sha256(dumps_model(model).encode("utf-8")).hexdigest()
