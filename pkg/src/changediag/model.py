"""Problem definitions for sequential change diagnosis.

A problem instance couples a hidden change model with an observation model
and a cost structure.  At an unobservable time theta the distribution of the
observed symbols switches from a known baseline ``f0`` to one of M known
alternatives ``f_mu``, where the index mu is itself unobservable.  The change
time carries a zero-modified geometric prior (an atom ``p0`` at zero, then
geometric with success probability ``p``) and the change type carries a prior
``nu`` independent of the change time.  Decisions are judged by a delay cost
``c`` per late period plus a terminal cost matrix ``a`` charging false alarms
and wrong identifications.

The module also builds the classical special cases (pure change detection,
fixed-sample-free sequential hypothesis testing) as cost/prior settings of the
same structure, and derives instances for "suspended animation" systems in
which the first component failure freezes all other components.

Observation spaces are finite alphabets; symbols are the integers
``0 .. alphabet_size-1``.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from typing import IO, Iterable, Mapping

import numpy as np

__all__ = [
    "ProblemSpec",
    "SuspendedAnimationSpec",
    "SpecValidationError",
    "validate",
    "theta_prior",
    "make_shiryaev",
    "make_hypothesis_testing",
    "derive_suspended_animation",
    "phi_min_index",
    "phi_cardinality",
    "phi_binary",
    "load_spec",
    "save_spec",
    "spec_to_dict",
    "spec_from_dict",
    "load_sa_spec",
    "save_sa_spec",
]

#: Normalization slack for probability vectors (density rows, nu).
NORM_TOL = 1e-12


class SpecValidationError(ValueError):
    """A problem instance violates one of its structural constraints."""


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr, dtype=np.float64)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class ProblemSpec:
    """Immutable description of one change-diagnosis problem.

    Attributes:
        alphabet_size: number of observable symbols.
        num_types: number M of post-change alternatives.
        p0: prior mass of an immediate change (change time equal to 0).
        p: success probability of the geometric tail of the change time.
        nu: prior over the M change types, shape (M,).
        f: densities, shape (M+1, alphabet_size); row 0 is the pre-change
            density, row i >= 1 the density after a change of type i.
        c: delay cost charged per period between the change and the alarm.
        a: terminal costs, shape (M+1, M); ``a[i][j]`` is the cost of
            terminal decision j when the truth is i, with row 0 holding the
            false-alarm costs (no change has happened yet).
    """

    alphabet_size: int
    num_types: int
    p0: float
    p: float
    nu: np.ndarray
    f: np.ndarray
    c: float
    a: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "nu", _freeze(np.atleast_1d(self.nu)))
        object.__setattr__(self, "f", _freeze(np.atleast_2d(self.f)))
        object.__setattr__(self, "a", _freeze(np.atleast_2d(self.a)))

    def __hash__(self) -> int:
        return hash(
            (
                self.alphabet_size,
                self.num_types,
                self.p0,
                self.p,
                self.nu.tobytes(),
                self.f.tobytes(),
                self.c,
                self.a.tobytes(),
            )
        )


def validate(spec: ProblemSpec) -> None:
    """Check every structural invariant of ``spec``.

    Raises:
        SpecValidationError: with a message naming the offending field,
            row and constraint.  Returns silently when the spec is valid.
    """
    M = spec.num_types
    if spec.alphabet_size < 1:
        raise SpecValidationError("alphabet_size must be a positive integer")
    if M < 1:
        raise SpecValidationError("num_types must be a positive integer")
    if not 0.0 <= spec.p0 <= 1.0:
        raise SpecValidationError(f"p0={spec.p0} outside [0, 1]")
    if not 0.0 < spec.p < 1.0:
        raise SpecValidationError(f"p={spec.p} outside the open interval (0, 1)")
    if spec.c <= 0.0:
        raise SpecValidationError(f"delay cost c={spec.c} must be positive")

    if spec.nu.shape != (M,):
        raise SpecValidationError(
            f"nu has shape {spec.nu.shape}, expected ({M},)"
        )
    if np.any(spec.nu <= 0.0):
        bad = int(np.argmin(spec.nu))
        raise SpecValidationError(
            f"nu[{bad}]={spec.nu[bad]} must be strictly positive"
        )
    if abs(float(spec.nu.sum()) - 1.0) > NORM_TOL:
        raise SpecValidationError(
            f"nu sums to {spec.nu.sum()!r}, not 1 within {NORM_TOL}"
        )

    if spec.f.shape != (M + 1, spec.alphabet_size):
        raise SpecValidationError(
            f"f has shape {spec.f.shape}, expected ({M + 1}, {spec.alphabet_size})"
        )
    if np.any(spec.f < 0.0):
        row, col = np.unravel_index(int(np.argmin(spec.f)), spec.f.shape)
        raise SpecValidationError(f"f[{row}][{col}]={spec.f[row, col]} is negative")
    sums = spec.f.sum(axis=1)
    for i, s in enumerate(sums):
        if abs(float(s) - 1.0) > NORM_TOL:
            raise SpecValidationError(
                f"density row {i} not normalized: sums to {float(s)!r}"
            )

    if spec.a.shape != (M + 1, M):
        raise SpecValidationError(
            f"a has shape {spec.a.shape}, expected ({M + 1}, {M})"
        )
    if np.any(spec.a < 0.0):
        row, col = np.unravel_index(int(np.argmin(spec.a)), spec.a.shape)
        raise SpecValidationError(f"a[{row}][{col}]={spec.a[row, col]} is negative")
    for j in range(1, M + 1):
        if spec.a[j, j - 1] != 0.0:
            raise SpecValidationError(
                f"diagonal isolation cost nonzero: a[{j}][{j}]={spec.a[j, j - 1]}"
            )


def theta_prior(spec: ProblemSpec, t: int) -> float:
    """Prior probability that the change happens exactly at time ``t``.

    The change time has an atom ``p0`` at zero; conditioned on being
    positive it is geometric with success probability ``p``.
    """
    if t < 0:
        raise ValueError(f"change time t={t} must be nonnegative")
    if t == 0:
        return spec.p0
    return (1.0 - spec.p0) * (1.0 - spec.p) ** (t - 1) * spec.p


def make_shiryaev(
    p0: float,
    p: float,
    nu: Iterable[float],
    f: Iterable[Iterable[float]],
    c: float,
) -> ProblemSpec:
    """Pure quickest-detection instance: unit false-alarm cost, free isolation.

    Every false alarm costs 1 and any identification after the change is
    free, so the terminal loss reduces to the indicator of a false alarm and
    the risk becomes P{alarm before change} plus ``c`` times the expected
    detection delay.

    Args:
        p0, p: change-time prior parameters.
        nu: prior over post-change alternatives (length M >= 1).
        f: density rows f0, f1, ..., fM.
        c: delay cost per period.
    """
    f = np.atleast_2d(np.asarray(f, dtype=np.float64))
    M = f.shape[0] - 1
    a = np.zeros((M + 1, M))
    a[0, :] = 1.0
    spec = ProblemSpec(
        alphabet_size=f.shape[1],
        num_types=M,
        p0=p0,
        p=p,
        nu=np.asarray(list(nu), dtype=np.float64),
        f=f,
        c=c,
        a=a,
    )
    validate(spec)
    return spec


def make_hypothesis_testing(
    nu: Iterable[float],
    f: Iterable[Iterable[float]],
    c: float,
    a: Iterable[Iterable[float]],
    p: float = 0.5,
) -> ProblemSpec:
    """Sequential multi-hypothesis test: the change has already happened.

    Sets the prior mass of an immediate change to one, so the pre-change
    hypothesis carries zero posterior weight forever and the problem reduces
    to paying ``c`` per observation until a terminal decision is made.  The
    geometric parameter ``p`` never enters the posterior dynamics in this
    regime; it is kept only to satisfy the common problem shape.

    Args:
        nu: prior over the M hypotheses.
        f: density rows f0, f1, ..., fM (f0 is inert but part of the shape).
        c: cost per observation.
        a: terminal cost matrix of shape (M+1, M).
        p: inert geometric parameter, any value in (0, 1).
    """
    f = np.atleast_2d(np.asarray(f, dtype=np.float64))
    spec = ProblemSpec(
        alphabet_size=f.shape[1],
        num_types=f.shape[0] - 1,
        p0=1.0,
        p=p,
        nu=np.asarray(list(nu), dtype=np.float64),
        f=f,
        c=c,
        a=np.atleast_2d(np.asarray(a, dtype=np.float64)),
    )
    validate(spec)
    return spec


# ---------------------------------------------------------------------------
# Suspended-animation systems
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SuspendedAnimationSpec:
    """A system of K concealed components that freezes on first failure.

    Component k fails at an independent geometric time with per-period
    failure probability ``component_failure_probs[k]``.  The first failure
    switches the observation density; simultaneous failures are possible and
    the label of the observed regime is ``phi(A)`` where A is the set of
    components that failed first.

    Attributes:
        component_failure_probs: per-component failure probabilities, each
            strictly inside (0, 1).
        phi: total map from nonempty subsets of {1..K} (as frozensets) to
            labels 1..M.
        label_densities: shape (M+1, alphabet); row 0 is the pre-failure
            density, row k >= 1 the density observed under label k.
    """

    component_failure_probs: tuple[float, ...]
    phi: Mapping[frozenset[int], int]
    label_densities: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(
            self,
            "component_failure_probs",
            tuple(float(q) for q in self.component_failure_probs),
        )
        object.__setattr__(
            self, "phi", {frozenset(k): int(v) for k, v in self.phi.items()}
        )
        object.__setattr__(
            self, "label_densities", _freeze(np.atleast_2d(self.label_densities))
        )

    @property
    def num_components(self) -> int:
        return len(self.component_failure_probs)

    @property
    def num_labels(self) -> int:
        return max(self.phi.values())


def _validate_sa(sa: SuspendedAnimationSpec) -> None:
    K = sa.num_components
    if K < 1:
        raise SpecValidationError("at least one component required")
    for k, q in enumerate(sa.component_failure_probs, start=1):
        if not 0.0 < q < 1.0:
            raise SpecValidationError(
                f"component {k} failure probability {q} outside (0, 1)"
            )
    all_subsets = {
        frozenset(s)
        for n in range(1, K + 1)
        for s in itertools.combinations(range(1, K + 1), n)
    }
    missing = all_subsets - set(sa.phi)
    if missing:
        shown = sorted(min(missing, key=sorted))
        raise SpecValidationError(
            f"phi is not total: no label for subset {shown} "
            f"({len(missing)} subsets unlabeled)"
        )
    extra = set(sa.phi) - all_subsets
    if extra:
        raise SpecValidationError(
            f"phi labels {len(extra)} subsets outside 1..{K}, e.g. "
            f"{sorted(next(iter(extra)))}"
        )
    labels = set(sa.phi.values())
    M = max(labels)
    if min(labels) < 1 or labels != set(range(1, M + 1)):
        unused = sorted(set(range(1, M + 1)) - labels)
        raise SpecValidationError(
            f"labels must cover 1..{M} with every label used; unused: {unused}"
        )
    if sa.label_densities.shape[0] != M + 1:
        raise SpecValidationError(
            f"label_densities has {sa.label_densities.shape[0]} rows, "
            f"expected {M + 1} (pre-failure row plus one per label)"
        )


def phi_min_index(K: int) -> dict[frozenset[int], int]:
    """Label a failure set by its smallest component index."""
    return {
        frozenset(s): min(s)
        for n in range(1, K + 1)
        for s in itertools.combinations(range(1, K + 1), n)
    }


def phi_cardinality(K: int) -> dict[frozenset[int], int]:
    """Label a failure set by how many components failed together."""
    return {
        frozenset(s): len(s)
        for n in range(1, K + 1)
        for s in itertools.combinations(range(1, K + 1), n)
    }


def phi_binary(K: int) -> dict[frozenset[int], int]:
    """Label a failure set by the binary encoding sum of 2^(k-1) over members.

    Distinguishes every failure pattern: labels run over 1..2^K - 1.
    """
    return {
        frozenset(s): sum(2 ** (k - 1) for k in s)
        for n in range(1, K + 1)
        for s in itertools.combinations(range(1, K + 1), n)
    }


def derive_suspended_animation(
    sa: SuspendedAnimationSpec,
    c: float,
    a: Iterable[Iterable[float]],
    f0: Iterable[float] | None = None,
) -> ProblemSpec:
    """Reduce a suspended-animation system to a change-diagnosis instance.

    The first failure time of K independent geometric components is itself
    geometric with success probability ``p = 1 - prod(1 - p_k)``, and the
    label of the first-failing set is independent of that time, with
    weights proportional to the one-period failure-pattern probabilities.

    Args:
        sa: validated system description.
        c: delay cost per period.
        a: terminal cost matrix of shape (M+1, M).
        f0: optional pre-failure density overriding row 0 of
            ``sa.label_densities``.

    Raises:
        SpecValidationError: if the system description is inconsistent or a
            derived type weight vanishes.
    """
    _validate_sa(sa)
    probs = np.asarray(sa.component_failure_probs)
    K = sa.num_components
    M = sa.num_labels

    p = 1.0 - float(np.prod(1.0 - probs))
    nu = np.zeros(M)
    for subset, label in sa.phi.items():
        inside = np.array([k in subset for k in range(1, K + 1)])
        weight = float(np.prod(np.where(inside, probs, 1.0 - probs)))
        nu[label - 1] += weight
    nu /= p

    if np.any(nu <= 0.0):
        bad = int(np.argmin(nu)) + 1
        raise SpecValidationError(
            f"derived type weight for label {bad} is zero (label unreachable)"
        )

    f = np.array(sa.label_densities, dtype=np.float64)
    if f0 is not None:
        f[0] = np.asarray(list(f0), dtype=np.float64)
    spec = ProblemSpec(
        alphabet_size=f.shape[1],
        num_types=M,
        p0=0.0,
        p=p,
        nu=nu,
        f=f,
        c=c,
        a=np.atleast_2d(np.asarray(a, dtype=np.float64)),
    )
    validate(spec)
    return spec


# ---------------------------------------------------------------------------
# JSON serialization
# ---------------------------------------------------------------------------


def spec_to_dict(spec: ProblemSpec) -> dict:
    return {
        "alphabet_size": spec.alphabet_size,
        "num_types": spec.num_types,
        "p0": spec.p0,
        "p": spec.p,
        "nu": spec.nu.tolist(),
        "densities": spec.f.tolist(),
        "delay_cost": spec.c,
        "terminal_costs": spec.a.tolist(),
    }


def spec_from_dict(doc: Mapping) -> ProblemSpec:
    try:
        spec = ProblemSpec(
            alphabet_size=int(doc["alphabet_size"]),
            num_types=int(doc["num_types"]),
            p0=float(doc["p0"]),
            p=float(doc["p"]),
            nu=np.asarray(doc["nu"], dtype=np.float64),
            f=np.asarray(doc["densities"], dtype=np.float64),
            c=float(doc["delay_cost"]),
            a=np.asarray(doc["terminal_costs"], dtype=np.float64),
        )
    except KeyError as exc:
        raise SpecValidationError(f"model document missing key {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise SpecValidationError(f"malformed model document: {exc}") from exc
    validate(spec)
    return spec


def save_spec(spec: ProblemSpec, fp: IO[str] | str) -> None:
    doc = spec_to_dict(spec)
    if isinstance(fp, str):
        with open(fp, "w") as handle:
            json.dump(doc, handle, indent=2)
            handle.write("\n")
    else:
        json.dump(doc, fp, indent=2)


def load_spec(fp: IO[str] | str) -> ProblemSpec:
    """Read and validate a problem instance from a JSON document."""
    if isinstance(fp, str):
        with open(fp) as handle:
            doc = json.load(handle)
    else:
        doc = json.load(fp)
    if not isinstance(doc, Mapping):
        raise SpecValidationError("model document must be a JSON object")
    return spec_from_dict(doc)


def sa_to_dict(sa: SuspendedAnimationSpec) -> dict:
    return {
        "component_failure_probs": list(sa.component_failure_probs),
        "phi": [
            {"subset": sorted(subset), "label": label}
            for subset, label in sorted(
                sa.phi.items(), key=lambda kv: (len(kv[0]), sorted(kv[0]))
            )
        ],
        "label_densities": sa.label_densities.tolist(),
    }


def save_sa_spec(sa: SuspendedAnimationSpec, fp: IO[str] | str) -> None:
    doc = sa_to_dict(sa)
    if isinstance(fp, str):
        with open(fp, "w") as handle:
            json.dump(doc, handle, indent=2)
            handle.write("\n")
    else:
        json.dump(doc, fp)


def load_sa_spec(fp: IO[str] | str) -> SuspendedAnimationSpec:
    """Read a suspended-animation system description from JSON."""
    if isinstance(fp, str):
        with open(fp) as handle:
            doc = json.load(handle)
    else:
        doc = json.load(fp)
    try:
        sa = SuspendedAnimationSpec(
            component_failure_probs=tuple(doc["component_failure_probs"]),
            phi={
                frozenset(int(k) for k in entry["subset"]): int(entry["label"])
                for entry in doc["phi"]
            },
            label_densities=np.asarray(doc["label_densities"], dtype=np.float64),
        )
    except KeyError as exc:
        raise SpecValidationError(f"system document missing key {exc}") from exc
    _validate_sa(sa)
    return sa
