"""Attack-strategy constructors.

Every strategy is reduced to one tuple of matrices:

    lambda_y, lambda_u   multiplicative routing applied to sensors / actuators
    gamma_y, gamma_u     selectors channeling the injected signal a = [a_u; a_y]
    f_a                  linear equality constraints on the stacked a_{0:N}
    t_sx, t_sr, t_sf     maps expressing the recorded signal a_s (replay) as a
                         function of the initial state, the reference, and the
                         pre-attack noise window
    c_rec                selector extracting the recorded channels from y

plus the start step of the simulation window (negative when a recording phase
precedes the attack). Strategies without injection channels carry zero-width
blocks so that downstream code has a single path.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .sysmodel import DimensionMismatch, NominalLoop, PlantModel, SystemDims

SUBSET_CAP = 2**12

KINDS = (
    "dos",
    "rerouting",
    "sign_alternation",
    "fdi",
    "bias_injection",
    "fdi_plus_dos",
    "replay_bias",
    "replay_dos",
)


class InvalidPermutation(ValueError):
    """Permutation moves a channel outside the compromised set."""


class EmptyResources(ValueError):
    """Strategy requires at least one compromised channel."""


class OverlappingSets(ValueError):
    """Injection and denial sets must be disjoint per signal type."""


class EnumerationCapExceeded(ValueError):
    """Worst-case search would exceed the combination cap."""


@dataclass(frozen=True)
class ResourceSet:
    """Compromised sensor and actuator channels, 0-based and sorted."""

    sensors: tuple[int, ...] = ()
    actuators: tuple[int, ...] = ()

    def __post_init__(self):
        for name, idx in (("sensors", self.sensors), ("actuators", self.actuators)):
            if len(set(idx)) != len(idx):
                raise ValueError(f"duplicate {name} indices: {idx}")
            if any(i < 0 for i in idx):
                raise ValueError(f"negative {name} index")
        object.__setattr__(self, "sensors", tuple(sorted(self.sensors)))
        object.__setattr__(self, "actuators", tuple(sorted(self.actuators)))

    def validate(self, dims: SystemDims) -> None:
        if any(i >= dims.n_y for i in self.sensors):
            raise ValueError(f"sensor index out of range (n_y={dims.n_y}): {self.sensors}")
        if any(i >= dims.n_u for i in self.actuators):
            raise ValueError(f"actuator index out of range (n_u={dims.n_u}): {self.actuators}")


@dataclass(frozen=True)
class StrategySpec:
    """One strategy template: the kind plus any kind-specific parameters.

    pi_y / pi_u map destination channel -> source channel over the compromised
    set (rerouting); inject / deny split the resources for fdi_plus_dos.
    When pi maps are omitted for rerouting, the worst case over all admissible
    permutation pairs is searched.
    """

    kind: str
    resources: ResourceSet
    pi_y: Optional[dict[int, int]] = None
    pi_u: Optional[dict[int, int]] = None
    inject: Optional[ResourceSet] = None
    deny: Optional[ResourceSet] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown strategy kind {self.kind!r}; expected one of {KINDS}")


@dataclass
class AttackMatrices:
    lambda_y: np.ndarray
    lambda_u: np.ndarray
    gamma_y: np.ndarray
    gamma_u: np.ndarray
    f_a: np.ndarray
    t_sx: np.ndarray
    t_sr: np.ndarray
    t_sf: np.ndarray
    c_rec: np.ndarray
    n_ay: int
    n_au: int
    start_step: int

    @property
    def n_a(self) -> int:
        return self.n_au + self.n_ay

    @property
    def has_recording(self) -> bool:
        return self.start_step < 0


@dataclass(frozen=True)
class DecisionLayout:
    """Shape of the decision vector d = [a(0); ...; a(N); y_r]."""

    dim_d: int
    n_a: int
    n_yr: int
    horizon: int
    Q: np.ndarray
    F: np.ndarray

    def split(self, d: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return (a_seq of shape (N+1, n_a), y_r)."""
        d = np.asarray(d, dtype=float)
        if d.shape != (self.dim_d,):
            raise DimensionMismatch(f"decision vector must have length {self.dim_d}")
        n_blk = (self.horizon + 1) * self.n_a
        return d[:n_blk].reshape(self.horizon + 1, self.n_a), d[n_blk:]


def _no_injection(n: int) -> np.ndarray:
    return np.zeros((n, 0))


def _selector(n: int, idx: Iterable[int]) -> np.ndarray:
    idx = tuple(idx)
    G = np.zeros((n, len(idx)))
    for col, j in enumerate(idx):
        G[j, col] = 1.0
    return G


def _empty_recording(dims: SystemDims, N: int, n_ay: int, start_step: int = 0) -> dict:
    rows = (N + 1) * n_ay
    return dict(
        t_sx=np.zeros((rows, 2 * dims.n_x)),
        t_sr=np.zeros((rows, dims.n_yr)),
        t_sf=np.zeros((rows, (-start_step) * (dims.n_x + dims.n_y))),
        start_step=start_step,
    )


def identity_routing(n_y: int, n_u: int) -> AttackMatrices:
    """No-attack configuration: identity routing, no channels, no constraints."""
    dims = SystemDims(n_x=0, n_y=n_y, n_u=n_u, n_yr=0)
    return AttackMatrices(
        lambda_y=np.eye(n_y),
        lambda_u=np.eye(n_u),
        gamma_y=_no_injection(n_y),
        gamma_u=_no_injection(n_u),
        f_a=np.zeros((0, 0)),
        c_rec=np.zeros((0, n_y)),
        n_ay=0,
        n_au=0,
        **_empty_recording(dims, 0, 0),
    )


def build_dos(res: ResourceSet, dims: SystemDims, N: int) -> AttackMatrices:
    """Denial of service: zero the compromised diagonal entries of the routing."""
    res.validate(dims)
    lam_y = np.eye(dims.n_y)
    lam_u = np.eye(dims.n_u)
    for i in res.sensors:
        lam_y[i, i] = 0.0
    for i in res.actuators:
        lam_u[i, i] = 0.0
    # No injected signal exists, so the signal-pinning constraint degenerates
    # to a zero-width block.
    return AttackMatrices(
        lambda_y=lam_y,
        lambda_u=lam_u,
        gamma_y=_no_injection(dims.n_y),
        gamma_u=_no_injection(dims.n_u),
        f_a=np.zeros((0, 0)),
        c_rec=np.zeros((0, dims.n_y)),
        n_ay=0,
        n_au=0,
        **_empty_recording(dims, N, 0),
    )


def _permutation_matrix(n: int, compromised: tuple[int, ...], pi: Optional[dict[int, int]]):
    pi = dict(pi or {})
    for dst, src in pi.items():
        if dst not in compromised or src not in compromised:
            raise InvalidPermutation(
                f"permutation entry {dst}<-{src} moves a channel outside {compromised}"
            )
    full = {i: pi.get(i, i) for i in range(n)}
    if sorted(full.values()) != list(range(n)):
        raise InvalidPermutation(f"mapping {pi} is not a bijection on {compromised}")
    M = np.zeros((n, n))
    for dst, src in full.items():
        M[dst, src] = 1.0
    return M


def build_rerouting(spec: StrategySpec, dims: SystemDims, N: int) -> AttackMatrices:
    """Permute compromised channels; non-compromised channels must stay fixed."""
    spec.resources.validate(dims)
    lam_y = _permutation_matrix(dims.n_y, spec.resources.sensors, spec.pi_y)
    lam_u = _permutation_matrix(dims.n_u, spec.resources.actuators, spec.pi_u)
    out = build_dos(ResourceSet(), dims, N)
    out.lambda_y, out.lambda_u = lam_y, lam_u
    return out


def build_sign_alternation(res: ResourceSet, dims: SystemDims, N: int) -> AttackMatrices:
    """Flip the sign of compromised channels."""
    res.validate(dims)
    out = build_dos(ResourceSet(), dims, N)
    for i in res.sensors:
        out.lambda_y[i, i] = -1.0
    for i in res.actuators:
        out.lambda_u[i, i] = -1.0
    return out


def build_fdi(res: ResourceSet, dims: SystemDims, N: int) -> AttackMatrices:
    """Unconstrained injection on the compromised channels."""
    res.validate(dims)
    if not res.sensors and not res.actuators:
        raise EmptyResources("injection requires at least one compromised channel")
    gam_y = _selector(dims.n_y, res.sensors)
    gam_u = _selector(dims.n_u, res.actuators)
    n_a = gam_y.shape[1] + gam_u.shape[1]
    return AttackMatrices(
        lambda_y=np.eye(dims.n_y),
        lambda_u=np.eye(dims.n_u),
        gamma_y=gam_y,
        gamma_u=gam_u,
        f_a=np.zeros((0, (N + 1) * n_a)),
        c_rec=gam_y.T.copy(),
        n_ay=gam_y.shape[1],
        n_au=gam_u.shape[1],
        **_empty_recording(dims, N, gam_y.shape[1]),
    )


def _constancy_rows(N: int, n_a: int, cols_per_step: int, offset: int = 0) -> np.ndarray:
    """Rows enforcing a(k) = a(0) for k = 1..N on an n_a-wide sub-block."""
    F = np.zeros((N * n_a, (N + 1) * cols_per_step))
    for k in range(1, N + 1):
        r = (k - 1) * n_a
        F[r : r + n_a, offset : offset + n_a] = -np.eye(n_a)
        F[r : r + n_a, k * cols_per_step + offset : k * cols_per_step + offset + n_a] = np.eye(n_a)
    return F


def build_bias(res: ResourceSet, dims: SystemDims, N: int) -> AttackMatrices:
    """Constant injection: like FDI but with a(k) = a(0) enforced over the window."""
    out = build_fdi(res, dims, N)
    out.f_a = _constancy_rows(N, out.n_a, out.n_a)
    return out


def build_fdi_plus_dos(spec: StrategySpec, dims: SystemDims, N: int) -> AttackMatrices:
    """Injection on one channel set combined with denial on a disjoint set."""
    inject = spec.inject or ResourceSet()
    deny = spec.deny or ResourceSet()
    inject.validate(dims)
    deny.validate(dims)
    if set(inject.sensors) & set(deny.sensors) or set(inject.actuators) & set(deny.actuators):
        raise OverlappingSets("injection and denial sets must be disjoint per signal type")
    if inject.sensors or inject.actuators:
        out = build_fdi(inject, dims, N)
    else:
        out = build_dos(ResourceSet(), dims, N)
    for i in deny.sensors:
        out.lambda_y[i, i] = 0.0
    for i in deny.actuators:
        out.lambda_u[i, i] = 0.0
    return out


def build_replay(
    res: ResourceSet,
    plant: PlantModel,
    nominal: NominalLoop,
    n_yr: int,
    N: int,
    actuator_mode: str = "dos",
) -> AttackMatrices:
    """Record-then-replay on the compromised sensors.

    The attacker records the compromised channels of y over the window
    [-N-1, -1] while the loop runs nominally, then substitutes the recording
    for the live channels on [0, N]. Compromised actuators are either denied
    (actuator_mode="dos") or driven by one constant injected value
    (actuator_mode="bias").

    The recorded signal at attack step k equals y(k-N-1) on the selected
    channels; iterating the nominal loop expresses the whole recorded stack as
    t_sx x_e(start) + t_sr y_r + t_sf f_pre, which is what the distribution
    engine folds into its maps.
    """
    if actuator_mode not in ("dos", "bias"):
        raise ValueError(f"actuator_mode must be 'dos' or 'bias', got {actuator_mode!r}")
    dims = SystemDims(n_x=plant.n_x, n_y=plant.n_y, n_u=plant.n_u, n_yr=n_yr)
    res.validate(dims)
    n_x, n_y, n_f = plant.n_x, plant.n_y, plant.n_x + plant.n_y
    n_ay = len(res.sensors)
    start = -N - 1

    lam_y = np.eye(n_y)
    for i in res.sensors:
        lam_y[i, i] = 0.0
    gam_y = _selector(n_y, res.sensors)
    c_rec = gam_y.T.copy()

    if actuator_mode == "dos":
        lam_u = np.eye(dims.n_u)
        for i in res.actuators:
            lam_u[i, i] = 0.0
        gam_u = _no_injection(dims.n_u)
        n_au = 0
        # the sensor channel exists only to carry the recording; its
        # deterministic part is pinned to zero
        f_a = np.eye((N + 1) * n_ay)
    else:
        lam_u = np.eye(dims.n_u)
        gam_u = _selector(dims.n_u, res.actuators)
        n_au = gam_u.shape[1]
        n_a = n_au + n_ay
        rows = []
        if n_au:
            rows.append(_constancy_rows(N, n_au, n_a))
        if n_ay:
            pin = np.zeros(((N + 1) * n_ay, (N + 1) * n_a))
            for k in range(N + 1):
                pin[k * n_ay : (k + 1) * n_ay, k * n_a + n_au : (k + 1) * n_a] = np.eye(n_ay)
            rows.append(pin)
        f_a = np.vstack(rows) if rows else np.zeros((0, (N + 1) * n_a))

    # Unroll the nominal loop over the recording window. At each recorded step
    # y(k) = C x(k) + w(k); the w(k) columns enter t_sf directly.
    measure_x = np.hstack([plant.C, np.zeros((n_y, n_x))])
    pick_w = np.hstack([np.zeros((n_y, n_x)), np.eye(n_y)])
    n_pre = N + 1
    t_sx = np.zeros(((N + 1) * n_ay, 2 * n_x))
    t_sr = np.zeros(((N + 1) * n_ay, n_yr))
    t_sf = np.zeros(((N + 1) * n_ay, n_pre * n_f))
    phi = np.eye(2 * n_x)
    psi_f = np.zeros((2 * n_x, n_pre * n_f))
    psi_r = np.zeros((2 * n_x, n_yr))
    for k in range(start, 0):
        j = k - start
        r = j * n_ay
        t_sx[r : r + n_ay] = c_rec @ measure_x @ phi
        t_sr[r : r + n_ay] = c_rec @ measure_x @ psi_r
        row_f = c_rec @ measure_x @ psi_f
        row_f[:, j * n_f : (j + 1) * n_f] += c_rec @ pick_w
        t_sf[r : r + n_ay] = row_f
        if k == -1:
            break
        psi_f = nominal.A_cl @ psi_f
        psi_f[:, j * n_f : (j + 1) * n_f] += nominal.B_f
        psi_r = nominal.A_cl @ psi_r + nominal.E_r
        phi = nominal.A_cl @ phi

    return AttackMatrices(
        lambda_y=lam_y,
        lambda_u=lam_u,
        gamma_y=gam_y,
        gamma_u=gam_u,
        f_a=f_a,
        t_sx=t_sx,
        t_sr=t_sr,
        t_sf=t_sf,
        c_rec=c_rec,
        n_ay=n_ay,
        n_au=n_au,
        start_step=start,
    )


def decision_layout(attack: AttackMatrices, N: int, Q_yr: np.ndarray) -> DecisionLayout:
    """Box and equality maps over d = [a(0); ...; a(N); y_r]."""
    Q_yr = np.asarray(Q_yr, dtype=float)
    n_yr = Q_yr.shape[0]
    n_a = attack.n_a
    dim_d = (N + 1) * n_a + n_yr
    Q = np.hstack([np.zeros((n_yr, (N + 1) * n_a)), Q_yr])
    f_a = attack.f_a
    if f_a.shape[0] and f_a.shape[1] != (N + 1) * n_a:
        raise DimensionMismatch("f_a column count must be (N+1) * n_a")
    F = np.hstack([f_a, np.zeros((f_a.shape[0], n_yr))]) if f_a.shape[0] else np.zeros((0, dim_d))
    return DecisionLayout(dim_d=dim_d, n_a=n_a, n_yr=n_yr, horizon=N, Q=Q, F=F)


# ---------------------------------------------------------------------------
# Worst-case candidate enumeration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Candidate:
    """One concrete attack configuration inside a strategy's search space."""

    variant: Optional[dict]
    attack: AttackMatrices


def _subset_pairs(res: ResourceSet) -> list[tuple[tuple[int, ...], tuple[int, ...]]]:
    """All (sensor subset, actuator subset) pairs, non-empty union, sorted."""
    sy = [
        tuple(c)
        for r in range(len(res.sensors) + 1)
        for c in itertools.combinations(res.sensors, r)
    ]
    su = [
        tuple(c)
        for r in range(len(res.actuators) + 1)
        for c in itertools.combinations(res.actuators, r)
    ]
    pairs = [(a, b) for a in sy for b in su if a or b]
    pairs.sort()
    return pairs


def _permutation_pairs(res: ResourceSet):
    """All permutation pairs over the compromised sets except identity/identity."""
    def perms(idx: tuple[int, ...]):
        return [dict(zip(idx, p)) for p in itertools.permutations(idx)]

    out = []
    for py in perms(res.sensors):
        for pu in perms(res.actuators):
            if all(k == v for k, v in py.items()) and all(k == v for k, v in pu.items()):
                continue
            out.append((py, pu))
    return out


def candidates(
    spec: StrategySpec,
    dims: SystemDims,
    N: int,
    plant: Optional[PlantModel] = None,
    nominal: Optional[NominalLoop] = None,
) -> list[Candidate]:
    """Concrete attack configurations to evaluate for one strategy.

    Denial and sign flips search all non-empty sub-subsets of the granted
    resources (the attacker may leave channels untouched); rerouting searches
    all permutation pairs other than identity/identity unless the spec pins
    them. Injection-style strategies have a single configuration.
    """
    res = spec.resources
    res.validate(dims)
    kind = spec.kind
    if kind in ("dos", "sign_alternation"):
        pairs = _subset_pairs(res)
        if len(pairs) > SUBSET_CAP:
            raise EnumerationCapExceeded(
                f"{len(pairs)} subset combinations exceed the cap {SUBSET_CAP}"
            )
        build = build_dos if kind == "dos" else build_sign_alternation
        return [
            Candidate({"sensors": sy, "actuators": su}, build(ResourceSet(sy, su), dims, N))
            for sy, su in pairs
        ]
    if kind == "rerouting":
        if spec.pi_y is not None or spec.pi_u is not None:
            pairs = [(dict(spec.pi_y or {}), dict(spec.pi_u or {}))]
        else:
            pairs = _permutation_pairs(res)
        if len(pairs) > SUBSET_CAP:
            raise EnumerationCapExceeded(
                f"{len(pairs)} permutation pairs exceed the cap {SUBSET_CAP}"
            )
        out = []
        for py, pu in pairs:
            sub = StrategySpec(kind="rerouting", resources=res, pi_y=py, pi_u=pu)
            out.append(Candidate({"pi_y": py, "pi_u": pu}, build_rerouting(sub, dims, N)))
        return out
    if kind == "fdi":
        return [Candidate(None, build_fdi(res, dims, N))]
    if kind == "bias_injection":
        return [Candidate(None, build_bias(res, dims, N))]
    if kind == "fdi_plus_dos":
        return [Candidate(None, build_fdi_plus_dos(spec, dims, N))]
    if kind in ("replay_dos", "replay_bias"):
        if plant is None or nominal is None:
            raise ValueError("replay strategies need the plant and nominal loop")
        mode = "dos" if kind == "replay_dos" else "bias"
        return [
            Candidate(None, build_replay(res, plant, nominal, dims.n_yr, N, actuator_mode=mode))
        ]
    raise ValueError(f"unhandled strategy kind {kind!r}")
