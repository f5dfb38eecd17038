"""Finite-difference validation of the activation kernels.

Central differences are exact (to rounding) for piecewise-linear kernels
as long as the probe interval does not straddle a kink, so points are
nudged until every sampled input keeps a margin above the step size from
every kink.  Relative errors are floored at unit scale:
|analytic - numeric| / max(1, |analytic|, |numeric|).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .activations import (
    ActivationFamily,
    FIXED_KINDS,
    Kind,
)

KINK_MARGIN = 1e-3
FD_STEP_CAP = 4e-4   # keeps x +/- h on one side of any kink at the margin
DEFAULT_TOL = 1e-6

# Parameter indices whose published-sign mode intentionally disagrees with
# the analytic derivative: SReLU thresholds and APLU anchors.
def _sign_mode_skips(family: ActivationFamily) -> list[int]:
    if family.kind is Kind.SRELU:
        return [0, 2]
    if family.kind is Kind.APLU:
        n = family.aplu_hinge_count
        return list(range(n, 2 * n))
    return []


@dataclass
class CheckFailure:
    family: str
    target: str          # "dx" or "param[i]"
    x: float
    analytic: float
    numeric: float
    rel_err: float


@dataclass
class FamilyCheckResult:
    family: ActivationFamily
    max_rel_err: float = 0.0
    checked: list[str] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)
    failures: list[CheckFailure] = field(default_factory=list)

    def passed(self, tol: float = DEFAULT_TOL) -> bool:
        return self.max_rel_err <= tol


def _rel_err(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return np.abs(analytic - numeric) / denom


def _sample_params(family: ActivationFamily, rng: np.random.Generator) -> np.ndarray | None:
    m = family.max_input
    if family.kind in FIXED_KINDS:
        return None
    if family.kind is Kind.PRELU:
        return rng.uniform(-1.0, 1.0, size=1)
    if family.kind is Kind.SRELU:
        return np.array([rng.uniform(-0.5 * m, 0.5 * m),
                         rng.uniform(-1.0, 1.0),
                         rng.uniform(0.5 * m, 1.5 * m),
                         rng.uniform(-1.0, 2.0)])
    if family.kind is Kind.APLU:
        n = family.aplu_hinge_count
        return np.concatenate([rng.uniform(-1.0, 1.0, size=n),
                               rng.uniform(0.0, m, size=n)])
    return rng.uniform(-1.0, 1.0, size=family.param_count)


def _sample_points(family: ActivationFamily, params, n_points: int,
                   rng: np.random.Generator) -> np.ndarray:
    span = 4.5 * family.max_input
    x = rng.uniform(-span, span, size=n_points)
    kinks = family.kink_locations(params)
    if kinks.size:
        for _ in range(64):
            dist = np.abs(x[:, None] - kinks[None, :]).min(axis=1)
            close = dist <= KINK_MARGIN
            if not close.any():
                break
            x[close] += 2.5 * KINK_MARGIN
    return x


def check_family(family: ActivationFamily, n_points: int = 1000,
                 seed: int = 0, paper_gradients: bool = False,
                 tol: float = DEFAULT_TOL) -> FamilyCheckResult:
    """Compare analytic derivatives with central differences at seeded points."""
    rng = np.random.default_rng(seed)
    params = _sample_params(family, rng)
    x = _sample_points(family, params, n_points, rng)
    result = FamilyCheckResult(family=family)

    def record(target: str, analytic: np.ndarray, numeric: np.ndarray):
        errs = _rel_err(analytic, numeric)
        result.max_rel_err = max(result.max_rel_err, float(errs.max()))
        result.checked.append(target)
        for i in np.flatnonzero(errs > tol):
            result.failures.append(CheckFailure(
                family=family.tag, target=target, x=float(x[i]),
                analytic=float(analytic[i]), numeric=float(numeric[i]),
                rel_err=float(errs[i])))

    def value_at(xq, pq):
        v, _, _ = family.evaluate(xq, pq, paper_gradients=paper_gradients)
        return v

    _, dx, dparams = family.evaluate(x, params, paper_gradients=paper_gradients)

    h = np.minimum(1e-5 * np.maximum(1.0, np.abs(x)), FD_STEP_CAP)
    numeric_dx = (value_at(x + h, params) - value_at(x - h, params)) / (2 * h)
    record("dx", dx, numeric_dx)

    if params is not None:
        skips = set(_sign_mode_skips(family)) if paper_gradients else set()
        for i in range(params.size):
            if i in skips:
                result.skipped.append(f"param[{i}]")
                continue
            hp = min(1e-5 * max(1.0, abs(params[i])), FD_STEP_CAP)
            plus = params.copy()
            plus[i] += hp
            minus = params.copy()
            minus[i] -= hp
            numeric = (value_at(x, plus) - value_at(x, minus)) / (2 * hp)
            record(f"param[{i}]", dparams[..., i], numeric)
    return result


def network_kink_margin(net, x: np.ndarray) -> float:
    """Smallest distance from any pre-activation value to a kink of its
    channel's activation, over one forward pass."""
    from .nn import Activation
    margin = np.inf
    h = np.asarray(x, dtype=float)
    for layer in net.layers:
        if isinstance(layer, Activation) and layer.groups:
            block = np.concatenate([g.values for g in layer.groups], axis=-1)
            for c in range(layer.channels):
                kinks = layer.family.kink_locations(block[c])
                if kinks.size:
                    z = h[:, c].reshape(-1)
                    margin = min(margin, float(
                        np.abs(z[:, None] - kinks[None, :]).min()))
        elif isinstance(layer, Activation):
            kinks = layer.family.kink_locations()
            if kinks.size:
                z = h.reshape(-1)
                margin = min(margin, float(
                    np.abs(z[:, None] - kinks[None, :]).min()))
        h = layer.forward(h)
    return margin


def jitter_away_from_kinks(net, x: np.ndarray, labels,
                           rng: np.random.Generator,
                           margin: float = 1e-4, tries: int = 50) -> np.ndarray:
    """Additively jitter the batch until no pre-activation sits near a kink."""
    x = np.asarray(x, dtype=float)
    for _ in range(tries):
        if network_kink_margin(net, x) > margin:
            return x
        x = x + rng.uniform(2.0 * margin, 20.0 * margin, size=x.shape)
    return x


@dataclass
class NetworkCheckResult:
    max_rel_err: float
    worst_group: str
    failures: list = field(default_factory=list)

    def passed(self, tol: float = 1e-5) -> bool:
        return self.max_rel_err <= tol


def check_network(net, x: np.ndarray, labels, tol: float = 1e-5,
                  base_step: float = 1e-6) -> NetworkCheckResult:
    """Compare every parameter's backprop gradient with central differences
    of the total loss.

    A probe step can push a pre-activation across an activation kink and
    invalidate that single estimate, so any parameter exceeding the
    tolerance is deterministically re-probed with a smaller step before
    being reported as a failure.
    """
    labels = np.asarray(labels)
    net.loss_and_backward(x, labels)
    analytic = [g.grads.copy() for g in net.param_groups]
    result = NetworkCheckResult(max_rel_err=0.0, worst_group="")
    for gi, group in enumerate(net.param_groups):
        flat = group.values.reshape(-1)
        aflat = analytic[gi].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            rel = np.inf
            h = base_step * max(1.0, abs(orig))
            for _ in range(3):
                flat[i] = orig + h
                lp = net.loss_only(x, labels)
                flat[i] = orig - h
                lm = net.loss_only(x, labels)
                flat[i] = orig
                numeric = (lp - lm) / (2.0 * h)
                rel = float(_rel_err(np.array(aflat[i]), np.array(numeric)))
                if rel <= tol:
                    break
                h /= 8.0
            if rel > result.max_rel_err:
                result.max_rel_err = rel
                result.worst_group = f"{group.name}[{i}]"
            if rel > tol:
                result.failures.append((group.name, i, float(aflat[i]), rel))
    return result


def default_suite(max_inputs=(1.0, 255.0, 256.0), melu_totals=(4, 8),
                  aplu_hinges: int = 5) -> list[ActivationFamily]:
    """Every family at every scale-relevant max_input."""
    families = [ActivationFamily(k) for k in
                (Kind.RELU, Kind.LEAKY_RELU, Kind.ELU, Kind.SELU, Kind.PRELU)]
    for m in max_inputs:
        families.append(ActivationFamily(Kind.SRELU, max_input=m))
        families.append(ActivationFamily(Kind.APLU, max_input=m,
                                         aplu_hinge_count=aplu_hinges))
        for k in melu_totals:
            families.append(ActivationFamily(Kind.MELU, max_input=m,
                                             melu_total_params=k))
    return families


def run_suite(families: list[ActivationFamily] | None = None,
              n_points: int = 1000, seed: int = 0,
              paper_gradients: bool = False,
              tol: float = DEFAULT_TOL) -> list[FamilyCheckResult]:
    if families is None:
        families = default_suite()
    return [check_family(f, n_points=n_points, seed=seed + i,
                         paper_gradients=paper_gradients, tol=tol)
            for i, f in enumerate(families)]
