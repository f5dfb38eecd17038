"""Element-wise kernels for the eight activation families.

Every kernel returns, alongside the forward value, the derivative with
respect to the input and (for the learnable families) the derivative with
respect to each learnable parameter.  All functions accept scalars or
numpy arrays; per-channel parameter blocks broadcast against the input
along a trailing axis.

Branch convention: every boundary of the form "x >= 0" belongs to the
non-negative branch, so e.g. relu_dx(0.0) == 1.0.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING

import numpy as np

from .errors import ConfigurationError

if TYPE_CHECKING:
    from .basis import MexicanHatBasis

# Fixed constants of the non-learnable families.
LEAKY_SLOPE = 0.01
ELU_ALPHA = 1.0
SELU_ALPHA = 1.6733
SELU_SCALE = 1.0507

# Coefficient of the squared penalty applied to APLU hinge slopes.
APLU_SLOPE_L2 = 0.001


class Kind(str, Enum):
    RELU = "relu"
    LEAKY_RELU = "leaky_relu"
    ELU = "elu"
    SELU = "selu"
    PRELU = "prelu"
    SRELU = "srelu"
    APLU = "aplu"
    MELU = "melu"


FIXED_KINDS = frozenset({Kind.RELU, Kind.LEAKY_RELU, Kind.ELU, Kind.SELU})
LEARNABLE_KINDS = frozenset({Kind.PRELU, Kind.SRELU, Kind.APLU, Kind.MELU})
# Families whose behaviour changes with the max_input hyperparameter.
SCALE_DEPENDENT_KINDS = frozenset({Kind.SRELU, Kind.APLU, Kind.MELU})


# ---------------------------------------------------------------------------
# fixed families
# ---------------------------------------------------------------------------

def relu(x):
    x = np.asarray(x, dtype=float)
    return np.where(x >= 0.0, x, 0.0)


def relu_dx(x):
    x = np.asarray(x, dtype=float)
    return np.where(x >= 0.0, 1.0, 0.0)


def leaky_relu(x, slope: float = LEAKY_SLOPE):
    x = np.asarray(x, dtype=float)
    return np.where(x >= 0.0, x, slope * x)


def leaky_relu_dx(x, slope: float = LEAKY_SLOPE):
    x = np.asarray(x, dtype=float)
    return np.where(x >= 0.0, 1.0, slope)


def elu(x, alpha: float = ELU_ALPHA):
    x = np.asarray(x, dtype=float)
    # expm1 on the capped argument: accurate near 0 and no spurious overflow
    # in the branch that np.where discards.
    return np.where(x >= 0.0, x, alpha * np.expm1(np.minimum(x, 0.0)))


def elu_dx(x, alpha: float = ELU_ALPHA):
    x = np.asarray(x, dtype=float)
    return np.where(x >= 0.0, 1.0, alpha * np.exp(np.minimum(x, 0.0)))


def selu(x, alpha: float = SELU_ALPHA, scale: float = SELU_SCALE):
    x = np.asarray(x, dtype=float)
    return np.where(x >= 0.0, scale * x,
                    scale * alpha * np.expm1(np.minimum(x, 0.0)))


def selu_dx(x, alpha: float = SELU_ALPHA, scale: float = SELU_SCALE):
    x = np.asarray(x, dtype=float)
    return np.where(x >= 0.0, scale,
                    scale * alpha * np.exp(np.minimum(x, 0.0)))


_FIXED_FORWARD = {
    Kind.RELU: relu,
    Kind.LEAKY_RELU: leaky_relu,
    Kind.ELU: elu,
    Kind.SELU: selu,
}
_FIXED_DX = {
    Kind.RELU: relu_dx,
    Kind.LEAKY_RELU: leaky_relu_dx,
    Kind.ELU: elu_dx,
    Kind.SELU: selu_dx,
}


def fixed_forward(kind: Kind, x):
    """Forward value of a non-learnable family (relu, leaky_relu, elu, selu)."""
    if kind not in FIXED_KINDS:
        raise ConfigurationError(f"{kind} is not a fixed activation family")
    return _FIXED_FORWARD[Kind(kind)](x)


def fixed_dx(kind: Kind, x):
    """Input derivative of a non-learnable family."""
    if kind not in FIXED_KINDS:
        raise ConfigurationError(f"{kind} is not a fixed activation family")
    return _FIXED_DX[Kind(kind)](x)


# ---------------------------------------------------------------------------
# triangular bump ("Mexican hat type" function)
# ---------------------------------------------------------------------------

def mexican_hat(x, center, half_width):
    """Triangular bump max(half_width - |x - center|, 0).

    Zero outside (center - half_width, center + half_width), peak value
    half_width at x == center.
    """
    half_width = np.asarray(half_width, dtype=float)
    if np.any(half_width <= 0.0):
        raise ConfigurationError("mexican_hat half_width must be positive")
    x = np.asarray(x, dtype=float)
    return np.maximum(half_width - np.abs(x - center), 0.0)


def mexican_hat_dx(x, center, half_width):
    """Slope of the triangular bump: +1 rising, -1 falling, 0 outside.

    Returns 0 exactly at the three kinks (the midpoint of the valid
    subgradient interval).
    """
    half_width = np.asarray(half_width, dtype=float)
    if np.any(half_width <= 0.0):
        raise ConfigurationError("mexican_hat half_width must be positive")
    x = np.asarray(x, dtype=float)
    d = x - np.asarray(center, dtype=float)
    inside = np.abs(d) < half_width
    return np.where(inside, -np.sign(d), 0.0)


# ---------------------------------------------------------------------------
# learnable families
# ---------------------------------------------------------------------------

def prelu_eval(x, slope):
    """PReLU with learnable negative-side slope.

    Returns (value, dvalue/dx, dvalue/dslope); `slope` broadcasts against x.
    """
    x = np.asarray(x, dtype=float)
    slope = np.asarray(slope, dtype=float)
    neg = x < 0.0
    value = np.where(neg, slope * x, x)
    dx = np.where(neg, slope, 1.0)
    dslope = np.where(neg, x, np.zeros_like(x))
    return value, dx, dslope


def srelu_init(max_input: float) -> np.ndarray:
    """Initial SReLU block (t_left, slope_left, t_right, slope_right)."""
    return np.array([0.0, 0.0, float(max_input), 1.0])


def srelu_eval(x, params, paper_gradients: bool = False):
    """S-shaped ReLU with two learnable thresholds and two learnable slopes.

    `params` holds (t_left, slope_left, t_right, slope_right) in its last
    axis and broadcasts against x.  Returns (value, dx, dparams) where
    dparams stacks the four parameter partials in block order.

    With paper_gradients=True the threshold partials follow the signs
    printed in the original SReLU formulation (-slope on the active side)
    instead of the analytic derivative of the forward formula; value and
    dx are identical in both modes.
    """
    params = np.asarray(params, dtype=float)
    if params.shape[-1] != 4:
        raise ConfigurationError(
            f"srelu parameter block must have length 4, got {params.shape[-1]}")
    x = np.asarray(x, dtype=float)
    t_left = params[..., 0]
    s_left = params[..., 1]
    t_right = params[..., 2]
    s_right = params[..., 3]

    # Degenerate t_left > t_right is evaluated branch-wise, first branch wins.
    m_left = x < t_left
    m_right = (x > t_right) & ~m_left

    value = np.where(m_left, t_left + s_left * (x - t_left),
                     np.where(m_right, t_right + s_right * (x - t_right), x))
    dx = np.where(m_left, s_left, np.where(m_right, s_right, 1.0))

    zeros = np.zeros(np.broadcast(x, t_left).shape)
    d_sleft = np.where(m_left, x - t_left, zeros)
    d_sright = np.where(m_right, x - t_right, zeros)
    if paper_gradients:
        d_tleft = np.where(m_left, -s_left, zeros)
        d_tright = np.where(m_right, -s_right, zeros)
    else:
        d_tleft = np.where(m_left, 1.0 - s_left, zeros)
        d_tright = np.where(m_right, 1.0 - s_right, zeros)

    dparams = np.stack([d_tleft, d_sleft, d_tright, d_sright], axis=-1)
    return value, dx, dparams


def aplu_eval(x, params, paper_gradients: bool = False):
    """Adaptive piecewise-linear unit: ReLU plus learnable hinge terms.

    `params` holds (slope_1..slope_n, anchor_1..anchor_n) in its last axis;
    hinge c contributes slope_c * max(0, anchor_c - x), active for
    x < anchor_c.  Returns (value, dx, dparams) with dparams in block
    order.  paper_gradients=True flips the sign of the anchor partials to
    match the original APLU formulation; value and dx are unchanged.
    """
    params = np.asarray(params, dtype=float)
    if params.shape[-1] % 2 != 0 or params.shape[-1] == 0:
        raise ConfigurationError(
            f"aplu parameter block must have even positive length, got {params.shape[-1]}")
    n = params.shape[-1] // 2
    slopes = params[..., :n]
    anchors = params[..., n:]
    x = np.asarray(x, dtype=float)
    xe = x[..., None]

    active = xe < anchors
    hinge = np.where(active, anchors - xe, 0.0)
    value = relu(x) + np.sum(slopes * hinge, axis=-1)
    dx = relu_dx(x) - np.sum(np.where(active, slopes, 0.0), axis=-1)

    d_slopes = hinge
    d_anchors = np.where(active, -slopes if paper_gradients else slopes, 0.0)
    d_slopes, d_anchors = np.broadcast_arrays(d_slopes, d_anchors)
    dparams = np.concatenate([d_slopes, d_anchors], axis=-1)
    return value, dx, dparams


def melu_eval(x, coeffs, basis: "MexicanHatBasis"):
    """Mexican ReLU: PReLU plus a learnable combination of triangular bumps.

    `coeffs` holds (prelu_slope, bump_1, ..., bump_{k-1}) in its last axis;
    the basis must carry exactly k - 1 bumps.  Returns (value, dx, dcoeffs).
    With all coefficients zero the value equals relu(x) exactly.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    k = coeffs.shape[-1]
    if k < 1:
        raise ConfigurationError("melu needs at least the prelu coefficient")
    if len(basis) != k - 1:
        raise ConfigurationError(
            f"melu coefficient block of length {k} needs a basis of "
            f"{k - 1} hats, got {len(basis)}")
    x = np.asarray(x, dtype=float)

    p_value, p_dx, p_dslope = prelu_eval(x, coeffs[..., 0])
    if k == 1:
        return p_value, p_dx, p_dslope[..., None]

    centers = np.asarray(basis.centers)
    widths = np.asarray(basis.half_widths)
    xe = x[..., None]
    phi = np.maximum(widths - np.abs(xe - centers), 0.0)
    d = xe - centers
    phi_dx = np.where(np.abs(d) < widths, -np.sign(d), 0.0)

    bump_coeffs = coeffs[..., 1:]
    value = p_value + np.sum(bump_coeffs * phi, axis=-1)
    dx = p_dx + np.sum(bump_coeffs * phi_dx, axis=-1)

    phi_b = np.broadcast_to(phi, p_dslope.shape + (k - 1,))
    dcoeffs = np.concatenate([p_dslope[..., None], phi_b], axis=-1)
    return value, dx, dcoeffs


# ---------------------------------------------------------------------------
# family descriptor
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ActivationFamily:
    """One of the eight activation families with its hyperparameters.

    melu_total_params counts every learnable coefficient per channel,
    including the PReLU slope, so a family with melu_total_params=8 uses
    7 bumps.  aplu_hinge_count is the number of hinge terms per channel.
    """

    kind: Kind
    max_input: float = 256.0
    melu_total_params: int = 8
    aplu_hinge_count: int = 5

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if self.max_input <= 0:
            raise ConfigurationError("max_input must be positive")
        if self.kind is Kind.MELU:
            n_hats = self.melu_total_params - 1
            if self.melu_total_params < 1 or (n_hats and (n_hats + 1) & n_hats):
                raise ConfigurationError(
                    "melu_total_params must be 1 plus a complete dyadic hat "
                    f"count (1, 2, 4, 8, ...), got {self.melu_total_params}")
        if self.kind is Kind.APLU and self.aplu_hinge_count < 1:
            raise ConfigurationError("aplu_hinge_count must be >= 1")

    @property
    def param_count(self) -> int:
        """Learnable parameters per channel."""
        if self.kind in FIXED_KINDS:
            return 0
        if self.kind is Kind.PRELU:
            return 1
        if self.kind is Kind.SRELU:
            return 4
        if self.kind is Kind.APLU:
            return 2 * self.aplu_hinge_count
        return self.melu_total_params

    @property
    def depends_on_max_input(self) -> bool:
        return self.kind in SCALE_DEPENDENT_KINDS

    @property
    def tag(self) -> str:
        """Short name including the variant-defining hyperparameter."""
        if self.kind is Kind.MELU:
            return f"melu_k{self.melu_total_params}"
        if self.kind is Kind.APLU:
            return f"aplu_n{self.aplu_hinge_count}"
        return self.kind.value

    def basis(self) -> "MexicanHatBasis":
        if self.kind is not Kind.MELU:
            raise ConfigurationError(f"{self.tag} has no bump basis")
        from .basis import MexicanHatBasis, build_melu_basis
        if self.melu_total_params == 1:
            return MexicanHatBasis(max_input=self.max_input, centers=(), half_widths=())
        return build_melu_basis(self.max_input, self.melu_total_params - 1)

    def init_channel_params(self, channels: int, rng: np.random.Generator):
        """Initial per-channel parameter arrays as (name, values, lr_scale, l2) tuples.

        APLU anchors draw from rng; everything else is deterministic.
        """
        if self.kind in FIXED_KINDS:
            return []
        if self.kind is Kind.PRELU:
            return [("slope", np.zeros((channels, 1)), 1.0, 0.0)]
        if self.kind is Kind.SRELU:
            block = np.tile(srelu_init(self.max_input), (channels, 1))
            return [("thresholds_slopes", block, 1.0, 0.0)]
        if self.kind is Kind.APLU:
            n = self.aplu_hinge_count
            scale = 1.0 / self.max_input
            anchors = rng.uniform(0.0, self.max_input, size=(channels, n))
            return [
                ("hinge_slopes", np.zeros((channels, n)), scale, APLU_SLOPE_L2),
                ("hinge_anchors", anchors, scale, 0.0),
            ]
        return [("bump_coeffs", np.zeros((channels, self.melu_total_params)), 1.0, 0.0)]

    def evaluate(self, x, params=None, paper_gradients: bool = False):
        """Unified kernel: returns (value, dx, dparams-or-None).

        `params` is the per-channel block (last axis length param_count)
        broadcastable against x, or None for the fixed families.
        """
        if self.kind in FIXED_KINDS:
            return fixed_forward(self.kind, x), fixed_dx(self.kind, x), None
        if params is None:
            raise ConfigurationError(f"{self.tag} requires a parameter block")
        params = np.asarray(params, dtype=float)
        if params.shape[-1] != self.param_count:
            raise ConfigurationError(
                f"{self.tag} expects parameter blocks of length "
                f"{self.param_count}, got {params.shape[-1]}")
        if self.kind is Kind.PRELU:
            value, dx, dslope = prelu_eval(x, params[..., 0])
            return value, dx, dslope[..., None]
        if self.kind is Kind.SRELU:
            return srelu_eval(x, params, paper_gradients=paper_gradients)
        if self.kind is Kind.APLU:
            return aplu_eval(x, params, paper_gradients=paper_gradients)
        return melu_eval(x, params, self.basis())

    def kink_locations(self, params=None) -> np.ndarray:
        """Input values where this family is non-differentiable.

        For parameterised families `params` must be a single channel block.
        """
        if self.kind in FIXED_KINDS or self.kind is Kind.PRELU:
            # ELU is C1 at 0 but its curvature jump still spoils central
            # differences, so 0 is excluded for every family.
            return np.array([0.0])
        if self.kind is Kind.SRELU:
            p = np.asarray(params, dtype=float).reshape(-1)
            return np.array([p[0], p[2]])
        if self.kind is Kind.APLU:
            p = np.asarray(params, dtype=float).reshape(-1)
            n = p.size // 2
            return np.concatenate([[0.0], p[n:]])
        kinks = [0.0]
        for center, width in zip(*self.basis().schedule_arrays()):
            kinks.extend((center - width, center, center + width))
        return np.unique(np.asarray(kinks))

    def to_dict(self) -> dict:
        d = {"kind": self.kind.value, "max_input": self.max_input}
        if self.kind is Kind.MELU:
            d["melu_total_params"] = self.melu_total_params
            b = self.basis()
            d["basis"] = {"centers": list(b.centers),
                          "half_widths": list(b.half_widths)}
        if self.kind is Kind.APLU:
            d["aplu_hinge_count"] = self.aplu_hinge_count
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ActivationFamily":
        return cls(kind=Kind(d["kind"]),
                   max_input=float(d.get("max_input", 256.0)),
                   melu_total_params=int(d.get("melu_total_params", 8)),
                   aplu_hinge_count=int(d.get("aplu_hinge_count", 5)))


def family_from_tag(tag: str, max_input: float = 256.0) -> ActivationFamily:
    """Parse tags like 'relu', 'melu_k8', 'aplu_n5' into a family."""
    tag = tag.strip().lower()
    try:
        if tag.startswith("melu_k"):
            return ActivationFamily(Kind.MELU, max_input=max_input,
                                    melu_total_params=int(tag[6:]))
        if tag == "melu":
            return ActivationFamily(Kind.MELU, max_input=max_input)
        if tag.startswith("aplu_n"):
            return ActivationFamily(Kind.APLU, max_input=max_input,
                                    aplu_hinge_count=int(tag[6:]))
        if tag == "aplu":
            return ActivationFamily(Kind.APLU, max_input=max_input)
        return ActivationFamily(Kind(tag), max_input=max_input)
    except ValueError as exc:
        raise ConfigurationError(f"unknown activation family {tag!r}") from exc
