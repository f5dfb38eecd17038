"""Sum-rule fusion of per-model class scores and accuracy computation.

A model id is "<family_tag>@<max_input>" with an optional "#<note>"
suffix that is ignored when parsing, e.g. "melu_k8@255#fold2".  Families
whose behaviour does not change with max_input (relu, leaky_relu, elu,
selu, prelu) share one effective key across blocks, so the extended
ensemble never double-weights them.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .activations import SCALE_DEPENDENT_KINDS, family_from_tag
from .errors import ConfigurationError


@dataclass
class ScoreMatrix:
    """(samples x classes) scores from one model, tagged with its id."""

    scores: np.ndarray
    model_id: str = ""

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=float)
        if self.scores.ndim != 2:
            raise ConfigurationError(
                f"score matrix must be 2-D, got shape {self.scores.shape}")


@dataclass(frozen=True)
class EnsembleSpec:
    kind: str                  # "ens" or "eens"
    members: tuple
    max_input: float | None = None

    @property
    def ensemble_id(self) -> str:
        if self.kind == "ens":
            return f"ens@{self.max_input:g}"
        return "eens"


def parse_model_id(model_id: str) -> tuple[str, float]:
    """Split 'family@max_input[#note]' into (family_tag, max_input)."""
    base = model_id.split("#", 1)[0]
    if "@" not in base:
        raise ConfigurationError(
            f"model id {model_id!r} must look like 'family@max_input'")
    tag, _, mi = base.partition("@")
    try:
        return tag, float(mi)
    except ValueError as exc:
        raise ConfigurationError(f"bad max_input in model id {model_id!r}") from exc


def effective_key(model_id: str) -> str:
    """Key identifying the trained model up to irrelevant max_input tags."""
    tag, mi = parse_model_id(model_id)
    family = family_from_tag(tag, max_input=mi if mi > 0 else 1.0)
    if family.kind in SCALE_DEPENDENT_KINDS:
        return f"{tag}@{mi:g}"
    return tag


def fuse_sum(matrices: list[ScoreMatrix]) -> ScoreMatrix:
    """Element-wise sum of member scores (unnormalized; argmax unchanged)."""
    if not matrices:
        raise ConfigurationError("cannot fuse an empty list of score matrices")
    shape = matrices[0].scores.shape
    for m in matrices[1:]:
        if m.scores.shape != shape:
            raise ConfigurationError(
                f"score shape mismatch: {m.scores.shape} vs {shape}")
    total = matrices[0].scores.copy()
    for m in matrices[1:]:
        total += m.scores
    return ScoreMatrix(total, "+".join(m.model_id for m in matrices))


def accuracy(scores, labels) -> float:
    """Percentage of rows whose argmax matches the label.

    Ties break to the lowest class index.
    """
    mat = scores.scores if isinstance(scores, ScoreMatrix) else np.asarray(scores)
    labels = np.asarray(labels)
    if len(labels) != mat.shape[0]:
        raise ConfigurationError(
            f"{mat.shape[0]} score rows but {len(labels)} labels")
    predictions = mat.argmax(axis=1)
    return 100.0 * float(np.mean(predictions == labels))


def build_ensembles(model_ids: list[str]) -> list[EnsembleSpec]:
    """One per-block ensemble per distinct max_input plus one extended ensemble.

    The extended ensemble spans every block with scale-independent
    families included once.
    """
    if len(set(model_ids)) != len(model_ids):
        raise ConfigurationError("duplicate model ids")
    by_block: dict[float, list[str]] = {}
    for mid in model_ids:
        _, mi = parse_model_id(mid)
        by_block.setdefault(mi, []).append(mid)

    specs = [EnsembleSpec("ens", tuple(members), max_input=mi)
             for mi, members in by_block.items()]

    seen: set[str] = set()
    extended: list[str] = []
    for mid in model_ids:
        key = effective_key(mid)
        if key not in seen:
            seen.add(key)
            extended.append(mid)
    specs.append(EnsembleSpec("eens", tuple(extended)))
    return specs


# ------------------------------------------------------------------
# CSV interchange: header line is the model id, then one row per sample.
# ------------------------------------------------------------------

def save_scores_csv(matrix: ScoreMatrix, path) -> None:
    lines = [matrix.model_id]
    lines.extend(",".join(repr(float(v)) for v in row) for row in matrix.scores)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_scores_csv(path) -> ScoreMatrix:
    text = Path(path).read_text(encoding="utf-8")
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ConfigurationError(f"empty score file {path}")
    rows = [[float(v) for v in ln.split(",")] for ln in lines[1:]]
    return ScoreMatrix(np.array(rows, dtype=float), lines[0].strip())
