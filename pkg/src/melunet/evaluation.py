"""Cross-validation driver, augmentation, and the signed-rank test.

The experiment grid trains every requested (dataset, family, max_input)
cell with stratified k-fold cross-validation, assembles out-of-fold score
matrices, fuses them into per-block and extended ensembles, and reports
accuracies together with pairwise signed-rank comparisons.  Every cell
derives its own seed from the master seed, so results are independent of
execution order and bit-reproducible.
"""

from __future__ import annotations

import hashlib
import math
import warnings as _warnings
from dataclasses import dataclass, field

import numpy as np

from .activations import ActivationFamily
from .ensemble import ScoreMatrix, accuracy, build_ensembles, fuse_sum
from .errors import ConfigurationError, TrainingFault
from .nn import Network, TrainConfig, build_small_cnn, train, Dense, Activation, Flatten

# ------------------------------------------------------------------
# stratified k-fold
# ------------------------------------------------------------------


@dataclass(frozen=True)
class FoldSplit:
    k: int
    assignments: np.ndarray

    def test_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == fold)

    def train_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments != fold)


def kfold_split(n: int, k: int, labels, seed: int) -> FoldSplit:
    """Stratified assignment: every class round-robins over the folds.

    Fold sizes differ by at most one overall and within each class.
    """
    if k < 2:
        raise ConfigurationError(f"need k >= 2 folds, got {k}")
    if n < k:
        raise ConfigurationError(f"cannot split {n} samples into {k} folds")
    labels = np.asarray(labels)
    if len(labels) != n:
        raise ConfigurationError(f"{n} samples but {len(labels)} labels")
    rng = np.random.default_rng(seed)
    assignments = np.full(n, -1, dtype=int)
    next_fold = 0
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        if len(idx) < k:
            _warnings.warn(
                f"class {cls} has only {len(idx)} samples for {k} folds; "
                "it will miss some folds")
        for i in rng.permutation(idx):
            assignments[i] = next_fold
            next_fold = (next_fold + 1) % k
    return FoldSplit(k=k, assignments=assignments)


# ------------------------------------------------------------------
# augmentation: random flips plus anisotropic upscale and center crop
# ------------------------------------------------------------------


def _axis_coords(size: int, scale: float):
    new = max(size, int(round(size * scale)))
    offset = (new - size) // 2
    src = (np.arange(size) + offset + 0.5) * (size / new) - 0.5
    src = np.clip(src, 0.0, size - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, size - 1)
    return lo, hi, src - lo


def apply_augmentation(image: np.ndarray, flip_v: bool, flip_h: bool,
                       scale_h: float, scale_w: float) -> np.ndarray:
    """Deterministic core: flips, then bilinear upscale with center crop.

    Scale factors below 1 are treated as 1.  With both flips off and both
    scales 1 the image is returned unchanged.
    """
    image = np.asarray(image, dtype=float)
    if image.ndim != 3 or image.shape[1] < 2 or image.shape[2] < 2:
        raise ConfigurationError(f"expected (C, H, W) with H, W >= 2, got {image.shape}")
    if flip_v:
        image = image[:, ::-1, :]
    if flip_h:
        image = image[:, :, ::-1]
    _, h, w = image.shape
    ylo, yhi, fy = _axis_coords(h, scale_h)
    xlo, xhi, fx = _axis_coords(w, scale_w)
    fy = fy[:, None]
    fx = fx[None, :]
    tl = image[:, ylo[:, None], xlo[None, :]]
    tr = image[:, ylo[:, None], xhi[None, :]]
    bl = image[:, yhi[:, None], xlo[None, :]]
    br = image[:, yhi[:, None], xhi[None, :]]
    return (tl * (1 - fy) * (1 - fx) + tr * (1 - fy) * fx
            + bl * fy * (1 - fx) + br * fy * fx)


def augment(image: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Random reflection on both axes plus two independent rescales in [1, 2]."""
    flip_v = rng.random() < 0.5
    flip_h = rng.random() < 0.5
    scale_h = rng.uniform(1.0, 2.0)
    scale_w = rng.uniform(1.0, 2.0)
    return apply_augmentation(image, flip_v, flip_h, scale_h, scale_w)


def augment_batch(batch: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    return np.stack([augment(img, rng) for img in batch])


# ------------------------------------------------------------------
# Wilcoxon signed-rank test
# ------------------------------------------------------------------


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float      # min(W+, W-)
    p_value: float
    n: int                # pairs left after dropping zero differences
    all_zero: bool
    method: str


def _average_ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    sv = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sv[j + 1] == sv[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _exact_counts(doubled_ranks: np.ndarray) -> np.ndarray:
    """counts[s] = number of sign assignments whose doubled W+ equals s.

    Aggregates the full 2**n enumeration by convolving one rank at a time;
    counts stay exact in int64 for n <= 20.
    """
    total = int(doubled_ranks.sum())
    counts = np.zeros(total + 1, dtype=np.int64)
    counts[0] = 1
    for r in doubled_ranks:
        r = int(r)
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[:total + 1 - r]
        counts = counts + shifted
    return counts


def _rank_sum_sf(z: float, excess_kurtosis: float) -> float:
    """Upper tail of the standardized rank sum.

    Normal tail plus the first Edgeworth term; the distribution is
    symmetric so the skewness term vanishes and the kurtosis term is the
    leading correction.
    """
    density = math.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    sf = 0.5 * math.erfc(z / math.sqrt(2.0))
    sf += density * excess_kurtosis / 24.0 * (z ** 3 - 3.0 * z)
    return min(1.0, max(0.0, sf))


def wilcoxon_signed_rank(a, b, alternative: str = "two-sided",
                         method: str = "auto") -> WilcoxonResult:
    """Paired signed-rank test of a against b.

    Zero differences are dropped; absolute differences receive average
    ranks on ties.  The exact branch aggregates all 2**n sign assignments
    (n <= 20 under method="auto"); larger n uses a tie-corrected normal
    approximation with continuity correction.  alternative="greater"
    tests whether a tends to exceed b.
    """
    if alternative not in ("two-sided", "greater", "less"):
        raise ConfigurationError(f"unknown alternative {alternative!r}")
    if method not in ("auto", "exact", "normal"):
        raise ConfigurationError(f"unknown method {method!r}")
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ConfigurationError("paired samples must be 1-D of equal length")
    d = a - b
    d = d[d != 0.0]
    n = d.size
    if n == 0:
        return WilcoxonResult(statistic=0.0, p_value=1.0, n=0,
                              all_zero=True, method="degenerate")

    ranks = _average_ranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    total = n * (n + 1) / 2.0
    statistic = min(w_plus, total - w_plus)

    use_exact = method == "exact" or (method == "auto" and n <= 20)
    if use_exact:
        doubled = np.rint(2.0 * ranks).astype(np.int64)
        counts = _exact_counts(doubled)
        w2 = int(round(2.0 * w_plus))
        denom = float(2 ** n)
        cdf = float(counts[:w2 + 1].sum()) / denom   # P(W+ <= w)
        sf = float(counts[w2:].sum()) / denom        # P(W+ >= w)
        if alternative == "greater":
            p = sf
        elif alternative == "less":
            p = cdf
        else:
            p = min(1.0, 2.0 * min(cdf, sf))
        return WilcoxonResult(statistic=statistic, p_value=p, n=n,
                              all_zero=False, method="exact")

    # sum(ranks**2)/4 equals n(n+1)(2n+1)/24 minus the usual tie term
    mu = float(ranks.sum()) / 2.0
    sigma2 = float((ranks ** 2).sum()) / 4.0
    sigma = math.sqrt(sigma2)
    if sigma == 0.0:
        return WilcoxonResult(statistic=statistic, p_value=1.0, n=n,
                              all_zero=False, method="normal")
    excess_kurtosis = -float((ranks ** 4).sum()) / 8.0 / (sigma2 ** 2)
    p_greater = _rank_sum_sf((w_plus - mu - 0.5) / sigma, excess_kurtosis)
    p_less = 1.0 - _rank_sum_sf((w_plus - mu + 0.5) / sigma, excess_kurtosis)
    if alternative == "greater":
        p = p_greater
    elif alternative == "less":
        p = p_less
    else:
        p = min(1.0, 2.0 * min(p_greater, p_less))
    return WilcoxonResult(statistic=statistic, p_value=p, n=n,
                          all_zero=False, method="normal")


# ------------------------------------------------------------------
# experiment driver
# ------------------------------------------------------------------


@dataclass
class DatasetSpec:
    name: str
    data: np.ndarray      # (N, C, H, W) images or (N, F) features
    labels: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int)
        if len(self.data) != len(self.labels):
            raise ConfigurationError(
                f"{len(self.data)} samples but {len(self.labels)} labels")
        if len(self.labels) and self.labels.min() < 0:
            raise ConfigurationError("labels must be nonnegative integers")

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) + 1


@dataclass(frozen=True)
class ExperimentConfig:
    train: TrainConfig = TrainConfig()
    folds: int = 5
    master_seed: int = 0
    augment: bool = False
    conv_channels: tuple = (4, 8)
    kernel: int = 3
    pool: int = 2
    dense_units: tuple = ()
    hidden_units: tuple = (16,)   # MLP head for flat (N, F) datasets
    paper_gradients: bool = False


def derive_seed(*parts) -> int:
    """Stable 64-bit seed from the master seed and cell coordinates."""
    text = "|".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def model_id_for(family: ActivationFamily) -> str:
    return f"{family.tag}@{family.max_input:g}"


def expand_roster(tags: list[str], max_inputs: list[float]) -> list[ActivationFamily]:
    """One family per (tag, max_input); scale-independent training is
    deduplicated downstream by effective key."""
    from .activations import family_from_tag
    roster = []
    for mi in max_inputs:
        for tag in tags:
            roster.append(family_from_tag(tag, max_input=mi))
    return roster


def _conv_blocks_that_fit(input_shape: tuple, conv_channels: tuple,
                          kernel: int, pool: int) -> tuple:
    """Longest prefix of conv_channels whose stacked conv+pool blocks keep a
    positive spatial size on this input."""
    _, h, w = input_shape
    fitted = []
    for out_ch in conv_channels:
        if h < kernel or w < kernel or (h - kernel + 1) // pool < 1 \
                or (w - kernel + 1) // pool < 1:
            break
        fitted.append(out_ch)
        h = (h - kernel + 1) // pool
        w = (w - kernel + 1) // pool
    return tuple(fitted)


def build_default_model(input_shape: tuple, n_classes: int,
                        family: ActivationFamily, rng: np.random.Generator,
                        cfg: ExperimentConfig) -> Network:
    if len(input_shape) == 3:
        conv_channels = _conv_blocks_that_fit(input_shape, cfg.conv_channels,
                                              cfg.kernel, cfg.pool)
        if conv_channels:
            return build_small_cnn(input_shape, n_classes, family, rng,
                                   conv_channels=conv_channels,
                                   kernel=cfg.kernel, pool=cfg.pool,
                                   dense_units=cfg.dense_units,
                                   paper_gradients=cfg.paper_gradients)
        flat = build_default_model((int(np.prod(input_shape)),), n_classes,
                                   family, rng, cfg)
        return Network([Flatten()] + flat.layers, input_shape)
    in_f = int(input_shape[0])
    denses = []
    for units in cfg.hidden_units:
        denses.append(Dense(in_f, units, rng=rng))
        in_f = units
    head = Dense(in_f, n_classes, rng=rng)
    layers: list = []
    for dense in denses:
        layers.append(dense)
        layers.append(Activation(family, dense.out_features, rng=rng,
                                 paper_gradients=cfg.paper_gradients))
    layers.append(head)
    return Network(layers, input_shape)


def _train_out_of_fold(ds: DatasetSpec, family: ActivationFamily,
                       split: FoldSplit, cfg: ExperimentConfig,
                       cell_token: str):
    oof = np.zeros((len(ds.labels), ds.n_classes))
    per_fold = []
    aug = augment_batch if cfg.augment else None
    for fold in range(split.k):
        seed = derive_seed(cfg.master_seed, ds.name, cell_token, fold)
        rng = np.random.default_rng(seed)
        net = build_default_model(ds.data.shape[1:], ds.n_classes, family,
                                  rng, cfg)
        tr = split.train_indices(fold)
        te = split.test_indices(fold)
        train(net, ds.data[tr], ds.labels[tr], cfg.train, rng=rng,
              augment_fn=aug)
        scores = net.predict_scores(ds.data[te])
        oof[te] = scores
        per_fold.append((fold, accuracy(scores, ds.labels[te])))
    return oof, per_fold


@dataclass
class ExperimentReport:
    datasets: list[str]
    model_ids: list[str]
    ensemble_ids: list[str]
    members: dict                       # ensemble id -> tuple of member ids
    cell_accuracy: dict                 # (dataset, row id) -> float
    fold_accuracy: dict                 # (dataset, model id, fold) -> float
    row_avg: dict                       # row id -> float
    wilcoxon: list                      # comparison records
    warnings: list = field(default_factory=list)
    cells: dict = field(default_factory=dict)   # (dataset, model id) -> ScoreMatrix
    fold_of_sample: dict = field(default_factory=dict)  # dataset -> fold indices

    @property
    def row_ids(self) -> list[str]:
        return self.model_ids + self.ensemble_ids

    def accuracy_csv(self) -> str:
        header = ["model"] + self.datasets + ["avg"]
        lines = [",".join(header)]
        for rid in self.row_ids:
            row = [rid]
            for ds in self.datasets:
                v = self.cell_accuracy.get((ds, rid))
                row.append("" if v is None else repr(v))
            avg = self.row_avg.get(rid)
            row.append("" if avg is None else repr(avg))
            lines.append(",".join(row))
        return "\n".join(lines) + "\n"

    def wilcoxon_csv(self) -> str:
        header = "row,ensemble,n_nonzero,statistic,p_two_sided,p_greater_ensemble"
        lines = [header]
        for rec in self.wilcoxon:
            lines.append(",".join([
                rec["row"], rec["ensemble"], str(rec["n"]),
                repr(rec["statistic"]), repr(rec["p_two_sided"]),
                repr(rec["p_greater"])]))
        return "\n".join(lines) + "\n"

    def markdown(self) -> str:
        def fmt(v):
            return "" if v is None else f"{v:.2f}"

        lines = ["| Activation | " + " | ".join(self.datasets) + " | Avg |",
                 "|" + "---|" * (len(self.datasets) + 2)]
        for rid in self.row_ids:
            cells = [fmt(self.cell_accuracy.get((ds, rid))) for ds in self.datasets]
            lines.append("| " + " | ".join([rid] + cells
                                           + [fmt(self.row_avg.get(rid))]) + " |")
        out = ["# Accuracy (%)", "", *lines, ""]
        if self.wilcoxon:
            out += ["# Signed-rank comparisons", "",
                    "| Row | Ensemble | n | p (two-sided) | p (ensemble greater) |",
                    "|---|---|---|---|---|"]
            for rec in self.wilcoxon:
                out.append(f"| {rec['row']} | {rec['ensemble']} | {rec['n']} "
                           f"| {rec['p_two_sided']:.4f} | {rec['p_greater']:.4f} |")
            out.append("")
        if self.warnings:
            out += ["# Warnings", ""] + [f"- {w}" for w in self.warnings] + [""]
        return "\n".join(out)


def build_report(cells: dict, labels_by_ds: dict, model_ids: list[str],
                 dataset_names: list[str], fold_accuracy: dict | None = None,
                 warnings_list: list[str] | None = None,
                 fold_of_sample: dict | None = None) -> ExperimentReport:
    """Assemble the accuracy table, ensemble rows and signed-rank matrix.

    `cells` maps (dataset, model id) to the model's out-of-fold
    ScoreMatrix over the full dataset.  Ensembles fuse member scores
    first and are scored on the fused matrix.
    """
    warnings_list = list(warnings_list or [])
    specs = build_ensembles(model_ids)
    ensemble_ids = [s.ensemble_id for s in specs]
    cell_accuracy = {}
    for ds in dataset_names:
        y = labels_by_ds[ds]
        for mid in model_ids:
            m = cells.get((ds, mid))
            if m is not None:
                cell_accuracy[(ds, mid)] = accuracy(m, y)
        for spec in specs:
            present = [cells[(ds, mid)] for mid in spec.members
                       if (ds, mid) in cells]
            missing = [mid for mid in spec.members if (ds, mid) not in cells]
            if missing:
                warnings_list.append(
                    f"{ds}/{spec.ensemble_id}: missing members {missing}")
            if present:
                cell_accuracy[(ds, spec.ensemble_id)] = accuracy(
                    fuse_sum(present), y)

    row_avg = {}
    for rid in model_ids + ensemble_ids:
        vals = [cell_accuracy[(ds, rid)] for ds in dataset_names
                if (ds, rid) in cell_accuracy]
        if vals:
            row_avg[rid] = float(np.mean(vals))

    comparisons = []
    for rid in model_ids + ensemble_ids:
        for eid in ensemble_ids:
            if rid == eid:
                continue
            pairs = [(cell_accuracy[(ds, eid)], cell_accuracy[(ds, rid)])
                     for ds in dataset_names
                     if (ds, eid) in cell_accuracy and (ds, rid) in cell_accuracy]
            if not pairs:
                continue
            ens_vals = np.array([p[0] for p in pairs])
            row_vals = np.array([p[1] for p in pairs])
            two = wilcoxon_signed_rank(ens_vals, row_vals, "two-sided")
            greater = wilcoxon_signed_rank(ens_vals, row_vals, "greater")
            comparisons.append({
                "row": rid, "ensemble": eid, "n": two.n,
                "statistic": two.statistic,
                "p_two_sided": two.p_value, "p_greater": greater.p_value})

    return ExperimentReport(
        datasets=list(dataset_names), model_ids=list(model_ids),
        ensemble_ids=ensemble_ids,
        members={s.ensemble_id: s.members for s in specs},
        cell_accuracy=cell_accuracy,
        fold_accuracy=dict(fold_accuracy or {}),
        row_avg=row_avg, wilcoxon=comparisons, warnings=warnings_list,
        cells=dict(cells), fold_of_sample=dict(fold_of_sample or {}))


def run_experiment(datasets: list[DatasetSpec],
                   models: list[ActivationFamily],
                   cfg: ExperimentConfig) -> ExperimentReport:
    """Train the full grid and report accuracies, ensembles and p-values.

    Scale-independent families are trained once per dataset (their cell
    seed ignores the block max_input) and the resulting scores are shared
    by every block that lists them.  Cells that diverge are excluded
    from ensembles with a warning.
    """
    model_ids = [model_id_for(f) for f in models]
    if len(set(model_ids)) != len(model_ids):
        raise ConfigurationError("duplicate models in the roster")

    groups: dict[str, list[tuple[str, ActivationFamily]]] = {}
    for mid, fam in zip(model_ids, models):
        key = mid if fam.depends_on_max_input else fam.tag
        groups.setdefault(key, []).append((mid, fam))

    cells: dict = {}
    fold_accuracy: dict = {}
    fold_of_sample: dict = {}
    warnings_list: list[str] = []
    for ds in datasets:
        split = kfold_split(len(ds.labels), cfg.folds, ds.labels,
                            seed=derive_seed(cfg.master_seed, ds.name, "folds"))
        fold_of_sample[ds.name] = split.assignments
        for key, group in groups.items():
            family = group[0][1]
            try:
                oof, per_fold = _train_out_of_fold(ds, family, split, cfg, key)
            except TrainingFault as exc:
                warnings_list.append(
                    f"{ds.name}/{key}: {exc}; cell excluded from ensembles")
                continue
            for mid, _ in group:
                cells[(ds.name, mid)] = ScoreMatrix(oof, mid)
                for fold, acc in per_fold:
                    fold_accuracy[(ds.name, mid, fold)] = acc

    return build_report(cells, {ds.name: ds.labels for ds in datasets},
                        model_ids, [ds.name for ds in datasets],
                        fold_accuracy=fold_accuracy,
                        warnings_list=warnings_list,
                        fold_of_sample=fold_of_sample)
