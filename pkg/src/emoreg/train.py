"""Training, evaluation, ablation, and multi-seed experiments.

Training minimizes 1 - CCC over overlapping segments with Adam, validates on
full held-out sequences each epoch, halves the learning rate after 5 epochs
without validation improvement, stops after 15, and restores the best
weights.  The "robust" variant draws a modality to eliminate for each batch,
teaching the model to predict from incomplete inputs.

Experiments train both variants over many seeds, evaluate every
missing-modality condition, and compare groups with Welch's t-test under
Holm-Bonferroni correction.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from . import objective as ob
from . import tensor as tz
from .data import (
    EliminationPolicy,
    collate,
    compute_norm_stats,
    normalize_features,
    segment_samples,
)
from .errors import (
    ConfigError,
    ContractError,
    DegenerateTestError,
    InsufficientDataError,
    NumericError,
)
from .model import EmotionRegressor, ModelConfig
from .objective import MetricValue, ccc_loss, holm_bonferroni, welch_t_test
from .tensor import Rng, Tape, Tensor


@dataclass
class TrainConfig:
    """Optimization hyperparameters; defaults follow the reference setup."""

    epochs: int = 100
    batch_size: int = 64
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    halve_patience: int = 5
    stop_patience: int = 15
    segment_length: int = 250
    segment_hop: int = 50
    seed: int = 0
    elimination: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("epochs", "batch_size", "halve_patience", "stop_patience",
                     "segment_length", "segment_hop"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1:
            raise ConfigError("adam betas must lie in [0, 1)")
        if self.adam_eps <= 0:
            raise ConfigError("adam_eps must be > 0")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


class AdamOptimizer:
    """Adam with bias correction, operating on a name -> Tensor mapping."""

    def __init__(self, params: dict, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def step(self):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class PlateauScheduler:
    """Validation-plateau policy: halve the learning rate, then give up.

    Tracks the best validation score seen so far (strict improvement).  Two
    counters run off the same signal: one resets on improvement *or* halving
    and triggers a halving at ``halve_patience``; the other resets only on
    improvement and ends training at ``stop_patience`` (stopping wins when
    both fire at once).
    """

    def __init__(self, optimizer: AdamOptimizer, halve_patience: int = 5,
                 stop_patience: int = 15):
        self.optimizer = optimizer
        self.halve_patience = halve_patience
        self.stop_patience = stop_patience
        self.best = -np.inf
        self.since_halve = 0
        self.since_improve = 0

    def update(self, score: float) -> str:
        """Feed one validation score; returns "improved", "waiting",
        "halved", or "stopped"."""
        if score > self.best:
            self.best = score
            self.since_halve = 0
            self.since_improve = 0
            return "improved"
        self.since_halve += 1
        self.since_improve += 1
        if self.since_improve >= self.stop_patience:
            return "stopped"
        if self.since_halve >= self.halve_patience:
            self.optimizer.lr /= 2.0
            self.since_halve = 0
            return "halved"
        return "waiting"


@dataclass
class RunHistory:
    """Per-epoch training record (no wall-clock: reruns must be identical)."""

    epochs: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_ccc: float = -np.inf
    stopped_early: bool = False

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "best_epoch": self.best_epoch,
            "best_val_ccc": self.best_val_ccc,
            "stopped_early": self.stopped_early,
        }


@dataclass
class EvalResult:
    """Evaluation over full sequences, ordered by sample id."""

    ccc: float
    rmse: float
    per_sample_ccc: dict
    predictions: dict
    importance: dict | None = None

    def to_dict(self) -> dict:
        out = {
            "ccc": self.ccc,
            "rmse": self.rmse,
            "per_sample_ccc": self.per_sample_ccc,
        }
        if self.importance is not None:
            out["importance"] = self.importance
        return out


def _restrict(features: dict, keep) -> dict:
    if keep is None:
        return features
    return {m: (x if m in keep else None) for m, x in features.items()}


def evaluate(model: EmotionRegressor, samples, norm_stats: dict,
             use_modalities=None, collect_importance: bool = False) -> EvalResult:
    """Run the model over whole sequences and score globally.

    ``use_modalities`` restricts the available streams (simulating missing
    modalities); CCC/RMSE are computed over the concatenation of all
    predictions in sample-id order.
    """
    if not samples:
        raise InsufficientDataError("evaluate called with no samples")
    ordered = sorted(samples, key=lambda s: s.sample_id)
    prepared = []
    for s in ordered:
        feats = _restrict(normalize_features(s.features, norm_stats), use_modalities)
        pattern = tuple(m for m in model.config.modalities if feats.get(m) is not None)
        prepared.append((s, feats, pattern))
    # Batch samples sharing length and availability pattern.
    groups = {}
    for idx, (s, feats, pattern) in enumerate(prepared):
        groups.setdefault((s.n_steps, pattern), []).append(idx)
    predictions = {}
    imp_sum, imp_n = {}, {}
    for (n_steps, pattern), indices in sorted(groups.items()):
        batch = {
            m: (
                np.stack([prepared[i][1][m] for i in indices])
                if m in pattern else None
            )
            for m in model.config.modalities
        }
        preds, present, imp = model.forward(
            batch, collect_importance=collect_importance
        )
        for row, i in enumerate(indices):
            predictions[prepared[i][0].sample_id] = preds.data[row]
        if collect_importance and imp is not None:
            for m, w in zip(present, imp):
                imp_sum[m] = imp_sum.get(m, 0.0) + w * len(indices)
                imp_n[m] = imp_n.get(m, 0) + len(indices)
    flat_pred = np.concatenate([predictions[s.sample_id] for s in ordered])
    flat_truth = np.concatenate([s.labels for s in ordered])
    per_sample = {
        s.sample_id: ob.ccc(predictions[s.sample_id], s.labels) for s in ordered
    }
    importance = None
    if collect_importance:
        importance = {m: imp_sum[m] / imp_n[m] for m in imp_sum}
    return EvalResult(
        ccc=ob.ccc(flat_pred, flat_truth),
        rmse=ob.rmse(flat_pred, flat_truth),
        per_sample_ccc=per_sample,
        predictions=predictions,
        importance=importance,
    )


@dataclass
class TrainResult:
    model: EmotionRegressor
    history: RunHistory
    norm_stats: dict


def train_run(model_cfg: ModelConfig, train_cfg: TrainConfig, train_samples,
              val_samples, log=None) -> TrainResult:
    """Train a model from scratch; returns the best-validation weights.

    All randomness (init, shuffling, dropout, elimination draws) derives from
    ``train_cfg.seed``, so a rerun with the same configs and data reproduces
    the result bit for bit.
    """
    if not train_samples:
        raise InsufficientDataError("no training samples")
    if not val_samples:
        raise InsufficientDataError("no validation samples")
    for s in train_samples:
        missing = [m for m in model_cfg.modalities if s.features.get(m) is None]
        if missing:
            raise ContractError(
                f"training sample {s.sample_id} lacks modalities {missing}; "
                "training requires complete streams"
            )
    policy = None
    if train_cfg.elimination:
        unknown = set(train_cfg.elimination) - set(model_cfg.modalities)
        if unknown:
            raise ConfigError(f"elimination names unknown modalities: {sorted(unknown)}")
        if len(model_cfg.modalities) < 2:
            raise ConfigError("modality elimination needs at least two modalities")
        policy = EliminationPolicy(dict(train_cfg.elimination))

    rng = Rng(train_cfg.seed)
    model = EmotionRegressor(model_cfg, rng.child("init"))
    dropout_rng = rng.child("dropout")
    eliminate_rng = rng.child("eliminate")
    norm_stats = compute_norm_stats(train_samples, model_cfg.modalities)
    normed = [
        type(s)(s.sample_id, s.timestamps,
                normalize_features(s.features, norm_stats), s.labels)
        for s in train_samples
    ]
    segments = segment_samples(normed, train_cfg.segment_length, train_cfg.segment_hop)
    params = model.parameters()
    optimizer = AdamOptimizer(
        params, train_cfg.learning_rate, train_cfg.beta1, train_cfg.beta2,
        train_cfg.adam_eps,
    )
    scheduler = PlateauScheduler(
        optimizer, train_cfg.halve_patience, train_cfg.stop_patience
    )
    history = RunHistory()
    best_state = None
    for epoch in range(train_cfg.epochs):
        order = rng.child(f"shuffle/{epoch}").permutation(len(segments))
        losses = []
        for lo in range(0, len(order), train_cfg.batch_size):
            chunk = [segments[i] for i in order[lo : lo + train_cfg.batch_size]]
            features, labels = collate(chunk, model_cfg.modalities)
            if policy is not None:
                removed = policy.sample(eliminate_rng)
                features = policy.applied_to(features, removed)
            optimizer.zero_grad()
            with Tape() as tape:
                preds, _, _ = model.forward(features, training=True, rng=dropout_rng)
                loss = ccc_loss(preds, labels)
            if not loss.is_finite():
                raise NumericError(f"non-finite training loss at epoch {epoch}")
            tape.backward(loss)
            optimizer.step()
            losses.append(loss.item())
        val = evaluate(model, val_samples, norm_stats)
        action = scheduler.update(val.ccc)
        history.epochs.append(
            {
                "epoch": epoch,
                "train_loss": float(np.mean(losses)),
                "val_ccc": val.ccc,
                "learning_rate": optimizer.lr,
                "action": action,
            }
        )
        if action == "improved":
            history.best_epoch = epoch
            history.best_val_ccc = val.ccc
            best_state = {k: p.data.copy() for k, p in params.items()}
        if log is not None:
            log(
                f"epoch {epoch:3d}  loss {np.mean(losses):.4f}  "
                f"val_ccc {val.ccc:.4f}  lr {optimizer.lr:.2e}  {action}"
            )
        if action == "stopped":
            history.stopped_early = True
            break
    if best_state is not None:
        for k, p in params.items():
            p.data = best_state[k]
    return TrainResult(model=model, history=history, norm_stats=norm_stats)


# ---------------------------------------------------------------------------
# Ablation


@dataclass
class AblationReport:
    """Metrics for every non-empty modality subset plus attention importance."""

    subsets: dict
    importance: dict

    def to_dict(self) -> dict:
        return {
            "subsets": {
                "+".join(k): v.to_dict() for k, v in self.subsets.items()
            },
            "importance": self.importance,
        }


def ablation_study(model: EmotionRegressor, samples, norm_stats: dict) -> AblationReport:
    """Evaluate the model under every non-empty subset of its modalities."""
    mods = model.config.modalities
    full = evaluate(model, samples, norm_stats, collect_importance=True)
    subsets = {}
    for bits in range(1, 2 ** len(mods)):
        keep = tuple(m for i, m in enumerate(mods) if bits >> i & 1)
        subsets[keep] = evaluate(model, samples, norm_stats, use_modalities=keep)
    return AblationReport(subsets=subsets, importance=full.importance)


def dominant_modality(importance: dict) -> str:
    """The modality drawing the most cross-attention weight."""
    if not importance:
        raise InsufficientDataError("empty importance mapping")
    return max(sorted(importance), key=lambda m: importance[m])


# ---------------------------------------------------------------------------
# Multi-seed experiments


@dataclass
class Comparison:
    """One tested hypothesis with its Holm-adjusted outcome."""

    family: str
    label: str
    metric: str
    alternative: str
    statistic: float
    p_value: float
    adjusted_p: float = 1.0
    reject: bool = False

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "label": self.label,
            "metric": self.metric,
            "alternative": self.alternative,
            "statistic": self.statistic,
            "p_value": self.p_value,
            "adjusted_p": self.adjusted_p,
            "reject": self.reject,
        }


@dataclass
class ExperimentReport:
    """Outcome of a standard-vs-robust multi-seed comparison."""

    seeds: list
    conditions: list
    variants: list
    metrics: dict  # (variant, condition, metric) -> MetricValue
    comparisons: list
    alpha: float

    def metric(self, variant: str, condition: str, name: str) -> MetricValue:
        return self.metrics[(variant, condition, name)]

    def to_dict(self) -> dict:
        return {
            "seeds": self.seeds,
            "conditions": self.conditions,
            "variants": self.variants,
            "alpha": self.alpha,
            "metrics": {
                f"{v}/{c}/{m}": {"values": list(mv.values), "mean": mv.mean,
                                  "std": mv.std}
                for (v, c, m), mv in sorted(self.metrics.items())
            },
            "comparisons": [c.to_dict() for c in self.comparisons],
        }


def _safe_welch(a, b, alternative: str):
    """Welch test that treats a fully degenerate comparison as no evidence."""
    try:
        r = welch_t_test(a, b, alternative)
        return r.statistic, r.p_value
    except DegenerateTestError:
        return 0.0, 1.0


def experiment_run(model_cfg: ModelConfig, train_cfg: TrainConfig, datasets: dict,
                   seeds, elimination: dict, alpha: float = 0.05,
                   log=None) -> ExperimentReport:
    """Train standard and elimination-trained variants across seeds and
    compare them under every missing-modality condition.

    Two hypothesis families, each Holm-corrected on its own:

    * robustness: one-sided, the elimination-trained variant scores better
      than standard (higher CCC / lower RMSE) under each condition;
    * degradation: two-sided, within each variant, does removing a modality
      shift CCC relative to the all-modalities condition.
    """
    seeds = list(seeds)
    if len(seeds) < 2:
        raise InsufficientDataError("experiments need at least two seeds")
    mods = model_cfg.modalities
    conditions = [("all", None)] + [
        (f"no_{m}", tuple(x for x in mods if x != m)) for m in mods
    ]
    variants = {"standard": {}, "robust": dict(elimination)}
    values = {}  # (variant, condition, metric) -> list over seeds
    for variant, policy in variants.items():
        for si, seed in enumerate(seeds):
            cfg_fields = train_cfg.to_dict()
            cfg_fields["seed"] = seed
            cfg_fields["elimination"] = policy
            tc = TrainConfig(**cfg_fields)
            result = train_run(model_cfg, tc, datasets["train"], datasets["val"])
            for cond_name, keep in conditions:
                ev = evaluate(
                    result.model, datasets["test"], result.norm_stats,
                    use_modalities=keep,
                )
                values.setdefault((variant, cond_name, "ccc"), []).append(ev.ccc)
                values.setdefault((variant, cond_name, "rmse"), []).append(ev.rmse)
            if log is not None:
                best = result.history.best_val_ccc
                log(f"{variant} seed {seed}: best val ccc {best:.4f} "
                    f"({si + 1}/{len(seeds)})")
    metrics = {k: MetricValue(v) for k, v in values.items()}

    comparisons = []
    for cond_name, _ in conditions:
        for metric, alternative in (("ccc", "greater"), ("rmse", "less")):
            stat, p = _safe_welch(
                values[("robust", cond_name, metric)],
                values[("standard", cond_name, metric)],
                alternative,
            )
            comparisons.append(
                Comparison("robustness", f"robust vs standard, {cond_name}",
                           metric, alternative, stat, p)
            )
    for variant in variants:
        for cond_name, keep in conditions[1:]:
            stat, p = _safe_welch(
                values[(variant, cond_name, "ccc")],
                values[(variant, "all", "ccc")],
                "two-sided",
            )
            comparisons.append(
                Comparison("degradation", f"{variant}: {cond_name} vs all",
                           "ccc", "two-sided", stat, p)
            )
    for family in ("robustness", "degradation"):
        members = [c for c in comparisons if c.family == family]
        reject, adjusted = holm_bonferroni([c.p_value for c in members], alpha)
        for c, r, a in zip(members, reject, adjusted):
            c.reject = bool(r)
            c.adjusted_p = float(a)
    return ExperimentReport(
        seeds=seeds,
        conditions=[c for c, _ in conditions],
        variants=list(variants),
        metrics=metrics,
        comparisons=comparisons,
        alpha=alpha,
    )


def render_experiment_report(report: ExperimentReport) -> str:
    """Fixed-width text table: mean (std) per cell, with significance marks.

    Within a variant's row, a check mark after a missing-modality cell means
    the degradation test did *not* reject (performance statistically
    indistinguishable from the all-modalities condition); a double dagger
    means the robustness test found the elimination-trained variant
    significantly better than standard under that condition.
    """
    marks = {}
    for c in report.comparisons:
        if c.family == "degradation" and not c.reject:
            variant, rest = c.label.split(": ")
            cond = rest.split(" vs ")[0]
            marks.setdefault((variant, cond), []).append("✓")
        if c.family == "robustness" and c.reject and c.metric == "ccc":
            cond = c.label.split(", ")[1]
            marks.setdefault(("robust", cond), []).append("‡")
    lines = []
    for metric in ("ccc", "rmse"):
        lines.append(f"{metric.upper()} by condition (mean (std) over "
                     f"{len(report.seeds)} seeds)")
        header = ["variant"] + report.conditions
        rows = []
        for variant in report.variants:
            row = [variant]
            for cond in report.conditions:
                cell = str(report.metric(variant, cond, metric))
                if metric == "ccc":
                    cell += "".join(marks.get((variant, cond), []))
                row.append(cell)
            rows.append(row)
        widths = [
            max(len(header[i]), *(len(r[i]) for r in rows))
            for i in range(len(header))
        ]
        lines.append("  ".join(h.ljust(w) for h, w in zip(header, widths)))
        for row in rows:
            lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)))
        lines.append("")
    lines.append("✓ no significant change vs all modalities "
                 f"(Holm-corrected alpha {report.alpha})")
    lines.append("‡ significantly better than standard (one-sided)")
    lines.append("")
    lines.append("hypothesis tests:")
    for c in report.comparisons:
        flag = "reject" if c.reject else "keep"
        lines.append(
            f"  [{c.family}] {c.label} ({c.metric}, {c.alternative}): "
            f"t={c.statistic:+.3f} p={c.p_value:.4f} "
            f"adj={c.adjusted_p:.4f} -> {flag}"
        )
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Linear baseline


def linear_baseline_ccc(train_samples, eval_samples, modalities, ridge: float = 1e-3):
    """Ridge regression from concatenated features to labels; a floor any
    trained model should clear and a ceiling check for the synthetic data."""

    def flatten(samples):
        X = np.concatenate(
            [np.concatenate([s.features[m] for m in modalities], axis=1)
             for s in samples]
        )
        y = np.concatenate([s.labels for s in samples])
        return X, y

    Xtr, ytr = flatten(train_samples)
    Xte, yte = flatten(eval_samples)
    mu, sd = Xtr.mean(axis=0), Xtr.std(axis=0) + 1e-12
    Xtr = (Xtr - mu) / sd
    Xte = (Xte - mu) / sd
    gram = Xtr.T @ Xtr + ridge * np.eye(Xtr.shape[1])
    w = np.linalg.solve(gram, Xtr.T @ (ytr - ytr.mean()))
    return ob.ccc(Xte @ w + ytr.mean(), yte)
