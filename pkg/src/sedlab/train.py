"""Joint training: weak-label classification plus the frame-pair loss.

Each step forwards a mixed SS/RW batch through the shared encoder, computes
the classification loss against weak targets, rasterizes strong labels (SS)
or derives pseudo-strong labels from the live classification branch (RW),
enumerates frame pairs, and applies the pair loss through the projection
head.  Gradients from both heads sum at the shared embeddings and a single
Adam update follows.

Everything is a deterministic function of (config, seed): parameter init,
epoch shuffling, and pair subsampling draw from independent child seeds, and
each seed job clamps BLAS pools to one thread so results are byte-identical
at any job count.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from multiprocessing import get_context
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import dataio
from .dataio import SOURCE_RW, SOURCE_SS, WeakLabelRecord
from .evaluation import EvalConfig, decode_events, event_based_f1, segment_based_f1, tagging_f1
from .features import FeatureConfig, extract_features, feature_dim
from .fpdloss import METRIC_EUC, METRIC_IP, LossConfig, PairBatch, fpd_loss
from .labels import FrameTagGrid, restrict_wps_to_weak, strong_to_frame_grid, wps_from_probs
from .model import ModelConfig, SedModel, build_model, write_checkpoint
from .pairing import PairCase, build_frame_pairs, count_candidate_frames, enumerate_clip_pairs, subsample_pairs

DOMAIN_INIT = 0
DOMAIN_BATCH = 1
DOMAIN_PAIRS = 2

VARIANT_WEAK = "weak"
VARIANT_FPD_EUC = "fpd-euc"
VARIANT_FPD_IP = "fpd-ip"
VARIANTS = (VARIANT_WEAK, VARIANT_FPD_EUC, VARIANT_FPD_IP)


class TrainingDiverged(RuntimeError):
    """Raised when a loss term stops being finite."""


@dataclass
class TrainConfig:
    batch_size: int = 24
    ss_ratio: int = 1
    rw_ratio: int = 1
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    lambda_fpd: float = 1.0
    epochs: int = 30
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)
    tau_pos: float = 0.75
    tau_neg: float = 0.25
    pair_cap: int = 2000
    silence_as_class: bool = False
    warmup_epochs: int = 0
    fpd_branch_enabled: bool = True
    force_fpd_path: bool = False  # compute the pair loss even at weight 0
    tag_threshold: float = 0.5

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (pairing needs two clips)")
        if self.lambda_fpd < 0:
            raise ValueError("lambda_fpd must be nonnegative")
        if self.ss_ratio < 0 or self.rw_ratio < 0 or self.ss_ratio + self.rw_ratio == 0:
            raise ValueError("ss_ratio/rw_ratio must be nonnegative and not both zero")


def configure_variant(cfg: TrainConfig, variant: str) -> TrainConfig:
    """Map a named system variant onto the training config."""
    if variant == VARIANT_WEAK:
        return replace(cfg, lambda_fpd=0.0, fpd_branch_enabled=False)
    if variant == VARIANT_FPD_EUC:
        return replace(cfg, loss=replace(cfg.loss, metric=METRIC_EUC), fpd_branch_enabled=True)
    if variant == VARIANT_FPD_IP:
        return replace(cfg, loss=replace(cfg.loss, metric=METRIC_IP), fpd_branch_enabled=True)
    raise ValueError(f"unknown variant {variant!r} (expected one of {VARIANTS})")


class Adam:
    """Adam with bias correction; updates run in sorted parameter order."""

    def __init__(self, params: dict[str, np.ndarray], lr: float, beta1: float, beta2: float, eps: float):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        for name in sorted(self.params):
            g = grads[name]
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * g * g
            m_hat = self.m[name] / (1 - self.beta1**self.t)
            v_hat = self.v[name] / (1 - self.beta2**self.t)
            self.params[name] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def bce_weak_loss(clip_probs: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy over classes and its gradient w.r.t. probs."""
    eps = 1e-7
    p = np.clip(clip_probs, eps, 1 - eps)
    y = np.asarray(target, dtype=np.float64)
    loss = float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))
    grad = np.where(
        (clip_probs > eps) & (clip_probs < 1 - eps),
        (-y / p + (1 - y) / (1 - p)) / len(p),
        0.0,
    )
    return loss, grad


@dataclass
class TrainItem:
    clip_id: str
    source: str
    features: np.ndarray  # (T, F)
    weak_classes: frozenset[int]
    weak_target: np.ndarray  # (C,)
    frame_grid: FrameTagGrid | None  # rasterized strong labels (SS only)


@dataclass
class EvalItem:
    clip_id: str
    features: np.ndarray
    ref_strong: list
    ref_classes: frozenset[int]


def _load_manifest_labels(manifest: dataio.DatasetManifest):
    strong_path = manifest.root / "strong.tsv"
    weak_path = manifest.root / "weak.tsv"
    strong = dataio.read_strong_labels(strong_path, manifest.class_names) if strong_path.exists() else []
    weak = dataio.read_weak_labels(weak_path, manifest.class_names) if weak_path.exists() else []
    strong_by_clip: dict[str, list] = {}
    for lab in strong:
        strong_by_clip.setdefault(lab.clip_id, []).append(lab)
    weak_by_clip = {rec.clip_id: rec.classes for rec in weak}
    return strong_by_clip, weak_by_clip


def load_training_items(manifest_paths, feat_cfg: FeatureConfig) -> tuple[list[TrainItem], list[str]]:
    """Load clips, precompute features, and resolve per-clip labels.

    Label files are expected next to each manifest as strong.tsv/weak.tsv.
    Strong rows are used only for entries flagged strong; weak sets fall
    back to the union of strong-label classes when no weak row exists.
    """
    items: list[TrainItem] = []
    class_names: list[str] | None = None
    for path in manifest_paths:
        manifest = dataio.load_manifest(path)
        if class_names is None:
            class_names = manifest.class_names
        elif class_names != manifest.class_names:
            raise dataio.ValidationError(f"{path}: class names differ across manifests")
        strong_by_clip, weak_by_clip = _load_manifest_labels(manifest)
        n_classes = len(class_names)
        for entry in manifest.entries:
            cid = Path(entry.path).name
            clip = dataio.load_clip(manifest.clip_path(entry), feat_cfg.sample_rate, entry.source, cid)
            grid = extract_features(clip, feat_cfg)
            strong = strong_by_clip.get(cid, []) if entry.strong else []
            if entry.weak and cid in weak_by_clip:
                weak_classes = weak_by_clip[cid]
            elif entry.strong:
                weak_classes = frozenset(lab.class_idx for lab in strong)
            else:
                weak_classes = frozenset()
            target = np.zeros(n_classes)
            target[list(weak_classes)] = 1.0
            frame_grid = None
            if entry.strong:
                frame_grid = strong_to_frame_grid(strong, grid.n_frames, n_classes, feat_cfg.hop, feat_cfg.sample_rate)
            items.append(TrainItem(cid, entry.source, grid.values, weak_classes, target, frame_grid))
    if class_names is None:
        raise dataio.ValidationError("no manifests given")
    return items, class_names


def load_eval_items(manifest_path, feat_cfg: FeatureConfig, class_names: list[str]) -> list[EvalItem]:
    manifest = dataio.load_manifest(manifest_path)
    if manifest.class_names != class_names:
        raise dataio.ValidationError(f"{manifest_path}: class names differ from training manifests")
    strong_by_clip, _ = _load_manifest_labels(manifest)
    items: list[EvalItem] = []
    for entry in manifest.entries:
        if not entry.strong:
            raise dataio.ValidationError(f"{manifest_path}: evaluation clips need strong labels ({entry.path})")
        cid = Path(entry.path).name
        clip = dataio.load_clip(manifest.clip_path(entry), feat_cfg.sample_rate, entry.source, cid)
        grid = extract_features(clip, feat_cfg)
        refs = strong_by_clip.get(cid, [])
        items.append(EvalItem(cid, grid.values, refs, frozenset(lab.class_idx for lab in refs)))
    return items


def batch_quotas(cfg: TrainConfig) -> tuple[int, int]:
    n_ss = cfg.batch_size * cfg.ss_ratio // (cfg.ss_ratio + cfg.rw_ratio)
    return n_ss, cfg.batch_size - n_ss


def steps_per_epoch(items: list[TrainItem], cfg: TrainConfig) -> int:
    n_ss, n_rw = batch_quotas(cfg)
    pools = {SOURCE_SS: sum(1 for it in items if it.source == SOURCE_SS),
             SOURCE_RW: sum(1 for it in items if it.source == SOURCE_RW)}
    steps = []
    for source, need in ((SOURCE_SS, n_ss), (SOURCE_RW, n_rw)):
        if need == 0:
            continue
        if pools[source] < need:
            raise ValueError(f"need {need} {source} clips per batch but only {pools[source]} available")
        steps.append(pools[source] // need)
    return min(steps)


def assemble_batch(items: list[TrainItem], cfg: TrainConfig, step: int, seed: int) -> list[int]:
    """Deterministic batch indices for a step: per-source epoch permutations."""
    n_ss, n_rw = batch_quotas(cfg)
    spe = steps_per_epoch(items, cfg)
    epoch, b = divmod(step, spe)
    out: list[int] = []
    for source, need, sub in ((SOURCE_SS, n_ss, 0), (SOURCE_RW, n_rw, 1)):
        if need == 0:
            continue
        pool = [k for k, it in enumerate(items) if it.source == source]
        rng = np.random.default_rng(np.random.SeedSequence((seed, DOMAIN_BATCH, epoch, sub)))
        perm = rng.permutation(len(pool))
        out.extend(pool[k] for k in perm[b * need : (b + 1) * need])
    return out


@dataclass
class StepMetrics:
    loss_cls: float
    loss_fpd: float
    n_pos: int
    n_neg: int
    n_ignored: int


def _gather_pair_batch(pairs, projections: np.ndarray, metric: str):
    """Pair vectors from (N, T, P) projections plus scatter indices."""
    dim = projections.shape[2]
    sides = {PairCase.POSITIVE: ([], []), PairCase.NEGATIVE: ([], [])}
    for p in pairs:
        a = projections[p.i, p.t]
        b = projections[p.j, p.t]
        if metric == METRIC_IP and (not a.any() or not b.any()):
            continue  # cosine undefined for zero-norm projections; skip pair
        sides[p.case][0].append((p.i, p.t))
        sides[p.case][1].append((p.j, p.t))
    index_arrays = {}
    stacks = {}
    for case, (ia, ib) in sides.items():
        for tag, lst in (("a", ia), ("b", ib)):
            if lst:
                arr = np.array(lst)
                index_arrays[(case, tag)] = (arr[:, 0], arr[:, 1])
                stacks[(case, tag)] = projections[arr[:, 0], arr[:, 1]]
            else:
                index_arrays[(case, tag)] = (np.zeros(0, dtype=int), np.zeros(0, dtype=int))
                stacks[(case, tag)] = np.zeros((0, dim))
    batch = PairBatch(
        stacks[(PairCase.POSITIVE, "a")],
        stacks[(PairCase.POSITIVE, "b")],
        stacks[(PairCase.NEGATIVE, "a")],
        stacks[(PairCase.NEGATIVE, "b")],
    )
    return batch, index_arrays


def train_step(
    model: SedModel,
    items: list[TrainItem],
    batch_idx: list[int],
    cfg: TrainConfig,
    optimizer: Adam,
    seed: int,
    step: int,
    epoch: int,
) -> StepMetrics:
    feats = np.stack([items[k].features for k in batch_idx])
    run_fpd = cfg.fpd_branch_enabled and (cfg.lambda_fpd > 0 or cfg.force_fpd_path) and epoch >= cfg.warmup_epochs
    out = model.forward(feats, train=True, with_projection=run_fpd)
    n = len(batch_idx)
    targets = np.stack([items[k].weak_target for k in batch_idx])
    loss_cls = 0.0
    d_clip = np.zeros_like(out.clip_probs)
    for row in range(n):
        term, grad = bce_weak_loss(out.clip_probs[row], targets[row])
        loss_cls += term / n
        d_clip[row] = grad / n
    if not np.isfinite(loss_cls):
        raise TrainingDiverged(f"non-finite classification loss at step {step}")

    loss_fpd = 0.0
    n_pos = n_neg = n_ignored = 0
    d_proj = None
    if run_fpd:
        grids: list[FrameTagGrid] = []
        tags: list[frozenset[int]] = []
        for row, k in enumerate(batch_idx):
            item = items[k]
            if item.source == SOURCE_SS:
                grids.append(item.frame_grid)
            else:
                wps = wps_from_probs(out.frame_probs[row], cfg.tau_pos, cfg.tau_neg)
                grids.append(restrict_wps_to_weak(wps, item.weak_classes))
            tags.append(item.weak_classes)
        clip_pairs = enumerate_clip_pairs(tags, cfg.silence_as_class)
        pairs = build_frame_pairs(grids, clip_pairs, cfg.silence_as_class)
        n_pos = sum(1 for p in pairs if p.case is PairCase.POSITIVE)
        n_neg = len(pairs) - n_pos
        n_ignored = count_candidate_frames(grids, clip_pairs) - len(pairs)
        rng = np.random.default_rng(np.random.SeedSequence((seed, DOMAIN_PAIRS, step)))
        pairs = subsample_pairs(pairs, cfg.pair_cap, rng)
        pair_batch, idx = _gather_pair_batch(pairs, out.projections, cfg.loss.metric)
        loss_fpd, pair_grads = fpd_loss(pair_batch, cfg.loss)
        if not np.isfinite(loss_fpd):
            raise TrainingDiverged(f"non-finite pair-distance loss at step {step}")
        d_proj = np.zeros_like(out.projections)
        for case, tag, grad in (
            (PairCase.POSITIVE, "a", pair_grads.pos_a),
            (PairCase.POSITIVE, "b", pair_grads.pos_b),
            (PairCase.NEGATIVE, "a", pair_grads.neg_a),
            (PairCase.NEGATIVE, "b", pair_grads.neg_b),
        ):
            rows, cols = idx[(case, tag)]
            np.add.at(d_proj, (rows, cols), cfg.lambda_fpd * grad)

    model.zero_grads()
    model.backward(d_frame_probs=None, d_clip_probs=d_clip, d_proj=d_proj)
    optimizer.step(model.gradients())
    return StepMetrics(loss_cls, loss_fpd, n_pos, n_neg, n_ignored)


@dataclass
class ExperimentSetup:
    """Everything one seed job needs to train and evaluate a model."""

    train_manifests: list[str]
    eval_manifest: str
    feature_cfg: FeatureConfig
    model_cfg: ModelConfig
    train_cfg: TrainConfig
    eval_cfg: EvalConfig
    variant: str = "custom"


@dataclass
class SeedResult:
    seed: int
    event_f1: float
    segment_f1: float
    tagging_f1: float
    loss_cls: list[float]
    loss_fpd: list[float]


@dataclass
class RunSummary:
    variant: str
    results: list[SeedResult]

    def metric(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.results])

    def aggregate(self) -> dict[str, dict[str, float]]:
        out = {}
        for name in ("event_f1", "segment_f1", "tagging_f1"):
            vals = self.metric(name)
            std = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
            out[name] = {"mean": float(np.mean(vals)), "std": std, "best": float(np.max(vals))}
        return out


def evaluate_model(model: SedModel, eval_items: list[EvalItem], eval_cfg: EvalConfig, feat_cfg: FeatureConfig):
    """Decode per-clip probabilities and score all three granularities."""
    ref_events, est_events, ref_weak, est_weak = [], [], [], []
    for item in eval_items:
        out = model.forward(item.features[None], train=False, with_projection=False)
        est_events.extend(
            decode_events(
                out.frame_probs[0],
                item.clip_id,
                eval_cfg.decode_threshold,
                eval_cfg.median_window,
                feat_cfg.hop,
                feat_cfg.sample_rate,
            )
        )
        ref_events.extend(item.ref_strong)
        est_weak.append(
            WeakLabelRecord(item.clip_id, frozenset(np.flatnonzero(out.clip_probs[0] >= eval_cfg.tag_threshold).tolist()))
        )
        ref_weak.append(WeakLabelRecord(item.clip_id, item.ref_classes))
    event = event_based_f1(
        ref_events, est_events, eval_cfg.onset_collar, eval_cfg.offset_collar, eval_cfg.offset_ratio, eval_cfg.average
    )
    segment = segment_based_f1(ref_events, est_events, eval_cfg.segment_length, eval_cfg.average)
    tagging = tagging_f1(ref_weak, est_weak, eval_cfg.average)
    return event, segment, tagging


def train_one_seed(setup: ExperimentSetup, seed: int):
    """Train and evaluate a single model; returns (result, state, resolved config)."""
    with threadpool_limits(limits=1):
        items, class_names = load_training_items(setup.train_manifests, setup.feature_cfg)
        eval_items = load_eval_items(setup.eval_manifest, setup.feature_cfg, class_names)
        model_cfg = setup.model_cfg.resolved(len(class_names), feature_dim(setup.feature_cfg))
        model = build_model(model_cfg, np.random.SeedSequence((seed, DOMAIN_INIT)))
        cfg = setup.train_cfg
        optimizer = Adam(model.parameters(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps)
        spe = steps_per_epoch(items, cfg)
        loss_cls_curve, loss_fpd_curve = [], []
        for epoch in range(cfg.epochs):
            cls_sum = fpd_sum = 0.0
            for b in range(spe):
                step = epoch * spe + b
                batch_idx = assemble_batch(items, cfg, step, seed)
                metrics = train_step(model, items, batch_idx, cfg, optimizer, seed, step, epoch)
                cls_sum += metrics.loss_cls
                fpd_sum += metrics.loss_fpd
            loss_cls_curve.append(cls_sum / spe)
            loss_fpd_curve.append(fpd_sum / spe)
        event, segment, tagging = evaluate_model(model, eval_items, setup.eval_cfg, setup.feature_cfg)
        result = SeedResult(seed, event.f1, segment.f1, tagging.f1, loss_cls_curve, loss_fpd_curve)
        return result, model.state(), model_cfg


def _seed_job(args):
    setup, seed = args
    return train_one_seed(setup, seed)


def run_experiment(setup: ExperimentSetup, n_seeds: int, jobs: int = 1, out_dir=None) -> RunSummary:
    """Train n_seeds independent models and aggregate their metrics.

    Seed jobs are independent; with jobs > 1 they run in spawned worker
    processes.  Output files are byte-identical for any jobs value.
    """
    if n_seeds < 1:
        raise ValueError("n_seeds must be >= 1")
    seeds = [setup.train_cfg.seed + i for i in range(n_seeds)]
    args = [(setup, s) for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, n_seeds), mp_context=get_context("spawn")) as pool:
            outputs = list(pool.map(_seed_job, args))
    else:
        outputs = [_seed_job(a) for a in args]
    results = [out[0] for out in outputs]
    summary = RunSummary(setup.variant, results)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_summary(out / "summary.jsonl", summary)
        (out / "summary.txt").write_text(format_summary_table(summary), encoding="utf-8")
        best = int(np.argmax([r.event_f1 for r in results]))
        write_checkpoint(out / "best.ckpt", outputs[best][1], outputs[best][2])
    return summary


def write_summary(path, summary: RunSummary) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in summary.results:
            rec = {
                "variant": summary.variant,
                "seed": r.seed,
                "event_f1": r.event_f1,
                "segment_f1": r.segment_f1,
                "tagging_f1": r.tagging_f1,
                "loss_cls": r.loss_cls,
                "loss_fpd": r.loss_fpd,
            }
            fh.write(json.dumps(rec) + "\n")


def read_summary(path) -> RunSummary:
    results = []
    variant = None
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            if variant is None:
                variant = rec["variant"]
            results.append(
                SeedResult(
                    rec["seed"],
                    rec["event_f1"],
                    rec["segment_f1"],
                    rec["tagging_f1"],
                    list(rec.get("loss_cls", [])),
                    list(rec.get("loss_fpd", [])),
                )
            )
    if variant is None:
        raise ValueError(f"{path}: empty summary file")
    return RunSummary(variant, results)


def format_summary_table(summary: RunSummary) -> str:
    agg = summary.aggregate()
    lines = [
        f"system: {summary.variant}  ({len(summary.results)} seeds)",
        f"{'metric':<12} {'mean':>8} {'std':>8} {'best':>8}",
    ]
    for name in ("event_f1", "segment_f1", "tagging_f1"):
        a = agg[name]
        lines.append(f"{name:<12} {a['mean']:>8.4f} {a['std']:>8.4f} {a['best']:>8.4f}")
    return "\n".join(lines) + "\n"
