"""Frame-pairwise distance losses over positive/negative embedding pairs.

Two metrics are supported.  For the Euclidean metric the per-pair quantity
is D = 1/(1+d) with d the Euclidean distance; the loss sums
[alpha - D_neg]_+ over negative pairs and D_pos^2 over positive pairs.  For
the inner-product metric D is the cosine similarity; the loss sums
[alpha - D_neg]_+ and [D_pos + alpha]_+ plus a norm term (D + 1)^2 applied
to all pairs or to negative pairs only.

Each loss runs in one of two modes.  ``as_written`` uses the D above
verbatim.  ``distance`` re-reads D as an actual distance - d/(1+d) for the
Euclidean metric, 1 - cosine for the inner product - and applies the classic
contrastive form sum(D_pos^2) + sum([alpha - D_neg]_+) with no norm term, so
that gradient descent attracts positives and repels negatives.

All gradients are analytic; the hinge subgradient at the kink is 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

METRIC_EUC = "euc"
METRIC_IP = "ip"
MODE_AS_WRITTEN = "as_written"
MODE_DISTANCE = "distance"
NORM_ALL_PAIRS = "all_pairs"
NORM_NEGATIVE_ONLY = "negative_only"

_METRICS = (METRIC_EUC, METRIC_IP)
_MODES = (MODE_AS_WRITTEN, MODE_DISTANCE)
_SCOPES = (NORM_ALL_PAIRS, NORM_NEGATIVE_ONLY)


@dataclass
class LossConfig:
    metric: str = METRIC_EUC
    alpha: float = 0.1
    mode: str = MODE_DISTANCE
    norm_scope: str = NORM_NEGATIVE_ONLY

    def __post_init__(self):
        if self.metric not in _METRICS:
            raise ValueError(f"metric must be one of {_METRICS}, got {self.metric!r}")
        if self.mode not in _MODES:
            raise ValueError(f"mode must be one of {_MODES}, got {self.mode!r}")
        if self.norm_scope not in _SCOPES:
            raise ValueError(f"norm_scope must be one of {_SCOPES}, got {self.norm_scope!r}")
        if not (0.0 < self.alpha < 1.0):
            raise ValueError(f"margin alpha must lie in (0, 1), got {self.alpha}")


@dataclass
class PairBatch:
    """Stacked positive and negative (A, B) embedding pairs."""

    pos_a: np.ndarray
    pos_b: np.ndarray
    neg_a: np.ndarray
    neg_b: np.ndarray

    def __post_init__(self):
        for name in ("pos_a", "pos_b", "neg_a", "neg_b"):
            setattr(self, name, np.atleast_2d(np.asarray(getattr(self, name), dtype=np.float64)))
        if self.pos_a.shape != self.pos_b.shape or self.neg_a.shape != self.neg_b.shape:
            raise ValueError("A/B arrays must have matching shapes")

    @classmethod
    def empty(cls, dim: int) -> "PairBatch":
        z = np.zeros((0, dim))
        return cls(z, z.copy(), z.copy(), z.copy())

    @property
    def n_pos(self) -> int:
        return self.pos_a.shape[0]

    @property
    def n_neg(self) -> int:
        return self.neg_a.shape[0]


@dataclass
class PairGrads:
    """Loss gradients w.r.t. every A and B vector of a PairBatch."""

    pos_a: np.ndarray
    pos_b: np.ndarray
    neg_a: np.ndarray
    neg_b: np.ndarray


def euclidean_distance(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.sqrt(np.sum((a - b) ** 2)))


def euc_D(d: float) -> float:
    """Similarity 1/(1+d), strictly decreasing in d, in (0, 1]."""
    if d < 0:
        raise ValueError("distance must be nonnegative")
    return 1.0 / (1.0 + d)


def ip_D(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity; rejects zero-norm vectors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine similarity undefined for zero-norm vectors")
    return float(a @ b / (na * nb))


def _euc_terms(a: np.ndarray, b: np.ndarray, mode: str):
    """Per-pair d, unit direction, D for the selected mode, and dD/dd."""
    diff = a - b
    d = np.sqrt(np.sum(diff**2, axis=1))
    unit = diff / np.where(d > 0, d, 1.0)[:, None]  # zero direction at d = 0
    if mode == MODE_AS_WRITTEN:
        big_d = 1.0 / (1.0 + d)
        dD_dd = -1.0 / (1.0 + d) ** 2
    else:
        big_d = d / (1.0 + d)
        dD_dd = 1.0 / (1.0 + d) ** 2
    return d, unit, big_d, dD_dd


def fpd_loss_euc(batch: PairBatch, cfg: LossConfig) -> tuple[float, PairGrads]:
    """Euclidean-metric pair loss and its gradients."""
    if cfg.metric != METRIC_EUC:
        raise ValueError(f"config metric is {cfg.metric!r}, expected {METRIC_EUC!r}")
    loss = 0.0
    # positive pairs: D^2
    _, unit_p, dp, ddp = _euc_terms(batch.pos_a, batch.pos_b, cfg.mode)
    loss += float(np.sum(dp**2))
    coef_p = 2.0 * dp * ddp  # dL/dd per pair
    g_pos_a = coef_p[:, None] * unit_p
    # negative pairs: hinge [alpha - D]_+
    _, unit_n, dn, ddn = _euc_terms(batch.neg_a, batch.neg_b, cfg.mode)
    active = (cfg.alpha - dn) > 0
    loss += float(np.sum(np.maximum(cfg.alpha - dn, 0.0)))
    coef_n = np.where(active, -ddn, 0.0)
    g_neg_a = coef_n[:, None] * unit_n
    return loss, PairGrads(g_pos_a, -g_pos_a, g_neg_a, -g_neg_a)


def _cosine_terms(a: np.ndarray, b: np.ndarray):
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    if np.any(na == 0.0) or np.any(nb == 0.0):
        raise ValueError("cosine similarity undefined for zero-norm vectors")
    cos = np.sum(a * b, axis=1) / (na * nb)
    # dcos/dA and dcos/dB
    ga = b / (na * nb)[:, None] - cos[:, None] * a / (na**2)[:, None]
    gb = a / (na * nb)[:, None] - cos[:, None] * b / (nb**2)[:, None]
    return cos, ga, gb


def fpd_loss_ip(batch: PairBatch, cfg: LossConfig) -> tuple[float, PairGrads]:
    """Inner-product-metric pair loss and its gradients."""
    if cfg.metric != METRIC_IP:
        raise ValueError(f"config metric is {cfg.metric!r}, expected {METRIC_IP!r}")
    loss = 0.0
    cos_p, gpa, gpb = _cosine_terms(batch.pos_a, batch.pos_b)
    cos_n, gna, gnb = _cosine_terms(batch.neg_a, batch.neg_b)
    if cfg.mode == MODE_AS_WRITTEN:
        # positives: [D + alpha]_+, negatives: [alpha - D]_+, norm term (D + 1)^2
        dldc_p = np.where(cos_p + cfg.alpha > 0, 1.0, 0.0)
        loss += float(np.sum(np.maximum(cos_p + cfg.alpha, 0.0)))
        dldc_n = np.where(cfg.alpha - cos_n > 0, -1.0, 0.0)
        loss += float(np.sum(np.maximum(cfg.alpha - cos_n, 0.0)))
        loss += float(np.sum((cos_n + 1.0) ** 2))
        dldc_n = dldc_n + 2.0 * (cos_n + 1.0)
        if cfg.norm_scope == NORM_ALL_PAIRS:
            loss += float(np.sum((cos_p + 1.0) ** 2))
            dldc_p = dldc_p + 2.0 * (cos_p + 1.0)
    else:
        # distance reading: D = 1 - cos; positives D^2, negatives [alpha - D]_+
        dist_p = 1.0 - cos_p
        loss += float(np.sum(dist_p**2))
        dldc_p = -2.0 * dist_p
        dist_n = 1.0 - cos_n
        active = (cfg.alpha - dist_n) > 0
        loss += float(np.sum(np.maximum(cfg.alpha - dist_n, 0.0)))
        dldc_n = np.where(active, 1.0, 0.0)
    grads = PairGrads(
        dldc_p[:, None] * gpa,
        dldc_p[:, None] * gpb,
        dldc_n[:, None] * gna,
        dldc_n[:, None] * gnb,
    )
    return loss, grads


def fpd_loss(batch: PairBatch, cfg: LossConfig) -> tuple[float, PairGrads]:
    if cfg.metric == METRIC_EUC:
        return fpd_loss_euc(batch, cfg)
    return fpd_loss_ip(batch, cfg)


def random_pair_batch(
    rng: np.random.Generator,
    dim: int,
    n_pos: int,
    n_neg: int,
    cfg: LossConfig,
    kink_margin: float = 1e-3,
) -> PairBatch:
    """Random pairs resampled so no hinge argument sits near its kink."""

    def hinge_safe(a, b, positive):
        d = euclidean_distance(a, b)
        if cfg.metric == METRIC_EUC:
            if d <= kink_margin:
                return False
            big_d = euc_D(d) if cfg.mode == MODE_AS_WRITTEN else d / (1.0 + d)
            return positive or abs(cfg.alpha - big_d) > kink_margin
        if min(np.linalg.norm(a), np.linalg.norm(b)) < 0.1:
            return False
        cos = ip_D(a, b)
        if cfg.mode == MODE_AS_WRITTEN:
            arg = cos + cfg.alpha if positive else cfg.alpha - cos
        else:
            if positive:
                return True
            arg = cfg.alpha - (1.0 - cos)
        return abs(arg) > kink_margin

    def draw(n, positive):
        rows_a, rows_b = [], []
        for _ in range(n):
            for _attempt in range(200):
                a, b = rng.normal(size=dim), rng.normal(size=dim)
                if hinge_safe(a, b, positive):
                    break
            rows_a.append(a)
            rows_b.append(b)
        if not rows_a:
            return np.zeros((0, dim)), np.zeros((0, dim))
        return np.stack(rows_a), np.stack(rows_b)

    pa, pb = draw(n_pos, True)
    na, nb = draw(n_neg, False)
    return PairBatch(pa, pb, na, nb)


def grad_check_loss(
    cfg: LossConfig,
    seed: int,
    dim: int = 6,
    n_pos: int = 4,
    n_neg: int = 4,
    step: float = 1e-6,
) -> float:
    """Max relative error between analytic and central-difference gradients."""
    rng = np.random.default_rng(seed)
    batch = random_pair_batch(rng, dim, n_pos, n_neg, cfg)
    _, grads = fpd_loss(batch, cfg)
    max_err = 0.0
    for name in ("pos_a", "pos_b", "neg_a", "neg_b"):
        arr = getattr(batch, name)
        ana = getattr(grads, name)
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + step
            hi, _ = fpd_loss(batch, cfg)
            arr[idx] = orig - step
            lo, _ = fpd_loss(batch, cfg)
            arr[idx] = orig
            fd = (hi - lo) / (2.0 * step)
            denom = max(abs(fd), abs(ana[idx]))
            if denom > 1e-10:
                max_err = max(max_err, abs(fd - ana[idx]) / denom)
    return max_err
