"""Group statistics for latent features: t-tests, IQ correlation, ROC/AUC."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from .connectome import pearson_corr
from .exceptions import DegenerateSeriesError, InsufficientDataError, NumericalError, ValidationError

REPORT_SCHEMA = "latentconn.stats/1"

_FPMIN = 1e-300
_EPS = 1e-16
_MAXIT = 20000


def _betacf(a, b, x):
    """Continued fraction for the incomplete beta (modified Lentz)."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _FPMIN:
        d = _FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, _MAXIT + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        step = d * c
        h *= step
        if abs(step - 1.0) < _EPS:
            return h
    raise NumericalError(f"incomplete beta did not converge for a={a}, b={b}, x={x}")


def betainc(a, b, x, xc=None):
    """Regularized incomplete beta I_x(a, b).

    ``xc`` may carry ``1 - x`` computed without cancellation.
    """
    if a <= 0 or b <= 0:
        raise ValidationError("betainc needs a > 0 and b > 0")
    if xc is None:
        xc = 1.0 - x
    if not 0.0 <= x <= 1.0:
        raise ValidationError(f"x must lie in [0, 1], got {x}")
    if x == 0.0:
        return 0.0
    if xc == 0.0:
        return 1.0
    log_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log(xc)
    )
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, xc) / b


def t_sf_two_sided(t, df):
    """P(|T| >= |t|) for Student's t with ``df`` degrees of freedom."""
    if df <= 0:
        raise ValidationError(f"degrees of freedom must be positive, got {df}")
    if math.isinf(t):
        return 0.0
    t2 = t * t
    return min(1.0, betainc(0.5 * df, 0.5, df / (df + t2), t2 / (df + t2)))


def t_cdf(t, df):
    half = 0.5 * t_sf_two_sided(t, df)
    return 1.0 - half if t > 0 else half


class TTestResult(NamedTuple):
    t: float
    df: float
    p: float


def ttest_ind(a, b, equal_var=True):
    """Independent two-sample t-test (pooled variance unless ``equal_var=False``)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = a.size, b.size
    if na < 2 or nb < 2:
        raise InsufficientDataError(f"each sample needs >= 2 values, got {na} and {nb}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValidationError("samples must be finite")
    va = a.var(ddof=1)
    vb = b.var(ddof=1)
    diff = a.mean() - b.mean()
    if equal_var:
        df = float(na + nb - 2)
        pooled = ((na - 1) * va + (nb - 1) * vb) / df
        se = math.sqrt(pooled * (1.0 / na + 1.0 / nb))
    else:
        qa, qb = va / na, vb / nb
        se = math.sqrt(qa + qb)
        df = (qa + qb) ** 2 / (qa**2 / (na - 1) + qb**2 / (nb - 1)) if se > 0 else float(na + nb - 2)
    if se == 0.0:
        if diff == 0.0:
            raise DegenerateSeriesError("both samples are constant and equal; t is undefined")
        raise DegenerateSeriesError("both samples have zero variance")
    t = float(diff / se)
    return TTestResult(t, df, t_sf_two_sided(t, df))


class CorrelationResult(NamedTuple):
    r: float
    p: float
    n_used: int


def pearson_with_p(x, y):
    """Signed Pearson r with a two-sided p, dropping pairs where either value is missing.

    ``None`` and NaN count as missing.
    """
    xs = np.array([np.nan if v is None else v for v in x], dtype=np.float64)
    ys = np.array([np.nan if v is None else v for v in y], dtype=np.float64)
    if xs.shape != ys.shape:
        raise ValidationError("x and y must have the same length")
    keep = np.isfinite(xs) & np.isfinite(ys)
    n = int(keep.sum())
    if n < 3:
        raise InsufficientDataError(f"need >= 3 complete pairs, got {n}")
    r = pearson_corr(xs[keep], ys[keep])
    if abs(r) >= 1.0:
        return CorrelationResult(r, 0.0, n)
    df = n - 2
    t = r * math.sqrt(df / (1.0 - r * r))
    return CorrelationResult(r, t_sf_two_sided(t, df), n)


def _check_binary(labels):
    labels = np.asarray(labels).astype(bool)
    if labels.all() or not labels.any():
        raise ValidationError("both classes must be present")
    return labels


def average_ranks(values):
    """1-based ranks with ties sharing their average rank."""
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(values.size)
    sorted_vals = values[order]
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def roc_auc(scores, labels):
    """P(score_pos > score_neg) + P(tie) / 2 via the Mann-Whitney rank sum.

    ``labels`` are truthy for the positive (ASD) class.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = _check_binary(labels)
    if scores.shape != labels.shape:
        raise ValidationError("scores and labels must have the same length")
    ranks = average_ranks(scores)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_curve(scores, labels):
    """(fpr, tpr) points from the highest threshold down, starting at (0, 0)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = _check_binary(labels)
    thresholds = np.unique(scores)[::-1]
    n_pos = labels.sum()
    n_neg = labels.size - n_pos
    fpr = [0.0]
    tpr = [0.0]
    for thr in thresholds:
        hit = scores >= thr
        tpr.append(float((hit & labels).sum() / n_pos))
        fpr.append(float((hit & ~labels).sum() / n_neg))
    return np.array(fpr), np.array(tpr)


def trapezoid_auc(scores, labels):
    fpr, tpr = roc_curve(scores, labels)
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


@dataclass
class FeatureStats:
    index: int
    asd_mean: float
    asd_sd: float
    nc_mean: float
    nc_sd: float
    t: float
    df: float
    p: float


def feature_stats(features, labels, equal_var=True):
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ValidationError("features must be a 2-D array (subjects x features)")
    labels = _check_binary(labels)
    out = []
    for k in range(features.shape[1]):
        a, b = features[labels, k], features[~labels, k]
        res = ttest_ind(a, b, equal_var=equal_var)
        out.append(
            FeatureStats(k, float(a.mean()), float(a.std(ddof=1)), float(b.mean()),
                         float(b.std(ddof=1)), res.t, res.df, res.p)
        )
    return out


def pick_feature(p_values, alpha=0.05):
    """Index of the smallest p below ``alpha``, or None."""
    best = None
    for k, p in enumerate(p_values):
        if p < alpha and (best is None or p < p_values[best]):
            best = k
    return best


def select_asd_feature(features, labels, alpha=0.05, equal_var=True):
    """Returns ``(index or None, per-feature stats)``."""
    stats = feature_stats(features, labels, equal_var=equal_var)
    return pick_feature([s.p for s in stats], alpha), stats


@dataclass
class StatsReport:
    n_subjects: int
    n_asd: int
    n_nc: int
    features: list
    alpha: float
    test: str
    selected_feature: int | None
    iq_correlation: dict = field(default_factory=dict)
    auc: dict | None = None
    checkpoint_sha256: str | None = None

    def to_dict(self):
        d = asdict(self)
        d = {"schema": REPORT_SCHEMA, **d}
        return d

    def to_text(self):
        lines = [
            f"subjects: {self.n_subjects} (ASD {self.n_asd}, NC {self.n_nc})",
            f"test: {self.test}, alpha={self.alpha:g}",
            "",
            f"{'feature':<8} {'ASD mean±SD':>20} {'NC mean±SD':>20} {'t':>9} {'df':>7} {'p':>11}",
        ]
        for f in self.features:
            fs = f if isinstance(f, dict) else asdict(f)
            lines.append(
                f"f{fs['index'] + 1:<7} {fs['asd_mean']:>9.4f} ± {fs['asd_sd']:<8.4f}"
                f" {fs['nc_mean']:>9.4f} ± {fs['nc_sd']:<8.4f} {fs['t']:>9.3f}"
                f" {fs['df']:>7.1f} {fs['p']:>11.3e}"
            )
        lines.append("")
        if self.selected_feature is None:
            lines.append("selected feature: none (no feature with p < alpha)")
        else:
            lines.append(f"selected feature: f{self.selected_feature + 1}")
        iq = self.iq_correlation
        if iq.get("present"):
            lines.append(f"IQ correlation: r={iq['r']:.4f}, p={iq['p']:.3e}, n_used={iq['n_used']}")
        else:
            lines.append(f"IQ correlation: absent (n_used={iq.get('n_used', 0)})")
        if self.auc is not None:
            lines.append(
                f"AUC: {self.auc['value']:.4f} ({self.auc['orientation']}; "
                f"discriminative {self.auc['discriminative']:.4f})"
            )
        if self.checkpoint_sha256:
            lines.append(f"checkpoint sha256: {self.checkpoint_sha256}")
        return "\n".join(lines) + "\n"


def build_report(features, labels, fiq=None, alpha=0.05, equal_var=True, checkpoint_sha256=None):
    """Full group comparison for a (subjects x features) table.

    ``labels`` are truthy for ASD. ``fiq`` may contain None/NaN; pairs with
    missing IQ are dropped and the number kept is reported.
    """
    labels = _check_binary(labels)
    features = np.asarray(features, dtype=np.float64)
    index, stats = select_asd_feature(features, labels, alpha, equal_var)
    iq = {"present": False, "r": None, "p": None, "n_used": 0}
    auc = None
    if index is not None:
        scores = features[:, index]
        if fiq is not None:
            try:
                res = pearson_with_p(scores, fiq)
                iq = {"present": True, "r": res.r, "p": res.p, "n_used": res.n_used}
            except InsufficientDataError:
                kept = sum(1 for v in fiq if v is not None and math.isfinite(v))
                iq["n_used"] = kept
        value = roc_auc(scores, labels)
        auc = {
            "value": value,
            "orientation": "higher_in_asd" if value >= 0.5 else "lower_in_asd",
            "discriminative": max(value, 1.0 - value),
        }
    return StatsReport(
        n_subjects=int(labels.size),
        n_asd=int(labels.sum()),
        n_nc=int((~labels).sum()),
        features=stats,
        alpha=alpha,
        test="student_pooled" if equal_var else "welch",
        selected_feature=index,
        iq_correlation=iq,
        auc=auc,
        checkpoint_sha256=checkpoint_sha256,
    )
