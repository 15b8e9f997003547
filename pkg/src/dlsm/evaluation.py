"""Link prediction, community detection, degree-heterogeneity diagnostics and embedding export."""

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.stats import spearmanr
from sklearn.cluster import KMeans

from .errors import DataError, DomainError
from .metrics import AP_TIE_POLICY, auc, average_precision, clustering_accuracy
from .trainer import score_pairs


@dataclass
class EvalReport:
    task: str
    seed: int
    split_id: str
    config_hash: str
    auc: Optional[float] = None
    ap: Optional[float] = None
    accuracy: Optional[float] = None
    factor_distributions: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    def to_json(self, **kwargs):
        return json.dumps(_jsonable(self.to_dict()), sort_keys=True, **kwargs)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _report(model, task, **kw):
    return EvalReport(task=task, seed=model.config.seed, split_id=model.meta.get("split_id", ""), config_hash=model.config_hash, **kw)


def score_edges(model, pairs):
    """Edge probabilities from posterior-mean embeddings for ``(k, 2)`` index pairs.

    Raises:
        DataError: a pair is a self-loop or an index is out of range.
    """
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if pairs.size and (pairs.min() < 0 or pairs.max() >= model.n):
        raise DataError(f"node index out of range [0, {model.n})")
    if np.any(pairs[:, 0] == pairs[:, 1]):
        raise DataError("self-loop pairs cannot be scored")
    return score_pairs(model.posterior, pairs, model.config.mode, model.config.undirected)


def link_prediction_eval(model, split=None):
    """AUC and AP over test positives and test negatives."""
    arrays = model.split if split is None else split.arrays()
    pos, neg = np.asarray(arrays["test_pos"]), np.asarray(arrays["test_neg"])
    scores = score_edges(model, np.concatenate([pos, neg]))
    labels = np.r_[np.ones(len(pos)), np.zeros(len(neg))]
    return _report(
        model,
        "lp",
        auc=auc(scores, labels),
        ap=average_precision(scores, labels),
        details={"n_pos": len(pos), "n_neg": len(neg), "ap_tie_policy": AP_TIE_POLICY, "mode": model.config.mode},
    )


def kmeans(embeddings, k, seed=0, restarts=10):
    """Lloyd k-means with k-means++ seeding; best of ``restarts`` runs by inertia."""
    X = np.asarray(embeddings, dtype=np.float64)
    if k < 1:
        raise DomainError(f"k must be at least 1, got {k}")
    if k > len(X):
        raise DomainError(f"k={k} exceeds the number of points {len(X)}")
    km = KMeans(n_clusters=k, init="k-means++", n_init=restarts, algorithm="lloyd", random_state=seed)
    labels = km.fit_predict(X)
    return labels, float(km.inertia_)


def community_detection_eval(model, truth, k=None, seed=None, min_community_size=1):
    """Cluster output-layer posterior-mean positions and score against ground truth.

    Args:
        truth: mapping from original node label to community.
        k: cluster count; defaults to the number of retained communities.
        min_community_size: communities smaller than this are left out of
            the evaluation (their nodes stay in the graph).
    """
    idx = [i for i, lab in enumerate(model.labels) if lab in truth]
    if not idx:
        raise DataError("no node has a ground-truth label")
    comm = np.array([truth[model.labels[i]] for i in idx])
    values, counts = np.unique(comm, return_counts=True)
    keep_comm = set(values[counts >= min_community_size])
    keep = np.array([c in keep_comm for c in comm])
    idx = np.asarray(idx)[keep]
    comm = comm[keep]
    k = len(keep_comm) if k is None else int(k)
    seed = model.config.seed if seed is None else seed
    pred, inertia = kmeans(model.posterior["z"][idx], k, seed)
    return _report(
        model,
        "cd",
        accuracy=clustering_accuracy(pred, comm),
        details={"k": k, "n_evaluated": int(len(idx)), "inertia": inertia},
    )


def empirical_pmf(values):
    v, c = np.unique(np.asarray(values), return_counts=True)
    return v, c / c.sum()


def density_histogram(values, bins=50):
    values = np.asarray(values, dtype=np.float64)
    if np.ptp(values) == 0:
        return values[:1].copy(), np.ones(1)
    dens, edges = np.histogram(values, bins=bins, density=True)
    return 0.5 * (edges[:-1] + edges[1:]), dens


def ccd(values):
    """Complementary cumulative distribution ``P(X >= x)`` at each distinct value."""
    x = np.sort(np.asarray(values, dtype=np.float64))
    ux, first = np.unique(x, return_index=True)
    return ux, 1.0 - first / x.size


def degree_factor_report(model, g=None, bins=50):
    """Degree and node-random-factor distributions.

    Degrees come from ``g`` when given, otherwise from every positive edge in
    the model's split. Factors are summarised by the Euclidean norms of the
    output-layer ``gamma`` and ``delta``; their reciprocals play the role of
    sending and receiving tendencies.
    """
    if g is not None:
        edges = g.edges
    else:
        edges = np.concatenate([model.split[k] for k in ("train_pos", "val_pos", "test_pos")])
    out_deg = np.bincount(edges[:, 0], minlength=model.n)
    in_deg = np.bincount(edges[:, 1], minlength=model.n)
    g_norm = np.linalg.norm(model.posterior["gamma"], axis=1)
    d_norm = np.linalg.norm(model.posterior["delta"], axis=1)
    series = {
        "out_degree_pdd": empirical_pmf(out_deg),
        "in_degree_pdd": empirical_pmf(in_deg),
        "inv_gamma_pdd": density_histogram(1.0 / g_norm, bins),
        "inv_delta_pdd": density_histogram(1.0 / d_norm, bins),
        "gamma_ccd": ccd(g_norm),
        "delta_ccd": ccd(d_norm),
    }
    series = {k: {"x": x, "y": y} for k, (x, y) in series.items()}
    rho_out = spearmanr(out_deg, 1.0 / g_norm).statistic
    rho_in = spearmanr(in_deg, 1.0 / d_norm).statistic
    return _report(
        model,
        "factors",
        factor_distributions=series,
        details={"spearman_out_degree_inv_gamma": float(rho_out), "spearman_in_degree_inv_delta": float(rho_in)},
    )


def write_factor_series(report, outdir, plot=False):
    """One CSV per series (``x,y``); optionally a PNG panel when matplotlib is present."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, s in report.factor_distributions.items():
        p = outdir / f"{name}.csv"
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y"])
            w.writerows(zip(np.asarray(s["x"]).tolist(), np.asarray(s["y"]).tolist()))
        written.append(p)
    if plot:
        try:
            import matplotlib

            matplotlib.use("Agg")
            import matplotlib.pyplot as plt
        except ImportError:
            return written
        fd = report.factor_distributions
        fig, axes = plt.subplots(1, 3, figsize=(12, 3.5))
        for ax, (deg, fac, title) in zip(axes[:2], [("out_degree_pdd", "inv_gamma_pdd", "out"), ("in_degree_pdd", "inv_delta_pdd", "in")]):
            ax.loglog(fd[deg]["x"], fd[deg]["y"], "o", ms=3, label=f"{title}-degree")
            ax2 = ax.twiny()
            ax2.loglog(fd[fac]["x"], fd[fac]["y"], "-", color="C1", label="reciprocal factor (top axis)")
            ax.set_title(f"PDD of {title}-degrees")
            ax.legend(handles=ax.get_lines() + ax2.get_lines(), fontsize=8, loc="lower left")
        axes[2].loglog(fd["gamma_ccd"]["x"], fd["gamma_ccd"]["y"], label="gamma")
        axes[2].loglog(fd["delta_ccd"]["x"], fd["delta_ccd"]["y"], label="delta")
        axes[2].set_title("CCD of random factors")
        axes[2].legend()
        fig.tight_layout()
        p = outdir / "factors.png"
        fig.savefig(p, dpi=120)
        plt.close(fig)
        written.append(p)
    return written


def export_embeddings(model, path):
    """CSV with node label, output-layer ``z, gamma, delta`` and hard memberships of every layer."""
    post = model.posterior
    D = post["z"].shape[1]
    memberships = model.hard_memberships()
    header = ["label"] + [f"z_{d}" for d in range(D)] + [f"gamma_{d}" for d in range(D)] + [f"delta_{d}" for d in range(D)]
    for l, s in enumerate(memberships, start=1):
        header += [f"s{l}_{g}" for g in range(s.shape[1])]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i, label in enumerate(model.labels):
            row = [label] + [repr(float(x)) for x in post["z"][i]] + [repr(float(x)) for x in post["gamma"][i]]
            row += [repr(float(x)) for x in post["delta"][i]]
            for s in memberships:
                row += [int(x) for x in s[i]]
            w.writerow(row)
    return path


def mean_sd(values):
    """``(mean, sd)`` with the sample standard deviation; sd is 0 for a single value."""
    values = np.asarray([v for v in values if v is not None], dtype=np.float64)
    if values.size == 0:
        return float("nan"), float("nan")
    sd = float(values.std(ddof=1)) if values.size > 1 else 0.0
    return float(values.mean()), sd


def format_mean_sd(values, digits=3):
    m, s = mean_sd(values)
    return f"{m:.{digits}f}±{s:.{digits}f}"
