"""End-to-end source-free adaptation runs and their reports."""

from __future__ import annotations

import copy
import csv
import gc
import io
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
from scipy import stats

from .classifier import GCNClassifier, accuracy, predict_proba, pretrain_source
from .config import ExperimentConfig
from .errors import ArgumentError, ModelError, SourceAccessError
from .graph import Dataset, Graph, graph_density, parse_tu_dataset, split_by_density, stratified_split
from .jigsaw import consistency_loss, jigsaw_exchange
from .pseudo_label import (CurriculumSchedule, class_max, class_shares, make_records, select_confident,
                           sup_loss, thresholds)
from .score_net import ScoreNetwork, train_score_network
from .sde import reconstruct_graphs
from .synthetic import generate_synthetic_benchmark

log = logging.getLogger(__name__)

METRICS_COLUMNS = ["task", "seed", "epoch", "loss_sup", "loss_con", "loss_total", "confident_count", "accuracy"]
PSEUDO_LABEL_COLUMNS = ["epoch", "class", "M_c", "tau_c", "confident_count", "class_share"]


class SourceHandle:
    """Gatekeeper for source data; any read after ``close`` raises."""

    def __init__(self, dataset: Dataset):
        self._dataset = dataset
        self.reads = 0
        self.closed = False

    def get(self) -> Dataset:
        if self.closed:
            raise SourceAccessError("source data requested after adaptation started")
        self.reads += 1
        return self._dataset

    def close(self) -> None:
        self._dataset = None
        self.closed = True


@dataclass
class DomainData:
    source_train: Dataset
    target_train: Dataset
    target_test: Dataset
    task: str


def load_domains(cfg: ExperimentConfig) -> DomainData:
    """Resolve ``cfg.data`` into source-train / target-train / target-test sets.

    ``"synthetic"`` generates the SBM benchmark.  A directory holding
    ``source/`` and ``target/`` TUDataset folders is used as given; any other
    directory is one TUDataset split into density domains.
    """
    if cfg.data == "synthetic":
        src, tgt = generate_synthetic_benchmark(cfg.synthetic, cfg.synthetic.seed)
        task = "source->target"
    else:
        root = Path(cfg.data)
        if not root.exists():
            raise ArgumentError(f"data path {root} does not exist")
        if (root / "source").is_dir() and (root / "target").is_dir():
            src, tgt = parse_tu_dataset(root / "source"), parse_tu_dataset(root / "target")
            task = "source->target"
        else:
            split = split_by_density(parse_tu_dataset(root), cfg.num_domains, cfg.seed, cfg.train_ratio)
            s, t = cfg.source_domain, cfg.target_domain
            if not (0 <= s < cfg.num_domains and 0 <= t < cfg.num_domains) or s == t:
                raise ArgumentError(f"bad domain pair {s}->{t}")
            task = f"D{s}->D{t}"
            return DomainData(split.train(s), split.train(t), split.test(t), task)
    if len(tgt) == 0:
        raise ArgumentError("target domain is empty")
    s_tr, _ = stratified_split(src.labels(), cfg.train_ratio, cfg.seed)
    t_tr, t_te = stratified_split(tgt.labels(), cfg.train_ratio, cfg.seed + 1)
    return DomainData(src.subset(s_tr), tgt.subset(t_tr), tgt.subset(t_te), task)


# --------------------------------------------------------------------------
# reports


@dataclass
class DensityShift:
    deltas: list
    toward: int
    fraction_toward: float
    p_value: float
    mean_before: float
    mean_after: float
    source_mean: float

    def to_json(self) -> dict:
        return dict(self.__dict__)


def density_shift_report(before: Sequence[Graph], after: Sequence[Graph], source_stats) -> DensityShift:
    """Per-graph density change and a one-sided sign test toward the source mean."""
    if len(before) != len(after):
        raise ArgumentError("before/after must be aligned graph lists")
    if len(before) == 0:
        raise ArgumentError("no graphs to compare")
    mu = float(source_stats["mean"] if isinstance(source_stats, dict) else source_stats)
    d0 = np.array([graph_density(g) for g in before])
    d1 = np.array([graph_density(g) for g in after])
    toward = int(np.sum(np.abs(d1 - mu) < np.abs(d0 - mu)))
    p = stats.binomtest(toward, len(d0), 0.5, alternative="greater").pvalue
    return DensityShift((d1 - d0).tolist(), toward, toward / len(d0), float(p),
                        float(d0.mean()), float(d1.mean()), mu)


def _mean_std(values: Sequence[float]) -> tuple:
    v = np.asarray(values, dtype=np.float64)
    return float(v.mean()), float(v.std(ddof=1)) if len(v) > 1 else 0.0


@dataclass
class MetricsReport:
    task: str
    seeds: list
    accuracy: list = field(default_factory=list)          # adapted model, reconstructed target test
    accuracy_raw: list = field(default_factory=list)      # adapted model, raw target test
    source_only: list = field(default_factory=list)       # frozen source model, raw target test
    epochs: list = field(default_factory=list)
    pseudo_labels: list = field(default_factory=list)
    density: list = field(default_factory=list)
    augmentation_trace: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)           # wall-clock, excluded from serialisation

    @property
    def accuracy_mean_std(self) -> tuple:
        return _mean_std(self.accuracy)

    @property
    def source_only_mean_std(self) -> tuple:
        return _mean_std(self.source_only)

    def summary(self) -> dict:
        out = {"task": self.task, "runs": len(self.seeds)}
        for name in ("accuracy", "accuracy_raw", "source_only"):
            values = getattr(self, name)
            if values:
                out[f"{name}_mean"], out[f"{name}_std"] = _mean_std(values)
        return out

    def to_json(self) -> dict:
        return {
            "summary": self.summary(),
            "task": self.task,
            "seeds": list(self.seeds),
            "accuracy": list(self.accuracy),
            "accuracy_raw": list(self.accuracy_raw),
            "source_only": list(self.source_only),
            "epochs": self.epochs,
            "pseudo_labels": self.pseudo_labels,
            "density": self.density,
        }

    def metrics_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=METRICS_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in self.epochs:
            w.writerow({k: row[k] for k in METRICS_COLUMNS})
        return buf.getvalue()

    def pseudo_label_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=["seed"] + PSEUDO_LABEL_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(self.pseudo_labels)
        return buf.getvalue()

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.json").write_text(json.dumps(self.to_json(), indent=1, sort_keys=True))
        (out / "metrics.csv").write_text(self.metrics_csv())
        (out / "pseudo_labels.csv").write_text(self.pseudo_label_csv())
        (out / "timings.json").write_text(json.dumps(self.timings, indent=1, sort_keys=True))
        if self.augmentation_trace:
            lines = [json.dumps(row, sort_keys=True) for row in self.augmentation_trace]
            (out / "augmentation_trace.jsonl").write_text("\n".join(lines) + "\n")
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "MetricsReport":
        return cls(obj["task"], obj["seeds"], obj["accuracy"], obj["accuracy_raw"], obj["source_only"],
                   obj["epochs"], obj["pseudo_labels"], obj["density"])


# --------------------------------------------------------------------------
# target-side adaptation


@dataclass
class AdaptationResult:
    model: GCNClassifier
    reconstructed: list
    test_reconstructed: list
    epochs: list
    pseudo_labels: list
    trace: list


def _chunks(seq, size):
    return [seq[s: s + size] for s in range(0, len(seq), size)]


def adapt_on_target(classifier: GCNClassifier, score_net, target: Sequence[Graph], cfg: ExperimentConfig,
                    seed: int, test_graphs: Sequence[Graph] = (), test_labels: Sequence[int] = (),
                    task: str = "", reconstructed: Optional[list] = None,
                    test_reconstructed: Optional[list] = None) -> AdaptationResult:
    """Reconstruct target graphs once, then run the pseudo-label + jigsaw epochs.

    Only target graphs, the frozen score network and the classifier are used.
    Test graphs are evaluated after reconstruction with the same network.
    """
    d = cfg.diffusion
    schedule = d.schedule
    if reconstructed is None:
        reconstructed = reconstruct_graphs(list(target), score_net, schedule, d.t_recon, d.dt,
                                           seed=seed, steps=d.step_override)
    if test_reconstructed is None and len(test_graphs):
        test_reconstructed = reconstruct_graphs(list(test_graphs), score_net, schedule, d.t_recon, d.dt,
                                                seed=seed + 100_003, steps=d.step_override)
    model = copy.deepcopy(classifier)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.adapt.lr)
    curriculum = CurriculumSchedule(cfg.curriculum.alpha_start, cfg.curriculum.alpha_end, cfg.adapt.epochs)
    rng = np.random.default_rng([seed, 1])
    C = model.num_classes
    epoch_rows, pl_rows, trace = [], [], []
    graphs = list(reconstructed)
    for e in range(cfg.adapt.epochs):
        if cfg.adapt.rereconstruct and e > 0:
            graphs = reconstruct_graphs(list(target), score_net, schedule, d.t_recon, d.dt,
                                        seed=seed + 7919 * e, steps=d.step_override)
        records = make_records(predict_proba(graphs, model))
        M = class_max(records, C)
        tau = thresholds(M, e, curriculum)
        confident = dict(select_confident(records, tau))
        shares = class_shares(list(confident.items()), C)
        counts = np.bincount(list(confident.values()), minlength=C) if confident else np.zeros(C, int)
        for c in range(C):
            pl_rows.append({"seed": seed, "epoch": e, "class": c, "M_c": float(M[c]), "tau_c": float(tau[c]),
                            "confident_count": int(counts[c]), "class_share": float(shares[c])})
        sup_terms, con_terms = [], []
        for b, batch in enumerate(_chunks(rng.permutation(len(graphs)).tolist(), cfg.adapt.batch_size)):
            S = [i for i in batch if i in confident]
            U = [i for i in batch if i not in confident]
            l_sup = sup_loss([graphs[i] for i in S], [confident[i] for i in S], model)
            l_con = torch.zeros((), dtype=model.dtype)
            if cfg.adapt.jigsaw and S and U:
                S_p, U_p = list(rng.permutation(S)), list(rng.permutation(U))
                n_pairs = min(len(S_p), len(U_p))
                conf_aug, conf_y, unconf_aug, unconf_orig = [], [], [], []
                for k in range(n_pairs):
                    j, u = int(S_p[k]), int(U_p[k])
                    pair = jigsaw_exchange(graphs[j], graphs[u], np.random.default_rng([seed, e, b, k]))
                    conf_aug.append(pair.augmented_confident)
                    conf_y.append(confident[j])
                    unconf_aug.append(pair.augmented_unconfident)
                    unconf_orig.append(graphs[u])
                    if cfg.adapt.trace:
                        trace.append({"epoch": e, "pair": [j, u], **pair.trace()})
                l_con = consistency_loss(model, conf_aug, conf_y, unconf_aug, unconf_orig)
            loss = l_sup + l_con
            if loss.requires_grad:
                opt.zero_grad()
                loss.backward()
                opt.step()
            sup_terms.append(l_sup.item())
            con_terms.append(l_con.item())
        ls, lc = float(np.mean(sup_terms)), float(np.mean(con_terms))
        acc = accuracy(test_reconstructed, test_labels, model) if len(test_graphs) else float("nan")
        epoch_rows.append({"task": task, "seed": seed, "epoch": e, "loss_sup": ls, "loss_con": lc,
                           "loss_total": ls + lc, "confident_count": len(confident), "accuracy": acc})
    return AdaptationResult(model, graphs, list(test_reconstructed or []), epoch_rows, pl_rows, trace)


# --------------------------------------------------------------------------
# whole runs


def evaluate_source_only(classifier: GCNClassifier, target_test: Dataset) -> float:
    """Accuracy of the frozen source model on raw target test graphs."""
    return accuracy(list(target_test.graphs), target_test.labels(), classifier)


def _source_phase(handle: SourceHandle, cfg: ExperimentConfig, seed: int, classifier, score_net, timings):
    t0 = time.perf_counter()
    if classifier is None:
        classifier, _ = pretrain_source(handle.get(), cfg.classifier, seed=seed)
    t1 = time.perf_counter()
    if score_net is None:
        score_net, _ = train_score_network(handle.get(), cfg.diffusion.schedule, cfg.diffusion, seed=seed)
    t2 = time.perf_counter()
    source_mean = float(np.mean(handle.get().densities()))
    timings.setdefault("pretrain", []).append(t1 - t0)
    timings.setdefault("train_diffusion", []).append(t2 - t1)
    return classifier, score_net, source_mean


def run_adaptation(cfg: ExperimentConfig, classifier: Optional[GCNClassifier] = None,
                   score_net: Optional[ScoreNetwork] = None, data: Optional[DomainData] = None,
                   handles: Optional[list] = None) -> MetricsReport:
    """Pretrain on source, then adapt on target, once per configured seed.

    Supplied checkpoints skip the matching pretraining step.  The source set
    is reachable only through a ``SourceHandle`` that is closed before any
    target graph is touched; pass a list as ``handles`` to inspect them.
    """
    data = data or load_domains(cfg)
    if len(data.target_train) == 0:
        raise ArgumentError("target training set is empty")
    if classifier is not None and classifier.attribute_dim != data.target_train.attribute_dim:
        raise ModelError("classifier input width does not match target attributes")
    report = MetricsReport(data.task, cfg.run_seeds)
    for seed in cfg.run_seeds:
        handle = SourceHandle(data.source_train)
        if handles is not None:
            handles.append(handle)
        clf, net, source_mean = _source_phase(handle, cfg, seed, classifier, score_net, report.timings)
        handle.close()

        t0 = time.perf_counter()
        target, test = list(data.target_train.graphs), list(data.target_test.graphs)
        test_labels = data.target_test.labels()
        res = adapt_on_target(clf, net, [g.with_label(None) for g in target], cfg, seed,
                              [g.with_label(None) for g in test], test_labels, task=data.task)
        report.timings.setdefault("adapt", []).append(time.perf_counter() - t0)

        report.accuracy.append(accuracy(res.test_reconstructed, test_labels, res.model))
        report.accuracy_raw.append(accuracy(test, test_labels, res.model))
        report.source_only.append(evaluate_source_only(clf, data.target_test))
        report.epochs.extend(res.epochs)
        report.pseudo_labels.extend(res.pseudo_labels)
        report.augmentation_trace.extend({"seed": seed, **row} for row in res.trace)
        shift = density_shift_report(target, res.reconstructed, source_mean)
        report.density.append({"seed": seed, **{k: v for k, v in shift.to_json().items() if k != "deltas"}})
        log.info("seed %d: adapted %.3f, source-only %.3f", seed, report.accuracy[-1], report.source_only[-1])
    return report


# --------------------------------------------------------------------------
# scaling


@dataclass
class ScalingReport:
    sizes: list
    seconds: list
    slope: float
    intercept: float
    r2: float
    degenerate: bool

    def ratios(self) -> list:
        return [self.seconds[i + 1] / self.seconds[i] for i in range(len(self.seconds) - 1)]


def fit_line(sizes: Sequence[float], seconds: Sequence[float]) -> tuple:
    """Least-squares ``(slope, intercept, r2, degenerate)``."""
    x, y = np.asarray(sizes, float), np.asarray(seconds, float)
    if len(np.unique(x)) < 2:
        return float("nan"), float("nan"), float("nan"), True
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2, False


def scaling_probe(sizes: Sequence[int], classifier: GCNClassifier, score_net, cfg: ExperimentConfig,
                  graph_pool: Sequence[Graph], seed: int = 0, repeats: int = 1,
                  warmup: bool = True) -> ScalingReport:
    """Time the target phase (reconstruction + adaptation) for several target-set sizes.

    One draw with replacement from ``graph_pool`` is made and each size uses a
    prefix of it, so smaller sets are nested in larger ones.  Each size is timed
    ``repeats`` times and the minimum kept.  With ``warmup`` an untimed pass at
    the smallest size runs first so one-off allocation costs do not land on it.
    """
    if not sizes:
        raise ArgumentError("scaling_probe needs at least one size")
    rng = np.random.default_rng(seed)
    drawn = [graph_pool[i].with_label(None) for i in rng.integers(len(graph_pool), size=max(sizes))]
    batches = [drawn[:size] for size in sizes]
    if warmup:
        adapt_on_target(classifier, score_net, batches[int(np.argmin(sizes))], cfg, seed)
    seconds = []
    for graphs in batches:
        best = float("inf")
        for _ in range(repeats):
            gc.collect()
            t0 = time.perf_counter()
            adapt_on_target(classifier, score_net, graphs, cfg, seed)
            best = min(best, time.perf_counter() - t0)
        seconds.append(best)
    slope, intercept, r2, degenerate = fit_line(sizes, seconds)
    return ScalingReport(list(sizes), seconds, slope, intercept, r2, degenerate)
