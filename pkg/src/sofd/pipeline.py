"""End-to-end run: supervised feature learning, reliable subset construction,
semi-supervised retraining with an unknown-class output, and evaluation."""

from __future__ import annotations

import contextlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dataio
from .config import RunConfig, to_toml
from .consistency import ConsistencyConfig, ConsistencyResult, consistent_filter, write_audit
from .graph import LaplacianBundle, SensorGraph, build_graph, write_edge_list
from .metrics import DiagnosisReport, write_confusion_csv, write_report
from .nnet import GcnModel, TrainConfig, train, write_loss_history
from .openset import (ClassGaussian, RejectionConfig, Scores, build_pseudo_set, fit_class_gaussians,
                      fused_features, write_features)

log = logging.getLogger(__name__)

VARIANTS = ("full", "no_fusion", "no_consistency", "raw_feature_space")


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"stage {stage!r} failed: {message}")
        self.stage = stage
        self.message = message


@dataclass
class RunArtifacts:
    config: RunConfig
    variant: str
    split: dataio.Split
    normalizer: dataio.Normalizer
    graph: SensorGraph
    laplacian: LaplacianBundle
    m0: GcnModel
    m1: GcnModel
    classes: list[ClassGaussian]
    test_features: np.ndarray
    scores: Scores
    pseudo: dataio.Dataset  # D_p
    reliable: dataio.Dataset  # D_s
    consistency: ConsistencyResult | None
    predictions: np.ndarray
    report: DiagnosisReport
    loss_m0: list[float] = field(default_factory=list)
    loss_m1: list[float] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)
    output_dir: Path | None = None


def load_pool(cfg: RunConfig) -> dataio.LabeledPool:
    ds = cfg.dataset
    if ds.kind == "synthetic":
        n_classes = max(ds.known_classes + [ds.unknown_class])
        means = dataio.separated_means(n_classes, cfg.synthetic.m, cfg.synthetic.separation, cfg.synthetic.scale)
        spec = dataio.SyntheticSpec(means, cfg.synthetic.scale, ds.per_class, cfg.synthetic.seed)
        return dataio.synthetic_pool(spec, speed=ds.speed)
    path = cfg.data_path()
    if ds.kind == "prepared":
        if path.is_dir():
            path = path / f"speed_{ds.speed}.csv"
        return dataio.read_prepared(path)
    records = dataio.load_raw(path, dataio.Schema.from_mapping(ds.schema))
    return dataio.LabeledPool.from_records(records, dataio.Schema.from_mapping(ds.schema))


def make_split(cfg: RunConfig) -> dataio.Split:
    ds = cfg.dataset
    return dataio.build_split(load_pool(cfg), ds.known_classes, ds.unknown_class, ds.speed,
                              ds.per_class, ds.train_frac, ds.seed)


def _train_config(section, seed: int) -> TrainConfig:
    return TrainConfig(section.lr, section.batch_size, section.epochs, section.beta1, section.beta2,
                       section.eps, seed)


class _Stages:
    def __init__(self):
        self.timings: dict[str, float] = {}

    @contextlib.contextmanager
    def __call__(self, name: str):
        log.info("stage %s", name)
        t0 = time.perf_counter()
        try:
            yield
        except StageError:
            raise
        except Exception as exc:
            raise StageError(name, f"{type(exc).__name__}: {exc}") from exc
        self.timings[name] = round(time.perf_counter() - t0, 3)


def run(cfg: RunConfig, variant: str = "full", output_dir: str | Path | None = None,
        split: dataio.Split | None = None) -> RunArtifacts:
    """Execute all stages in order and persist their outputs.

    ``output_dir=None`` uses ``cfg.output_dir``; an empty string skips
    persistence. On failure only ``error.json`` is written.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; choose from {VARIANTS}")
    out = Path(cfg.output_dir) if output_dir is None else (Path(output_dir) if output_dir else None)
    stage = _Stages()
    try:
        art = _run(cfg, variant, stage, split)
    except StageError as exc:
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
            (out / "error.json").write_text(
                json.dumps({"stage": exc.stage, "error": exc.message}, indent=2) + "\n", encoding="utf-8")
        raise
    art.timings = stage.timings
    if out is not None:
        persist(art, out)
        art.output_dir = out
    return art


def _run(cfg: RunConfig, variant: str, stage: _Stages, split: dataio.Split | None) -> RunArtifacts:
    with stage("load"):
        split = split or make_split(cfg)
        k = split.labeled.n_known
        truth = split.truth  # only the evaluation stage reads this

    # Stage 1: supervised feature learning
    with stage("normalize"):
        norm = dataio.fit_normalizer(split.labeled)
        d_l = dataio.apply_normalizer(norm, split.labeled)
        d_u = dataio.apply_normalizer(norm, split.unlabeled)
    with stage("graph"):
        graph = build_graph(d_l.x, cfg.graph.sigma2, cfg.graph.epsilon)
        lap = LaplacianBundle.from_graph(graph, cfg.graph.use_weights)
        basis = lap.basis(cfg.graph.cheb_order)
    with stage("train_m0"):
        fc = cfg.model.hidden_for(cfg.dataset.speed) + [k]
        m0 = GcnModel(basis, cfg.model.conv_widths, fc, seed=cfg.seed)
        loss_m0 = train(m0, d_l.x, d_l.y, _train_config(cfg.train_m0, cfg.seed))
        frozen = {name: p.copy() for name, p in m0.params.items()}

    # Stage 2: reliable subset construction
    with stage("features"):
        if variant == "raw_feature_space":
            z_l, z_u = d_l.x, d_u.x
        else:
            layers = [-1] if variant == "no_fusion" else (cfg.rejection.layers or None)
            z_l = fused_features(m0, d_l.x, layers)
            z_u = fused_features(m0, d_u.x, layers)
    with stage("rejection"):
        rc = RejectionConfig(cfg.rejection.alpha, cfg.rejection.reg, None, cfg.rejection.priors or None,
                             cfg.rejection.positive_boundary, cfg.rejection.dfn_equals_n)
        classes = fit_class_gaussians(z_l, d_l.y, k, rc)
        pseudo, scores = build_pseudo_set(d_u, z_u, classes, rc.positive_boundary)
        log.info("excluded %d of %d test samples", len(pseudo), len(d_u))
    with stage("consistency"):
        if variant == "no_consistency":
            cons = None
            keep = np.flatnonzero(scores.excluded)
        else:
            cons = consistent_filter(z_u, scores.excluded, ConsistencyConfig(cfg.consistency.n_neighbors),
                                     ids=d_u.ids)
            keep = cons.members[cons.retained]
        reliable = d_u.subset(keep, role="D_s", y=k)
        log.info("reliable subset: %d of %d pseudo-labeled samples", len(reliable), len(pseudo))
    for name, p in m0.params.items():
        if not np.array_equal(p, frozen[name]):
            raise StageError("consistency", f"M0 parameter {name} changed after training")

    # Stage 3: semi-supervised diagnosis
    flags = []
    with stage("train_m1"):
        if len(reliable) == 0:
            log.warning("reliable subset is empty; M1 is trained on labeled data only")
            flags.append("empty_reliable_subset")
        m1 = m0.with_outputs(k + 1, seed=cfg.seed + 1)
        x1 = np.vstack([d_l.x, reliable.x])
        y1 = np.concatenate([d_l.y, reliable.y])
        loss_m1 = train(m1, x1, y1, _train_config(cfg.train_m1, cfg.seed + 1))
    with stage("predict"):
        pred, _ = m1.predict(d_u.x)

    with stage("evaluate"):
        echo = cfg.to_dict()
        echo.pop("output_dir")
        report = DiagnosisReport.from_predictions(
            truth, pred, k,
            n_pseudo=len(pseudo),
            n_reliable=len(reliable),
            n_reliable_unknown=int(np.sum(truth[keep] == k)),
            seed=cfg.seed,
            speed=cfg.dataset.speed,
            variant=variant,
            config_hash=cfg.hash(),
            flags=flags,
            config=echo,
        )
    return RunArtifacts(cfg, variant, split, norm, graph, lap, m0, m1, classes, z_u, scores, pseudo,
                        reliable, cons, pred, report, loss_m0, loss_m1)


def run_ablation(cfg: RunConfig, variant: str, **kwargs) -> RunArtifacts:
    if variant == "full":
        raise ValueError("run_ablation expects an ablation variant, not 'full'")
    return run(cfg, variant, **kwargs)


def persist(art: RunArtifacts, out: Path) -> Path:
    """Write config echo, checkpoints, audit, features, predictions and the report."""
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.toml").write_text(to_toml(art.config), encoding="utf-8")
    write_edge_list(art.graph, out / "graph.txt")
    art.m0.save(out / "m0.npz")
    art.m1.save(out / "m1.npz")
    write_loss_history(art.loss_m0, out / "loss_m0.csv")
    write_loss_history(art.loss_m1, out / "loss_m1.csv")
    ids = art.split.unlabeled.ids
    write_features(out / "features_m0.csv", ids, art.test_features)
    sc = art.scores
    members = np.flatnonzero(sc.excluded)
    if art.consistency is None:
        n_p = np.full(len(members), -1)
        retained = np.ones(len(members), dtype=bool)
    else:
        n_p, retained = art.consistency.n_p, art.consistency.retained
    write_audit(out / "subset_audit.csv", ids[members], sc.s[members], sc.zeta[members], n_p, retained)
    _write_labels(out / "predictions.csv", ids, art.predictions)
    _write_labels(out / "truth.csv", ids, art.split.truth)
    write_confusion_csv(art.report.confusion, out / "confusion.csv")
    (out / "timings.json").write_text(json.dumps(art.timings, indent=2) + "\n", encoding="utf-8")
    path = write_report(art.report, out / "report.json")
    return path


def _write_labels(path: Path, ids, labels) -> None:
    rows = ["sample_id,label"] + [f"{int(i)},{int(v)}" for i, v in zip(ids, labels)]
    path.write_text("\n".join(rows) + "\n", encoding="utf-8")


def read_labels(path: str | Path) -> tuple[np.ndarray | None, np.ndarray]:
    """Read a label file: either ``sample_id,label`` or a single ``label`` column."""
    path = Path(path)
    if not path.is_file():
        raise dataio.DataError(f"label file not found: {path}")
    lines = [ln.strip() for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip()]
    if lines and not lines[0].replace(",", "").replace("-", "").isdigit():
        lines = lines[1:]
    try:
        rows = [[int(c) for c in ln.split(",")] for ln in lines]
    except ValueError as exc:
        raise dataio.DataError(f"{path}: {exc}") from None
    if not rows:
        return None, np.array([], dtype=int)
    width = {len(r) for r in rows}
    if width == {2}:
        arr = np.array(rows)
        return arr[:, 0], arr[:, 1]
    if width == {1}:
        return None, np.array([r[0] for r in rows])
    raise dataio.DataError(f"{path}: expected one or two columns per row")
