"""Train -> attack -> defend orchestration and the four report tables.

Every random choice is derived from the experiment seed: the model's
initialisation and shuffling use it directly, image ``i`` is attacked with
seed ``derive_seed(seed, 1, i)`` and defended with master seed
``derive_seed(seed, 2, i)``.  Identical configs therefore give identical
tables, whatever order the cells are computed in.
"""
from __future__ import annotations

import json
import logging
import time
from functools import cached_property
from pathlib import Path

import numpy as np

from ..attacks import AttackKind, run_attack
from ..classifier import SmallNet, fit, load_checkpoint, save_checkpoint
from ..engine import Diagnosis, predict
from ..errors import ConfigError, InvalidInputError
from ..noise import DenoiserKind, NoiseKind
from ..tensor import derive_seed
from . import datasets
from .config import AttackSection, DatasetSection, ExperimentConfig, MedRdfSection, updated
from .report import RM_CELLS, ReportTable, emit_report, percent

log = logging.getLogger(__name__)

NATURAL = "Natural"
UNDEFENDED = "None"
_ATTACK_STREAM = 1
_DEFENSE_STREAM = 2

_NOISE_SHORT = {NoiseKind.GAUSSIAN: "gauss", NoiseKind.SALT_AND_PEPPER: "s.p.",
                NoiseKind.POISSON: "poisson"}
_DENOISER_SHORT = {DenoiserKind.NONE: "None", DenoiserKind.MEDIAN_FILTER: "MF",
                   DenoiserKind.GAUSSIAN_SMOOTHING: "GS"}


def load_dataset(section: DatasetSection, split: str) -> datasets.Dataset:
    if section.source == "synthetic":
        data = datasets.synthetic_dataset(split, section.num_classes, section.seed,
                                          section.sizes, section.image_size, section.channels)
    elif section.source == "idx":
        if split == "train":
            if not (section.train_images and section.train_labels):
                raise ConfigError("training from IDX needs 'train_images' and 'train_labels'")
            data = datasets.load_idx(section.train_images, section.train_labels,
                                     section.num_classes, split)
        else:
            data = datasets.load_idx(section.images, section.labels, section.num_classes, split)
    else:
        path = section.path
        if split == "train":
            if not section.train_path:
                raise ConfigError(f"training from {section.source} needs 'train_path'")
            path = section.train_path
        if section.source == "csv":
            data = datasets.load_csv(path, num_classes=section.num_classes, split=split)
        else:
            data = datasets.load_image_dir(path, split, section.channels)
    if split != "train" and section.test_limit:
        data = data.head(section.test_limit)
    return data


def defense_name(section: MedRdfSection) -> str:
    return f"MedRDF {_NOISE_SHORT[section.noise]} sigma={section.sigma:g}"


def denoiser_name(section: MedRdfSection) -> str:
    return _DENOISER_SHORT[section.denoiser]


def epsilon_name(eps: float) -> str:
    scaled = eps * 255
    return f"{round(scaled):d}/255" if abs(scaled - round(scaled)) < 1e-6 else f"{eps:g}"


def attack_name(section: AttackSection) -> str:
    return f"{section.to_domain().label} eps={epsilon_name(section.epsilon)}"


class Experiment:
    """Lazily computed, cached stages of one experiment config."""

    def __init__(self, cfg: ExperimentConfig, out_dir=None):
        self.cfg = cfg
        self.out_dir = Path(out_dir if out_dir is not None else cfg.out)
        self._adversarial = {}
        self._diagnoses = {}

    # -- data and model --------------------------------------------------------

    @cached_property
    def test(self) -> datasets.Dataset:
        return load_dataset(self.cfg.dataset, "test")

    @cached_property
    def train_trace(self) -> list:
        return self._trained[1]

    @cached_property
    def model(self) -> SmallNet:
        return self._trained[0]

    @cached_property
    def _trained(self):
        m = self.cfg.model
        if m.checkpoint:
            model = load_checkpoint(m.checkpoint)
            if model.input_shape != self.test.image_shape:
                raise InvalidInputError(
                    f"checkpoint expects {model.input_shape}, data is {self.test.image_shape}")
            return model, []
        train = load_dataset(self.cfg.dataset, "train")
        k = max(train.num_classes, self.test.num_classes)
        model = SmallNet(train.image_shape, k, conv_channels=m.conv_channels, hidden=m.hidden,
                         seed=self.cfg.seed, init_gain=m.init_gain)
        t0 = time.perf_counter()
        _, trace = fit(model, train.images, train.labels, self.cfg.train.to_domain(self.cfg.seed))
        log.info("trained in %.1fs, final loss %.4f", time.perf_counter() - t0, trace[-1]["loss"])
        return model, trace

    def save_model(self) -> Path:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        path = self.out_dir / "model.ckpt"
        save_checkpoint(self.model, path)
        return path

    # -- attacks and defense ---------------------------------------------------

    def adversarial(self, section: AttackSection) -> np.ndarray:
        """Adversarial copy of the test images, crafted against the base model."""
        key = section.model_dump_json()
        if key not in self._adversarial:
            if section.epsilon == 0:
                self._adversarial[key] = self.test.images.copy()
            else:
                out = np.empty_like(self.test.images)
                for i, (x, y) in enumerate(zip(self.test.images, self.test.labels)):
                    spec = section.to_domain(derive_seed(self.cfg.seed, _ATTACK_STREAM, i))
                    out[i] = run_attack(self.model, x, y, spec).adversarial
                self._adversarial[key] = out
        return self._adversarial[key]

    def images_for(self, section) -> np.ndarray:
        return self.test.images if section is None else self.adversarial(section)

    def base_accuracy(self, section=None) -> float:
        labels = self.model.predict_labels(self.images_for(section))
        return percent(int((labels == self.test.labels).sum()), len(self.test))

    def diagnoses(self, attack, medrdf: MedRdfSection) -> list:
        """MedRDF diagnosis of every test image under *attack* (``None`` = natural)."""
        key = (attack.model_dump_json() if attack is not None else NATURAL,
               medrdf.model_dump_json())
        if key not in self._diagnoses:
            images = self.images_for(attack)
            self._diagnoses[key] = [
                predict(self.model, x, medrdf.to_domain(derive_seed(self.cfg.seed,
                                                                    _DEFENSE_STREAM, i)))
                for i, x in enumerate(images)]
        return self._diagnoses[key]

    def defended_accuracy(self, attack, medrdf: MedRdfSection) -> float:
        # an abstention is never the true label, so it counts as an error
        hits = sum(d.result == y for d, y in zip(self.diagnoses(attack, medrdf), self.test.labels))
        return percent(hits, len(self.test))

    def mean_time(self, attack, medrdf: MedRdfSection) -> float:
        return float(np.mean([d.elapsed for d in self.diagnoses(attack, medrdf)]))


def _experiment(cfg_or_exp) -> Experiment:
    return cfg_or_exp if isinstance(cfg_or_exp, Experiment) else Experiment(cfg_or_exp)


def _flush_partial(exp: Experiment, *tables) -> None:
    for t in tables:
        emit_report(t, exp.out_dir, stem=f"{t.name}.partial")


def attack_report(exp) -> ReportTable:
    """Undefended accuracy on the natural and on each attacked test set."""
    exp = _experiment(exp)
    table = ReportTable("attack")
    table.add(UNDEFENDED, "None", NATURAL, "accuracy", exp.base_accuracy())
    for a in exp.cfg.attacks:
        table.add(UNDEFENDED, "None", attack_name(a), "accuracy", exp.base_accuracy(a))
    return table


def run_defense_eval(exp) -> tuple:
    """Accuracy of the base model and of every MedRDF config, natural and attacked.

    Returns ``(accuracy_table, timing_table)``.  Timing is wall time of
    ``predict`` per image in milliseconds and is kept in its own table so the
    accuracy CSV stays byte-reproducible.
    """
    exp = _experiment(exp)
    cfg = exp.cfg
    table = ReportTable("defense")
    timing = ReportTable("defense_timing")
    attacks = [None] + list(cfg.attacks)
    try:
        for a in attacks:
            name = NATURAL if a is None else attack_name(a)
            table.add(UNDEFENDED, "None", name, "accuracy", exp.base_accuracy(a))
        for m in cfg.medrdf:
            for a in attacks:
                name = NATURAL if a is None else attack_name(a)
                table.add(defense_name(m), denoiser_name(m), name, "accuracy",
                          exp.defended_accuracy(a, m))
                timing.add(defense_name(m), denoiser_name(m), name, "time_ms",
                           1000 * exp.mean_time(a, m))
    except KeyboardInterrupt:
        _flush_partial(exp, table, timing)
        raise
    return table, timing


def sweep_sigma_eps(exp) -> ReportTable:
    """MedRDF accuracy over epsilon rows and sigma columns (``sweep.n`` copies)."""
    exp = _experiment(exp)
    cfg = exp.cfg
    base = cfg.medrdf[0] if cfg.medrdf else MedRdfSection()
    base = updated(base, n=cfg.sweep.n)
    template = cfg.attacks[0] if cfg.attacks else AttackSection(kind=AttackKind.PGD)
    table = ReportTable("sweep_sigma")
    try:
        for eps in cfg.sweep.epsilons:
            attack = None if eps == 0 else updated(template, epsilon=eps)
            row = "eps=0" if attack is None else attack_name(attack)
            for sigma in cfg.sweep.sigmas:
                m = updated(base, sigma=sigma)
                table.add(f"MedRDF {_NOISE_SHORT[m.noise]}", denoiser_name(m), row,
                          f"sigma={sigma:g}", exp.defended_accuracy(attack, m))
    except KeyboardInterrupt:
        _flush_partial(exp, table)
        raise
    return table


def sweep_copies(exp) -> tuple:
    """Accuracy and per-image time against the copy count.

    Returns ``(accuracy_table, timing_table)``; rows are copy counts.
    """
    exp = _experiment(exp)
    cfg = exp.cfg
    base = cfg.medrdf[0] if cfg.medrdf else MedRdfSection()
    table = ReportTable("sweep_n")
    timing = ReportTable("sweep_n_timing")
    attacks = [None] + list(cfg.attacks)
    try:
        for n in cfg.sweep.copies:
            m = updated(base, n=n)
            row = f"MedRDF n={n}"
            elapsed = []
            for a in attacks:
                name = NATURAL if a is None else attack_name(a)
                table.add(row, denoiser_name(m), "all", name, exp.defended_accuracy(a, m))
                elapsed.extend(d.elapsed for d in exp.diagnoses(a, m))
            timing.add(row, denoiser_name(m), "all", "time_ms", 1000 * float(np.mean(elapsed)))
    except KeyboardInterrupt:
        _flush_partial(exp, table, timing)
        raise
    return table, timing


def rm_cells(diagnoses, labels, threshold: float) -> dict:
    """Percentages of the four correct/robust cells; abstentions are never robust."""
    counts = dict.fromkeys(RM_CELLS, 0)
    for d, y in zip(diagnoses, labels):
        correct = d.result == y
        robust = not d.abstained and d.rm >= threshold
        key = ("C" if correct else "~C") + "&" + ("R" if robust else "~R")
        counts[key] += 1
    total = len(labels)
    return {k: percent(v, total) for k, v in counts.items()}


def rm_breakdown(exp) -> ReportTable:
    exp = _experiment(exp)
    cfg = exp.cfg
    m = cfg.medrdf[0] if cfg.medrdf else MedRdfSection()
    threshold = cfg.threshold_for(exp.model.num_classes)
    table = ReportTable("rm_breakdown")
    for a in [None] + list(cfg.attacks):
        name = NATURAL if a is None else attack_name(a)
        cells = rm_cells(exp.diagnoses(a, m), exp.test.labels, threshold)
        for k in RM_CELLS:
            table.add(defense_name(m), denoiser_name(m), name, k, cells[k])
    return table


def diagnosis_record(d: Diagnosis, label: int) -> dict:
    return {**d.to_dict(), "label": int(label)}


def write_json(path, payload) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def write_adversarial_sets(exp: Experiment) -> list:
    """Store each attacked test set as an IDX float32 image file plus an IDX label file."""
    exp.out_dir.mkdir(parents=True, exist_ok=True)
    labels_path = exp.out_dir / "test-labels.idx"
    datasets.write_idx(labels_path, exp.test.labels.astype(np.uint8)
                       if exp.test.num_classes <= 256 else exp.test.labels.astype(np.int32))
    paths = [labels_path]
    for i, a in enumerate(exp.cfg.attacks):
        path = exp.out_dir / f"adversarial-{i}-{a.kind.value}.idx"
        datasets.write_idx(path, exp.adversarial(a).astype(np.float32))
        paths.append(path)
    return paths

