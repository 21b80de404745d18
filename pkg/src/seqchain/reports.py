"""Evaluation reports over held-out splits.

Quality scoring always matches estimates to references with the exhaustive
permutation search; the greedy order is a training-time cost saving and never
touches reported numbers.  Each report serializes to JSON and to a flat
key/value CSV carrying exactly the same numbers, and identical invocations
produce identical files.
"""

from __future__ import annotations

import io
import json
import os
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import data as sd
from . import metrics as mx
from .assign import DistanceKind, pit_optimal
from .chain import ChainModel, StopCriterion
from .errors import ConfigError, DataError
from .training import config_digest


def _edit_distance(hyp, ref) -> float:
    """Token-level edit distance, the matching cost for recognition scoring."""
    return mx.token_error_rate(hyp, ref) * max(1, len(ref))


@dataclass
class ConfusionTable:
    """Integer contingency table with labeled rows (reference) and columns
    (estimate).  Row sums must equal the per-class item counts by
    construction; accuracy is the diagonal share of each row."""

    row_labels: list
    col_labels: list
    cells: list

    def validate(self) -> None:
        if len(self.cells) != len(self.row_labels):
            raise ValueError("row count mismatch")
        for row in self.cells:
            if len(row) != len(self.col_labels):
                raise ValueError("column count mismatch")
            for cell in row:
                if not isinstance(cell, int) or cell < 0:
                    raise ValueError("cells must be nonnegative integers")
        for acc in self.row_accuracy():
            if not 0.0 <= acc <= 1.0:
                raise ValueError("row accuracy out of range")

    def row_sums(self) -> list:
        return [sum(row) for row in self.cells]

    def _diag(self, i: int) -> int:
        label = self.row_labels[i]
        if label not in self.col_labels:
            return 0
        return self.cells[i][self.col_labels.index(label)]

    def row_accuracy(self) -> list:
        out = []
        for i, total in enumerate(self.row_sums()):
            out.append(self._diag(i) / total if total else 0.0)
        return out

    def overall_accuracy(self) -> float:
        total = sum(self.row_sums())
        if not total:
            return 0.0
        return sum(self._diag(i) for i in range(len(self.row_labels))) / total

    def as_dict(self) -> dict:
        return {
            "row_labels": list(self.row_labels),
            "col_labels": list(self.col_labels),
            "cells": [list(r) for r in self.cells],
            "row_sums": self.row_sums(),
            "row_accuracy": self.row_accuracy(),
            "overall_accuracy": self.overall_accuracy(),
        }


@dataclass
class RunReport:
    """One evaluation result set; only the fields the kind uses are filled."""

    kind: str
    digest: str
    items: int
    si_snri: Optional[dict] = None
    ter: Optional[dict] = None
    confusion: Optional[ConfusionTable] = None
    order_consistency: Optional[dict] = None
    order_matrices: Optional[dict] = None
    denoise_sdr: Optional[list] = None
    extras: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.confusion is not None:
            self.confusion.validate()
        if self.order_matrices is not None:
            for table in self.order_matrices.values():
                table.validate()
        if self.order_consistency is not None:
            for v in self.order_consistency.values():
                if not 0.0 <= v <= 1.0:
                    raise ValueError("consistency out of range")

    def as_dict(self) -> dict:
        out: dict = {"kind": self.kind, "digest": self.digest, "items": self.items}
        if self.si_snri is not None:
            out["si_snri"] = dict(self.si_snri)
        if self.ter is not None:
            out["ter"] = dict(self.ter)
        if self.confusion is not None:
            out["confusion"] = self.confusion.as_dict()
        if self.order_consistency is not None:
            out["order_consistency"] = dict(self.order_consistency)
        if self.order_matrices is not None:
            out["order_matrices"] = {k: t.as_dict() for k, t in self.order_matrices.items()}
        if self.denoise_sdr is not None:
            out["denoise_sdr"] = [dict(row) for row in self.denoise_sdr]
        if self.extras:
            out["extras"] = dict(self.extras)
        return out

    def rows(self) -> list:
        flat: list = []
        _flatten("", self.as_dict(), flat)
        flat.sort(key=lambda kv: kv[0])
        return flat

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("key,value\n")
        for key, value in self.rows():
            buf.write(f"{key},{json.dumps(value)}\n")
        return buf.getvalue()


def _flatten(prefix: str, obj, out: list) -> None:
    if isinstance(obj, dict):
        for k, v in obj.items():
            _flatten(f"{prefix}.{k}" if prefix else str(k), v, out)
    elif isinstance(obj, (list, tuple)):
        for i, v in enumerate(obj):
            _flatten(f"{prefix}.{i}", v, out)
    else:
        out.append((prefix, obj))


def write_report(report: RunReport, out_dir: str) -> dict:
    """Emit report.json and report.csv with identical numeric content."""
    report.validate()
    os.makedirs(out_dir, exist_ok=True)
    json_path = os.path.join(out_dir, "report.json")
    csv_path = os.path.join(out_dir, "report.csv")
    with open(json_path, "w") as fh:
        fh.write(report.to_json())
    with open(csv_path, "w") as fh:
        fh.write(report.to_csv())
    return {"json": json_path, "csv": csv_path}


# ---------------------------------------------------------------------------
# shared plumbing


def _split_records(manifest: dict, split: str) -> list:
    recs = [r for r in manifest["records"] if r.split == split]
    if not recs:
        raise DataError(f"no records in split {split!r}")
    return recs


def _default_estimator(model: ChainModel, mixture, n: int) -> list:
    if model.mode.parallel_pit:
        ests = model.pit_estimates(mixture)
        if len(ests) != n:
            raise DataError(f"{n} references for {len(ests)} baseline heads")
        return ests
    if model.mode.serial_only:
        return model.serial_estimates(mixture, n)
    return model.infer(mixture, oracle_steps=n)


def _bucket(label_counts: dict, label: str, values) -> None:
    acc = label_counts.setdefault(label, [])
    acc.extend(values)


# ---------------------------------------------------------------------------
# separation / recognition quality


def eval_quality(
    model: ChainModel,
    manifest: dict,
    split: str = "test",
    estimator: Optional[Callable] = None,
) -> RunReport:
    """Known-count quality scoring: the model emits exactly as many estimates
    as there are references, the exhaustive permutation search pairs them,
    and SI-SNRi (waveforms) or token error rate (token sequences) is averaged
    per source count and overall."""
    task = model.mode.task
    if task == "denoise":
        raise ConfigError("use denoise_eval for denoising checkpoints")
    recs = _split_records(manifest, split)
    produce = estimator or _default_estimator
    snr_by_label: dict = {}
    edit_by_label: dict = {}
    len_by_label: dict = {}
    for rec in recs:
        mixture, sources = sd.record_waves(manifest, rec)
        n = len(sources)
        label = f"{n}mix"
        ests = produce(model, mixture, n)
        if task == "separation":
            pit = pit_optimal(ests, sources, DistanceKind.NEG_SI_SNR)
            vals = [
                mx.si_snri(ests[i], sources[pit.permutation[i]], mixture).value
                for i in range(n)
            ]
            _bucket(snr_by_label, label, vals)
        elif task == "recognition":
            refs = rec.tokens
            pit = pit_optimal(ests, refs, _edit_distance)
            for i in range(n):
                ref = refs[pit.permutation[i]]
                edit_by_label[label] = edit_by_label.get(label, 0.0) + _edit_distance(ests[i], ref)
                len_by_label[label] = len_by_label.get(label, 0) + max(1, len(ref))
        else:  # joint: waveform pairing scores both halves
            waves = [e[0] for e in ests]
            toks = [e[1] for e in ests]
            pit = pit_optimal(waves, sources, DistanceKind.NEG_SI_SNR)
            vals = [
                mx.si_snri(waves[i], sources[pit.permutation[i]], mixture).value
                for i in range(n)
            ]
            _bucket(snr_by_label, label, vals)
            for i in range(n):
                ref = rec.tokens[pit.permutation[i]]
                edit_by_label[label] = edit_by_label.get(label, 0.0) + _edit_distance(toks[i], ref)
                len_by_label[label] = len_by_label.get(label, 0) + max(1, len(ref))
    report = RunReport(
        kind="eval",
        digest=config_digest(model),
        items=len(recs),
        extras={"split": split},
    )
    if snr_by_label:
        per = {k: float(np.mean(v)) for k, v in sorted(snr_by_label.items())}
        per["overall"] = float(np.mean([x for v in snr_by_label.values() for x in v]))
        report.si_snri = per
    if edit_by_label:
        per = {k: edit_by_label[k] / len_by_label[k] for k in sorted(edit_by_label)}
        per["overall"] = sum(edit_by_label.values()) / sum(len_by_label.values())
        report.ter = per
    return report


# ---------------------------------------------------------------------------
# source counting


def eval_counting(
    model: ChainModel,
    manifest: dict,
    split: str = "test",
    threshold: float = 3e-4,
    max_steps: int = 6,
) -> RunReport:
    """Count sources by running the chain until the stop criterion fires and
    tabulate estimated against true counts."""
    recs = _split_records(manifest, split)
    stop = StopCriterion(max_steps=max_steps, energy_threshold=threshold)
    row_labels = sorted({rec.count for rec in recs})
    col_labels = list(range(max_steps + 1))
    cells = [[0 for _ in col_labels] for _ in row_labels]
    for rec in recs:
        mixture, _ = sd.record_waves(manifest, rec)
        est = len(model.infer(mixture, stop=stop))
        cells[row_labels.index(rec.count)][est] += 1
    table = ConfusionTable(row_labels, col_labels, cells)
    return RunReport(
        kind="count-eval",
        digest=config_digest(model),
        items=len(recs),
        confusion=table,
        extras={"split": split, "threshold": threshold, "max_steps": max_steps},
    )


# ---------------------------------------------------------------------------
# generation-order analysis


def _length_ranks(lengths: list) -> list:
    """Rank of each hypothesis position when its matched reference length is
    sorted longest-first; ties keep generation order, so equal-length items
    land on the diagonal."""
    order = sorted(range(len(lengths)), key=lambda i: (-lengths[i], i))
    ranks = [0] * len(lengths)
    for rank, idx in enumerate(order):
        ranks[idx] = rank
    return ranks


def order_analysis(
    model: ChainModel,
    manifest: dict,
    split: str = "test",
    loosen: int = 5,
) -> RunReport:
    """Compare the chain's generation order with the reference-length ranking.

    An item is length-consistent at range r when no earlier hypothesis was
    matched to a reference more than r tokens shorter than a later one; r=0
    is the strict longest-first check and larger r only relaxes it."""
    if model.mode.task != "recognition":
        raise ConfigError("order analysis needs a recognition checkpoint")
    if loosen < 0:
        raise ConfigError("loosening range must be >= 0")
    recs = _split_records(manifest, split)
    if any(rec.count < 2 for rec in recs):
        raise DataError("order analysis needs at least two sources per item")
    max_n = max(rec.count for rec in recs)
    ranges = sorted({0, loosen})
    matrices = {r: [[0] * max_n for _ in range(max_n)] for r in ranges}
    consistent = {r: 0 for r in ranges}
    for rec in recs:
        n = rec.count
        mixture, _ = sd.record_waves(manifest, rec)
        hyps = model.infer(mixture, oracle_steps=n)
        pit = pit_optimal(hyps, rec.tokens, _edit_distance)
        lengths = [len(rec.tokens[pit.permutation[i]]) for i in range(n)]
        ranks = _length_ranks(lengths)
        for r in ranges:
            ok = all(
                lengths[i] >= lengths[j] - r
                for i in range(n)
                for j in range(i + 1, n)
            )
            if ok:
                consistent[r] += 1
                for i in range(n):
                    matrices[r][i][i] += 1
            else:
                for i in range(n):
                    matrices[r][i][ranks[i]] += 1
    labels = list(range(1, max_n + 1))
    tables = {
        str(r): ConfusionTable(labels, labels, matrices[r]) for r in ranges
    }
    fractions = {str(r): consistent[r] / len(recs) for r in ranges}
    return RunReport(
        kind="order-analysis",
        digest=config_digest(model),
        items=len(recs),
        order_matrices=tables,
        order_consistency=fractions,
        extras={"split": split, "range": loosen},
    )


# ---------------------------------------------------------------------------
# denoising


def denoise_eval(model: ChainModel, manifest: dict, split: str = "test") -> RunReport:
    """Mean SDR and SDR improvement for both refinement steps."""
    if model.mode.task != "denoise":
        raise ConfigError("denoise_eval needs a denoising checkpoint")
    recs = _split_records(manifest, split)
    sdr_steps = ([], [])
    sdri_steps = ([], [])
    for rec in recs:
        noisy, sources = sd.record_waves(manifest, rec)
        clean = sources[0]
        base = mx.sdr(noisy, clean).value
        for k, est in enumerate(model.denoise_estimates(noisy)):
            value = mx.sdr(est, clean).value
            sdr_steps[k].append(value)
            sdri_steps[k].append(value - base)
    rows = [
        {
            "step": k + 1,
            "sdr": float(np.mean(sdr_steps[k])),
            "sdri": float(np.mean(sdri_steps[k])),
        }
        for k in range(2)
    ]
    return RunReport(
        kind="denoise-eval",
        digest=config_digest(model),
        items=len(recs),
        denoise_sdr=rows,
        extras={"split": split, "step2_ge_step1": rows[1]["sdr"] >= rows[0]["sdr"]},
    )
