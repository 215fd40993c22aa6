"""Evaluation protocol: per-section AUC, partial AUC, harmonic-mean score.

Scores follow the convention that larger values indicate anomalies, so the
anomalous class is the positive class of the ROC curve.  AUC is computed as
the Mann-Whitney statistic (ties counted 1/2).  The partial AUC restricts
the ROC to false-positive rates in [0, p] with linear interpolation at the
boundary and applies the McClish standardization, mapping a random detector
to 0.5 and a perfect one to 1; at p=1 the standardization is the identity
and the returned value is bit-identical to the AUC.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DataError, EmptyClassError, EmptyInputError, InvalidPError

NORMAL = "normal"
ANOMALOUS = "anomalous"
UNKNOWN = "unknown"


@dataclass(frozen=True)
class ScoredSample:
    sample_id: str
    section: str
    domain: str
    label: str
    score: float


@dataclass(frozen=True)
class SectionResult:
    section: str
    auc: float
    pauc: float

    def __post_init__(self):
        if not (0.0 <= self.auc <= 1.0 and 0.0 <= self.pauc <= 1.0):
            raise DataError(f"metrics outside [0, 1] for section {self.section}")


def _check_scores(normal_scores, anomaly_scores) -> tuple[np.ndarray, np.ndarray]:
    normals = np.asarray(normal_scores, dtype=np.float64)
    anomalies = np.asarray(anomaly_scores, dtype=np.float64)
    if normals.size == 0 or anomalies.size == 0:
        raise EmptyClassError("need at least one normal and one anomalous score")
    if not (np.all(np.isfinite(normals)) and np.all(np.isfinite(anomalies))):
        raise DataError("scores must be finite")
    return normals, anomalies


def _threshold_groups(normals: np.ndarray, anomalies: np.ndarray):
    """Per distinct score, descending: (number of anomalies, number of normals)."""
    values = np.unique(np.concatenate([normals, anomalies]))[::-1]
    n_anom = np.array([np.count_nonzero(anomalies == v) for v in values], dtype=np.int64)
    n_norm = np.array([np.count_nonzero(normals == v) for v in values], dtype=np.int64)
    return n_anom, n_norm


def _roc_area2(normals: np.ndarray, anomalies: np.ndarray) -> int:
    """Twice the un-normalized ROC trapezoid area, exact in integer counts.

    Equals 2*wins + ties of the Mann-Whitney pair count, where a win is an
    (anomaly, normal) pair with the anomaly scored strictly higher.
    """
    n_anom, n_norm = _threshold_groups(normals, anomalies)
    area2 = 0
    tp = 0
    for a, n in zip(n_anom.tolist(), n_norm.tolist()):
        area2 += n * (2 * tp + a)
        tp += a
    return area2


def auc(normal_scores, anomaly_scores) -> float:
    """Fraction of (anomaly, normal) pairs ranked correctly, ties counted 1/2."""
    normals, anomalies = _check_scores(normal_scores, anomaly_scores)
    area2 = _roc_area2(normals, anomalies)
    return area2 / (2 * anomalies.size * normals.size)


def pauc(normal_scores, anomaly_scores, p: float = 0.1) -> float:
    """Standardized partial AUC over false-positive rates in [0, p]."""
    if not (0.0 < p <= 1.0):
        raise InvalidPError(f"p must be in (0, 1], got {p}")
    normals, anomalies = _check_scores(normal_scores, anomaly_scores)
    total_n = normals.size
    total_a = anomalies.size
    if p == 1.0:
        # Whole curve: identical arithmetic to auc(), so the values agree
        # bit for bit (the standardization is the identity at p=1).
        return _roc_area2(normals, anomalies) / (2 * total_a * total_n)

    fp_cut = p * total_n
    n_anom, n_norm = _threshold_groups(normals, anomalies)
    area2_int = 0  # twice the area of fully included trapezoids, integer
    area_frac = 0.0  # area of the clipped trapezoid at the boundary
    fp = 0
    tp = 0
    for a, n in zip(n_anom.tolist(), n_norm.tolist()):
        if n > 0 and fp + n > fp_cut:
            # Segment crosses FPR = p: interpolate the curve at the cut.
            t = (fp_cut - fp) / n
            tp_at_cut = tp + t * a
            area_frac = 0.5 * (fp_cut - fp) * (tp + tp_at_cut)
            break
        area2_int += n * (2 * tp + a)
        fp += n
        tp += a
    raw_area = (0.5 * area2_int + area_frac) / (total_a * total_n)
    min_area = 0.5 * p * p
    max_area = p
    standardized = 0.5 * (1.0 + (raw_area - min_area) / (max_area - min_area))
    return min(max(standardized, 0.0), 1.0)


def harmonic_mean(values) -> float:
    """n / sum(1/v); returns 0 if any value is <= 0."""
    values = list(values)
    if not values:
        raise EmptyInputError("harmonic mean of an empty collection")
    if any(v <= 0.0 for v in values):
        return 0.0
    return len(values) / sum(1.0 / v for v in values)


def official_score(results) -> float:
    """Harmonic mean over every section's AUC and pAUC jointly."""
    results = list(results)
    if not results:
        raise EmptyInputError("no section results")
    values = []
    for r in results:
        values.extend([r.auc, r.pauc])
    return harmonic_mean(values)


def _split_scores(samples):
    normals = [s.score for s in samples if s.label == NORMAL]
    anomalies = [s.score for s in samples if s.label == ANOMALOUS]
    return normals, anomalies


def evaluate_scores(samples, p: float = 0.1):
    """Per-section metrics from scored samples.

    Returns (csv_rows, section_results, official) where csv_rows are
    (section, domain_scope, auc, pauc) tuples: one pooled row per section
    (domain_scope "all", feeding the official score) plus supplementary
    per-domain rows wherever a domain has both labels.  Samples labelled
    "unknown" are ignored.
    """
    samples = [s for s in samples if s.label in (NORMAL, ANOMALOUS)]
    if not samples:
        raise EmptyInputError("no labelled samples to evaluate")
    sections = sorted({s.section for s in samples})
    rows = []
    results = []
    for section in sections:
        in_section = [s for s in samples if s.section == section]
        normals, anomalies = _split_scores(in_section)
        if not normals or not anomalies:
            raise EmptyClassError(f"section {section} lacks one of the two label classes")
        section_auc = auc(normals, anomalies)
        section_pauc = pauc(normals, anomalies, p)
        rows.append((section, "all", section_auc, section_pauc))
        results.append(SectionResult(section=section, auc=section_auc, pauc=section_pauc))
        for domain in sorted({s.domain for s in in_section}):
            in_domain = [s for s in in_section if s.domain == domain]
            d_normals, d_anomalies = _split_scores(in_domain)
            if d_normals and d_anomalies:
                rows.append((section, domain, auc(d_normals, d_anomalies), pauc(d_normals, d_anomalies, p)))
    return rows, results, official_score(results)


def write_results_csv(path, rows, official: float) -> None:
    """Results CSV: header section,domain_scope,auc,pauc plus a final official row."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["section", "domain_scope", "auc", "pauc"])
        for section, scope, a, pa in rows:
            writer.writerow([section, scope, repr(float(a)), repr(float(pa))])
        writer.writerow(["ALL", "official", repr(float(official)), repr(float(official))])


def write_scores_csv(path, samples) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id", "section", "domain", "label", "score"])
        for s in samples:
            writer.writerow([s.sample_id, s.section, s.domain, s.label, repr(float(s.score))])


def read_scores_csv(path):
    samples = []
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["sample_id", "section", "domain", "label", "score"]:
            raise DataError(f"unexpected scores CSV header: {header}")
        for row in reader:
            if len(row) != 5:
                raise DataError(f"malformed scores CSV row: {row}")
            samples.append(
                ScoredSample(
                    sample_id=row[0],
                    section=row[1],
                    domain=row[2],
                    label=row[3],
                    score=float(row[4]),
                )
            )
    return samples
