"""Quantitative evaluation: batch precision, best-result precision, diversity.

Protocol: random scenes, random rectangular masks with sides in
[dim/5, dim/2], random target labels; a batch of edits per case. The
evaluation classifier (not the ranking embedder) judges correctness on
masked predictions; its unit-normalized features give the perceptual
distance for the diversity metric.
"""

import csv
import dataclasses
import json
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import data, editor, pipeline

F32 = np.float32


def random_mask(rng, h, w):
    """Axis-aligned rectangle mask; sides uniform over [ceil(dim/5), floor(dim/2)]."""
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    if h < 5 or w < 5:
        raise ValueError("image too small for the mask rule")
    lo_h, hi_h = -(-h // 5), h // 2
    lo_w, hi_w = -(-w // 5), w // 2
    mh = int(rng.integers(lo_h, hi_h + 1))
    mw = int(rng.integers(lo_w, hi_w + 1))
    top = int(rng.integers(0, h - mh + 1))
    left = int(rng.integers(0, w - mw + 1))
    mask = np.zeros((h, w), dtype=np.uint8)
    mask[top:top + mh, left:left + mw] = 1
    return mask


@dataclass
class EvalCase:
    case_id: int
    target_label: str
    rect: tuple  # (left, top, w, h)
    correct: np.ndarray  # per-candidate bool, generation order
    best_correct: bool
    diversity: float
    diversity_insufficient: bool
    scores: list


@dataclass
class EvalReport:
    batch_precision: float
    best_result_precision: float
    batch_diversity: float
    n_cases: int
    batch_size: int
    seed: int
    cases: list = field(default_factory=list)

    def to_dict(self):
        d = dataclasses.asdict(self)
        for row in d["cases"]:
            row["correct"] = [bool(v) for v in row["correct"]]
        return d


def batch_precision(cases):
    """Mean over cases of (correct-in-batch count / batch size)."""
    if not cases:
        raise ValueError("no cases")
    return float(np.mean([np.mean(c.correct) for c in cases]))


def best_result_precision(cases):
    """Fraction of cases whose rank-1 candidate is classified correctly."""
    if not cases:
        raise ValueError("no cases")
    return float(np.mean([c.best_correct for c in cases]))


def batch_diversity_from_features(features):
    """Mean pairwise L2 over unit-normalized feature rows.

    Fewer than two rows cannot form a pair: returns (0.0, insufficient=True).
    """
    n = len(features)
    if n < 2:
        return 0.0, True
    total = 0.0
    pairs = 0
    for i in range(n):
        for j in range(i + 1, n):
            total += float(np.linalg.norm(features[i] - features[j]))
            pairs += 1
    return total / pairs, False


def _masked_stack(imgs, mask):
    m3 = mask[:, :, None].astype(F32)
    return np.stack([img * m3 for img in imgs])


def run_eval(bundle: pipeline.ModelBundle, n_cases: int, cfg: editor.EditConfig,
             seed: int = 0, progress=None) -> EvalReport:
    """Generate n_cases end-to-end and score them; bit-reproducible per seed."""
    if n_cases <= 0:
        raise ValueError("n_cases must be positive")
    bundle.require("vae", "den", "sched", "embedder", "clf")
    clf = bundle.clf
    cases = []
    diversities = []
    for i in range(n_cases):
        case_rng = np.random.default_rng([seed, i])
        scene, _ = data.generate_scene(case_rng)
        h, w = scene.shape[:2]
        mask = random_mask(case_rng, h, w)
        target = data.LABELS[int(case_rng.integers(len(data.LABELS)))]
        case_cfg = replace(cfg, seed=seed * 100003 + i)
        candidates = pipeline.run_edit(bundle, scene, mask, target, case_cfg)

        by_source = sorted(candidates, key=lambda c: c.source_index)
        masked = _masked_stack([c.image for c in by_source], mask)
        pred_idx = clf.classify(masked)
        target_idx = data.label_index(target)
        correct = pred_idx == target_idx

        best = candidates[0]  # rank 0
        best_masked = _masked_stack([best.image], mask)
        best_correct = bool(clf.classify(best_masked)[0] == target_idx)

        feats = clf.features(masked[correct]) if correct.any() else np.zeros((0, 1), dtype=F32)
        div, insufficient = batch_diversity_from_features(feats)
        if not insufficient:
            diversities.append(div)

        ys, xs = np.nonzero(mask)
        rect = (int(xs.min()), int(ys.min()), int(xs.max() - xs.min() + 1),
                int(ys.max() - ys.min() + 1))
        cases.append(EvalCase(
            case_id=i, target_label=target, rect=rect, correct=correct,
            best_correct=best_correct, diversity=div,
            diversity_insufficient=insufficient,
            scores=[float(c.score) for c in by_source]))
        if progress:
            progress(f"eval case {i + 1}/{n_cases}: target={target} "
                     f"correct={int(correct.sum())}/{len(correct)} best={best_correct}")

    return EvalReport(
        batch_precision=batch_precision(cases),
        best_result_precision=best_result_precision(cases),
        batch_diversity=float(np.mean(diversities)) if diversities else 0.0,
        n_cases=n_cases,
        batch_size=cfg.batch_size,
        seed=seed,
        cases=cases,
    )


def write_report(report: EvalReport, out_dir):
    """Emit report.json plus a per-case cases.csv; returns their paths."""
    os.makedirs(out_dir, exist_ok=True)
    json_path = os.path.join(out_dir, "report.json")
    with open(json_path, "w") as fh:
        json.dump(report.to_dict(), fh, indent=1)
    csv_path = os.path.join(out_dir, "cases.csv")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["case_id", "target_label", "rect", "n_correct", "batch_size",
                         "best_correct", "diversity", "diversity_insufficient"])
        for c in report.cases:
            writer.writerow([c.case_id, c.target_label, "x".join(map(str, c.rect)),
                             int(np.sum(c.correct)), len(c.correct),
                             int(c.best_correct), f"{c.diversity:.6f}",
                             int(c.diversity_insufficient)])
    return json_path, csv_path
