"""Supervised training, pseudo-labelling and Noisy Student Curriculum Learning.

The curriculum trains a teacher on labelled cases, labels the unlabelled
cases with it, then trains a sequence of fresh students on the union with
noise that grows stage by stage.  Each student becomes the next teacher.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .data import LABEL_FILE, AugmentConfig, Case, basic_augment, centroid_crop, copy_paste, mixup, write_cvol, zscore
from .losses import REGIONS, region_masks, total_loss
from .metrics import EvalReport, evaluate_case, mean_report
from .network import Model, NetConfig, build, clone, make_optimizer, poly_lr, save_checkpoint

log = logging.getLogger(__name__)

PSEUDO_THRESHOLD = 0.5


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class NoiseStage:
    iter: int
    mixup: bool = False
    copy_paste: bool = False
    dropout_rate: float = 0.0

    def noise_set(self) -> frozenset[str]:
        s = set()
        if self.mixup:
            s.add("mixup")
        if self.copy_paste:
            s.add("copy_paste")
        if self.dropout_rate > 0:
            s.add("dropout")
        return frozenset(s)


# 1. MixUp  2. Copy-Paste + Dropouts  3. MixUp + Copy-Paste + Dropouts
CURRICULUM_STAGES = (
    NoiseStage(1, mixup=True),
    NoiseStage(2, copy_paste=True, dropout_rate=0.1),
    NoiseStage(3, mixup=True, copy_paste=True, dropout_rate=0.2),
)
NO_NOISE = NoiseStage(0)


def noisy_student_stages(iterations: int = 2, dropout_rate: float = 0.2) -> tuple[NoiseStage, ...]:
    """Plain Noisy Student: every noise source from the first iteration."""
    return tuple(NoiseStage(i, True, True, dropout_rate) for i in range(1, iterations + 1))


@dataclass
class TrainConfig:
    epochs: int = 60
    batch_size: int = 2
    base_lr: float = 1e-3
    optimizer: str = "sgd"
    momentum: float = 0.9
    eval_every: int = 10
    seed: int = 0
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def validate(self) -> None:
        if self.epochs < 0 or self.batch_size < 1 or self.eval_every < 1:
            raise ValueError("epochs >= 0, batch_size >= 1 and eval_every >= 1 are required")
        self.augment.validate()


@dataclass
class TrainResult:
    model: Model
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_score: float = float("nan")


# ---------------------------------------------------------------------------
# batches
# ---------------------------------------------------------------------------


def _normalised(cases: Sequence[Case]) -> list[tuple[np.ndarray, np.ndarray]]:
    out = []
    for c in cases:
        if c.label is None:
            raise ValueError(f"case {c.case_id} has no label")
        out.append((zscore(c.image), c.label))
    return out


def _sample(pool, idx: int, aug: AugmentConfig, rng: np.random.Generator):
    img, lab = pool[idx]
    img, lab = centroid_crop(img, lab, aug.crop, rng, jitter=aug.crop_jitter)
    return basic_augment(img, lab, aug, rng)


def make_batch(
    pool: list[tuple[np.ndarray, np.ndarray]],
    indices: Sequence[int],
    aug: AugmentConfig,
    stage: NoiseStage,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Images ``[B,C,S,S,S]`` and region targets ``[B,3,S,S,S]`` for one step."""
    imgs, tgts = [], []
    for i in indices:
        img, lab = _sample(pool, i, aug, rng)
        if stage.copy_paste and rng.random() < aug.copy_paste_prob:
            donor = _sample(pool, int(rng.integers(len(pool))), aug, rng)
            img, lab = copy_paste(donor, (img, lab), rng)
        imgs.append(img)
        tgts.append(region_masks(lab))
    x, t = np.stack(imgs), np.stack(tgts)
    if stage.mixup and len(indices) > 1:
        x, t = mixup((x, t), (np.roll(x, 1, axis=0), np.roll(t, 1, axis=0)), aug.mixup_alpha, rng)
    return x, t


# ---------------------------------------------------------------------------
# inference
# ---------------------------------------------------------------------------


def _tile_starts(extent: int, crop: int) -> list[int]:
    if extent < crop:
        raise ValueError(f"volume extent {extent} smaller than model crop {crop}")
    starts = list(range(0, extent - crop + 1, max(crop // 2, 1)))
    if starts[-1] != extent - crop:
        starts.append(extent - crop)
    return starts


def predict_proba(model: Model, image: np.ndarray, normalise: bool = True) -> np.ndarray:
    """Region probabilities ``[3,H,W,D]``; larger volumes use overlapping tiles."""
    crop = model.config.crop
    img = zscore(image) if normalise else np.asarray(image, dtype=np.float64)
    _, h, w, d = img.shape
    acc = np.zeros((3, h, w, d))
    hits = np.zeros((h, w, d))
    with ad.no_grad():
        for a in _tile_starts(h, crop):
            for b in _tile_starts(w, crop):
                for c in _tile_starts(d, crop):
                    sl = (slice(a, a + crop), slice(b, b + crop), slice(c, c + crop))
                    logits = model.forward(img[(slice(None),) + sl][None], training=False).data[0]
                    acc[(slice(None),) + sl] += logits
                    hits[sl] += 1
    # average logits over overlapping tiles, then squash
    return ad._sigmoid_np(acc / hits)


def hard_labels(probs: np.ndarray, threshold: float = PSEUDO_THRESHOLD) -> np.ndarray:
    """Region probabilities -> label map, repairing ET within TC within WT."""
    wt = probs[0] > threshold
    tc = (probs[1] > threshold) & wt
    et = (probs[2] > threshold) & tc
    label = np.zeros(probs.shape[1:], dtype=np.uint8)
    label[wt] = 2
    label[tc] = 1
    label[et] = 4
    return label


def predict_regions(model: Model, image: np.ndarray) -> np.ndarray:
    """Binary nested region masks ``[3,...]`` for metric evaluation."""
    return region_masks(hard_labels(predict_proba(model, image))).astype(bool)


def evaluate(model: Model, cases: Sequence[Case]) -> tuple[list[EvalReport], EvalReport]:
    reports = [evaluate_case(c.case_id, c.label, predict_regions(model, c.image)) for c in cases]
    return reports, mean_report(reports)


@dataclass
class PseudoLabel:
    case_id: str
    probs: np.ndarray
    label: np.ndarray
    model_id: str
    stage: int = 0
    threshold: float = PSEUDO_THRESHOLD

    def sidecar(self) -> str:
        return f"model_id={self.model_id}\nthreshold={self.threshold}\nstage={self.stage}\n"


def pseudo_label(model: Model, unlabeled: Sequence[Case], stage: int = 0) -> list[PseudoLabel]:
    mid = model.model_id()
    out = []
    for c in unlabeled:
        probs = predict_proba(model, c.image)
        out.append(PseudoLabel(c.case_id, probs, hard_labels(probs), mid, stage))
    return out


def save_pseudo_labels(root, labels: Sequence[PseudoLabel]) -> None:
    for pl in labels:
        d = Path(root) / pl.case_id
        d.mkdir(parents=True, exist_ok=True)
        write_cvol(d / LABEL_FILE, pl.label)
        (d / "pseudo.txt").write_text(pl.sidecar())


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def _score(report: EvalReport, select: str) -> float:
    return report.regions["WT"].dice if select == "wt" else report.mean_dice()


def train(
    model: Model,
    cases: Sequence[Case],
    cfg: TrainConfig,
    stage: NoiseStage = NO_NOISE,
    val: Sequence[Case] | None = None,
    select: str = "wt",
    on_log: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Minimise the region loss with poly-decayed LR; keep the best checkpoint.

    With a validation set the model is scored every ``eval_every`` epochs (and
    after the last one); the checkpoint with the highest score is returned.
    """
    cfg.validate()
    if not cases:
        raise ValueError("training set is empty")
    if stage.mixup and cfg.batch_size < 2:
        raise ValueError("MixUp pairs samples within a batch; batch_size must be >= 2")
    pool = _normalised(cases)
    rng = np.random.default_rng([cfg.seed, stage.iter, 7])
    opt = make_optimizer(model, cfg.optimizer, cfg.momentum)
    result = TrainResult(model=clone(model))
    best = -np.inf
    for epoch in range(cfg.epochs):
        lr = poly_lr(epoch, cfg.epochs, cfg.base_lr)
        order = rng.permutation(len(pool))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            x, t = make_batch(pool, idx, cfg.augment, stage, rng)
            logits = model.forward(x, training=True, dropout_rate=stage.dropout_rate, rng=rng)
            loss = total_loss(t, logits)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDiverged(f"non-finite loss {value} at epoch {epoch}, batch {idx.tolist()}")
            ad.backward(loss)
            opt.step(lr)
            losses.append(value)
        entry = {"stage": stage.iter, "epoch": epoch + 1, "loss": float(np.mean(losses)), "lr": lr}
        last = epoch + 1 == cfg.epochs
        if val and ((epoch + 1) % cfg.eval_every == 0 or last):
            _, rep = evaluate(model, val)
            for r in REGIONS:
                entry[f"dice_{r}"] = rep.regions[r].dice
            score = _score(rep, select)
            if score > best:
                best = score
                result.model = clone(model)
                result.best_epoch = epoch + 1
                result.best_score = score
        elif not val and last:
            result.model = clone(model)
            result.best_epoch = epoch + 1
        result.history.append(entry)
        if on_log:
            on_log(entry)
        log.debug("epoch %s", entry)
    return result


def train_teacher(
    model: Model,
    labeled: Sequence[Case],
    epochs: int,
    seed: int,
    cfg: TrainConfig | None = None,
    val: Sequence[Case] | None = None,
    on_log=None,
) -> TrainResult:
    """Teacher training: baseline augmentation only, no MixUp/Copy-Paste/dropout."""
    cfg = replace(cfg or TrainConfig(), epochs=epochs, seed=seed)
    return train(model, labeled, cfg, NO_NOISE, val, select="wt", on_log=on_log)


def with_pseudo_labels(unlabeled: Sequence[Case], labels: Sequence[PseudoLabel]) -> list[Case]:
    by_id = {pl.case_id: pl for pl in labels}
    missing = [c.case_id for c in unlabeled if c.case_id not in by_id]
    if missing:
        raise ValueError(f"pseudo labels missing for {missing}")
    return [Case(c.case_id, c.image, by_id[c.case_id].label) for c in unlabeled]


def train_student(
    stage: NoiseStage,
    teacher_labels: Sequence[PseudoLabel],
    labeled: Sequence[Case],
    unlabeled: Sequence[Case],
    epochs: int,
    seed: int,
    net_config: NetConfig,
    cfg: TrainConfig | None = None,
    val: Sequence[Case] | None = None,
    on_log=None,
) -> TrainResult:
    """Fresh model trained on labelled + pseudo-labelled cases with the stage's noise."""
    student = build(replace(net_config, seed=net_config.seed + 1000 * stage.iter))
    cases = list(labeled) + with_pseudo_labels(unlabeled, teacher_labels)
    cfg = replace(cfg or TrainConfig(), epochs=epochs, seed=seed)
    return train(student, cases, cfg, stage, val, select="mean", on_log=on_log)


# ---------------------------------------------------------------------------
# curriculum
# ---------------------------------------------------------------------------


@dataclass
class CurriculumPlan:
    labeled: list[Case]
    unlabeled: list[Case]
    heldout: list[Case]
    net: NetConfig = field(default_factory=NetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    stages: tuple[NoiseStage, ...] = CURRICULUM_STAGES
    teacher_epochs: int = 60
    stage_epochs: int = 60
    seed: int = 0

    def validate(self) -> None:
        iters = [s.iter for s in self.stages]
        if any(b <= a for a, b in zip(iters, iters[1:])):
            raise ValueError("stages must be strictly increasing in iter")
        for e in (self.teacher_epochs, self.stage_epochs):
            if e % self.train.eval_every != 0:
                raise ValueError("eval cadence must divide the epoch counts")
        if not self.labeled:
            raise ValueError("labelled set is empty")


@dataclass
class CurriculumResult:
    teacher: Model
    teacher_report: EvalReport
    students: list[Model]
    reports: list[EvalReport]
    pseudo: list[list[PseudoLabel]]
    log: list[dict]

    @property
    def final(self) -> Model:
        return self.students[-1] if self.students else self.teacher


def run_curriculum(plan: CurriculumPlan, out_dir=None, on_log=None) -> CurriculumResult:
    """Teacher -> pseudo labels -> (student, promote, relabel) for each stage."""
    plan.validate()
    out = Path(out_dir) if out_dir is not None else None
    entries: list[dict] = []

    def record(e):
        entries.append(e)
        if on_log:
            on_log(e)

    teacher_net = plan.net
    teacher = train_teacher(
        build(teacher_net), plan.labeled, plan.teacher_epochs, plan.seed, plan.train, plan.heldout, record
    ).model
    _, teacher_rep = evaluate(teacher, plan.heldout) if plan.heldout else (None, EvalReport("teacher"))
    if out:
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(teacher, out / "teacher.cnet")
    labels = pseudo_label(teacher, plan.unlabeled, stage=0)
    all_labels = [labels]
    if out:
        save_pseudo_labels(out / "pseudo" / "stage0", labels)

    students, reports = [], []
    for stage in plan.stages:
        try:
            res = train_student(
                stage, labels, plan.labeled, plan.unlabeled, plan.stage_epochs,
                plan.seed + stage.iter, plan.net, plan.train, plan.heldout, record,
            )
        except Exception:
            log.error("stage %d failed; last good checkpoint retained", stage.iter)
            raise
        student = res.model
        _, rep = evaluate(student, plan.heldout) if plan.heldout else (None, EvalReport(f"stage{stage.iter}"))
        rep.case_id = f"stage{stage.iter}"
        students.append(student)
        reports.append(rep)
        labels = pseudo_label(student, plan.unlabeled, stage=stage.iter)
        all_labels.append(labels)
        if out:
            save_checkpoint(student, out / f"student{stage.iter}.cnet")
            save_pseudo_labels(out / "pseudo" / f"stage{stage.iter}", labels)
            (out / f"report_stage{stage.iter}.csv").write_text("\n".join(rep.records()) + "\n")
    if out:
        _write_run_log(out / "run_log.txt", entries)
    return CurriculumResult(teacher, teacher_rep, students, reports, all_labels, entries)


def _write_run_log(path: Path, entries: list[dict]) -> None:
    lines = ["stage,epoch,loss," + ",".join(f"dice_{r}" for r in REGIONS)]
    for e in entries:
        dice = ",".join(f"{e[f'dice_{r}']:.6f}" if f"dice_{r}" in e else "" for r in REGIONS)
        lines.append(f"{e['stage']},{e['epoch']},{e['loss']:.6f},{dice}")
    path.write_text("\n".join(lines) + "\n")
