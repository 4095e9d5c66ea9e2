"""Command-line interface: one subcommand per pipeline step.

Global flags (``--config``, ``--seed``, ``--out``) may appear before or after
the subcommand.  Every command writes its resolved configuration into the
output directory.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .curriculum import (
    CurriculumPlan,
    TrainingDiverged,
    evaluate,
    predict_proba,
    pseudo_label,
    run_curriculum,
    save_pseudo_labels,
    train,
)
from .data import MANIFEST_FILE, Case, load_case, load_dataset, save_case, gen_phantom, write_cvol, zscore
from .metrics import RECORD_HEADER, wilcoxon_signed_rank
from .network import build, load_checkpoint, save_checkpoint

log = logging.getLogger("caspianet")

ABLATION_VARIANTS = ("baseline", "se", "saam_only", "saam+caam", "caspian", "caspian+multiplanar", "caspian+multiscale", "caspian_pp")


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _resolve(args) -> cfgmod.RunConfig:
    rc = cfgmod.load(args.config) if args.config else cfgmod.RunConfig.defaults()
    if args.seed is not None:
        rc.set("seed", args.seed)
    for key, attr in (
        ("train.epochs", "epochs"),
        ("net.variant", "variant"),
        ("phantom.count", "count"),
        ("phantom.first_id", "first_id"),
        ("phantom.extent", "extent"),
    ):
        v = getattr(args, attr, None)
        if v is not None:
            rc.set(key, v)
    return rc


def _write_manifest(root: Path, ids) -> None:
    (root / MANIFEST_FILE).write_text("".join(f"{i}\n" for i in ids))


def _report_lines(reports, mean) -> str:
    lines = [RECORD_HEADER]
    for r in reports + [mean]:
        lines += r.records()
    return "\n".join(lines) + "\n"


def write_pgm(path, img: np.ndarray) -> None:
    """Binary greyscale PGM (P5), min-max scaled to 0..255."""
    a = np.asarray(img, dtype=np.float64)
    lo, hi = float(a.min()), float(a.max())
    u8 = np.zeros(a.shape, np.uint8) if hi <= lo else np.round((a - lo) / (hi - lo) * 255).astype(np.uint8)
    h, w = u8.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + u8.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h = map(int, parts[1].split())
    return np.frombuffer(parts[3], np.uint8).reshape(h, w)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_phantom(args, rc) -> int:
    out = _out(args)
    ids = []
    for k in range(rc["phantom.count"]):
        sid = rc["phantom.first_id"] + k
        seed = int(np.random.SeedSequence([rc["seed"], sid]).generate_state(1)[0])
        image, label = gen_phantom(rc.phantom_spec(seed))
        case = Case(f"phantom_{sid:04d}", image, label if rc["phantom.labels"] else None)
        save_case(out, case)
        ids.append(case.case_id)
    _write_manifest(out, ids)
    print(f"wrote {len(ids)} phantoms to {out}")
    return 0


def cmd_train(args, rc) -> int:
    out = _out(args)
    cases = load_dataset(args.data)
    val = load_dataset(args.val) if args.val else None
    model = build(rc.net_config())
    log_lines = []
    result = train(model, cases, rc.train_config(), val=val, on_log=lambda e: log_lines.append(repr(e)))
    save_checkpoint(result.model, out / "model.cnet")
    (out / "train_log.txt").write_text("\n".join(log_lines) + "\n")
    print(f"best epoch {result.best_epoch}; model id {result.model.model_id()}")
    return 0


def cmd_pseudo_label(args, rc) -> int:
    out = _out(args)
    model = load_checkpoint(args.model)
    cases = load_dataset(args.data, with_label=False)
    labels = pseudo_label(model, cases, stage=args.stage)
    for c in cases:
        save_case(out, Case(c.case_id, c.image, None))
    save_pseudo_labels(out, labels)
    _write_manifest(out, [c.case_id for c in cases])
    print(f"labelled {len(labels)} cases with model {model.model_id()}")
    return 0


def cmd_curriculum(args, rc) -> int:
    out = _out(args)
    plan = CurriculumPlan(
        labeled=load_dataset(args.labeled),
        unlabeled=load_dataset(args.unlabeled, with_label=False),
        heldout=load_dataset(args.val) if args.val else [],
        net=rc.net_config(),
        train=rc.train_config(),
        stages=rc.stages(),
        teacher_epochs=rc["curriculum.teacher_epochs"],
        stage_epochs=rc["curriculum.stage_epochs"],
        seed=rc["seed"],
    )
    res = run_curriculum(plan, out)
    for stage, rep in zip(plan.stages, res.reports):
        print(f"stage {stage.iter}: mean Dice {rep.mean_dice():.4f}")
    return 0


def cmd_eval(args, rc) -> int:
    out = _out(args)
    model = load_checkpoint(args.model)
    reports, mean = evaluate(model, load_dataset(args.data))
    (out / "report.csv").write_text(_report_lines(reports, mean))
    for r in mean.records():
        print(r)
    return 0


def cmd_ablate(args, rc) -> int:
    out = _out(args)
    cases, val = load_dataset(args.data), load_dataset(args.val)
    variants = args.variants.split(",") if args.variants else list(ABLATION_VARIANTS)
    per_case, means = {}, {}
    for v in variants:
        model = build(rc.net_config(v))
        res = train(model, cases, rc.train_config(), val=val)
        save_checkpoint(res.model, out / f"{v.replace('+', '_')}.cnet")
        per_case[v], means[v] = evaluate(res.model, val)
    base = "baseline" if "baseline" in variants else variants[0]
    head = "variant,dice_ET,dice_WT,dice_TC,hd95_ET,hd95_WT,hd95_TC,p_wt_vs_" + base
    rows = [head]
    for v in variants:
        m = means[v].regions
        p = float("nan")
        if v != base:
            x = [r.regions["WT"].dice for r in per_case[base]]
            y = [r.regions["WT"].dice for r in per_case[v]]
            try:
                p = wilcoxon_signed_rank(x, y)[1]
            except ValueError:
                pass  # too few non-zero differences
        cells = [f"{m[r].dice:.6f}" for r in ("ET", "WT", "TC")] + [f"{m[r].hd95:.6f}" for r in ("ET", "WT", "TC")]
        rows.append(",".join([v] + cells + [f"{p:.6f}"]))
    (out / "ablation.csv").write_text("\n".join(rows) + "\n")
    print("\n".join(rows))
    return 0


def _upsample_to(mask: np.ndarray, shape) -> np.ndarray:
    reps = [s // m for s, m in zip(shape, mask.shape)]
    return np.kron(mask, np.ones(reps))


def cmd_heatmap(args, rc) -> int:
    out = _out(args)
    model = load_checkpoint(args.model)
    case = load_case(args.case, with_label=False)
    crop = model.config.crop
    image = zscore(case.image)
    if image.shape[1:] != (crop,) * 3:
        raise SystemExit(f"heatmap needs a {crop}^3 case, got {image.shape[1:]}")
    blocks = model.attention_blocks()
    if args.block == "input":
        from .attention import saam
        from .autodiff import Tensor

        mask = saam(Tensor(image[None])).data[0, 0]
    else:
        if args.block not in blocks:
            raise SystemExit(f"unknown block {args.block!r}; choose from input, {', '.join(blocks)}")
        model.forward(image[None], training=False)
        mask = blocks[args.block].last_spatial
        if mask is None:
            raise SystemExit(f"block {args.block} has no spatial mask")
        mask = np.asarray(mask)[0, 0]
    mask = _upsample_to(mask, image.shape[1:])
    z = args.slice if args.slice is not None else image.shape[3] // 2
    stem = f"{case.case_id}_{args.block}_z{z}"
    write_pgm(out / f"{stem}_attention.pgm", mask[:, :, z])
    write_pgm(out / f"{stem}_input.pgm", image[args.channel, :, :, z])
    pred = predict_proba(model, case.image)
    write_pgm(out / f"{stem}_prediction.pgm", (pred[0, :, :, z] > 0.5).astype(np.float64))
    write_cvol(out / f"{stem}_attention.cvol", mask.astype(np.float32))
    print(f"wrote heatmaps for {args.block} to {out}")
    return 0


def cmd_gradcheck(args, rc) -> int:
    from .gradcheck import run_suite

    results = run_suite(seed=rc["seed"])
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 1 if failed else 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _globals(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", default=d, help="run config file (key = value lines)")
    p.add_argument("--seed", type=int, default=d, help="master seed")
    p.add_argument("--out", default=d if suppress else "out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="caspianet", description=__doc__.splitlines()[0])
    _globals(p, suppress=False)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        _globals(sp, suppress=True)
        sp.set_defaults(func=fn)
        return sp

    sp = add("phantom", cmd_phantom, "generate synthetic phantom cases")
    sp.add_argument("--count", type=int)
    sp.add_argument("--first-id", dest="first_id", type=int)
    sp.add_argument("--extent", type=int)

    sp = add("train", cmd_train, "train a model on labelled cases")
    sp.add_argument("--data", required=True)
    sp.add_argument("--val")
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--variant", choices=cfgmod.VARIANTS)

    sp = add("pseudo-label", cmd_pseudo_label, "label cases with a trained model")
    sp.add_argument("--model", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--stage", type=int, default=0)

    sp = add("curriculum", cmd_curriculum, "teacher + staged noisy students")
    sp.add_argument("--labeled", required=True)
    sp.add_argument("--unlabeled", required=True)
    sp.add_argument("--val")

    sp = add("eval", cmd_eval, "score a model on labelled cases")
    sp.add_argument("--model", required=True)
    sp.add_argument("--data", required=True)

    sp = add("ablate", cmd_ablate, "train and compare attention variants")
    sp.add_argument("--data", required=True)
    sp.add_argument("--val", required=True)
    sp.add_argument("--variants", help=f"comma list from {', '.join(ABLATION_VARIANTS)}")
    sp.add_argument("--epochs", type=int)

    sp = add("heatmap", cmd_heatmap, "write attention heatmap slices (PGM)")
    sp.add_argument("--model", required=True)
    sp.add_argument("--case", required=True, help="case directory")
    sp.add_argument("--block", default="input", help="'input' or an attention block name, e.g. enc2")
    sp.add_argument("--slice", type=int, help="axial slice index (default: middle)")
    sp.add_argument("--channel", type=int, default=3, help="input channel shown alongside")

    add("gradcheck", cmd_gradcheck, "finite-difference gradient suite")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        rc = _resolve(args)
    except (cfgmod.ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    rc.write(_out(args))
    try:
        return args.func(args, rc)
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 3
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
