"""Command-line entry point.

    multipgd toy --out DIR
    multipgd make-data --out DIR
    multipgd train --data train.csv --arch 32-32 --out model.bin [--adversarial --eps 0.12]
    multipgd attack --model model.bin --data test.csv --losses ce,cw,dlr --out DIR

Exit codes: 0 success, 1 usage or configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import benchmark, schedules
from .attack import (AttackConfig, Alternate, Clean, Convex, EnsembleOr,
                     RandomSign, ThreatModel, TOY, TOY_RUNS, toy_outcomes, toy_rows)
from .evaluation import distance_trace, evaluate, named_config, write_traces_csv
from .losses import LossSchedule
from .models import (AdversarialTraining, TrainConfig, accuracy, load_dataset, load_model,
                     parse_arch, predict, save_dataset, save_model, train)

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2

SCHEDULE_HELP = "fixed-quarter, gama, md2, md3 or fixed:<value>"
COMBINERS = ("alternate", "ensemble-or", "convex")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# config


def read_config_file(path) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from None
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


@dataclass
class RunConfig:
    model: Path | None = None
    data: Path | None = None
    threat: ThreatModel = field(default_factory=ThreatModel)
    T: int = 100
    R: int = 1
    losses: list[LossSchedule] = field(default_factory=list)
    schedule: str = "fixed-quarter"
    init: str = "clean"
    combiner: str = "alternate"
    gamma: float = 0.5
    seed: int = 0
    out: Path | None = None

    def attack_configs(self) -> list[AttackConfig]:
        init = RandomSign(self.seed) if self.init == "random-sign" else Clean()
        comb = {"alternate": Alternate(), "ensemble-or": EnsembleOr(),
                "convex": Convex(self.gamma)}[self.combiner]
        if self.threat.eps == 0 and self.schedule in schedules.NAMED_SCHEDULES:
            steps = schedules.Fixed(0.0)  # eps-relative schedules collapse to zero
        else:
            steps = schedules.make_paper_schedule(self.schedule, self.threat.eps, self.T)
        return [AttackConfig(T=self.T, threat=self.threat, losses=l, steps=steps, R=self.R,
                             init=init, combiner=comb) for l in self.losses]


def _merged(args, keys, defaults):
    """Flags override config-file values, which override defaults."""
    cfg = read_config_file(args.config) if getattr(args, "config", None) else {}
    unknown = set(cfg) - set(keys)
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    out = {}
    for k in keys:
        v = getattr(args, k, None)
        if v is None or v == []:
            v = cfg.get(k)
        if v is None:
            v = defaults.get(k)
        out[k] = v
    return out


def _existing(path, what) -> Path:
    if path is None:
        raise UsageError(f"missing {what} path")
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} file not found: {p}")
    return p


def _number(text, what) -> float:
    try:
        return schedules.parse_number(text)
    except ValueError:
        raise UsageError(f"bad {what}: {text!r}") from None


def _int(text, what) -> int:
    try:
        return int(str(text))
    except ValueError:
        raise UsageError(f"bad {what}: {text!r}") from None


def _threat(v) -> ThreatModel:
    try:
        return ThreatModel(str(v["p"]), _number(v["eps"], "eps"), box=not _flag(v["no_box"]))
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _flag(v) -> bool:
    return v is True or str(v).strip().lower() in ("1", "true", "yes", "on")


ATTACK_KEYS = ("model", "data", "p", "eps", "no_box", "T", "R", "losses", "schedule", "init",
               "combiner", "gamma", "seed", "out", "jobs", "timings", "trace_batch")
ATTACK_DEFAULTS = {"p": "inf", "eps": "8/255", "no_box": False, "T": "100", "R": "1",
                   "losses": ["ce"], "schedule": "fixed-quarter", "init": "clean",
                   "combiner": "alternate", "gamma": "0.5", "seed": "0", "jobs": "1",
                   "timings": False, "trace_batch": "100"}


def parse_attack_config(args) -> tuple[RunConfig, dict]:
    """Parse and validate everything before any computation starts."""
    v = _merged(args, ATTACK_KEYS, ATTACK_DEFAULTS)
    losses = v["losses"]
    if isinstance(losses, str):
        losses = losses.split()
    try:
        schedules_ = [LossSchedule.parse(s) for s in losses]
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if v["init"] not in ("clean", "random-sign"):
        raise UsageError(f"init must be clean or random-sign, got {v['init']!r}")
    if v["combiner"] not in COMBINERS:
        raise UsageError(f"combiner must be one of {', '.join(COMBINERS)}")
    if v["out"] is None:
        raise UsageError("--out is required")
    rc = RunConfig(
        model=_existing(v["model"], "model"), data=_existing(v["data"], "dataset"),
        threat=_threat(v), T=_int(v["T"], "T"), R=_int(v["R"], "R"), losses=schedules_,
        schedule=str(v["schedule"]), init=v["init"], combiner=v["combiner"],
        gamma=_number(v["gamma"], "gamma"), seed=_int(v["seed"], "seed"), out=Path(v["out"]),
    )
    try:
        configs = rc.attack_configs()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    extra = {"jobs": max(1, _int(v["jobs"], "jobs")), "timings": _flag(v["timings"]),
             "trace_batch": _int(v["trace_batch"], "trace batch"), "configs": configs}
    return rc, extra


# ---------------------------------------------------------------------------
# commands


def cmd_toy(args) -> int:
    out = Path(args.out)
    outcomes = toy_outcomes()
    try:
        out.mkdir(parents=True, exist_ok=True)
        summary = []
        for name in TOY_RUNS:
            o = outcomes[name]
            path = out / f"toy_{name.lower().replace('&', '_')}.csv"
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["run", "t", "x0", "x1", "pred", "loss"])
                for run, t, x0, x1, pred, loss in toy_rows(name, o.iterates[0, 1:]):
                    w.writerow([run, t, repr(x0), repr(x1), pred, repr(loss)])
            final_pred = predict(TOY.model, o.iterates[0, -1])
            line = f"{name}: {'success' if o.success else 'fail'} (final prediction {final_pred})"
            summary.append(line)
        (out / "summary.txt").write_text("\n".join(summary) + "\n")
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print("\n".join(summary))
    ok = outcomes["CE"].success and outcomes["CE&CW"].success and not outcomes["CW"].success
    if not ok:
        print("toy outcome differs from the expected CE: success, CW: fail, CE&CW: success",
              file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_make_data(args) -> int:
    out = Path(args.out)
    seed = benchmark.SEED if args.seed is None else args.seed
    try:
        out.mkdir(parents=True, exist_ok=True)
        save_dataset(benchmark.make_blobs(1500, seed + 1, "blobs3-train"), out / "train.csv")
        save_dataset(benchmark.make_blobs(1200, seed + 2, "blobs3-test"), out / "test.csv")
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"wrote {out / 'train.csv'} and {out / 'test.csv'}")
    return EXIT_OK


TRAIN_KEYS = ("data", "arch", "epochs", "lr", "seed", "adversarial", "p", "eps", "no_box",
              "inner_steps", "classes", "out")
TRAIN_DEFAULTS = {"arch": "32-32", "epochs": "400", "lr": "0.5", "seed": "0",
                  "adversarial": False, "p": "inf", "eps": "0.12", "no_box": False,
                  "inner_steps": "10"}


def cmd_train(args) -> int:
    try:
        v = _merged(args, TRAIN_KEYS, TRAIN_DEFAULTS)
        data = _existing(v["data"], "dataset")
        try:
            hidden = parse_arch(v["arch"])
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        if v["out"] is None:
            raise UsageError("--out is required")
        epochs, seed = _int(v["epochs"], "epochs"), _int(v["seed"], "seed")
        lr = _number(v["lr"], "lr")
        adv = None
        if _flag(v["adversarial"]):
            adv = AdversarialTraining(_threat(v), _int(v["inner_steps"], "inner steps"))
        classes = _int(v["classes"], "classes") if v["classes"] is not None else None
        ds = load_dataset(data, num_classes=classes)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        model = train(ds, TrainConfig(hidden, epochs, lr, seed, adv),
                      name=Path(v["out"]).stem)
        save_model(model, v["out"])
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"{'adversarial' if adv else 'plain'} model -> {v['out']}")
    print(f"clean accuracy (train): {100 * accuracy(model, ds):.2f}%")
    if adv is not None:
        report = evaluate(model, ds, [named_config("ce", adv.threat)])
        print(f"PGD-CE robust accuracy (train, eps={adv.threat.eps:g}): "
              f"{100 * report.rows[0].robust_accuracy:.2f}%")
    return EXIT_OK


def cmd_attack(args) -> int:
    try:
        rc, extra = parse_attack_config(args)
        model = load_model(rc.model)
        ds = load_dataset(rc.data, num_classes=model.num_classes)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        report = evaluate(model, ds, extra["configs"], jobs=extra["jobs"])
        batch = ds.subset(slice(0, min(extra["trace_batch"], len(ds))))
        traces = [distance_trace(model, batch, c, jobs=extra["jobs"]) for c in extra["configs"]]
        rc.out.mkdir(parents=True, exist_ok=True)
        report.write_csv(rc.out / "report.csv", timings=extra["timings"])
        report.write_examples_csv(rc.out / "examples.csv")
        write_traces_csv(traces, rc.out / "traces.csv")
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(report.to_table())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="multipgd", description="Multi-stage PGD with alternating surrogate losses")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("toy", help="run the 2-D three-class toy example")
    t.add_argument("--out", default="toy_out")
    t.set_defaults(func=cmd_toy)

    d = sub.add_parser("make-data", help="write the bundled synthetic benchmark CSVs")
    d.add_argument("--out", default="data")
    d.add_argument("--seed", type=int, default=None)
    d.set_defaults(func=cmd_make_data)

    tr = sub.add_parser("train", help="train a victim MLP (plain or adversarial)")
    tr.add_argument("--config")
    tr.add_argument("--data")
    tr.add_argument("--arch", help="hidden widths, e.g. 32-32, or 'linear'")
    tr.add_argument("--epochs")
    tr.add_argument("--lr")
    tr.add_argument("--seed")
    tr.add_argument("--adversarial", action="store_true", default=None)
    tr.add_argument("--p")
    tr.add_argument("--eps", help="decimal or fraction, e.g. 8/255")
    tr.add_argument("--no-box", dest="no_box", action="store_true", default=None)
    tr.add_argument("--inner-steps", dest="inner_steps")
    tr.add_argument("--classes")
    tr.add_argument("--out")
    tr.set_defaults(func=cmd_train)

    a = sub.add_parser("attack", help="evaluate attacks on a model and dataset")
    a.add_argument("--config")
    a.add_argument("--model")
    a.add_argument("--data")
    a.add_argument("--losses", action="append", default=None,
                   help="stage order, e.g. ce,cw,dlr; repeat for several attacks")
    a.add_argument("--T")
    a.add_argument("--R")
    a.add_argument("--eps")
    a.add_argument("--p")
    a.add_argument("--no-box", dest="no_box", action="store_true", default=None)
    a.add_argument("--schedule", help=SCHEDULE_HELP)
    a.add_argument("--init", help="clean or random-sign")
    a.add_argument("--combiner", help="alternate, ensemble-or or convex")
    a.add_argument("--gamma")
    a.add_argument("--seed")
    a.add_argument("--out")
    a.add_argument("--jobs")
    a.add_argument("--timings", action="store_true", default=None,
                   help="write wall-clock times (breaks byte-identical reruns)")
    a.add_argument("--trace-batch", dest="trace_batch")
    a.set_defaults(func=cmd_attack)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
