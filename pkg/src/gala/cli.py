"""Command-line entry point: ``gala <subcommand> [flags]``.

Every ExperimentConfig field is available as a flag named after its dotted
path (``--diffusion.t-recon 0.2``).  Precedence, lowest first: defaults,
``--config`` file, flags, then the ``GALA_OUT`` environment variable for the
output directory.

Exit codes: 0 success, 1 usage or contract error, 2 I/O or format error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

import torch

from . import config as config_io
from .classifier import load_classifier, pretrain_source, save_classifier
from .config import ExperimentConfig
from .errors import FormatError, GalaError, IntegrityError
from .graph import write_graphs_jsonl, write_tu_dataset
from .score_net import load_score_network, save_score_network, train_score_network
from .sde import reconstruct_graphs
from .synthetic import generate_synthetic_benchmark
from .trainer import MetricsReport, evaluate_source_only, load_domains, run_adaptation

log = logging.getLogger("gala")

EXIT_OK, EXIT_CONTRACT, EXIT_IO = 0, 1, 2
CLASSIFIER_FILE = "classifier.json"
SCORE_NET_FILE = "score_net.json"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; route it to the contract-error code instead
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _flag(key: str) -> str:
    return "--" + key.replace("_", "-")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file")
    for key in config_io.flatten(ExperimentConfig()):
        names = [_flag(key)]
        if key == "output_dir":
            names.append("--out")
        p.add_argument(*names, dest=f"cfg:{key}", default=None, metavar="V")


def _float_list(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gala", description="Source-free graph domain adaptation.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write the synthetic two-domain benchmark")
    _add_config_flags(p)

    p = sub.add_parser("pretrain", help="train the source classifier")
    _add_config_flags(p)

    p = sub.add_parser("train-diffusion", help="train the source score network")
    _add_config_flags(p)

    p = sub.add_parser("reconstruct", help="map target graphs through the score network")
    _add_config_flags(p)
    p.add_argument("--score-net", help="score network checkpoint (default: <out>/score_net.json)")
    p.add_argument("--split", choices=("train", "test"), default="train")

    for name, text in (("adapt", "run the full adaptation"), ("evaluate", "source-only accuracy")):
        p = sub.add_parser(name, help=text)
        _add_config_flags(p)
        p.add_argument("--classifier-checkpoint", help="reuse a pretrained classifier")
        if name == "adapt":
            p.add_argument("--score-net", help="reuse a trained score network")

    p = sub.add_parser("sweep", help="grid over reconstruction time and initial threshold")
    _add_config_flags(p)
    p.add_argument("--t-recon", type=str, default=None, help="comma-separated t_recon values")
    p.add_argument("--alpha0", type=str, default=None, help="comma-separated alpha(0) values")

    p = sub.add_parser("report", help="summarise metrics.json files")
    p.add_argument("paths", nargs="+", help="run directories or metrics.json files")
    return parser


def resolve_config(args) -> ExperimentConfig:
    cfg = config_io.load(args.config) if getattr(args, "config", None) else ExperimentConfig()
    for dest, value in vars(args).items():
        if dest.startswith("cfg:") and value is not None:
            config_io.set_value(cfg, dest[4:], value)
    if os.environ.get("GALA_OUT"):
        cfg.output_dir = os.environ["GALA_OUT"]
    return cfg


def _out(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --------------------------------------------------------------------------
# subcommands


def cmd_synth(cfg: ExperimentConfig, args) -> None:
    out = _out(cfg)
    src, tgt = generate_synthetic_benchmark(cfg.synthetic, cfg.synthetic.seed)
    write_tu_dataset(src, out / "source", "SOURCE")
    write_tu_dataset(tgt, out / "target", "TARGET")
    print(f"wrote {len(src)} source and {len(tgt)} target graphs to {out}")


def cmd_pretrain(cfg: ExperimentConfig, args) -> None:
    data = load_domains(cfg)
    model, trace = pretrain_source(data.source_train, cfg.classifier, seed=cfg.seed)
    path = _out(cfg) / CLASSIFIER_FILE
    save_classifier(model, path)
    print(f"final training loss {trace[-1]:.4f}; saved {path}")


def cmd_train_diffusion(cfg: ExperimentConfig, args) -> None:
    data = load_domains(cfg)
    net, trace = train_score_network(data.source_train, cfg.diffusion.schedule, cfg.diffusion, seed=cfg.seed)
    path = _out(cfg) / SCORE_NET_FILE
    save_score_network(net, path)
    print(f"final score loss {trace[-1]:.4f}; saved {path}")


def cmd_reconstruct(cfg: ExperimentConfig, args) -> None:
    out = _out(cfg)
    net = load_score_network(args.score_net or out / SCORE_NET_FILE)
    data = load_domains(cfg)
    target = data.target_train if args.split == "train" else data.target_test
    d = cfg.diffusion
    steps = d.step_override or round(d.t_recon / d.dt)
    graphs = reconstruct_graphs(list(target.graphs), net, d.schedule, d.t_recon, d.dt,
                                seed=cfg.seed, steps=d.step_override)
    provenance = {"t_recon": d.t_recon, "steps": steps, "seed": cfg.seed}
    path = out / f"reconstructed_{args.split}.jsonl"
    write_graphs_jsonl(graphs, path, [dict(provenance, index=i) for i in range(len(graphs))])
    print(f"reconstructed {len(graphs)} graphs to {path}")


def _checkpoints(cfg, args):
    clf = load_classifier(args.classifier_checkpoint) if getattr(args, "classifier_checkpoint", None) else None
    net = load_score_network(args.score_net) if getattr(args, "score_net", None) else None
    return clf, net


def cmd_adapt(cfg: ExperimentConfig, args) -> None:
    clf, net = _checkpoints(cfg, args)
    report = run_adaptation(cfg, classifier=clf, score_net=net)
    out = report.write(_out(cfg))
    s = report.summary()
    print(f"{s['task']}: adapted {s['accuracy_mean']:.4f} +/- {s['accuracy_std']:.4f} "
          f"(source-only {s['source_only_mean']:.4f}); metrics in {out}")


def cmd_evaluate(cfg: ExperimentConfig, args) -> None:
    data = load_domains(cfg)
    clf, _ = _checkpoints(cfg, args)
    report = MetricsReport(data.task, cfg.run_seeds)
    for seed in cfg.run_seeds:
        model = clf if clf is not None else pretrain_source(data.source_train, cfg.classifier, seed=seed)[0]
        report.source_only.append(evaluate_source_only(model, data.target_test))
    out = _out(cfg)
    (out / "source_only.json").write_text(json.dumps(report.to_json(), indent=1, sort_keys=True))
    s = report.summary()
    print(f"{s['task']}: source-only {s['source_only_mean']:.4f} +/- {s['source_only_std']:.4f}")


SWEEP_COLUMNS = ["t_recon", "alpha0", "accuracy_mean", "accuracy_std", "source_only_mean"]


def cmd_sweep(cfg: ExperimentConfig, args) -> None:
    t_values = _float_list(args.t_recon) if args.t_recon else [cfg.diffusion.t_recon]
    a_values = _float_list(args.alpha0) if args.alpha0 else [cfg.curriculum.alpha_start]
    data = load_domains(cfg)
    # one pretrained pair shared by every grid point isolates the swept knobs
    clf, _ = pretrain_source(data.source_train, cfg.classifier, seed=cfg.seed)
    net, _ = train_score_network(data.source_train, cfg.diffusion.schedule, cfg.diffusion, seed=cfg.seed)
    rows = []
    for t in t_values:
        for a in a_values:
            cfg.diffusion.t_recon = t
            cfg.curriculum.alpha_start = a
            cfg.curriculum.alpha_end = max(cfg.curriculum.alpha_end, a)
            s = run_adaptation(cfg, classifier=clf, score_net=net, data=data).summary()
            rows.append({"t_recon": t, "alpha0": a, "accuracy_mean": s["accuracy_mean"],
                         "accuracy_std": s["accuracy_std"], "source_only_mean": s["source_only_mean"]})
            print(f"t_recon={t} alpha0={a}: {s['accuracy_mean']:.4f} +/- {s['accuracy_std']:.4f}")
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    (_out(cfg) / "sweep.csv").write_text(buf.getvalue())


def cmd_report(args) -> None:
    rows = ["task,runs,accuracy_mean,accuracy_std,source_only_mean,source_only_std"]
    for p in args.paths:
        path = Path(p)
        if path.is_dir():
            path = path / "metrics.json"
        try:
            obj = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: {exc}") from exc
        s = MetricsReport.from_json(obj).summary()
        nums = [s.get(k, float("nan")) for k in ("accuracy_mean", "accuracy_std", "source_only_mean",
                                                 "source_only_std")]
        rows.append(",".join([s["task"], str(s["runs"])] + [f"{v:.4f}" for v in nums]))
    print("\n".join(rows))


COMMANDS = {
    "synth": cmd_synth,
    "pretrain": cmd_pretrain,
    "train-diffusion": cmd_train_diffusion,
    "reconstruct": cmd_reconstruct,
    "adapt": cmd_adapt,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONTRACT
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    torch.set_num_threads(1)
    try:
        if args.command == "report":
            cmd_report(args)
        else:
            COMMANDS[args.command](resolve_config(args), args)
    except (OSError, FormatError, IntegrityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (GalaError, ValueError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
