"""Command-line experiment runner.

    python -m safeadapt offline  --config exp.ini --seed 0 --out runs
    python -m safeadapt adapt    --setting reg_bc_rl --seed 0 --out runs
    python -m safeadapt evaluate --seed 0 --out runs
    python -m safeadapt report   --out runs

Output layout under ``--out`` (default ``run.out_dir``)::

    offline_seed<S>/artifacts.ckpt    off-line phase artifacts
    offline_seed<S>/manifest.txt
    adapt_<setting>_seed<S>/final.ckpt, iter<k>.ckpt, manifest.txt
    curves_<setting>_seed<S>.csv      one curve file per (setting, seed)
    evaluate_seed<S>.txt
    report.csv, report.txt

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import logging
import sys
from collections import defaultdict
from dataclasses import replace
from pathlib import Path

from . import config as config_mod
from .checkpoint import CheckpointError, file_hash, load_artifacts, save_artifacts
from .evaluation import (RewardCurve, exploitability, game_value, normalized_metrics,
                         pair_value, second_half_window)
from .protocol import SETTINGS, offline_phase, online_phase

log = logging.getLogger("safeadapt")

MANIFEST_FORMAT = "safeadapt-manifest"
CURVES_FORMAT = "safeadapt-curves"
EVAL_FORMAT = "safeadapt-evaluation"
FORMAT_VERSION = 1
CURVE_COLUMNS = ("iteration", "env_steps", "exploiter1_reward", "exploiter2_reward",
                 "setting", "seed")


class UsageError(Exception):
    pass


class RunError(Exception):
    pass


# -- file formats -----------------------------------------------------------------------


def write_manifest(path, command: str, cfg, files: dict) -> None:
    """Manifest: version line, run info, sha256 of produced files, resolved config."""
    lines = [f"{MANIFEST_FORMAT} {FORMAT_VERSION}", "[manifest]", f"command = {command}",
             f"master_seed = {cfg.protocol.master_seed}", "", "[hashes]"]
    lines += [f"{Path(p).name} = {file_hash(p)}" for p in files]
    Path(path).write_text("\n".join(lines) + "\n\n" + config_mod.dumps(cfg))


def read_manifest(path) -> tuple:
    """Returns (info, hashes, config)."""
    text = Path(path).read_text()
    head, _, body = text.partition("\n")
    parts = head.split()
    if len(parts) != 2 or parts[0] != MANIFEST_FORMAT:
        raise RunError(f"{path} is not a manifest")
    if parts[1] != str(FORMAT_VERSION):
        raise RunError(f"manifest format version {parts[1]} is not supported "
                       f"(expected {FORMAT_VERSION})")
    info_text, _, cfg_text = body.partition("[meta]")
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser.read_string(info_text)
    cfg = config_mod.loads("[meta]" + cfg_text)
    return dict(parser["manifest"]), dict(parser["hashes"]), cfg


def curves_to_csv(records, setting: str, seed: int) -> str:
    buf = io.StringIO()
    buf.write(f"# {CURVES_FORMAT} {FORMAT_VERSION}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CURVE_COLUMNS)
    for r in records:
        w.writerow([r.iteration, r.env_steps, repr(float(r.exploiter1_reward)),
                    repr(float(r.exploiter2_reward)), setting, seed])
    return buf.getvalue()


def read_curves(path) -> tuple:
    """Returns (setting, seed, first-exploiter curve, second-exploiter curve)."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != f"# {CURVES_FORMAT} {FORMAT_VERSION}":
        raise RunError(f"{path}: missing or unsupported curve format line")
    rows = list(csv.DictReader(lines[1:]))
    if not rows:
        raise RunError(f"{path}: no curve rows")
    if tuple(rows[0].keys()) != CURVE_COLUMNS:
        raise RunError(f"{path}: unexpected columns {list(rows[0].keys())}")
    steps = [float(r["env_steps"]) for r in rows]
    first = RewardCurve(steps, [float(r["exploiter1_reward"]) for r in rows])
    second = RewardCurve(steps, [float(r["exploiter2_reward"]) for r in rows])
    return rows[0]["setting"], int(rows[0]["seed"]), first, second


# -- commands ---------------------------------------------------------------------------


def _offline_dir(out: Path, seed: int) -> Path:
    return out / f"offline_seed{seed}"


def _load_offline(out: Path, seed: int):
    path = _offline_dir(out, seed) / "artifacts.ckpt"
    if not path.exists():
        raise RunError(f"missing off-line artifacts {path}; run `offline` first")
    try:
        return load_artifacts(path), path
    except CheckpointError as e:
        raise RunError(str(e)) from e


def cmd_offline(cfg, out: Path, args) -> None:
    game = cfg.game.build()
    art = offline_phase(game, cfg.protocol, cfg.ppo)
    d = _offline_dir(out, cfg.protocol.master_seed)
    d.mkdir(parents=True, exist_ok=True)
    ckpt = d / "artifacts.ckpt"
    save_artifacts(ckpt, art)
    write_manifest(d / "manifest.txt", "offline", cfg, [ckpt])
    print(f"wrote {ckpt}")


def cmd_adapt(cfg, out: Path, args) -> None:
    if args.setting is not None:
        cfg = replace(cfg, protocol=replace(cfg.protocol, setting=args.setting))
    seed, setting = cfg.protocol.master_seed, cfg.protocol.setting
    art, _ = _load_offline(out, seed)
    game = cfg.game.build()
    d = out / f"adapt_{setting}_seed{seed}"
    d.mkdir(parents=True, exist_ok=True)
    written = []
    interval = cfg.run.checkpoint_interval

    def checkpoint(it, current):
        if interval > 0 and it % interval == 0:
            path = d / f"iter{it}.ckpt"
            save_artifacts(path, current)
            written.append(path)

    result = online_phase(game, art, cfg.protocol, cfg.adapt, cfg.ppo, callback=checkpoint)
    final = d / "final.ckpt"
    save_artifacts(final, result.artifacts)
    curves = out / f"curves_{setting}_seed{seed}.csv"
    curves.write_text(curves_to_csv(result.records, setting, seed))
    write_manifest(d / "manifest.txt", "adapt", cfg, [*written, final, curves])
    print(f"wrote {curves}")


def cmd_evaluate(cfg, out: Path, args) -> None:
    seed = cfg.protocol.master_seed
    game = cfg.game.build()
    paths = [Path(p) for p in args.checkpoint] if args.checkpoint else \
        [_offline_dir(out, seed) / "artifacts.ckpt"]
    lines = [f"# {EVAL_FORMAT} {FORMAT_VERSION}", f"game = {game.name}",
             f"game_value = {game_value(game)!r}"]
    for path in paths:
        if not path.exists():
            raise RunError(f"missing checkpoint {path}")
        art = load_artifacts(path)
        ego, oppo = art.ego_ensemble, art.oppo_ensemble
        rows = {
            "ego_exploitability": exploitability(game, ego, "ego"),
            "oppo_exploitability": exploitability(game, oppo, "oppo"),
            "ego_vs_oppo": pair_value(game, ego, oppo),
            "ego_vs_exploiter1": pair_value(game, ego, art.exploiter1.policy),
        }
        if art.exploiter2 is not None:
            rows["ego_vs_exploiter2"] = pair_value(game, ego, art.exploiter2.policy)
        lines.append(f"[{path}]")
        lines += [f"{k} = {v!r}" for k, v in rows.items()]
    text = "\n".join(lines) + "\n"
    target = out / f"evaluate_seed{seed}.txt"
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(text)
    print(text, end="")


def cmd_report(cfg, out: Path, args) -> None:
    paths = [Path(p) for p in args.curves] if args.curves else sorted(out.glob("curves_*.csv"))
    if not paths:
        raise RunError(f"no curve files found in {out}")
    curves = defaultdict(list)
    for p in paths:
        setting, _, first, second = read_curves(p)
        curves[setting].append((first, second))
    missing = {"oracle", "ensemble"} - set(curves)
    if missing:
        raise RunError(f"report needs the reference settings; missing {sorted(missing)}")
    order = [s for s in SETTINGS if s in curves] + sorted(set(curves) - set(SETTINGS))
    curves = {s: curves[s] for s in order}
    report = normalized_metrics(curves, second_half_window(curves))
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.csv").write_text(report.to_csv())
    (out / "report.txt").write_text(report.to_table() + "\n")
    print(report.to_table())


COMMANDS = {"offline": cmd_offline, "adapt": cmd_adapt, "evaluate": cmd_evaluate,
            "report": cmd_report}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="experiment config file (sections of key = value)")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config value; repeatable")
    common.add_argument("--seed", type=int, help="master seed (protocol.master_seed)")
    common.add_argument("--out", help="output directory (run.out_dir)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="safeadapt", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("offline", parents=[common], help="train ensembles and the first exploiter")
    a = sub.add_parser("adapt", parents=[common], help="on-line adaptation from saved artifacts")
    a.add_argument("--setting", choices=SETTINGS)
    e = sub.add_parser("evaluate", parents=[common], help="exploitability and head-to-head values")
    e.add_argument("--checkpoint", action="append", help="checkpoint file(s); default: off-line")
    r = sub.add_parser("report", parents=[common], help="aggregate curve CSVs into metrics")
    r.add_argument("--curves", nargs="*", help="curve files; default: all in the output dir")
    p.epilog = "config keys and defaults:\n" + config_mod.describe_keys()
    p.formatter_class = argparse.RawDescriptionHelpFormatter
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        overrides = list(args.set)
        if args.seed is not None:
            overrides.append(f"protocol.master_seed={args.seed}")
        if args.out is not None:
            overrides.append(f"run.out_dir={args.out}")
        cfg = config_mod.load(args.config, overrides)
    except (UsageError, config_mod.ConfigError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](cfg, Path(cfg.run.out_dir), args)
    except (RunError, CheckpointError, OSError, ValueError, FloatingPointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
