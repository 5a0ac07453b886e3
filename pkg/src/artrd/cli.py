"""Command-line entry point: ``artrd <command> [options]``.

Every command writes into one run directory (``--out``): checkpoints, CSV
files, the resolved config it ran with, and ``manifest.json`` holding a
content hash per artifact. Exit codes: 0 success, 2 contract violation,
3 configuration, 4 checkpoint, 5 training diverged, 6 insufficient data,
1 anything else.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from . import numcore as nc
from .attack import STATE_UNAWARE, normalize_variant, train_adversary
from .config import RunConfig, dump_config, load_config, parse_seeds
from .defense import FINETUNE, TANDEM, DefenseScheme, run_scheme
from .envs import NavigationEnv
from .evaluation import (EvalReport, defense_report, evaluate_grid, final_reward,
                         format_defense_table, format_eval_table, robustness_correlation)
from .exceptions import (ArtrdError, CheckpointError, ConfigurationError,
                         InsufficientDataError)
from .io import atomic_write_text, file_hash, read_csv, write_csv
from .plots import line_svg, scatter_svg
from .ppo import CURVE_COLUMNS, train

logger = logging.getLogger("artrd")

MANIFEST = "manifest.json"


# -- run directory helpers ---------------------------------------------------

def worker_count(n_jobs: int) -> int:
    raw = os.environ.get("ARTRD_THREADS", "")
    if raw.strip():
        try:
            cap = int(raw)
        except ValueError:
            raise ConfigurationError(f"ARTRD_THREADS must be an integer, got {raw!r}") from None
        if cap < 1:
            raise ConfigurationError("ARTRD_THREADS must be >= 1")
    else:
        cap = os.cpu_count() or 1
    return max(1, min(cap, n_jobs))


def map_seeds(fn, seeds):
    """Run ``fn(seed)`` for every seed, in parallel threads; results in seed order."""
    workers = worker_count(len(seeds))
    if workers == 1:
        return [fn(s) for s in seeds]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, seeds))


def resolve_checkpoint(ref, default_dir: Path, stem: str, seed: int) -> Path:
    """Find a checkpoint from a file, a ``{seed}`` template or a directory."""
    if ref is None:
        path = default_dir / f"{stem}-s{seed}.ckpt"
    elif "{seed}" in str(ref):
        path = Path(str(ref).format(seed=seed))
    else:
        path = Path(ref)
        if path.is_dir():
            path = path / f"{stem}-s{seed}.ckpt"
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    return path


def write_curve(path: Path, curve) -> None:
    write_csv(path, CURVE_COLUMNS, ([row[c] for c in CURVE_COLUMNS] for row in curve))


def read_curve(path: Path) -> list:
    return [{"step": int(r["step"]), "episode_return": float(r["episode_return"]),
             "goals_nominal": int(r["goals_nominal"]),
             "goals_adversarial": int(r["goals_adversarial"])} for r in read_csv(path)]


def update_manifest(out: Path, command: str, config: RunConfig, artifacts, started: float):
    """Record the content hash of each artifact under ``command``."""
    path = out / MANIFEST
    manifest = {"tool_version": __version__, "label": config.label, "commands": {}}
    if path.is_file():
        try:
            manifest = json.loads(path.read_text())
        except json.JSONDecodeError:
            logger.warning("replacing unreadable manifest %s", path)
    manifest["label"] = config.label
    manifest["tool_version"] = __version__
    manifest.setdefault("commands", {})[command] = {
        "config_hash": config.hash(),
        "seeds": list(config.seeds),
        "artifacts": {name: file_hash(out / name) for name in sorted(set(artifacts))},
        "duration_s": round(time.time() - started, 3),
    }
    atomic_write_text(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


# -- commands ----------------------------------------------------------------

def cmd_train_nominal(config: RunConfig, out: Path, args) -> list:
    env = config.env

    def one(seed):
        stem = f"nominal-s{seed}"
        saved = []

        def on_checkpoint(step, learner):
            name = f"{stem}-step{step}.ckpt"
            nc.save_checkpoint(out / name, learner.policy, learner.value)
            saved.append(name)

        res = train(lambda i: NavigationEnv(env), config.ppo, seed, on_checkpoint=on_checkpoint)
        nc.save_checkpoint(out / f"{stem}.ckpt", res.policy, res.value)
        write_curve(out / f"{stem}.csv", res.curve)
        logger.info("nominal seed %d: final return %.2f", seed,
                    final_reward(res.curve) if res.curve else float("nan"))
        return [f"{stem}.ckpt", f"{stem}.csv", *saved]

    return [name for names in map_seeds(one, config.seeds) for name in names]


def cmd_train_adversary(config: RunConfig, out: Path, args) -> list:
    attack = config.attack
    variant = attack.variant

    def one(seed):
        nominal = nc.load_checkpoint(resolve_checkpoint(args.nominal, out, "nominal", seed))[0]
        res = train_adversary(attack, config.ppo, seed, nominal_policy=nominal)
        stem = f"adversary-{variant}-s{seed}"
        nc.save_checkpoint(out / f"{stem}.ckpt", res.policy, res.value)
        write_curve(out / f"{stem}.csv", res.curve)
        return [f"{stem}.ckpt", f"{stem}.csv"]

    return [name for names in map_seeds(one, config.seeds) for name in names]


def cmd_defend(config: RunConfig, out: Path, args) -> list:
    scheme = config.defense
    kind = scheme.kind

    def one(seed):
        nominal = adversary = None
        if kind != TANDEM:
            adversary = nc.load_checkpoint(
                resolve_checkpoint(args.adversary, out, f"adversary-{STATE_UNAWARE}", seed))
        if kind == FINETUNE:
            nominal = nc.load_checkpoint(resolve_checkpoint(args.nominal, out, "nominal", seed))
        res = run_scheme(scheme, config.attack, config.ppo, seed, nominal, adversary)
        stem = f"defended-{kind}-s{seed}"
        names = [f"{stem}.ckpt", f"{stem}.csv"]
        extremes = []
        if kind == TANDEM:
            nc.save_checkpoint(out / f"{stem}.ckpt", res.nominal.policy, res.nominal.value)
            write_curve(out / f"{stem}.csv", res.nominal.curve)
            adv_stem = f"defended-{kind}-adversary-s{seed}"
            nc.save_checkpoint(out / f"{adv_stem}.ckpt", res.adversary.policy,
                               res.adversary.value)
            write_curve(out / f"{adv_stem}.csv", res.adversary.curve)
            names += [f"{adv_stem}.ckpt", f"{adv_stem}.csv"]
        else:
            nc.save_checkpoint(out / f"{stem}.ckpt", res.policy, res.value)
            write_curve(out / f"{stem}.csv", res.curve)
            if kind == FINETUNE:
                extremes = res.extreme_rows(seed)
        return names, extremes

    results = map_seeds(one, config.seeds)
    names = [n for r in results for n in r[0]]
    if kind == FINETUNE:
        rows = [row for r in results for row in r[1]]
        name = f"defended-{kind}-extremes.csv"
        write_csv(out / name, ("seed", "phase", "extreme_mean"),
                  ([r["seed"], r["phase"], r["extreme_mean"]] for r in rows))
        names.append(name)
    return names


def _eval_tag(args) -> str:
    if args.tag:
        return args.tag
    if getattr(args, "nominal_stem", None):
        return args.nominal_stem
    if args.nominal and "defended" in str(args.nominal):
        return Path(str(args.nominal)).stem.split("-s{seed}")[0]
    return "nominal"


def cmd_evaluate(config: RunConfig, out: Path, args) -> list:
    ev = config.eval
    attack = config.attack
    tag = _eval_tag(args)
    nominal_stem = args.nominal_stem or "nominal"
    use_attack = not args.no_attack

    def one(seed):
        nominal = nc.load_checkpoint(
            resolve_checkpoint(args.nominal, out, nominal_stem, seed))[0]
        kw = dict(env_config=config.env, attack_config=attack, dgs=ev.dg, seed=seed,
                  episodes=ev.episodes, steps_per_episode=ev.steps_per_episode)
        clean = evaluate_grid(nominal, attack_enabled=False, **kw)
        attacked = {}
        if use_attack:
            adversary = nc.load_checkpoint(
                resolve_checkpoint(args.adversary, out, f"adversary-{attack.variant}", seed))[0]
            attacked = evaluate_grid(nominal, adversary, attack_enabled=True, **kw)
        return clean, attacked

    results = map_seeds(one, config.seeds)
    rows = []
    blocks = {"no attack": {}}
    if use_attack:
        blocks[f"attack ({attack.variant})"] = {}
    for clean, attacked in results:
        for dg in ev.dg:
            for label, reports in (("no attack", clean), (f"attack ({attack.variant})", attacked)):
                if dg in reports:
                    blocks[label].setdefault(dg, []).append(reports[dg])
                    rows.extend(reports[dg].rows())
    csv_name, txt_name = f"eval-{tag}.csv", f"eval-{tag}.txt"
    write_csv(out / csv_name, EvalReport.CSV_COLUMNS, rows)
    table = format_eval_table(blocks)
    atomic_write_text(out / txt_name, table + "\n")
    print(table)
    return [csv_name, txt_name]


def _group_eval_rows(rows):
    """``(seed, d_g, attack) -> EvalReport`` from raw CSV rows."""
    groups = {}
    for r in rows:
        key = (int(r["seed"]), float(r["d_g"]), int(r["attack"]))
        groups.setdefault(key, []).append(r)
    return {k: EvalReport.from_rows(v) for k, v in sorted(groups.items())}


def cmd_analyze(config: RunConfig, out: Path, args) -> list:
    names = []
    tag = args.tag or "nominal"
    variant = config.attack.variant

    # robustness scatter: extreme actions of the clean nominal vs final adversary reward
    eval_path = out / f"eval-{tag}.csv"
    pairs, scatter_rows = [], []
    if eval_path.is_file():
        reports = _group_eval_rows(read_csv(eval_path))
        for seed in config.seeds:
            clean = [rep for (s, _, a), rep in reports.items() if s == seed and a == 0]
            curve_path = out / f"adversary-{variant}-s{seed}.csv"
            if not clean or not curve_path.is_file():
                continue
            curve = read_curve(curve_path)
            if not curve:
                continue
            extreme = float(np.mean([rep.extreme_mean for rep in clean]))
            reward = final_reward(curve)
            pairs.append((extreme, reward))
            scatter_rows.append([seed, extreme, reward])
    if scatter_rows:
        write_csv(out / "robustness.csv", ("seed", "extreme_mean", "final_adv_reward"),
                  scatter_rows)
        data = read_csv(out / "robustness.csv")
        svg = scatter_svg([float(r["extreme_mean"]) for r in data],
                          [float(r["final_adv_reward"]) for r in data],
                          title="Extreme nominal actions vs adversary reward",
                          xlabel="extreme actions per trajectory",
                          ylabel="final adversarial reward",
                          labels=[r["seed"] for r in data])
        atomic_write_text(out / "robustness.svg", svg)
        names += ["robustness.csv", "robustness.svg"]
        try:
            rho = robustness_correlation(pairs)
            text = f"spearman_rho {rho!r}\npairs {len(pairs)}\n"
        except InsufficientDataError as exc:
            text = f"spearman_rho nan\npairs {len(pairs)}\nnote {exc}\n"
        atomic_write_text(out / "robustness.txt", text)
        names.append("robustness.txt")
        print(text, end="")

    # defense tables: undefended eval vs each defended eval present
    if eval_path.is_file():
        pre = _group_eval_rows(read_csv(eval_path))
        for kind in ("tandem", "fixed", "finetune"):
            post_path = out / f"eval-defended-{kind}.csv"
            if not post_path.is_file():
                continue
            post = _group_eval_rows(read_csv(post_path))

            def nest(reports):
                nested = {}
                for (seed, dg, attack), rep in reports.items():
                    mode = "attack" if attack else "clean"
                    nested.setdefault(dg, {"attack": [], "clean": []})[mode].append(rep)
                return nested

            rows = defense_report(nest(pre), nest(post))
            table = format_defense_table(rows)
            atomic_write_text(out / f"defense-{kind}.txt", table + "\n")
            write_csv(out / f"defense-{kind}.csv",
                      ("d_g", "undefended_attack_adv", "defended_attack_adv",
                       "undefended_clean_nom", "defended_clean_nom", "adversarial_reduction",
                       "nominal_retention"),
                      ([r.d_g, r.undefended_attack[0], r.defended_attack[0],
                        r.undefended_clean[2], r.defended_clean[2], r.adversarial_reduction,
                        r.nominal_retention] for r in rows))
            names += [f"defense-{kind}.txt", f"defense-{kind}.csv"]
            print(table)

    # training curves
    curves = sorted(p for p in out.glob("*.csv") if _is_curve(p))
    if curves:
        series = {}
        for p in curves:
            data = read_csv(p)
            series[p.stem] = ([int(r["step"]) for r in data],
                              [float(r["episode_return"]) for r in data])
        atomic_write_text(out / "curves.svg", line_svg(series, title="Training curves"))
        names.append("curves.svg")
    if not names:
        raise InsufficientDataError(f"nothing to analyze in {out}")
    return names


def _is_curve(path: Path) -> bool:
    with open(path) as fh:
        return fh.readline().strip() == ",".join(CURVE_COLUMNS)


COMMANDS = {
    "train-nominal": cmd_train_nominal,
    "train-adversary": cmd_train_adversary,
    "defend": cmd_defend,
    "evaluate": cmd_evaluate,
    "analyze": cmd_analyze,
}


# -- argument parsing ----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="artrd",
        description="Train, attack, defend and evaluate navigation policies.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run config")
    common.add_argument("--seeds", help="seed list, e.g. 0..4 or 1,3,5")
    common.add_argument("--out", help="run directory (default from config)")
    common.add_argument("--env", choices=("point", "car"))
    common.add_argument("--variant", choices=("state-aware", "state-unaware"))
    common.add_argument("--scheme", choices=("tandem", "fixed-adv", "transfer"))
    common.add_argument("--steps", type=int, help="PPO total environment steps")
    common.add_argument("--dg", help="comma-separated goal separations, e.g. 0.5,1.0,1.5")
    common.add_argument("--episodes", type=int, help="evaluation episodes per scenario")
    common.add_argument("--label", help="run label recorded in the manifest")
    common.add_argument("-v", "--verbose", action="store_true")

    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("train-nominal", parents=[common], help="train nominal policies")
    p = sub.add_parser("train-adversary", parents=[common], help="train adversaries")
    p.add_argument("--nominal", help="nominal checkpoint: file, directory or {seed} template")
    p = sub.add_parser("defend", parents=[common], help="run an adversarial-training scheme")
    p.add_argument("--nominal", help="trained nominal checkpoint (transfer scheme)")
    p.add_argument("--adversary", help="frozen state-unaware adversary checkpoint")
    p = sub.add_parser("evaluate", parents=[common], help="d_G-stratified evaluation")
    p.add_argument("--nominal", help="nominal checkpoint: file, directory or {seed} template")
    p.add_argument("--nominal-stem", help="checkpoint stem inside a directory "
                   "(default 'nominal', e.g. 'defended-finetune')")
    p.add_argument("--adversary", help="adversary checkpoint: file, directory or {seed} template")
    p.add_argument("--no-attack", action="store_true", help="only run clean scenarios")
    p.add_argument("--tag", help="output name suffix (eval-<tag>.csv)")
    p = sub.add_parser("analyze", parents=[common], help="robustness scatter and defense tables")
    p.add_argument("run_dir", nargs="?", help="run directory (default --out)")
    p.add_argument("--tag", help="undefended evaluation tag (default 'nominal')")
    return parser


def manifest_key(command, config: RunConfig, args) -> str:
    """Manifest entry name; variants of one command get separate entries."""
    if command == "train-adversary":
        return f"{command}-{config.attack.variant}"
    if command == "defend":
        return f"{command}-{config.defense.kind}"
    if command == "evaluate":
        return f"{command}-{_eval_tag(args)}"
    return command


def config_from_args(args) -> RunConfig:
    config = load_config(args.config) if args.config else RunConfig()
    env, ppo, attack = config.env, config.ppo, config.attack
    defense, ev = config.defense, config.eval
    if args.env:
        env = dataclasses.replace(env, env_kind=args.env)
    if args.steps is not None:
        ppo = dataclasses.replace(ppo, total_steps=args.steps)
    if args.variant:
        attack = dataclasses.replace(attack, variant=normalize_variant(args.variant))
    if args.scheme:
        defense = dataclasses.replace(defense, kind=args.scheme)
    if args.dg:
        try:
            dgs = [float(x) for x in args.dg.split(",") if x.strip()]
        except ValueError:
            raise ConfigurationError(f"cannot parse --dg {args.dg!r}") from None
        ev = dataclasses.replace(ev, dg=dgs)
    if args.episodes is not None:
        ev = dataclasses.replace(ev, episodes=args.episodes)
    changes = dict(env=env, ppo=ppo, attack=attack, defense=defense, eval=ev)
    if args.seeds:
        changes["seeds"] = parse_seeds(args.seeds)
    if getattr(args, "run_dir", None):
        changes["out"] = args.run_dir
    elif args.out:
        changes["out"] = args.out
    if args.label:
        changes["label"] = args.label
    return config.replace(**changes)


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    started = time.time()
    config = config_from_args(args)
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    command = args.command
    artifacts = COMMANDS[command](config, out, args)
    key = manifest_key(command, config, args)
    cfg_name = f"config-{key}.yaml"
    dump_config(config, out / cfg_name)
    update_manifest(out, key, config, [*artifacts, cfg_name], started)
    logger.info("%s wrote %d artifacts to %s", command, len(artifacts) + 1, out)
    return 0


def main(argv=None) -> int:
    try:
        return run(argv)
    except ArtrdError as exc:
        print(f"artrd: {exc.category} error: {exc}", file=sys.stderr)
        return exc.exit_code
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
