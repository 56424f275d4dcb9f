"""Command-line entry point: ``fscx <command> ...``.

Every command writes into its own run directory
(``<out-root>/<timestamp>-<command>-<seed>/`` unless ``--out`` is given),
starting with ``config.snapshot``, a JSON record of the full configuration.
Exit codes: 0 success, 1 runtime error, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, formats, toys
from .alergia import DEFAULT_ALPHA, run_alergia
from .errors import FscxError
from .model import HmPomdp, Pomdp
from .ppo import PpoConfig, Trainer, write_metrics
from .presets import PRESETS, load_preset
from .sim import DEFAULT_LANES, MAX_STEPS, FscPolicy, UniformPolicy, evaluate_empirical, sample_dataset
from .stats import iqm_iqr, paired_sign_test, sign_test
from .verify import robust_value, value_of_fsc

SNAPSHOT = "config.snapshot"


class UsageError(Exception):
    pass


# -- argument parsing ------------------------------------------------------------


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _add_ppo_flags(p: argparse.ArgumentParser):
    g = p.add_argument_group("PPO")
    for f in dataclasses.fields(PpoConfig):
        if f.type in ("bool", bool):
            g.add_argument(_flag(f.name), dest=f"ppo_{f.name}", action=argparse.BooleanOptionalAction, default=None)
        else:
            kind = int if f.type in ("int", int) else float
            g.add_argument(_flag(f.name), dest=f"ppo_{f.name}", type=kind, default=None)


def _ppo_config(args, **defaults) -> PpoConfig:
    kw = dict(defaults)
    for f in dataclasses.fields(PpoConfig):
        v = getattr(args, f"ppo_{f.name}", None)
        if v is not None:
            kw[f.name] = v
    return PpoConfig(**kw)


def _common(p: argparse.ArgumentParser):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="run directory (default: <out-root>/<timestamp>-<command>-<seed>)")
    p.add_argument("--out-root", default="runs")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fscx", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"fscx {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a recurrent policy with PPO")
    p.add_argument("--model", required=True)
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--checkpoint", help="continue from this policy checkpoint")
    _common(p)
    _add_ppo_flags(p)

    p = sub.add_parser("extract", help="sample a dataset from a policy and extract a controller")
    p.add_argument("--model", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--policy", help="policy checkpoint to sample from")
    src.add_argument("--dataset", help="existing trajectory dataset")
    p.add_argument("--method", choices=("alergia", "sig"), default="alergia")
    p.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)
    p.add_argument("--correction", choices=("bonferroni", "none"), default="bonferroni")
    p.add_argument("--max-nodes", type=int, default=3)
    p.add_argument("--sig-epochs", type=int, default=501)
    p.add_argument("--dataset-steps", type=int, default=4001)
    p.add_argument("--dataset-lanes", type=int, default=DEFAULT_LANES)
    _common(p)

    p = sub.add_parser("verify", help="exact value of a controller")
    p.add_argument("--model", required=True)
    p.add_argument("--fsc", required=True)
    p.add_argument("--method", choices=("gauss-seidel", "linear"), default="gauss-seidel")
    p.add_argument("--conditional", action="store_true", help="reward value conditioned on reaching the goal")
    _common(p)

    p = sub.add_parser("eval", help="Monte-Carlo value of a controller or policy")
    p.add_argument("--model", required=True)
    what = p.add_mutually_exclusive_group(required=True)
    what.add_argument("--fsc")
    what.add_argument("--policy")
    p.add_argument("--episodes", type=int, default=512)
    p.add_argument("--max-steps", type=int, default=MAX_STEPS)
    _common(p)

    p = sub.add_parser("robust", help="robust loop over a model family")
    p.add_argument("--family", required=True)
    p.add_argument("--method", choices=("alergia", "sig"), default="sig")
    p.add_argument("--timeout", type=float, default=3600.0)
    p.add_argument("--max-iterations", type=int, help="stop after this many outer iterations")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--ablation-random-selection", action="store_true")
    p.add_argument("--initial-members", type=int)
    p.add_argument("--init-iterations", type=int)
    p.add_argument("--inner-iterations", type=int)
    p.add_argument("--max-nodes", type=int)
    p.add_argument("--sig-epochs", type=int)
    p.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)
    p.add_argument("--dataset-steps", type=int, default=4001)
    p.add_argument("--dataset-lanes", type=int, default=DEFAULT_LANES)
    p.add_argument("--eval-episodes", type=int, default=512)
    _common(p)
    _add_ppo_flags(p)

    p = sub.add_parser("stats", help="IQM/IQR and sign tests over a results CSV")
    p.add_argument("--csv", required=True)
    p.add_argument("--column", required=True)
    p.add_argument("--baseline", type=float, help="sign test of the column against this constant")
    p.add_argument("--paired-column", help="paired sign test: column > paired column")
    _common(p)

    p = sub.add_parser("simulate", help="roll a controller (or uniform play) and save the trajectories")
    p.add_argument("--model", required=True)
    p.add_argument("--fsc", help="controller to run (default: uniform over legal actions)")
    p.add_argument("--lanes", type=int, default=DEFAULT_LANES)
    p.add_argument("--steps", type=int, default=4001)
    p.add_argument("--max-steps", type=int, default=MAX_STEPS)
    _common(p)

    p = sub.add_parser("toys", help="write the bundled toy instances and their certificates")
    p.add_argument("--dir", default=None, help="target directory (default: the run directory)")
    _common(p)
    return parser


# -- helpers ---------------------------------------------------------------------


def _run_dir(args) -> Path:
    if args.out:
        d = Path(args.out)
    else:
        stamp = time.strftime("%Y%m%d-%H%M%S")
        d = Path(args.out_root) / f"{stamp}-{args.command}-{args.seed}"
        k = 1
        while d.exists():
            d = Path(args.out_root) / f"{stamp}-{args.command}-{args.seed}.{k}"
            k += 1
    d.mkdir(parents=True, exist_ok=True)
    return d


def _jsonable(v):
    if dataclasses.is_dataclass(v):
        return {k: _jsonable(x) for k, x in dataclasses.asdict(v).items()}
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if hasattr(v, "value") and not isinstance(v, (int, float, str)):
        return v.value
    return v


def _snapshot(run: Path, args, **resolved):
    cfg = {"fscx_version": __version__, "command": args.command,
           "arguments": {k: v for k, v in vars(args).items() if k not in ("out", "out_root")}}
    cfg.update({k: _jsonable(v) for k, v in resolved.items()})
    (run / SNAPSHOT).write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")


def _summary(run: Path, data: dict):
    (run / "summary.json").write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")


def _load_pomdp(path) -> Pomdp:
    m = formats.parse_model(path)
    if isinstance(m, HmPomdp):
        raise UsageError(f"{path} is a model family; this command needs a single model")
    return m


def _members(model):
    return list(model.members) if isinstance(model, HmPomdp) else [model]


def _threads():
    import torch

    torch.set_num_threads(1)


# -- commands --------------------------------------------------------------------


def cmd_train(args) -> int:
    from .policy import RecurrentPolicy

    model = _load_pomdp(args.model)
    preset = load_preset(args.preset) if args.preset else None
    defaults = {"iterations": preset.single_iterations} if preset else {"iterations": 100}
    cfg = _ppo_config(args, **defaults)
    shaping = preset.shaping if preset else None
    run = _run_dir(args)
    _snapshot(run, args, ppo=cfg, preset=preset.as_dict() if preset else None)
    _threads()
    if args.checkpoint:
        policy = RecurrentPolicy.load(args.checkpoint)
    else:
        policy = RecurrentPolicy(model.num_observations, model.num_actions, seed=args.seed)
    trainer = Trainer(policy, [model], cfg, seed=args.seed, shaping=shaping)
    timing = []

    def tick(row, diag):
        timing.append(((time.monotonic() - t0) * 1000.0))

    t0 = time.monotonic()
    rows = trainer.run(cfg.iterations, tick)
    write_metrics(rows, run / "metrics.csv")
    _write_timing(run / "timing.csv", np.diff([0.0] + timing))
    policy.save(run / "policy.ckpt")
    last = rows[-1] if rows else {}
    _summary(run, {"iterations": cfg.iterations, "last": last})
    print(f"trained {cfg.iterations} iterations; checkpoint {run / 'policy.ckpt'}")
    return 0


def _write_timing(path, values):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("iteration", "wall_ms"))
        for i, ms in enumerate(values, start=1):
            w.writerow((i, f"{ms:.3f}"))


def cmd_extract(args) -> int:
    from .policy import RecurrentPolicy, RnnPolicy
    from .sig import TemperatureSchedule, infer_fsc, prune_unreachable, train_sig

    model = _load_pomdp(args.model)
    run = _run_dir(args)
    _snapshot(run, args)
    _threads()
    if args.policy:
        policy = RecurrentPolicy.load(args.policy)
        data = sample_dataset(RnnPolicy(policy, seed=args.seed, masked=True), model, lanes=args.dataset_lanes,
                              steps=args.dataset_steps, seed=args.seed)
        formats.write_dataset(data, run / "dataset.traj")
    else:
        data = formats.parse_dataset(args.dataset)
    legal = model.legal_by_observation()
    report = None
    if args.method == "alergia":
        fsc = run_alergia(data, args.alpha, legal=legal, correction=args.correction)
    else:
        sched = TemperatureSchedule(total_epochs=args.sig_epochs)
        net, report = train_sig(data, args.max_nodes, args.sig_epochs, sched, args.seed)
        net.save(run / "sig.ckpt")
        fsc = prune_unreachable(infer_fsc(net, legal), model)
    formats.write_fsc(fsc, run / "controller.fsc")
    res = value_of_fsc(model, fsc)
    _summary(run, {"method": args.method, "nodes": fsc.num_nodes, "value": res.value,
                   "sig_report": report, "dataset_steps": data.total_steps})
    print(f"extracted {fsc.num_nodes}-node controller, J = {res.value:.12g}")
    return 0


def cmd_verify(args) -> int:
    model = formats.parse_model(args.model)
    fsc = formats.parse_fsc(args.fsc)
    run = _run_dir(args)
    _snapshot(run, args)
    if isinstance(model, HmPomdp):
        rv = robust_value(model, fsc, method=args.method, conditional=args.conditional)
        _summary(run, {"robust_value": rv.value, "worst_member": rv.worst_index, "member_values": rv.member_values})
        print(f"J_robust = {rv.value:.12g} (worst member {rv.worst_index})")
        return 0
    res = value_of_fsc(model, fsc, method=args.method, conditional=args.conditional)
    _summary(run, {"value": res.value, "residual": res.residual, "iterations": res.iterations,
                   "goal_probability": res.goal_probability, "chain_size": res.chain_size})
    print(f"J = {res.value:.12g}  residual = {res.residual:.3g}  iterations = {res.iterations}")
    return 0


def cmd_eval(args) -> int:
    model = formats.parse_model(args.model)
    run = _run_dir(args)
    _snapshot(run, args)
    if args.fsc:
        policy = FscPolicy(formats.parse_fsc(args.fsc), seed=args.seed)
    else:
        from .policy import RecurrentPolicy, RnnPolicy

        _threads()
        policy = RnnPolicy(RecurrentPolicy.load(args.policy), seed=args.seed, masked=True)
    ev = evaluate_empirical(policy, _members(model), args.episodes, seed=args.seed, max_steps=args.max_steps)
    _summary(run, {"mean": ev.mean, "stderr": ev.stderr, "episodes": ev.episodes, "goal_rate": ev.goal_rate})
    print(f"empirical J = {ev.mean:.6g} +- {ev.stderr:.3g} over {ev.episodes} episodes")
    return 0


def cmd_robust(args) -> int:
    from .robust import LoopConfig, robust_lexpop

    hm = formats.parse_model(args.family)
    if isinstance(hm, Pomdp):
        hm = HmPomdp((hm,))
    preset = load_preset(args.preset) if args.preset else None
    pick = lambda flag, attr, default: flag if flag is not None else (getattr(preset, attr) if preset else default)  # noqa: E731
    run = _run_dir(args)
    cfg = LoopConfig(
        method=args.method,
        initial_members=pick(args.initial_members, "initial_members", 6),
        init_iterations=pick(args.init_iterations, "init_iterations", 200),
        inner_iterations=pick(args.inner_iterations, "inner_iterations", 50),
        timeout=args.timeout,
        max_outer_iterations=args.max_iterations,
        seed=args.seed,
        ppo=_ppo_config(args),
        shaping=preset.shaping if preset else None,
        alpha=args.alpha,
        max_nodes=pick(args.max_nodes, "max_fsc_size", 3),
        sig_epochs=pick(args.sig_epochs, "sig_epochs", 501),
        dataset_steps=args.dataset_steps,
        dataset_lanes=args.dataset_lanes,
        eval_episodes=args.eval_episodes,
        random_selection=args.ablation_random_selection,
        out_dir=str(run),
    )
    _snapshot(run, args, loop=cfg.as_dict(), preset=preset.as_dict() if preset else None)
    _threads()
    res = robust_lexpop(hm, cfg, on_iteration=lambda r: print(
        f"iteration {r['iteration']}: J_robust = {r['J_robust']:.6g}, added member {r['member_added']}"))
    _summary(run, {"J_robust": res.j_robust, "best_iteration": res.best_iteration, "buffer": res.buffer.members,
                   "timed_out": res.timed_out, "iterations": len(res.history)})
    print(f"best J_robust = {res.j_robust:.12g} (iteration {res.best_iteration})")
    return 0


def _column(rows, name, path):
    try:
        return np.array([float(r[name]) for r in rows])
    except KeyError:
        raise UsageError(f"{path} has no column {name!r}") from None


def cmd_stats(args) -> int:
    with open(args.csv, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise UsageError(f"{args.csv} has no data rows")
    run = _run_dir(args)
    _snapshot(run, args)
    x = _column(rows, args.column, args.csv)
    s = iqm_iqr(x)
    out = {"column": args.column, "n": s.n, "iqm": s.iqm, "iqr": s.iqr}
    print(f"{args.column}: IQM {s.iqm:.6g}  IQR {s.iqr:.6g}  n {s.n}")
    tests = []
    if args.baseline is not None:
        tests.append(("baseline", sign_test(x, args.baseline)))
    if args.paired_column:
        tests.append(("paired", paired_sign_test(x, _column(rows, args.paired_column, args.csv))))
    for name, t in tests:
        out[f"sign_test_{name}"] = {"p_value": t.p_value, "above": t.above, "n": t.n}
        p = "undefined (all ties)" if t.p_value is None else f"{t.p_value:.1e}"
        print(f"sign test ({name}): {t.above}/{t.n} above, p = {p}")
    _summary(run, out)
    return 0


def cmd_simulate(args) -> int:
    model = formats.parse_model(args.model)
    members = _members(model)
    run = _run_dir(args)
    _snapshot(run, args)
    if args.fsc:
        policy = FscPolicy(formats.parse_fsc(args.fsc), seed=args.seed)
    else:
        policy = UniformPolicy(members[0].num_actions, seed=args.seed, masked=True)
    data = sample_dataset(policy, members, lanes=args.lanes, steps=args.steps, seed=args.seed,
                          max_steps=args.max_steps)
    formats.write_dataset(data, run / "dataset.traj")
    _summary(run, {"sequences": len(data), "steps": data.total_steps})
    print(f"{len(data)} sequences, {data.total_steps} steps -> {run / 'dataset.traj'}")
    return 0


def cmd_toys(args) -> int:
    run = _run_dir(args)
    _snapshot(run, args)
    target = Path(args.dir) if args.dir else run
    paths = toys.write_toys(str(target))
    for p in paths:
        print(p)
    return 0


COMMANDS = {
    "train": cmd_train, "extract": cmd_extract, "verify": cmd_verify, "eval": cmd_eval, "robust": cmd_robust,
    "stats": cmd_stats, "simulate": cmd_simulate, "toys": cmd_toys,
}


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"fscx: error: {exc}", file=sys.stderr)
        return 2
    except FscxError as exc:
        print(f"fscx: error [{exc.module}]: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError) as exc:
        print(f"fscx: error [{args.command}]: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
