"""Command-line front end.

Exit codes: 0 success, 1 invalid input or parameters, 2 numerical
non-convergence, 3 file-system or file-format errors, 4 command-line usage.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import io
from .avgcost import (average_cost_exact, robustness_bound, robustness_gap, vanishing_discount)
from .beliefmdp import build_quantized_mdp, quantizer_for, value_iteration
from .errors import NumericalError, ParamOutOfRange, ValidationError
from .filtering import constant_policy, dual_filter_run, fit_exponential, random_policy, simulate, uniform
from .metrics import assumption_report
from .model import ContinuousSpec1D, builtin, discretize
from .qlearn import (Quantized, Window, exploration_stationary, greedy_policy, induced_mdp,
                     q_learning, q_star, window_loss, window_mdp, window_policy_average_cost)

OUT_ENV = "ACPOMDP_OUT"
EXIT_OK, EXIT_INVALID, EXIT_NUMERIC, EXIT_IO, EXIT_USAGE = 0, 1, 2, 3, 4

log = logging.getLogger("acpomdp")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _parse_value(text: str):
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    if text.lower() in ("true", "false"):
        return text.lower() == "true"
    return text


def _parse_params(items):
    out = {}
    for item in items or []:
        if "=" not in item:
            raise UsageError(f"--param expects k=v, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = _parse_value(v.strip())
    return out


def _vector(text: str, n: int, what: str):
    if text is None:
        return uniform(n)
    try:
        z = np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise UsageError(f"{what} must be a comma-separated list of numbers") from None
    if z.shape != (n,):
        raise ParamOutOfRange(f"{what} needs {n} entries, got {len(z)}")
    return z


def load(args):
    if args.model:
        return io.load_model(args.model)
    if not args.builtin:
        raise UsageError("give --model PATH or --builtin NAME")
    params = _parse_params(args.param)
    try:
        spec = builtin(args.builtin, **params)
    except TypeError:
        raise ParamOutOfRange(f"unknown parameter among {sorted(params)} for {args.builtin}") from None
    if isinstance(spec, ContinuousSpec1D):
        return discretize(spec, args.grid)
    return spec


def _out(args) -> Path:
    out = Path(args.out or os.environ.get(OUT_ENV, "acpomdp-out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _emit(args, name: str, doc: dict):
    path = io.write_report(_out(args) / f"{name}.json", doc)
    print(json.dumps(io._plain(doc), sort_keys=True) if args.format == "report" else str(path))


def _csv(args) -> bool:
    return args.format == "csv"


# ---------------------------------------------------------------------------
# Subcommands


def cmd_check(args, model):
    rep = assumption_report(model)
    _emit(args, "assumptions", rep.to_dict())


def cmd_solve(args, model):
    q = quantizer_for(model, args.resolution)
    rep = assumption_report(model)
    sol = vanishing_discount(model, q, args.beta_schedule, tol=args.tol, k2=rep.k2)
    c_inf = float(np.abs(model.cost).max())
    doc = sol.to_dict()
    doc.update(resolution=args.resolution, n_representatives=q.size, l_bar=q.l_bar,
               residual_relative=sol.residual / c_inf if c_inf else 0.0,
               greedy_average_cost=average_cost_exact(sol.mdp, sol.policy))
    if _csv(args):
        out = _out(args)
        io.write_beta_trace(out / "beta_trace.csv", sol.beta_trace)
        S = model.n_states
        io.write_csv(out / "relative_value.csv", ["rep"] + [f"z{i}" for i in range(S)] + ["h", "action"],
                     [[k] + [float(v) for v in q.representatives[k]] + [float(sol.h[k]), int(sol.policy[k])]
                      for k in range(q.size)])
    _emit(args, "solution", doc)


def cmd_qlearn(args, model):
    c_inf = float(np.abs(model.cost).max())
    if args.variant == "quantized":
        q = quantizer_for(model, args.resolution)
        mdp = build_quantized_mdp(model, q)
        table = q_learning(model, Quantized(q), args.beta, args.steps, args.seed)
        reference = q_star(induced_mdp(table, mdp.cost), args.beta)
        actions, unvisited = greedy_policy(table)
        avg = average_cost_exact(mdp, actions)
        labels = q.representatives.tolist()
    else:
        anchor = exploration_stationary(model)
        wm = window_mdp(model, args.window, anchor)
        table = q_learning(model, Window(args.window, anchor), args.beta, args.steps, args.seed)
        reference = q_star(wm, args.beta)
        actions, unvisited = greedy_policy(table)
        avg = window_policy_average_cost(model, args.window, actions)
        labels = [{"observations": list(w.observations), "actions": list(w.actions)} for w in wm.windows]
    v = table.visited
    diff = float(np.abs(table.values - reference)[v].max()) if v.any() else 0.0
    doc = {"variant": table.state_kind, "beta": args.beta, "steps": args.steps, "seed": args.seed,
           "max_abs_diff_visited": diff, "tolerance": 0.05 * c_inf / (1.0 - args.beta),
           "visited_pairs": int(v.sum()), "unvisited_pairs": int((~v).sum()),
           "unvisited_states": np.flatnonzero(unvisited).tolist(),
           "greedy_actions": actions.tolist(), "greedy_average_cost": avg}
    if _csv(args):
        io.write_qtable(_out(args) / "qtable.csv", table, labels)
    _emit(args, "qlearn", doc)


def _policy(args, model):
    spec = args.policy
    if spec == "random":
        return random_policy(np.full(model.n_actions, 1.0 / model.n_actions))
    if spec.startswith("constant:"):
        u = int(spec.split(":", 1)[1])
        if not 0 <= u < model.n_actions:
            raise ParamOutOfRange(f"action {u} out of range")
        return constant_policy(u)
    raise UsageError(f"unknown policy {spec!r}")


def cmd_simulate(args, model):
    prior = _vector(args.mu, model.n_states, "--mu")
    traj = simulate(model, _policy(args, model), prior, args.horizon, args.seed)
    if _csv(args):
        io.write_trajectory(_out(args) / "trajectory.csv", traj)
    _emit(args, "simulation", {"horizon": args.horizon, "seed": args.seed,
                               "average_cost": traj.average_cost()})


def cmd_robustness(args, model):
    mu = _vector(args.mu, model.n_states, "--mu")
    nu = _vector(args.nu, model.n_states, "--nu")
    q = quantizer_for(model, args.resolution)
    mode = "discounted" if args.beta is not None else "average"
    res = robustness_gap(model, mu, nu, q, mode=mode, beta=args.beta, horizon=args.horizon,
                         n_runs=args.runs, seed=args.seed, beta_schedule=args.beta_schedule,
                         tol=args.tol)
    doc = {"mode": mode, "gap": res.gap, "stderr": res.stderr, "estimate": res.estimate,
           "reference": res.reference, "per_run": res.per_run.tolist()}
    if mode == "discounted":
        rep = assumption_report(model)
        c_inf = float(np.abs(model.cost).max())
        try:
            value, n = robustness_bound(c_inf, args.beta, rep.k1, rep.k2, rep.diameter, rep.alpha_bar)
            doc["bound"] = {"value": value, "n": n}
        except ValidationError as exc:
            doc["bound"] = {"value": None, "reason": str(exc)}
    _emit(args, "robustness", doc)


def cmd_stability(args, model):
    mu = _vector(args.mu, model.n_states, "--mu")
    nu = _vector(args.nu, model.n_states, "--nu")
    tv = dual_filter_run(model, mu, nu, _policy(args, model), args.horizon, args.seed, args.runs)
    C, r = fit_exponential(tv)
    rep = assumption_report(model)
    if _csv(args):
        io.write_tv(_out(args) / "tv.csv", tv)
    _emit(args, "stability", {"fit_constant": C, "fit_rate": r, "alpha_bar": rep.alpha_bar,
                              "runs": args.runs, "horizon": args.horizon})


def cmd_window(args, model):
    anchor = _vector(args.mu, model.n_states, "--mu") if args.mu else exploration_stationary(model)
    wm = window_mdp(model, args.window, anchor)
    beta = 0.9 if args.beta is None else args.beta
    res = value_iteration(wm, beta, tol=args.tol)
    loss = window_loss(model, args.window, anchor, t_max=args.t_max, n_samples=args.runs,
                       seed=args.seed, extra_policies=[res.policy])
    doc = {"window": args.window, "beta": beta, "anchor": anchor.tolist(),
           "n_windows": wm.n_states, "infeasible_windows": int((~wm.feasible).sum()),
           "policy": res.policy.tolist(),
           "policy_average_cost": window_policy_average_cost(model, args.window, res.policy),
           "loss": loss.values.tolist(), "loss_caveat": loss.caveat}
    if _csv(args):
        out = _out(args)
        io.write_csv(out / "window_values.csv", ["window", "observations", "actions", "value", "action"],
                     [(k, " ".join(map(str, w.observations)), " ".join(map(str, w.actions)),
                       float(res.values[k]), int(res.policy[k])) for k, w in enumerate(wm.windows)])
        io.write_csv(out / "window_loss.csv", ["t", "loss"], list(enumerate(loss.values.tolist())))
    _emit(args, "window", doc)


COMMANDS = {"check": cmd_check, "solve": cmd_solve, "qlearn": cmd_qlearn, "simulate": cmd_simulate,
            "robustness": cmd_robustness, "stability": cmd_stability, "window": cmd_window}


def _betas(text):
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("beta schedule must be comma-separated numbers") from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="acpomdp", description="Average-cost POMDP toolkit.")
    p.add_argument("command", choices=sorted(COMMANDS))
    src = p.add_mutually_exclusive_group()
    src.add_argument("--model", help="JSON model file")
    src.add_argument("--builtin", help="ex1, ex2 or ex3")
    p.add_argument("--param", action="append", metavar="K=V", help="builtin parameter (repeatable)")
    p.add_argument("--grid", type=int, default=20, help="grid size for ex2/ex3")
    p.add_argument("--beta", type=float)
    p.add_argument("--beta-schedule", type=_betas, default=(0.9, 0.99, 0.999))
    p.add_argument("--resolution", type=int, default=20, help="lattice denominator M")
    p.add_argument("--window", type=int, default=1, help="window length N")
    p.add_argument("--variant", choices=("quantized", "window"), default="quantized")
    p.add_argument("--horizon", type=int, default=1000)
    p.add_argument("--steps", type=int, default=100_000)
    p.add_argument("--runs", type=int, default=20)
    p.add_argument("--t-max", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--mu", help="true prior, comma separated (default uniform)")
    p.add_argument("--nu", help="controller prior, comma separated (default uniform)")
    p.add_argument("--policy", default="random", help="random or constant:U")
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./acpomdp-out)")
    p.add_argument("--format", choices=("csv", "report"), default="csv")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "qlearn" and args.beta is None:
        args.beta = 0.9
    try:
        model = load(args)
        COMMANDS[args.command](args, model)
    except UsageError as exc:
        print(f"acpomdp {args.command}: usage: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValidationError as exc:
        print(f"acpomdp {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NumericalError as exc:
        print(f"acpomdp {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, json.JSONDecodeError) as exc:
        print(f"acpomdp {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
