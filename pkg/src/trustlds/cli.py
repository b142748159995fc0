"""Command-line entry point: ``trustlds <command> ...``.

Every command writes a run manifest next to its outputs. ``trustlds replay
MANIFEST`` re-executes the recorded command and reproduces the outputs
bitwise. Exit status: 0 success, 1 input error, 2 model or identifiability
failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .domain import (
    CollectionComplexity,
    ContractError,
    EnvironmentParams,
    LogFormatError,
    Outcome,
    RobotAction,
    TrackingComplexity,
    engagement_events,
    group_by_participant,
    read_log,
    write_log,
)
from .dynamics import (
    EngagementParams,
    LatentRangeWarning,
    LatentState,
    ModelParams,
    TrustParams,
    default_model,
    load_params,
    params_to_doc,
)
from .estimation import (
    ActionFitConfig,
    DegeneracyError,
    EMConfig,
    NumericalFailure,
    PFConfig,
    PFObservation,
    UnidentifiableError,
    em_fit_lds,
    fit_action_model,
    pf_estimate,
    pf_init,
    pf_step,
)
from .policy import KnownContext, MPCConfig, SolverConfig, TrackingRewardMode, policy_map
from .simulation import Policy, SessionConfig, Stream, evaluate_policies, generate_synthetic_logs, run_session, stream

EXIT_OK, EXIT_INPUT, EXIT_MODEL = 0, 1, 2


class ModelFailure(RuntimeError):
    """Fitting finished but the result should not be trusted."""


class _Parser(argparse.ArgumentParser):
    """Usage errors are input errors (exit 1); exit 2 is reserved for model failures."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


# ------------------------------------------------------------ file helpers

def _dump_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _write_csv(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def _model(args) -> ModelParams:
    model = load_params(args.params) if args.params else default_model()
    env = model.env
    overrides = {k: getattr(args, k) for k in ("beta1", "beta2") if getattr(args, k, None) is not None}
    if overrides:
        model = ModelParams(model.trust, model.engagement, model.action, EnvironmentParams(
            p_suc_low=env.p_suc_low, p_suc_high=env.p_suc_high, **{**{"beta1": env.beta1, "beta2": env.beta2}, **overrides}))
    return model


def _mpc_config(args, model: ModelParams) -> MPCConfig:
    return MPCConfig(
        horizon=args.horizon,
        env=model.env,
        tracking_reward_mode=TrackingRewardMode(args.tracking_reward),
        solver=SolverConfig(grid_resolution=args.grid_resolution, restarts=args.restarts),
        action_threshold=args.action_threshold,
        stochastic_action=args.stochastic_action,
    )


def _pf_config(args) -> PFConfig:
    return PFConfig(n_particles=args.particles, trust_mean=args.prior_trust[0], trust_sd=args.prior_trust[1],
                    engagement_mean=args.prior_engagement[0], engagement_sd=args.prior_engagement[1])


# ---------------------------------------------------------------- commands

def cmd_generate_logs(args) -> dict:
    model = _model(args)
    logs = generate_synthetic_logs(args.participants, args.trials, model, args.seed, noise_scale=args.noise_scale,
                                   initial_mean=tuple(args.initial_mean), initial_sd=tuple(args.initial_sd))
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_log([r for log in logs for r in log], out)
    return {"log": str(out)}


def _estimate_env(records, fallback: EnvironmentParams) -> EnvironmentParams:
    """Empirical success rates of relied-on autonomous attempts and complexity mixes."""
    def rate(c):
        outs = [r.outcome for r in records if r.c1 is c and r.outcome is not None]
        return sum(o is Outcome.SUCCESS for o in outs) / len(outs) if outs else None

    ps_l, ps_h = rate(CollectionComplexity.LOW), rate(CollectionComplexity.HIGH)
    n = len(records)
    return EnvironmentParams(
        p_suc_low=fallback.p_suc_low if ps_l is None else ps_l,
        p_suc_high=fallback.p_suc_high if ps_h is None else ps_h,
        beta1=sum(r.c1 is CollectionComplexity.HIGH for r in records) / n,
        beta2=sum(r.c2 is TrackingComplexity.NORMAL for r in records) / n,
    )


def cmd_fit(args) -> dict:
    records = read_log(args.log)
    if not records:
        raise LogFormatError("log contains no trials")
    parts = group_by_participant(records)
    cfg = EMConfig(max_iters=args.max_iters, tol=args.tol, tol_per_observation=True)
    trust_logs = [([r.trust_event for r in recs], [r.trust_report for r in recs]) for recs in parts.values()]
    eng_logs = [(engagement_events(recs), [r.tracking_score for r in recs]) for recs in parts.values()]
    trust_em = em_fit_lds(trust_logs, TrustParams, cfg)
    eng_em = em_fit_lds(eng_logs, EngagementParams, cfg)

    problems = []
    for name, rep in (("trust", trust_em), ("engagement", eng_em)):
        if rep.unidentified:
            problems.append(f"{name}: no data for event columns {rep.unidentified} (held at initial values)")
        if not rep.converged:
            problems.append(f"{name}: EM did not converge in {rep.n_iter} iterations")
    act_cfg = ActionFitConfig(mc_samples=args.mc_samples, restarts=args.restarts, seed=args.seed)
    try:
        act = fit_action_model(parts, trust_em.params, eng_em.params, trust_em.prior, eng_em.prior, act_cfg)
        action = act.params
        for code, sep in act.separated.items():
            if sep:
                problems.append(f"action model {code}: coefficients hit the cap (separated data)")
    except UnidentifiableError as exc:
        problems.append(f"action model row: {exc}")
        act, action = None, default_model().action

    model = ModelParams(trust_em.params, eng_em.params, action, _estimate_env(records, EnvironmentParams()))
    doc = params_to_doc(model)
    doc["fit"] = {
        "trust_prior": [trust_em.prior.mean, trust_em.prior.variance],
        "engagement_prior": [eng_em.prior.mean, eng_em.prior.variance],
        "trust_em_iterations": trust_em.n_iter,
        "engagement_em_iterations": eng_em.n_iter,
        "action_trials": act.n_trials if act else {},
        "problems": problems,
    }
    out = Path(args.output)
    _dump_json(out, doc)
    stem = out.with_suffix("")
    diag = {}
    for name, rep in (("trust", trust_em), ("engagement", eng_em)):
        path = Path(f"{stem}.{name}_em.csv")
        _write_csv(path, ["iter", "loglik"], [(i, float(v)) for i, v in enumerate(rep.loglik)])
        diag[f"{name}_em"] = str(path)
    if problems:
        raise ModelFailure("; ".join(problems))
    return {"params": str(out), **diag}


_SIM_EXTRA = ("T_before", "G_before", "T_after", "G_after", "r_collection", "r_tracking", "q1", "T_est", "G_est")


def _session_config(args, model, policy: Policy) -> SessionConfig:
    return SessionConfig(
        n_trials=args.trials, schedule=args.schedule, policy=policy,
        initial_mean=tuple(args.initial_mean), initial_sd=tuple(args.initial_sd), seed=args.seed,
        session_index=getattr(args, "session", 0), mpc=_mpc_config(args, model), pf=_pf_config(args),
        participant_id=getattr(args, "participant", "sim"),
    )


def cmd_simulate(args) -> dict:
    model = _model(args)
    res = run_session(_session_config(args, model, Policy(args.policy)), model, noise_scale=args.noise_scale)
    extra = []
    for t in res.trials:
        extra.append({
            "T_before": t.state.trust, "G_before": t.state.engagement,
            "T_after": t.next_state.trust, "G_after": t.next_state.engagement,
            "r_collection": float(t.collection_reward), "r_tracking": float(t.tracking_reward),
            "q1": t.q1, "T_est": None if t.estimate is None else t.estimate.trust,
            "G_est": None if t.estimate is None else t.estimate.engagement,
        })
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_log(res.records, out, extra=extra)
    summary = Path(args.summary) if args.summary else out.with_suffix(".summary.json")
    _dump_json(summary, res.summary())
    return {"trials": str(out), "summary": str(summary)}


def cmd_evaluate(args) -> dict:
    model = _model(args)
    cfg_a = _session_config(args, model, Policy(args.policy_a))
    cfg_b = _session_config(args, model, Policy(args.policy_b))
    rep = evaluate_policies(cfg_a, cfg_b, args.sessions, model, args.seed, threads=args.threads,
                            n_bootstrap=args.bootstrap, common_random_numbers=args.common_random_numbers)
    out = Path(args.output)
    _dump_json(out, rep.to_doc())
    per = Path(args.sessions_csv) if args.sessions_csv else out.with_suffix(".sessions.csv")
    rows = []
    for name in rep.policies:
        for k, s in enumerate(rep.sessions[name]):
            rows.append((name, k, float(s["total"]), float(s["collection"]), float(s["tracking"]),
                         s["interruptions"], s["assists"]))
    _write_csv(per, ["policy", "session", "total", "collection", "tracking", "interruptions", "assists"], rows)
    return {"report": str(out), "sessions": str(per)}


def _parse_levels(text: str, enum_cls):
    return [enum_cls.parse(x) for x in text.split(",") if x.strip()]


def _grid(lo: float, hi: float, n: int, name: str):
    if n < 1 or not (math.isfinite(lo) and math.isfinite(hi)) or hi < lo or (n == 1 and hi != lo):
        raise ContractError(f"bad {name} grid: [{lo}, {hi}] with {n} points")
    return np.linspace(lo, hi, n) if n > 1 else np.array([lo])


def cmd_policy_map(args) -> dict:
    model = _model(args)
    ts = _grid(args.t_min, args.t_max, args.t_points, "trust")
    gs = _grid(args.g_min, args.g_max, args.g_points, "engagement")
    contexts = [KnownContext(c1, c2, e)
                for c1 in _parse_levels(args.c1, CollectionComplexity)
                for c2 in _parse_levels(args.c2, TrackingComplexity)
                for e in _parse_levels(args.prev_experience, Outcome)]
    rows = policy_map(ts, gs, contexts, _mpc_config(args, model), model, threads=args.threads)
    out = Path(args.output)
    _write_csv(out, ["T", "G", "c1", "c2", "prev_experience", "q1", "action"],
               [(r.t, r.g, r.known.c1.code, r.known.c2.code, r.known.prev_experience.code, r.q1,
                 "collect" if r.action is RobotAction.ATTEMPT_AUTONOMOUS else "assist") for r in rows])
    return {"map": str(out)}


def _read_truth(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    try:
        return [LatentState(float(r["T_after"]), float(r["G_after"])) for r in rows]
    except (KeyError, ValueError) as exc:
        raise LogFormatError(f"simulation CSV lacks ground-truth columns: {exc}") from exc


def cmd_filter_demo(args) -> dict:
    model = _model(args)
    records = read_log(args.session_csv)
    truth = _read_truth(args.session_csv)
    pf_cfg = _pf_config(args)
    rng = stream(args.seed, 0, Stream.FILTER)
    belief = pf_init(pf_cfg, rng)
    prev = Outcome.SUCCESS
    rows = []
    for rec, true_state in zip(records, truth):
        obs = PFObservation(rec.c1, rec.human_action, rec.tracking_score,
                            rec.trust_report if args.use_trust_reports else None)
        belief = pf_step(belief, model, rec.trust_event, engagement_events([rec], prev)[0], obs, rng,
                         pf_cfg.resample_fraction)
        est = pf_estimate(belief)
        rows.append((rec.trial_index, est.trust, est.engagement, true_state.trust, true_state.engagement,
                     float(belief.ess)))
        prev = rec.experience
    out = Path(args.output)
    _write_csv(out, ["trial", "T_est", "G_est", "T_true", "G_true", "ess"], rows)
    return {"estimates": str(out)}


COMMANDS = {
    "generate-logs": cmd_generate_logs,
    "fit": cmd_fit,
    "simulate": cmd_simulate,
    "evaluate": cmd_evaluate,
    "policy-map": cmd_policy_map,
    "filter-demo": cmd_filter_demo,
}


# ------------------------------------------------------------------ parser

def _add_model_flags(p, env=True):
    p.add_argument("--params", help="parameter JSON document (default: packaged values)")
    if env:
        p.add_argument("--beta1", type=float, help="probability of a High-complexity collection trial")
        p.add_argument("--beta2", type=float, help="probability of a normal-speed tracking trial")


def _add_mpc_flags(p):
    p.add_argument("--horizon", type=int, default=5, help="look-ahead horizon N")
    p.add_argument("--tracking-reward", choices=[m.value for m in TrackingRewardMode], default="smooth")
    p.add_argument("--grid-resolution", type=int, default=3, help="levels per axis of solver seed grid")
    p.add_argument("--restarts", type=int, default=8, help="projected-gradient restarts")
    p.add_argument("--action-threshold", type=float, default=0.5)
    p.add_argument("--stochastic-action", action="store_true", help="sample the action from q1")


def _add_pf_flags(p):
    p.add_argument("--particles", type=int, default=2000)
    p.add_argument("--prior-trust", type=float, nargs=2, default=[7.0, 1.0], metavar=("MEAN", "SD"))
    p.add_argument("--prior-engagement", type=float, nargs=2, default=[7.0, 1.0], metavar=("MEAN", "SD"))


def _add_session_flags(p):
    p.add_argument("--trials", type=int, default=30)
    p.add_argument("--schedule", choices=["balanced", "iid"], default="balanced")
    p.add_argument("--initial-mean", type=float, nargs=2, default=[7.0, 7.0], metavar=("T", "G"))
    p.add_argument("--initial-sd", type=float, nargs=2, default=[0.5, 0.5], metavar=("T", "G"))


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="trustlds", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"trustlds {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-logs", help="simulate the data-collection study (random assistance policy)")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--participants", type=int, default=11)
    p.add_argument("--trials", type=int, default=60)
    p.add_argument("--noise-scale", type=float, default=1.0)
    p.add_argument("--initial-mean", type=float, nargs=2, default=[7.0, 7.0], metavar=("T", "G"))
    p.add_argument("--initial-sd", type=float, nargs=2, default=[0.5, 0.5], metavar=("T", "G"))
    p.add_argument("--output", required=True)
    _add_model_flags(p, env=False)

    p = sub.add_parser("fit", help="fit both LDSs by EM and the reliance model by Monte-Carlo MLE")
    p.add_argument("log", help="trial-log CSV")
    p.add_argument("--output", required=True, help="fitted parameter JSON; EM traces go next to it")
    p.add_argument("--seed", type=int, required=True, help="seed for the posterior draws")
    p.add_argument("--max-iters", type=int, default=1000)
    p.add_argument("--tol", type=float, default=1e-6, help="stop when the log-likelihood gain per observation drops below this")
    p.add_argument("--mc-samples", type=int, default=50)
    p.add_argument("--restarts", type=int, default=10)

    p = sub.add_parser("simulate", help="run one closed-loop session")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--policy", choices=[x.value for x in Policy], default="mpc")
    p.add_argument("--session", type=int, default=0, help="session index under the master seed")
    p.add_argument("--participant", default="sim")
    p.add_argument("--noise-scale", type=float, default=1.0)
    p.add_argument("--output", required=True, help="per-trial CSV")
    p.add_argument("--summary", help="summary JSON (default: next to the CSV)")
    _add_session_flags(p)
    _add_model_flags(p)
    _add_mpc_flags(p)
    _add_pf_flags(p)

    p = sub.add_parser("evaluate", help="compare two policies over paired sessions")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--sessions", type=int, default=100)
    p.add_argument("--policy-a", choices=[x.value for x in Policy], default="mpc")
    p.add_argument("--policy-b", choices=[x.value for x in Policy], default="greedy")
    p.add_argument("--bootstrap", type=int, default=10_000, help="bootstrap resamples")
    p.add_argument("--common-random-numbers", action="store_true",
                   help="share the synthetic human's noise between the two policies")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--output", required=True, help="report JSON")
    p.add_argument("--sessions-csv", help="per-session CSV (default: next to the report)")
    _add_session_flags(p)
    _add_model_flags(p)
    _add_mpc_flags(p)
    _add_pf_flags(p)

    p = sub.add_parser("policy-map", help="tabulate the MPC action over a (T, G) grid")
    p.add_argument("--t-min", type=float, default=0.0)
    p.add_argument("--t-max", type=float, default=10.0)
    p.add_argument("--t-points", type=int, default=21)
    p.add_argument("--g-min", type=float, default=0.0)
    p.add_argument("--g-max", type=float, default=10.0)
    p.add_argument("--g-points", type=int, default=21)
    p.add_argument("--c1", default="L,H")
    p.add_argument("--c2", default="slow,norm")
    p.add_argument("--prev-experience", default="succ,fail")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--output", required=True)
    _add_model_flags(p)
    _add_mpc_flags(p)

    p = sub.add_parser("filter-demo", help="run the particle filter over a simulated session CSV")
    p.add_argument("session_csv", help="CSV written by `simulate`")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--use-trust-reports", action="store_true")
    p.add_argument("--output", required=True)
    _add_model_flags(p, env=False)
    _add_pf_flags(p)

    p = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    p.add_argument("manifest")
    p.add_argument("--threads", type=int, help="override the worker count for evaluate and policy-map (outputs do not depend on it)")
    return ap


# ---------------------------------------------------------------- manifest

_EXECUTION_ONLY = {"threads"}


def _manifest_path(artifacts: dict) -> Path:
    first = Path(next(iter(artifacts.values())))
    return first.with_name(first.name + ".manifest.json")


def _write_manifest(args, argv, artifacts) -> Path:
    config = {k: v for k, v in sorted(vars(args).items()) if k not in _EXECUTION_ONLY and k != "command"}
    doc = {
        "command": args.command,
        "argv": [a for a in argv],
        "config": config,
        "seed": config.get("seed"),
        "artifacts": artifacts,
        "version": __version__,
    }
    path = _manifest_path(artifacts)
    _dump_json(path, doc)
    return path


def _strip_threads(argv):
    out, skip = [], False
    for a in argv:
        if skip:
            skip = False
            continue
        if a == "--threads":
            skip = True
            continue
        if a.startswith("--threads="):
            continue
        out.append(a)
    return out


THREADED_COMMANDS = ("evaluate", "policy-map")


def _replay_argv(args) -> list:
    try:
        doc = json.loads(Path(args.manifest).read_text())
        argv = list(doc["argv"])
    except (OSError, ValueError, KeyError) as exc:
        raise ContractError(f"unreadable manifest {args.manifest}: {exc}") from exc
    if doc.get("version") != __version__:
        warnings.warn(f"manifest written by version {doc.get('version')}, running {__version__}")
    if args.threads is not None and doc.get("command") in THREADED_COMMANDS:
        argv += ["--threads", str(args.threads)]
    return argv


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "replay":
        try:
            argv = _replay_argv(args)
        except ContractError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_INPUT
        args = parser.parse_args(argv)
    for name in ("threads", "particles", "sessions", "trials", "participants", "bootstrap", "mc_samples"):
        if getattr(args, name, 1) is not None and getattr(args, name, 1) < 1:
            print(f"error: --{name.replace('_', '-')} must be positive", file=sys.stderr)
            return EXIT_INPUT
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", LatentRangeWarning)
            artifacts = COMMANDS[args.command](args)
    except LogFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ModelFailure as exc:
        print(f"model failure: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except (UnidentifiableError, NumericalFailure, DegeneracyError) as exc:
        print(f"model failure: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except (ContractError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    _write_manifest(args, _strip_threads(argv), artifacts)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
