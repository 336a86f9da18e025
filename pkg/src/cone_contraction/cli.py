"""Command line front end: ``cone-contraction <command> ...``.

Every command reads JSON inputs, validates them against the shipped
schemas and prints a JSON run report. Exit codes: 0 success, 2 input or
schema error, 3 hypothesis failure, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from importlib import resources

import jsonschema
import numpy as np

from . import __version__
from .cone import as_spd, thompson_distance
from .discrete import DiscreteParams, empirical_lipschitz, lipschitz_report
from .errors import (ConvergenceError, HypothesisError, InfeasibleError, IntegrationError)
from .flow import ExitReason, IntegrationConfig, integrate
from .gare import gare_convergence_bound, solve_gare, solve_std_are
from .gauge import GaugeFunction, SamplingPlan, audit_nonexpansiveness, build_counterexample, finsler_distance
from .io import dumps, matrix_to_json, sym_from_json, trajectory_to_csv, trajectory_to_json, write_atomic
from .rates import (OrderIntervalSampler, OrthantField, general_rate_estimate, grde_local_rate,
                    indefinite_sigma_analysis, orthant_box_samples, orthant_rate, std_beta_rate,
                    std_global_rate)
from .riccati import GrdeField, GrdeParams, StdRiccatiField, StdRiccatiParams

EXIT_OK, EXIT_INPUT, EXIT_HYPOTHESIS, EXIT_NUMERICAL = 0, 2, 3, 4
DEFAULT_SEED = 0


class InputError(Exception):
    """Bad command line or file contents (exit code 2)."""


def load_schema(name: str) -> dict:
    text = resources.files("cone_contraction").joinpath("schemas", name).read_text()
    return json.loads(text)


def validate(instance, schema_name: str) -> None:
    try:
        jsonschema.validate(instance, load_schema(schema_name))
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise InputError(f"{schema_name}: {path}: {exc.message}") from None


class Inputs:
    """Collects the bytes of every input so the report can carry a digest."""

    def __init__(self, command: str):
        self.hash = hashlib.sha256(command.encode())

    def read_json(self, role: str, path: str):
        try:
            with open(path, "rb") as fh:
                raw = fh.read()
        except OSError as exc:
            raise InputError(f"cannot read {path}: {exc.strerror}") from None
        self.hash.update(f"\0{role}\0".encode())
        self.hash.update(raw)
        try:
            return json.loads(raw)
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: invalid JSON ({exc})") from None

    def add(self, role: str, value) -> None:
        self.hash.update(f"\0{role}\0".encode())
        self.hash.update(json.dumps(value, sort_keys=True).encode())

    def digest(self) -> str:
        return self.hash.hexdigest()


def read_problem(inputs: Inputs, path: str) -> dict:
    obj = inputs.read_json("problem", path)
    validate(obj, "problem.schema.json")
    obj.setdefault("options", {})
    return obj


def read_spd(inputs: Inputs, role: str, path: str) -> np.ndarray:
    obj = inputs.read_json(role, path)
    if isinstance(obj, dict) and set(obj) - {"dim", "rows"}:
        raise InputError(f"{path}: unknown fields {sorted(set(obj) - {'dim', 'rows'})}")
    return as_spd(sym_from_json(obj))


def grde_params(problem: dict) -> GrdeParams:
    if problem["kind"] == "counterexample":
        p = problem["params"]
        return build_counterexample(p["n"], p["epsilon"], p.get("e"))
    return GrdeParams.from_json(problem["params"])


def problem_field(problem: dict):
    kind = problem["kind"]
    if kind in ("grde", "counterexample"):
        return GrdeField(grde_params(problem))
    if kind == "stdRiccati":
        return StdRiccatiField(StdRiccatiParams.from_json(problem["params"]))
    raise InputError(f"problem kind {kind!r} does not define a matrix flow")


def integration_config(args, options: dict) -> IntegrationConfig:
    rel = options.get("relTol", args.tol if args.tol is not None else 1e-8)
    return IntegrationConfig(rel_tol=rel, abs_tol=options.get("absTol", 1e-10),
                             record_every=getattr(args, "record_every", None),
                             refine_exit=getattr(args, "refine_exit", False))


# -- commands -----------------------------------------------------------------------

def cmd_metric(args, inputs: Inputs):
    a = read_spd(inputs, "A", args.file_a)
    b = read_spd(inputs, "B", args.file_b)
    if a.shape != b.shape:
        raise InputError(f"dimension mismatch: {a.shape} vs {b.shape}")
    out = {"dT": thompson_distance(a, b), "dim": a.shape[0]}
    if args.gauge is not None:
        inputs.add("gauge", args.gauge)
        nu = GaugeFunction.parse(args.gauge)
        out["gauge"] = nu.to_json()
        out["dNu"] = finsler_distance(nu, a, b)
    return out, None


def cmd_integrate(args, inputs: Inputs):
    problem = read_problem(inputs, args.problem)
    field = problem_field(problem)
    if args.p0 is not None:
        P0 = read_spd(inputs, "P0", args.p0)
    elif "P0" in problem["options"]:
        P0 = as_spd(sym_from_json(problem["options"]["P0"]))
    else:
        raise InputError("a start point is needed: --from FILE or options.P0")
    inputs.add("times", [args.t0, args.t1, args.record_every, args.refine_exit, args.tol])
    if P0.shape != (field.dim, field.dim):
        raise InputError(f"start point has shape {P0.shape}, problem has dim {field.dim}")
    if not field.feasible(args.t0, P0):
        raise InfeasibleError("start point is outside the feasible domain")
    traj = integrate(field, P0, args.t0, args.t1, integration_config(args, problem["options"]))
    out = {
        "exitReason": traj.exit_reason.value,
        "exitTime": traj.exit_time,
        "finalTime": traj.final_time,
        "finalState": matrix_to_json(traj.final),
        "recorded": len(traj.times),
        "stats": traj.stats,
    }
    side = None
    if args.out is not None:
        text = trajectory_to_csv(traj) if args.format == "csv" else dumps(trajectory_to_json(traj))
        side = (args.out, text)
        out["trajectoryFile"] = args.out
    else:
        out["trajectory"] = trajectory_to_json(traj)
    code = EXIT_OK if traj.exit_reason is ExitReason.HORIZON_REACHED else EXIT_NUMERICAL
    return out, side, code


def _sampler(problem: dict, inputs: Inputs, args, n: int):
    options = problem["options"]
    if args.domain is not None:
        dom = inputs.read_json("domain", args.domain)
    else:
        dom = options.get("domain")
    if dom is None:
        hi, lo = np.eye(n), None
    elif isinstance(dom, dict) and "hi" in dom:
        hi = sym_from_json(dom["hi"])
        lo = sym_from_json(dom["lo"]) if "lo" in dom else None
    else:
        hi, lo = sym_from_json(dom), None
    count = args.samples if args.samples is not None else options.get("samples", 200)
    return OrderIntervalSampler(hi, lo, count=count, seed=args.seed), hi


def cmd_rate(args, inputs: Inputs):
    problem = read_problem(inputs, args.problem)
    inputs.add("rate", [args.method, args.samples, args.seed])
    kind = problem["kind"]
    options = problem["options"]
    if kind == "orthant":
        return _orthant(problem, args, inputs)
    if kind == "discrete":
        raise InputError("use the 'discrete' command for discrete problems")
    attempted = []
    extra = {}
    cert = None
    if args.method in ("auto", "closed"):
        if kind == "stdRiccati":
            p = StdRiccatiParams.from_json(problem["params"])
            try:
                cert = std_global_rate(p.Sigma, p.Dmat)
                attempted.append({"method": "stdGlobalClosedForm", "applicable": True})
            except HypothesisError as exc:
                attempted.append({"method": "stdGlobalClosedForm", "applicable": False, "failed": exc.failed})
            if cert is None and "bounds" in options:
                b = options["bounds"]
                try:
                    res = indefinite_sigma_analysis(b["cA"], b["cD"], b["mD"], b["cSigma"])
                except ValueError as exc:
                    raise InputError(str(exc)) from None
                extra["indefiniteAnalysis"] = res.to_json()
                attempted.append({"method": "indefiniteSigmaBox", "applicable": res.ok,
                                  "failed": list(res.failed)})
                if res.ok:
                    cert = res.certificate(options.get("lambda"))
        else:
            params = grde_params(problem)
            P0 = sym_from_json(options["P0"]) if "P0" in options else None
            failed = []
            if P0 is None:
                failed.append("options.P0 given")
            if not params.strict():
                failed.append("[[Q, L'], [L, R]] >> 0")
            if not failed:
                cert = grde_local_rate(params, P0)
            attempted.append({"method": "grdeLocalClosedForm", "applicable": not failed, "failed": failed})
    if cert is None and args.method == "closed":
        failed = [f for a in attempted for f in a.get("failed", [])]
        raise HypothesisError("no closed-form rate applies: " + "; ".join(failed), failed=failed)
    if cert is None:
        field = problem_field(problem)
        sampler, _ = _sampler(problem, inputs, args, field.dim)
        times = options.get("times", [0.0])
        if kind == "stdRiccati" and args.method == "beta":
            p = field.params
            cert = std_beta_rate(p.Sigma, p.Dmat, sampler)
        else:
            cert = general_rate_estimate(field, sampler, times)
        attempted.append({"method": cert.method.value, "applicable": True})
    return {"certificate": cert.to_json(), "attempted": attempted, **extra}, None


def _orthant(problem: dict, args, inputs: Inputs):
    if problem["kind"] != "orthant":
        raise InputError("orthant-rate needs a problem of kind 'orthant'")
    p = problem["params"]
    options = problem["options"]
    field = OrthantField.quadratic(p["c"], p["A"], p["quad"])
    box = options.get("box", [1.0] * field.dim)
    if len(box) != field.dim or min(box) <= 0:
        raise InputError("options.box must be a positive vector of the problem dimension")
    count = args.samples if args.samples is not None else options.get("samples", 1000)
    samples = orthant_box_samples(box, count, seed=args.seed)
    cert = orthant_rate(field, samples, options.get("times", [0.0]), seed=args.seed)
    return {"certificate": cert.to_json(), "attempted": [{"method": "orthantInfimum", "applicable": True}]}, None


def cmd_orthant_rate(args, inputs: Inputs):
    problem = read_problem(inputs, args.problem)
    inputs.add("orthant", [args.samples, args.seed])
    return _orthant(problem, args, inputs)


def cmd_gare(args, inputs: Inputs):
    problem = read_problem(inputs, args.problem)
    options = problem["options"]
    tol = args.tol if args.tol is not None else 1e-10
    mode = args.mode or options.get("mode", "auto")
    inputs.add("gare", [tol, mode])
    if args.p0 is not None:
        P0 = read_spd(inputs, "P0", args.p0)
    elif "P0" in options:
        P0 = as_spd(sym_from_json(options["P0"]))
    else:
        P0 = None
    kind = problem["kind"]
    cfg = IntegrationConfig(rel_tol=options.get("relTol", 1e-8), abs_tol=options.get("absTol", 1e-10))
    if kind == "stdRiccati":
        sol = solve_std_are(StdRiccatiParams.from_json(problem["params"]), P0, tol, mode, cfg)
        out = sol.to_json()
        out["convergenceBound"] = None
    elif kind in ("grde", "counterexample"):
        params = grde_params(problem)
        sol = solve_gare(params, P0, tol, mode, cfg)
        out = sol.to_json()
        bound = None
        start = sol.diagnostics["P0"]
        if params.strict() and thompson_distance(start, sol.Pbar) > 0:
            try:
                bound = gare_convergence_bound(params, sol.Pbar, start, residual_tol=max(tol, 1e-8))
            except HypothesisError:
                bound = None
        out["convergenceBound"] = bound
    else:
        raise InputError(f"problem kind {kind!r} has no algebraic Riccati equation")
    return out, None


def cmd_discrete(args, inputs: Inputs):
    problem = read_problem(inputs, args.problem)
    if problem["kind"] != "discrete":
        raise InputError("the discrete command needs a problem of kind 'discrete'")
    options = problem["options"]
    count = args.samples if args.samples is not None else options.get("samples", 10_000)
    rank_tol = options.get("rankTol", 1e-10)
    inputs.add("discrete", [count, args.seed, rank_tol])
    p = DiscreteParams.from_json(problem["params"])
    rep = lipschitz_report(p, rank_tol)
    emp = empirical_lipschitz(p, count, seed=args.seed)
    return {"report": rep.to_json(), "empiricalLipschitz": emp, "samples": count,
            "withinBound": bool(emp <= rep.bound + 1e-6)}, None


def cmd_audit(args, inputs: Inputs):
    inputs.add("audit", [args.n, args.gauge, args.grid])
    if args.n < 2:
        raise InputError("--n must be at least 2")
    nu = GaugeFunction.parse(args.gauge)
    if args.grid == "default":
        plan = SamplingPlan()
    else:
        g = inputs.read_json("grid", args.grid)
        allowed = {"epsilons", "lastLambdas", "leadLambdas", "eVectors", "threshold"}
        if not isinstance(g, dict) or set(g) - allowed:
            raise InputError(f"grid file may only contain {sorted(allowed)}")
        d = SamplingPlan()
        plan = SamplingPlan(g.get("epsilons", d.epsilons), g.get("lastLambdas", d.last_lambdas),
                            g.get("leadLambdas", d.lead_lambdas), g.get("eVectors"),
                            g.get("threshold", d.threshold))
    return audit_nonexpansiveness(nu, args.n, plan).to_json(), None


# -- parser and driver ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=DEFAULT_SEED, help="sampling seed (default 0)")
    common.add_argument("--tol", type=float, default=None, help="tolerance override")
    common.add_argument("--out", default=None, help="output file (written atomically)")
    common.add_argument("--format", choices=("json", "csv"), default="json")
    common.add_argument("--timing", action="store_true", help="record wall time in the report")

    parser = argparse.ArgumentParser(prog="cone-contraction", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("metric", parents=[common], help="Thompson and Finsler distances")
    p.add_argument("file_a")
    p.add_argument("file_b")
    p.add_argument("--gauge", default=None, help="'sup' or a number p >= 1")
    p.set_defaults(func=cmd_metric)

    p = sub.add_parser("integrate", parents=[common], help="integrate a Riccati flow")
    p.add_argument("problem")
    p.add_argument("--from", dest="p0", default=None, help="start point JSON")
    p.add_argument("--t0", type=float, default=0.0)
    p.add_argument("--t1", type=float, required=True)
    p.add_argument("--record-every", type=float, default=None)
    p.add_argument("--refine-exit", action="store_true")
    p.set_defaults(func=cmd_integrate)

    p = sub.add_parser("rate", parents=[common], help="contraction rate certificate")
    p.add_argument("problem")
    p.add_argument("--method", choices=("auto", "general", "closed", "beta"), default="auto")
    p.add_argument("--domain", default=None, help="order interval JSON {hi, lo?} or a matrix")
    p.add_argument("--samples", type=int, default=None)
    p.set_defaults(func=cmd_rate)

    p = sub.add_parser("gare", parents=[common], help="solve the algebraic Riccati equation")
    p.add_argument("problem")
    p.add_argument("--P0", dest="p0", default=None)
    p.add_argument("--mode", choices=("auto", "certified", "heuristic"), default=None)
    p.set_defaults(func=cmd_gare)

    p = sub.add_parser("discrete", parents=[common], help="discrete operator Lipschitz report")
    p.add_argument("problem")
    p.add_argument("--samples", type=int, default=None)
    p.set_defaults(func=cmd_discrete)

    p = sub.add_parser("audit-finsler", parents=[common], help="search for Finsler non-expansiveness violations")
    p.add_argument("--n", type=int, default=2)
    p.add_argument("--gauge", default="2")
    p.add_argument("--grid", default="default", help="'default' or a JSON grid file")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("orthant-rate", parents=[common], help="orthant contraction rate")
    p.add_argument("problem")
    p.add_argument("--samples", type=int, default=None)
    p.set_defaults(func=cmd_orthant_rate)
    return parser


def _fail(code: int, exc: BaseException) -> int:
    payload = {"error": type(exc).__name__, "message": str(exc)}
    failed = getattr(exc, "failed", None)
    if failed:
        payload["failed"] = failed
    if isinstance(exc, IntegrationError) and exc.exit_time is not None:
        payload["exitTime"] = exc.exit_time
    sys.stderr.write(dumps(payload))
    return code


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.format == "csv" and args.command != "integrate":
        parser.error("--format csv is only available for integrate")
    if args.command == "integrate" and args.format == "csv" and args.out is None:
        parser.error("--format csv needs --out")
    inputs = Inputs(args.command)
    start = time.perf_counter()
    try:
        result = args.func(args, inputs)
    except (InputError, ValueError, KeyError, TypeError) as exc:
        return _fail(EXIT_INPUT, exc)
    except (HypothesisError, InfeasibleError) as exc:
        return _fail(EXIT_HYPOTHESIS, exc)
    except (IntegrationError, ConvergenceError, np.linalg.LinAlgError, FloatingPointError) as exc:
        return _fail(EXIT_NUMERICAL, exc)
    outputs, side = result[0], result[1]
    code = result[2] if len(result) > 2 else EXIT_OK
    report = {
        "command": args.command,
        "inputsDigest": inputs.digest(),
        "outputs": outputs,
        "wallTime": (time.perf_counter() - start) if args.timing else None,
        "seed": args.seed,
        "version": __version__,
    }
    text = dumps(report)
    jsonschema.validate(json.loads(text), load_schema("report.schema.json"))
    if side is not None:
        write_atomic(*side)
        sys.stdout.write(text)
    elif args.out is not None:
        write_atomic(args.out, text)
    else:
        sys.stdout.write(text)
    return code


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
