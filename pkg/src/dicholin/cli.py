"""Batch runner: ``dicholin <verify|solve|holder|all> --config PATH --out DIR [--seed K]``.

Writes ``report.json`` (deterministic for a fixed config and seed),
``residuals.csv``, ``holder.csv`` and ``timing.json`` into the output
directory. Exit codes: 0 every enabled check passed, 2 some check failed,
1 usage or configuration error.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
import warnings
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from ._parallel import ordered_map
from .cocycle import DenseSpace, WindowedSequence
from .conjugacy import (
    ConjugacyProblem,
    OrbitOverflowError,
    conjugacy_residual,
    inverse_residual,
    range_distance,
    smallness_check,
    solve_h,
)
from .dichotomy import MatrixProjections, certify
from .examples import (
    FamilySpec,
    GeneratedSystem,
    GeneratorError,
    ShiftSpec,
    make_dimension_exchange,
    make_family_switch,
    make_scalar,
    make_weighted_shift,
)
from .holder import HolderBudget, alpha_max, empirical_holder, holder_smallness
from .linops import BiSeq, ConvergenceError, DenseMatrix, check_p, norm
from .perturbation import ContractionError, NonlinearSystem, PerturbationSequence, audit_constants

EXIT_OK, EXIT_CONFIG, EXIT_FAIL = 0, 1, 2
COMMANDS = ("verify", "solve", "holder", "all")
RESIDUAL_COLUMNS = ["n", "x_id", "conj_residual", "inv_residual_1", "inv_residual_2", "range_dist", "err_bound"]
HOLDER_COLUMNS = ["scale", "max_diff", "slope_window"]
HOLDER_SLOPE_FRACTION = 0.9
PRESET_PREFIX = "preset:"


class ConfigError(ValueError):
    pass


def preset_names() -> list[str]:
    root = resources.files("dicholin") / "presets"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def _schema() -> dict:
    return json.loads((resources.files("dicholin") / "config.schema.json").read_text(encoding="utf-8"))


def load_config(path: str) -> dict:
    """Read and schema-validate a config; ``preset:NAME`` loads a bundled one."""
    if path.startswith(PRESET_PREFIX):
        name = path[len(PRESET_PREFIX):]
        if name not in preset_names():
            raise ConfigError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
        text = (resources.files("dicholin") / "presets" / f"{name}.json").read_text(encoding="utf-8")
    else:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from None
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    try:
        jsonschema.validate(cfg, _schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(k) for k in exc.absolute_path) or "<root>"
        raise ConfigError(f"config schema violation at {where}: {exc.message}") from None
    return cfg


def _vector(obj, dense: bool):
    if isinstance(obj, dict):
        if dense:
            raise ConfigError("index-keyed vector given for a dense system")
        return BiSeq({int(k): float(v) for k, v in obj.items()})
    if not dense:
        raise ConfigError("list vector given for a sequence-space system")
    return np.array(obj, dtype=float)


def build_system(spec: dict, window, p) -> GeneratedSystem:
    name = spec["generator"]
    params = dict(spec.get("params", {}))
    try:
        if name == "dimension_exchange":
            return make_dimension_exchange(window=window, p=p)
        if name == "scalar":
            return make_scalar(float(params.get("a", 0.5)), window=window, p=p)
        if name == "weighted_shift":
            unstable = params.get("unstable", 2.0)
            shift = ShiftSpec.two_sided(
                float(params.get("stable", 0.5)),
                None if unstable is None else float(unstable),
                crossing=int(params.get("crossing", 0)),
                p=p,
                window=window,
            )
            return make_weighted_shift(shift)
        if name == "family_switch":
            letters = [DenseMatrix(m) for m in params["letters"]]
            fam = FamilySpec(
                letters,
                [float(x) for x in params["lambdas"]],
                np.array(params["projection"], dtype=float),
                params["word"],
                U=DenseMatrix(params["U"]) if params.get("U") is not None else None,
                offset=int(params.get("offset", 0)),
                p=p,
                window=window,
            )
            return make_family_switch(fam)
        if name == "windowed":
            seq = WindowedSequence(int(params["n_min"]), [DenseMatrix(m) for m in params["matrices"]])
            proj = MatrixProjections(int(params["n_min"]), params["projections"])
            cert = certify(seq, proj, window, float(params["D"]), float(params["lambda"]), p=p)
            if not cert.passed:
                raise GeneratorError(f"certificate failed: {cert.report.failures()}", cert.report)
            return GeneratedSystem(seq, proj, cert)
    except GeneratorError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad parameters for system {name!r}: {exc}") from None
    raise ConfigError(f"unknown generator {name!r}")


def _clean(x):
    """JSON-safe floats: non-finite values become None."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _vec_json(v):
    if isinstance(v, BiSeq):
        return {str(j): x for j, x in v.to_dict().items()}
    return [float(a) for a in v]


class Experiment:
    def __init__(self, cfg: dict, seed: int):
        self.cfg = cfg
        self.seed = seed
        self.p = check_p(cfg.get("p", 2))
        self.window = tuple(cfg.get("window", [-20, 20]))
        if self.window[1] - self.window[0] < 1:
            raise ConfigError(f"window {list(self.window)} must contain at least two times")
        tol = cfg.get("tolerances", {})
        self.tail_tol = float(tol.get("tail_tol", 1e-9))
        self.iter_tol = float(tol.get("iter_tol", 1e-10))
        self.failures: list[str] = []
        self.report: dict = {"seed": seed, "config": cfg}
        self.timing: dict = {}
        self.prob: ConjugacyProblem | None = None
        self.residual_rows: list[dict] = []
        self.holder_rows: list = []

    def fail(self, msg: str):
        self.failures.append(msg)

    def _timed(self, stage, fn):
        t0 = time.perf_counter()
        try:
            return fn()
        finally:
            self.timing[stage] = time.perf_counter() - t0

    # -- stages --------------------------------------------------------
    def build(self):
        self.gen = self._timed("build", lambda: build_system(self.cfg["system"], self.window, self.p))
        self.dense = isinstance(self.gen.seq.space, DenseSpace)
        try:
            pert = PerturbationSequence.from_json(self.cfg.get("perturbation") or {"c": 0.0, "M": 0.0, "expr": None})
            self.sys = NonlinearSystem(self.gen.seq, pert, self.p)
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"bad perturbation: {exc}") from None

    def verify(self):
        cert, sys_ = self.gen.cert, self.sys
        rep = cert.report.to_dict()
        a0 = alpha_max(cert.lam, sys_.rho)
        self.report["certificate"] = {
            "D": cert.D,
            "lambda": cert.lam,
            "rho": sys_.rho,
            "alpha0": a0,
            "window": list(cert.window),
            "passed": cert.passed,
            "projection_bound": rep["projection_bound"],
            "checks": rep["checks"],
            "notes": cert.notes,
        }
        if not cert.passed:
            self.fail(f"dichotomy certificate failed: {cert.report.failures()}")
        audit = self._timed("audit", lambda: audit_constants(sys_.pert, sys_.seq.space, p=self.p, seed=self.seed))
        self.report["perturbation"] = {
            "c": sys_.pert.c,
            "M": sys_.pert.M,
            "audit": {"c_emp": audit.c_emp, "M_emp": audit.M_emp, "c_flag": audit.c_flag, "M_flag": audit.M_flag},
        }
        if audit.flagged:
            self.fail(f"declared constants violated by samples (c_emp={audit.c_emp:.6g}, M_emp={audit.M_emp:.6g})")
        sm = smallness_check(sys_.c, cert.D, cert.lam)
        self.report["smallness"] = {"passed": sm.passed, "q": sm.q, "c_star": sm.c_star}
        if not sm.passed:
            self.fail(
                f"smallness check failed: q = {sm.q:.6g} >= 1 for c = {sys_.c:g}; shrink c below c* = {sm.c_star:.6g}"
            )
            return
        if cert.passed:
            self.prob = ConjugacyProblem(sys_, cert, self.tail_tol, self.iter_tol)
            prob = self.prob
            self.report["solver"] = {
                "tail_tol": self.tail_tol,
                "iter_tol": self.iter_tol,
                "depth": prob.N,
                "h_err_bound": prob.h_err_bound,
                "hbar_err_bound": prob.hbar_err_bound,
                "conj_bound": 4 * prob.h_err_bound,
                "inverse_bound": prob.inverse_bound,
                "range_bound": prob.h_err_bound,
                "uniform_bound": prob.uniform_bound,
            }

    def _queries(self):
        qcfg = self.cfg.get("queries", {})
        out = [(int(q["n"]), _vector(q["x"], self.dense)) for q in qcfg.get("points", [])]
        sample = qcfg.get("sample")
        if sample:
            rng = np.random.default_rng(self.seed)
            lo, hi = sample.get("n_range", [-10, 10])
            radius = float(sample.get("radius", 1.0))
            for _ in range(int(sample["count"])):
                n = int(rng.integers(lo, hi + 1))
                if self.dense:
                    d = rng.standard_normal(self.gen.seq.space.dim)
                else:
                    a, b = sample.get("support", [-2, 2])
                    d = BiSeq(zip(range(a, b + 1), rng.standard_normal(b - a + 1).tolist()))
                x = d * (radius * float(rng.uniform()) / max(norm(d), 1e-300))
                out.append((n, x))
        for _, x in out:
            self.gen.seq.space.check(x)
        return out

    def _one(self, item):
        x_id, (n, x) = item
        prob = self.prob
        row = {"n": n, "x_id": x_id, "x": _vec_json(x)}
        try:
            h, _ = solve_h(prob, n, x)
            row["h_norm"] = norm(h, self.p)
            row["range_dist"] = range_distance(prob.seq, prob.proj, n, h, self.p)
            row["conj_residual"] = conjugacy_residual(prob, n, x)
            if self.sys.backward_factor < 1.0:
                row["inv_residual_1"], row["inv_residual_2"] = inverse_residual(prob, n, x)
            else:
                row["inv_residual_1"] = row["inv_residual_2"] = math.nan
                row["note"] = "inverse not computable: c e^rho >= 1"
        except (OrbitOverflowError, ConvergenceError, ContractionError) as exc:
            row["error"] = str(exc)
        return row

    def solve(self):
        if self.prob is None:
            return
        prob = self.prob
        queries = self._queries()
        rows = self._timed("solve", lambda: ordered_map(self._one, list(enumerate(queries))))
        rows.sort(key=lambda r: (r["n"], r["x_id"]))
        conj_b, inv_b, rng_b = 4 * prob.h_err_bound, prob.inverse_bound, prob.h_err_bound
        unif = prob.uniform_bound + prob.h_err_bound
        bad = 0
        for r in rows:
            r["err_bound"] = conj_b
            ok = "error" not in r
            if ok:
                ok &= r["conj_residual"] <= conj_b
                ok &= all(not (r[k] > inv_b) for k in ("inv_residual_1", "inv_residual_2"))
                ok &= not (r["range_dist"] > rng_b)
                ok &= r["h_norm"] <= unif
            r["passed"] = bool(ok)
            bad += not ok
        self.residual_rows = rows

        def worst(key):
            vals = [r[key] for r in rows if key in r and not math.isnan(r[key])]
            return max(vals) if vals else None

        self.report["queries"] = {
            "count": len(rows),
            "passed": bad == 0,
            "max_conj_residual": worst("conj_residual"),
            "max_inv_residual_1": worst("inv_residual_1"),
            "max_inv_residual_2": worst("inv_residual_2"),
            "max_range_dist": worst("range_dist"),
            "range_not_checkable": sum(1 for r in rows if "range_dist" in r and math.isnan(r["range_dist"])),
            "max_h_norm": worst("h_norm"),
            "rows": rows,
        }
        if bad:
            self.fail(f"{bad} of {len(rows)} queries exceed their residual bounds")

    def holder(self, required: bool):
        hcfg = self.cfg.get("holder")
        if hcfg is None:
            if required:
                raise ConfigError("holder command needs a 'holder' block in the config")
            return
        if self.prob is None:
            return
        prob = self.prob
        alpha = float(hcfg["alpha"])
        try:
            budget = HolderBudget.from_problem(prob, alpha)
        except ValueError as exc:
            raise ConfigError(f"bad holder block: {exc}") from None
        sm = holder_smallness(budget)
        scales = sorted((float(s) for s in hcfg["scales"]), reverse=True)
        center = _vector(hcfg["center"], self.dense) if "center" in hcfg else (
            np.zeros(self.gen.seq.space.dim) if self.dense else BiSeq()
        )
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            try:
                slope, rows = self._timed(
                    "holder",
                    lambda: empirical_holder(
                        prob, int(hcfg.get("n", 0)), center, scales,
                        pairs_per_scale=int(hcfg.get("pairs", 8)), seed=self.seed,
                        spread=float(hcfg.get("spread", 0.1)),
                    ),
                )
            except ValueError as exc:
                raise ConfigError(f"bad holder block: {exc}") from None
        need = HOLDER_SLOPE_FRACTION * alpha
        self.holder_rows = rows
        self.report["holder"] = {
            "alpha": alpha,
            "alpha0": budget.alpha0,
            "certified": sm.passed,
            "smallness": sm.to_dict(),
            "slope": slope,
            "required_slope": need,
            "passed": slope >= need,
            "dropped": [str(w.message) for w in caught if issubclass(w.category, RuntimeWarning)],
            "rows": [{"scale": r.scale, "max_diff": r.max_diff, "slope_window": r.slope_window} for r in rows],
        }
        if slope < need:
            self.fail(f"empirical Hoelder slope {slope:.4f} below {need:.4f}")

    # -- output --------------------------------------------------------
    def write(self, out: Path, command: str):
        out.mkdir(parents=True, exist_ok=True)
        self.report["command"] = command
        self.report["failures"] = list(self.failures)
        self.report["status"] = "FAILED" if self.failures else "PASSED"
        text = json.dumps(_clean(self.report), sort_keys=True, indent=2, allow_nan=False)
        (out / "report.json").write_text(text + "\n", encoding="utf-8")
        if command in ("solve", "all"):
            with open(out / "residuals.csv", "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh)
                w.writerow(RESIDUAL_COLUMNS)
                for r in self.residual_rows:
                    w.writerow([_fmt(r.get(k, math.nan)) for k in RESIDUAL_COLUMNS])
        if command in ("holder", "all") and self.holder_rows:
            with open(out / "holder.csv", "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh)
                w.writerow(HOLDER_COLUMNS)
                for r in self.holder_rows:
                    w.writerow([_fmt(r.scale), _fmt(r.max_diff), _fmt(r.slope_window)])
        (out / "timing.json").write_text(json.dumps(self.timing, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def run(config: str, command: str, out_dir: str, seed: int | None = None) -> int:
    """Execute one command; returns the process exit code."""
    if command not in COMMANDS:
        print(f"dicholin: unknown command {command!r}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(config)
        exp = Experiment(cfg, int(seed) if seed is not None else int(cfg.get("seed", 0)))
        try:
            exp.build()
        except GeneratorError as exc:
            exp.fail(str(exc))
            exp.write(Path(out_dir), command)
            print(f"dicholin: {exc}", file=sys.stderr)
            return EXIT_FAIL
        exp.verify()
        if command in ("solve", "all"):
            exp.solve()
        if command in ("holder", "all"):
            exp.holder(required=command == "holder")
        exp.write(Path(out_dir), command)
    except ConfigError as exc:
        print(f"dicholin: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for msg in exp.failures:
        print(f"dicholin: {msg}", file=sys.stderr)
    return EXIT_FAIL if exp.failures else EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def main(argv=None) -> int:
    parser = _Parser(prog="dicholin", description="Dichotomy certificates and nonautonomous linearization runs.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help=f"JSON config path, or {PRESET_PREFIX}NAME for a bundled preset")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    args = parser.parse_args(argv)
    return run(args.config, args.command, args.out, args.seed)


if __name__ == "__main__":
    raise SystemExit(main())
