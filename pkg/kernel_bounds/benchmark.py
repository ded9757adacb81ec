"""
Benchmark harness comparing bound methods against the primal oracle.

For each seed a scenario is generated; for each of its test points the ellipsoidal oracle is
solved once and every requested method is timed. Suboptimality is normalized by the gap between
the prior bound and the oracle value. Results go to a CSV table (one row per method) and a JSON
sidecar holding every run.
"""

import concurrent.futures
import dataclasses
import datetime
import json
import subprocess
import time
import traceback

import numpy as np
import pandas
import pytz

from .baselines import fixed_sigma_bound, reed_bound, scharnhorst_alternating
from .dual_bound import BoundQuery, OptimizerOptions, dual_value, ellipsoid_bound, optimize_bound
from .exceptions import InfeasibleProblemError, NonConvergenceError, SamplerError
from .oracle import solve_primal
from .problem_file import load_problem
from .scenarios import QuadrotorConfig, Scenario, gen_illustrative, gen_quadrotor, pointwise_variant
from .statistics import Statistics

METHODS = ("oracle-e", "oracle-p", "alternating-p", "reed-p", "dualgd-e", "dualgd-p", "fixed-hashimoto",
           "fixed-yang")
SCENARIOS = ("illustrative", "quadrotor", "file")
CSV_COLUMNS = ["method", "tag", "sub_min", "sub_avg", "sub_max", "t_min", "t_avg", "t_max"]

# Errors that mark a single method run as excluded instead of aborting the benchmark.
RUN_ERRORS = (InfeasibleProblemError, NonConvergenceError, SamplerError, ValueError, np.linalg.LinAlgError)


def method_tag(method):
    return "p" if method.endswith("-p") or method.startswith("fixed-") else "e"


def suboptimality(bound_value, optimal_value, prior_value):
    """(bound - optimal) / (prior - optimal), with round-off below the optimum clamped to 0."""
    gap = prior_value - optimal_value
    if not gap > 1e-12:
        raise ValueError("Degenerate prior: prior {:.12g} does not exceed optimum {:.12g}.".format(
            prior_value, optimal_value))
    difference = bound_value - optimal_value
    if -1e-8 <= difference < 0:
        return 0.0
    ratio = difference / gap
    if ratio < -1e-6:
        raise ValueError("Bound {:.12g} lies below the optimum {:.12g}.".format(bound_value, optimal_value))
    return float(ratio)


@dataclasses.dataclass(frozen=True)
class BenchmarkConfig:
    scenario: str = "quadrotor"
    n_data: int = 100
    seeds: tuple = (0, 1, 2, 3, 4)
    methods: tuple = METHODS
    n_test: int = 20
    output_index: int = 0
    workers: int = 1
    output: str = "benchmark.csv"
    alternating_target: float = 1e-2
    reed_sigma: float = None
    optimizer: dict = dataclasses.field(default_factory=dict)
    quadrotor: dict = dataclasses.field(default_factory=dict)
    problem_file: str = None
    test_points: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "methods", tuple(self.methods))
        if self.scenario not in SCENARIOS:
            raise ValueError("Unknown scenario '{}' (expected one of {}).".format(self.scenario, SCENARIOS))
        if len(self.methods) == 0:
            raise ValueError("At least one method is required.")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ValueError("Unknown methods: {}.".format(", ".join(unknown)))
        if "oracle-e" not in self.methods:
            raise ValueError("Method 'oracle-e' is required to report suboptimality.")
        if len(self.seeds) == 0 or self.n_test < 1 or self.workers < 1:
            raise ValueError("Need at least one seed, one test point and one worker.")
        if self.scenario == "file" and (self.problem_file is None or len(self.test_points) == 0):
            raise ValueError("Scenario 'file' needs 'problem_file' and 'test_points'.")
        OptimizerOptions.from_dict(self.optimizer)

    @classmethod
    def from_dict(cls, config):
        fields = {f.name for f in dataclasses.fields(cls)}
        unknown = set(config) - fields
        if unknown:
            raise ValueError("Unknown benchmark options: {}.".format(", ".join(sorted(unknown))))
        return cls(**config)

    @classmethod
    def from_json(cls, path):
        with open(path, "r") as f:
            return cls.from_dict(json.load(f))

    def to_dict(self):
        return dataclasses.asdict(self)

    def make_scenario(self, seed):
        if self.scenario == "quadrotor":
            options = dict(self.quadrotor, n_data=self.n_data, n_test=self.n_test, seed=seed)
            return gen_quadrotor(QuadrotorConfig.from_dict(options))
        if self.scenario == "illustrative":
            scenario = gen_illustrative(seed=seed, n_data=self.n_data)
            rng = np.random.default_rng(seed)
            picks = rng.choice(scenario.test_inputs.shape[0], size=min(self.n_test, scenario.test_inputs.shape[0]),
                               replace=False)
            return dataclasses.replace(scenario, test_inputs=scenario.test_inputs[np.sort(picks)])
        problem = load_problem(self.problem_file)
        return Scenario(name="file", problem=problem, truth=None, noise=np.zeros(problem.n),
                        test_inputs=np.asarray(self.test_points, dtype=float).reshape(len(self.test_points), -1))


@dataclasses.dataclass(frozen=True)
class BenchmarkRow:
    method: str
    tag: str
    sub_min: float
    sub_avg: float
    sub_max: float
    t_min: float
    t_avg: float
    t_max: float
    runs: int = 0
    excluded: int = 0
    status_counts: dict = dataclasses.field(default_factory=dict)


def timed(fn, *args, **kwargs):
    start = time.perf_counter()
    result = fn(*args, **kwargs)
    return result, time.perf_counter() - start


def run_seed(config, seed):
    """All runs of one seed; returns (records, setup_times)."""
    scenario = config.make_scenario(seed)
    problem_e = scenario.problem
    needs_pointwise = any(method_tag(m) == "p" for m in config.methods)
    problem_p = pointwise_variant(scenario, config.output_index).problem if needs_pointwise else None
    opts = OptimizerOptions.from_dict(config.optimizer)
    h = np.eye(problem_e.output_dim)[config.output_index]

    # The training factorization is cached per problem; its cost is reported separately.
    _, setup_e = timed(lambda: problem_e.training_factor)
    setup_times = dict(e=setup_e)
    if problem_p is not None:
        _, setup_times["p"] = timed(lambda: problem_p.training_factor)

    records = []
    for index, x in enumerate(scenario.test_inputs[:config.n_test]):
        query = BoundQuery(x=x, h=h)
        prior = float(problem_e.prior_bound(x, h))
        base = dict(seed=seed, test_index=index, x=np.asarray(x).tolist(), prior=prior)

        try:
            oracle_e, time_e = timed(solve_primal, problem_e, query)
            optimal = oracle_e.value
        except RUN_ERRORS as e:
            for method in config.methods:
                records.append(dict(base, method=method, tag=method_tag(method), excluded=True,
                                    reason="oracle-e: {}".format(e)))
            continue

        values = {"oracle-e": (optimal, time_e, oracle_e.status)}
        oracle_p = None
        if problem_p is not None and ("oracle-p" in config.methods or "alternating-p" in config.methods):
            try:
                solution, elapsed = timed(solve_primal, problem_p, query)
                oracle_p = solution.value
                values["oracle-p"] = (oracle_p, elapsed, solution.status)
            except RUN_ERRORS as e:
                values["oracle-p"] = e

        for method in config.methods:
            record = dict(base, method=method, tag=method_tag(method), optimal=optimal)
            try:
                if method not in values:
                    values[method] = evaluate_method(method, config, problem_e, problem_p, query, oracle_p, opts)
                outcome = values[method]
                if isinstance(outcome, Exception):
                    raise outcome
                value, elapsed, status = outcome
                record.update(value=value, time=elapsed, status=status,
                              suboptimality=suboptimality(value, optimal, prior), excluded=False)
            except RUN_ERRORS as e:
                record.update(excluded=True, reason="{}: {}".format(type(e).__name__, e))
            records.append(record)
    return records, setup_times


def evaluate_method(method, config, problem_e, problem_p, query, oracle_p, opts):
    """Returns (bound value, wall time, status)."""
    if method == "dualgd-e":
        certificate, elapsed = timed(optimize_bound, problem_e, query, opts)
        return certificate.value, elapsed, certificate.status
    if method == "dualgd-p":
        certificate, elapsed = timed(optimize_bound, problem_p, query, opts)
        return certificate.value, elapsed, certificate.status
    if method == "alternating-p":
        if oracle_p is None:
            raise ValueError("alternating-p needs the point-wise oracle value.")
        target = oracle_p + config.alternating_target * (problem_p.prior_bound(query.x, query.h) - oracle_p)
        result, elapsed = timed(scharnhorst_alternating, problem_p, query, tol=1e-10, max_iter=5000,
                                stop_value=target)
        return result.value, elapsed, result.status
    if method == "reed-p":
        envelope, elapsed = timed(reed_bound, problem_p, query.x, config.reed_sigma, query.h)
        return envelope.upper, elapsed, "closed-form"
    if method in ("fixed-hashimoto", "fixed-yang"):
        envelope, elapsed = timed(fixed_sigma_bound, problem_p, query.x, method.split("-")[1], query.h)
        return envelope.upper, elapsed, "closed-form"
    raise ValueError("Method '{}' has no evaluator.".format(method))


def aggregate(records, methods):
    """Min/avg/max per method over the included runs."""
    frame = pandas.DataFrame(records)
    rows = []
    for method in methods:
        subset = frame[frame.method == method] if not frame.empty else frame
        included = subset[~subset.excluded.astype(bool)] if not subset.empty else subset
        if included.empty:
            stats = dict(sub_min=np.nan, sub_avg=np.nan, sub_max=np.nan, t_min=np.nan, t_avg=np.nan, t_max=np.nan)
            status_counts = dict()
        else:
            stats = dict(sub_min=included.suboptimality.min(), sub_avg=included.suboptimality.mean(),
                         sub_max=included.suboptimality.max(), t_min=included.time.min(), t_avg=included.time.mean(),
                         t_max=included.time.max())
            status_counts = {str(k): int(v) for k, v in included.status.value_counts().items()}
        rows.append(BenchmarkRow(method=method, tag=method_tag(method), runs=int(included.shape[0]),
                                 excluded=int(subset.shape[0] - included.shape[0]), status_counts=status_counts,
                                 **{k: float(v) for k, v in stats.items()}))
    return rows


def git_revision():
    try:
        result = subprocess.run(["git", "rev-parse", "HEAD"], capture_output=True, text=True, check=True)
        return result.stdout.strip()
    except (OSError, subprocess.CalledProcessError):
        return None


def write_results(config, rows, records, setup_times, output=None):
    output = output or config.output
    table = pandas.DataFrame([dataclasses.asdict(row) for row in rows])[CSV_COLUMNS]
    table.to_csv(output, index=False)

    sidecar = output[:-4] + ".json" if output.endswith(".csv") else output + ".json"
    exclusions = {row.method: row.excluded for row in rows}
    with open(sidecar, "w") as f:
        json.dump(dict(config=config.to_dict(), sigma_choice="per-query", git_revision=git_revision(),
                       created=datetime.datetime.now(pytz.UTC).isoformat(), setup_times=setup_times,
                       exclusions=exclusions, runs=records), f, indent=1, default=str)
    return output, sidecar


def run_benchmark(config, output=None, print_fn=lambda _, **_kwargs: None, log_fn=lambda _, **_kwargs: None):
    """Run every seed, aggregate and write the CSV table plus JSON sidecar."""
    records, setup_times = [], dict()
    if config.workers > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=config.workers) as pool:
            futures = {pool.submit(run_seed, config, seed): seed for seed in config.seeds}
            for future in concurrent.futures.as_completed(futures):
                seed = futures[future]
                seed_records, setup_times[seed] = future.result()
                records.extend(seed_records)
                print_fn("Finished seed {} ({} runs).".format(seed, len(seed_records)))
    else:
        for seed in config.seeds:
            seed_records, setup_times[seed] = run_seed(config, seed)
            records.extend(seed_records)
            print_fn("Finished seed {} ({} runs).".format(seed, len(seed_records)))

    records.sort(key=lambda r: (r["seed"], r["test_index"], config.methods.index(r["method"])))
    for record in records:
        log_fn("benchmark run", **record)

    rows = aggregate(records, config.methods)
    for row in rows:
        if row.excluded:
            print_fn("Excluded {} runs of {}.".format(row.excluded, row.method))
    paths = write_results(config, rows, records, {str(k): v for k, v in setup_times.items()}, output=output)
    return rows, records, paths


class Benchmark:
    """Command-line driver: loads the configuration, wires logging and runs the harness."""

    def __init__(self, config, stats_file=None, output=None, workers=None, quiet=False):

        if isinstance(config, str):
            config = BenchmarkConfig.from_json(config)
        if workers is not None:
            config = dataclasses.replace(config, workers=workers)
        self.config = config
        self.output = output
        self.rows = None

        # Advanced logging.
        if stats_file:
            self.statistics = Statistics(filename=stats_file)
            self.log_fn = self.statistics.log
        else:
            self.statistics = None
            self.log_fn = lambda _, **_kwargs: None

        def print_fn(x, **kwargs):
            if not quiet:
                print("[{}] {}".format(datetime.datetime.now(pytz.UTC).time().isoformat(), x), flush=True)
            if self.statistics is not None:
                self.log_fn("log", text=x, **kwargs)

        self.print_fn = print_fn
        self.running = True

    def stop(self):
        if self.running:
            self.log_fn("stopping execution")
            self.running = False
            if self.statistics is not None:
                self.statistics.close()

    def run(self):
        self.log_fn("starting execution", config=self.config.to_dict())
        self.print_fn("Running {} methods on {} seeds ({} scenario).".format(
            len(self.config.methods), len(self.config.seeds), self.config.scenario))
        try:
            self.rows, _, paths = run_benchmark(self.config, output=self.output, print_fn=self.print_fn,
                                                log_fn=self.log_fn)
            self.print_fn("Wrote {} and {}.".format(*paths))
            return self.rows
        except Exception as e:
            self.log_fn("Benchmark received exception: {}".format(str(e)), stacktrace=traceback.format_exc())
            raise
        finally:
            self.stop()


def emit_fig1_data(problem, grid, anchor=1.5, truth=None, opts=None, out=None):
    """Optimal two-sided envelope over a 1-D grid plus the dual curves at the anchor's optimal sigma.

    The dual curves use fixed sigma from the anchor test point, so they touch the optimal
    envelope there and lie above it elsewhere. Grid optimizations start from the anchor's
    sigma and keep their best iterate, hence never end above the dual curve.
    """
    opts = opts or OptimizerOptions(refine=True)
    grid = np.asarray(grid, dtype=float).reshape(-1)
    upper_anchor = optimize_bound(problem, BoundQuery(x=[anchor], h=[1.0]), opts)
    lower_anchor = optimize_bound(problem, BoundQuery(x=[anchor], h=[-1.0]), opts)
    upper_opts = dataclasses.replace(opts, initial_sigma=tuple(upper_anchor.sigma))
    lower_opts = dataclasses.replace(opts, initial_sigma=tuple(lower_anchor.sigma))

    rows = []
    for x in grid:
        upper = optimize_bound(problem, BoundQuery(x=[x], h=[1.0]), upper_opts)
        lower = optimize_bound(problem, BoundQuery(x=[x], h=[-1.0]), lower_opts)
        row = dict(x=x, upper=upper.value, lower=-lower.value,
                   dual_upper=dual_value(problem, BoundQuery(x=[x], h=[1.0]), upper_anchor.sigma),
                   dual_lower=-dual_value(problem, BoundQuery(x=[x], h=[-1.0]), lower_anchor.sigma))
        for j, (sigma, capped) in enumerate(zip(upper.sigma, upper.at_cap)):
            row["sigma_{}".format(j + 1)] = sigma
            row["sigma_{}_at_cap".format(j + 1)] = bool(capped)
        if truth is not None:
            row["truth"] = float(truth(np.array([[x]]))[0, 0])
        rows.append(row)

    frame = pandas.DataFrame(rows)
    if out is not None:
        frame.to_csv(out, index=False)
    return frame


def emit_fig2_data(problem, grid, truth=None, opts=None, out=None):
    """Optimal bounds for both outputs of a 2-output problem plus the joint ellipsoidal tube.

    At each grid point the tube uses the sigma of the optimal upper bound in the first output
    direction, so its first-output support equals that bound. tube_xx/tube_xz/tube_zz hold the
    ellipsoid matrix radius^2 * cov.
    """
    if problem.output_dim != 2:
        raise ValueError("Tube data needs a 2-output problem, got {} outputs.".format(problem.output_dim))
    opts = opts or OptimizerOptions(refine=True)
    grid = np.asarray(grid, dtype=float).reshape(-1)
    directions = np.eye(2)

    rows = []
    for x in grid:
        row = dict(x=x)
        sigma_tube = None
        for name, h in zip(("x", "z"), directions):
            upper = optimize_bound(problem, BoundQuery(x=[x], h=h), opts)
            lower = optimize_bound(problem, BoundQuery(x=[x], h=-h), opts)
            row["upper_" + name], row["lower_" + name] = upper.value, -lower.value
            if sigma_tube is None:
                sigma_tube = upper.sigma
        tube = ellipsoid_bound(problem, [x], sigma_tube)
        matrix = tube.radius ** 2 * tube.shape
        row.update(tube_center_x=tube.center[0], tube_center_z=tube.center[1], tube_xx=matrix[0, 0],
                   tube_xz=matrix[0, 1], tube_zz=matrix[1, 1],
                   tube_upper_x=tube.support(directions[0]), tube_lower_x=-tube.support(-directions[0]),
                   tube_upper_z=tube.support(directions[1]), tube_lower_z=-tube.support(-directions[1]))
        if truth is not None:
            value = truth(np.array([[x]]))[0]
            row.update(truth_x=float(value[0]), truth_z=float(value[1]))
        rows.append(row)

    frame = pandas.DataFrame(rows)
    if out is not None:
        frame.to_csv(out, index=False)
    return frame
