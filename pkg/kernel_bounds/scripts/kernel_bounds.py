import json
import sys

import click
import numpy as np

from kernel_bounds.baselines import fixed_sigma_bound, reed_bound, scharnhorst_alternating
from kernel_bounds.benchmark import Benchmark, emit_fig1_data, emit_fig2_data
from kernel_bounds.dual_bound import BoundQuery, OptimizerOptions, dual_value, optimize_bound
from kernel_bounds.exceptions import InfeasibleProblemError, NonConvergenceError
from kernel_bounds.oracle import solve_primal
from kernel_bounds.problem_file import dump_problem, load_problem, problem_to_dict
from kernel_bounds.scenarios import QuadrotorConfig, gen_illustrative, gen_quadrotor

BOUND_METHODS = ("dualgd", "dual", "oracle", "alternating", "reed", "fixed-hashimoto", "fixed-yang")
POINTWISE_METHODS = ("alternating", "reed", "fixed-hashimoto", "fixed-yang")

EXIT_INFEASIBLE = 2
EXIT_NONCONVERGENCE = 3


def parse_vector(text):
    return np.array([float(v) for v in text.split(",") if v.strip()], dtype=float)


def run_guarded(fn, *args, **kwargs):
    """Map the domain failures onto exit codes."""
    try:
        return fn(*args, **kwargs)
    except InfeasibleProblemError as e:
        click.echo("Infeasible problem: {}".format(e), err=True)
        sys.exit(EXIT_INFEASIBLE)
    except NonConvergenceError as e:
        click.echo("Solver did not converge: {}".format(e), err=True)
        sys.exit(EXIT_NONCONVERGENCE)


def evaluate_bound(problem, x, h, method, sigma):
    query = BoundQuery(x=x, h=h)
    if method in POINTWISE_METHODS and not problem.noise.is_pointwise:
        raise click.BadParameter("'{}' needs point-wise noise bounds, the problem has '{}' noise.".format(
            method, problem.noise.kind), param_hint="--method")
    if method == "dualgd":
        opts = OptimizerOptions(initial_sigma=tuple(np.broadcast_to(sigma, (problem.noise.n_con,)))) \
            if sigma is not None else OptimizerOptions()
        return optimize_bound(problem, query, opts).to_dict()
    if method == "dual":
        if sigma is None:
            raise click.UsageError("Method 'dual' needs --sigma.")
        sigma = problem.noise.check_sigma(sigma)
        return dict(value=dual_value(problem, query, sigma), sigma=sigma.tolist())
    if method == "oracle":
        return solve_primal(problem, query).to_dict()
    if method == "alternating":
        result = scharnhorst_alternating(problem, query)
        return dict(value=result.value, lam=result.lam, nu=result.nu.tolist(), iterations=result.iterations,
                    status=result.status)
    if method == "reed":
        sigma_bar = None if sigma is None else float(np.max(sigma))
        envelope = reed_bound(problem, query.x, sigma_bar, query.h)
    else:
        envelope = fixed_sigma_bound(problem, query.x, method.split("-")[1], query.h)
    return dict(value=envelope.upper, lower=envelope.lower, center=envelope.center,
                half_width=envelope.half_width, sigma=envelope.sigma.tolist())


@click.group()
def main():
    pass


@main.command()
@click.option("--problem", "problem_file", required=True, type=click.Path(exists=True, dir_okay=False),
              help="JSON problem file.")
@click.option("--x", "x", required=True, help="Test point, comma-separated for multi-dimensional inputs.")
@click.option("--h", "h", default=None, help="Bound direction, comma-separated. Defaults to the first output.")
@click.option("--method", type=click.Choice(BOUND_METHODS), default="dualgd", show_default=True,
              help="Bound to compute.")
@click.option("--sigma", default=None,
              help="Noise parameters (one value or comma-separated per constraint). Fixes sigma for 'dual', "
                   "sets sigma_bar for 'reed' and the starting point for 'dualgd'.")
@click.option("--json", "as_json", is_flag=True, help="Print the full result as JSON.")
def bound(problem_file, x, h, method, sigma, as_json):
    """Worst-case upper bound on h^T f(x)."""
    problem = load_problem(problem_file)
    x = parse_vector(x)
    h = parse_vector(h) if h is not None else np.eye(problem.output_dim)[0]
    sigma = parse_vector(sigma) if sigma is not None else None
    if sigma is not None and sigma.size == 1:
        sigma = float(sigma[0])

    result = run_guarded(evaluate_bound, problem, x, h, method, sigma)
    if as_json:
        click.echo(json.dumps(dict(result, method=method), indent=1))
    else:
        click.echo("{:.12g}".format(result["value"]))


@main.command()
@click.option("--config", required=True, type=click.Path(exists=True, dir_okay=False),
              help="JSON benchmark configuration.")
@click.option("--stats-file", help="Filename to log advanced statistics to. Each line is a json object.")
@click.option("--out", default=None, help="CSV output path; overrides the configuration.")
@click.option("--workers", default=None, type=click.IntRange(1), help="Parallel processes over seeds.")
def benchmark(config, stats_file, out, workers):
    """Compare all configured methods against the oracle."""
    print("Initializing benchmark..", flush=True)
    runner = Benchmark(config, stats_file=stats_file, output=out, workers=workers)
    rows = run_guarded(runner.run)
    for row in rows:
        click.echo("{:<16} ({}) sub {:.3f}/{:.3f}/{:.3f}  time {:.3g}/{:.3g}/{:.3g} s".format(
            row.method, row.tag, row.sub_min, row.sub_avg, row.sub_max, row.t_min, row.t_avg, row.t_max))


def write_scenario(scenario, out):
    if out is None:
        click.echo(json.dumps(dict(problem_to_dict(scenario.problem), test_inputs=scenario.test_inputs.tolist())))
        return
    dump_problem(scenario.problem, out)
    click.echo("Wrote {} ({} measurements).".format(out, scenario.problem.n))


@main.command()
@click.option("--n-data", default=100, show_default=True, type=click.IntRange(1), help="Number of tilt angles.")
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", default=None, help="Problem file to write. Prints JSON to stdout if omitted.")
def quadrotor(n_data, seed, out):
    """Generate the planar quadrotor wind problem."""
    write_scenario(gen_quadrotor(QuadrotorConfig(n_data=n_data, seed=seed)), out)


@main.command()
@click.option("--n-data", default=2, show_default=True, type=click.IntRange(1), help="Number of noisy samples.")
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", default=None, help="Problem file to write. Prints JSON to stdout if omitted.")
def illustrative(n_data, seed, out):
    """Generate the two-sample squared-exponential problem."""
    write_scenario(gen_illustrative(seed=seed, n_data=n_data), out)


@main.command()
@click.option("--out", required=True, help="CSV file for the envelope and dual curves.")
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--n-grid", default=200, show_default=True, type=click.IntRange(2))
def fig1(out, seed, n_grid):
    """Envelope data of the illustrative problem."""
    scenario = gen_illustrative(seed=seed, n_grid=n_grid)
    frame = run_guarded(emit_fig1_data, scenario.problem, scenario.test_inputs[:, 0],
                        anchor=scenario.metadata["anchor"], truth=scenario.truth, out=out)
    click.echo("Wrote {} ({} grid points).".format(out, frame.shape[0]))


@main.command()
@click.option("--out", required=True, help="CSV file for the two-output bounds and the ellipsoidal tube.")
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--n-data", default=10, show_default=True, type=click.IntRange(1), help="Number of tilt angles.")
@click.option("--n-grid", default=100, show_default=True, type=click.IntRange(2))
def fig2(out, seed, n_data, n_grid):
    """Tube data of the planar quadrotor problem."""
    scenario = gen_quadrotor(QuadrotorConfig(n_data=n_data, seed=seed))
    grid = np.linspace(0.0, 2.0 * np.pi, n_grid)
    frame = run_guarded(emit_fig2_data, scenario.problem, grid, truth=scenario.truth, out=out)
    click.echo("Wrote {} ({} grid points).".format(out, frame.shape[0]))


if __name__ == "__main__":
    main()
