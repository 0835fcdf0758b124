#!/usr/bin/env python3
# this_file: spline_gee/__main__.py
"""
Command-line interface for spline_gee using fire library.

Provides 'sgee fit' for CSV datasets and 'sgee simulate' for the Monte Carlo
designs. Library errors are reported as a JSON object on stderr.
"""

import sys
from typing import Optional, Union

import fire
from loguru import logger
from rich.console import Console
from rich.progress import BarColumn, Progress, SpinnerColumn, TextColumn
from rich.table import Table

from .cli_io import RunConfig, error_payload, resolve_threads, run_fit, write_mc_outputs
from .exceptions import ConfigError, SplineGeeError
from .marginal_model import STRUCTURE_LABELS, STRUCTURES
from .simgen import EstimatorConfig, Example1Config, Example2Config, run_monte_carlo

EXIT_ERROR = 1
EXIT_UNEXPECTED = 2
EXIT_INTERRUPTED = 130


def _configure_logging(verbose: bool) -> None:
    logger.remove()
    logger.add(sys.stderr, level="DEBUG" if verbose else "WARNING")
    logger.enable("spline_gee")


def _example_config(example: Union[int, str], n: Optional[int], m: Optional[int], seed: int):
    key = str(example).lower().removeprefix("example")
    if key == "1":
        return Example1Config(n=250 if n is None else n, m=20 if m is None else m, seed=seed)
    if key == "2":
        return Example2Config(n=100 if n is None else n, m=m, seed=seed)
    raise ConfigError(f"Unknown example '{example}', expected 1 or 2", example=str(example))


class Cli:
    """sgee - two-step spline GEE for generalized additive partially linear models"""

    def __init__(self):
        self.console = Console()
        self.error_console = Console(stderr=True)

    def _run(self, action, verbose: bool) -> None:
        _configure_logging(verbose)
        try:
            action()
        except KeyboardInterrupt:
            sys.exit(EXIT_INTERRUPTED)
        except SplineGeeError as e:
            print(error_payload(e), file=sys.stderr)
            sys.exit(EXIT_ERROR)
        except Exception as e:
            self.error_console.print(f"[red]Error:[/red] {e}")
            sys.exit(EXIT_UNEXPECTED)

    def fit(
        self,
        data: Optional[str] = None,
        config: Optional[str] = None,
        cluster: Optional[str] = None,
        response: Optional[str] = None,
        linear=None,
        additive=None,
        link: Optional[str] = None,
        correlation: Optional[str] = None,
        alpha: Optional[float] = None,
        degree: Optional[int] = None,
        n_knots: Optional[int] = None,
        ns_knots=None,
        level: Optional[float] = None,
        band: Optional[str] = None,
        rescale: Optional[bool] = None,
        grid_size: Optional[int] = None,
        out: Optional[str] = None,
        threads: Optional[int] = None,
        verbose: bool = False,
    ):
        """Fit a two-step spline GEE model to a clustered CSV.

        Options:
            --data: Input CSV (header required, comma separated)
            --config: JSON file with RunConfig fields; flags override it
            --cluster: Cluster id column (default "cluster")
            --response: Response column (default "y")
            --linear / --additive: Comma separated column names
            --link: gaussian or bernoulli
            --correlation: ind, ex or ar1
            --alpha: Fix the working correlation parameter instead of estimating it
            --n-knots / --ns-knots: Override Step-I N or Step-II N^S per component
            --level: Confidence level (default 0.95)
            --band: pointwise or simultaneous (adds a linear-spline band and linearity test)
            --rescale: Min-max rescale additive columns to [0, 1]
            --out: Output directory for report.json and curves_<l>.csv

        Examples:
            sgee fit --data panel.csv --linear x1,x2 --additive z1 --correlation ex
            sgee fit --config run.json --band simultaneous --out results
        """

        def action():
            run_config = RunConfig.from_json(
                config,
                data=data,
                cluster_column=cluster,
                response=response,
                linear=linear,
                additive=additive,
                link=link,
                correlation=correlation,
                alpha=alpha,
                degree=degree,
                n_knots=n_knots,
                ns_knots=ns_knots,
                level=level,
                band=band,
                rescale=rescale,
                grid_size=grid_size,
                out=out,
                threads=threads,
            )
            result, written = run_fit(run_config)

            label = STRUCTURE_LABELS[result.spec.working_corr.structure]
            table = Table(title=f"beta_hat ({label}, alpha={result.alpha:.4f})")
            table.add_column("coefficient")
            table.add_column("estimate", justify="right")
            table.add_column("robust SE", justify="right")
            for k, name in enumerate(run_config.linear):
                table.add_row(name, f"{result.beta[k]:.6f}", f"{result.standard_errors[k]:.6f}")
            self.console.print(table)
            for comp in result.components:
                self.console.print(f"component {comp.component + 1}: N^S = {comp.plan.selected}")
            for path in written.values():
                self.console.print(f"[green]wrote[/green] {path}")

        self._run(action, verbose)

    def simulate(
        self,
        example: Union[int, str] = 1,
        n: Optional[int] = None,
        m: Optional[int] = None,
        nsim: int = 100,
        correlation: str = "ex",
        seed: int = 0,
        level: float = 0.95,
        degree: int = 3,
        alpha: Optional[float] = None,
        out: str = "sgee-sim",
        threads: Optional[int] = None,
        verbose: bool = False,
    ):
        """Run the Monte Carlo study for example 1 (gaussian) or 2 (binary).

        Options:
            --example: 1 or 2
            --n / --m: Clusters and cluster size (example 2 defaults m to floor(2 sqrt(n)))
            --nsim: Number of replications
            --correlation: ind, ex, ar1 or all
            --seed: Base seed; replication r uses the stream derived from (seed, r)
            --out: Output directory for mc_report.json and mc_table.txt
            --threads: Worker processes (default: all cores)

        Examples:
            sgee simulate --example 1 --n 250 --m 20 --nsim 200 --correlation ex
            sgee simulate --example 2 --n 100 --nsim 2 --correlation all
        """

        def action():
            example_cfg = _example_config(example, n, m, seed)
            structures = STRUCTURES if correlation == "all" else (correlation,)
            workers = resolve_threads(threads)
            reports = []
            with Progress(
                SpinnerColumn(),
                TextColumn("[progress.description]{task.description}"),
                BarColumn(),
                TextColumn("[progress.percentage]{task.percentage:>3.0f}%"),
                console=self.error_console,
            ) as progress:
                for structure in structures:
                    estimator = EstimatorConfig(
                        structure=structure, degree=degree, alpha=alpha, level=level
                    )
                    label = f"{example_cfg.name} {STRUCTURE_LABELS[structure]}"
                    task = progress.add_task(label, total=nsim)
                    reports.append(
                        run_monte_carlo(
                            example_cfg,
                            estimator,
                            nsim,
                            seed=seed,
                            threads=workers,
                            on_replication=lambda _, task=task: progress.advance(task),
                        )
                    )
            written = write_mc_outputs(reports, out)
            for report in reports:
                self.console.print(
                    f"{STRUCTURE_LABELS[report.structure]}: "
                    f"{report.n_used}/{report.nsim} replications in {report.wall_time:.1f}s"
                )
            for path in written.values():
                self.console.print(f"[green]wrote[/green] {path}")
            for report in reports:
                report.validate()

        self._run(action, verbose)


def main():
    """Main entry point for the CLI."""
    fire.Fire(Cli)


if __name__ == "__main__":
    main()
