# workbench.py

"""
Command-line entry point.

    python workbench.py admissible --b 4 --bound 10 --seed 7
    python workbench.py kam-run --config run.toml
    python workbench.py measure --config run.toml --threads 4

Every subcommand reads an optional TOML run config, applies its flags on
top, runs one module pipeline and writes its report through emit_report.
Failures print a JSON error object and exit 1.
"""

import json
import logging
import os
import sys
from typing import Any, Optional

import click
from dotenv import load_dotenv

# Load environment variables
load_dotenv()

from tools.config import RunConfig, get_settings, load_run_config
from tools.errors import ConfigError, WorkbenchError
from report_utils.report_writer import emit_report

logger = logging.getLogger("cli")


def _setup_logging():
    settings = get_settings()
    os.makedirs(settings.log_dir, exist_ok=True)
    logging.basicConfig(
        level=logging.INFO,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        handlers=[
            logging.FileHandler(os.path.join(settings.log_dir, "workbench.log"), encoding="utf-8"),
            logging.StreamHandler(),
        ],
    )


def _config(ctx: click.Context, **overrides) -> RunConfig:
    return load_run_config(ctx.obj.get("config"), overrides)


def _output(cfg: RunConfig, default_name: str, fmt: str) -> str:
    if cfg.output:
        return cfg.output
    return os.path.join(get_settings().output_dir, f"{default_name}.{fmt}")


def _tangential(cfg: RunConfig):
    from tools.lattice_resonance import TangentialSet, search_admissible

    if cfg.sites is not None:
        return TangentialSet(tuple(cfg.sites))
    return search_admissible(cfg.b, cfg.site_bound, cfg.seed)


def _parameters(cfg: RunConfig, S):
    from tools.normal_form import Parameters

    if cfg.xi is None:
        raise ConfigError("xi is required for this command", {"b": S.b})
    if len(cfg.xi) != S.b:
        raise ConfigError("xi and sites must have the same length", {"xi": cfg.xi, "b": S.b})
    return Parameters(tuple(cfg.xi), cfg.eps, tuple(cfg.box))


def _emit(report: Any, cfg: RunConfig, name: str, fmt: str, columns=None):
    path = emit_report(report, fmt, _output(cfg, name, fmt), columns)
    click.echo(f"[OK] {name} report written: {path}")


# ---------- Group ----------

@click.group()
@click.option("--config", "config_path", type=click.Path(), default=None, help="TOML run config")
@click.pass_context
def cli(ctx: click.Context, config_path: Optional[str]):
    """KAM workbench for the 2D cubic NLS"""
    ctx.ensure_object(dict)
    ctx.obj["config"] = config_path


@cli.command()
@click.option("--b", type=int, default=None, help="number of tangential sites")
@click.option("--bound", "site_bound", type=int, default=None, help="search disc |n| <= bound")
@click.option("--seed", type=int, default=None)
@click.option("--check-bound", type=int, default=None, help="brute-force cross-check radius")
@click.option("--output", type=click.Path(), default=None)
@click.pass_context
def admissible(ctx, b, site_bound, seed, check_bound, output):
    """Search for (or verify) an admissible tangential set"""
    from tools.lattice_resonance import verify_admissible

    cfg = _config(ctx, b=b, site_bound=site_bound, seed=seed, check_bound=check_bound, output=output)
    S = _tangential(cfg)
    report = verify_admissible(S, cfg.check_bound)
    click.echo(f"[INFO] S = {S.to_list()}  verdict = {report.verdict.value}")
    _emit({"sites": S.to_list(), "certificate": report}, cfg, "admissible", "json")


@cli.command()
@click.option("--mode-bound", type=int, default=None, help="classify normal sites with |n| <= bound")
@click.option("--Delta", "Delta", type=int, default=None)
@click.option("--output", type=click.Path(), default=None)
@click.pass_context
def resonances(ctx, mode_bound, Delta, output):
    """Classify normal sites into first- and second-type pairs and blocks"""
    from tools.lattice_resonance import block_partition, classify_sites, galerkin_disc

    cfg = _config(ctx, mode_bound=mode_bound, Delta=Delta, output=output)
    S = _tangential(cfg)
    normal = [n for n in galerkin_disc(cfg.mode_bound) if n not in S]
    L1, L2 = classify_sites(normal, S)
    plain = [n for n in normal if n not in L1 and n not in L2]
    report = {
        "S": S.to_list(),
        "first_type": [L1[n].to_dict() for n in sorted(L1)],
        "second_type": [L2[n].to_dict() for n in sorted(L2)],
        "blocks": [blk.to_dict() for blk in block_partition(plain, cfg.Delta)],
    }
    click.echo(f"[INFO] {len(L1)} first-type and {len(L2)} second-type sites out of {len(normal)}")
    _emit(report, cfg, "resonances", "json")


@cli.command("normal-form")
@click.option("--eps", type=float, default=None)
@click.option("--mode-bound", type=int, default=None)
@click.option("--degree-bound", type=int, default=None)
@click.option("--output", type=click.Path(), default=None)
@click.option("--series", "series_path", type=click.Path(), default=None, help="also write P as JSON lines")
@click.pass_context
def normal_form(ctx, eps, mode_bound, degree_bound, output, series_path):
    """Build the Birkhoff normal form and the frequency checks"""
    from tools.normal_form import build_normal_form, check_A1_A2

    cfg = _config(ctx, eps=eps, mode_bound=mode_bound, degree_bound=degree_bound, output=output)
    S = _tangential(cfg)
    p = _parameters(cfg, S)
    state, P = build_normal_form(p, S, cfg.mode_bound, cfg.degree_bound)
    report = {"state": state, "frequencies": state.frequency_map(), "checks": check_A1_A2(p, S),
              "perturbation_terms": len(P)}
    if series_path:
        with open(series_path, "w", encoding="utf-8", newline="") as f:
            f.write(P.to_jsonl())
        click.echo(f"[OK] perturbation series written: {series_path}")
    _emit(report, cfg, "normal_form", "json")


def _kam_start(cfg: RunConfig):
    from tools.kam_engine import initial_state
    from tools.normal_form import build_normal_form

    S = _tangential(cfg)
    p = _parameters(cfg, S)
    normal, P = build_normal_form(p, S, cfg.mode_bound, cfg.degree_bound)
    return initial_state(normal, P, r=cfg.r, s=cfg.s if cfg.s is not None else 1.0, K0=cfg.K0,
                         gamma=cfg.gamma, tau=cfg.tau, Delta=cfg.Delta, rho=cfg.rho)


@cli.command("kam-run")
@click.option("--steps", type=int, default=None)
@click.option("--K0", "K0", type=int, default=None)
@click.option("--gamma", type=float, default=None)
@click.option("--tau", type=float, default=None)
@click.option("--format", "fmt", type=click.Choice(["csv", "json"]), default="csv")
@click.option("--output", type=click.Path(), default=None)
@click.pass_context
def kam_run(ctx, steps, K0, gamma, tau, fmt, output):
    """Run the KAM iteration and write one row per step"""
    from tools.kam_engine import StepReport, contraction_exponent, iterate, smallness_margin

    cfg = _config(ctx, steps=steps, K0=K0, gamma=gamma, tau=tau, output=output)
    state0 = _kam_start(cfg)
    margin = smallness_margin(state0)
    if not margin["satisfied"]:
        click.echo(f"[WARN] eps0 = {margin['eps']:.3e} is above the smallness threshold {margin['threshold']:.3e}")
    result = iterate(state0, cfg.steps)
    exponent = contraction_exponent(result.reports)
    if result.aborted:
        click.echo(f"[WARN] iteration aborted: {result.aborted['error']}")
    click.echo(f"[INFO] {len(result.reports)} steps, contraction exponent {exponent}")
    if fmt == "csv":
        _emit(result.reports, cfg, "kam_run", "csv", columns=list(StepReport.model_fields))
    else:
        _emit({"steps": result.reports, "final": result.state.summary(), "aborted": result.aborted,
               "contraction_exponent": exponent, "smallness": margin}, cfg, "kam_run", "json")


@cli.command()
@click.option("--samples", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--K0", "K0", type=int, default=None, help="largest |k| in the resonant sets")
@click.option("--tau", type=float, default=None)
@click.option("--threads", type=int, default=None)
@click.option("--format", "fmt", type=click.Choice(["csv", "json"]), default="csv")
@click.option("--output", type=click.Path(), default=None)
@click.pass_context
def measure(ctx, samples, seed, K0, tau, threads, fmt, output):
    """Monte-Carlo excluded measure over the configured gammas"""
    from tools.errors import FitError
    from tools.measure_estimator import ExclusionSampler, gamma_scaling_fit

    cfg = _config(ctx, samples=samples, seed=seed, K0=K0, tau=tau, threads=threads, output=output)
    S = _tangential(cfg)
    sampler = ExclusionSampler(S, cfg.eps, tuple(cfg.box), cfg.mode_bound, cfg.Delta, threads=cfg.threads,
                               progress=True)
    gammas = sorted(set([0.0] + list(cfg.gammas)))
    estimates = [sampler.excluded_measure(g, cfg.K0, cfg.tau, cfg.samples, cfg.seed) for g in gammas]
    try:
        exponent, constant = gamma_scaling_fit([e for e in estimates if e.gamma > 0])
        click.echo(f"[INFO] fraction ~ {constant:.3e} * gamma^{exponent:.3f}")
    except FitError as e:
        click.echo(f"[WARN] {e.message}")
    if fmt == "csv":
        _emit(estimates, cfg, "measure", "csv",
              columns=["gamma", "K", "tau", "fraction", "ci95", "samples", "seed", "shell_fractions"])
    else:
        _emit(estimates, cfg, "measure", "json")


@cli.command()
@click.option("--T", "T", type=float, default=None, help="integration time")
@click.option("--dt", type=float, default=None)
@click.option("--steps", type=int, default=None)
@click.option("--lines", type=int, default=50, help="lines for the Toplitz-Lipschitz check")
@click.option("--output", type=click.Path(), default=None)
@click.pass_context
def validate(ctx, T, dt, steps, lines, output):
    """Extract the torus, integrate the Galerkin ODE and run the Toplitz-Lipschitz check"""
    from tools.kam_engine import iterate, toeplitz_check
    from tools.torus import extract_torus, ode_validate

    cfg = _config(ctx, T=T, dt=dt, steps=steps, output=output)
    state0 = _kam_start(cfg)
    result = iterate(state0, cfg.steps)
    torus = extract_torus(result.state)
    ode = ode_validate(torus, cfg.mode_bound, cfg.T, cfg.dt)
    toeplitz = toeplitz_check(result.state.normal, result.state.P, result.state.K, lines, cfg.seed,
                              eps=result.state.eps, rho=result.state.rho)
    if ode.energy_drift > 1e-8:
        click.echo(f"[WARN] energy drift {ode.energy_drift:.2e}")
    if not toeplitz.envelope_holds:
        click.echo(f"[WARN] Toplitz-Lipschitz rate {toeplitz.rate_constant:.2e} above {toeplitz.envelope_bound:.2e}")
    _emit({"torus": torus, "ode": ode, "toeplitz": toeplitz, "steps": result.reports}, cfg, "validate", "json")


@cli.command()
@click.option("--stats", is_flag=True, help="print the ledger statistics as JSON")
@click.option("--clear", is_flag=True, help="clear the ledger")
def debug(stats, clear):
    """Show the small-divisor ledger"""
    from debug_tools.divisor_debugger import divisor_debugger

    if clear:
        divisor_debugger.clear()
        click.echo("[OK] divisor ledger cleared")
    elif stats:
        click.echo(json.dumps(divisor_debugger.get_divisor_stats(), indent=2, sort_keys=True))
    else:
        divisor_debugger.print_debug_info()


def dispatch(argv=None) -> int:
    """Run one subcommand; returns the exit status"""
    _setup_logging()
    try:
        status = cli.main(args=argv, prog_name="workbench", standalone_mode=False)
        return status if isinstance(status, int) else 0
    except click.ClickException as e:
        e.show()
        return e.exit_code
    except click.exceptions.Exit as e:
        return e.exit_code
    except click.exceptions.Abort:
        click.echo("[ERROR] aborted", err=True)
        return 1
    except WorkbenchError as e:
        logger.error(f"{e.module}/{e.condition}: {e.message}")
        click.echo(json.dumps(e.to_dict(), sort_keys=True))
        click.echo(f"[ERROR] {e.message}", err=True)
        return 1
    except ValueError as e:
        logger.error(str(e))
        click.echo(json.dumps({"success": False, "module": "cli", "condition": "invalid_argument",
                               "error": str(e), "details": {}}, sort_keys=True))
        return 1


if __name__ == "__main__":
    sys.exit(dispatch())
