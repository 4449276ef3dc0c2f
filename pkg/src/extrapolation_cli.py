"""
Command-line front end for the extrapolation certificates.

Usage (from the repository root):
    python -m src.extrapolation_cli discrete-bound --joint-p p.txt --joint-q q.txt
    python -m src.extrapolation_cli mehler-check --rho 0.9 --n 60
    python -m src.extrapolation_cli experiment --config exp.cfg --seed 7 --output-dir runs/

Exit codes: 0 success, 1 invalid input or usage, 2 numerical failure.
"""

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np

from config.extrap_config import ExtrapConfig, load_config
from src.extrapolation_discrete import (
    CONNECTIVITY_EIG_TOL,
    AdditiveCoefficientsDiscrete,
    build_kernel,
    check_prop1,
    discrete_bound_certificate,
    exact_rer_discrete_witness,
    is_connected,
    normalized_eigenvalues,
)
from src.extrapolation_errors import (
    ExtrapolationError,
    InvalidInput,
    IoError,
    NumericalFailure,
)
from src.extrapolation_experiments import (
    ExperimentConfig,
    ablation_sweep,
    compare_models,
    structured_bound,
    train,
    write_run_csv,
    write_summary_csv,
)
from src.extrapolation_gaussian import (
    exact_kappa_certificate,
    lemma3_check,
    lemma4_check,
    lemma5_check,
    random_admissible_sigma12,
    random_correlation,
    rer_bound_pairwise,
    two_block_certificate,
)
from src.extrapolation_hermite import MEHLER_RHOS, HermiteBasis, density_recovery_error, mehler_grid_error
from src.extrapolation_lowerbound import build_witness, equator_band, north_pole
from src.extrapolation_numerics import lambda_min
from src.extrapolation_reader import (
    read_block_spec,
    read_correlation_spec,
    read_joint,
    read_key_value_config,
    read_label_table,
    read_points,
    read_vector,
)
from src.extrapolation_report_writer import check_writable, emit_report

logger = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


class CliUsageError(InvalidInput):
    pass


class CertificateParser(argparse.ArgumentParser):
    """ArgumentParser that reports usage errors as exit code 1 instead of exiting."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise CliUsageError(message)


# ---------------------------------------------------------------------------
# 参数校验
# ---------------------------------------------------------------------------

def _input_file(path: Optional[str]) -> Optional[Path]:
    if path is None:
        return None
    p = Path(path)
    if not p.is_file():
        raise IoError(f"input file not found: {p}")
    return p


def _require_seed(args, command: str) -> int:
    if args.seed is None:
        raise CliUsageError(f"{command} is randomized and requires an explicit --seed")
    return args.seed


def _output_dir(path: Optional[str], default: str) -> Path:
    out = Path(path or default)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise IoError(f"cannot create output directory {out}: {e}") from e
    return out


# ---------------------------------------------------------------------------
# 子命令
# ---------------------------------------------------------------------------

def cmd_discrete_bound(args, settings: ExtrapConfig) -> Dict[str, object]:
    P = read_joint(_input_file(args.joint_p))
    Q = read_joint(_input_file(args.joint_q))
    cert = discrete_bound_certificate(P, Q, null_tol=settings.null_tol)
    exact = exact_rer_discrete_witness(P, Q).value
    return {
        "bound": cert.bound,
        "exact": exact,
        "certificate": cert.certificate,
        "eigenvalue_name": cert.eigenvalue_name,
        "eigenvalue": cert.eigenvalue,
        "marginal_ratio": cert.marginal_ratio,
        "k": cert.k,
    }


def cmd_discrete_exact(args, settings: ExtrapConfig) -> Dict[str, object]:
    P = read_joint(_input_file(args.joint_p))
    Q = read_joint(_input_file(args.joint_q))
    witness = exact_rer_discrete_witness(P, Q)
    result = {"exact": witness.value, "infinite": witness.infinite}
    if witness.vector is not None:
        result["witness"] = witness.vector
    return result


def cmd_discrete_connectivity(args, settings: ExtrapConfig) -> Dict[str, object]:
    P = read_joint(_input_file(args.joint_p))
    connected = is_connected(P)
    eigs = normalized_eigenvalues(build_kernel(P))
    lam2 = float(eigs[1]) if eigs.shape[0] > 1 else 0.0
    return {
        "connected": connected,
        "lambda_2": lam2,
        "spectral_connected": lam2 > CONNECTIVITY_EIG_TOL,
        "agrees": connected == (lam2 > CONNECTIVITY_EIG_TOL),
    }


def cmd_prop1_check(args, settings: ExtrapConfig) -> Dict[str, object]:
    P = read_joint(_input_file(args.joint_p))
    Q = read_joint(_input_file(args.joint_q))
    y = read_label_table(_input_file(args.labels), P.arities)
    fstar = AdditiveCoefficientsDiscrete(read_vector(_input_file(args.fstar)))
    f = AdditiveCoefficientsDiscrete(read_vector(_input_file(args.f)))
    report = check_prop1(P, Q, y, fstar, f)
    result = {
        "eps_f": report.eps_f,
        "tau": report.tau,
        "p_error": report.p_error,
        "q_error": report.lhs,
        "rhs": report.rhs,
        "holds": report.holds,
    }
    if not report.holds:
        emit_report(result, args.format, args.output)
        raise NumericalFailure("loss transfer inequality violated")
    return result


def cmd_gaussian_bound_pairwise(args, settings: ExtrapConfig) -> Dict[str, object]:
    P = read_correlation_spec(_input_file(args.spec))
    return {
        "bound": rer_bound_pairwise(P),
        "d": P.d,
        "lambda_min": lambda_min(P.Sigma),
        "certificate": "d / lambda_min(Sigma_P)",
    }


def cmd_gaussian_bound_block(args, settings: ExtrapConfig) -> Dict[str, object]:
    B = read_block_spec(_input_file(args.spec))
    cert = two_block_certificate(B)
    return {
        "bound": cert.bound,
        "sigma_max": cert.sigma_max,
        "lambda_min_block": cert.lambda_min_block,
        "block_gap": cert.block_gap,
        "certificate": "2 / (1 - sigma_max(Sigma12))",
    }


def cmd_gaussian_exact_kappa(args, settings: ExtrapConfig) -> Dict[str, object]:
    P = read_correlation_spec(_input_file(args.spec_p))
    Q = read_correlation_spec(_input_file(args.spec_q))
    n = settings.kappa_truncation if args.n is None else args.n
    cert = exact_kappa_certificate(
        P, Q, n,
        null_tol=settings.null_tol,
        infinite_tol=settings.infinite_tol,
        psd_tol=settings.psd_tol,
    )
    return {
        "exact": cert.kappa,
        "bound": rer_bound_pairwise(P),
        "argmax_level": cert.argmax_level,
        "stop_level": cert.stop_level,
        "early_stop": cert.early_stop,
        "tail_bound": cert.tail_bound,
    }


def cmd_mehler_check(args, settings: ExtrapConfig) -> Dict[str, object]:
    n = settings.hermite_truncation if args.n is None else args.n
    rhos = MEHLER_RHOS if args.rho is None else tuple(args.rho)
    frame = mehler_grid_error(
        rhos, n, args.grid, args.half_width,
        basis=HermiteBasis(settings.hermite_max_order),
        max_abs_rho=settings.max_abs_rho,
    )
    density = max(density_recovery_error(rho, args.grid, args.half_width, settings.max_abs_rho) for rho in rhos)
    worst = frame.loc[frame["max_error"].idxmax()]
    result = {
        "rhos": list(rhos),
        "n": n,
        "max_error": float(frame["max_error"].max()),
        "tail_bound": float(worst["tail_bound"]),
        "density_error": density,
        "passed": bool(frame["passed"].all()) and density <= 1e-10,
    }
    if not result["passed"]:
        emit_report(result, args.format, args.output)
        raise NumericalFailure("Mehler series check failed")
    return result


def cmd_lemma_checks(args, settings: ExtrapConfig) -> Dict[str, object]:
    seed = _require_seed(args, "lemma-checks")
    rng = np.random.default_rng(seed)
    passed3 = passed4 = passed5 = 0
    max_gap = 0.0
    dims = (2, 4, 8)
    for i in range(args.instances):
        Sigma = random_correlation(dims[i % len(dims)], rng, min_eig=0.0)
        passed3 += lemma3_check(Sigma, args.k_max).passed
        S12 = random_admissible_sigma12(args.dim, args.dim, rng)
        passed4 += lemma4_check(S12)
        report5 = lemma5_check(S12)
        passed5 += report5.passed
        max_gap = max(max_gap, report5.values[2])
    result = {
        "instances": args.instances,
        "power_passed": passed3,
        "sigma_max_passed": passed4,
        "block_gap_passed": passed5,
        "max_block_gap": max_gap,
        "all_passed": passed3 == passed4 == passed5 == args.instances,
    }
    if not result["all_passed"]:
        emit_report(result, args.format, args.output)
        raise NumericalFailure("a block or elementwise-power check failed")
    return result


def cmd_lowerbound_witness(args, settings: ExtrapConfig) -> Dict[str, object]:
    if args.p_points and args.q_points:
        P = read_points(_input_file(args.p_points))
        Q = read_points(_input_file(args.q_points))
    elif args.p_points or args.q_points:
        raise CliUsageError("give both --p-points and --q-points, or neither")
    else:
        seed = _require_seed(args, "lowerbound-witness (generated points)")
        P = equator_band(args.n_points, args.dim, seed)
        Q = north_pole(args.dim)
    _, report = build_witness(P, Q, args.eps, args.scale)
    return {
        "n_centers": report.n_centers,
        "eps": report.eps,
        "scale": report.scale,
        "max_abs_on_p": report.max_abs_on_p,
        "min_on_q": report.min_on_q,
        "mean_sq_on_q": report.mean_sq_on_q,
    }


def _experiment_config(args) -> ExperimentConfig:
    values = read_key_value_config(_input_file(args.config)) if args.config else {}
    values["seed"] = str(_require_seed(args, args.command))
    return ExperimentConfig.from_mapping(values)


def cmd_experiment(args, settings: ExtrapConfig) -> Dict[str, object]:
    config = _experiment_config(args)
    out_dir = _output_dir(args.output_dir, settings.output_dir)
    structured, unstructured = compare_models(config)
    write_run_csv(structured, out_dir / "structured.csv")
    write_run_csv(unstructured, out_dir / "unstructured.csv")
    write_summary_csv([structured, unstructured], out_dir / "summary.csv")
    return {
        "structured_id": structured.final_id,
        "structured_ood": structured.final_ood,
        "structured_ratio": structured.ratio,
        "unstructured_id": unstructured.final_id,
        "unstructured_ood": unstructured.final_ood,
        "unstructured_epochs": unstructured.epochs[-1],
        "ood_advantage": unstructured.final_ood / structured.final_ood,
        "bound": structured_bound(config),
        "output_dir": str(out_dir),
    }


def _parse_list(text: str) -> List[str]:
    return [tok.strip() for tok in text.split(",") if tok.strip()]


def cmd_ablation(args, settings: ExtrapConfig) -> Dict[str, object]:
    config = _experiment_config(args)
    if bool(args.widths) == bool(args.regs):
        raise CliUsageError("give exactly one of --widths or --regs")
    if args.widths:
        try:
            settings_list = [{"hidden_unstructured": int(w)} for w in _parse_list(args.widths)]
        except ValueError:
            raise CliUsageError(f"--widths must be integers, got {args.widths!r}") from None
    else:
        settings_list = []
        for reg in _parse_list(args.regs):
            parsed = ExperimentConfig.from_mapping({"reg": reg})
            settings_list.append({"reg": parsed.reg, "reg_lambda": parsed.reg_lambda})
    out_dir = _output_dir(args.output_dir, settings.output_dir)
    reports = ablation_sweep(settings_list, config, threads=settings.threads)
    # unregularized structured reference on the same seed's data
    structured = train("structured", replace(config, reg="none", reg_lambda=0.0))
    for i, report in enumerate(reports):
        write_run_csv(report, out_dir / f"run_{i}.csv")
    write_run_csv(structured, out_dir / "structured.csv")
    write_summary_csv([structured] + reports, out_dir / "summary.csv")
    return {
        "runs": len(reports),
        "final_id": [r.final_id for r in reports],
        "final_ood": [r.final_ood for r in reports],
        "structured_id": structured.final_id,
        "structured_ood": structured.final_ood,
        "ood_above_structured": all(r.final_ood > structured.final_ood for r in reports),
        "output_dir": str(out_dir),
    }


COMMANDS: Dict[str, Callable] = {
    "discrete-bound": cmd_discrete_bound,
    "discrete-exact": cmd_discrete_exact,
    "discrete-connectivity": cmd_discrete_connectivity,
    "prop1-check": cmd_prop1_check,
    "gaussian-bound-pairwise": cmd_gaussian_bound_pairwise,
    "gaussian-bound-block": cmd_gaussian_bound_block,
    "gaussian-exact-kappa": cmd_gaussian_exact_kappa,
    "mehler-check": cmd_mehler_check,
    "lemma-checks": cmd_lemma_checks,
    "lowerbound-witness": cmd_lowerbound_witness,
    "experiment": cmd_experiment,
    "ablation": cmd_ablation,
}


def build_parser() -> CertificateParser:
    common = CertificateParser(add_help=False)
    common.add_argument("--format", choices=("text", "csv"), default="text", help="report format")
    common.add_argument("--output", help="write the report here instead of stdout")
    common.add_argument("--verbose", action="store_true", help="log progress to stderr")
    common.add_argument("--settings", help="YAML file with numerical defaults (config/extrap_config.yaml)")
    common.add_argument("--seed", type=int, help="seed; required by randomized subcommands")

    parser = CertificateParser(prog="extrapolation-cert", description="Extrapolation error ratio certificates")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("discrete-bound", parents=[common], help="spectral bound and exact ratio for discrete joints")
    p.add_argument("--joint-p", required=True)
    p.add_argument("--joint-q", required=True)

    p = sub.add_parser("discrete-exact", parents=[common], help="exact ratio for discrete joints")
    p.add_argument("--joint-p", required=True)
    p.add_argument("--joint-q", required=True)

    p = sub.add_parser("discrete-connectivity", parents=[common], help="bipartite connectivity vs lambda_2")
    p.add_argument("--joint-p", required=True)

    p = sub.add_parser("prop1-check", parents=[common], help="loss transfer inequality on a discrete instance")
    p.add_argument("--joint-p", required=True)
    p.add_argument("--joint-q", required=True)
    p.add_argument("--labels", required=True, help="label table y(x) in the joint format")
    p.add_argument("--fstar", required=True, help="coefficients of the reference additive model")
    p.add_argument("--f", required=True, help="coefficients of the evaluated additive model")

    p = sub.add_parser("gaussian-bound-pairwise", parents=[common], help="d / lambda_min bound")
    p.add_argument("--spec", required=True)

    p = sub.add_parser("gaussian-bound-block", parents=[common], help="2 / (1 - sigma_max) bound")
    p.add_argument("--spec", required=True)

    p = sub.add_parser("gaussian-exact-kappa", parents=[common], help="exact level-wise ratio")
    p.add_argument("--spec-p", required=True)
    p.add_argument("--spec-q", required=True)
    p.add_argument("--n", type=int, help="truncation level (default from settings)")

    p = sub.add_parser("mehler-check", parents=[common], help="Mehler series vs closed form")
    p.add_argument("--rho", type=float, action="append", help="correlation (repeatable)")
    p.add_argument("--n", type=int, help="series truncation (default from settings)")
    p.add_argument("--grid", type=int, default=25)
    p.add_argument("--half-width", type=float, default=3.0)

    p = sub.add_parser("lemma-checks", parents=[common], help="elementwise-power and block-matrix lemmas")
    p.add_argument("--instances", type=int, default=50)
    p.add_argument("--k-max", type=int, default=6)
    p.add_argument("--dim", type=int, default=4)

    p = sub.add_parser("lowerbound-witness", parents=[common], help="bump-network witness")
    p.add_argument("--p-points")
    p.add_argument("--q-points")
    p.add_argument("--eps", type=float, default=0.5)
    p.add_argument("--scale", type=float, default=10.0)
    p.add_argument("--n-points", type=int, default=500)
    p.add_argument("--dim", type=int, default=3)

    p = sub.add_parser("experiment", parents=[common], help="structured vs unstructured training")
    p.add_argument("--config", help="key = value experiment config")
    p.add_argument("--output-dir")

    p = sub.add_parser("ablation", parents=[common], help="width or regularization sweep")
    p.add_argument("--config", help="key = value experiment config")
    p.add_argument("--widths", help="comma-separated unstructured widths")
    p.add_argument("--regs", help="comma-separated regularizers, e.g. none,l1(1e-4),l2(1e-4)")
    p.add_argument("--output-dir")
    return parser


def run(argv: Optional[List[str]] = None) -> int:
    """Parse ``argv``, run one subcommand, return the exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except CliUsageError:
        return 1
    except SystemExit as e:
        # --help
        return int(e.code or 0)

    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format=LOG_FORMAT)
    try:
        if args.output:
            check_writable(args.output)
        settings = load_config(_input_file(args.settings)) if args.settings else load_config()
        result = COMMANDS[args.command](args, settings)
        emit_report(result, args.format, args.output)
    except CliUsageError as e:
        logger.debug(f"usage error: {e}")
        parser.print_usage(sys.stderr)
        sys.stderr.write(f"error: {e}\n")
        return 1
    except ExtrapolationError as e:
        sys.stderr.write(f"error: {type(e).__name__}: {e}\n")
        return e.exit_code
    return 0


def main():
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
