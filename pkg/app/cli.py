"""
Командная строка: одна подкоманда на каждую операцию конвейера.

Индексы компонент (--j, --q, --target) в командной строке нумеруются с 1.
Коды выхода: 0 - успех, 1 - ошибка аргументов, 2 - ошибка данных или вычислений.
"""

import argparse
import logging
import os
import sys
from typing import Callable, Dict, List, Optional

import pandas as pd
from pydantic import ValidationError

from app.exceptions import DomainError, SimulationError
from app.schemas import JointSimConfig, RunConfig, SynthConfig
from app.sim.benchmarks import chi_measure, gumbel_sample
from app.sim.cond_sim import ConditioningEvent, conditional_simulate, validate_rejection_constant
from app.sim.extractors import parse_float_list, parse_grid
from app.sim.joint_sim import joint_simulate
from app.sim.margins import MarginKind, MarginTransformer, extract_excesses, select_threshold
from app.sim.mgp_core import check_positive_margin, differences, gaussian_difference_density, max_law_report
from app.sim.orchestrator import SimulationOrchestrator
from app.sim.risk_metrics import VarMethod
from config.sim_config import sim_config

logger = logging.getLogger(__name__)

VALIDATION_COLUMNS = ["check", "component", "statistic", "pvalue", "n", "passed"]


class UsageError(Exception):
    """Некорректная командная строка"""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _float_list(text: str) -> List[float]:
    try:
        return parse_float_list(text)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from e


def _grid(text: str):
    try:
        return parse_grid(text)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from e


def _zero_based(index: int, d: int, flag: str) -> int:
    if not 1 <= index <= d:
        raise IndexError(f"{flag}={index} вне диапазона 1..{d}")
    return index - 1


def _summary_path(output: str) -> str:
    stem, ext = os.path.splitext(output)
    return f"{stem}_summary{ext or '.csv'}"


def _load_or_fit(orchestrator: SimulationOrchestrator, args, data: pd.DataFrame) -> MarginTransformer:
    if args.margins:
        return orchestrator.extractor.extract_margins(args.margins)
    return MarginTransformer().fit(data, args.margin_kind)


# Подкоманды

def _cmd_synth(args, orchestrator: SimulationOrchestrator) -> int:
    cfg = SynthConfig(nu=args.nu, theta=args.theta, n=args.n, seed=orchestrator.seed)
    return orchestrator.writer.write_csv(gumbel_sample(cfg), args.output)


def _cmd_fit(args, orchestrator: SimulationOrchestrator) -> int:
    data = orchestrator.extractor.extract_risk_matrix(args.input)
    transformer = MarginTransformer().fit(data, args.margin_kind)
    if args.threshold_level is not None:
        transformer.threshold = select_threshold(transformer.transform(data), args.threshold_level)
    orchestrator.writer.write_json(transformer.to_document(), args.output)
    return len(transformer.models)


def _cmd_transform(args, orchestrator: SimulationOrchestrator) -> int:
    data = orchestrator.extractor.extract_risk_matrix(args.input)
    transformer = _load_or_fit(orchestrator, args, data)
    if transformer.threshold is not None and args.threshold_level is None:
        z_obs = extract_excesses(transformer.transform(data), transformer.threshold)
    else:
        z_obs = transformer.excesses(data, args.threshold_level)
    if args.save_margins:
        orchestrator.writer.write_json(transformer.to_document(), args.save_margins)
    return orchestrator.writer.write_csv(z_obs.to_frame(), args.output)


def _cmd_simulate_joint(args, orchestrator: SimulationOrchestrator) -> int:
    z_obs = orchestrator.extractor.extract_excesses(args.input)
    q = _zero_based(args.q, z_obs.d, "--q")
    z_sim = joint_simulate(z_obs, JointSimConfig(m=args.m, q=q, seed=orchestrator.seed))
    if args.margins:
        transformer = orchestrator.extractor.extract_margins(args.margins)
        if transformer.threshold is None:
            raise DomainError(f"В файле {args.margins} нет порога: сохраните его через fit --threshold-level")
        frame = transformer.inverse(z_sim)
    else:
        frame = z_sim.to_frame()
    return orchestrator.writer.write_csv(frame, args.output)


def _cmd_simulate_cond(args, orchestrator: SimulationOrchestrator) -> int:
    z_obs = orchestrator.extractor.extract_excesses(args.input)
    j = _zero_based(args.j, z_obs.d, "--j")
    q = _zero_based(args.q, z_obs.d, "--q") if args.q is not None else None
    event = ConditioningEvent(j, args.given, q)
    draws = conditional_simulate(differences(z_obs, event.q), event, args.m, orchestrator.seed,
                                 case1_method=args.case1_method)
    return orchestrator.writer.write_csv(pd.DataFrame({z_obs.columns[j]: draws}), args.output)


def _cmd_trm(args, orchestrator: SimulationOrchestrator) -> int:
    data = orchestrator.extractor.extract_risk_matrix(args.input)
    sim = orchestrator.extractor.extract_risk_matrix(args.sim)
    models = orchestrator.extractor.extract_margins(args.margins).models if args.margins else None
    target = _zero_based(args.target, data.shape[1], "--target")
    table = orchestrator.estimate_trms(data, sim, args.alpha, args.var_method, target, models)
    return orchestrator.writer.write_csv(table, args.output)


def _cmd_mu(args, orchestrator: SimulationOrchestrator) -> int:
    data = orchestrator.extractor.extract_risk_matrix(args.input)
    transformer = _load_or_fit(orchestrator, args, data)
    j = _zero_based(args.j, data.shape[1], "--j")
    q = _zero_based(args.q, data.shape[1], "--q") if args.q is not None else None
    table = orchestrator.estimate_conditional_mean(data, transformer, j, args.given, args.m, q,
                                                   args.threshold_level)
    return orchestrator.writer.write_csv(table, args.output)


def _cmd_experiment(args, orchestrator: SimulationOrchestrator) -> int:
    config = orchestrator.extractor.extract_experiment_config(args.config)
    if args.seed is None:
        orchestrator.seed = config.seed
    if args.kind == "conditional":
        result = orchestrator.run_conditional(config)
    else:
        result = orchestrator.run_full_pipeline(config)
    rows = orchestrator.writer.write_csv(result.results, args.output)
    orchestrator.writer.write_csv(result.summary, _summary_path(args.output))
    return rows


def _cmd_chi(args, orchestrator: SimulationOrchestrator) -> int:
    data = orchestrator.extractor.extract_risk_matrix(args.input)
    return orchestrator.writer.write_csv(chi_measure(data, args.grid), args.output)


def _cmd_validate(args, orchestrator: SimulationOrchestrator) -> int:
    z_obs = orchestrator.extractor.extract_excesses(args.input)
    rows = []
    for k, column in enumerate(z_obs.columns):
        report = check_positive_margin(z_obs.data[:, k])
        rows.append({"check": "positive_margin", "component": column, "statistic": report.statistic,
                     "pvalue": report.pvalue, "n": report.n_positive, "passed": report.passed()})

    report = max_law_report(z_obs)
    rows.append({"check": "max_law", "component": "max", "statistic": report.statistic,
                 "pvalue": report.pvalue, "n": report.n_positive, "passed": report.passed()})

    if args.corr:
        if args.j is None or args.given is None:
            raise DomainError("Проверка отбора требует --j и --given вместе с --corr")
        corr = orchestrator.extractor.extract_correlation(args.corr)
        j = _zero_based(args.j, corr.shape[0], "--j")
        q = _zero_based(args.q, corr.shape[0], "--q") if args.q is not None else None
        event = ConditioningEvent(j, args.given, q)
        rejection = validate_rejection_constant(event, gaussian_difference_density(corr, event.q),
                                                m=args.m, seed=orchestrator.seed)
        rows.append({"check": f"rejection_{rejection.case.value}", "component": z_obs.columns[j],
                     "statistic": rejection.total_variation, "pvalue": None, "n": args.m,
                     "passed": rejection.passed})

    return orchestrator.writer.write_csv(pd.DataFrame(rows, columns=VALIDATION_COLUMNS), args.output)


COMMANDS: Dict[str, Callable] = {
    "synth": _cmd_synth,
    "fit": _cmd_fit,
    "transform": _cmd_transform,
    "simulate-joint": _cmd_simulate_joint,
    "simulate-cond": _cmd_simulate_cond,
    "trm": _cmd_trm,
    "mu": _cmd_mu,
    "experiment": _cmd_experiment,
    "chi": _cmd_chi,
    "validate": _cmd_validate,
}

INPUT_FLAGS = ("input", "sim", "margins", "config", "corr")


# Парсер

def _add_common(parser: argparse.ArgumentParser, input_help: Optional[str] = "input CSV"):
    if input_help:
        parser.add_argument("--input", required=True, help=input_help)
    parser.add_argument("-o", "--output", required=True, help="output path")
    parser.add_argument("--seed", type=int, default=None, help=f"run seed (default {sim_config.DEFAULT_SEED})")


def _add_margin_source(parser: argparse.ArgumentParser):
    parser.add_argument("--margins", default=None, help="fitted margins JSON; fitted from --input when omitted")
    parser.add_argument("--margin-kind", default=MarginKind.STUDENT_T.value,
                        choices=[kind.value for kind in MarginKind])
    parser.add_argument("--threshold-level", type=float, default=None,
                        help=f"threshold quantile level (default {sim_config.THRESHOLD_LEVEL})")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="extremesim", description="Non-parametric MGP simulation and tail risk metrics")
    commands = parser.add_subparsers(dest="command", required=True, metavar="command")

    synth = commands.add_parser("synth", help="Student-t margins with a Gumbel copula")
    _add_common(synth, input_help=None)
    synth.add_argument("--nu", type=_float_list, required=True, help="degrees of freedom, e.g. 2,3,2.5")
    synth.add_argument("--theta", type=float, required=True)
    synth.add_argument("--n", type=int, required=True)

    fit = commands.add_parser("fit", help="fit marginal models and write them as JSON")
    _add_common(fit)
    fit.add_argument("--margin-kind", default=MarginKind.STUDENT_T.value, choices=[kind.value for kind in MarginKind])
    fit.add_argument("--threshold-level", type=float, default=None, help="also store the threshold vector")

    transform = commands.add_parser("transform", help="raw data to standard MGP excesses")
    _add_common(transform)
    _add_margin_source(transform)
    transform.add_argument("--save-margins", default=None, help="write margins and threshold as JSON")

    joint = commands.add_parser("simulate-joint", help="joint simulation from observed excesses")
    _add_common(joint)
    joint.add_argument("--m", type=int, default=sim_config.JOINT_M)
    joint.add_argument("--q", type=int, default=1, help="anchor component (1-based)")
    joint.add_argument("--margins", default=None, help="margins JSON with threshold: write on the original scale")

    cond = commands.add_parser("simulate-cond", help="conditional simulation of Z_j given the other components")
    _add_common(cond)
    cond.add_argument("--j", type=int, required=True, help="target component (1-based)")
    cond.add_argument("--q", type=int, default=None, help="anchor component (1-based)")
    cond.add_argument("--given", type=_float_list, required=True, help="z_{-j} in ascending component order")
    cond.add_argument("--m", type=int, default=sim_config.JOINT_M)
    cond.add_argument("--case1-method", default="tilted", choices=["subset", "tilted"])

    trm = commands.add_parser("trm", help="ES, MES and DCTE on Orig, Simu and Ext samples")
    _add_common(trm)
    trm.add_argument("--sim", required=True, help="simulated sample on the original scale")
    trm.add_argument("--alpha", type=float, required=True)
    trm.add_argument("--var-method", default=VarMethod.THEORETICAL.value, choices=[m.value for m in VarMethod])
    trm.add_argument("--margins", default=None, help="margins JSON, required for theoretical VaR")
    trm.add_argument("--target", type=int, default=1, help="target component (1-based)")

    mu = commands.add_parser("mu", help="conditional mean of X_j given x_{-j}")
    _add_common(mu)
    _add_margin_source(mu)
    mu.add_argument("--j", type=int, required=True, help="target component (1-based)")
    mu.add_argument("--q", type=int, default=None, help="anchor component (1-based)")
    mu.add_argument("--given", type=_float_list, required=True, help="x_{-j} on the original scale")
    mu.add_argument("--m", type=int, default=sim_config.JOINT_M)

    experiment = commands.add_parser("experiment", help="replicated simulation study")
    _add_common(experiment, input_help=None)
    experiment.add_argument("--config", required=True, help="experiment JSON")
    experiment.add_argument("--kind", default="trm", choices=["trm", "conditional"])
    experiment.add_argument("--threads", type=int, default=None, help="worker threads (EXTREMESIM_THREADS)")
    experiment.add_argument("--keep-intermediates", default=None, metavar="DIR",
                            help="dump pipeline stages and a run report to DIR")

    chi = commands.add_parser("chi", help="empirical chi measure curve")
    _add_common(chi)
    chi.add_argument("--grid", type=_grid, required=True, help="start:stop:count")

    validate = commands.add_parser("validate", help="goodness of fit checks for excesses")
    _add_common(validate)
    validate.add_argument("--corr", default=None, help="correlation CSV of a Gaussian-T model")
    validate.add_argument("--j", type=int, default=None, help="target component (1-based)")
    validate.add_argument("--q", type=int, default=None, help="anchor component (1-based)")
    validate.add_argument("--given", type=_float_list, default=None, help="z_{-j} in ascending component order")
    validate.add_argument("--m", type=int, default=50_000)

    return parser


def _run_config(args) -> RunConfig:
    inputs = [getattr(args, flag) for flag in INPUT_FLAGS if getattr(args, flag, None)]
    params = {key: value for key, value in vars(args).items()
              if key not in INPUT_FLAGS + ("command", "output", "seed")}
    seed = sim_config.DEFAULT_SEED if args.seed is None else args.seed
    return RunConfig(command=args.command, inputs=inputs, output=args.output, seed=seed, params=params)


def dispatch(argv: Optional[List[str]] = None) -> int:
    """Разбор аргументов и запуск одной подкоманды; возвращает код выхода"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return 1
    except SystemExit as e:
        return int(e.code or 0)

    try:
        run = _run_config(args)
        orchestrator = SimulationOrchestrator(
            seed=run.seed,
            threads=getattr(args, "threads", None),
            keep_dir=getattr(args, "keep_intermediates", None),
        )
        logger.info(f"Команда {run.command}: входы {run.inputs}, seed={run.seed}")
        rows = COMMANDS[run.command](args, orchestrator)
    except (SimulationError, ValidationError, IndexError, OSError) as e:
        name = e.name if isinstance(e, SimulationError) else type(e).__name__
        logger.error(f"Команда {args.command} завершилась ошибкой: {name}: {str(e)}")
        print(f"{name}: {e}", file=sys.stderr)
        return 2

    print(f"{run.command}: wrote {rows} rows to {run.output} (seed={orchestrator.seed})")
    return 0


def main() -> int:
    return dispatch(sys.argv[1:])
