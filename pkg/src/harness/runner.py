from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional
import json
import logging

import numpy as np

from src.config import OUTPUT_DIR
from src.conic.backend import CvxpyBackend
from src.conic.standard_form import dump_problem
from src.errors import ConfigError
from src.harness.config import ExperimentConfig
from src.harness.diagnostics import compute_energy, diagnose, max_deviation
from src.integrators.quadrature import QuadratureRule
from src.integrators.simulate import (
    Trajectory,
    simulate,
    simulate_forward_euler,
    simulate_multirate,
    simulate_successive_linearization,
    write_csv,
)
from src.linearize.bounds import check_multirate_soundness, check_soundness
from src.linearize.equivalence import check_equivalence
from src.linearize.jacobian import jacobian_linearize, linearize_multirate
from src.linearize.models import ApproximationPoint
from src.linearize.variational import variational_linearize
from src.models.benchmarks import (
    fpu_state_constraint_rows,
    make_free_particle,
    make_fpu,
    make_harmonic_oscillator,
    make_pendulum,
    make_quadcopter,
)
from src.models.systems import LagrangianSystem, MultiratePartition, Region, RegulationProblem
from src.records import DiagnosticsRecord, RunSummaryRecord, TimingEntry, TimingRecord
from src.rhocp.closed_loop import ClosedLoopRecord, mpc_closed_loop, multirate_mpc_closed_loop, offline_policy
from src.rhocp.delta import build_delta_dynamics
from src.rhocp.plants import MultiratePlant, SingleRatePlant
from src.rhocp.seed import initial_seed
from src.rhocp.socp import assemble_socp
from src.tubes.policy import TubePolicy

logger = logging.getLogger(__name__)

TEXTBOOK_DT = 0.01
TEXTBOOK_X0 = {
    "free_particle": (0.0, 1.0),
    "harmonic_oscillator": (1.0, 0.0),
    "pendulum": (0.5, 0.0),
}


@dataclass(frozen=True)
class Experiment:
    """Resolved benchmark: system, optional partition and regulation problem, and the step rule."""

    sys: LagrangianSystem
    rule: QuadratureRule
    partition: Optional[MultiratePartition] = None
    problem: Optional[RegulationProblem] = None
    x0: Optional[np.ndarray] = None
    region: Optional[Region] = None

    @property
    def micro_steps(self) -> int:
        return 1 if self.partition is None else self.partition.micro_steps


def build_experiment(config: ExperimentConfig, micro_steps: Optional[int] = None) -> Experiment:
    p = config.micro_steps[0] if micro_steps is None else micro_steps
    partition = problem = None
    if config.system == "quadcopter":
        sys, problem = make_quadcopter()
    elif config.system == "fpu":
        kwargs = {k: v for k, v in (("dt", config.dt), ("eta", config.eta), ("horizon", config.horizon)) if v is not None}
        sys, partition, problem = make_fpu(p, **kwargs)
    elif config.system == "custom":
        custom = config.custom_system
        sys = custom.build()
        partition = custom.build_partition(p)
    else:
        sys = {"free_particle": make_free_particle, "harmonic_oscillator": make_harmonic_oscillator, "pendulum": make_pendulum}[config.system]()

    if problem is not None:
        updates = {k: v for k, v in (("dt", config.dt), ("horizon", config.horizon), ("online_fraction", config.online_fraction)) if v is not None}
        problem = replace(problem, **updates)
    dt = config.dt or (problem.dt if problem is not None else TEXTBOOK_DT)

    if config.x0 is not None:
        x0 = np.asarray(config.x0, dtype=float)
    elif problem is not None and problem.x0 is not None:
        x0 = problem.x0
    elif config.system in TEXTBOOK_X0:
        x0 = np.asarray(TEXTBOOK_X0[config.system], dtype=float)
    else:
        x0 = np.zeros(sys.n_x)

    if config.system == "custom":
        region = config.custom_system.build_region()
    else:
        region = problem.online_region() if problem is not None else None
    return Experiment(sys=sys, rule=QuadratureRule(dt), partition=partition, problem=problem, x0=x0, region=region)


def build_plant(exp: Experiment, config: ExperimentConfig):
    if exp.partition is None or (exp.micro_steps == 1 and config.pipeline != "multirate-sweep"):
        return SingleRatePlant(exp.sys, exp.rule, config.linearization)
    return MultiratePlant(
        exp.sys,
        exp.partition,
        exp.rule,
        config.linearization,
        config.micro_bounds,
        micro_rows=fpu_state_constraint_rows() if config.system == "fpu" else None,
    )


class ExperimentRunner:
    def __init__(self, output_dir: Optional[Path] = None, backend: Optional[CvxpyBackend] = None):
        self.output_dir = Path(output_dir) if output_dir is not None else OUTPUT_DIR
        self.backend = backend

    def _out(self, config: ExperimentConfig) -> Path:
        out = Path(config.output_dir) if config.output_dir else self.output_dir / config.name
        out.mkdir(parents=True, exist_ok=True)
        return out

    def run(self, config: ExperimentConfig) -> RunSummaryRecord:
        out = self._out(config)
        logger.info("running %s pipeline %r on %s into %s", config.name, config.pipeline, config.system, out)
        handler = {
            "simulate": self.simulate,
            "linearize-compare": self.compare_linearizations,
            "mpc": self.mpc,
            "multirate-sweep": self.multirate_sweep,
        }[config.pipeline]
        artifacts, metrics = handler(config, out)
        summary = RunSummaryRecord(
            name=config.name,
            pipeline=config.pipeline,
            system=config.system,
            output_dir=str(out),
            artifacts=[str(a) for a in artifacts],
            metrics=metrics,
        )
        (out / "summary.json").write_text(summary.model_dump_json(indent=2))
        return summary

    # -----------------------
    # simulate
    # -----------------------
    def simulate(self, config: ExperimentConfig, out: Path):
        exp = build_experiment(config)
        sys, rule = exp.sys, exp.rule
        if exp.micro_steps > 1:
            return self._simulate_multirate(exp, config, out)

        u = np.zeros(sys.n_u) if config.control is None else np.asarray(config.control, dtype=float)
        controls = np.tile(u, (config.steps, 1))
        traj = simulate(sys, rule, exp.x0, controls, config.steps)
        artifacts = [traj.to_csv(out / "trajectory.csv")]
        metrics: Dict[str, float] = {"steps": float(traj.steps)}

        energy = {"variational": compute_energy(sys, traj)}
        if config.compare_euler:
            energy["successive"] = compute_energy(sys, simulate_successive_linearization(sys, rule, exp.x0, controls, config.steps))
            euler = simulate_forward_euler(sys, rule.dt, exp.x0, controls, config.steps)
            energy["euler"] = compute_energy(sys, euler)
            artifacts.append(self._energy_csv(out, rule.dt, energy))
        for name, trace in energy.items():
            metrics[f"energy_max_deviation_{name}"] = max_deviation(trace)

        record = diagnose(sys, traj, extra=metrics)
        artifacts.append(self._write_json(out / "diagnostics.json", record.model_dump_json(indent=2)))
        if traj.failure:
            logger.warning("simulation ended early: %s", traj.failure)
        return artifacts, record.extra

    def _simulate_multirate(self, exp: Experiment, config: ExperimentConfig, out: Path):
        part = exp.partition
        u = np.zeros(exp.sys.n_u) if config.control is None else np.asarray(config.control, dtype=float)
        u_s, u_f = part.split_u(u)
        u_macro = part.macro_control(u_s, [u_f] * part.micro_steps)
        x0 = part.macro_state(exp.x0)
        traj = simulate_multirate(exp.sys, part, exp.rule, x0, np.tile(u_macro, (config.steps, 1)), config.steps)
        macro = Trajectory(dt=traj.macro_dt, n_q=part.n_q, states=list(traj.single_rate_states()))
        energy = compute_energy(exp.sys, macro)
        artifacts = [traj.to_csv(out / "trajectory.csv")]
        metrics = {"steps": float(traj.steps), "energy_max_deviation_multirate": max_deviation(energy)}
        artifacts.append(self._write_json(out / "diagnostics.json", json.dumps({"energy": energy.tolist(), "extra": metrics}, indent=2)))
        return artifacts, metrics

    # -----------------------
    # linearize-compare
    # -----------------------
    def compare_linearizations(self, config: ExperimentConfig, out: Path):
        """Jacobian and variational models at matched anchors along an uncontrolled run, plus a soundness sample at the origin."""
        exp = build_experiment(config)
        plant = build_plant(exp, config)
        u_eq = plant.equilibrium()[1]
        states = plant.rollout(self._plant_x0(exp, plant), np.tile(u_eq, (config.steps, 1)))

        diffs: List[float] = []
        for i in range(config.steps):
            if isinstance(plant, MultiratePlant):
                anchor = plant.anchor(states[i], u_eq)
                jac, _ = linearize_multirate(exp.sys, exp.partition, exp.rule, anchor, "jacobian")
                var, _ = linearize_multirate(exp.sys, exp.partition, exp.rule, anchor, "variational")
            else:
                n = exp.sys.n_q
                anchor = (states[i], states[i + 1], u_eq)
                jac = jacobian_linearize(exp.sys, exp.rule, anchor=anchor)
                var = variational_linearize(exp.sys, exp.rule, ApproximationPoint.from_configs(exp.rule, states[i][:n], states[i + 1][:n], u_eq), anchor=anchor)
            diffs.append(check_equivalence(jac, var).max_abs_diff)
        metrics = {"max_abs_diff": float(max(diffs)) if diffs else 0.0, "steps": float(config.steps)}

        if exp.region is not None and config.soundness_samples:
            region = exp.region
            step = plant.origin_step(region)
            if isinstance(plant, MultiratePlant):
                anchor = plant.anchor(*plant.equilibrium())
                report = check_multirate_soundness(
                    exp.sys, exp.partition, exp.rule, step.model, anchor.points(plant.stack, exp.rule), step.vertex_set, config.soundness_samples, config.seed
                )
            else:
                report = check_soundness(exp.sys, exp.rule, step.model, step.vertex_set, config.soundness_samples, config.seed)
            metrics.update({"soundness_max_slack": report.max_slack, "soundness_samples": float(report.n_samples), "n_vertices": float(step.vertex_set.n_j)})

        payload = {"per_step_max_abs_diff": diffs, "metrics": metrics}
        return [self._write_json(out / "linearization.json", json.dumps(payload, indent=2))], metrics

    @staticmethod
    def _plant_x0(exp: Experiment, plant) -> np.ndarray:
        if isinstance(plant, MultiratePlant):
            return exp.partition.macro_state(exp.x0)
        return exp.x0

    # -----------------------
    # mpc
    # -----------------------
    def mpc(self, config: ExperimentConfig, out: Path):
        exp = build_experiment(config)
        plant = build_plant(exp, config)
        problem = exp.problem
        policy = offline_policy(plant, problem, config.mode)
        artifacts = [policy.save(out / "policy.json")]
        x0 = self._plant_x0(exp, plant)
        if config.dump_conic:
            artifacts.append(self.dump_conic(plant, problem, policy, x0, out / "conic" / "rhocp_k0.json"))

        if config.t_target is not None:
            record = multirate_mpc_closed_loop(plant, problem, policy, x0, config.t_target, config.maxiter, backend=self.backend)
        else:
            record = mpc_closed_loop(plant, problem, policy, x0, config.steps, config.maxiter, backend=self.backend)
        record.save(out, problem, plant.equilibrium())
        artifacts += [out / "closed_loop.csv", out / "closed_loop.json"]

        traj, diag = self._closed_loop_diagnostics(exp, plant, record, x0)
        artifacts.append(traj.to_csv(out / "trajectory.csv"))
        artifacts.append(self._write_json(out / "diagnostics.json", diag.model_dump_json(indent=2)))
        summary = record.summary(problem, plant.equilibrium())
        metrics = {
            "n_rhocp": float(record.n_rhocp),
            "total_solve_time": summary.total_solve_time,
            "max_constraint_violation": summary.max_constraint_violation,
            **diag.extra,
        }
        return artifacts, metrics

    def _closed_loop_diagnostics(self, exp: Experiment, plant, record: ClosedLoopRecord, x0):
        """Replay the applied controls to recover midpoint forces for the Noether maps."""
        if isinstance(plant, MultiratePlant):
            mr = simulate_multirate(exp.sys, exp.partition, exp.rule, x0, record.u, record.n_rhocp)
            traj = Trajectory(dt=mr.macro_dt, n_q=exp.partition.n_q, states=list(mr.single_rate_states()))
            energy = compute_energy(exp.sys, traj)
            extra = {"energy_max_deviation": max_deviation(energy), "replay_max_diff": float(np.max(np.abs(mr.x - record.x)))}
            return mr, DiagnosticsRecord(energy=energy.tolist(), containment_slacks=record.containment_slacks, extra=extra)
        traj = simulate(exp.sys, exp.rule, x0, record.u, record.n_rhocp)
        extra = {"replay_max_diff": float(np.max(np.abs(traj.x - record.x)))}
        return traj, diagnose(exp.sys, traj, containment_slacks=record.containment_slacks, extra=extra)

    # -----------------------
    # multirate sweep
    # -----------------------
    def multirate_sweep(self, config: ExperimentConfig, out: Path):
        """Closed loops to t_target for every micro step count; timing is the online solve time only."""
        timing = TimingRecord()
        artifacts = []
        metrics: Dict[str, float] = {}
        for p in config.micro_steps:
            exp = build_experiment(config, micro_steps=p)
            plant = build_plant(exp, config)
            policy = offline_policy(plant, exp.problem, config.mode)
            x0 = exp.partition.macro_state(exp.x0)
            sub = out / f"p{p}"
            sub.mkdir(parents=True, exist_ok=True)

            totals, first = [], []
            record = None
            for _ in range(config.repeats):
                record = multirate_mpc_closed_loop(plant, exp.problem, policy, x0, config.t_target, config.maxiter, backend=self.backend)
                totals.append(float(np.sum(record.solve_times)))
                first.append(record.solve_times[0] / record.n_iter[0])
            record.save(sub, exp.problem, plant.equilibrium())
            artifacts += [sub / "closed_loop.csv", sub / "closed_loop.json"]

            timing.entries.append(
                TimingEntry(
                    label=f"p={p}",
                    n_rhocp=record.n_rhocp,
                    per_iter_mean=float(np.mean(first)),
                    per_iter_sd=float(np.std(first)),
                    total_mean=float(np.mean(totals)),
                    total_sd=float(np.std(totals)),
                    repeats=config.repeats,
                )
            )
            metrics[f"n_rhocp_p{p}"] = float(record.n_rhocp)
            metrics[f"total_mean_p{p}"] = float(np.mean(totals))
            metrics[f"tube_fallbacks_p{p}"] = float(record.tube_fallbacks)
            logger.info("p=%d: %d RHOCPs, online time %.3fs", p, record.n_rhocp, np.mean(totals))

        artifacts.append(self._write_json(out / "timing.json", timing.model_dump_json(indent=2)))
        return artifacts, metrics

    # -----------------------
    # conic dump
    # -----------------------
    def dump_conic(self, plant, problem: RegulationProblem, policy: TubePolicy, x0, path: Path) -> Path:
        """Standard form of the first RHOCP along the initial seed."""
        seed = initial_seed(plant, problem, x0, policy.K_hat)
        delta = build_delta_dynamics(plant, seed, policy, problem.online_region(), problem)
        socp = assemble_socp(delta, seed, problem, policy, plant.equilibrium(), plant.micro_rows, terminal_slack=True)
        return dump_problem(socp, path)

    def dump_conic_for(self, config: ExperimentConfig, path: Optional[Path] = None) -> Path:
        exp = build_experiment(config)
        if exp.problem is None:
            raise ConfigError(f"system {config.system!r} has no regulation problem to export")
        plant = build_plant(exp, config)
        policy = offline_policy(plant, exp.problem, config.mode)
        path = Path(path) if path is not None else self._out(config) / "conic" / "rhocp_k0.json"
        return self.dump_conic(plant, exp.problem, policy, self._plant_x0(exp, plant), path)

    @staticmethod
    def _energy_csv(out: Path, dt: float, energy: Dict[str, np.ndarray]) -> Path:
        # a failed run is shorter; columns are cut to the common length
        n = min(len(trace) for trace in energy.values())
        rows = np.column_stack([dt * np.arange(n), *[trace[:n] for trace in energy.values()]])
        return write_csv(out / "energy.csv", ["t", *energy.keys()], rows)

    @staticmethod
    def _write_json(path: Path, text: str) -> Path:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
        return path


def run_experiment(config: ExperimentConfig, output_dir: Optional[Path] = None) -> RunSummaryRecord:
    return ExperimentRunner(output_dir=output_dir).run(config)
