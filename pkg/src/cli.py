"""
命令列介面

validate     檢查情境與路網設計約束
run          執行一次 (或成對) 模擬並寫出執行目錄
compare      比較兩個執行目錄 (同一到達流)
oscillators  孤立振盪器族群同步示範

結束碼：0 成功、1 驗證或稽核未通過、2 輸入錯誤
"""
import argparse
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from src.arrivals import arrivals_to_frame, generate_arrivals
from src.artifacts import (
    AUDIT, COMPARISON, ENERGY_LOSSES, OSCILLATORS, POINT_CLOUD, RunMismatchError,
    check_same_stream, read_manifest, read_metrics, version_string, write_csv, write_json, write_run,
)
from src.baseline import GippsBaseline
from src.engine import (
    BASELINE, KURAMOTO, SimulationState, conflict_audit, crossings_frame, run_simulation, step,
    trajectory_frame,
)
from src.excel_exporter import ExcelExporter
from src.kuramoto import simulate_population
from src.metrics import ReportWindowError, aggregate_report, energy_balance_audit, metrics_frame
from src.network import InvalidGeometryError, NetworkConstructionError, validate_network
from src.scenario import ScenarioConfig, ScenarioConfigError, config_hash, default_scenario, load_scenario

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_INPUT = 2

STRATEGIES = (KURAMOTO, BASELINE)


@dataclass
class RunOutcome:
    """一次執行的摘要 (可跨行程傳回)"""
    strategy: str
    run_dir: str
    arrivals: int
    completed: int
    audit_passed: bool
    energy_flags: List[int] = field(default_factory=list)
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.audit_passed and not self.energy_flags and self.error is None


# ========== 設定載入 ==========

def _load_config(path: Optional[str]) -> ScenarioConfig:
    if path is None:
        logger.info("未指定情境檔，使用內建預設情境")
        return default_scenario()
    return load_scenario(path)


def _print_errors(errors: List[str]):
    for line in errors:
        print(f"  ✗ {line}", file=sys.stderr)


# ========== validate ==========

def cmd_validate(args) -> int:
    """載入情境並檢查服務、連續性、頻率與間距約束"""
    try:
        config = _load_config(args.config)
        network = config.build_network(strict=False)
    except ScenarioConfigError as e:
        print("情境設定錯誤:", file=sys.stderr)
        _print_errors(e.errors)
        return EXIT_INPUT
    except (InvalidGeometryError, NetworkConstructionError) as e:
        print(f"路網建構失敗: {e}", file=sys.stderr)
        return EXIT_INPUT

    report = validate_network(network, min_gap=config.planner_bounds().min_gap)
    print(f"{'約束':<40} {'殘差':>14}  結果")
    print("-" * 64)
    for check in report.checks:
        mark = "PASS" if check.passed else "FAIL"
        print(f"{check.name:<40} {check.residual:>14.3e}  {mark}")
    print("-" * 64)
    print(f"信標容量: {report.beacon_capacity_veh_per_h:.0f} veh/h")
    if report.spacing_ok is not None:
        print(f"最小間距 S < λ/2: {'PASS' if report.spacing_ok else 'FAIL'}")

    if report.all_passed:
        print(f"全部 {len(report.checks)} 項約束通過")
        return EXIT_OK
    for failure in report.failures:
        logger.error(f"約束未通過: {failure.name} (殘差 {failure.residual:.3e})")
    print(f"{len(report.failures)} 項約束未通過", file=sys.stderr)
    return EXIT_FAILURE


# ========== run ==========

def build_simulation(config: ScenarioConfig, strategy: str):
    """建立路網、到達流與模擬狀態，回傳 (state, step_fn)"""
    network = config.build_network()
    kuramoto = config.kuramoto_params()
    arrivals = generate_arrivals(network, config.arrival_process(), config.duration, kuramoto.time_step)
    state = SimulationState(network, kuramoto, config.planner_bounds(), arrivals, strategy=strategy,
                            options=config.engine_options(strategy))
    if strategy == KURAMOTO:
        return state, step
    return state, GippsBaseline(config.gipps_params(), config.signals(network))


def execute_run(data: Dict, source: Optional[str], strategy: str, run_dir: str,
                show_progress: bool = True) -> RunOutcome:
    """
    執行一次模擬並寫出執行目錄

    模擬中途失敗時仍寫出已產生的紀錄，錯誤摘要放進 audit.json
    """
    config = ScenarioConfig(data=data, source=source)
    digest = config_hash(config)
    state, step_fn = build_simulation(config, strategy)

    error = None
    try:
        run_simulation(state, step_fn, config.duration, config.drain_time, show_progress=show_progress)
    except Exception as e:
        error = f"{type(e).__name__}: {e}"
        logger.exception(f"模擬中止 ({strategy}) 於 t={state.clock:.1f} s")

    metrics_cfg = config.section("metrics")
    nominal_speed = float(config.section("network")["nominal_speed_mps"])
    metrics = metrics_frame(state.all_vehicles(), strategy, nominal_speed, config.longitudinal_params(),
                            config.fuel_model(), n_arrivals=len(state.arrivals))
    tolerance = float(config.section("audit")["energy_balance_tolerance_pct"])
    energy_flags = energy_balance_audit(metrics, tolerance)

    report = conflict_audit(state)
    audit = report.to_dict()
    audit.update({
        "energy_balance_tolerance_pct": tolerance,
        "energy_balance_violations": energy_flags,
        "mode_counts": dict(sorted(state.mode_counts.items())),
        "phase_resets": state.resets,
        "error": error,
    })

    manifest = {
        "version": version_string(digest),
        "strategy": strategy,
        "seed": config.seed,
        "config_hash": digest,
        "config": config.data,
        "window": list(config.window),
        "counts": {
            "arrivals": len(state.arrivals),
            "completed": len(state.completed),
            "in_network": len(state.vehicles),
            "queued": state.queued(),
            "ticks": state.tick,
        },
    }
    every = int(config.section("output")["log_every_n_ticks"])
    write_run(run_dir, manifest, arrivals_to_frame(state.arrivals), trajectory_frame(state, every),
              metrics, crossings_frame(state), audit)

    if metrics_cfg["window_end"] > len(state.arrivals) and config.duration > 0:
        logger.warning(f"到達數 {len(state.arrivals)} 少於比較視窗終點 {metrics_cfg['window_end']}")
    return RunOutcome(strategy=strategy, run_dir=run_dir, arrivals=len(state.arrivals),
                      completed=len(state.completed), audit_passed=report.passed,
                      energy_flags=energy_flags, error=error)


def _run_dir(root: str, strategy: str, seed: int) -> str:
    return os.path.join(root, f"{strategy}_seed{seed}")


def _report_outcome(outcome: RunOutcome, detailed=None):
    status = "通過" if outcome.ok else "未通過"
    print(f"[{outcome.strategy}] 到達 {outcome.arrivals} 輛, 完成 {outcome.completed} 輛, 稽核{status} → {outcome.run_dir}")
    if outcome.error:
        print(f"[{outcome.strategy}] 模擬中止: {outcome.error}", file=sys.stderr)
    if detailed is None:
        return
    with open(os.path.join(outcome.run_dir, AUDIT), "r", encoding="utf-8") as f:
        audit = json.load(f)
    for flag in audit["conflict_flags"]:
        detailed.log_audit_flag("conflict", flag)
    for flag in audit["gap_flags"]:
        detailed.log_audit_flag("gap", flag)
    for vid in audit["energy_balance_violations"]:
        detailed.log_audit_flag("energy_balance", {"vehicle_id": vid})


def cmd_run(args, detailed=None) -> int:
    """執行 kuramoto、baseline 或兩者 (同一到達流，兩個工作行程)"""
    try:
        config = _load_config(args.config).with_overrides(
            seed=args.seed, duration=args.duration, output_dir=args.output, log_every=args.log_every,
        )
    except ScenarioConfigError as e:
        print("情境設定錯誤:", file=sys.stderr)
        _print_errors(e.errors)
        return EXIT_INPUT

    try:
        config.build_network()
    except (InvalidGeometryError, NetworkConstructionError) as e:
        print(f"路網不符設計約束，請先執行 validate: {e}", file=sys.stderr)
        return EXIT_INPUT

    root = config.section("output")["directory"]
    strategies = STRATEGIES if args.strategy == "both" else (args.strategy,)
    if detailed is not None:
        for strategy in strategies:
            detailed.log_run_start(strategy, config.seed, config_hash(config), config.duration)

    show_progress = not args.quiet
    if len(strategies) == 1:
        outcomes = [execute_run(config.data, config.source, strategies[0],
                                _run_dir(root, strategies[0], config.seed), show_progress)]
    else:
        with ProcessPoolExecutor(max_workers=len(strategies)) as pool:
            futures = [pool.submit(execute_run, config.data, config.source, s, _run_dir(root, s, config.seed),
                                   show_progress) for s in strategies]
            outcomes = [f.result() for f in futures]

    for outcome in outcomes:
        _report_outcome(outcome, detailed)
    return EXIT_OK if all(o.ok for o in outcomes) else EXIT_FAILURE


# ========== compare ==========

def compare_runs(run_a: str, run_b: str, output_dir: str,
                 window: Optional[tuple] = None, excel: bool = True) -> Dict:
    """
    比較兩個執行目錄並寫出點雲、能量損失與摘要

    run_a 為候選策略；若 manifest 顯示 A 是 baseline、B 是 kuramoto 則自動對調
    """
    manifest_a = read_manifest(run_a)
    manifest_b = read_manifest(run_b)
    check_same_stream(manifest_a, manifest_b)
    if manifest_a.get("strategy") == BASELINE and manifest_b.get("strategy") == KURAMOTO:
        run_a, run_b = run_b, run_a
        manifest_a, manifest_b = manifest_b, manifest_a

    window = tuple(window or manifest_a.get("window") or (100, 600))
    report = aggregate_report(read_metrics(run_a), read_metrics(run_b), window=window)

    os.makedirs(output_dir, exist_ok=True)
    write_csv(report.point_cloud, os.path.join(output_dir, POINT_CLOUD))
    write_csv(report.loss_frame(), os.path.join(output_dir, ENERGY_LOSSES))
    summary = report.to_dict()
    summary["runs"] = {"candidate": run_a, "reference": run_b}
    summary["seed"] = manifest_a.get("seed")
    write_json(summary, os.path.join(output_dir, COMPARISON))
    if excel:
        ExcelExporter(output_dir).export_comparison(report, params=manifest_a.get("config"))
    return summary


def cmd_compare(args) -> int:
    output_dir = args.output or os.path.join(os.path.dirname(os.path.abspath(args.run_a)), "comparison")
    try:
        summary = compare_runs(args.run_a, args.run_b, output_dir,
                               window=tuple(args.window) if args.window else None, excel=not args.no_excel)
    except RunMismatchError as e:
        print(f"拒絕比較: {e}", file=sys.stderr)
        return EXIT_INPUT
    except (ReportWindowError, FileNotFoundError) as e:
        print(f"無法比較: {e}", file=sys.stderr)
        return EXIT_INPUT

    cand, ref = summary["candidate"], summary["reference"]
    print(f"{cand} vs {ref}，視窗 {summary['window'][0]}–{summary['window'][1]}，共 {summary['vehicles']} 輛")
    print(f"  油耗降低: {summary['reductions_pct']['fuel_g']:+.1f}%")
    print(f"  延滯降低: {summary['reductions_pct']['delay_s_per_m']:+.1f}%")
    for component in ("brake_kJ", "drag_kJ", "rolling_kJ"):
        print(f"  {component}: {summary['losses_kJ'][ref][component]:.2f} → "
              f"{summary['losses_kJ'][cand][component]:.2f}")
    print(f"  最大損失降低來源: {summary['largest_loss_reduction']}")
    print(f"結果已寫入 {output_dir}")
    return EXIT_OK


# ========== oscillators ==========

def oscillator_frame(count: int, duration: float, seed: int, config: ScenarioConfig) -> pd.DataFrame:
    """隨機初始相位的族群同步歷程 (每列一步)"""
    rng = np.random.default_rng(seed)
    history = simulate_population(rng.uniform(0.0, 2.0 * math.pi, count), config.kuramoto_params(), duration)
    omega_n = config.kuramoto_params().natural_frequency
    df = pd.DataFrame({
        "t_s": history.times,
        "coherence": history.coherence,
        "mean_phase_rad": history.mean_phase,
        "max_frequency_deviation_rad_per_s": np.abs(history.frequencies - omega_n).max(axis=1),
    })
    phases = pd.DataFrame(history.phases, columns=[f"theta_{i:03d}" for i in range(count)])
    return pd.concat([df, phases], axis=1)


def cmd_oscillators(args) -> int:
    try:
        config = _load_config(args.config)
    except ScenarioConfigError as e:
        _print_errors(e.errors)
        return EXIT_INPUT
    if args.count < 1 or args.duration < 0:
        print("振盪器數量必須 ≥ 1、時長必須 ≥ 0", file=sys.stderr)
        return EXIT_INPUT

    df = oscillator_frame(args.count, args.duration, args.seed, config)
    os.makedirs(os.path.dirname(os.path.abspath(args.output)), exist_ok=True)
    write_csv(df, args.output)
    converged = df.index[df["coherence"] >= args.threshold]
    print(f"{args.count} 個振盪器, 最終 r = {df['coherence'].iloc[-1]:.6f}")
    if len(converged):
        print(f"r 首次 ≥ {args.threshold}: t = {df['t_s'].iloc[converged[0]]:.1f} s")
    print(f"結果已寫入 {args.output}")
    return EXIT_OK


# ========== 入口 ==========

def build_argparser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kuramoto_traffic", description="同步化路口車流模擬")
    p.add_argument("--verbose", action="store_true", help="逐步 DEBUG 訊息寫入日誌檔")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="檢查情境與路網約束")
    v.add_argument("config", nargs="?", default=None, help="情境 JSON 檔 (省略則用內建預設)")
    v.set_defaults(func=cmd_validate)

    r = sub.add_parser("run", help="執行模擬")
    r.add_argument("config", nargs="?", default=None)
    r.add_argument("--strategy", choices=[KURAMOTO, BASELINE, "both"], default=KURAMOTO)
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--duration", type=float, default=None, help="到達時段長度 (s)")
    r.add_argument("--output", type=str, default=None, help="執行目錄根")
    r.add_argument("--log-every", type=int, default=None, help="軌跡紀錄每 N 步一列")
    r.add_argument("--quiet", action="store_true", help="關閉進度列")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="比較兩個執行目錄")
    c.add_argument("run_a", help="候選執行目錄")
    c.add_argument("run_b", help="參考執行目錄")
    c.add_argument("--output", type=str, default=None)
    c.add_argument("--window", type=int, nargs=2, metavar=("START", "END"), default=None)
    c.add_argument("--no-excel", action="store_true")
    c.set_defaults(func=cmd_compare)

    o = sub.add_parser("oscillators", help="族群同步示範")
    o.add_argument("config", nargs="?", default=None)
    o.add_argument("--count", type=int, default=200)
    o.add_argument("--duration", type=float, default=30.0)
    o.add_argument("--seed", type=int, default=1)
    o.add_argument("--threshold", type=float, default=0.999)
    o.add_argument("--output", type=str, default=os.path.join("runs", OSCILLATORS))
    o.set_defaults(func=cmd_oscillators)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_argparser().parse_args(argv)

    from setup_detailed_logging import get_detailed_logger, setup_module_logging
    detailed = get_detailed_logger("kuramoto_traffic")
    setup_module_logging(verbose=args.verbose)

    try:
        if args.command == "run":
            return cmd_run(args, detailed)
        return args.func(args)
    except Exception as e:
        detailed.log_error_with_trace(f"{args.command} 執行失敗", e)
        return EXIT_INPUT
