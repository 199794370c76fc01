# -*- coding: utf-8 -*-
"""
模擬系統診斷工具
以多個種子執行成對的預設情境，檢查長時間執行才能驗證的性質：
安全稽核、同步策略相對號誌基準的改善幅度、能量平衡閉合
"""
import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor

# 加入專案路徑
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from src.artifacts import AUDIT
from src.cli import compare_runs, execute_run
from src.engine import BASELINE, KURAMOTO
from src.scenario import ScenarioConfigError, default_scenario, load_scenario

logging.basicConfig(
    level=logging.WARNING,
    format='%(asctime)s - %(levelname)s - %(message)s'
)

# 改善幅度門檻 (%)
MIN_FUEL_REDUCTION = 25.0
MIN_DELAY_REDUCTION = 35.0
MIN_BRAKE_REDUCTION = 50.0


def _mark(ok: bool) -> str:
    return "[PASS]" if ok else "[FAIL]"


def _load_audit(run_dir: str) -> dict:
    with open(os.path.join(run_dir, AUDIT), "r", encoding="utf-8") as f:
        return json.load(f)


def check_seed(config, seed: int, root: str) -> bool:
    """執行一個種子的成對模擬並逐項列印檢查結果"""
    config = config.with_overrides(seed=seed)
    dirs = {s: os.path.join(root, f"{s}_seed{seed}") for s in (KURAMOTO, BASELINE)}
    with ProcessPoolExecutor(max_workers=2) as pool:
        futures = {s: pool.submit(execute_run, config.data, config.source, s, d, False) for s, d in dirs.items()}
        outcomes = {s: f.result() for s, f in futures.items()}

    print(f"\n種子 {seed}: 到達 {outcomes[KURAMOTO].arrivals} 輛")
    ok = True

    # [1] 安全
    audit = _load_audit(dirs[KURAMOTO])
    safe = audit["conflict_violations"] == 0 and audit["gap_violations"] == 0 and audit["error"] is None
    print(f"  {_mark(safe)} 安全稽核: 衝突 {audit['conflict_violations']}, 間距 {audit['gap_violations']}")
    ok &= safe

    # [2] 能量平衡
    for strategy, outcome in outcomes.items():
        closed = not outcome.energy_flags
        print(f"  {_mark(closed)} 能量平衡 ({strategy}): 超出門檻 {len(outcome.energy_flags)} 輛")
        ok &= closed

    # [3] 改善幅度
    summary = compare_runs(dirs[KURAMOTO], dirs[BASELINE], os.path.join(root, f"comparison_seed{seed}"),
                           excel=False)
    cand, ref = summary["candidate"], summary["reference"]
    fuel = summary["reductions_pct"]["fuel_g"]
    delay = summary["reductions_pct"]["delay_s_per_m"]
    brake_ref = summary["losses_kJ"][ref]["brake_kJ"]
    brake_cand = summary["losses_kJ"][cand]["brake_kJ"]
    brake = 100.0 * (brake_ref - brake_cand) / brake_ref if brake_ref else 0.0
    spread = all(summary["std"][cand][k] < summary["std"][ref][k] for k in ("fuel_g", "delay_s_per_m"))

    checks = [
        (fuel >= MIN_FUEL_REDUCTION, f"油耗降低 {fuel:.1f}% (門檻 {MIN_FUEL_REDUCTION}%)"),
        (delay >= MIN_DELAY_REDUCTION, f"延滯降低 {delay:.1f}% (門檻 {MIN_DELAY_REDUCTION}%)"),
        (brake >= MIN_BRAKE_REDUCTION, f"煞車損失降低 {brake:.1f}% (門檻 {MIN_BRAKE_REDUCTION}%)"),
        (summary["largest_loss_reduction"] == "brake_kJ", f"最大損失降低來源: {summary['largest_loss_reduction']}"),
        (spread, "點雲標準差縮小"),
    ]
    for passed, message in checks:
        print(f"  {_mark(passed)} {message}")
        ok &= passed
    return ok


def run_diagnostic(argv=None) -> int:
    """診斷主程式"""
    parser = argparse.ArgumentParser(description="成對模擬診斷")
    parser.add_argument("config", nargs="?", default=None)
    parser.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3, 4, 5])
    parser.add_argument("--output", type=str, default=os.path.join("runs", "diagnostic"))
    args = parser.parse_args(argv)

    print("\n" + "=" * 60)
    print("同步化路口模擬診斷工具")
    print("=" * 60)

    try:
        config = load_scenario(args.config) if args.config else default_scenario()
    except ScenarioConfigError as e:
        print(e)
        return 2

    results = {seed: check_seed(config, seed, args.output) for seed in args.seeds}

    print("\n" + "=" * 60)
    print("診斷總結:")
    print("-" * 60)
    for seed, ok in results.items():
        print(f"  種子 {seed}: {_mark(ok)}")
    print("=" * 60)
    return 0 if all(results.values()) else 1


if __name__ == "__main__":
    sys.exit(run_diagnostic())
