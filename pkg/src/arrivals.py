"""
Poisson 到達流

同一 (路網, 到達參數, 種子) 產生完全相同的到達紀錄，
同步策略與號誌基準共用同一份紀錄
"""
import logging
from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np
import pandas as pd

from src.network import Movement, NetworkConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ArrivalProcess:
    """每個入口路段的到達率 (veh/h)、右轉機率與亂數種子"""
    rate_veh_per_h: float = 750.0
    turn_probability: float = 0.2
    seed: int = 1

    def __post_init__(self):
        if self.rate_veh_per_h < 0:
            raise ValueError(f"到達率必須 ≥ 0 (收到 {self.rate_veh_per_h})")
        if not 0.0 <= self.turn_probability <= 1.0:
            raise ValueError(f"右轉機率必須介於 [0, 1] (收到 {self.turn_probability})")


@dataclass(frozen=True)
class ArrivalRecord:
    """
    一筆到達請求

    route 為每個路口依序抽出的轉向 (右轉在沒有右轉出口的路口會退化為直行)
    """
    vehicle_id: int
    tick: int
    request_time: float
    entry_segment: str
    route: Tuple[Movement, ...]


def route_draws(network: NetworkConfig) -> int:
    """每輛車抽取的轉向次數；任何路徑經過的路口數都不超過此值"""
    rows = 1 + max(i.grid_position[0] for i in network.intersections.values())
    cols = 1 + max(i.grid_position[1] for i in network.intersections.values())
    return rows * cols


def generate_arrivals(network: NetworkConfig, process: ArrivalProcess, duration: float,
                      dt: float) -> List[ArrivalRecord]:
    """
    逐步產生到達

    每一步依入口路段排序抽 Poisson(rate·Δt)；每輛車接著抽一組 Bernoulli 轉向。
    車輛編號依到達順序遞增
    """
    rng = np.random.default_rng(process.seed)
    entries = [seg.id for seg in network.entry_segments()]
    n_ticks = int(round(duration / dt))
    mean = process.rate_veh_per_h * dt / 3600.0
    draws = route_draws(network)

    records: List[ArrivalRecord] = []
    for tick in range(n_ticks):
        for entry in entries:
            count = int(rng.poisson(mean)) if mean > 0 else 0
            for _ in range(count):
                turns = rng.random(draws) < process.turn_probability
                route = tuple(Movement.RIGHT if t else Movement.STRAIGHT for t in turns)
                records.append(ArrivalRecord(vehicle_id=len(records), tick=tick, request_time=tick * dt,
                                             entry_segment=entry, route=route))

    logger.info(f"產生到達流: {len(records)} 輛 ({len(entries)} 個入口, {duration:.0f} s, 種子 {process.seed})")
    return records


def arrivals_to_frame(records: List[ArrivalRecord]) -> pd.DataFrame:
    return pd.DataFrame({
        "vehicle_id": [r.vehicle_id for r in records],
        "tick": [r.tick for r in records],
        "request_time_s": [r.request_time for r in records],
        "entry_segment": [r.entry_segment for r in records],
        "route": ["".join("R" if m == Movement.RIGHT else "S" for m in r.route) for r in records],
    }, columns=["vehicle_id", "tick", "request_time_s", "entry_segment", "route"])


def arrivals_from_frame(df: pd.DataFrame) -> List[ArrivalRecord]:
    records = []
    for row in df.itertuples(index=False):
        route = tuple(Movement.RIGHT if ch == "R" else Movement.STRAIGHT for ch in str(row.route))
        records.append(ArrivalRecord(vehicle_id=int(row.vehicle_id), tick=int(row.tick),
                                     request_time=float(row.request_time_s),
                                     entry_segment=str(row.entry_segment), route=route))
    return records


def arrivals_by_tick(records: List[ArrivalRecord]) -> Dict[int, List[ArrivalRecord]]:
    grouped: Dict[int, List[ArrivalRecord]] = {}
    for r in records:
        grouped.setdefault(r.tick, []).append(r)
    return grouped
