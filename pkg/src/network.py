"""
路網模組
單向道路網格、各路段的仿射相位映射，以及設計階段的服務/連續性約束檢查
"""
import math
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi
EXIT = "EXIT"

# 設計期約束容差 (rad) 與映射往返容差
CONSTRAINT_TOL = 1e-9
ROUND_TRIP_TOL = 1e-12

HEADINGS = ("E", "S", "W", "N")
RIGHT_OF = {"E": "S", "S": "W", "W": "N", "N": "E"}


class InvalidGeometryError(ValueError):
    """幾何參數不合法 (波長、長度或速度非正)"""


class NetworkConstructionError(ValueError):
    """路網建構失敗，列出所有未通過的約束"""

    def __init__(self, failures: List[str]):
        self.failures = list(failures)
        super().__init__("路網建構失敗:\n  " + "\n  ".join(self.failures))


class Movement(str, Enum):
    """路口轉向 (單向路網只允許直行與右轉)"""
    STRAIGHT = "straight"
    RIGHT = "right"


def wrap_angle(x: float) -> float:
    """將角度包裹到 (-π, π]"""
    return math.pi - (math.pi - x) % TWO_PI


@dataclass(frozen=True)
class RoadSegment:
    """路段：幾何與其相位映射 (s = (θ - φ)·λ/2π)"""
    id: str
    length: float
    wavelength: float
    offset: float
    nominal_speed: float
    downstream_intersection: str = EXIT
    successors: Dict[Movement, str] = field(default_factory=dict, hash=False, compare=False)
    entry_point: bool = False
    orientation: str = "horizontal"
    heading: str = "E"

    def __post_init__(self):
        if self.wavelength <= 0:
            raise InvalidGeometryError(f"{self.id}: 波長必須 > 0 (收到 {self.wavelength})")
        if self.length <= 0:
            raise InvalidGeometryError(f"{self.id}: 路段長度必須 > 0 (收到 {self.length})")
        if self.nominal_speed <= 0:
            raise InvalidGeometryError(f"{self.id}: 名目速度必須 > 0 (收到 {self.nominal_speed})")
        object.__setattr__(self, "offset", self.offset % TWO_PI)

    @property
    def is_exit(self) -> bool:
        return self.downstream_intersection == EXIT

    @property
    def natural_frequency(self) -> float:
        return natural_frequency(self.nominal_speed, self.wavelength)


@dataclass(frozen=True)
class IntersectionGeometry:
    """路口幾何：直行穿越長度、衝突點距離與右轉弧長"""
    id: str
    box_length: float
    conflict_distances: Dict[str, float] = field(default_factory=dict, hash=False, compare=False)
    right_turn_arcs: Dict[str, float] = field(default_factory=dict, hash=False, compare=False)
    grid_position: Tuple[int, int] = (0, 0)

    def __post_init__(self):
        if self.box_length <= 0:
            raise InvalidGeometryError(f"{self.id}: 路口長度必須 > 0")
        for seg_id, dist in self.conflict_distances.items():
            if not (0.0 < dist <= self.box_length):
                raise InvalidGeometryError(
                    f"{self.id}: {seg_id} 的衝突點距離 {dist} 不在 (0, {self.box_length}]"
                )


@dataclass(frozen=True)
class ConstraintCheck:
    """單一設計期約束的檢查結果"""
    name: str
    passed: bool
    residual: float


@dataclass
class NetworkValidationReport:
    """路網檢查報告 (服務、連續性、頻率與間距)"""
    checks: List[ConstraintCheck]
    beacon_capacity_veh_per_h: float
    spacing_ok: Optional[bool] = None

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.checks) and self.spacing_ok is not False

    @property
    def failures(self) -> List[ConstraintCheck]:
        return [c for c in self.checks if not c.passed]


class NetworkConfig:
    """有向路網 (建構後不可變，可跨執行緒唯讀共用)"""

    def __init__(self, segments: List[RoadSegment], intersections: List[IntersectionGeometry],
                 natural_frequency: float):
        self.segments: Dict[str, RoadSegment] = {s.id: s for s in segments}
        self.intersections: Dict[str, IntersectionGeometry] = {i.id: i for i in intersections}
        self.natural_frequency = natural_frequency
        self._check_structure()

    def _check_structure(self):
        problems = []
        for seg in self.segments.values():
            if not seg.is_exit and seg.downstream_intersection not in self.intersections:
                problems.append(f"{seg.id}: 下游路口 {seg.downstream_intersection} 不存在")
            if not seg.is_exit and not seg.successors:
                problems.append(f"{seg.id}: 非出口路段沒有後繼")
            for movement, succ in seg.successors.items():
                if succ not in self.segments:
                    problems.append(f"{seg.id}: {movement.value} 後繼 {succ} 不存在")
            if abs(seg.natural_frequency - self.natural_frequency) > ROUND_TRIP_TOL:
                problems.append(
                    f"{seg.id}: 2π·vₙ/λ = {seg.natural_frequency:.15g} 與 ωₙ = {self.natural_frequency:.15g} 不符"
                )
        if problems:
            raise NetworkConstructionError(problems)

    def segment(self, segment_id: str) -> RoadSegment:
        return self.segments[segment_id]

    def intersection(self, intersection_id: str) -> IntersectionGeometry:
        return self.intersections[intersection_id]

    def entry_segments(self) -> List[RoadSegment]:
        return sorted((s for s in self.segments.values() if s.entry_point), key=lambda s: s.id)

    def incoming(self, intersection_id: str) -> List[RoadSegment]:
        """進入路口的路段 (水平在前)"""
        segs = [s for s in self.segments.values() if s.downstream_intersection == intersection_id]
        return sorted(segs, key=lambda s: (s.orientation != "horizontal", s.id))

    def successor(self, segment_id: str, movement: Movement) -> Optional[str]:
        return self.segments[segment_id].successors.get(movement)

    def transition(self, segment_id: str, movement: Movement) -> Tuple[str, float]:
        """
        車輛越過路口入口後的新路段與起始位置

        直行：s = -(L_next + 路口直行長度)；右轉：s = -(L_next + 轉彎弧長)
        """
        seg = self.segments[segment_id]
        next_id = seg.successors[movement]
        nxt = self.segments[next_id]
        box = self.intersections[seg.downstream_intersection]
        if movement == Movement.RIGHT:
            passage = box.right_turn_arcs[segment_id]
        else:
            passage = box.box_length
        return next_id, -(nxt.length + passage)

    def mapped_transition(self, segment_id: str, movement: Movement) -> Tuple[str, float, float]:
        """
        上游車輛在下一路段座標中的位置與相位換算

        回傳 (next_id, start, shift)：位置 s 對應下一路段的 s + start，
        相位 θ 對應 θ + shift；直行且滿足連續性時 shift ≡ 0 (mod 2π)
        """
        next_id, start = self.transition(segment_id, movement)
        shift = position_to_phase(self.segments[next_id], start) - position_to_phase(self.segments[segment_id], 0.0)
        return next_id, start, shift

    def clearance_time(self, intersection_id: str) -> float:
        """衝突點淨空時間：路口長度 / 進入路段中最低的名目速度"""
        box = self.intersections[intersection_id]
        speeds = [s.nominal_speed for s in self.incoming(intersection_id)]
        return box.box_length / min(speeds) if speeds else 0.0

    def approach_length(self, segment_id: str, movement: Optional[Movement] = None) -> float:
        """
        經 movement 離開 segment_id 後，在下一路段上到其路口入口的行駛距離
        (L_next + 直行長度或轉彎弧長)；movement=None 時回傳路段本身長度
        """
        seg = self.segments[segment_id]
        if movement is None or seg.is_exit:
            return seg.length
        _, start = self.transition(segment_id, movement)
        return -start

    def to_dict(self) -> Dict:
        return {
            "natural_frequency_rad_per_s": self.natural_frequency,
            "segments": [
                {
                    "id": s.id, "length_m": s.length, "wavelength_m": s.wavelength,
                    "offset_rad": s.offset, "nominal_speed_mps": s.nominal_speed,
                    "downstream_intersection": s.downstream_intersection,
                    "successors": {m.value: t for m, t in s.successors.items()},
                    "entry_point": s.entry_point, "orientation": s.orientation, "heading": s.heading,
                }
                for s in self.segments.values()
            ],
            "intersections": [
                {
                    "id": i.id, "box_length_m": i.box_length,
                    "conflict_distances_m": dict(i.conflict_distances),
                    "right_turn_arcs_m": dict(i.right_turn_arcs),
                    "grid_position": list(i.grid_position),
                }
                for i in self.intersections.values()
            ],
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "NetworkConfig":
        segments = [
            RoadSegment(
                id=s["id"], length=s["length_m"], wavelength=s["wavelength_m"],
                offset=s["offset_rad"], nominal_speed=s["nominal_speed_mps"],
                downstream_intersection=s.get("downstream_intersection", EXIT),
                successors={Movement(m): t for m, t in s.get("successors", {}).items()},
                entry_point=s.get("entry_point", False),
                orientation=s.get("orientation", "horizontal"), heading=s.get("heading", "E"),
            )
            for s in data["segments"]
        ]
        intersections = [
            IntersectionGeometry(
                id=i["id"], box_length=i["box_length_m"],
                conflict_distances=dict(i.get("conflict_distances_m", {})),
                right_turn_arcs=dict(i.get("right_turn_arcs_m", {})),
                grid_position=tuple(i.get("grid_position", (0, 0))),
            )
            for i in data["intersections"]
        ]
        return cls(segments, intersections, data["natural_frequency_rad_per_s"])


# ========== 相位映射 ==========

def phase_to_position(segment: RoadSegment, theta: float) -> float:
    """相位 → 帶號位置 (路口入口為 0，上游為負)"""
    return (theta - segment.offset) * segment.wavelength / TWO_PI


def position_to_phase(segment: RoadSegment, s: float) -> float:
    """帶號位置 → 相位 (phase_to_position 的反函數)"""
    return segment.offset + TWO_PI * s / segment.wavelength


def natural_frequency(nominal_speed: float, wavelength: float) -> float:
    """ωₙ = 2π·vₙ/λ"""
    if wavelength <= 0:
        raise InvalidGeometryError(f"波長必須 > 0 (收到 {wavelength})")
    return TWO_PI * nominal_speed / wavelength


def beacon_capacity_veh_per_h(nominal_speed: float, wavelength: float) -> float:
    """每條道路每個信標一輛車時的容量"""
    return 3600.0 * nominal_speed / wavelength


# ========== 設計期約束 ==========

def validate_servicing(intersection: IntersectionGeometry,
                       incoming: Tuple[RoadSegment, RoadSegment]) -> ConstraintCheck:
    """
    服務約束：衝突車流在衝突點相隔半個週期

    φ₃ - φ₁ ≡ 2π(A₁C/λ₁ - B₃C/λ₃) - π  (mod 2π)
    """
    seg1, seg3 = incoming
    a1c = intersection.conflict_distances[seg1.id]
    b3c = intersection.conflict_distances[seg3.id]
    target = TWO_PI * (a1c / seg1.wavelength - b3c / seg3.wavelength) - math.pi
    residual = wrap_angle((seg3.offset - seg1.offset) - target)
    return ConstraintCheck(
        name=f"servicing {intersection.id} ({seg1.id}, {seg3.id})",
        passed=abs(residual) <= CONSTRAINT_TOL,
        residual=residual,
    )


def validate_continuity(upstream: RoadSegment, downstream: RoadSegment,
                        intersection: IntersectionGeometry) -> ConstraintCheck:
    """
    連續性約束：直行穿越路口時映射相位連續

    φ_down - φ_up ≡ -(2π/λ)(L_down + 路口直行長度)  (mod 2π)
    """
    shift = TWO_PI / downstream.wavelength * (downstream.length + intersection.box_length)
    residual = wrap_angle(downstream.offset - upstream.offset + shift)
    return ConstraintCheck(
        name=f"continuity {upstream.id} -> {downstream.id}",
        passed=abs(residual) <= CONSTRAINT_TOL,
        residual=residual,
    )


def validate_network(network: NetworkConfig, min_gap: Optional[float] = None) -> NetworkValidationReport:
    """對所有路口執行服務約束、對所有直行連接執行連續性約束"""
    checks: List[ConstraintCheck] = []
    for seg in sorted(network.segments.values(), key=lambda s: s.id):
        freq_residual = seg.natural_frequency - network.natural_frequency
        checks.append(ConstraintCheck(
            name=f"frequency {seg.id}",
            passed=abs(freq_residual) <= ROUND_TRIP_TOL,
            residual=freq_residual,
        ))

    for inter_id in sorted(network.intersections):
        inter = network.intersections[inter_id]
        incoming = network.incoming(inter_id)
        horizontal = [s for s in incoming if s.orientation == "horizontal"]
        vertical = [s for s in incoming if s.orientation == "vertical"]
        for h in horizontal:
            for v in vertical:
                checks.append(validate_servicing(inter, (h, v)))
        for seg in incoming:
            straight = seg.successors.get(Movement.STRAIGHT)
            if straight is not None:
                checks.append(validate_continuity(seg, network.segments[straight], inter))

    any_seg = next(iter(network.segments.values()))
    capacity = beacon_capacity_veh_per_h(any_seg.nominal_speed, any_seg.wavelength)
    spacing_ok = None
    if min_gap is not None:
        spacing_ok = all(min_gap < s.wavelength / 2.0 for s in network.segments.values())

    report = NetworkValidationReport(checks=checks, beacon_capacity_veh_per_h=capacity, spacing_ok=spacing_ok)
    logger.debug(f"路網檢查: {len(checks)} 項, 未通過 {len(report.failures)} 項")
    return report


# ========== 網格路網 ==========

def _is_multiple(length: float, wavelength: float) -> bool:
    ratio = length / wavelength
    return abs(ratio - round(ratio)) <= 1e-9


def build_grid_network(rows: int, cols: int, segment_length: float, box_length: float,
                       entry_length: float, wavelength: float, nominal_speed: float,
                       offset_horizontal: float, offset_vertical: float,
                       direction_pattern: str = "uniform", strict: bool = True) -> NetworkConfig:
    """
    建立單向網格路網

    每條道路 = 入口路段 + (n-1) 個內部路段 + 出口路段；3×3 網格共 24 個路段、9 個路口。
    uniform: 水平全向東、垂直全向南；alternating: 東西、南北交替。
    strict=True 時任何服務/連續性約束未通過即拋出 NetworkConstructionError。
    """
    if rows < 1 or cols < 1:
        raise InvalidGeometryError(f"網格尺寸必須 ≥ 1 (收到 {rows}×{cols})")
    if direction_pattern not in ("uniform", "alternating"):
        raise InvalidGeometryError(f"未知的方向模式: {direction_pattern}")

    failures: List[str] = []
    if not _is_multiple(segment_length + box_length, wavelength):
        failures.append(
            f"{segment_length + box_length:g} 不是波長 {wavelength:g} 的整數倍 (路段 + 路口)"
        )
    if not _is_multiple(entry_length + box_length, wavelength):
        failures.append(
            f"{entry_length + box_length:g} 不是波長 {wavelength:g} 的整數倍 (入口路段 + 路口)"
        )
    if strict and failures:
        raise NetworkConstructionError(failures)

    omega = natural_frequency(nominal_speed, wavelength)

    def row_heading(r: int) -> str:
        return "E" if direction_pattern == "uniform" or r % 2 == 0 else "W"

    def col_heading(c: int) -> str:
        return "S" if direction_pattern == "uniform" or c % 2 == 0 else "N"

    # 每條道路依行進方向排列的路口
    row_order = {r: list(range(cols)) if row_heading(r) == "E" else list(reversed(range(cols)))
                 for r in range(rows)}
    col_order = {c: list(range(rows)) if col_heading(c) == "S" else list(reversed(range(rows)))
                 for c in range(cols)}

    def inter_id(r: int, c: int) -> str:
        return f"I{r}-{c}"

    def h_seg(r: int, k: int) -> str:
        return f"H{r}-{k}"

    def v_seg(c: int, k: int) -> str:
        return f"V{c}-{k}"

    successors: Dict[str, Dict[Movement, str]] = {}
    specs: Dict[str, Dict] = {}

    for r in range(rows):
        order = row_order[r]
        for k in range(cols + 1):
            sid = h_seg(r, k)
            downstream = inter_id(r, order[k]) if k < cols else EXIT
            specs[sid] = dict(
                length=entry_length if k == 0 else segment_length, offset=offset_horizontal,
                downstream=downstream, entry=(k == 0), orientation="horizontal", heading=row_heading(r),
            )
            succ = {}
            if k < cols:
                succ[Movement.STRAIGHT] = h_seg(r, k + 1)
                c = order[k]
                if RIGHT_OF[row_heading(r)] == col_heading(c):
                    succ[Movement.RIGHT] = v_seg(c, col_order[c].index(r) + 1)
            successors[sid] = succ

    for c in range(cols):
        order = col_order[c]
        for k in range(rows + 1):
            sid = v_seg(c, k)
            downstream = inter_id(order[k], c) if k < rows else EXIT
            specs[sid] = dict(
                length=entry_length if k == 0 else segment_length, offset=offset_vertical,
                downstream=downstream, entry=(k == 0), orientation="vertical", heading=col_heading(c),
            )
            succ = {}
            if k < rows:
                succ[Movement.STRAIGHT] = v_seg(c, k + 1)
                r = order[k]
                if RIGHT_OF[col_heading(c)] == row_heading(r):
                    succ[Movement.RIGHT] = h_seg(r, row_order[r].index(c) + 1)
            successors[sid] = succ

    segments = [
        RoadSegment(
            id=sid, length=spec["length"], wavelength=wavelength, offset=spec["offset"],
            nominal_speed=nominal_speed, downstream_intersection=spec["downstream"],
            successors=successors[sid], entry_point=spec["entry"],
            orientation=spec["orientation"], heading=spec["heading"],
        )
        for sid, spec in specs.items()
    ]

    # 衝突點取在路口中心；右轉為四分之一圓弧
    arc = math.pi * box_length / 4.0
    intersections = []
    for r in range(rows):
        for c in range(cols):
            iid = inter_id(r, c)
            incoming = [s for s in segments if s.downstream_intersection == iid]
            intersections.append(IntersectionGeometry(
                id=iid, box_length=box_length,
                conflict_distances={s.id: box_length / 2.0 for s in incoming},
                right_turn_arcs={s.id: arc for s in incoming if Movement.RIGHT in s.successors},
                grid_position=(r, c),
            ))

    network = NetworkConfig(segments, intersections, omega)

    report = validate_network(network)
    failures.extend(f"{c.name}: 殘差 {c.residual:.3e} rad" for c in report.failures)
    if strict and failures:
        raise NetworkConstructionError(failures)

    logger.info(
        f"建立 {rows}×{cols} 網格路網: {len(segments)} 個路段, {len(intersections)} 個路口, "
        f"ωₙ={omega:.4f} rad/s, 方向={direction_pattern}"
    )
    return network
