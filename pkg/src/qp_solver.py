"""
稠密凸二次規劃求解器

    min  ½ xᵀPx + qᵀx
    s.t. l ≤ Ax ≤ u

以交替方向乘子法 (ADMM，算子分裂) 迭代，搭配列均衡、自適應 ρ、
原始不可行證書，以及以 KKT 等式系統精確求解的主動集拋光步驟。
"""
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

logger = logging.getLogger(__name__)

SOLVED = "solved"
PRIMAL_INFEASIBLE = "primal_infeasible"
MAX_ITER = "max_iter"


@dataclass(frozen=True)
class QPSettings:
    rho: float = 0.1
    sigma: float = 1e-6
    alpha: float = 1.6
    eps_abs: float = 1e-6
    eps_rel: float = 1e-6
    eps_pinf: float = 1e-6
    max_iter: int = 4000
    check_every: int = 25
    equality_rho_scale: float = 1e3
    rho_min: float = 1e-6
    rho_max: float = 1e6
    adaptive_rho_tolerance: float = 5.0
    polish: bool = True
    polish_tol: float = 1e-7


@dataclass
class QPResult:
    x: np.ndarray
    y: np.ndarray
    status: str
    iterations: int
    primal_residual: float = np.inf
    dual_residual: float = np.inf
    polished: bool = False
    objective: float = np.nan
    active_rows: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))

    @property
    def solved(self) -> bool:
        return self.status == SOLVED


def _inf_norm(v: np.ndarray) -> float:
    return float(np.max(np.abs(v))) if v.size else 0.0


def kkt_residuals(P: np.ndarray, q: np.ndarray, A: np.ndarray, l: np.ndarray, u: np.ndarray,
                  x: np.ndarray, y: np.ndarray):
    """原始殘差 (違反界限量) 與對偶殘差 ‖Px + q + Aᵀy‖∞"""
    Ax = A @ x
    primal = np.maximum(l - Ax, 0.0) + np.maximum(Ax - u, 0.0)
    dual = P @ x + q + A.T @ y
    return _inf_norm(primal), _inf_norm(dual)


class DenseADMMSolver:
    """
    ADMM 求解器 (稠密矩陣)

    線性系統 (P + σI + Aᵀ diag(ρ) A) 以反矩陣預先分解，ρ 改變時重新分解
    """

    def __init__(self, settings: Optional[QPSettings] = None):
        self.settings = settings or QPSettings()

    def solve(self, P: np.ndarray, q: np.ndarray, A: np.ndarray, l: np.ndarray, u: np.ndarray,
              x0: Optional[np.ndarray] = None) -> QPResult:
        st = self.settings
        P = np.atleast_2d(np.asarray(P, dtype=float))
        q = np.asarray(q, dtype=float).ravel()
        A = np.atleast_2d(np.asarray(A, dtype=float))
        l = np.asarray(l, dtype=float).ravel()
        u = np.asarray(u, dtype=float).ravel()
        n = P.shape[0]
        m = A.shape[0]
        if np.any(l > u):
            logger.debug("下界大於上界，問題不可行")
            return QPResult(x=np.zeros(n), y=np.zeros(m), status=PRIMAL_INFEASIBLE, iterations=0)

        # 列均衡與成本縮放
        row_norm = np.max(np.abs(A), axis=1) if m else np.empty(0)
        D = np.where(row_norm > 0, 1.0 / np.where(row_norm > 0, row_norm, 1.0), 1.0)
        As = A * D[:, None]
        ls = l * D
        us = u * D
        cost_norm = max(_inf_norm(P), _inf_norm(q), 1e-12)
        c = 1.0 / cost_norm
        Ps = P * c
        qs = q * c

        equality = np.isclose(ls, us, rtol=0.0, atol=1e-12)
        free = np.isinf(ls) & np.isinf(us)

        def rho_vector(rho: float) -> np.ndarray:
            vec = np.full(m, rho)
            vec[equality] = min(rho * st.equality_rho_scale, st.rho_max)
            vec[free] = st.rho_min
            return vec

        rho = st.rho
        rho_vec = rho_vector(rho)

        def factor(rv: np.ndarray) -> np.ndarray:
            K = Ps + st.sigma * np.eye(n) + As.T @ (rv[:, None] * As)
            return np.linalg.inv(K)

        K_inv = factor(rho_vec)

        x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).ravel().copy()
        z = np.clip(As @ x, ls, us)
        y = np.zeros(m)

        status = MAX_ITER
        it = 0
        r_prim = r_dual = np.inf
        for it in range(1, st.max_iter + 1):
            y_prev = y
            rhs = st.sigma * x - qs + As.T @ (rho_vec * z - y)
            x_tilde = K_inv @ rhs
            z_tilde = As @ x_tilde
            x = st.alpha * x_tilde + (1.0 - st.alpha) * x
            z_relax = st.alpha * z_tilde + (1.0 - st.alpha) * z
            z = np.clip(z_relax + y / rho_vec, ls, us)
            y = y + rho_vec * (z_relax - z)

            if it % st.check_every != 0 and it != st.max_iter:
                continue

            Ax = As @ x
            Px = Ps @ x
            Aty = As.T @ y
            r_prim = _inf_norm(Ax - z)
            r_dual = _inf_norm(Px + qs + Aty)
            eps_prim = st.eps_abs + st.eps_rel * max(_inf_norm(Ax), _inf_norm(z))
            eps_dual = st.eps_abs + st.eps_rel * max(_inf_norm(Px), _inf_norm(Aty), _inf_norm(qs))

            if self._primal_infeasible(As, ls, us, y - y_prev):
                status = PRIMAL_INFEASIBLE
                break

            # 殘差已接近收斂時才嘗試拋光
            if st.polish and r_prim <= 1e3 * eps_prim and r_dual <= 1e3 * eps_dual:
                polished = self._polish(P, q, A, l, u, ls, us, z, y)
                if polished is not None:
                    polished.iterations = it
                    return polished

            if r_prim <= eps_prim and r_dual <= eps_dual:
                status = SOLVED
                break

            # 自適應 ρ
            prim_rel = r_prim / max(_inf_norm(Ax), _inf_norm(z), 1e-12)
            dual_rel = r_dual / max(_inf_norm(Px), _inf_norm(Aty), _inf_norm(qs), 1e-12)
            ratio = np.sqrt(prim_rel / max(dual_rel, 1e-12))
            if ratio > st.adaptive_rho_tolerance or ratio < 1.0 / st.adaptive_rho_tolerance:
                new_rho = float(np.clip(rho * ratio, st.rho_min, st.rho_max))
                if new_rho != rho:
                    rho = new_rho
                    rho_vec = rho_vector(rho)
                    K_inv = factor(rho_vec)

        y_out = y * D / c
        if status == SOLVED and st.polish:
            polished = self._polish(P, q, A, l, u, ls, us, z, y)
            if polished is not None:
                polished.iterations = it
                return polished

        p_res, d_res = kkt_residuals(P, q, A, l, u, x, y_out)
        logger.debug(f"ADMM 結束: status={status}, iter={it}, 原始殘差={p_res:.2e}, 對偶殘差={d_res:.2e}")
        return QPResult(x=x, y=y_out, status=status, iterations=it, primal_residual=p_res,
                        dual_residual=d_res, objective=float(0.5 * x @ P @ x + q @ x))

    def _primal_infeasible(self, As, ls, us, delta_y) -> bool:
        norm_dy = _inf_norm(delta_y)
        if norm_dy < 1e-12:
            return False
        eps = self.settings.eps_pinf
        if _inf_norm(As.T @ delta_y) > eps * norm_dy:
            return False
        pos = np.maximum(delta_y, 0.0)
        neg = np.minimum(delta_y, 0.0)
        # 無窮界限方向的分量必須為零
        if np.any((pos > eps * norm_dy) & np.isinf(us)) or np.any((neg < -eps * norm_dy) & np.isinf(ls)):
            return False
        support = np.sum(np.where(np.isinf(us), 0.0, us) * pos) + np.sum(np.where(np.isinf(ls), 0.0, ls) * neg)
        return support < -eps * norm_dy

    def _polish(self, P, q, A, l, u, ls, us, z, y) -> Optional[QPResult]:
        """
        主動集拋光

        由 ADMM 迭代猜測主動約束，求解等式約束 KKT 系統並檢查可行性與乘子符號
        """
        st = self.settings
        lower = z - ls < -y
        upper = us - z < y
        lower |= np.isclose(ls, us, rtol=0.0, atol=1e-12)
        active = np.flatnonzero(lower | upper)
        n = P.shape[0]
        k = active.size
        A_act = A[active]
        target = np.where(upper[active] & ~lower[active], u[active], l[active])

        KKT = np.block([
            [P, A_act.T],
            [A_act, np.zeros((k, k))],
        ])
        rhs = np.concatenate([-q, target])
        try:
            sol = np.linalg.solve(KKT, rhs)
        except np.linalg.LinAlgError:
            sol = np.linalg.lstsq(KKT, rhs, rcond=None)[0]
        x = sol[:n]
        y_act = sol[n:]

        y_full = np.zeros(A.shape[0])
        y_full[active] = y_act
        # 乘子符號：下界主動 ≤ 0，上界主動 ≥ 0
        is_eq = np.isclose(l[active], u[active], rtol=0.0, atol=1e-12)
        lower_only = lower[active] & ~is_eq
        upper_only = upper[active] & ~is_eq
        scale = max(_inf_norm(y_act), 1.0)
        if np.any(y_act[lower_only] > st.polish_tol * scale) or np.any(y_act[upper_only] < -st.polish_tol * scale):
            return None

        p_res, d_res = kkt_residuals(P, q, A, l, u, x, y_full)
        bound_scale = 1.0 + _inf_norm(np.where(np.isinf(l), 0.0, l))
        if p_res > st.polish_tol * bound_scale or d_res > st.polish_tol * max(_inf_norm(q), 1.0):
            return None

        return QPResult(x=x, y=y_full, status=SOLVED, iterations=0, primal_residual=p_res,
                        dual_residual=d_res, polished=True, objective=float(0.5 * x @ P @ x + q @ x),
                        active_rows=active)


def solve_qp(P: np.ndarray, q: np.ndarray, A: np.ndarray, l: np.ndarray, u: np.ndarray,
             x0: Optional[np.ndarray] = None, settings: Optional[QPSettings] = None) -> QPResult:
    """求解 l ≤ Ax ≤ u 下的凸 QP；x0 為暖啟動初值"""
    return DenseADMMSolver(settings).solve(P, q, A, l, u, x0=x0)
