"""Per-node Thevenin-equivalent estimation from synchronized phasor windows.

For each monitored node the substation-side and feeder-side equivalents obey,
at every snapshot k,

    E_eq - Z_up   . I[k] = V_T[k]          (upstream of the PMU)
    V_T[k] - Z_down . I[k] = V_D[k]        (between PMU and the node)

Differencing against the first snapshot removes the unknown source term and
leaves two linear systems in the 3x3 matrices, which are solved as complex
least squares over the six upper-triangle unknowns (exact_symmetric mode) or
over all nine entries with the asymmetry penalized down to a Frobenius budget
(soft_constrained mode). Estimation is per node; coupling between loads is
carried by the measurements themselves.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import DeadChannel, IllConditioned, WindowTooSmall
from .measurement import MeasurementWindow
from .phasors import ImpedanceMatrix3, Phasor3

M_MIN = 4          # smallest window estimate() accepts
I_MIN = 1e-6       # live-channel current threshold (pu)

# upper-triangle parametrization: x = (z11, z12, z13, z22, z23, z33)
_SYM_ROWS = ((0, 1, 2), (1, 3, 4), (2, 4, 5))


@dataclass(frozen=True)
class EstimatorConfig:
    mode: str = "exact_symmetric"     # or "soft_constrained"
    xi_t: float = 0.05                # Frobenius asymmetry budget, soft mode
    xi_d: float = 0.05
    ridge: float = 0.0                # optional Tikhonov term for marginal windows
    cond_max: float = 1e8
    i_min: float = I_MIN


DEFAULT_CONFIG = EstimatorConfig()


@dataclass
class TheveninEquivalent:
    node: str
    z_eq_t: ImpedanceMatrix3
    z_eq_d: ImpedanceMatrix3
    z_load: tuple[complex | None, complex | None, complex | None]
    e_eq: Phasor3 | None
    residual_t: float
    residual_d: float
    condition: float


def load_impedance(
    window: MeasurementWindow,
    node: str,
    i_min: float = I_MIN,
    expected_phases=None,
) -> tuple[complex | None, complex | None, complex | None]:
    """Mean of V/I per phase over the window; de-energized phases become None.

    A phase whose current stays below `i_min` in every frame is treated as
    absent. If `expected_phases` names it anyway, that is a DeadChannel error.
    """
    _vt, v_d, i_l = window.node_series(node)
    out: list[complex | None] = []
    for ph in range(3):
        live = np.abs(i_l[:, ph]) > i_min
        if not live.all():
            if expected_phases is not None and ph in tuple(expected_phases):
                raise DeadChannel(
                    f"node {node!r} phase {'abc'[ph]}: current below {i_min} "
                    f"in {int((~live).sum())} of {len(live)} frames"
                )
            out.append(None)
            continue
        out.append(complex(np.mean(v_d[:, ph] / i_l[:, ph])))
    return tuple(out)


def build_delta_system(window: MeasurementWindow, node: str):
    """Frame-over-first differences (dI, dV_T, dV_D), each (M-1, 3) complex."""
    if len(window) < 2:
        raise WindowTooSmall(f"need at least 2 frames, have {len(window)}")
    v_t, v_d, i_l = window.node_series(node)
    return i_l[1:] - i_l[0], v_t[1:] - v_t[0], v_d[1:] - v_d[0]


def _stack_symmetric(d_i: np.ndarray) -> np.ndarray:
    """Design matrix mapping the 6 symmetric unknowns to stacked Z . dI rows."""
    m = d_i.shape[0]
    a = np.zeros((3 * m, 6), complex)
    for k in range(m):
        for r in range(3):
            for c in range(3):
                a[3 * k + r, _SYM_ROWS[r][c]] += d_i[k, c]
    return a


def _stack_full(d_i: np.ndarray) -> np.ndarray:
    m = d_i.shape[0]
    a = np.zeros((3 * m, 9), complex)
    for k in range(m):
        for r in range(3):
            a[3 * k + r, 3 * r : 3 * r + 3] = d_i[k]
    return a


def _sym_to_matrix(x: np.ndarray) -> ImpedanceMatrix3:
    z = np.array(
        [
            [x[0], x[1], x[2]],
            [x[1], x[3], x[4]],
            [x[2], x[4], x[5]],
        ]
    )
    return ImpedanceMatrix3(z)


def _lstsq(a, b, ridge):
    if ridge > 0:
        n = a.shape[1]
        a = np.vstack([a, np.sqrt(ridge) * np.eye(n, dtype=complex)])
        b = np.concatenate([b, np.zeros(n, complex)])
    x, *_ = np.linalg.lstsq(a, b, rcond=None)
    return x

def _sum_row_norms(z: np.ndarray, d_i: np.ndarray, rhs: np.ndarray) -> float:
    """Reported fit quality: sum over frames of ||Z dI[k] - rhs[k]||_2."""
    return float(sum(np.linalg.norm(z @ d_i[k] - rhs[k]) for k in range(d_i.shape[0])))


def _solve_soft(a_full, b, keep9, xi, ridge):
    """Full-entry least squares with asymmetry penalized to meet the budget.

    Asymmetry rows encode (z_rc - z_cr) for the off-diagonal pairs. The
    penalty weight is bisected down to the smallest value whose solution
    keeps the Frobenius asymmetry within xi (an inactive constraint needs no
    penalty at all).
    """
    pen = np.zeros((3, 9), complex)
    for row, (r, c) in enumerate(((0, 1), (0, 2), (1, 2))):
        pen[row, 3 * r + c] = 1.0
        pen[row, 3 * c + r] = -1.0
    pen = pen[:, keep9]
    a_full = a_full[:, keep9]

    def solve(weight):
        aa = np.vstack([a_full, np.sqrt(weight) * pen]) if weight else a_full
        bb = np.concatenate([b, np.zeros(3, complex)]) if weight else b
        x = _lstsq(aa, bb, ridge)
        full = np.zeros(9, complex)
        full[keep9] = x
        asym = np.sqrt(2.0) * float(np.linalg.norm(pen @ x))  # ||Z - Z^T||_F
        return full.reshape(3, 3), asym

    z, asym = solve(0.0)
    if asym <= xi:
        return z
    hi = 1.0
    while solve(hi)[1] > xi and hi < 1e16:
        hi *= 10.0
    lo = 0.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if solve(mid)[1] > xi:
            lo = mid
        else:
            hi = mid
    return solve(hi)[0]


def _live_phases(window: MeasurementWindow, node: str, i_min: float):
    _vt, _vd, i_l = window.node_series(node)
    return [ph for ph in range(3) if np.max(np.abs(i_l[:, ph])) > i_min]


def estimate(
    window: MeasurementWindow,
    node: str,
    config: EstimatorConfig = DEFAULT_CONFIG,
) -> TheveninEquivalent:
    """Estimate both equivalents for one node from one window.

    Matrix entries coupling only de-energized phases are unobservable and
    left at zero; such phases are also flagged absent in z_load. Raises
    WindowTooSmall (fewer than 4 frames) or IllConditioned (delta-system
    condition above config.cond_max, meaning the load variation did not
    excite enough independent current directions).
    """
    if len(window) < M_MIN:
        raise WindowTooSmall(f"need at least {M_MIN} frames, have {len(window)}")
    d_i, d_vt, d_vd = build_delta_system(window, node)

    live = _live_phases(window, node, config.i_min)
    if not live:
        raise DeadChannel(f"node {node!r}: no energized phase in the window")
    # keep only unknowns that touch a live column; dead-dead couplings are
    # unobservable from these measurements
    pairs6 = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))
    keep6 = [i for i, (r, c) in enumerate(pairs6) if r in live or c in live]
    keep9 = [3 * r + c for r in range(3) for c in range(3) if r in live or c in live]

    a_sym = _stack_symmetric(d_i)[:, keep6]
    sv = np.linalg.svd(a_sym, compute_uv=False)
    condition = float(sv[0] / sv[-1]) if sv[-1] > 0 else float("inf")
    if condition > config.cond_max:
        raise IllConditioned(
            f"node {node!r}: delta-system condition {condition:.3g} exceeds "
            f"{config.cond_max:.3g}; the window lacks load-variation excitation",
            condition=condition,
        )

    b_t = -d_vt.reshape(-1)
    b_d = (d_vt - d_vd).reshape(-1)
    if config.mode == "exact_symmetric":
        def solve_sym(b):
            x = np.zeros(6, complex)
            x[keep6] = _lstsq(a_sym, b, config.ridge)
            return _sym_to_matrix(x)

        z_t = solve_sym(b_t)
        z_d = solve_sym(b_d)
    elif config.mode == "soft_constrained":
        a_full = _stack_full(d_i)
        z_t = ImpedanceMatrix3(_solve_soft(a_full, b_t, keep9, config.xi_t, config.ridge))
        z_d = ImpedanceMatrix3(_solve_soft(a_full, b_d, keep9, config.xi_d, config.ridge))
    else:
        raise ValueError(f"unknown estimator mode {config.mode!r}")

    return TheveninEquivalent(
        node=node,
        z_eq_t=z_t,
        z_eq_d=z_d,
        z_load=load_impedance(window, node, i_min=config.i_min),
        e_eq=None,
        residual_t=_sum_row_norms(z_t.as_array(), d_i, -d_vt),
        residual_d=_sum_row_norms(z_d.as_array(), d_i, d_vt - d_vd),
        condition=condition,
    )


def recover_e_eq(
    window: MeasurementWindow, node: str, z_eq_t: ImpedanceMatrix3
) -> tuple[Phasor3, float]:
    """Source phasor behind the upstream equivalent, plus its fit residual.

    e_eq = mean_k (V_T[k] + Z . I[k]); the residual is the largest deviation
    of any frame from that mean.
    """
    v_t, _v_d, i_l = window.node_series(node)
    z = z_eq_t.as_array()
    e_all = v_t + i_l @ z.T
    e_eq = e_all.mean(axis=0)
    residual = float(np.max(np.abs(e_all - e_eq))) if len(e_all) > 1 else 0.0
    return Phasor3.from_array(e_eq), residual


def with_recovered_source(window, equivalent: TheveninEquivalent) -> TheveninEquivalent:
    e_eq, _res = recover_e_eq(window, equivalent.node, equivalent.z_eq_t)
    return replace(equivalent, e_eq=e_eq)


# ----------------------------------------------------------------------
# JSON export


def _c2j(z: complex):
    return [z.real, z.imag]


def equivalent_to_dict(eq: TheveninEquivalent) -> dict:
    return {
        "node": eq.node,
        "z_eq_t": [[_c2j(v) for v in row] for row in eq.z_eq_t.as_array().tolist()],
        "z_eq_d": [[_c2j(v) for v in row] for row in eq.z_eq_d.as_array().tolist()],
        "z_load": [None if z is None else _c2j(z) for z in eq.z_load],
        "e_eq": None if eq.e_eq is None else [_c2j(eq.e_eq.a), _c2j(eq.e_eq.b), _c2j(eq.e_eq.c)],
        "residual_t": eq.residual_t,
        "residual_d": eq.residual_d,
        "condition": eq.condition,
    }


def equivalent_from_dict(d: dict) -> TheveninEquivalent:
    def j2c(v):
        return complex(v[0], v[1])

    return TheveninEquivalent(
        node=d["node"],
        z_eq_t=ImpedanceMatrix3([[j2c(v) for v in row] for row in d["z_eq_t"]]),
        z_eq_d=ImpedanceMatrix3([[j2c(v) for v in row] for row in d["z_eq_d"]]),
        z_load=tuple(None if z is None else j2c(z) for z in d["z_load"]),
        e_eq=None if d.get("e_eq") is None else Phasor3(*[j2c(v) for v in d["e_eq"]]),
        residual_t=d["residual_t"],
        residual_d=d["residual_d"],
        condition=d["condition"],
    )
