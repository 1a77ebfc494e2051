"""Independent reference implementations used only by the tests.

These are deliberately naive (Python loops, dense matrices, finite
differences) and share no code with the engine beyond the thermodynamic
closures, which are checked separately.
"""

from __future__ import annotations

import numpy as np
import torch

from metripart.geometry import ParticleSystem, build_pairs, minimum_image
from metripart.thermo import compute_coefficients, compute_thermo


def brute_force_pairs(sys: ParticleSystem, h: float) -> set[tuple[int, int]]:
    out = set()
    for a in range(sys.n):
        for b in range(a + 1, sys.n):
            d = minimum_image(sys.r[a] - sys.r[b], sys.box)
            if np.linalg.norm(d) < h:
                out.add((a, b))
    return out


def brute_min_image(disp, box):
    """Nearest image by explicit search over the 3^D neighbouring images."""
    best = None
    L = box.lengths
    for shift in np.ndindex(*(3,) * box.dim):
        k = np.array(shift) - 1
        d = np.array(disp, dtype=float) - k * L
        if box.mode == "lees_edwards":
            d[0] -= k[1] * box.shear_offset
            d[0] -= L[0] * np.round(d[0] / L[0])
        if best is None or np.linalg.norm(d) < np.linalg.norm(best):
            best = d
    return best


def silu_reference(x):
    return x / (1.0 + np.exp(-x))


def mlp_reference(net, x):
    """Straight-line numpy evaluation of an Mlp/Cmnn."""
    h = (np.asarray(x, dtype=float) - net.in_shift.numpy()) / net.in_scale.numpy()
    ws = [w.detach().numpy() for w in net.effective_weights()]
    bs = [b.detach().numpy() for b in net.biases]
    for w, b in zip(ws[:-1], bs[:-1]):
        z = w @ h + b
        h = silu_reference(z) if net.activation == "silu" else np.logaddexp(0.0, z)
    return ws[-1] @ h + bs[-1]


def _closures(state: ParticleSystem, params, S):
    pairs = build_pairs(state, params.h)
    thermo = compute_thermo(pairs, torch.as_tensor(S), params, state.r0, state.box, strict=False)
    coeffs = compute_coefficients(pairs, thermo.T, params, params.h)
    return pairs, thermo, coeffs


def noise_map(state: ParticleSystem, params, v, S) -> np.ndarray:
    """Dense Q with dx~ = Q zeta, zeta ~ N(0, dt I); rows are (v block, S block)."""
    with torch.no_grad():
        pairs, thermo, coeffs = _closures(state, params, S)
    n, dim = v.shape
    kb, m = float(params.kb), float(params.m)
    sq = np.sqrt(2 * kb)
    T = thermo.T.numpy()
    cols_per = dim * dim + 1
    Q = np.zeros((n * dim + n, pairs.size * cols_per))
    for p in range(pairs.size):
        i, j = int(pairs.i[p]), int(pairs.j[p])
        e = pairs.e[p]
        vij = v[i] - v[j]
        A, B, C = float(coeffs.A[p]), float(coeffs.B[p]), float(coeffs.C[p])
        for a in range(dim):
            for b in range(dim):
                unit = np.zeros((dim, dim))
                unit[a, b] = 1.0
                tr = np.trace(unit)
                wbar = 0.5 * (unit + unit.T) - np.eye(dim) * tr / dim
                xi = A * wbar @ e + B * tr / dim * e
                col = p * cols_per + a * dim + b
                Q[i * dim:(i + 1) * dim, col] += sq * xi / m
                Q[j * dim:(j + 1) * dim, col] -= sq * xi / m
                heat = -0.5 * sq * xi @ vij
                Q[n * dim + i, col] += heat / T[i]
                Q[n * dim + j, col] += heat / T[j]
        col = p * cols_per + dim * dim
        Q[n * dim + i, col] += sq * C / T[i]
        Q[n * dim + j, col] -= sq * C / T[j]
    return Q


def friction_matrix(state, params, v, S) -> np.ndarray:
    Q = noise_map(state, params, v, S)
    return Q @ Q.T / (2 * float(params.kb))


def drift_reference(state: ParticleSystem, params, eps: float = 1e-5) -> tuple[np.ndarray, np.ndarray]:
    """M grad S + k_B div M over the (v, S) block, by central differences."""
    v0 = state.v.copy()
    S0 = np.asarray(state.S, dtype=float).copy()
    n, dim = v0.shape
    M = friction_matrix(state, params, v0, S0)
    grad_s = np.concatenate([np.zeros(n * dim), np.ones(n)])
    out = M @ grad_s
    div = np.zeros(n * dim + n)
    for k in range(n * dim + n):
        vp, vm, Sp, Sm = v0.copy(), v0.copy(), S0.copy(), S0.copy()
        if k < n * dim:
            vp.reshape(-1)[k] += eps
            vm.reshape(-1)[k] -= eps
        else:
            Sp[k - n * dim] += eps
            Sm[k - n * dim] -= eps
        Mp = friction_matrix(state, params, vp, Sp)
        Mm = friction_matrix(state, params, vm, Sm)
        div += (Mp[:, k] - Mm[:, k]) / (2 * eps)
    out = out + float(params.kb) * div
    return out[: n * dim].reshape(n, dim), out[n * dim:]


def ito_energy_rate(state, params, dv_dt: np.ndarray, dS_dt: np.ndarray) -> tuple[float, float]:
    """Expected dE/dt from the Ito formula, plus a magnitude scale for tolerances.

    The reversible part cancels by skew symmetry, so only the drift and the
    second-order (v, S) curvature of E weighted by the friction matrix remain.
    """
    v = state.v
    S = np.asarray(state.S, dtype=float)
    n, dim = v.shape
    with torch.no_grad():
        _, thermo, _ = _closures(state, params, S)
    m, kb = float(params.m), float(params.kb)
    T = thermo.T.numpy()
    uss = thermo.U_SS.numpy()
    M = friction_matrix(state, params, v, S)
    terms = [m * np.sum(v * dv_dt), np.sum(T * dS_dt),
             kb * m * np.trace(M[: n * dim, : n * dim]),
             kb * np.sum(uss * np.diag(M)[n * dim:])]
    return float(sum(terms)), float(sum(abs(t) for t in terms))
