"""Multi-antenna transmit beamforming joined with surface phase design.

With several transmit antennas the link quality depends on the transmit
beamformer and on the surface phases.  Both are optimized alternately to
maximize the received power averaged over the surface's symbol set: the
beamformer step is a dominant-eigenvector problem, the phase step is a
unit-modulus quadratic program handled through its semidefinite relaxation
with a rank-one extraction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh as _eigh

from .channel import ChannelParams, _rician_draw, complex_normal
from .constellation import BitMap
from .transceiver import Hypothesis, ReceivedSample, SystemConfig, hypotheses, mode_weights

SDP_TOL = 1e-6
SDP_MAX_ITER = 5000


class SolverError(RuntimeError):
    """Raised when the relaxation solver does not reach its tolerance."""

    def __init__(self, message: str, *, primal: float, dual: float, iterations: int):
        super().__init__(message)
        self.primal = primal
        self.dual = dual
        self.iterations = iterations


@dataclass(frozen=True, eq=False)
class MisoChannel:
    """Links of the multi-antenna setup; ``h_bar`` is diag(f) @ H."""

    H: np.ndarray
    f: np.ndarray
    g: np.ndarray
    h_bar: np.ndarray

    def __post_init__(self) -> None:
        n, n_t = self.H.shape
        if self.f.shape != (n,) or self.g.shape != (n_t,):
            raise ValueError("inconsistent channel dimensions")
        for arr in (self.H, self.f, self.g, self.h_bar):
            arr.setflags(write=False)

    @property
    def n_elements(self) -> int:
        return self.H.shape[0]

    @property
    def n_tx(self) -> int:
        return self.H.shape[1]


def sample_miso_channel(params: ChannelParams, n_tx: int,
                        rng: np.random.Generator) -> MisoChannel:
    """Draw the element matrix, surface-receiver vector, and direct vector.

    Every entry follows the same Rician model and path losses as the
    single-antenna links (fixed draw order: H, f, g).
    """
    k = params.rician_k
    n = params.n_elements
    H = _rician_draw(rng, params.rho1, k, n * n_tx).reshape(n, n_tx)
    f = _rician_draw(rng, params.rho2, k, n)
    g = _rician_draw(rng, params.rho3, k, n_tx)
    return MisoChannel(H=H, f=f, g=g, h_bar=f[:, None] * H)


@dataclass(frozen=True, eq=False)
class BackscatterStats:
    """Exact first and second moments of the surface symbol set."""

    u_bar: np.ndarray
    U: np.ndarray
    q_bar: np.ndarray

    def __post_init__(self) -> None:
        for arr in (self.u_bar, self.U, self.q_bar):
            arr.setflags(write=False)


def beta_patterns(bit_map: BitMap) -> np.ndarray:
    """Per-element reflection amplitudes of each surface symbol (P, N)."""
    n = bit_map.alphabet[-1]
    hi, lo = mode_weights(bit_map.mode, bit_map.xi if bit_map.xi else 1.0)
    patterns = np.full((bit_map.backscatter_order, n), lo)
    for row, (n_a, _) in enumerate(bit_map.backscatter_pairs):
        patterns[row, :n_a] = hi
    return patterns


def backscatter_stats(bit_map: BitMap) -> BackscatterStats:
    """Uniform averages over the surface symbol set (no sampling involved)."""
    patterns = beta_patterns(bit_map)
    psis = np.fromiter((psi for _, psi in bit_map.backscatter_pairs), dtype=float)
    p = patterns.shape[0]
    u_bar = (patterns * np.exp(-1j * psis)[:, None]).mean(axis=0)
    big_u = patterns.T @ patterns / p
    return BackscatterStats(u_bar=u_bar, U=big_u, q_bar=u_bar.conj())


def _moment_block(stats: BackscatterStats) -> np.ndarray:
    n = stats.U.shape[0]
    block = np.empty((n + 1, n + 1), dtype=complex)
    block[:n, :n] = stats.U
    block[:n, n] = stats.u_bar
    block[n, :n] = stats.u_bar.conj()
    block[n, n] = 1.0
    return block


def _power_matrix(channel: MisoChannel, stats: BackscatterStats,
                  theta: np.ndarray) -> np.ndarray:
    """Average received-power quadratic form in the transmit beamformer."""
    stack = np.vstack([theta[:, None] * channel.h_bar, channel.g[None, :]])
    return stack.conj().T @ _moment_block(stats) @ stack


def received_power(channel: MisoChannel, stats: BackscatterStats,
                   p: np.ndarray, theta: np.ndarray) -> float:
    return float(np.real(p.conj() @ _power_matrix(channel, stats, theta) @ p))


def active_beamforming(channel: MisoChannel, stats: BackscatterStats,
                       theta: np.ndarray) -> tuple[np.ndarray, float]:
    """Optimal unit-norm beamformer for fixed phases (dominant eigenvector)."""
    v = _power_matrix(channel, stats, theta)
    eigenvalues, eigenvectors = np.linalg.eigh(v)
    p = eigenvectors[:, -1]
    return p / np.linalg.norm(p), float(eigenvalues[-1])


def solve_diag_sdp(r: np.ndarray, tol: float = SDP_TOL,
                   max_iter: int = SDP_MAX_ITER,
                   warm: tuple | None = None) -> tuple[np.ndarray, dict]:
    """Maximize trace(R X) over Hermitian X with unit diagonal and X >= 0.

    Operator splitting: one block carries the linear objective and the
    diagonal constraint, the other the cone, with scaled dual updates and
    residual balancing.  The PSD projection is an eigendecomposition with
    negative eigenvalues clipped.

    ``warm`` is the ``"state"`` entry of a previous solve's info dict.  It is
    only safe when the new objective matrix is a small perturbation of the
    previous one (the alternating loop's later rounds); reusing state across
    unrelated problems can park the iterates where the stopping rule fires
    far from the optimum.  Returns the cone-side iterate rescaled to an
    exactly unit diagonal, plus solver diagnostics.
    """
    n = r.shape[0]
    scale = np.abs(r).max()
    if scale == 0.0:
        raise ValueError("zero objective matrix")
    r_scaled = r / scale
    if warm is None:
        rho = 3.0
        z = np.eye(n, dtype=complex)
        y = np.zeros((n, n), dtype=complex)
    else:
        z, y, rho = warm[0].copy(), warm[1].copy(), warm[2]
    primal = dual = math.inf
    iterations = 0
    for it in range(max_iter):
        iterations = it + 1
        x = z - y + r_scaled / rho
        x += x.conj().T
        x *= 0.5
        np.fill_diagonal(x, 1.0)
        w, vec = _eigh(x + y, overwrite_a=True, check_finite=False, driver="evd")
        positive = w > 0.0
        lead = vec[:, positive] * w[positive]
        z_new = lead @ vec[:, positive].conj().T
        primal = float(np.linalg.norm(x - z_new))
        dual = float(rho * np.linalg.norm(z_new - z))
        z = z_new
        y += x - z
        norm = max(float(np.linalg.norm(x)), float(np.linalg.norm(z)), 1.0)
        if primal / norm < tol and dual / norm < tol:
            break
        if (it + 1) % 50 == 0:
            if primal > 10.0 * dual:
                rho *= 2.0
                y /= 2.0
            elif dual > 10.0 * primal:
                rho /= 2.0
                y *= 2.0
    else:
        raise SolverError(
            f"relaxation solver hit the {max_iter}-iteration cap",
            primal=primal, dual=dual, iterations=iterations,
        )
    # Congruence rescaling pins the diagonal at exactly one and preserves
    # positive semidefiniteness.
    d = 1.0 / np.sqrt(np.clip(np.real(np.diag(z)), 1e-12, None))
    solution = d[:, None] * z * d[None, :]
    info = {
        "iterations": iterations,
        "primal_residual": primal,
        "dual_residual": dual,
        "objective": float(np.real(np.trace(r @ solution))),
        "state": (z, y, rho),
    }
    return solution, info


def _phase_objective_matrix(channel: MisoChannel, stats: BackscatterStats,
                            p: np.ndarray) -> np.ndarray:
    """Homogenized quadratic objective for the surface phases at fixed p."""
    g_diag = channel.h_bar @ p
    g_tilde = channel.g @ p
    n = channel.n_elements
    r = np.zeros((n + 1, n + 1), dtype=complex)
    # diag(Gp)^H U diag(Gp) block plus the direct-path coupling column.
    r[:n, :n] = (g_diag.conj()[:, None] * stats.U) * g_diag[None, :]
    column = g_tilde * (g_diag.conj() * stats.u_bar)
    r[:n, n] = column
    r[n, :n] = column.conj()
    return r


def passive_beamforming_sdr(channel: MisoChannel, stats: BackscatterStats,
                            p: np.ndarray, tol: float = SDP_TOL,
                            max_iter: int = SDP_MAX_ITER,
                            warm: tuple | None = None) -> tuple[np.ndarray, dict]:
    """Surface phases for a fixed beamformer via relaxation plus extraction.

    The dominant eigenpair of the relaxed solution is projected back to unit
    modulus, de-rotated by the homogenization variable.
    """
    r = _phase_objective_matrix(channel, stats, p)
    solution, info = solve_diag_sdp(r, tol=tol, max_iter=max_iter, warm=warm)
    eigenvalues, eigenvectors = np.linalg.eigh(solution)
    principal = math.sqrt(max(eigenvalues[-1], 0.0)) * eigenvectors[:, -1]
    pivot = principal[-1]
    if abs(pivot) < 1e-12:
        pivot = 1.0
    theta = np.exp(1j * np.angle(principal[:-1] / pivot))
    return theta, info


@dataclass(frozen=True, eq=False)
class BeamformingState:
    """Result of the alternating optimization loop."""

    p: np.ndarray
    theta: np.ndarray
    objective: float
    iteration: int
    trajectory: tuple[float, ...]
    solver_info: tuple[dict, ...]

    def __post_init__(self) -> None:
        self.p.setflags(write=False)
        self.theta.setflags(write=False)

    def to_dict(self) -> dict:
        return {
            "p": [[v.real, v.imag] for v in self.p],
            "theta_phases": list(np.angle(self.theta)),
            "objective": self.objective,
            "iterations": self.iteration,
            "trajectory": list(self.trajectory),
            "solver": [
                {k: v for k, v in info.items() if k != "state"}
                for info in self.solver_info
            ],
        }


def alternating_optimize(channel: MisoChannel, stats: BackscatterStats,
                         epsilon: float = 1e-10, max_rounds: int = 4,
                         sdp_tol: float = SDP_TOL,
                         sdp_max_iter: int = SDP_MAX_ITER) -> BeamformingState:
    """Alternate the beamformer and phase steps from an all-ones phase start.

    The loop stops when the beamformer-step objective moves by less than
    ``epsilon`` between rounds or after ``max_rounds`` rounds.  The objective
    is logged after each half-step; the extraction half-step is not
    guaranteed monotone, the eigenvector half-step is.  Later rounds
    warm-start the relaxation solver since their objective matrices are small
    perturbations of the first round's; the warm state never leaves the loop.
    """
    if epsilon <= 0.0:
        raise ValueError("convergence threshold must be positive")
    if max_rounds < 1:
        raise ValueError("at least one round is required")
    theta = np.ones(channel.n_elements, dtype=complex)
    trajectory: list[float] = []
    infos: list[dict] = []
    previous = None
    warm = None
    p = np.ones(channel.n_tx, dtype=complex) / math.sqrt(channel.n_tx)
    rounds = 0
    for rounds in range(1, max_rounds + 1):
        p, objective_p = active_beamforming(channel, stats, theta)
        trajectory.append(objective_p)
        theta, info = passive_beamforming_sdr(
            channel, stats, p, tol=sdp_tol, max_iter=sdp_max_iter, warm=warm
        )
        warm = info["state"]
        infos.append(info)
        trajectory.append(received_power(channel, stats, p, theta))
        if previous is not None and abs(objective_p - previous) < epsilon:
            break
        previous = objective_p
    return BeamformingState(
        p=p,
        theta=theta,
        objective=trajectory[-1],
        iteration=rounds,
        trajectory=tuple(trajectory),
        solver_info=tuple(infos),
    )


def miso_model_vector(channel: MisoChannel, p: np.ndarray, theta: np.ndarray,
                      config: SystemConfig) -> np.ndarray:
    """Noiseless receive values of all hypotheses, in bit-label order."""
    bit_map = config.bit_map
    weighted = theta * (channel.h_bar @ p)
    prefix = np.concatenate(([0.0 + 0.0j], np.cumsum(weighted)))
    counts = np.fromiter((na for na, _ in bit_map.backscatter_pairs), dtype=int)
    psis = np.fromiter((psi for _, psi in bit_map.backscatter_pairs), dtype=float)
    core = np.exp(1j * psis) * prefix[counts] + channel.g @ p
    x = np.asarray(bit_map.active_symbols)
    models = core[None, :] * x[:, None]
    return math.sqrt(config.p_t) * models.reshape(-1)


def miso_received_signal(channel: MisoChannel, p: np.ndarray, theta: np.ndarray,
                         hypothesis: Hypothesis, config: SystemConfig,
                         rng: np.random.Generator) -> ReceivedSample:
    """Synthesize one multi-antenna transmission of the given triple."""
    if np.linalg.norm(p) > 1.0 + 1e-9:
        raise ValueError("beamformer power exceeds the unit budget")
    if np.max(np.abs(np.abs(theta) - 1.0)) > 1e-9:
        raise ValueError("surface phases must be unit modulus")
    if hypothesis.n_a not in config.bit_map.alphabet:
        raise ValueError(f"element count {hypothesis.n_a} not in the alphabet")
    index = config.bit_map.index_of(hypothesis.n_a, hypothesis.psi, hypothesis.x)
    models = miso_model_vector(channel, p, theta, config)
    w = complex(complex_normal(rng, 1)[0]) * math.sqrt(config.n0)
    return ReceivedSample(y=models[index] + w, realization=channel, truth=hypothesis)


def miso_ml_detect(channel: MisoChannel, p: np.ndarray, theta: np.ndarray,
                   config: SystemConfig, y: complex) -> Hypothesis:
    """Joint maximum-likelihood detection under the multi-antenna model."""
    models = miso_model_vector(channel, p, theta, config)
    index = int(np.argmin(np.abs(y - models) ** 2))
    return hypotheses(config.bit_map)[index]
