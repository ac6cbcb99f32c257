"""Three synchronously coupled particle systems on the periodic box.

Each particle index i carries a triple of trajectories driven by the same
Brownian increments and started at the same sampled point:

  interacting   sigma from the empirical pair interaction over the ensemble
  intermediate  sigma from the mollified-system signal field at the particle
  limit         sigma from the limit-system signal field at the particle

All dynamics are drift-free, dX = sigma dB with sigma = sqrt(2 e^{-V} + 2),
so trajectory differences isolate the coefficient differences the coupling
is designed to measure.  Fields enter piecewise-constant in time, frozen at
step start, with the stepping of fields and particles kept in lockstep.
"""

from dataclasses import dataclass, field

import numpy as np

from . import pairsum
from .errors import ConfigurationError, CouplingError
from .noise import LANE_INIT, NoiseStream
from .pde import FieldEvolution, GridSpec, solve_signal
from .potential import build_table

SYSTEMS = ("interacting", "intermediate", "limit")
PAIRS = (("interacting", "intermediate"),
         ("intermediate", "limit"),
         ("interacting", "limit"))


def pair_name(a, b):
    return a + "-" + b


def sample_initial(n, seed=None, replica=0, u0=None, noise=None):
    """n i.i.d. points from the initial density, deterministic in
    (seed, replica) through the counter-based stream."""
    if n < 1:
        raise ConfigurationError("n must be at least 1")
    if noise is None:
        if seed is None:
            raise ConfigurationError("either a seed or a stream is required")
        noise = NoiseStream(seed)
    spec = dict(u0 or {})
    kind = spec.pop("kind", "gaussian")
    sigma = spec.pop("sigma", 1.0)
    centers = spec.pop("centers", None)
    weights = spec.pop("weights", None)
    if spec:
        raise ConfigurationError("unknown initial density keys %s"
                                 % sorted(spec))
    if kind == "gaussian" and centers is None:
        centers = [(0.0, 0.0)]
    elif kind not in ("gaussian", "mixture"):
        raise ConfigurationError("unknown initial density %r" % (kind,))
    centers = np.asarray(centers, dtype=float)
    sigmas = np.broadcast_to(np.asarray(sigma, dtype=float),
                             (len(centers),))
    if weights is None:
        weights = np.ones(len(centers))
    weights = np.asarray(weights, dtype=float)
    weights = weights / weights.sum()

    normals = noise.normals(replica, 0, n, purpose=LANE_INIT)
    if len(centers) == 1:
        return centers[0] + sigmas[0] * normals
    picks = noise.uniforms(replica, 1, n, purpose=LANE_INIT)
    comp = np.searchsorted(np.cumsum(weights), picks, side="right")
    comp = np.minimum(comp, len(centers) - 1)
    return centers[comp] + sigmas[comp, None] * normals


def diffusion_coefficient(v):
    """sigma = sqrt(2 e^{-V} + 2), decreasing from 2 at V = 0 toward
    sqrt(2) for strong interaction."""
    v = np.asarray(v, dtype=float)
    if np.any(v < 0.0):
        raise ValueError("interaction value must be nonnegative")
    return np.sqrt(2.0 * np.exp(-v) + 2.0)


def wrap_positions(pos, half_width):
    box = 2.0 * half_width
    return (pos + half_width) % box - half_width


def sample_field_bilinear(values, grid: GridSpec, points):
    """Periodic bilinear interpolation of a grid field at arbitrary points."""
    h = grid.spacing
    n = grid.n
    f = (np.asarray(points, dtype=float) + grid.half_width) / h
    i0 = np.floor(f).astype(np.int64)
    frac = f - i0
    i0 %= n
    i1 = (i0 + 1) % n
    fx, fy = frac[..., 0], frac[..., 1]
    v00 = values[i0[..., 0], i0[..., 1]]
    v10 = values[i1[..., 0], i0[..., 1]]
    v01 = values[i0[..., 0], i1[..., 1]]
    v11 = values[i1[..., 0], i1[..., 1]]
    return (v00 * (1 - fx) * (1 - fy) + v10 * fx * (1 - fy)
            + v01 * (1 - fx) * fy + v11 * fx * fy)


def torus_distance(a, b, half_width):
    box = 2.0 * half_width
    d = a - b
    d -= box * np.round(d / box)
    return np.hypot(d[..., 0], d[..., 1])


@dataclass
class CoupledEnsemble:
    """Positions of the synchronously coupled triple at one time.

    Systems not simulated in a reduced run hold None.  At construction all
    present systems share the same sampled initial points.
    """
    n: int
    epsilon: float
    seed: int
    replica: int = 0
    time: float = 0.0
    steps: int = 0
    positions_interacting: np.ndarray = None
    positions_intermediate: np.ndarray = None
    positions_limit: np.ndarray = None

    def positions(self, system):
        return getattr(self, "positions_" + system)

    def set_positions(self, system, value):
        setattr(self, "positions_" + system, value)

    @property
    def active_systems(self):
        return tuple(s for s in SYSTEMS if self.positions(s) is not None)

    @property
    def active_pairs(self):
        act = set(self.active_systems)
        return tuple(p for p in PAIRS if p[0] in act and p[1] in act)


def initial_ensemble(n, epsilon, seed, replica=0, u0=None, noise=None,
                     systems=SYSTEMS, half_width=8.0):
    zeta = wrap_positions(
        sample_initial(n, seed=seed, replica=replica, u0=u0, noise=noise),
        half_width)
    ens = CoupledEnsemble(n=n, epsilon=epsilon, seed=seed, replica=replica)
    for s in systems:
        if s not in SYSTEMS:
            raise ConfigurationError("unknown system %r" % (s,))
        ens.set_positions(s, zeta.copy())
    return ens


def _advance(ens: CoupledEnsemble, table, grid: GridSpec, dt, noise,
             v_eps=None, v_limit=None, method="auto"):
    """One Euler step of every active system off one shared increment."""
    db = noise.increments(ens.replica, ens.steps, ens.n, dt)
    box = grid.box
    if ens.positions_interacting is not None:
        pos = ens.positions_interacting
        vals = pairsum.mean_pair_interaction(pos, box, table, method=method)
        sigma = diffusion_coefficient(vals)
        ens.positions_interacting = wrap_positions(
            pos + sigma[:, None] * db, grid.half_width)
    if ens.positions_intermediate is not None:
        pos = ens.positions_intermediate
        vals = sample_field_bilinear(v_eps, grid, pos)
        sigma = diffusion_coefficient(vals)
        ens.positions_intermediate = wrap_positions(
            pos + sigma[:, None] * db, grid.half_width)
    if ens.positions_limit is not None:
        pos = ens.positions_limit
        vals = sample_field_bilinear(v_limit, grid, pos)
        sigma = diffusion_coefficient(vals)
        ens.positions_limit = wrap_positions(
            pos + sigma[:, None] * db, grid.half_width)
    ens.steps += 1
    ens.time = ens.steps * dt
    return ens


def step_coupled(ens: CoupledEnsemble, table, u_eps_field, u_limit_field,
                 dt, noise, chi=None, method="auto"):
    """Single coupled step from explicit field checkpoints.

    The fields must be checkpoints at the ensemble's current time; a
    mismatch beyond dt/2 is a coupling error.  chi defaults to the table's.
    """
    if chi is None:
        if table is None:
            raise ConfigurationError("chi is required when no table is given")
        chi = table.chi
    grid = None
    v_eps = v_limit = None
    if ens.positions_intermediate is not None:
        if u_eps_field is None:
            raise CouplingError("intermediate system needs the mollified "
                                "density field")
        if abs(u_eps_field.time - ens.time) > 0.5 * dt:
            raise CouplingError(
                "field time %.6g vs ensemble time %.6g exceeds dt/2"
                % (u_eps_field.time, ens.time))
        grid = u_eps_field.grid
        v_eps = solve_signal(u_eps_field, chi, ens.epsilon).v
    if ens.positions_limit is not None:
        if u_limit_field is None:
            raise CouplingError("limit system needs the limit density field")
        if abs(u_limit_field.time - ens.time) > 0.5 * dt:
            raise CouplingError(
                "field time %.6g vs ensemble time %.6g exceeds dt/2"
                % (u_limit_field.time, ens.time))
        grid = u_limit_field.grid
        v_limit = solve_signal(u_limit_field, chi, 0.0).v
    if grid is None:
        if u_eps_field is not None:
            grid = u_eps_field.grid
        elif u_limit_field is not None:
            grid = u_limit_field.grid
        else:
            raise CouplingError("no field provides the box geometry")
    return _advance(ens, table, grid, dt, noise,
                    v_eps=v_eps, v_limit=v_limit, method=method)


@dataclass
class CheckpointRecord:
    time: float
    errors: dict            # pair name -> (N,) torus distances
    positions: dict = field(default_factory=dict)  # system -> (N, 2)


@dataclass
class ReplicaResult:
    replica: int
    checkpoints: list
    step_times: np.ndarray = None
    step_max: dict = None          # pair name -> (steps+1,)
    step_mean_pow: dict = None     # (pair name, 2k) -> (steps+1,)
    sup_error: dict = None         # pair name -> (N,) running sup over steps


def run_coupled_batch(grid: GridSpec, chi, epsilon, n, seed, replicas,
                      checkpoint_times=None, systems=SYSTEMS, u0=None,
                      table=None, method="auto", k_list=(),
                      track_steps=False, track_sup=False,
                      store_positions=True):
    """Drive many replicas in lockstep with shared field evolutions.

    The two mean-field systems read their signal straight from the PDE
    co-evolved on the same dt lattice; every replica of the sweep shares
    that single evolution.  Per-step scalar diagnostics (max error and raw
    2k-power means per pair) are recorded when track_steps is on, and the
    per-particle running sup of the pair errors when track_sup is on.
    """
    systems = tuple(systems)
    for s in systems:
        if s not in SYSTEMS:
            raise ConfigurationError("unknown system %r" % (s,))
    if not systems:
        raise ConfigurationError("at least one system required")
    if checkpoint_times is None:
        checkpoint_times = [grid.t_end]
    dt = grid.dt
    steps_of = {}
    for t in checkpoint_times:
        idx = int(round(t / dt))
        if abs(idx * dt - t) > 1e-9 * max(1.0, abs(t)):
            raise CouplingError("checkpoint %.6g not on the dt lattice" % t)
        steps_of.setdefault(idx, float(t))
    total_steps = max(steps_of) if steps_of else 0
    if max(steps_of, default=0) * dt > grid.t_end + 0.5 * dt:
        raise ConfigurationError("checkpoint beyond t_end")

    if table is None and "interacting" in systems:
        table = build_table(chi, epsilon)
    noise = NoiseStream(seed)
    evo_eps = (FieldEvolution(grid, chi, epsilon, u0=u0)
               if "intermediate" in systems else None)
    evo_lim = (FieldEvolution(grid, chi, 0.0, u0=u0)
               if "limit" in systems else None)

    ensembles = [initial_ensemble(n, epsilon, seed, replica=r, u0=u0,
                                  noise=noise, systems=systems,
                                  half_width=grid.half_width)
                 for r in replicas]
    results = []
    for ens in ensembles:
        pairs = [pair_name(*p) for p in ens.active_pairs]
        res = ReplicaResult(replica=ens.replica, checkpoints=[])
        if track_steps:
            res.step_times = dt * np.arange(total_steps + 1)
            res.step_max = {p: np.zeros(total_steps + 1) for p in pairs}
            res.step_mean_pow = {(p, 2 * k): np.zeros(total_steps + 1)
                                 for p in pairs for k in k_list}
        if track_sup:
            res.sup_error = {p: np.zeros(n) for p in pairs}
        results.append(res)

    def observe(ens, res, step_idx):
        errs = {}
        for a, b in ens.active_pairs:
            name = pair_name(a, b)
            e = torus_distance(ens.positions(a), ens.positions(b),
                               grid.half_width)
            errs[name] = e
            if track_steps:
                res.step_max[name][step_idx] = e.max()
                for k in k_list:
                    res.step_mean_pow[(name, 2 * k)][step_idx] = \
                        np.mean(e ** (2 * k))
            if track_sup:
                np.maximum(res.sup_error[name], e,
                           out=res.sup_error[name])
        if step_idx in steps_of:
            rec = CheckpointRecord(time=steps_of[step_idx], errors=errs)
            if store_positions:
                rec.positions = {s: ens.positions(s).copy()
                                 for s in ens.active_systems}
            res.checkpoints.append(rec)

    for ens, res in zip(ensembles, results):
        observe(ens, res, 0)
    for step in range(total_steps):
        v_eps = evo_eps.signal.v if evo_eps is not None else None
        v_lim = evo_lim.signal.v if evo_lim is not None else None
        for ens, res in zip(ensembles, results):
            _advance(ens, table, grid, dt, noise,
                     v_eps=v_eps, v_limit=v_lim, method=method)
            observe(ens, res, step + 1)
        if step + 1 < total_steps:
            if evo_eps is not None:
                evo_eps.advance()
            if evo_lim is not None:
                evo_lim.advance()
    return results


def run_coupled(grid: GridSpec, chi, epsilon, n, seed, replica=0, **kwargs):
    """Single-replica convenience wrapper over run_coupled_batch."""
    (res,) = run_coupled_batch(grid, chi, epsilon, n, seed, [replica],
                               **kwargs)
    return res
