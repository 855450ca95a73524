"""Random network instance generation.

Drops access points and users uniformly on a square, applies a three-slope
path-loss model with log-normal shadowing to get the large-scale coefficients
zeta, and derives the channel-estimation quality coefficients gamma from the
uplink pilot model. Everything is a pure function of (config, seed): named RNG
streams keep geometry, shadowing, small-scale fading and solver
initialization independent of each other.
"""

import json
from dataclasses import dataclass, field, asdict
from typing import Iterator, Tuple

import numpy as np

BOLTZMANN_J_PER_K = 1.38e-23

# Named RNG streams. Drawing more from one stream never perturbs another.
STREAM_GEOMETRY = 0
STREAM_SHADOWING = 1
STREAM_SMALLSCALE = 2
STREAM_SOLVER_INIT = 3
STREAM_TRIALS = 4

# Fixed draw count per block of small-scale realizations; per-block substreams
# make Monte-Carlo results independent of how many blocks a caller consumes.
SMALLSCALE_BLOCK = 4096


@dataclass(frozen=True)
class RngSeed:
    """Seed record: (seed, stream_id) reproduces identical draws bit-for-bit
    on one platform."""

    seed: int
    stream_id: int = STREAM_GEOMETRY

    def rng(self, *key: int) -> np.random.Generator:
        """Generator for this stream, optionally sub-keyed (block index,
        trial index, ...)."""
        return np.random.default_rng(
            np.random.SeedSequence([int(self.seed), int(self.stream_id), *map(int, key)])
        )


def stream_rng(seed: int, stream_id: int, *key: int) -> np.random.Generator:
    """Generator for one named stream (plus optional sub-keys) of a seed."""
    return RngSeed(seed, stream_id).rng(*key)


@dataclass(frozen=True)
class Dimensions:
    num_aps: int
    num_groups: int
    group_sizes: Tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "group_sizes", tuple(int(k) for k in self.group_sizes))
        if self.num_aps < 1:
            raise ValueError("num_aps must be >= 1")
        if self.num_groups < 1:
            raise ValueError("num_groups must be >= 1")
        if len(self.group_sizes) != self.num_groups:
            raise ValueError("group_sizes length must equal num_groups")
        if any(k < 1 for k in self.group_sizes):
            raise ValueError("every group size must be >= 1")

    @property
    def num_users(self) -> int:
        return sum(self.group_sizes)

    @staticmethod
    def uniform(num_aps: int, num_groups: int, users_per_group: int) -> "Dimensions":
        return Dimensions(num_aps, num_groups, (users_per_group,) * num_groups)


@dataclass(frozen=True)
class PhysicalConfig:
    """Physical layer constants; defaults follow the simulation setup used
    throughout (20 MHz at 1.9 GHz, 0.2 W pilot/data power, 9 dB shadowing)."""

    bandwidth_hz: float = 20e6
    carrier_freq_hz: float = 1900e6
    noise_figure_db: float = 9.0
    temperature_k: float = 290.0
    pilot_power_w: float = 0.2
    data_power_w: float = 0.2
    pilot_len_symbols: int = 20
    coherence_len_symbols: int = 200
    shadow_std_db: float = 9.0
    area_side_m: float = 1000.0
    # three-slope path loss: breakpoints and antenna heights (overridable)
    pathloss_d0_m: float = 10.0
    pathloss_d1_m: float = 50.0
    ap_height_m: float = 15.0
    user_height_m: float = 1.65

    def __post_init__(self):
        positive = (
            "bandwidth_hz carrier_freq_hz temperature_k pilot_power_w data_power_w "
            "pilot_len_symbols coherence_len_symbols shadow_std_db area_side_m "
            "pathloss_d0_m pathloss_d1_m ap_height_m user_height_m"
        ).split()
        for name in positive:
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.noise_figure_db < 0:
            raise ValueError("noise_figure_db must be nonnegative")
        if self.pilot_len_symbols > self.coherence_len_symbols:
            raise ValueError("pilot_len_symbols must not exceed coherence_len_symbols")
        if self.pathloss_d0_m >= self.pathloss_d1_m:
            raise ValueError("pathloss_d0_m must be below pathloss_d1_m")

    @property
    def prelog_factor(self) -> float:
        """Training overhead factor 1 - tau_p/tau_c (off by default in rate
        reporting; the base rate expression carries no pre-log)."""
        return 1.0 - self.pilot_len_symbols / self.coherence_len_symbols


def noise_power(cfg: PhysicalConfig) -> float:
    """Thermal noise power k*T*B*NF in watts (NF converted from dB)."""
    nf_linear = 10.0 ** (cfg.noise_figure_db / 10.0)
    return BOLTZMANN_J_PER_K * cfg.temperature_k * cfg.bandwidth_hz * nf_linear


def generate_geometry(dims: Dimensions, area_side_m: float, seed: int):
    """Uniform AP and user positions on the [0, side]^2 square.

    Returns (ap_xy (M,2), user_xy (T,2)); deterministic given the seed.
    """
    rng = stream_rng(seed, STREAM_GEOMETRY)
    ap_xy = rng.uniform(0.0, area_side_m, size=(dims.num_aps, 2))
    user_xy = rng.uniform(0.0, area_side_m, size=(dims.num_users, 2))
    return ap_xy, user_xy


def _cost231_fixed_loss_db(cfg: PhysicalConfig) -> float:
    f_mhz = cfg.carrier_freq_hz / 1e6
    lf = np.log10(f_mhz)
    return (
        46.3
        + 33.9 * lf
        - 13.82 * np.log10(cfg.ap_height_m)
        - ((1.1 * lf - 0.7) * cfg.user_height_m - (1.56 * lf - 0.8))
    )


def path_loss_db(dist_m: np.ndarray, cfg: PhysicalConfig) -> np.ndarray:
    """Three-slope path loss in dB (gain, i.e. negative).

    35 dB/decade beyond d1, 20 dB/decade between d0 and d1, constant below d0
    (distance floored at d0 to avoid the d -> 0 singularity).
    """
    loss = _cost231_fixed_loss_db(cfg)
    d_km = np.maximum(np.asarray(dist_m, dtype=float), cfg.pathloss_d0_m) / 1000.0
    d1_km = cfg.pathloss_d1_m / 1000.0
    near = -loss - 15.0 * np.log10(d1_km) - 20.0 * np.log10(d_km)
    far = -loss - 35.0 * np.log10(d_km)
    return np.where(d_km > d1_km, far, near)


def large_scale_fading(ap_xy: np.ndarray, user_xy: np.ndarray, cfg: PhysicalConfig, seed: int) -> np.ndarray:
    """Large-scale coefficients zeta (M, T): path loss times log-normal
    shadowing. Shadowing (std shadow_std_db, i.i.d. per AP-user pair) is
    applied only beyond the d1 breakpoint."""
    dist = np.linalg.norm(ap_xy[:, None, :] - user_xy[None, :, :], axis=2)
    pl_db = path_loss_db(dist, cfg)
    rng = stream_rng(seed, STREAM_SHADOWING)
    shadow = cfg.shadow_std_db * rng.standard_normal(size=dist.shape)
    shadow = np.where(dist > cfg.pathloss_d1_m, shadow, 0.0)
    return 10.0 ** ((pl_db + shadow) / 10.0)


def group_pointer(dims: Dimensions) -> np.ndarray:
    """CSR-style user offsets per group: users of group n are ptr[n]:ptr[n+1]."""
    return np.concatenate(([0], np.cumsum(dims.group_sizes))).astype(np.int64)


def gamma_coefficients(zeta: np.ndarray, dims: Dimensions, pilot_power_w: float,
                       pilot_len_symbols: float, noise_variance_w: float) -> np.ndarray:
    """Estimation-quality coefficients (M, T):

    gamma = rho_p*tau_p*zeta^2 / (sigma_n^2 + rho_p*tau_p*sum_l zeta_l)

    with the sum running over the users l of the same group at that AP.
    Always 0 < gamma < zeta.
    """
    rt = pilot_power_w * pilot_len_symbols
    ptr = group_pointer(dims)
    gamma = np.empty_like(zeta)
    for n in range(dims.num_groups):
        lo, hi = ptr[n], ptr[n + 1]
        denom = noise_variance_w + rt * zeta[:, lo:hi].sum(axis=1, keepdims=True)
        gamma[:, lo:hi] = rt * zeta[:, lo:hi] ** 2 / denom
    return gamma


@dataclass(frozen=True)
class NetworkInstance:
    """Immutable problem data: dimensions, large-scale coefficients zeta,
    estimation coefficients gamma (both (M, T), users group-major), powers
    and noise variance."""

    dims: Dimensions
    zeta: np.ndarray
    gamma: np.ndarray
    noise_variance_w: float
    rho_d_w: float
    rho_p_w: float
    config: PhysicalConfig = field(default_factory=PhysicalConfig)
    seed: int = 0

    def __post_init__(self):
        for name in ("zeta", "gamma"):
            arr = np.ascontiguousarray(np.asarray(getattr(self, name), dtype=float))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        m, t = self.zeta.shape
        if (m, t) != (self.dims.num_aps, self.dims.num_users) or self.gamma.shape != (m, t):
            raise ValueError("zeta/gamma shapes do not match dimensions")
        if not (self.zeta > 0).all():
            raise ValueError("zeta must be strictly positive")
        if not ((self.gamma > 0) & (self.gamma < self.zeta)).all():
            raise ValueError("gamma must satisfy 0 < gamma < zeta elementwise")
        if self.noise_variance_w <= 0:
            raise ValueError("noise variance must be positive")

    @property
    def group_ptr(self) -> np.ndarray:
        return group_pointer(self.dims)


def generate_instance(dims: Dimensions, cfg: PhysicalConfig, seed: int) -> NetworkInstance:
    """Full instance: geometry -> zeta -> gamma, all streams keyed off `seed`."""
    if cfg.pilot_len_symbols < dims.num_groups:
        raise ValueError("pilot length must be >= number of groups (orthonormal pilots)")
    ap_xy, user_xy = generate_geometry(dims, cfg.area_side_m, seed)
    zeta = large_scale_fading(ap_xy, user_xy, cfg, seed)
    sigma2 = noise_power(cfg)
    gamma = gamma_coefficients(zeta, dims, cfg.pilot_power_w, cfg.pilot_len_symbols, sigma2)
    return NetworkInstance(
        dims=dims,
        zeta=zeta,
        gamma=gamma,
        noise_variance_w=sigma2,
        rho_d_w=cfg.data_power_w,
        rho_p_w=cfg.pilot_power_w,
        config=cfg,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# small-scale fading
# ---------------------------------------------------------------------------

def _complex_normal(rng: np.random.Generator, shape, variance=1.0) -> np.ndarray:
    scale = np.sqrt(variance / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def _smallscale_block(instance: NetworkInstance, rng: np.random.Generator, count: int):
    """One block of joint draws: small-scale gains g (count, M, T) and the
    normalized pilot-estimate variables z (count, M, N), built from the actual
    pilot observation so that E{h * conj(z)} = sqrt(gamma)."""
    dims = instance.dims
    m, t = instance.zeta.shape
    rt = instance.rho_p_w * instance.config.pilot_len_symbols
    g = _complex_normal(rng, (count, m, t))
    w = _complex_normal(rng, (count, m, dims.num_groups), variance=instance.noise_variance_w)
    h = np.sqrt(instance.zeta)[None, :, :] * g
    ptr = instance.group_ptr
    z = np.empty((count, m, dims.num_groups), dtype=complex)
    for n in range(dims.num_groups):
        lo, hi = ptr[n], ptr[n + 1]
        ytilde = np.sqrt(rt) * h[:, :, lo:hi].sum(axis=2) + w[:, :, n]
        denom = rt * instance.zeta[:, lo:hi].sum(axis=1) + instance.noise_variance_w
        z[:, :, n] = ytilde / np.sqrt(denom)[None, :]
    return g, z


def iter_smallscale_blocks(instance: NetworkInstance, count: int, seed: int) -> Iterator[tuple]:
    """Yield (g, z) blocks of at most SMALLSCALE_BLOCK draws. Block b always
    uses substream (seed, STREAM_SMALLSCALE, b), so the joint draw sequence is
    a pure function of (instance, count, seed)."""
    done = 0
    block_idx = 0
    while done < count:
        n = min(SMALLSCALE_BLOCK, count - done)
        rng = stream_rng(seed, STREAM_SMALLSCALE, block_idx)
        yield _smallscale_block(instance, rng, n)
        done += n
        block_idx += 1


def sample_small_scale(instance: NetworkInstance, count: int, seed: int):
    """Materialize `count` joint draws of (g, z); see iter_smallscale_blocks."""
    gs, zs = [], []
    for g, z in iter_smallscale_blocks(instance, count, seed):
        gs.append(g)
        zs.append(z)
    return np.concatenate(gs, axis=0), np.concatenate(zs, axis=0)


# ---------------------------------------------------------------------------
# JSON export / import (value-exact round trip)
# ---------------------------------------------------------------------------

def instance_to_json(instance: NetworkInstance) -> str:
    doc = {
        "dims": {
            "num_aps": instance.dims.num_aps,
            "num_groups": instance.dims.num_groups,
            "group_sizes": list(instance.dims.group_sizes),
        },
        "config": asdict(instance.config),
        "noise_variance_w": instance.noise_variance_w,
        "rho_d_w": instance.rho_d_w,
        "rho_p_w": instance.rho_p_w,
        "seed": instance.seed,
        "zeta_row_major": instance.zeta.ravel().tolist(),
        "gamma_row_major": instance.gamma.ravel().tolist(),
    }
    return json.dumps(doc)


def instance_from_json(text: str) -> NetworkInstance:
    doc = json.loads(text)
    dims = Dimensions(
        doc["dims"]["num_aps"], doc["dims"]["num_groups"], tuple(doc["dims"]["group_sizes"])
    )
    shape = (dims.num_aps, dims.num_users)
    return NetworkInstance(
        dims=dims,
        zeta=np.array(doc["zeta_row_major"], dtype=float).reshape(shape),
        gamma=np.array(doc["gamma_row_major"], dtype=float).reshape(shape),
        noise_variance_w=doc["noise_variance_w"],
        rho_d_w=doc["rho_d_w"],
        rho_p_w=doc["rho_p_w"],
        config=PhysicalConfig(**doc["config"]),
        seed=doc["seed"],
    )
