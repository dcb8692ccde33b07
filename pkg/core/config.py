"""Application configuration management."""

from typing import Literal

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Numerical and runtime configuration settings.

    Every field can be overridden with an environment variable carrying the
    ``SHEARSTAB_`` prefix (e.g. ``SHEARSTAB_CACHE_DIR``) or from a ``.env`` file.
    """

    # ── Operator cache ──────────────────────────────────────────────────────────
    # Assembled collocation blocks are stored here as .npz files, keyed by the
    # profile fingerprint, viscosity, wavenumber and node count.
    # Bumping ARTIFACT_VERSION moves the cache to a fresh subdirectory.
    CACHE_DIR: str = ".shearstab_cache"
    # The CLI uses the cache when True; library calls never touch disk unless
    # they are handed a cache object explicitly.
    CACHE_ENABLED: bool = True
    ARTIFACT_VERSION: int = 1

    # ── Discretization ──────────────────────────────────────────────────────────
    # Chebyshev node count used when nothing else is requested.
    DEFAULT_NODES: int = 129
    # Resolution policy: the boundary layer of thickness L^-1 = nu^(1/3)|k|^(-1/3)
    # must carry at least this many nodes, i.e. n >= NODES_PER_LAYER * ceil(L).
    NODES_PER_LAYER: int = 8
    # Sine modes kept by the exact-in-time heat evolution of the shear profile.
    # Higher modes only matter for t so small that exp(-nu (m pi)^2 t) ~ 1.
    HEAT_MODES: int = 128
    # Physical x points of the pseudospectral simulation. With the 2/3 rule the
    # retained wavenumbers are |k| <= (X_POINTS - 1) // 3.
    X_POINTS: int = 64

    # ── Tolerances ──────────────────────────────────────────────────────────────
    # Smallness constant in |o(nu, k)| <= EPS1 (nu k^2)^(1/3).
    EPS1: float = 0.01
    # Residual power-law exponents within this window count as a pass.
    EXPONENT_TOLERANCE: float = 0.08
    # A measured constant may drift by at most this factor across a sweep.
    CONSTANT_STABILITY_FACTOR: float = 3.0
    # Fits with r^2 below this value are reported with a warning flag.
    MIN_FIT_R2: float = 0.8

    # ── Time stepping ───────────────────────────────────────────────────────────
    # Linear advection bound |k| * max(C0, max|U|) * dt <= ADVECTION_CFL.
    ADVECTION_CFL: float = 0.5
    # Nonlinear bound dt * max(k_max |U + u1|, max_j |u2_j| / dy_j) <= NONLINEAR_CFL.
    NONLINEAR_CFL: float = 1.0
    # Stability predicate: the running sum of E_k may grow at most by this factor.
    LEDGER_GROWTH_FACTOR: float = 10.0
    # Amplitude bisection steps per viscosity in the threshold probe.
    BISECTION_STEPS: int = 6
    # Runs whose high-wavenumber energy fraction exceeds this are unresolved.
    SPECTRAL_TAIL_LIMIT: float = 1e-3

    # ── Runtime ─────────────────────────────────────────────────────────────────
    # Worker threads for sweeps; LAPACK releases the GIL during solves.
    JOBS: int = 1
    LOG_LEVEL: Literal["DEBUG", "INFO", "WARNING", "ERROR"] = "INFO"

    model_config = SettingsConfigDict(
        env_prefix="SHEARSTAB_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )


# Global settings instance
settings = Settings()
