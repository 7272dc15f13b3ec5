from dataclasses import dataclass, replace


@dataclass(frozen=True)
class RunConfig:
    """Tolerances and sampling settings shared by every numerical check."""

    seed: int = 20240601
    radius: float = 0.1
    tol_zero: float = 1e-10       # |e| below this at every sample counts as zero
    tol_nonzero: float = 1e-8     # |e| above this anywhere is a nonzero witness
    tol_rank: float = 1e-8        # relative singular value cutoff
    tol_residual: float = 1e-8
    zero_samples: int = 64
    rank_samples: int = 16
    verify_samples: int = 32
    step: float = 1e-4
    horizon: float = 0.5
    halving_tol: float = 1e-5
    candidates: str | None = None

    def __post_init__(self):
        for name in ("radius", "tol_zero", "tol_nonzero", "tol_rank", "tol_residual",
                     "step", "horizon", "halving_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    def with_(self, **kw) -> "RunConfig":
        return replace(self, **kw)


DEFAULT = RunConfig()
