from dataclasses import asdict, dataclass, field

MODES = ("s2h", "alt1", "alt2", "soft_only", "finetune")


class ConfigError(ValueError):
    """Invalid run configuration; ``path`` is a JSON path such as ``$.prune.T``."""

    def __init__(self, message, path="$"):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass
class Toggles:
    """Switches for the gradient terms of the weight and mask updates.

    The resource gradient on the mask is always on.  ``g_G_soft_theta``
    (the gap pulling the soft network towards the hard one) is off by default.
    """
    g_L_theta: bool = True
    g_G_hard_theta: bool = True
    g_G_soft_theta: bool = False
    g_L_u: bool = True
    g_G_u: bool = True


@dataclass
class PruneRunConfig:
    mode: str = "s2h"
    T: float = 0.5
    beta_coef: float = 0.5
    gamma_coef: float = 5.0
    rho_coef: float = 5.0
    toggles: Toggles = field(default_factory=Toggles)
    label_smoothing: float = None  # None -> 0.1 for alt1, else 0
    gap_direction: str = "soft_teacher"
    gap_temperature: float = 1.0
    balance_reference: str = "raw"
    balance_norm: str = "global"
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 3e-4
    u_weight_decay: float = 0.0
    u_lr_mult: float = 1.0
    scheduler: str = "cosine"
    milestones: tuple = ()
    factors: tuple = ()
    epochs: int = 10
    batch_size: int = 64
    seed: int = 0
    finetune_lr_scale: float = 0.1
    source_checkpoint: str = None
    record_soft_theta: bool = False  # compute g_G_soft_theta even when not applied

    def __post_init__(self):
        if isinstance(self.toggles, dict):
            self.toggles = Toggles(**self.toggles)
        self.milestones = tuple(self.milestones)
        self.factors = tuple(self.factors)
        self.validate()

    def validate(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}", "$.prune.mode")
        if not 0.0 < self.T <= 1.0:
            raise ConfigError(f"T must lie in (0, 1], got {self.T}", "$.prune.T")
        for name in ("beta_coef", "gamma_coef", "rho_coef"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0", f"$.prune.{name}")
        if self.mode == "finetune" and not self.source_checkpoint:
            raise ConfigError("finetune mode requires a source checkpoint",
                              "$.prune.source_checkpoint")
        if self.gap_direction not in ("soft_teacher", "hard_teacher"):
            raise ConfigError("gap_direction must be soft_teacher or hard_teacher",
                              "$.prune.gap_direction")
        if self.balance_reference not in ("raw", "scaled"):
            raise ConfigError("balance_reference must be raw or scaled",
                              "$.prune.balance_reference")
        if self.balance_norm not in ("global", "per_group"):
            raise ConfigError("balance_norm must be global or per_group", "$.prune.balance_norm")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1", "$.train")

    @property
    def smoothing(self):
        if self.label_smoothing is not None:
            return self.label_smoothing
        return 0.1 if self.mode == "alt1" else 0.0

    def theta_coefficients(self):
        """Weights on (g_L_theta, g_G_hard_theta).

        The alternative formulations minimise an unweighted sum, so both
        weights are 1 there; the configured coefficients apply otherwise.
        """
        if self.mode in ("alt1", "alt2"):
            return 1.0, 1.0
        return self.beta_coef, self.gamma_coef

    def effective_toggles(self):
        """Toggles after applying the mode's structural constraints."""
        t = Toggles(**asdict(self.toggles))
        if self.mode == "soft_only":
            t.g_G_hard_theta = False
            t.g_G_soft_theta = False
            t.g_G_u = False
        elif self.mode in ("alt1", "alt2"):
            t.g_G_soft_theta = False
            t.g_G_u = False
            if self.mode == "alt1":
                t.g_L_theta = False
        return t

    def to_dict(self):
        d = asdict(self)
        d["milestones"] = list(self.milestones)
        d["factors"] = list(self.factors)
        return d
