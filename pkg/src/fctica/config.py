"""Flat ``key = value`` run configuration.

One setting per line; ``#`` starts a comment; blank lines are ignored.
Unknown keys are rejected so a typo can never silently fall back to a
default.  Every seed has a fixed default, never one derived from the clock.
"""
from dataclasses import dataclass

from .exceptions import ConfigError


def _bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _grid(s):
    parts = s.lower().replace(",", "x").split("x")
    if len(parts) != 2:
        raise ValueError(f"grid must look like 55x55, got {s!r}")
    return tuple(int(p) for p in parts)


def _int_list(s):
    s = s.strip()
    return tuple(int(p) for p in s.split(",")) if s else ()


def _str_list(s):
    return tuple(p.strip().lower() for p in s.split(",") if p.strip())


@dataclass(frozen=True)
class Key:
    parse: callable
    default: object
    doc: str


SCHEMA = {
    # output
    "out_dir": Key(str, "fctica_run", "root directory for all command outputs"),
    # study
    "grid": Key(_grid, (55, 55), "lattice size HxW; V = H*W"),
    "Q": Key(int, 5, "number of components"),
    "n_bumps": Key(int, 2, "Gaussian bumps per group map"),
    "n_train": Key(int, 100, "training subjects"),
    "n_test": Key(int, 20, "test subjects"),
    "T_total": Key(int, 1200, "volumes per simulated session"),
    "T_model": Key(int, 600, "leading volumes used for model fitting; the rest is holdout"),
    "snr": Key(float, 0.5, "sigma_a / sigma_e"),
    "fc_df": Key(float, 60.0, "Wishart degrees of freedom for subject FC"),
    "tc_model": Key(str, "ar1", "time-course model: ar1 or iid"),
    "phi": Key(float, 0.3, "AR(1) coefficient for tc_model = ar1"),
    "fwhm": Key(float, 8.0, "smoothing FWHM of spatial deviations, lattice units"),
    "sd_scale": Key(float, 0.4, "generating SD = sd_scale * |mean| + sd_floor"),
    "sd_floor": Key(float, 0.01, "see sd_scale"),
    "intensity": Key(str, "top1", "SNR intensity rule: top1 or peak"),
    "study_seed": Key(int, 0, "master seed of the simulated study"),
    "write_data": Key(_bool, False, "also write every subject's T x V data matrix"),
    # priors
    "n_perm": Key(int, 100, "pChol permutations"),
    "K": Key(int, 50_000, "pChol prior samples"),
    "prior_seed": Key(int, 1, "seed for permutations and pChol sampling"),
    # fitting
    "methods": Key(_str_list, ("dr", "tica", "vb1", "vb2"), "methods to fit"),
    "tol": Key(float, 1e-3, "convergence tolerance"),
    "max_iter": Key(int, 100, "iteration cap for tICA and VB"),
    "n_u": Key(int, 10_000, "VB1 Gamma mixing draws"),
    "use_neumann": Key(_bool, True, "VB2 Neumann approximation before the final pass"),
    "use_ess": Key(_bool, True, "effective-sample-size discount in q(S)"),
    "vb_seed": Key(int, 2, "seed for VB1 mixing draws"),
    "durations": Key(_int_list, (), "extra model lengths T for the duration sweep"),
    "fit_retest": Key(_bool, False, "also fit the holdout segment for test-retest ICC"),
    # posterior
    "level": Key(float, 0.95, "credible level"),
    "posterior_n_vb1": Key(int, 10_000, "FC posterior samples for VB1"),
    "posterior_n_vb2": Key(int, 0, "FC posterior samples for VB2; 0 = all prior draws"),
    "posterior_mode_vb1": Key(str, "mean", "draw or mean"),
    "posterior_mode_vb2": Key(str, "draw", "draw or mean"),
    "posterior_seed": Key(int, 3, "seed for posterior sampling"),
}

CHOICES = {
    "tc_model": ("ar1", "iid"),
    "intensity": ("top1", "peak"),
    "posterior_mode_vb1": ("draw", "mean"),
    "posterior_mode_vb2": ("draw", "mean"),
}
METHODS = ("dr", "tica", "vb1", "vb2")


class RunConfig(dict):
    """Parsed configuration; keys are also readable as attributes."""

    def __getattr__(self, name):
        try:
            return self[name]
        except KeyError:
            raise AttributeError(name) from None

    def to_text(self):
        """Canonical text form; parsing it back gives an equal config."""
        return "".join(f"{k} = {format_value(k, self[k])}\n" for k in SCHEMA)


def format_value(key, v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if key == "grid":
        return "x".join(str(x) for x in v)
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def _parse_pairs(pairs, source):
    out = {}
    for lineno, raw in pairs:
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            out[key] = SCHEMA[key].parse(value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
    return out


def parse_config(text="", overrides=(), source="<config>"):
    """Build a :class:`RunConfig` from file text and ``key=value`` overrides."""
    values = {k: spec.default for k, spec in SCHEMA.items()}
    values.update(_parse_pairs(enumerate(text.splitlines(), 1), source))
    values.update(_parse_pairs(((i, s) for i, s in enumerate(overrides, 1)), "--set"))
    cfg = RunConfig(values)
    _validate(cfg)
    return cfg


def load_config(path=None, overrides=()):
    text = ""
    if path is not None:
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, overrides, source=str(path or "<defaults>"))


def _validate(cfg):
    for key, allowed in CHOICES.items():
        cfg[key] = cfg[key].lower()
        if cfg[key] not in allowed:
            raise ConfigError(f"{key} must be one of {allowed}, got {cfg[key]!r}")
    bad = [m for m in cfg.methods if m not in METHODS]
    if bad:
        raise ConfigError(f"unknown methods {bad}; choose from {METHODS}")
    positive = ("Q", "n_train", "n_test", "T_total", "T_model", "n_perm", "K", "max_iter", "n_u")
    for key in positive:
        if cfg[key] <= 0:
            raise ConfigError(f"{key} must be positive")
    if cfg.n_test < 3:
        raise ConfigError("n_test must be at least 3 for median-based metrics")
    if cfg.T_model > cfg.T_total:
        raise ConfigError("T_model cannot exceed T_total")
    for T in cfg.durations:
        if not 2 <= T <= cfg.T_model:
            raise ConfigError(f"duration {T} outside [2, T_model]")
    for key in ("snr", "tol", "fwhm"):
        if cfg[key] <= 0:
            raise ConfigError(f"{key} must be positive")
    if not 0 < cfg.level < 1:
        raise ConfigError("level must be in (0, 1)")
    if min(cfg.grid) <= 0:
        raise ConfigError("grid dimensions must be positive")
