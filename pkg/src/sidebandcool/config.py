"""INI run configuration.

Frequencies are written in Hz in the file and converted to rad/s here.
Unknown sections and keys are rejected by name so that typos never pass
silently.  Every typed object is re-validated on construction; validation
failures surface as :class:`ConfigError` naming the section.
"""
import configparser
from dataclasses import dataclass, field
from importlib import resources
import os

from .cavity import CavityConfig, Drive
from .errors import ConfigError
from .thermal import Environment
from .tls import FixedMechanics, TlsMaterial, TlsModel
from .units import angular

# key -> (converter name, required)
_SCHEMA = {
    "cavity": {
        "kappa_hz": ("hz", True), "kappa_ex_hz": ("hz", False), "eta_c": ("float", False),
        "gamma_split_hz": ("hz", False), "G_hz_per_m": ("hz", False), "kappa_abs_hz": ("hz", False),
        "omega_c_hz": ("hz", False),
    },
    "mechanics": {
        "m_eff_kg": ("float", True), "model": ("str", False), "omega_m_hz": ("hz", False),
        "q_m": ("float", False),
    },
    "tls": {
        "B_j": ("float", True), "rho_kg_m3": ("float", True), "c_s_m_s": ("float", True),
        "pbar_q_m3": ("float", True), "pbar_omega_m3": ("float", True), "t0_k": ("float", False),
        "omega_m_bare_hz": ("hz", True), "q_cla_inv": ("float", False), "anchor_t_k": ("float", False),
        "anchor_q": ("float", False), "arrhenius_v_j": ("float", False), "arrhenius_tau0_s": ("float", False),
        "bracket_min_k": ("float", False), "bracket_max_k": ("float", False),
    },
    "environment": {
        "t_cryo_k": ("float", True), "dt_stray_k": ("float", False), "beta_k_per_w": ("float", False),
        "heating_product_k_per_j": ("float", False),
    },
    "drive": {
        "p_in_w": ("float", True), "detuning_hz": ("hz", False), "wavelength_m": ("float", False),
    },
    "fit": {
        "weight": ("float", False), "float": ("list", False), "n_starts": ("int", False),
        "seed": ("int", False), "max_simplex": ("int", False), "max_iter": ("int", False),
        "omega_mod_hz": ("hz", False), "self_consistent": ("bool", False),
    },
    "spectrum": {
        "f_min_hz": ("float", False), "f_max_hz": ("float", False), "n_points": ("int", False),
        "s_xx_imp_m2_hz": ("float", False), "f_mod_hz": ("float", False), "depth_rad": ("float", False),
        "displacement_equiv_m": ("float", False), "window_halfwidth": ("float", False),
    },
    "budget": {
        "s_ff_the_n2_hz": ("float", False), "s_ff_cryo_n2_hz": ("float", False),
        "s_xx_imp_m2_hz": ("float", False),
    },
}
_REQUIRED_SECTIONS = ("cavity", "mechanics", "environment", "drive")


@dataclass(frozen=True)
class RunConfig:
    cavity: CavityConfig
    m_eff: float
    mechanics: object  # TlsModel or FixedMechanics
    environment: Environment
    drive: Drive
    bracket: tuple = (0.1, 10.0)
    fit: dict = field(default_factory=dict)
    spectrum: dict = field(default_factory=dict)
    budget: dict = field(default_factory=dict)
    source: str = ""

    @property
    def heating_product(self):
        """``beta * kappa_abs`` (K/J), whichever way the heating was configured."""
        env = self.environment
        if env.heating_product is not None:
            return env.heating_product
        return env.beta * self.cavity.kappa_abs

    @property
    def has_tls(self):
        return isinstance(self.mechanics, TlsModel)


def _convert(kind, raw, where):
    try:
        if kind == "hz":
            return angular(float(raw))
        if kind == "float":
            return float(raw)
        if kind == "int":
            return int(raw)
        if kind == "bool":
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "list":
            return tuple(t.strip() for t in raw.split(",") if t.strip())
        return raw.strip()
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {kind}") from None


def shipped_configs():
    """Names of the configurations bundled with the package."""
    base = resources.files("sidebandcool") / "data"
    return sorted(p.name[:-4] for p in base.iterdir() if p.name.endswith(".ini"))


def _read_text(path):
    if os.path.exists(path):
        with open(path) as fh:
            return fh.read(), str(path)
    name = path[:-4] if path.endswith(".ini") else path
    if name in shipped_configs():
        res = resources.files("sidebandcool") / "data" / f"{name}.ini"
        return res.read_text(), f"<shipped:{name}>"
    raise ConfigError(f"config {path!r} not found (shipped configs: {', '.join(shipped_configs())})")


def parse_sections(text, source="<string>"):
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    out = {}
    for sec in cp.sections():
        if sec not in _SCHEMA:
            raise ConfigError(f"{source}: unknown section [{sec}]")
        schema = _SCHEMA[sec]
        vals = {}
        for key, raw in cp.items(sec):
            if key not in schema:
                raise ConfigError(f"{source}: unknown key {key!r} in section [{sec}]")
            vals[key] = _convert(schema[key][0], raw, f"{source} [{sec}] {key}")
        for key, (_, required) in schema.items():
            if required and key not in vals:
                raise ConfigError(f"{source}: missing required key {key!r} in section [{sec}]")
        out[sec] = vals
    for sec in _REQUIRED_SECTIONS:
        if sec not in out:
            raise ConfigError(f"{source}: missing section [{sec}]")
    return out


def _build(sec, fn, source):
    try:
        return fn()
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{source} [{sec}]: {exc}") from None


def build_config(sections, source="<string>"):
    c = sections["cavity"]

    def make_cavity():
        if ("kappa_ex_hz" in c) == ("eta_c" in c):
            raise ConfigError(f"{source} [cavity]: give exactly one of kappa_ex_hz, eta_c")
        kappa_ex = c["kappa_ex_hz"] if "kappa_ex_hz" in c else c["eta_c"] * c["kappa_hz"]
        return CavityConfig(kappa=c["kappa_hz"], kappa_ex=kappa_ex, gamma_split=c.get("gamma_split_hz", 0.0),
                            G=c.get("G_hz_per_m", 0.0), kappa_abs=c.get("kappa_abs_hz"),
                            omega_c=c.get("omega_c_hz"))

    cav = _build("cavity", make_cavity, source)

    m = sections["mechanics"]
    kind = m.get("model", "tls")
    bracket = (0.1, 10.0)
    if kind == "tls":
        if "tls" not in sections:
            raise ConfigError(f"{source}: [mechanics] model = tls needs a [tls] section")
        t = sections["tls"]

        def make_tls():
            mat = TlsMaterial(t["B_j"], t["rho_kg_m3"], t["c_s_m_s"], t["pbar_q_m3"], t["pbar_omega_m3"],
                              t.get("t0_k", 1.0))
            extra = {"arrhenius_V": t.get("arrhenius_v_j"), "arrhenius_tau0": t.get("arrhenius_tau0_s")}
            anchored = "anchor_t_k" in t or "anchor_q" in t
            if anchored and "q_cla_inv" in t:
                raise ConfigError(f"{source} [tls]: give either q_cla_inv or anchor_t_k/anchor_q")
            if anchored:
                if not ("anchor_t_k" in t and "anchor_q" in t):
                    raise ConfigError(f"{source} [tls]: anchor needs both anchor_t_k and anchor_q")
                return TlsModel.anchored(mat, t["omega_m_bare_hz"], t["anchor_t_k"], t["anchor_q"], **extra)
            return TlsModel(mat, t["omega_m_bare_hz"], t.get("q_cla_inv", 0.0), **extra)

        mechanics = _build("tls", make_tls, source)
        bracket = (t.get("bracket_min_k", 0.1), t.get("bracket_max_k", 10.0))
        for key in ("omega_m_hz", "q_m"):
            if key in m:
                raise ConfigError(f"{source} [mechanics]: {key!r} only applies to model = fixed")
    elif kind == "fixed":
        if not ("omega_m_hz" in m and "q_m" in m):
            raise ConfigError(f"{source} [mechanics]: model = fixed needs omega_m_hz and q_m")
        mechanics = _build("mechanics", lambda: FixedMechanics(m["omega_m_hz"], m["q_m"]), source)
    else:
        raise ConfigError(f"{source} [mechanics]: model must be 'tls' or 'fixed', got {kind!r}")
    if not m["m_eff_kg"] > 0:
        raise ConfigError(f"{source} [mechanics]: m_eff_kg must be positive")

    e = sections["environment"]
    env = _build("environment", lambda: Environment(
        e["t_cryo_k"], e.get("dt_stray_k", 0.0), e.get("beta_k_per_w", 0.0), e.get("heating_product_k_per_j")),
        source)
    d = sections["drive"]
    drive = _build("drive", lambda: Drive(d["p_in_w"], d.get("detuning_hz", 0.0), d.get("wavelength_m", 780e-9)),
                   source)
    fit = dict(sections.get("fit", {}))
    if "weight" in fit and not 0 <= fit["weight"] <= 1:
        raise ConfigError(f"{source} [fit]: weight must lie in [0, 1]")
    return RunConfig(cav, m["m_eff_kg"], mechanics, env, drive, bracket, fit,
                     dict(sections.get("spectrum", {})), dict(sections.get("budget", {})), source)


def load_config(path):
    """Load a config file, or a shipped configuration by name."""
    text, source = _read_text(str(path))
    return build_config(parse_sections(text, source), source)


def loads_config(text, source="<string>"):
    return build_config(parse_sections(text, source), source)


