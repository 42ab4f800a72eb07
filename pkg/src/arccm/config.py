"""TOML run configuration with strict key checking.

Every key has a documented default; unknown sections or keys are
rejected so typos fail loudly rather than silently using defaults.
"""

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field

from .system import TRUE_THETA_EXAMPLE


class ConfigError(ValueError):
    pass


_SCHEMA = {
    "system": {
        "name": "example-ccs-3state",   # builtin system identifier
        "domain_halfwidth": 2.5,        # state box half-width
        "theta_true": list(TRUE_THETA_EXAMPLE),
    },
    "synthesis": {
        "degree": 4,                    # metric polynomial degree
        "lambdas": [0.8, 0.6, 0.4],
        "mus": [0.2],
        "a_low": 1e-2,                  # uniform metric bound targets
        "a_high": 1e2,
        "tau": 0.01,                    # hinge smoothing temperature
        "margin_target": 0.05,          # training margin before validation
        "max_iter": 1500,
        "theta_grid": [11, 11],         # training grid over the non-vertex
                                        # parameters (validated on 2c-1 = 21)
        "x_grid": [3, 3, 3],
        "random_count": 4000,
        "seed": 0,
        "rate_convention": "c1-2lambda",
    },
    "simulation": {
        "t0": 0.0,
        "t1": 12.0,
        "h": 1e-3,                      # integrator step
        "control_period": 1e-2,         # zero-order-hold tick
        "x0_offset": [0.5, -0.5, 0.5],  # initial offset from the reference
        "geodesic_degree": 6,
    },
    "estimator": {
        "kind": "scheduled",            # scheduled | frozen | rls
        "t_start": 3.0,                 # ramp start (scheduled)
        "t_end": 7.0,                   # ramp end
        "theta_final": "true",          # "true" | "midpoint" | explicit list
        "window": 50,                   # rls sliding window
        "ridge": 1e-6,
        "rho_min": 0.05,                # rls rate-budget floor
    },
    "verify": {
        "prop1_curves": 100,
        "clf_samples": 1000,
        "seed": 0,
    },
    "output": {
        "dir": "out",
        "plots": True,
    },
}


@dataclass
class Section:
    def __init__(self, name, values):
        self._name = name
        for k, v in values.items():
            setattr(self, k, v)

    def __repr__(self):
        keys = {k: v for k, v in vars(self).items() if not k.startswith("_")}
        return "Section(%s, %r)" % (self._name, keys)


class RunConfig:
    """Validated configuration; one attribute per TOML section."""

    def __init__(self, doc=None):
        doc = doc or {}
        for sec in doc:
            if sec not in _SCHEMA:
                raise ConfigError("unknown section [%s]" % sec)
            for key in doc[sec]:
                if key not in _SCHEMA[sec]:
                    raise ConfigError("unknown key '%s' in section [%s]" % (key, sec))
        for sec, defaults in _SCHEMA.items():
            vals = dict(defaults)
            vals.update(doc.get(sec, {}))
            setattr(self, sec, Section(sec, vals))

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            try:
                doc = tomllib.load(fh)
            except tomllib.TOMLDecodeError as e:
                raise ConfigError("malformed config %s: %s" % (path, e)) from e
        return cls(doc)

    @classmethod
    def default(cls):
        return cls({})
