"""Run configuration: strict JSON schema, defaults, analytic field families."""

from __future__ import annotations

import copy
import hashlib
import json

import numpy as np

from .lattice import Lattice, PeriodicField, PlaneWaveBasis, SupercellField

__all__ = ["CONFIG_SCHEMA", "ConfigError", "parse_config", "validate_config",
           "build_potential", "build_macro_source", "config_hash", "serialize_config"]


class ConfigError(ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n" + "\n".join(self.errors))


_FIELD_SPEC = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "family": {"enum": ["cosine", "gaussians", "file"]},
        "terms": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "properties": {
                    "n": {"type": "array", "items": {"type": "integer"}},
                    "amplitude": {"type": "number"},
                    "center": {"type": "array", "items": {"type": "number"}},
                    "width": {"type": "number", "exclusiveMinimum": 0},
                },
            },
        },
        "path": {"type": "string"},
        "offset": {"type": "number"},
    },
    "required": ["family"],
}

_SOURCE_SPEC = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "family": {"enum": ["gaussian"]},
        "center": {"type": ["array", "null"], "items": {"type": "number"}},
        "width": {"type": "number", "exclusiveMinimum": 0},
        "amplitude": {"type": "number"},
        "mean_free": {"type": "boolean"},
    },
    "required": ["family", "width"],
}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["lattice", "temperature"],
    "properties": {
        "lattice": {
            "type": "object",
            "additionalProperties": False,
            "required": ["basis"],
            "properties": {
                "basis": {
                    "type": "array",
                    "items": {"type": "array", "items": {"type": "number"}},
                }
            },
        },
        "ecut": {"type": "number", "exclusiveMinimum": 0},
        "kgrid": {"type": "array", "items": {"type": "integer", "minimum": 1}},
        "temperature": {"type": "number", "exclusiveMinimum": 0},
        "crystal": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "mode": {"enum": ["designer", "scf"]},
                "potential": _FIELD_SPEC,
                "kappa": _FIELD_SPEC,
                "mu": {"anyOf": [{"type": "number"}, {"enum": ["mid-gap"]}]},
                "scf": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "alpha_mix": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                        "anderson_depth": {"type": "integer", "minimum": 0},
                        "tol_residual": {"type": "number", "exclusiveMinimum": 0},
                        "max_iter": {"type": "integer", "minimum": 1},
                        "mu_mode": {"enum": ["fixed-charge", "fixed-mu"]},
                    },
                },
            },
        },
        "response": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "delta": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "a": {"type": "number", "exclusiveMinimum": 0},
                "kmax": {"type": "number", "exclusiveMinimum": 0},
                "ksamples": {"type": "integer", "minimum": 12},
            },
        },
        "macro": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "nu": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "eps": {
                    "type": ["array", "null"],
                    "items": {"type": "array", "items": {"type": "number"}},
                },
                "source": _SOURCE_SPEC,
                "box_lengths": {"type": "number", "exclusiveMinimum": 0},
                "grid": {"type": "integer", "minimum": 16},
            },
        },
        "multiscale": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "delta_list": {
                    "type": "array",
                    "items": {"type": "number", "exclusiveMinimum": 0, "maximum": 0.5},
                    "minItems": 1,
                },
                "kappa_prime": _SOURCE_SPEC,
                "split_a": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "output_dir": {"type": "string"},
        "seed": {"type": "integer"},
        "threads": {"type": "integer", "minimum": 1},
    },
}

_DEFAULTS = {
    "ecut": 200.0,
    "kgrid": None,  # filled per dimension
    "crystal": {
        "mode": "designer",
        "potential": {"family": "cosine", "terms": [{"n": [1], "amplitude": 2.0}]},
        "mu": "mid-gap",
        "scf": {
            "alpha_mix": 0.6,
            "anderson_depth": 5,
            "tol_residual": 1e-10,
            "max_iter": 200,
            "mu_mode": "fixed-charge",
        },
    },
    "response": {"delta": 0.05, "a": 0.5, "kmax": 0.1, "ksamples": 16},
    "macro": {
        "nu": None,
        "eps": None,
        "source": {"family": "gaussian", "width": 0.05, "amplitude": 1.0, "mean_free": False},
        "box_lengths": 24.0,
        "grid": 4096,
    },
    "multiscale": {
        "delta_list": [0.125, 0.0625, 0.03125],
        "kappa_prime": {
            "family": "gaussian",
            "width": 0.35,
            "amplitude": 0.05,
            "mean_free": True,
        },
        "split_a": 0.5,
    },
    "output_dir": "out",
    "seed": 0,
    "threads": 1,
}


def _merge_defaults(cfg, defaults):
    out = copy.deepcopy(defaults)
    for key, val in cfg.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge_defaults(val, out[key])
        else:
            out[key] = copy.deepcopy(val)
    return out


def validate_config(raw, lax=False):
    """Validate against the schema, reporting every violation at once."""
    import jsonschema

    schema = CONFIG_SCHEMA
    if lax:
        schema = json.loads(json.dumps(CONFIG_SCHEMA))

        def relax(node):
            if isinstance(node, dict):
                node.pop("additionalProperties", None)
                for v in node.values():
                    relax(v)
            elif isinstance(node, list):
                for v in node:
                    relax(v)

        relax(schema)
    validator = jsonschema.Draft202012Validator(schema)
    errors = [
        f"{'/'.join(str(p) for p in e.absolute_path) or '<root>'}: {e.message}"
        for e in sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    ]
    if errors:
        raise ConfigError(errors)


def parse_config(path_or_dict, lax=False):
    """Load, validate and fill defaults; returns the effective config dict."""
    if isinstance(path_or_dict, dict):
        raw = copy.deepcopy(path_or_dict)
    else:
        with open(path_or_dict, encoding="utf-8") as fh:
            raw = json.load(fh)
    validate_config(raw, lax=lax)
    cfg = _merge_defaults(raw, _DEFAULTS)
    d = len(cfg["lattice"]["basis"])
    if cfg["kgrid"] is None:
        cfg["kgrid"] = [16] * d
    if "center" not in cfg["macro"]["source"]:
        cfg["macro"]["source"]["center"] = None
    if "center" not in cfg["multiscale"]["kappa_prime"]:
        cfg["multiscale"]["kappa_prime"]["center"] = None
    validate_effective(cfg)
    return cfg


def validate_effective(cfg):
    basis = np.asarray(cfg["lattice"]["basis"], dtype=float)
    if basis.ndim != 2 or basis.shape[0] != basis.shape[1]:
        raise ConfigError(["lattice/basis: must be a d x d matrix"])
    if len(cfg["kgrid"]) != basis.shape[0]:
        raise ConfigError(["kgrid: length must match the lattice dimension"])
    for delta in cfg["multiscale"]["delta_list"]:
        n = 1.0 / delta
        if abs(n - round(n)) > 1e-9:
            raise ConfigError([f"multiscale/delta_list: {delta} is not 1/N"])


def serialize_config(cfg):
    return json.dumps(cfg, sort_keys=True, indent=1) + "\n"


def config_hash(cfg):
    return hashlib.sha256(serialize_config(cfg).encode()).hexdigest()


def build_lattice(cfg) -> Lattice:
    return Lattice(np.asarray(cfg["lattice"]["basis"], dtype=float))


def build_basis(cfg) -> PlaneWaveBasis:
    return PlaneWaveBasis(build_lattice(cfg), ecut=cfg["ecut"])


def build_potential(basis: PlaneWaveBasis, spec) -> PeriodicField:
    """Materialize an analytic field family on a plane-wave basis."""
    fam = spec["family"]
    if fam == "cosine":
        coeffs = np.zeros(basis.n_pw, dtype=complex)
        coeffs[0] = spec.get("offset", 0.0)
        for term in spec.get("terms", []):
            n = tuple(term.get("n", [1] * basis.d))
            amp = term.get("amplitude", 1.0)
            i = basis.index_of(n)
            j = basis.index_of([-x for x in n])
            if i < 0 or j < 0:
                raise ConfigError([f"potential term {n} outside the cutoff set"])
            coeffs[i] += 0.5 * amp
            coeffs[j] += 0.5 * amp
        return PeriodicField(basis, coeffs, realness=True)
    if fam == "gaussians":
        pts = basis.grid_points()
        vals = np.full(basis.fft_shape, float(spec.get("offset", 0.0)))
        lat = basis.lattice
        import itertools

        for term in spec.get("terms", []):
            center = np.asarray(
                term.get("center", [0.0] * basis.d), dtype=float
            )
            width = term.get("width", 0.5)
            amp = term.get("amplitude", 1.0)
            norm = amp / ((2 * np.pi) ** (basis.d / 2.0) * width**basis.d)
            for shift in itertools.product(range(-2, 3), repeat=basis.d):
                offs = np.asarray(shift, dtype=float) @ lat.basis
                delta = pts - center - offs
                r2 = np.einsum("...i,...i->...", delta, delta)
                vals += norm * np.exp(-0.5 * r2 / width**2)
        return PeriodicField.from_grid(basis, vals)
    if fam == "file":
        from .io import read_field

        vals = read_field(spec["path"])
        return PeriodicField.from_grid(basis, vals)
    raise ConfigError([f"unknown field family {fam!r}"])


def build_macro_source(box: Lattice, shape, spec) -> SupercellField:
    from .macro import gaussian_source

    center = spec.get("center")
    if center is None:
        center = 0.5 * box.basis.sum(axis=0)
    return gaussian_source(
        box,
        shape,
        center=center,
        width=spec["width"],
        amplitude=spec.get("amplitude", 1.0),
        mean_free=spec.get("mean_free", False),
    )
