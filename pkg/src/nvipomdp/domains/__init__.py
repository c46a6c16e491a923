"""Benchmark domains and the domain-spec grammar used by the CLI.

A domain spec is ``name`` or ``name:key=value,key=value``::

    tiger
    rocksample:n=7,k=8,seed=3
    rocksample:file=instance.json
    lightdark:seed=1
    lightdark:seed=1,clusters=20
    explicit:file=model.json
"""

from __future__ import annotations

from ..exceptions import InvalidConfiguration
from ..pomdp import ExplicitDomain, load_explicit_pomdp
from .discretize import KMeansDiscretizer, kmeans_discretize
from .lightdark import LightDark, lightdark
from .rocksample import RockSample, load_rocksample_instance, rocksample
from .tiger import tiger_domain, tiger_model

__all__ = [
    "KMeansDiscretizer",
    "LightDark",
    "RockSample",
    "kmeans_discretize",
    "lightdark",
    "make_domain",
    "parse_domain_spec",
    "rocksample",
    "tiger_domain",
    "tiger_model",
]


def parse_domain_spec(spec: str) -> tuple[str, dict[str, str]]:
    name, _, rest = spec.strip().partition(":")
    params = {}
    if rest:
        for item in rest.split(","):
            key, eq, value = item.partition("=")
            if not eq or not key.strip():
                raise InvalidConfiguration(f"malformed domain parameter {item!r} in {spec!r}")
            params[key.strip()] = value.strip()
    return name.strip().lower(), params


def _pop_int(params, key, default=None):
    if key not in params:
        if default is None:
            raise InvalidConfiguration(f"missing domain parameter {key!r}")
        return default
    try:
        return int(params.pop(key))
    except ValueError as exc:
        raise InvalidConfiguration(f"domain parameter {key!r} must be an integer") from exc


def make_domain(spec: str):
    name, params = parse_domain_spec(spec)
    if name == "tiger":
        domain = tiger_domain()
    elif name == "rocksample":
        if "file" in params:
            domain = load_rocksample_instance(params.pop("file"))
        else:
            n = _pop_int(params, "n")
            k = _pop_int(params, "k")
            domain = rocksample(n, k, seed=_pop_int(params, "seed", 0))
    elif name == "lightdark":
        domain = lightdark(seed=_pop_int(params, "seed", 0), n_clusters=_pop_int(params, "clusters", 20))
    elif name == "explicit":
        if "file" not in params:
            raise InvalidConfiguration("explicit domains need file=<model.json>")
        model = load_explicit_pomdp(params.pop("file"))
        domain = ExplicitDomain(model, domain_id=f"explicit:{model.name}")
    else:
        raise InvalidConfiguration(f"unknown domain {name!r}")
    if params:
        raise InvalidConfiguration(f"unknown parameters for {name}: {sorted(params)}")
    return domain
