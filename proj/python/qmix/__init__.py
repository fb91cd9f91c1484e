"""Python access to the qmix library."""

import json

from ._qmix import (
    Action,
    ArgumentError,
    BracketViolation,
    BudgetError,
    Model,
    QmixError,
    SchemaError,
    SolverError,
    adjacency_spectrum,
    bad_profile,
    fejer_integral,
    lift,
    random_free,
    random_matching,
    resolvent_poly,
    torus,
)
from . import _qmix

__all__ = [
    "Action", "ArgumentError", "BracketViolation", "BudgetError", "Model", "QmixError", "SchemaError",
    "SolverError", "adjacency_spectrum", "bad_profile", "fejer_integral", "lift", "model", "preset",
    "random_free", "random_matching", "resolvent_poly", "run", "scenarios", "torus", "validate",
]


def scenarios():
    return list(_qmix._scenarios())


def preset(name):
    return json.loads(_qmix._preset(name))


def validate(config):
    """Normalized copy of a config dict; raises SchemaError."""
    return json.loads(_qmix._validate(json.dumps(config)))


def run(config, write=False):
    """Run a scenario. With write=True the output files go to config["output_dir"]."""
    return json.loads(_qmix._run(json.dumps(config), write))


def model(description):
    """Limiting resolvent model, e.g. model({"type": "RegularTree", "d": 3})."""
    return _qmix._model(json.dumps(description))
