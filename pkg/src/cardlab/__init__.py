"""Desk-scale workbench for learned cardinality estimation.

Pipeline: synthesize or load an integer star-schema database, generate and
label a random workload, featurize queries as masked sets, train the
set-based estimator, and compare it against sampling baselines with
q-error reports.
"""

from .baselines import ibjs_estimate, rs_estimate
from .errors import CardlabError
from .evalkit import qerror, report, run_eval
from .executor import label_workload, true_cardinality
from .featurizer import EncodingCatalog, build_catalog, featurize
from .mscn import Hyperparams, MscnModel, load_model, predict, save_model, train
from .query import LabeledQuery, QuerySpec, generate_workload, parse_query
from .storage import Database, SynthConfig, generate_synthetic_db

__version__ = "0.1.0"

__all__ = [
    "CardlabError",
    "Database",
    "EncodingCatalog",
    "Hyperparams",
    "LabeledQuery",
    "MscnModel",
    "QuerySpec",
    "SynthConfig",
    "build_catalog",
    "featurize",
    "generate_synthetic_db",
    "generate_workload",
    "ibjs_estimate",
    "label_workload",
    "load_model",
    "parse_query",
    "predict",
    "qerror",
    "report",
    "rs_estimate",
    "run_eval",
    "save_model",
    "train",
    "true_cardinality",
]
