"""Sound Datalog rule extraction from sum-GNNs.

Submodules: ``datalog`` (rules and the consequence operator), ``codec``
(dataset/graph encodings), ``gnn`` (models), ``channels`` (weight-sign
analysis), ``extraction`` (soundness checks and counterexamples),
``trainer``, ``loginfer`` (dataset generation), ``metrics`` and
``pipeline``.
"""

from .channels import ChannelReport, ProbeWitness, analyze, classify_monotonicity, classify_safe, probe
from .codec import ColGraph, LinkSignature, decode_canonical, decode_linkpred, encode_canonical, encode_linkpred
from .datalog import Atom, Inequality, Rule, Signature, parse_program, parse_rule, program_consequences, rule_consequences
from .errors import SearchFailure, ValidationError
from .extraction import RuleSpaceConfig, check_soundness, construct_counterexample, enumerate_rules, extract_all_sound
from .gnn import Layer, SumGnn, forward, load_model, save_model, transform, transform_linkpred
from .trainer import TrainConfig, TrainExample, train

__version__ = "0.1.0"
