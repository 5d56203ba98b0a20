"""Federated learning simulator with validation-loss-driven client reputations."""

from .config import ExperimentConfig, load_config, parse_config, serialize_config
from .data import (ClientShard, LabeledDataset, PartitionSpec, SplitBundle, Standardizer, build_validation_set,
                   cap_majority_class, fit_apply_standardizer, generate_synthetic, load_csv, partition_noniid,
                   split)
from .errors import ConfigError, DivergenceError
from .federation import (FederationState, RoundReport, RunResult, aggregate_fedavg, local_train, prepare_data,
                         run_experiment, run_round, run_single)
from .metrics import MetricsRecord, confusion, per_class_recall, rounds_to_threshold, summarize
from .nn import AdamState, ArchitectureSpec, ModelParams, adam_step, evaluate, forward, init_params, loss_and_grads
from .reporting import ComplexityReport, complexity_report
from .selection import (POLICIES, ClientLedger, QualityRecord, Reputation, SelectorConfig, compute_deltas,
                        normalize_quality, reputation, select_oort_simplified, select_poc, select_uniform,
                        select_vars, update_ledger)

__version__ = "0.1.0"
