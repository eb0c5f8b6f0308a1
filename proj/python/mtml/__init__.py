# SPDX-License-Identifier: Apache-2.0
"""Persona dialogue models trained with multi-task meta-learning."""

from ._mtml import (
    ConfigError,
    ContractError,
    Corpus,
    IntegrityError,
    KShotProtocol,
    MetaConfig,
    Model,
    ModelConfig,
    MtmlError,
    ParseError,
    SamplingError,
    Vocabulary,
    bleu,
    consistency_proxy,
    generate_synthetic,
    gradcheck,
    kshot_evaluate,
    load_corpus,
    tokenize,
    train,
    write_corpus,
)

__all__ = [
    "ConfigError",
    "ContractError",
    "Corpus",
    "IntegrityError",
    "KShotProtocol",
    "MetaConfig",
    "Model",
    "ModelConfig",
    "MtmlError",
    "ParseError",
    "SamplingError",
    "Vocabulary",
    "bleu",
    "consistency_proxy",
    "generate_synthetic",
    "gradcheck",
    "kshot_evaluate",
    "load_corpus",
    "tokenize",
    "train",
    "write_corpus",
]
