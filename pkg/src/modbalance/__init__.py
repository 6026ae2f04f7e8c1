"""Balanced multimodal training through on-the-fly gradient modulation with noise enhancement."""
from .data import MultimodalBatch, Splits, SyntheticSpec, generate_synthetic
from .evaluation import ProbeConfig, RunRecord, evaluate, linear_probe
from .modulation import ModulationState, modulation_coefficient, modulation_state
from .numkit import ContractError
from .trainer import TrainConfig, TrainingAborted, train, train_step

__all__ = [
    "ContractError", "ModulationState", "MultimodalBatch", "ProbeConfig", "RunRecord", "Splits",
    "SyntheticSpec", "TrainConfig", "TrainingAborted", "evaluate", "generate_synthetic", "linear_probe",
    "modulation_coefficient", "modulation_state", "train", "train_step",
]
__version__ = "0.1.0"
