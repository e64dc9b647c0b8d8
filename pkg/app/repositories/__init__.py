from .storage import sha256_hex, write_atomic
from .dataset_repository import DatasetRepository, load_dataset, save_dataset
from .checkpoint_repository import Checkpoint, load_checkpoint, save_checkpoint
from .proposal_repository import load_proposals, save_proposals
from .report_repository import (write_comparison_csv, write_eval_report, write_gradcheck_csv, write_loss_csv,
                                write_manifest)

__all__ = [
    "sha256_hex",
    "write_atomic",
    "DatasetRepository",
    "load_dataset",
    "save_dataset",
    "Checkpoint",
    "load_checkpoint",
    "save_checkpoint",
    "load_proposals",
    "save_proposals",
    "write_comparison_csv",
    "write_eval_report",
    "write_gradcheck_csv",
    "write_loss_csv",
    "write_manifest",
]
