"""photoforge-harness: CNN pipeline for fringe-pattern force inference at desk scale."""

from .data import FringeDataset, Record, assert_no_leakage, augmented, read_manifest
from .models import SmallBackbone, TaskSpec, build_model, decode_angles
from .training import TrainConfig, TrainReport, load_model, train
from .transfer import Tier, TierOverlapError, assert_tiers_disjoint, transfer_count_model

__version__ = "0.1.0"
