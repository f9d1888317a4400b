"""Acceptance criteria, one test per criterion, at their stated tolerances.

Run with ``pytest tests/test_acceptance.py -v -s`` to see one PASS/FAIL
line per criterion; each line carries the measured worst error or metric.
"""

import time
from contextlib import contextmanager

import numpy as np
import pytest

from phm.experiments import ExperimentSpec, run_experiment
from phm.gradcheck import check_gradients
from phm.kernels import track_allocations
from phm.layer import (
    build_H, build_H_blockdiffusion, implicit_matvec, kron_to_block_mapping,
    phm_forward, phm_from_quaternion, phm_init, phm_param_count,
)
from phm.models import (
    PhmLstmCell, count_transformer_params, ffn_forward, lstm_forward,
    single_head_attention,
)
from phm.quaternion import Quaternion, hamilton, hamilton_matrix, random_quaternion
from phm.rng import make_rng
from phm.tensor import PhmTestTensorAlias if False else None  # placeholder
