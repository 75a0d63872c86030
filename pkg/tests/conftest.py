import sys
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from reldistill.schemas import ALIEXPRESS6
from reldistill.teacher import PerspectiveErrorMatrix, gen_synthetic_corpus, simulate_corpus


@pytest.fixture(autouse=True)
def single_thread():
    # keeps timing-sensitive and determinism tests stable
    old = torch.get_num_threads()
    torch.set_num_threads(1)
    yield
    torch.set_num_threads(old)


@pytest.fixture(scope="session")
def small_corpus():
    return gen_synthetic_corpus(300, ALIEXPRESS6, seed=5)


@pytest.fixture(scope="session")
def small_generations(small_corpus):
    matrix = PerspectiveErrorMatrix.default_for(ALIEXPRESS6)
    return simulate_corpus(small_corpus, ALIEXPRESS6, matrix, attempts=3, seed=6)
