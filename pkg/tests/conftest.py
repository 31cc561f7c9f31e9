import os
import random

import pytest
from hypothesis import HealthCheck, settings

from dagswap.identity import generate_identity

settings.register_profile(
    "suite",
    deadline=None,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")

VECTOR_DIR = os.path.join(os.path.dirname(__file__), "vectors")


def load_vectors(name):
    """Golden files: one case per line, hex(input) SPACE hex(expected)."""
    path = os.path.join(VECTOR_DIR, name)
    cases = []
    with open(path, encoding="ascii") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line.strip():
                continue
            left, _, right = line.partition(" ")
            cases.append((bytes.fromhex(left), bytes.fromhex(right)))
    return cases


@pytest.fixture
def rng():
    return random.Random(0xDA65)


@pytest.fixture
def ident():
    return generate_identity(0, random.Random(1))


@pytest.fixture
def other_ident():
    return generate_identity(0, random.Random(2))
