import os
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=200, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tiny_collection(tmp_path):
    """Six short documents, three queries and graded judgments on disk."""
    docs = {
        "d1": "the cat sat on the mat",
        "d2": "a dog chased the cat",
        "d3": "feline pets enjoy warm mats",
        "d4": "dogs and cats are common pets",
        "d5": "stock markets fell sharply today",
        "d6": "the market for pet food grew",
    }
    queries = {"q1": "cat mat", "q2": "dog pets", "q3": "market"}
    qrels = {"q1": {"d1": 2, "d3": 1}, "q2": {"d4": 1, "d2": 0}, "q3": {"d5": 1, "d6": 3}}
    coll = tmp_path / "collection.tsv"
    coll.write_text("".join(f"{k}\t{v}\n" for k, v in docs.items()))
    qpath = tmp_path / "queries.tsv"
    qpath.write_text("".join(f"{k}\t{v}\n" for k, v in queries.items()))
    rpath = tmp_path / "qrels.txt"
    rpath.write_text("".join(f"{q} 0 {d} {g}\n" for q, j in qrels.items() for d, g in j.items()))
    return {"collection": coll, "queries": qpath, "qrels": rpath, "docs": docs, "query_text": queries,
            "judgments": qrels, "dir": tmp_path}


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE, key=lambda k: (int(k.rstrip("ab")), k)):
            terminalreporter.write_line(ACCEPTANCE[n])
