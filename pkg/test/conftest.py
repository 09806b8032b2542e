import os
import sys

import numpy as np
import pytest

# Add parent directory to path to import graph2graph and config
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from graph2graph.graph import Graph


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def clique_graph():
    """K4 on nodes 0-3 with a tail 3-4-5"""
    return Graph.build(6, [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3), (3, 4), (4, 5)])
