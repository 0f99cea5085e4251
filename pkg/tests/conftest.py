import numpy as np

from propsim.core import field_range, vector_range

# Verdict lines collected by the acceptance tests; echoed after the run so
# they stay visible even under output capture.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance verdicts")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


class ArraySource:
    """Problem source backed by one in-memory global matrix."""

    def __init__(self, matrix):
        self.matrix = np.asarray(matrix)

    def local_block(self, problem, grid, coords):
        f0, f1 = field_range(grid, coords.p_f, problem.n_f)
        v0, v1 = vector_range(grid, coords.p_v, problem.n_v)
        return self.matrix[f0:f1, v0:v1]
