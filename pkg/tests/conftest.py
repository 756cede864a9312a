import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).parent))

from splatrecon.splatcore import GaussianSet  # noqa: E402

DATA_DIR = Path(__file__).parent / "data"


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def random_gaussians(n: int, seed: int = 0, spread: float = 1.0) -> GaussianSet:
    rng = np.random.default_rng(seed)
    q = rng.normal(size=(n, 4))
    return GaussianSet(
        rng.uniform(-spread, spread, (n, 3)),
        rng.uniform(0.02, 0.3, (n, 3)),
        q / np.linalg.norm(q, axis=1, keepdims=True),
        rng.uniform(0.05, 0.95, n),
        rng.uniform(0, 1, (n, 3)),
    )


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
