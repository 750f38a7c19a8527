"""Double-well instanton action versus slice count, against a shooting-method value.

    python3 scripts/instanton_convergence.py
"""

import sys
from pathlib import Path

from pathlimit.action import EUCLIDEAN, PotentialSpec, SystemSpec, TimeGrid
from pathlimit.classical import least_action_path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))
import oracles  # noqa: E402

WELL = SystemSpec.single(1.0, PotentialSpec.polynomial(1, 0, -2, 0, 1))


def main() -> None:
    target = oracles.INSTANTON_ACTION_T10
    print(f"shooting oracle (T=10): {target:.10f}; infinite-T value {oracles.INSTANTON_ACTION_INFINITE:.10f}")
    for n in (100, 250, 500, 1000, 2000):
        (res,) = least_action_path(WELL, -1.0, 1.0, TimeGrid(-5.0, 5.0, n, EUCLIDEAN))
        print(f"N={n:5d}  S={res.action:.10f}  rel err {abs(res.action - target) / target:.2e}  "
              f"iterations {res.iterations}  converged {res.converged}")


if __name__ == "__main__":
    main()
