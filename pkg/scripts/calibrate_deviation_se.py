"""Check the sampler's deviation-probability standard error against the bridge oracle.

Runs the free-particle deviation estimate for many seeds and reports the
spread of z = (p_sampler - p_bridge) / combined SE. A calibrated error bar
gives a z standard deviation close to one.

    python3 scripts/calibrate_deviation_se.py --seeds 40 --hbar 1.0
"""

import argparse

import numpy as np

from pathlimit.action import EUCLIDEAN, SystemSpec, TimeGrid
from pathlimit.classical import least_action_path
from pathlimit.config import rng_for, stream_seed
from pathlimit.sampler import SamplerConfig, bridge_sup_tail, deviation_probability, sample_paths


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seeds", type=int, default=40)
    parser.add_argument("--hbar", type=float, default=1.0)
    parser.add_argument("--epsilon", type=float, default=0.5)
    parser.add_argument("--slices", type=int, default=32)
    parser.add_argument("--sweeps", type=int, default=50_000)
    parser.add_argument("--oracle-samples", type=int, default=200_000)
    args = parser.parse_args()

    system = SystemSpec.single(1.0, hbar=args.hbar)
    tgrid = TimeGrid(0.0, 1.0, args.slices, EUCLIDEAN)
    (reference,) = least_action_path(system, 0.0, 0.0, tgrid)
    zs = []
    for seed in range(args.seeds):
        cfg = SamplerConfig(args.sweeps, 1000, seed=stream_seed(seed, "euclidean_sampler"), thinning=5)
        samples, _ = sample_paths(system, 0.0, 0.0, tgrid, cfg)
        p, se = deviation_probability(samples, reference, [args.epsilon])
        po, seo = bridge_sup_tail(args.slices, 1.0, args.hbar, 1.0, [args.epsilon], args.oracle_samples,
                                  rng_for(seed, "bridge_oracle"))
        z = (p[0] - po[0]) / np.hypot(se[0], seo[0])
        zs.append(z)
        print(f"seed {seed:3d}  p={p[0]:.5f}+-{se[0]:.5f}  bridge={po[0]:.5f}+-{seo[0]:.5f}  z={z:+.2f}")
    zs = np.array(zs)
    print(f"z mean {zs.mean():+.3f}, z std {zs.std(ddof=1):.3f} over {zs.size} seeds")


if __name__ == "__main__":
    main()
