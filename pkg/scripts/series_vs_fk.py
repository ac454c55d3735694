"""Compare the Picard-series ensemble mean of u(1, 0) with the Feynman-Kac moment on refined grids."""
import argparse

from walkpolymer import continuum
from walkpolymer import rng as rngmod

if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--beta", type=float, default=0.3)
    ap.add_argument("--fields", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=1)
    a = ap.parse_args()
    fk, fse = continuum.fk_moment(1, a.beta, 1.0, 1.0, 8000, 64, a.seed)
    print(f"feynman-kac: {fk:.6f} +- {fse:.1e}")
    for nt, nx in ((8, 16), (16, 32), (32, 64)):
        spec = continuum.GridSpec(1.0, nt, -4.0, 4.0, nx)
        f = continuum.sample_fields(spec, a.fields, a.seed)
        m, se = rngmod.mean_se(continuum.series_solution(f, 4, a.beta, 1.0).at(1.0, 0.0))
        print(f"grid {nt:3d}x{nx:<3d} series mean {m:.6f} +- {se:.6f}")
