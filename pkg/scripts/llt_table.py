"""Print the local-limit scaled errors along t = 4^j at x = 0 for the low gradient indices."""
from walkpolymer.lattice_kernels import llt_table

if __name__ == "__main__":
    rows = llt_table([4.0**j for j in range(1, 7)], [0], [(0, 0), (0, 1), (1, 0), (0, 2)])
    print(f"{'k':>8} {'t':>8} {'scaled error':>14}")
    for r in rows:
        print(f"{str((r['k0'], r['k1'])):>8} {r['t']:8.0f} {r['scaled_error']:14.6e}")
