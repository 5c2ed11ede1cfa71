"""Transversal spectrum of a suspended map against the map's own spectrum.

    python3 scripts/suspension_spectrum.py --system cat --roof 1 2 --time 1000
"""
import argparse

import numpy as np

from frameflow.dynamics import get_system, suspend
from frameflow.hyperbolicity import lyapunov_spectrum


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--system", default="cat")
    ap.add_argument("--roof", type=float, nargs="+", default=[1.0, 2.0])
    ap.add_argument("--time", type=float, default=1000.0)
    ap.add_argument("--h", type=float, default=1e-3)
    args = ap.parse_args()

    base = get_system(args.system)
    w = base.sample_state(np.random.default_rng(0))
    for roof in args.roof:
        sus = suspend(base, roof)
        T = args.time * roof
        est = lyapunov_spectrum(sus, np.append(w, 0.0), T=T, h=args.h, reorth_every=100)
        ref = lyapunov_spectrum(base, w, T=int(round(args.time)))
        # a longer roof slows the flow, so rates scale by 1/roof
        diff = np.max(np.abs(est.exponents * roof - ref.exponents))
        print(f"roof {roof}: flow {np.round(est.exponents, 6)}, map {np.round(ref.exponents, 6)}, max diff {diff:.2e}")


if __name__ == "__main__":
    main()
